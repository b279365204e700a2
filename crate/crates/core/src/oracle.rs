//! Centralised naive and seminaive materialisation, used as ground truth.

use std::collections::{HashMap, HashSet};

use crate::model::{extend_match, Atom, Fact, Position, Program, ResourceId, Rule, Substitution, Term};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleResult {
    pub facts: HashSet<Fact>,
    pub rounds: usize,
    /// Distinct `(rule, body-fact tuple)` firings.
    pub instantiations: u64,
}

impl OracleResult {
    pub fn sorted_facts(&self) -> Vec<Fact> {
        let mut v: Vec<Fact> = self.facts.iter().copied().collect();
        v.sort();
        v
    }
}

/// Hash index over a growing fact set, one table per combination of bound
/// positions.
#[derive(Default)]
struct FactIndex {
    all: Vec<Fact>,
    members: HashSet<Fact>,
    by_key: HashMap<(u8, [ResourceId; 3]), Vec<Fact>>,
}

fn key(mask: u8, f: &Fact) -> (u8, [ResourceId; 3]) {
    let mut k = [ResourceId(u32::MAX); 3];
    for pos in Position::ALL {
        if mask & (1 << pos.index()) != 0 {
            k[pos.index()] = f.get(pos);
        }
    }
    (mask, k)
}

impl FactIndex {
    fn insert(&mut self, f: Fact) -> bool {
        if !self.members.insert(f) {
            return false;
        }
        self.all.push(f);
        for mask in 1..8u8 {
            self.by_key.entry(key(mask, &f)).or_default().push(f);
        }
        true
    }

    fn contains(&self, f: &Fact) -> bool {
        self.members.contains(f)
    }

    fn candidates(&self, pattern: &Atom) -> &[Fact] {
        let mut mask = 0u8;
        let mut probe = [ResourceId(0); 3];
        for pos in Position::ALL {
            if let Term::Const(r) = pattern.term(pos) {
                mask |= 1 << pos.index();
                probe[pos.index()] = r;
            }
        }
        if mask == 0 {
            return &self.all;
        }
        let probe = Fact::new(probe[0], probe[1], probe[2]);
        self.by_key.get(&key(mask, &probe)).map_or(&[], Vec::as_slice)
    }
}

fn resolve(atom: &Atom, sigma: &Substitution) -> Atom {
    Atom::new(
        sigma.resolve(atom.subject),
        sigma.resolve(atom.predicate),
        sigma.resolve(atom.object),
    )
}

/// Calls `emit` for every extension of `sigma` matching `atoms[i..]`, where
/// atom `j` is matched against `sources[j]` (one or more indexes).
fn join(
    atoms: &[Atom],
    sources: &[Vec<&FactIndex>],
    i: usize,
    sigma: &Substitution,
    emit: &mut dyn FnMut(&Substitution),
) {
    if i == atoms.len() {
        emit(sigma);
        return;
    }
    let pattern = resolve(&atoms[i], sigma);
    for index in &sources[i] {
        for f in index.candidates(&pattern) {
            if let Some(next) = extend_match(&atoms[i], f, sigma) {
                join(atoms, sources, i + 1, &next, emit);
            }
        }
    }
}

fn head_fact(rule: &Rule, sigma: &Substitution) -> Fact {
    resolve(&rule.head, sigma)
        .to_fact()
        .expect("safe rule heads are ground under a full body match")
}

/// Round-based re-evaluation of every rule over every fact until nothing new
/// is derived. The instantiation count is the number of body matches in the
/// final (fixpoint) round.
pub fn naive_materialise(input: &[Fact], program: &Program) -> OracleResult {
    let mut index = FactIndex::default();
    for f in input {
        index.insert(*f);
    }
    let mut rounds = 0;
    loop {
        rounds += 1;
        let mut fresh = Vec::new();
        let mut matches = 0u64;
        for rule in program.rules() {
            let sources = vec![vec![&index]; rule.body.len()];
            join(&rule.body, &sources, 0, &Substitution::new(), &mut |sigma| {
                matches += 1;
                fresh.push(head_fact(rule, sigma));
            });
        }
        let mut changed = false;
        for f in fresh {
            changed |= index.insert(f);
        }
        if !changed {
            return OracleResult {
                facts: index.members,
                rounds,
                instantiations: matches,
            };
        }
    }
}

/// Seminaive evaluation: in each round, for pivot `p`, atoms before `p` see
/// facts older than the round, atom `p` sees the previous round's delta, and
/// atoms after `p` see old and delta facts. Every ground body match is
/// enumerated exactly once over the run.
pub fn seminaive_materialise(input: &[Fact], program: &Program) -> OracleResult {
    let mut old = FactIndex::default();
    let mut delta = FactIndex::default();
    for f in input {
        delta.insert(*f);
    }
    let mut rounds = 0;
    let mut instantiations = 0u64;
    while !delta.all.is_empty() {
        rounds += 1;
        let mut next = FactIndex::default();
        for rule in program.rules() {
            for p in 0..rule.body.len() {
                let sources: Vec<Vec<&FactIndex>> = (0..rule.body.len())
                    .map(|j| match j.cmp(&p) {
                        std::cmp::Ordering::Less => vec![&old],
                        std::cmp::Ordering::Equal => vec![&delta],
                        std::cmp::Ordering::Greater => vec![&old, &delta],
                    })
                    .collect();
                join(&rule.body, &sources, 0, &Substitution::new(), &mut |sigma| {
                    instantiations += 1;
                    let f = head_fact(rule, sigma);
                    if !old.contains(&f) && !delta.contains(&f) {
                        next.insert(f);
                    }
                });
            }
        }
        for f in std::mem::take(&mut delta.all) {
            old.insert(f);
        }
        delta = next;
    }
    OracleResult {
        facts: old.members,
        rounds,
        instantiations,
    }
}

/// Number of `(rule, body tuple)` pairs whose body facts all lie in `facts`,
/// by exhaustive nested scans. Intended for small instances.
pub fn count_instantiations(facts: &HashSet<Fact>, program: &Program) -> u64 {
    fn go(body: &[Atom], facts: &[Fact], sigma: &Substitution) -> u64 {
        let Some((first, rest)) = body.split_first() else {
            return 1;
        };
        facts
            .iter()
            .filter_map(|f| extend_match(first, f, sigma))
            .map(|next| go(rest, facts, &next))
            .sum()
    }
    let list: Vec<Fact> = facts.iter().copied().collect();
    program
        .rules()
        .iter()
        .map(|r| go(&r.body, &list, &Substitution::new()))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dictionary, Var};
    use crate::parse::{parse_rules, parse_triples};
    use proptest::prelude::*;

    const TRANSITIVE: &str = "(?x, <R>, ?z) :- (?x, <R>, ?y), (?y, <R>, ?z) .";

    fn load(data: &str, rules: &str) -> (Dictionary, Vec<Fact>, Program) {
        let mut d = Dictionary::new();
        let facts = parse_triples(data, &mut d)
            .unwrap()
            .into_iter()
            .map(|l| l.fact)
            .collect();
        let program = parse_rules(rules, &mut d).unwrap();
        (d, facts, program)
    }

    fn lines(d: &Dictionary, r: &OracleResult) -> Vec<String> {
        r.sorted_facts().iter().map(|f| f.to_ntriples(d)).collect()
    }

    #[test]
    fn two_step_closure() {
        let (d, facts, p) = load("<a> <R> <b> .\n<b> <R> <c> .\n", TRANSITIVE);
        let mut want = vec!["<a> <R> <b> .", "<b> <R> <c> .", "<a> <R> <c> ."];
        want.sort();
        assert_eq!(lines(&d, &naive_materialise(&facts, &p)), want);
        let semi = seminaive_materialise(&facts, &p);
        assert_eq!(lines(&d, &semi), want);
        // Only ((a,R,b),(b,R,c)) matches the body.
        assert_eq!(semi.instantiations, 1);
    }

    #[test]
    fn chain_of_five_has_ten_facts() {
        let (_, facts, p) = load(
            "<a> <R> <b> .\n<b> <R> <c> .\n<c> <R> <d> .\n<d> <R> <e> .\n",
            TRANSITIVE,
        );
        let semi = seminaive_materialise(&facts, &p);
        assert_eq!(semi.facts.len(), 10);
        assert_eq!(naive_materialise(&facts, &p).facts, semi.facts);
        // One instantiation per i < j < k.
        assert_eq!(semi.instantiations, 10);
        assert_eq!(count_instantiations(&semi.facts, &p), 10);
    }

    #[test]
    fn chain_of_three_counts() {
        let (_, facts, p) = load("<a> <R> <b> .\n<b> <R> <c> .\n<c> <R> <d> .\n", TRANSITIVE);
        let semi = seminaive_materialise(&facts, &p);
        assert_eq!(semi.facts.len(), 6);
        assert_eq!(semi.instantiations, 4);
        assert_eq!(naive_materialise(&facts, &p).instantiations, 4);
    }

    #[test]
    fn trivial_cases() {
        let (_, facts, _) = load("<a> <R> <b> .\n", "");
        let r = seminaive_materialise(&facts, &Program::empty());
        assert_eq!(r.facts, facts.iter().copied().collect());
        let (_, _, p) = load("", TRANSITIVE);
        let r = seminaive_materialise(&[], &p);
        assert!(r.facts.is_empty());
        assert_eq!(r.instantiations, 0);
    }

    #[test]
    fn cyclic_data_terminates() {
        let (_, facts, p) = load("<a> <R> <b> .\n<b> <R> <a> .\n", TRANSITIVE);
        let r = seminaive_materialise(&facts, &p);
        assert_eq!(r.facts.len(), 4);
        assert_eq!(r.instantiations, count_instantiations(&r.facts, &p));
    }

    fn arb_term(vars: u16, consts: u32) -> impl Strategy<Value = Term> {
        prop_oneof![
            3 => (0..vars).prop_map(|v| Term::Var(Var(v))),
            1 => (0..consts).prop_map(|c| Term::Const(ResourceId(c))),
        ]
    }

    fn arb_rule() -> impl Strategy<Value = Rule> {
        let atom = || {
            (
                arb_term(3, 4),
                (0u32..2).prop_map(|p| Term::Const(ResourceId(10 + p))),
                arb_term(3, 4),
            )
                .prop_map(|(s, p, o)| Atom::new(s, p, o))
        };
        (
            proptest::collection::vec(atom(), 1..4),
            any::<prop::sample::Index>(),
            any::<prop::sample::Index>(),
            0u32..2,
        )
            .prop_map(|(body, si, oi, pred)| {
                let vars: Vec<Term> = body.iter().flat_map(|a| a.vars()).map(Term::Var).collect();
                let pick = |ix: prop::sample::Index| {
                    if vars.is_empty() {
                        Term::Const(ResourceId(0))
                    } else {
                        vars[ix.index(vars.len())]
                    }
                };
                Rule::new(Atom::new(pick(si), Term::Const(ResourceId(10 + pred)), pick(oi)), body)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn naive_and_seminaive_agree(
            raw in proptest::collection::vec((0u32..5, 10u32..12, 0u32..5), 0..30),
            rules in proptest::collection::vec(arb_rule(), 0..4),
        ) {
            let facts: Vec<Fact> = raw.into_iter().map(|(s, p, o)| Fact::new(ResourceId(s), ResourceId(p), ResourceId(o))).collect();
            let program = Program::new(rules).unwrap();
            let naive = naive_materialise(&facts, &program);
            let semi = seminaive_materialise(&facts, &program);
            prop_assert_eq!(&naive.facts, &semi.facts);
            prop_assert!(facts.iter().all(|f| semi.facts.contains(f)));
            prop_assert_eq!(naive.instantiations, semi.instantiations);
            prop_assert_eq!(semi.instantiations, count_instantiations(&semi.facts, &program));
        }
    }
}
