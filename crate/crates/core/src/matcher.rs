//! Pivot matching: for a fact `f`, every rule and body atom `b_p` with
//! `f = b_p σ`, paired with the annotated remainder
//! `b_1^< ∧ … ∧ b_{p-1}^< ∧ b_{p+1}^≤ ∧ … ∧ b_n^≤`.

use std::collections::HashMap;
use std::sync::Arc;

use crate::model::{match_atom, Atom, Fact, Program, ResourceId, Rule, RuleId, Substitution, Term, Var};
use crate::store::{AnnotatedAtom, AnnotatedQuery, Comparator};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PivotMatch {
    pub sigma: Substitution,
    /// Remainder query; carries the pivot atom, its body index and the head.
    pub query: Arc<AnnotatedQuery>,
}

impl PivotMatch {
    pub fn pivot(&self) -> &Atom {
        &self.query.pivot
    }

    pub fn pivot_index(&self) -> usize {
        self.query.pivot_index
    }
}

/// Builds the annotated remainder for pivot `pivot` (0-based) of `rule`.
///
/// With `reorder` set, atoms are greedily ordered so that the atom with the
/// most bound positions comes next; comparators stay with their atoms.
pub fn remainder_query(id: RuleId, rule: &Rule, pivot: usize, reorder: bool) -> AnnotatedQuery {
    let mut rest: Vec<(usize, AnnotatedAtom)> = rule
        .body
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != pivot)
        .map(|(j, a)| {
            let cmp = if j < pivot {
                Comparator::Less
            } else {
                Comparator::LessEq
            };
            (j, AnnotatedAtom { atom: *a, cmp })
        })
        .collect();
    if reorder {
        rest = greedy_order(rule.body[pivot].vars(), rest);
    }
    AnnotatedQuery {
        rule: id,
        pivot_index: pivot,
        pivot: rule.body[pivot],
        body_index: rest.iter().map(|(j, _)| *j).collect(),
        atoms: rest.into_iter().map(|(_, a)| a).collect(),
        head: rule.head,
    }
}

fn greedy_order(mut bound: Vec<Var>, mut rest: Vec<(usize, AnnotatedAtom)>) -> Vec<(usize, AnnotatedAtom)> {
    let mut out = Vec::with_capacity(rest.len());
    while !rest.is_empty() {
        let score = |a: &Atom| {
            a.terms()
                .iter()
                .filter(|t| match t {
                    Term::Const(_) => true,
                    Term::Var(v) => bound.contains(v),
                })
                .count()
        };
        // max_by_key keeps the last maximum; iterate in reverse so ties go to
        // the earliest atom.
        let (best, _) = rest
            .iter()
            .enumerate()
            .rev()
            .max_by_key(|(_, (_, aa))| score(&aa.atom))
            .expect("non-empty");
        let picked = rest.remove(best);
        for v in picked.1.atom.vars() {
            if !bound.contains(&v) {
                bound.push(v);
            }
        }
        out.push(picked);
    }
    out
}

/// Program indexed by body-atom predicate, with every remainder query built
/// up front.
#[derive(Debug)]
pub struct RuleMatcher {
    by_predicate: HashMap<ResourceId, Vec<(RuleId, usize)>>,
    variable_predicate: Vec<(RuleId, usize)>,
    queries: Vec<Vec<Arc<AnnotatedQuery>>>,
}

impl RuleMatcher {
    pub fn new(program: &Program, reorder: bool) -> Self {
        let mut by_predicate: HashMap<ResourceId, Vec<(RuleId, usize)>> = HashMap::new();
        let mut variable_predicate = Vec::new();
        let mut queries = Vec::with_capacity(program.len());
        for (id, rule) in program.iter() {
            let mut per_rule = Vec::with_capacity(rule.body.len());
            for (p, atom) in rule.body.iter().enumerate() {
                match atom.predicate {
                    Term::Const(pred) => by_predicate.entry(pred).or_default().push((id, p)),
                    Term::Var(_) => variable_predicate.push((id, p)),
                }
                per_rule.push(Arc::new(remainder_query(id, rule, p, reorder)));
            }
            queries.push(per_rule);
        }
        RuleMatcher {
            by_predicate,
            variable_predicate,
            queries,
        }
    }

    pub fn query(&self, rule: RuleId, pivot: usize) -> &Arc<AnnotatedQuery> {
        &self.queries[rule.0 as usize][pivot]
    }

    /// Every `(σ, b_p, Q, h)` with `f = b_p σ`, ordered by rule then pivot.
    pub fn match_rules(&self, f: &Fact) -> Vec<PivotMatch> {
        let mut slots: Vec<(RuleId, usize)> = self
            .by_predicate
            .get(&f.predicate)
            .map(|v| v.to_vec())
            .unwrap_or_default();
        slots.extend_from_slice(&self.variable_predicate);
        slots.sort_unstable();
        slots
            .into_iter()
            .filter_map(|(rule, p)| {
                let query = self.query(rule, p);
                match_atom(&query.pivot, f).map(|sigma| PivotMatch {
                    sigma,
                    query: Arc::clone(query),
                })
            })
            .collect()
    }
}

/// Unindexed form of [`RuleMatcher::match_rules`] in original body order.
pub fn match_rules(f: &Fact, program: &Program) -> Vec<PivotMatch> {
    let mut out = Vec::new();
    for (id, rule) in program.iter() {
        for (p, atom) in rule.body.iter().enumerate() {
            if let Some(sigma) = match_atom(atom, f) {
                out.push(PivotMatch {
                    sigma,
                    query: Arc::new(remainder_query(id, rule, p, false)),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::apply;
    use proptest::prelude::*;

    fn r(i: u32) -> ResourceId {
        ResourceId(i)
    }
    fn c(i: u32) -> Term {
        Term::Const(r(i))
    }
    fn v(i: u16) -> Term {
        Term::Var(Var(i))
    }
    const A: u32 = 0;
    const B: u32 = 1;
    const R: u32 = 10;
    const S: u32 = 11;

    /// (x,R,z) ← (x,R,y) ∧ (y,R,z) with x=0, z=1, y=2.
    fn transitive() -> Program {
        Program::new(vec![Rule::new(
            Atom::new(v(0), c(R), v(1)),
            vec![Atom::new(v(0), c(R), v(2)), Atom::new(v(2), c(R), v(1))],
        )])
        .unwrap()
    }

    #[test]
    fn transitive_rule_gives_two_pivots() {
        let p = transitive();
        let fact = Fact::new(r(A), r(R), r(B));
        let m = RuleMatcher::new(&p, false).match_rules(&fact);
        assert_eq!(m.len(), 2);

        assert_eq!(m[0].pivot_index(), 0);
        assert_eq!(m[0].sigma, Substitution::from_pairs([(Var(0), r(A)), (Var(2), r(B))]));
        assert_eq!(
            m[0].query.atoms,
            vec![AnnotatedAtom {
                atom: Atom::new(v(2), c(R), v(1)),
                cmp: Comparator::LessEq
            }]
        );

        assert_eq!(m[1].pivot_index(), 1);
        assert_eq!(m[1].sigma, Substitution::from_pairs([(Var(2), r(A)), (Var(1), r(B))]));
        assert_eq!(
            m[1].query.atoms,
            vec![AnnotatedAtom {
                atom: Atom::new(v(0), c(R), v(2)),
                cmp: Comparator::Less
            }]
        );
        assert_eq!(m, match_rules(&fact, &p));
    }

    #[test]
    fn predicate_mismatch_gives_nothing() {
        let fact = Fact::new(r(A), r(S), r(B));
        assert!(RuleMatcher::new(&transitive(), false).match_rules(&fact).is_empty());
    }

    #[test]
    fn repeated_variable_binds_once_per_position() {
        let p = Program::new(vec![Rule::new(
            Atom::new(v(0), c(R), v(0)),
            vec![Atom::new(v(0), c(R), v(0)), Atom::new(v(0), c(R), v(0))],
        )])
        .unwrap();
        let m = RuleMatcher::new(&p, false).match_rules(&Fact::new(r(A), r(R), r(A)));
        assert_eq!(m.len(), 2);
        for pm in &m {
            assert_eq!(pm.sigma, Substitution::from_pairs([(Var(0), r(A))]));
        }
        assert!(RuleMatcher::new(&p, false)
            .match_rules(&Fact::new(r(A), r(R), r(B)))
            .is_empty());
    }

    #[test]
    fn greedy_reorder_keeps_annotations() {
        // h ← (x,R,y) ∧ (z,S,w) ∧ (y,R,z): pivot 0 binds x,y, so (y,R,z) moves first.
        let rule = Rule::new(
            Atom::new(v(0), c(R), v(3)),
            vec![
                Atom::new(v(0), c(R), v(1)),
                Atom::new(v(2), c(S), v(3)),
                Atom::new(v(1), c(R), v(2)),
            ],
        );
        let q = remainder_query(RuleId(0), &rule, 0, true);
        assert_eq!(q.body_index, vec![2, 1]);
        assert!(q.atoms.iter().all(|a| a.cmp == Comparator::LessEq));
        let q = remainder_query(RuleId(0), &rule, 1, true);
        assert_eq!(q.body_index, vec![2, 0]);
        assert_eq!(q.atoms[0].cmp, Comparator::LessEq);
        assert_eq!(q.atoms[1].cmp, Comparator::Less);
    }

    fn arb_term() -> impl Strategy<Value = Term> {
        prop_oneof![(0u32..3).prop_map(c), (0u16..3).prop_map(v), Just(c(R))]
    }

    fn arb_atom() -> impl Strategy<Value = Atom> {
        (arb_term(), arb_term(), arb_term()).prop_map(|(s, p, o)| Atom::new(s, p, o))
    }

    proptest! {
        #[test]
        fn match_law(
            bodies in proptest::collection::vec(proptest::collection::vec(arb_atom(), 1..4), 1..4),
            fs in 0u32..3, fp in prop_oneof![Just(R), 0u32..3], fo in 0u32..3,
            reorder in any::<bool>(),
        ) {
            // Ground heads keep every generated rule safe.
            let rules: Vec<Rule> = bodies
                .into_iter()
                .map(|b| Rule::new(Atom::new(c(A), c(R), c(B)), b))
                .collect();
            let program = Program::new(rules).unwrap();
            let fact = Fact::new(r(fs), r(fp), r(fo));
            let matches = RuleMatcher::new(&program, reorder).match_rules(&fact);
            let expected: usize = program
                .rules()
                .iter()
                .map(|rule| rule.body.iter().filter(|b| match_atom(b, &fact).is_some()).count())
                .sum();
            prop_assert_eq!(matches.len(), expected);
            for m in &matches {
                prop_assert_eq!(apply(m.pivot(), &m.sigma).to_fact(), Some(fact));
                let rule = program.rule(m.query.rule);
                prop_assert_eq!(m.query.len(), rule.body.len() - 1);
                for (aa, &j) in m.query.atoms.iter().zip(&m.query.body_index) {
                    prop_assert_eq!(aa.atom, rule.body[j]);
                    let want = if j < m.pivot_index() { Comparator::Less } else { Comparator::LessEq };
                    prop_assert_eq!(aa.cmp, want);
                }
            }
        }
    }
}
