//! Per-server fact set with Lamport timestamps.
//!
//! A [`TimestampedStore`] holds the facts `I_k` of one server, the partial
//! stamp map `T_k`, and the local clock `C_k`. Facts added during the run are
//! unstamped until the next [`TimestampedStore::synchronise`] that advances the
//! clock; unstamped facts are invisible to [`TimestampedStore::evaluate`].

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::{extend_match, Atom, Dictionary, Fact, Position, ResourceId, RuleId, ServerId, Substitution, Term};

pub type Timestamp = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparator {
    /// `<`
    Less,
    /// `≤`
    LessEq,
}

impl Comparator {
    pub fn holds(self, stamp: Timestamp, tau: Timestamp) -> bool {
        match self {
            Comparator::Less => stamp < tau,
            Comparator::LessEq => stamp <= tau,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Less => "<",
            Comparator::LessEq => "<=",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnnotatedAtom {
    pub atom: Atom,
    pub cmp: Comparator,
}

/// Remainder of a rule body after the pivot, with each atom annotated.
///
/// Atoms are addressed 1-based (`atom(1)..=atom(len())`); index 0 is the
/// pivot, which is not part of the query.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnnotatedQuery {
    pub rule: RuleId,
    /// 0-based body index of the pivot atom.
    pub pivot_index: usize,
    pub pivot: Atom,
    pub atoms: Vec<AnnotatedAtom>,
    /// 0-based body index each entry of `atoms` came from.
    pub body_index: Vec<usize>,
    pub head: Atom,
}

impl AnnotatedQuery {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Atom with 1-based index `i`.
    pub fn atom(&self, i: usize) -> &AnnotatedAtom {
        &self.atoms[i - 1]
    }

    /// The atom matched at step `i`: the pivot for 0, otherwise `atom(i)`.
    pub fn matched_atom(&self, i: usize) -> &Atom {
        if i == 0 {
            &self.pivot
        } else {
            &self.atoms[i - 1].atom
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AddOutcome {
    Added,
    Duplicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct FactId(u32);

#[derive(Debug)]
pub struct TimestampedStore {
    server: ServerId,
    facts: Vec<Fact>,
    ids: HashMap<Fact, FactId>,
    stamps: Vec<Option<Timestamp>>,
    clock: Timestamp,
    by_s: HashMap<ResourceId, Vec<FactId>>,
    by_p: HashMap<ResourceId, Vec<FactId>>,
    by_o: HashMap<ResourceId, Vec<FactId>>,
    by_sp: HashMap<(ResourceId, ResourceId), Vec<FactId>>,
    by_so: HashMap<(ResourceId, ResourceId), Vec<FactId>>,
    by_po: HashMap<(ResourceId, ResourceId), Vec<FactId>>,
    /// Stamped facts not yet run through ProcessFact, in stamp order.
    unprocessed: VecDeque<FactId>,
    unstamped: Vec<FactId>,
}

impl TimestampedStore {
    pub fn new(server: ServerId) -> Self {
        TimestampedStore {
            server,
            facts: Vec::new(),
            ids: HashMap::new(),
            stamps: Vec::new(),
            clock: 0,
            by_s: HashMap::new(),
            by_p: HashMap::new(),
            by_o: HashMap::new(),
            by_sp: HashMap::new(),
            by_so: HashMap::new(),
            by_po: HashMap::new(),
            unprocessed: VecDeque::new(),
            unstamped: Vec::new(),
        }
    }

    pub fn server(&self) -> ServerId {
        self.server
    }

    pub fn clock(&self) -> Timestamp {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn contains(&self, f: &Fact) -> bool {
        self.ids.contains_key(f)
    }

    /// `Some(T_k(f))` when `f` is stored and stamped.
    pub fn stamp(&self, f: &Fact) -> Option<Timestamp> {
        self.ids.get(f).and_then(|id| self.stamps[id.0 as usize])
    }

    pub fn facts(&self) -> impl Iterator<Item = &Fact> {
        self.facts.iter()
    }

    pub fn has_unprocessed(&self) -> bool {
        !self.unprocessed.is_empty()
    }

    pub fn has_unstamped(&self) -> bool {
        !self.unstamped.is_empty()
    }

    pub fn pending_facts(&self) -> usize {
        self.unprocessed.len() + self.unstamped.len()
    }

    fn insert(&mut self, f: Fact, stamp: Option<Timestamp>) -> Option<FactId> {
        if self.ids.contains_key(&f) {
            return None;
        }
        let id = FactId(self.facts.len() as u32);
        self.facts.push(f);
        self.ids.insert(f, id);
        self.stamps.push(stamp);
        self.by_s.entry(f.subject).or_default().push(id);
        self.by_p.entry(f.predicate).or_default().push(id);
        self.by_o.entry(f.object).or_default().push(id);
        self.by_sp.entry((f.subject, f.predicate)).or_default().push(id);
        self.by_so.entry((f.subject, f.object)).or_default().push(id);
        self.by_po.entry((f.predicate, f.object)).or_default().push(id);
        Some(id)
    }

    /// Loads the input partition: every fact gets stamp 0 and is queued for
    /// processing. Duplicates collapse.
    pub fn load_initial(&mut self, facts: impl IntoIterator<Item = Fact>) {
        assert_eq!(self.clock, 0, "load_initial must run before the clock moves");
        for f in facts {
            if let Some(id) = self.insert(f, Some(0)) {
                self.unprocessed.push_back(id);
            }
        }
    }

    /// Lamport clock update. When `C_k ≤ τ`, every unstamped fact receives
    /// stamp `C_k` and the clock moves to `τ + 1`. Returns the facts stamped
    /// by this call.
    pub fn synchronise(&mut self, tau: Timestamp) -> Vec<Fact> {
        if self.clock > tau {
            return Vec::new();
        }
        let mut stamped = Vec::with_capacity(self.unstamped.len());
        for id in self.unstamped.drain(..) {
            self.stamps[id.0 as usize] = Some(self.clock);
            self.unprocessed.push_back(id);
            stamped.push(self.facts[id.0 as usize]);
        }
        self.clock = tau + 1;
        stamped
    }

    pub fn add_derived(&mut self, f: Fact) -> AddOutcome {
        match self.insert(f, None) {
            Some(id) => {
                self.unstamped.push(id);
                AddOutcome::Added
            }
            None => AddOutcome::Duplicate,
        }
    }

    /// Pops the next stamped, unprocessed fact.
    pub fn next_unprocessed(&mut self) -> Option<(Fact, Timestamp)> {
        let id = self.unprocessed.pop_front()?;
        let stamp = self.stamps[id.0 as usize].expect("queued facts are stamped");
        Some((self.facts[id.0 as usize], stamp))
    }

    fn candidates(&self, pattern: &Atom) -> &[FactId] {
        let s = pattern.subject.as_const();
        let p = pattern.predicate.as_const();
        let o = pattern.object.as_const();
        let hit = match (s, p, o) {
            (Some(s), Some(p), Some(o)) => {
                return match self.ids.get(&Fact::new(s, p, o)) {
                    Some(id) => std::slice::from_ref(id),
                    None => &[],
                }
            }
            (Some(s), Some(p), None) => self.by_sp.get(&(s, p)),
            (Some(s), None, Some(o)) => self.by_so.get(&(s, o)),
            (None, Some(p), Some(o)) => self.by_po.get(&(p, o)),
            (Some(s), None, None) => self.by_s.get(&s),
            (None, Some(p), None) => self.by_p.get(&p),
            (None, None, Some(o)) => self.by_o.get(&o),
            (None, None, None) => unreachable!("unbound patterns take the full scan"),
        };
        hit.map_or(&[], Vec::as_slice)
    }

    /// Every extension `ρ ⊇ σ` with `atom ρ ∈ I_k`, the stamp of `atom ρ`
    /// defined and `T_k(atom ρ) ⋈ τ`.
    pub fn evaluate(&self, aa: &AnnotatedAtom, tau: Timestamp, sigma: &Substitution) -> Vec<Substitution> {
        let pattern = crate::model::apply(&aa.atom, sigma);
        let accept = |id: FactId| -> Option<Substitution> {
            let stamp = self.stamps[id.0 as usize]?;
            if !aa.cmp.holds(stamp, tau) {
                return None;
            }
            extend_match(&aa.atom, &self.facts[id.0 as usize], sigma)
        };
        if pattern.terms().iter().all(|t| matches!(t, Term::Var(_))) {
            (0..self.facts.len() as u32).map(FactId).filter_map(accept).collect()
        } else {
            self.candidates(&pattern).iter().copied().filter_map(accept).collect()
        }
    }

    /// Resources occurring in this store at `pos`.
    pub fn resources_at(&self, pos: Position) -> impl Iterator<Item = ResourceId> + '_ {
        let index = match pos {
            Position::Subject => &self.by_s,
            Position::Predicate => &self.by_p,
            Position::Object => &self.by_o,
        };
        index.keys().copied()
    }

    pub fn occurs_at(&self, r: ResourceId, pos: Position) -> bool {
        let index = match pos {
            Position::Subject => &self.by_s,
            Position::Predicate => &self.by_p,
            Position::Object => &self.by_o,
        };
        index.contains_key(&r)
    }

    pub fn occurs(&self, r: ResourceId) -> bool {
        Position::ALL.iter().any(|&p| self.occurs_at(r, p))
    }

    /// One line per fact, sorted: `<s> <p> <o> . # ts=<n|undef>`.
    pub fn dump(&self, dict: &Dictionary) -> String {
        let mut lines: Vec<String> = self
            .facts
            .iter()
            .zip(&self.stamps)
            .map(|(f, st)| {
                let ts = st.map_or_else(|| "undef".to_string(), |t| t.to_string());
                format!("{} # ts={}", f.to_ntriples(dict), ts)
            })
            .collect();
        lines.sort();
        let mut out = String::new();
        for l in lines {
            let _ = writeln!(out, "{l}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{match_atom, Var};
    use proptest::prelude::*;

    fn r(i: u32) -> ResourceId {
        ResourceId(i)
    }
    fn f(s: u32, p: u32, o: u32) -> Fact {
        Fact::new(r(s), r(p), r(o))
    }
    fn c(i: u32) -> Term {
        Term::Const(r(i))
    }
    fn v(i: u16) -> Term {
        Term::Var(Var(i))
    }

    const A: u32 = 0;
    const B: u32 = 1;
    const C: u32 = 2;
    const D: u32 = 3;
    const E: u32 = 4;
    const R: u32 = 10;
    const S: u32 = 11;

    #[test]
    fn load_initial_stamps_zero() {
        let mut st = TimestampedStore::new(ServerId(1));
        st.load_initial([f(A, R, B), f(B, R, C)]);
        assert_eq!(st.len(), 2);
        assert_eq!(st.stamp(&f(A, R, B)), Some(0));
        assert_eq!(st.stamp(&f(B, R, C)), Some(0));
        assert_eq!(st.clock(), 0);

        let mut empty = TimestampedStore::new(ServerId(1));
        empty.load_initial([]);
        assert!(empty.is_empty());
        assert_eq!(empty.clock(), 0);

        let mut dup = TimestampedStore::new(ServerId(1));
        dup.load_initial([f(A, R, B), f(A, R, B)]);
        assert_eq!(dup.len(), 1);
        assert_eq!(dup.pending_facts(), 1);
    }

    #[test]
    fn synchronise_examples() {
        let mut st = TimestampedStore::new(ServerId(1));
        st.add_derived(f(A, R, B));
        assert_eq!(st.synchronise(0), vec![f(A, R, B)]);
        assert_eq!(st.stamp(&f(A, R, B)), Some(0));
        assert_eq!(st.clock(), 1);

        // C_k > τ leaves everything alone.
        let mut st = TimestampedStore::new(ServerId(1));
        st.synchronise(4);
        assert_eq!(st.clock(), 5);
        st.add_derived(f(A, R, C));
        assert!(st.synchronise(3).is_empty());
        assert_eq!(st.clock(), 5);
        assert_eq!(st.stamp(&f(A, R, C)), None);

        // clock=2 with two unstamped facts, synchronise(7).
        let mut st = TimestampedStore::new(ServerId(1));
        st.synchronise(1);
        assert_eq!(st.clock(), 2);
        st.add_derived(f(A, R, B));
        st.add_derived(f(B, R, C));
        st.synchronise(7);
        assert_eq!(st.stamp(&f(A, R, B)), Some(2));
        assert_eq!(st.stamp(&f(B, R, C)), Some(2));
        assert_eq!(st.clock(), 8);
    }

    #[test]
    fn add_derived_examples() {
        let mut st = TimestampedStore::new(ServerId(1));
        st.load_initial([f(A, R, B)]);
        assert_eq!(st.add_derived(f(A, R, C)), AddOutcome::Added);
        assert_eq!(st.stamp(&f(A, R, C)), None);
        assert_eq!(st.add_derived(f(A, R, B)), AddOutcome::Duplicate);
        assert_eq!(st.stamp(&f(A, R, B)), Some(0));
        let now = st.clock();
        st.synchronise(now);
        assert_eq!(st.stamp(&f(A, R, C)), Some(now));
    }

    /// I = {(a,R,b),(b,S,c),(b,S,d),(b,S,e)}, T = {(a,R,b)↦1, (b,S,c)↦2, (b,S,d)↦3}.
    fn annotated_example() -> TimestampedStore {
        let mut st = TimestampedStore::new(ServerId(1));
        st.synchronise(0);
        st.add_derived(f(A, R, B));
        st.synchronise(1);
        st.add_derived(f(B, S, C));
        st.synchronise(2);
        st.add_derived(f(B, S, D));
        st.synchronise(3);
        st.add_derived(f(B, S, E));
        assert_eq!(st.stamp(&f(A, R, B)), Some(1));
        assert_eq!(st.stamp(&f(B, S, C)), Some(2));
        assert_eq!(st.stamp(&f(B, S, D)), Some(3));
        assert_eq!(st.stamp(&f(B, S, E)), None);
        st
    }

    #[test]
    fn evaluate_annotated_examples() {
        let st = annotated_example();
        let (x, y, z) = (Var(0), Var(1), Var(2));
        let sigma = Substitution::from_pairs([(x, r(A)), (y, r(B))]);
        let leq = |atom| AnnotatedAtom {
            atom,
            cmp: Comparator::LessEq,
        };
        let out = st.evaluate(&leq(Atom::new(v(1), c(S), v(2))), 2, &sigma);
        assert_eq!(out, vec![Substitution::from_pairs([(x, r(A)), (y, r(B)), (z, r(C))])]);
        assert!(st
            .evaluate(&leq(Atom::from(f(B, S, D))), 2, &Substitution::new())
            .is_empty());
        assert!(st
            .evaluate(&leq(Atom::from(f(B, S, E))), 2, &Substitution::new())
            .is_empty());
        // The first conjunct of the example query under `<`.
        let less = AnnotatedAtom {
            atom: Atom::new(v(0), c(R), v(1)),
            cmp: Comparator::Less,
        };
        assert_eq!(st.evaluate(&less, 2, &Substitution::new()).len(), 1);
        assert!(st.evaluate(&less, 1, &Substitution::new()).is_empty());
    }

    #[test]
    fn dump_marks_unstamped() {
        let mut d = Dictionary::new();
        let a = d.encode("<a>").unwrap();
        let p = d.encode("<p>").unwrap();
        let b = d.encode("<b>").unwrap();
        let mut st = TimestampedStore::new(ServerId(1));
        st.load_initial([Fact::new(a, p, b)]);
        st.add_derived(Fact::new(b, p, a));
        assert_eq!(st.dump(&d), "<a> <p> <b> . # ts=0\n<b> <p> <a> . # ts=undef\n");
    }

    fn brute_force(
        st: &TimestampedStore,
        aa: &AnnotatedAtom,
        tau: Timestamp,
        sigma: &Substitution,
    ) -> Vec<Substitution> {
        let mut out: Vec<Substitution> = st
            .facts()
            .filter(|fact| st.stamp(fact).is_some_and(|t| aa.cmp.holds(t, tau)))
            .filter_map(|fact| {
                let rho = match_atom(&aa.atom, fact)?;
                // ρ must agree with σ where both are defined.
                let mut merged = sigma.clone();
                for (var, res) in rho.iter() {
                    if !merged.bind(var, res) {
                        return None;
                    }
                }
                Some(merged)
            })
            .collect();
        out.sort_by_key(|s| format!("{s:?}"));
        out
    }

    fn arb_term() -> impl Strategy<Value = Term> {
        prop_oneof![(0u32..4).prop_map(c), (0u16..3).prop_map(v)]
    }

    proptest! {
        #[test]
        fn evaluate_matches_linear_scan(
            ops in proptest::collection::vec((0u32..4, 0u32..3, 0u32..4, 0u64..6, any::<bool>()), 0..40),
            s in arb_term(), p in arb_term(), o in arb_term(),
            less in any::<bool>(),
            tau in 0u64..8,
            binds in proptest::collection::vec((0u16..3, 0u32..4), 0..2),
        ) {
            let mut st = TimestampedStore::new(ServerId(1));
            for (fs, fp, fo, sync_to, sync) in ops {
                st.add_derived(f(fs, fp, fo));
                if sync {
                    st.synchronise(sync_to);
                }
            }
            let mut sigma = Substitution::new();
            for (var, res) in binds {
                sigma.bind(Var(var), r(res));
            }
            let aa = AnnotatedAtom {
                atom: Atom::new(s, p, o),
                cmp: if less { Comparator::Less } else { Comparator::LessEq },
            };
            let mut got = st.evaluate(&aa, tau, &sigma);
            got.sort_by_key(|s| format!("{s:?}"));
            prop_assert_eq!(got, brute_force(&st, &aa, tau, &sigma));
        }

        #[test]
        fn synchronise_leaves_nothing_unstamped(
            adds in proptest::collection::vec((0u32..4, 0u32..4), 0..20),
            pre in 0u64..5,
            tau in 0u64..10,
        ) {
            let mut st = TimestampedStore::new(ServerId(1));
            st.synchronise(pre);
            for (a, b) in adds {
                st.add_derived(f(a, R, b));
            }
            let before = st.clock();
            st.synchronise(tau);
            if before <= tau {
                prop_assert!(!st.has_unstamped());
                prop_assert!(st.facts().all(|x| st.stamp(x).unwrap() < st.clock()));
            }
            prop_assert!(st.clock() >= before);
        }
    }
}
