//! Random instance generation shared by the integration tests.
#![allow(dead_code)]

pub mod walkthrough;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use distmat::model::{Atom, Dictionary, Fact, Program, ResourceId, Rule, Term, Var};

pub struct Instance {
    pub dict: Dictionary,
    pub facts: Vec<Fact>,
    pub program: Program,
}

impl Instance {
    pub fn render(&self, facts: &[Fact]) -> String {
        let mut out = String::new();
        for f in facts {
            out.push_str(&f.to_ntriples(&self.dict));
            out.push('\n');
        }
        out
    }
}

struct Vocab {
    nodes: Vec<ResourceId>,
    preds: Vec<ResourceId>,
    /// Constants that only ever appear in rule heads.
    fresh: Vec<ResourceId>,
}

fn vocab(dict: &mut Dictionary, rng: &mut ChaCha8Rng) -> Vocab {
    let nodes = (0..rng.gen_range(3..=12))
        .map(|i| dict.encode(&format!("<http://example.org/n{i}>")).unwrap())
        .collect();
    let preds = (0..rng.gen_range(1..=4))
        .map(|i| dict.encode(&format!("<http://example.org/p{i}>")).unwrap())
        .collect();
    let fresh = (0..2)
        .map(|i| dict.encode(&format!("<http://example.org/h{i}>")).unwrap())
        .collect();
    Vocab { nodes, preds, fresh }
}

fn input(v: &Vocab, rng: &mut ChaCha8Rng, max: usize) -> Vec<Fact> {
    (0..rng.gen_range(0..=max))
        .map(|_| {
            let s = *v.nodes.choose(rng).unwrap();
            let p = *v.preds.choose(rng).unwrap();
            // Occasionally reuse a predicate as an object so resources appear
            // at several positions.
            let o = if rng.gen_bool(0.05) {
                *v.preds.choose(rng).unwrap()
            } else {
                *v.nodes.choose(rng).unwrap()
            };
            Fact::new(s, p, o)
        })
        .collect()
}

fn body_term(v: &Vocab, rng: &mut ChaCha8Rng, vars: u16) -> Term {
    if rng.gen_bool(0.15) {
        Term::Const(*v.nodes.choose(rng).unwrap())
    } else {
        Term::Var(Var(rng.gen_range(0..vars)))
    }
}

fn head_term(v: &Vocab, rng: &mut ChaCha8Rng, body_vars: &[Var]) -> Term {
    match rng.gen_range(0..10) {
        0 => Term::Const(*v.fresh.choose(rng).unwrap()),
        1 => Term::Const(*v.nodes.choose(rng).unwrap()),
        _ => Term::Var(*body_vars.choose(rng).unwrap()),
    }
}

/// Up to `max_facts` facts, up to 6 rules of up to 3 body atoms. Rules
/// reuse input predicates in their heads, so recursion is common.
pub fn random_instance(seed: u64, max_facts: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dict = Dictionary::new();
    let v = vocab(&mut dict, &mut rng);
    let facts = input(&v, &mut rng, max_facts);
    let mut rules = Vec::new();
    for _ in 0..rng.gen_range(1..=6) {
        let vars = rng.gen_range(1..=3u16);
        let body: Vec<Atom> = (0..rng.gen_range(1..=3))
            .map(|_| {
                let pred = if rng.gen_bool(0.05) {
                    Term::Var(Var(rng.gen_range(0..vars)))
                } else {
                    Term::Const(*v.preds.choose(&mut rng).unwrap())
                };
                Atom::new(body_term(&v, &mut rng, vars), pred, body_term(&v, &mut rng, vars))
            })
            .collect();
        let mut body_vars: Vec<Var> = body.iter().flat_map(|a| a.vars()).collect();
        body_vars.sort();
        body_vars.dedup();
        if body_vars.is_empty() {
            continue;
        }
        let head_pred = Term::Const(*v.preds.choose(&mut rng).unwrap());
        let head = Atom::new(
            head_term(&v, &mut rng, &body_vars),
            head_pred,
            head_term(&v, &mut rng, &body_vars),
        );
        rules.push(Rule::new(head, body));
    }
    let program = Program::new(rules).expect("generated rules are safe");
    Instance { dict, facts, program }
}

/// Rules whose body atoms all share one subject variable and nothing else.
pub fn subject_join_instance(seed: u64, max_facts: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dict = Dictionary::new();
    let v = vocab(&mut dict, &mut rng);
    let facts = input(&v, &mut rng, max_facts);
    let mut rules = Vec::new();
    for _ in 0..rng.gen_range(1..=6) {
        let atoms = rng.gen_range(2..=3u16);
        let subject = Var(0);
        let body: Vec<Atom> = (0..atoms)
            .map(|i| {
                let object = if rng.gen_bool(0.2) {
                    Term::Const(*v.nodes.choose(&mut rng).unwrap())
                } else {
                    Term::Var(Var(i + 1))
                };
                Atom::new(
                    Term::Var(subject),
                    Term::Const(*v.preds.choose(&mut rng).unwrap()),
                    object,
                )
            })
            .collect();
        let mut body_vars: Vec<Var> = body.iter().flat_map(|a| a.vars()).collect();
        body_vars.sort();
        body_vars.dedup();
        let head = Atom::new(
            Term::Var(subject),
            Term::Const(*v.preds.choose(&mut rng).unwrap()),
            Term::Var(*body_vars.choose(&mut rng).unwrap()),
        );
        rules.push(Rule::new(head, body));
    }
    let program = Program::new(rules).expect("generated rules are safe");
    Instance { dict, facts, program }
}
