//! Two-server transitive-closure walkthrough.

use std::collections::HashSet;

use distmat::cluster::{run, Checkpoints, ClusterConfig, RunOutcome, SchedulerKind};
use distmat::model::{Dictionary, Fact, Program, ServerId, Substitution, Var};
use distmat::oracle::seminaive_materialise;
use distmat::parse::{parse_rules, parse_triples};
use distmat::partition::partition_explicit;

pub const DATA: &str = "<a> <R> <b> .\n<b> <R> <c> .\n<b> <R> <d> .\n<d> <R> <e> .\n";
pub const RULES: &str = "(?x, <R>, ?z) :- (?x, <R>, ?y), (?y, <R>, ?z) .\n";
/// Lines 1-2 on server 1, lines 3-4 on server 2.
pub const LAYOUT: &str = "1 1\n2 1\n3 2\n4 2\n";

pub struct Walkthrough {
    pub dict: Dictionary,
    pub outcome: RunOutcome,
    pub oracle: HashSet<Fact>,
    pub program: Program,
    pub parts: Vec<Vec<Fact>>,
}

pub fn walkthrough(scheduler: SchedulerKind) -> Walkthrough {
    let mut dict = Dictionary::new();
    let facts = parse_triples(DATA, &mut dict).unwrap();
    let program = parse_rules(RULES, &mut dict).unwrap();
    let parts = partition_explicit(&facts, LAYOUT, 2).unwrap();
    let input: Vec<_> = facts.iter().map(|l| l.fact).collect();
    let oracle = seminaive_materialise(&input, &program).facts;
    let config = ClusterConfig {
        scheduler,
        record_events: true,
        checkpoints: Checkpoints::EveryStep,
        step_budget: Some(10_000),
        ..ClusterConfig::default()
    };
    let outcome = run(&parts, &program, &config).unwrap();
    Walkthrough {
        dict,
        outcome,
        oracle,
        program,
        parts,
    }
}

impl Walkthrough {
    pub fn binding(&self, pairs: &[(&str, &str)]) -> Substitution {
        let rule = &self.program.rules()[0];
        Substitution::from_pairs(pairs.iter().map(|(var, res)| {
            let v = (0..rule.var_names.len() as u16)
                .map(Var)
                .find(|v| rule.var_name(*v) == *var)
                .unwrap();
            (v, self.dict.lookup(&format!("<{res}>")).unwrap())
        }))
    }

    /// The two routing facts of the walkthrough:
    /// after matching (a,R,b) on server 1, the continuation with
    /// {x:a, y:b} is sent to server 2 exactly once (plus a local call);
    /// after matching (b,R,d) on server 2, the continuation with
    /// {x:b, y:d} never leaves server 2.
    pub fn check_routing(&self) -> Result<(), String> {
        let log = self.outcome.log.as_ref().ok_or("no event log")?;
        let continuation = |sigma: &Substitution| {
            log.sends
                .iter()
                .filter(|s| s.par.as_ref().is_some_and(|p| p.sigma == *sigma && p.index == 1))
                .collect::<Vec<_>>()
        };

        let from_a = continuation(&self.binding(&[("x", "a"), ("y", "b")]));
        let remote: Vec<_> = from_a.iter().filter(|s| !s.local).collect();
        if remote.len() != 1 || (remote[0].from, remote[0].to) != (ServerId(1), ServerId(2)) {
            return Err(format!("{{x:a, y:b}} should cross 1→2 once, got {remote:?}"));
        }
        if !from_a.iter().any(|s| s.local && s.from == ServerId(1)) {
            return Err("{x:a, y:b} is not continued locally on server 1".into());
        }

        let from_b = continuation(&self.binding(&[("x", "b"), ("y", "d")]));
        if from_b.is_empty() {
            return Err("{x:b, y:d} is never continued".into());
        }
        if !from_b.iter().all(|s| s.local && s.from == ServerId(2)) {
            return Err(format!("{{x:b, y:d}} should stay on server 2, got {from_b:?}"));
        }
        Ok(())
    }
}
