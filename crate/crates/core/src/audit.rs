//! Invariant checks over a finished run or a paused cluster.
//!
//! Each check returns a list of human-readable violations; an empty list
//! means the property held.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::events::{ChainOutcome, EventKind, RunLog};
use crate::messaging::ChainId;
use crate::model::{Fact, Position, ResourceId, ServerId};
use crate::occurrences::ServerSet;
use crate::server::Server;
use crate::store::Timestamp;

/// Stamp of every stored fact, across servers.
pub fn final_stamps(servers: &[Server]) -> HashMap<Fact, Timestamp> {
    let mut out = HashMap::new();
    for s in servers {
        for f in s.store().facts() {
            if let Some(t) = s.store().stamp(f) {
                out.insert(*f, t);
            }
        }
    }
    out
}

/// On each server, a PAR event for origin `f₁` before the stamping of `f₂`,
/// or a process/PAR event for `f₁` before the FCT event for `f₂`, implies
/// `T(f₁) < T(f₂)`.
///
/// FCT events are checked only on chains that stored their fact; a chain
/// that reached an already-stored fact leaves the earlier stamp in place.
pub fn stamp_causality(log: &RunLog, stamps: &HashMap<Fact, Timestamp>) -> Vec<String> {
    let storing: HashSet<_> = log
        .chains
        .iter()
        .filter(|c| c.outcome == ChainOutcome::Added)
        .map(|c| c.chain)
        .collect();
    #[derive(Default)]
    struct Seen {
        par: Option<(Timestamp, u64)>,
        process: Option<(Timestamp, u64)>,
    }
    let bump = |slot: &mut Option<(Timestamp, u64)>, t: Timestamp, seq: u64| {
        if slot.is_none_or(|(m, _)| t > m) {
            *slot = Some((t, seq));
        }
    };
    let mut seen: HashMap<ServerId, Seen> = HashMap::new();
    let mut violations = Vec::new();
    for e in &log.events {
        let s = seen.entry(e.server).or_default();
        match &e.kind {
            EventKind::Par { origin_stamp, .. } => bump(&mut s.par, *origin_stamp, e.seq),
            EventKind::Process { stamp, .. } => bump(&mut s.process, *stamp, e.seq),
            EventKind::Add { fact, stamp, .. } => {
                if let Some((t1, at)) = s.par {
                    if t1 >= *stamp {
                        violations.push(format!(
                            "server {}: PAR event #{at} with stamp {t1} precedes add of {fact:?} stamped {stamp}",
                            e.server
                        ));
                    }
                }
            }
            EventKind::Fct { fact, chain } => {
                if !storing.contains(chain) {
                    continue;
                }
                let Some(&t2) = stamps.get(fact) else {
                    violations.push(format!("{fact:?} was stored but never stamped"));
                    continue;
                };
                for (what, slot) in [("PAR", s.par), ("process", s.process)] {
                    if let Some((t1, at)) = slot {
                        if t1 >= t2 {
                            violations.push(format!(
                                "server {}: {what} event #{at} with stamp {t1} precedes FCT of {fact:?} stamped {t2}",
                                e.server
                            ));
                        }
                    }
                }
            }
        }
    }
    violations
}

/// Whenever `r` occurs at `π` in `I_j` and `μ_{k,π}` is defined on `r`,
/// `j ∈ μ_{k,π}(r)`.
///
/// Checked for servers `k` holding a fact that mentions `r`. A server that
/// does not store `r` may keep an entry it received as a routing hint (rule
/// head constants, or resources of a passing FCT); those entries are never
/// consulted for `r` on that server before `r` arrives there, and the FCT
/// chain that brings `r` refreshes them.
pub fn occurrence_coverage(servers: &[Server]) -> Vec<String> {
    let mut holders: HashMap<ResourceId, Vec<usize>> = HashMap::new();
    for (k, s) in servers.iter().enumerate() {
        let mut mine: HashSet<ResourceId> = HashSet::new();
        for f in s.store().facts() {
            mine.extend(f.resources());
        }
        for r in mine {
            holders.entry(r).or_default().push(k);
        }
    }
    let mut violations = Vec::new();
    for (j, s) in servers.iter().enumerate() {
        let j_id = ServerId::from_index(j);
        let mut checked: HashSet<(ResourceId, Position)> = HashSet::new();
        for f in s.store().facts() {
            for pos in Position::ALL {
                let r = f.get(pos);
                if !checked.insert((r, pos)) {
                    continue;
                }
                for &k in &holders[&r] {
                    if let Some(set) = servers[k].occurrences().get(r, pos) {
                        if !set.contains(j_id) {
                            violations.push(format!(
                                "resource {r} occurs at {} on server {j_id} but server {} maps it to {set}",
                                pos.symbol(),
                                ServerId::from_index(k)
                            ));
                        }
                    }
                }
            }
        }
    }
    violations
}

/// For each resource `r`, the servers that spread news of `r` reaching
/// different servers meet. News of `r` reaching server `j` is spread by the
/// FCT chains ending at `j` with a fact mentioning `r`; servers holding `r`
/// from the start count as one group spread by all initial holders.
pub fn arrival_routes_intersect(log: &RunLog, initial: &[Vec<Fact>]) -> Vec<String> {
    let mut routes: HashMap<ChainId, ServerSet> = HashMap::new();
    for e in &log.events {
        if let EventKind::Fct { chain, .. } = &e.kind {
            routes.entry(*chain).or_default().insert(e.server);
        }
    }
    let mut initial_holders: HashMap<ResourceId, ServerSet> = HashMap::new();
    for (k, facts) in initial.iter().enumerate() {
        for f in facts {
            for r in f.resources() {
                initial_holders.entry(r).or_default().insert(ServerId::from_index(k));
            }
        }
    }
    let mut spread: BTreeMap<(ResourceId, ServerId), ServerSet> = BTreeMap::new();
    for c in &log.chains {
        let Some(route) = routes.get(&c.chain) else {
            continue;
        };
        for r in c.fact.resources() {
            if initial_holders.get(&r).is_some_and(|h| h.contains(c.stored_at)) {
                continue;
            }
            spread.entry((r, c.stored_at)).or_default().union_with(route);
        }
    }
    let mut by_resource: BTreeMap<ResourceId, Vec<(String, &ServerSet)>> = BTreeMap::new();
    for (r, holders) in &initial_holders {
        by_resource
            .entry(*r)
            .or_default()
            .push(("initial holders".into(), holders));
    }
    for ((r, k), route) in &spread {
        by_resource
            .entry(*r)
            .or_default()
            .push((format!("arrival at server {k}"), route));
    }
    let mut violations = Vec::new();
    for (r, entries) in by_resource {
        for (i, (a, ra)) in entries.iter().enumerate() {
            for (b, rb) in &entries[i + 1..] {
                if !ra.meets(rb) {
                    violations.push(format!("resource {r}: routes of {a} {ra} and {b} {rb} are disjoint"));
                }
            }
        }
    }
    violations
}

/// No `(rule, body tuple)` completes twice.
pub fn nonrepetition(log: &RunLog) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut violations = Vec::new();
    for inst in &log.instantiations {
        if !seen.insert(inst) {
            violations.push(format!("rule {} fired twice on {:?}", inst.rule.0, inst.body));
        }
    }
    violations
}

/// Every fact carried by an FCT chain, and every stored fact, is in the
/// reference materialisation.
pub fn soundness(log: Option<&RunLog>, servers: &[Server], reference: &HashSet<Fact>) -> Vec<String> {
    let mut violations = Vec::new();
    if let Some(log) = log {
        for c in &log.chains {
            if !reference.contains(&c.fact) {
                violations.push(format!("derived {:?}, which is not entailed", c.fact));
            }
        }
    }
    for s in servers {
        for f in s.store().facts() {
            if !reference.contains(f) {
                violations.push(format!("server {} stores {f:?}, which is not entailed", s.id()));
            }
        }
    }
    violations
}

/// The union of the stores equals the reference and every fact is stored
/// once.
pub fn completeness(servers: &[Server], reference: &HashSet<Fact>) -> Vec<String> {
    let mut home: HashMap<Fact, ServerId> = HashMap::new();
    let mut violations = Vec::new();
    for s in servers {
        for f in s.store().facts() {
            if let Some(prev) = home.insert(*f, s.id()) {
                violations.push(format!("{f:?} stored on both {prev} and {}", s.id()));
            }
        }
    }
    let mut missing: Vec<&Fact> = reference.iter().filter(|f| !home.contains_key(f)).collect();
    missing.sort();
    for f in missing {
        violations.push(format!("{f:?} is entailed but stored nowhere"));
    }
    violations
}
