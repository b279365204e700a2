//! Event log recorded by servers for post-hoc auditing.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::messaging::{ChainId, MessageKind, Provenance};
use crate::model::{Fact, RuleId, ServerId, Substitution};
use crate::store::Timestamp;

/// Cluster-wide sequence counter; gives every event a total order.
#[derive(Clone, Debug, Default)]
pub struct SequenceClock(Arc<AtomicU64>);

impl SequenceClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tick(&self) -> u64 {
        self.0.fetch_add(1, Ordering::Relaxed)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EventKind {
    /// A derived fact received its stamp.
    Add {
        fact: Fact,
        stamp: Timestamp,
        chain: Option<ChainId>,
    },
    /// ProcessFact synchronised on the fact's stamp.
    Process { fact: Fact, stamp: Timestamp },
    /// A PAR message (or self-call) for atom `index` synchronised on the
    /// origin fact's stamp.
    Par {
        provenance: Provenance,
        origin_stamp: Timestamp,
        index: usize,
    },
    /// An FCT message (or self-call) synchronised.
    Fct { fact: Fact, chain: ChainId },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub seq: u64,
    pub server: ServerId,
    pub kind: EventKind,
}

/// A rule body fully matched: the rule and its ground body facts in body
/// order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Instantiation {
    pub rule: RuleId,
    pub body: Vec<Fact>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainOutcome {
    Added,
    Duplicate,
}

/// Final state of one FCT chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainRecord {
    pub chain: ChainId,
    pub fact: Fact,
    pub owner: ServerId,
    pub stored_at: ServerId,
    pub outcome: ChainOutcome,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SendRecord {
    pub seq: u64,
    pub from: ServerId,
    pub to: ServerId,
    pub kind: MessageKind,
    /// Delivered by a direct call rather than the network.
    pub local: bool,
    pub par: Option<ParSummary>,
    pub fact: Option<Fact>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParSummary {
    pub provenance: Provenance,
    pub index: usize,
    pub sigma: Substitution,
}

/// Everything one server recorded.
#[derive(Clone, Debug, Default)]
pub struct ServerLog {
    pub events: Vec<Event>,
    pub instantiations: Vec<Instantiation>,
    pub chains: Vec<ChainRecord>,
    pub sends: Vec<SendRecord>,
}

/// Logs of all servers merged, each list ordered by sequence number.
#[derive(Clone, Debug, Default)]
pub struct RunLog {
    pub events: Vec<Event>,
    pub instantiations: Vec<Instantiation>,
    pub chains: Vec<ChainRecord>,
    pub sends: Vec<SendRecord>,
}

impl RunLog {
    pub fn merge(logs: impl IntoIterator<Item = ServerLog>) -> Self {
        let mut out = RunLog::default();
        for log in logs {
            out.events.extend(log.events);
            out.instantiations.extend(log.instantiations);
            out.chains.extend(log.chains);
            out.sends.extend(log.sends);
        }
        out.events.sort_by_key(|e| e.seq);
        out.sends.sort_by_key(|s| s.seq);
        out.chains.sort_by_key(|c| c.chain);
        out
    }

    /// Network PAR sends (not direct calls).
    pub fn cross_server_pars(&self) -> impl Iterator<Item = &SendRecord> {
        self.sends.iter().filter(|s| s.kind == MessageKind::Par && !s.local)
    }
}
