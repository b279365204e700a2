//! The per-server materialisation algorithm.
//!
//! A [`Server`] owns one partition's store, occurrence mappings, inbox and
//! ring state. The driver calls [`Server::step`] repeatedly; each step either
//! processes one inbox message, processes one stamped fact, stamps waiting
//! facts, or (when idle) handles the termination token. Messages a server
//! would send to itself are run as direct calls from a local work stack
//! within the same step.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::events::{
    ChainOutcome, ChainRecord, Event, EventKind, Instantiation, ParSummary, SendRecord, SequenceClock, ServerLog,
};
use crate::matcher::RuleMatcher;
use crate::messaging::{ChainId, FctMessage, Message, MessageCounts, ParMessage, Provenance, Token};
use crate::model::{apply, ground, Fact, Position, Program, ResourceId, ServerId, Substitution, Term};
use crate::occurrences::{merge_into, owner_of, OccurrenceMap, PartialOccurrences, ServerSet};
use crate::store::{AddOutcome, AnnotatedQuery, Timestamp, TimestampedStore};
use crate::termination::{RingAction, RingState};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerStats {
    /// Facts added to this server's store by FCT chains.
    pub derived: u64,
    /// FCT chains that ended on a fact already stored.
    pub duplicates: u64,
    pub facts_processed: u64,
    pub sent: MessageCounts,
    pub received: MessageCounts,
    /// Direct calls that replaced a send to self.
    pub local_calls: MessageCounts,
    /// PAR fan-outs where no position narrowed the destination set.
    pub broadcasts: u64,
    pub full_matches: u64,
    pub self_syncs: u64,
    pub max_inbox: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    /// Processed a message or fact, or stamped waiting facts.
    Worked,
    /// Passed the token on.
    ForwardedToken,
    /// Nothing to do and no token.
    Idle,
    /// Server 1 detected global termination.
    Terminate,
}

enum Work {
    Par(ParMessage),
    Fct(FctMessage),
}

pub struct Server {
    id: ServerId,
    servers: usize,
    store: TimestampedStore,
    occ: OccurrenceMap,
    program: Arc<Program>,
    matcher: Arc<RuleMatcher>,
    inbox: VecDeque<Message>,
    ring: RingState,
    outbox: Vec<(ServerId, Message)>,
    /// Self-calls raised by the handler currently running.
    raised: Vec<Work>,
    work: Vec<Work>,
    awaiting_stamp: HashMap<Fact, ChainId>,
    next_chain: u64,
    clock: SequenceClock,
    log: Option<ServerLog>,
    stats: ServerStats,
    terminated: bool,
}

/// State shared read-only by all servers of one run.
#[derive(Clone)]
pub struct SharedSetup {
    pub servers: usize,
    pub program: Arc<Program>,
    pub matcher: Arc<RuleMatcher>,
    pub clock: SequenceClock,
    /// Keep an event log for auditing.
    pub record: bool,
}

impl Server {
    /// Loads `facts` with stamp 0 and clock 0.
    pub fn new(id: ServerId, facts: &[Fact], occ: OccurrenceMap, setup: &SharedSetup) -> Self {
        let mut store = TimestampedStore::new(id);
        store.load_initial(facts.iter().copied());
        let servers = setup.servers;
        Server {
            id,
            servers,
            store,
            occ,
            program: Arc::clone(&setup.program),
            matcher: Arc::clone(&setup.matcher),
            inbox: VecDeque::new(),
            ring: RingState::new(id, servers),
            outbox: Vec::new(),
            raised: Vec::new(),
            work: Vec::new(),
            awaiting_stamp: HashMap::new(),
            next_chain: 0,
            clock: setup.clock.clone(),
            log: setup.record.then(ServerLog::default),
            stats: ServerStats::default(),
            terminated: false,
        }
    }

    pub fn id(&self) -> ServerId {
        self.id
    }

    pub fn store(&self) -> &TimestampedStore {
        &self.store
    }

    pub fn occurrences(&self) -> &OccurrenceMap {
        &self.occ
    }

    pub fn ring(&self) -> &RingState {
        &self.ring
    }

    pub fn stats(&self) -> &ServerStats {
        &self.stats
    }

    pub fn log(&self) -> Option<&ServerLog> {
        self.log.as_ref()
    }

    pub fn take_log(&mut self) -> Option<ServerLog> {
        self.log.take()
    }

    pub fn inbox_len(&self) -> usize {
        self.inbox.len()
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    /// Pending inbox messages or facts still to stamp or process.
    pub fn has_work(&self) -> bool {
        !self.inbox.is_empty() || self.store.pending_facts() > 0
    }

    /// Whether [`Server::step`] would do anything.
    pub fn can_act(&self) -> bool {
        !self.terminated && (self.has_work() || self.ring.holds_token())
    }

    /// Sends produced since the last call.
    pub fn drain_outbox(&mut self) -> std::vec::Drain<'_, (ServerId, Message)> {
        self.outbox.drain(..)
    }

    /// Hands over a message that arrived from the network.
    pub fn receive(&mut self, message: Message) {
        match message {
            Message::Token(t) => self.ring.on_token(t),
            Message::Terminate => self.terminated = true,
            basic => {
                self.ring.on_receive();
                self.stats.received.record(basic.kind());
                self.inbox.push_back(basic);
                self.stats.max_inbox = self.stats.max_inbox.max(self.inbox.len());
            }
        }
    }

    /// Does one unit of work. With `prefer_message` set, a pending message is
    /// taken before a pending fact; otherwise the fact goes first.
    pub fn step(&mut self, prefer_message: bool) -> StepOutcome {
        if self.terminated {
            return StepOutcome::Idle;
        }
        let has_message = !self.inbox.is_empty();
        let has_fact = self.store.has_unprocessed();
        if has_message && (prefer_message || !has_fact) {
            match self.inbox.pop_front().expect("non-empty inbox") {
                Message::Par(m) => self.process_par(m),
                Message::Fct(m) => self.process_fct(m),
                other => unreachable!("control message in inbox: {other:?}"),
            }
        } else if has_fact {
            let (fact, stamp) = self.store.next_unprocessed().expect("unprocessed fact");
            self.process_fact(fact, stamp);
        } else if self.store.has_unstamped() {
            // Only unstamped facts remain: stamp them so they can be processed.
            self.stats.self_syncs += 1;
            self.synchronise(self.store.clock());
        } else {
            return match self.ring.on_idle() {
                RingAction::Wait => StepOutcome::Idle,
                RingAction::Forward { to, token } => {
                    self.send_token(to, token);
                    StepOutcome::ForwardedToken
                }
                RingAction::Terminate => {
                    self.terminated = true;
                    StepOutcome::Terminate
                }
            };
        }
        self.run_local_calls();
        StepOutcome::Worked
    }

    fn run_local_calls(&mut self) {
        self.flush_raised();
        while let Some(w) = self.work.pop() {
            match w {
                Work::Par(m) => self.process_par(m),
                Work::Fct(m) => self.process_fct(m),
            }
            self.flush_raised();
        }
    }

    /// Moves self-calls raised by the last handler onto the stack so that
    /// they run in the order they were raised.
    fn flush_raised(&mut self) {
        self.work.extend(self.raised.drain(..).rev());
    }

    fn record(&mut self, kind: EventKind) {
        if let Some(log) = self.log.as_mut() {
            log.events.push(Event {
                seq: self.clock.tick(),
                server: self.id,
                kind,
            });
        }
    }

    fn synchronise(&mut self, tau: Timestamp) {
        let stamped = self.store.synchronise(tau);
        for fact in stamped {
            let chain = self.awaiting_stamp.remove(&fact);
            if self.log.is_some() {
                let stamp = self.store.stamp(&fact).expect("just stamped");
                self.record(EventKind::Add { fact, stamp, chain });
            }
        }
    }

    fn process_fact(&mut self, fact: Fact, stamp: Timestamp) {
        self.synchronise(stamp);
        self.record(EventKind::Process { fact, stamp });
        self.stats.facts_processed += 1;
        for pm in self.matcher.match_rules(&fact) {
            let provenance = Provenance {
                origin: fact,
                pivot_index: pm.pivot_index(),
            };
            self.finish_match(0, pm.sigma, &pm.query, stamp, PartialOccurrences::new(), provenance);
        }
    }

    fn process_par(&mut self, m: ParMessage) {
        self.synchronise(m.tau);
        self.record(EventKind::Par {
            provenance: m.provenance,
            origin_stamp: m.tau,
            index: m.index,
        });
        let answers = self.store.evaluate(m.query.atom(m.index), m.tau, &m.sigma);
        for sigma in answers {
            self.finish_match(m.index, sigma, &m.query, m.tau, m.lambda.clone(), m.provenance);
        }
    }

    fn process_fct(&mut self, m: FctMessage) {
        let FctMessage {
            fact,
            mut pending,
            owner,
            tau,
            mut lambda,
            chain,
            mut visited,
            mut announce,
        } = m;
        self.synchronise(tau);
        self.record(EventKind::Fct { fact, chain });
        visited.insert(self.id);
        for r in distinct(fact.resources()) {
            for pos in Position::ALL {
                let fresh = merge_into(&mut self.occ, &mut lambda, r, pos);
                pending.union_with(&fresh);
            }
        }
        if self.id == owner {
            for pos in Position::ALL {
                let r = fact.get(pos);
                if !self.store.occurs_at(r, pos) {
                    announce.insert(r);
                }
            }
        }
        for &r in &announce {
            for pos in Position::ALL {
                if let Some(s) = lambda.get(r, pos) {
                    pending.union_with(s);
                }
            }
        }
        pending = pending.difference(&visited);
        if pending.is_empty() && self.id == owner {
            let outcome = match self.store.add_derived(fact) {
                AddOutcome::Added => {
                    self.stats.derived += 1;
                    self.awaiting_stamp.insert(fact, chain);
                    ChainOutcome::Added
                }
                AddOutcome::Duplicate => {
                    self.stats.duplicates += 1;
                    ChainOutcome::Duplicate
                }
            };
            if let Some(log) = self.log.as_mut() {
                log.chains.push(ChainRecord {
                    chain,
                    fact,
                    owner,
                    stored_at: self.id,
                    outcome,
                });
            }
            return;
        }
        // The owner stores the fact only once everyone else has been updated.
        pending.insert(owner);
        let next = pending.take_preferring_not(owner).expect("non-empty");
        let tau = self.store.clock();
        self.dispatch(
            next,
            Work::Fct(FctMessage {
                fact,
                pending,
                owner,
                tau,
                lambda,
                chain,
                visited,
                announce,
            }),
        );
    }

    /// `i` is the index of the atom just matched (0 for the pivot).
    fn finish_match(
        &mut self,
        i: usize,
        sigma: Substitution,
        query: &Arc<AnnotatedQuery>,
        tau: Timestamp,
        mut lambda: PartialOccurrences,
        provenance: Provenance,
    ) {
        let n = query.len();
        let matched = *query.matched_atom(i);
        for x in matched.vars() {
            let needed = query.head.has_var(x) || (i + 1..=n).any(|j| query.atom(j).atom.has_var(x));
            if needed {
                let r = sigma.get(x).expect("matched atom is ground under σ");
                lambda.extend_from(&self.occ, r);
            }
        }

        if i == n {
            for r in query.head.constants() {
                lambda.extend_from(&self.occ, r);
            }
            let fact = ground(&query.head, &sigma).expect("safe rule");
            self.stats.full_matches += 1;
            if let Some(log) = self.log.as_mut() {
                let rule = self.program.rule(query.rule);
                log.instantiations.push(Instantiation {
                    rule: query.rule,
                    body: rule
                        .body
                        .iter()
                        .map(|a| ground(a, &sigma).expect("full match"))
                        .collect(),
                });
            }
            let owner = owner_of(&fact, &lambda, &self.occ, self.servers);
            let mut pending = ServerSet::singleton(owner);
            let mut announce = BTreeSet::new();
            for pos in Position::ALL {
                let r = fact.get(pos);
                if lambda.get(r, pos).is_some_and(|s| s.contains(owner)) {
                    continue;
                }
                announce.insert(r);
                lambda.extend(r, pos, &ServerSet::singleton(owner));
                for other in Position::ALL {
                    if let Some(s) = lambda.get(r, other) {
                        pending.union_with(s);
                    }
                }
            }
            let next = pending.take_preferring_not(owner).expect("owner is pending");
            let chain = ChainId {
                origin: self.id,
                serial: self.next_chain,
            };
            self.next_chain += 1;
            let tau = self.store.clock();
            self.dispatch(
                next,
                Work::Fct(FctMessage {
                    fact,
                    pending,
                    owner,
                    tau,
                    lambda,
                    chain,
                    visited: ServerSet::new(),
                    announce,
                }),
            );
            return;
        }

        let next_atom = apply(&query.atom(i + 1).atom, &sigma);
        let mut targets = ServerSet::all(self.servers);
        let mut narrowed = false;
        for pos in Position::ALL {
            if let Term::Const(r) = next_atom.term(pos) {
                if let Some(s) = lambda.get(r, pos) {
                    targets.intersect_with(s);
                    narrowed = true;
                }
            }
        }
        if !narrowed && self.servers > 1 {
            self.stats.broadcasts += 1;
        }
        for d in targets.iter() {
            self.dispatch(
                d,
                Work::Par(ParMessage {
                    index: i + 1,
                    sigma: sigma.clone(),
                    query: Arc::clone(query),
                    tau,
                    lambda: lambda.clone(),
                    provenance,
                }),
            );
        }
    }

    /// Sends `work` to `to`, or queues a direct call when `to` is this server.
    fn dispatch(&mut self, to: ServerId, work: Work) {
        let local = to == self.id;
        if let Some(log) = self.log.as_mut() {
            let (kind, par, fact) = match &work {
                Work::Par(m) => (
                    crate::messaging::MessageKind::Par,
                    Some(ParSummary {
                        provenance: m.provenance,
                        index: m.index,
                        sigma: m.sigma.clone(),
                    }),
                    None,
                ),
                Work::Fct(m) => (crate::messaging::MessageKind::Fct, None, Some(m.fact)),
            };
            log.sends.push(SendRecord {
                seq: self.clock.tick(),
                from: self.id,
                to,
                kind,
                local,
                par,
                fact,
            });
        }
        if local {
            let kind = match &work {
                Work::Par(_) => crate::messaging::MessageKind::Par,
                Work::Fct(_) => crate::messaging::MessageKind::Fct,
            };
            self.stats.local_calls.record(kind);
            self.raised.push(work);
            return;
        }
        let message = match work {
            Work::Par(m) => Message::Par(m),
            Work::Fct(m) => Message::Fct(m),
        };
        self.ring.on_send(to);
        self.stats.sent.record(message.kind());
        self.outbox.push((to, message));
    }

    fn send_token(&mut self, to: ServerId, token: Token) {
        let message = Message::Token(token);
        self.stats.sent.record(message.kind());
        self.outbox.push((to, message));
    }
}

fn distinct(rs: [ResourceId; 3]) -> impl Iterator<Item = ResourceId> {
    let mut v = rs.to_vec();
    v.sort_unstable();
    v.dedup();
    v.into_iter()
}
