//! Running a whole cluster: a deterministic event loop over the simulated
//! transport, or one thread per server over channels.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audit;
use crate::error::SimulationError;
use crate::events::{RunLog, SequenceClock};
use crate::matcher::RuleMatcher;
use crate::messaging::{Message, MessageCounts, Scheduler, Transport};
use crate::model::{Fact, Program, ServerId};
use crate::occurrences::init_occurrences;
use crate::server::{Server, SharedSetup, StepOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchedulerKind {
    RoundRobin,
    Random(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Execution {
    EventLoop,
    Threads,
}

/// When the event loop audits occurrence mappings mid-run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Checkpoints {
    Never,
    /// Whenever no PAR/FCT message is in flight and no server has work.
    Quiescent,
    /// After every step.
    EveryStep,
}

#[derive(Clone, Debug)]
pub struct ClusterConfig {
    pub scheduler: SchedulerKind,
    pub execution: Execution,
    pub reorder_atoms: bool,
    pub record_events: bool,
    pub checkpoints: Checkpoints,
    /// Event-loop steps (deliveries plus server steps) before giving up.
    pub step_budget: Option<u64>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            scheduler: SchedulerKind::RoundRobin,
            execution: Execution::EventLoop,
            reorder_atoms: false,
            record_events: false,
            checkpoints: Checkpoints::Never,
            step_budget: None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TransportSummary {
    pub messages: MessageCounts,
    /// Longest any single channel queue grew.
    pub high_watermark: usize,
    pub cross_server_par: u64,
    pub broadcast_par: u64,
    pub token_rounds: u64,
}

pub struct RunOutcome {
    pub servers: Vec<Server>,
    pub log: Option<RunLog>,
    pub transport: TransportSummary,
    /// Event-loop steps taken; 0 for threaded runs.
    pub steps: u64,
    pub checkpoints: u64,
    pub occurrence_violations: Vec<String>,
    pub wall_time: Duration,
}

impl RunOutcome {
    /// `I₁ ∪ … ∪ I_ℓ`, sorted.
    pub fn facts(&self) -> Vec<Fact> {
        let mut all: Vec<Fact> = self.servers.iter().flat_map(|s| s.store().facts().copied()).collect();
        all.sort();
        all.dedup();
        all
    }

    pub fn fact_set(&self) -> HashSet<Fact> {
        self.servers.iter().flat_map(|s| s.store().facts().copied()).collect()
    }

    pub fn full_matches(&self) -> u64 {
        self.servers.iter().map(|s| s.stats().full_matches).sum()
    }

    pub fn derived(&self) -> u64 {
        self.servers.iter().map(|s| s.stats().derived).sum()
    }
}

/// Runs the materialisation of `program` over `partitions` (one dataset per
/// server, pairwise disjoint).
pub fn run(partitions: &[Vec<Fact>], program: &Program, config: &ClusterConfig) -> Result<RunOutcome, SimulationError> {
    let started = Instant::now();
    let occurrences = init_occurrences(partitions, program)?;
    let program = Arc::new(program.clone());
    let setup = SharedSetup {
        servers: partitions.len(),
        matcher: Arc::new(RuleMatcher::new(&program, config.reorder_atoms)),
        program,
        clock: SequenceClock::new(),
        record: config.record_events,
    };
    let servers: Vec<Server> = partitions
        .iter()
        .zip(occurrences)
        .enumerate()
        .map(|(i, (facts, occ))| Server::new(ServerId::from_index(i), facts, occ, &setup))
        .collect();
    let mut outcome = match config.execution {
        Execution::EventLoop => event_loop(servers, config)?,
        Execution::Threads => threaded(servers, config)?,
    };
    if config.record_events {
        let logs: Vec<_> = outcome.servers.iter_mut().filter_map(Server::take_log).collect();
        outcome.log = Some(RunLog::merge(logs));
    }
    for s in &outcome.servers {
        outcome.transport.broadcast_par += s.stats().broadcasts;
        outcome.transport.cross_server_par += s.stats().sent.par;
    }
    outcome.transport.token_rounds = outcome.servers[0].ring().rounds();
    outcome.wall_time = started.elapsed();
    Ok(outcome)
}

fn check_drained(servers: &[Server], in_flight: usize) -> Result<(), SimulationError> {
    if in_flight > 0 {
        return Err(SimulationError::UnsafeTermination(format!(
            "{in_flight} messages still in flight"
        )));
    }
    if let Some(s) = servers.iter().find(|s| s.has_work()) {
        return Err(SimulationError::UnsafeTermination(format!(
            "server {} still has work",
            s.id()
        )));
    }
    Ok(())
}

fn event_loop(mut servers: Vec<Server>, config: &ClusterConfig) -> Result<RunOutcome, SimulationError> {
    let n = servers.len();
    let mut transport = Transport::new(n);
    let mut scheduler = match config.scheduler {
        SchedulerKind::RoundRobin => Scheduler::round_robin(),
        SchedulerKind::Random(seed) => Scheduler::random(seed),
    };
    let mut steps = 0u64;
    let mut deliver_turn = true;
    let mut next_server = 0usize;
    let mut checkpoints = 0u64;
    let mut occurrence_violations = Vec::new();
    let mut dirty = true;
    loop {
        steps += 1;
        if let Some(budget) = config.step_budget {
            if steps > budget {
                return Err(SimulationError::StepBudgetExceeded { budget });
            }
        }
        let actors: Vec<usize> = (0..n).filter(|&k| servers[k].can_act()).collect();
        let can_deliver = !transport.is_empty();
        if actors.is_empty() && !can_deliver {
            return Err(SimulationError::UnsafeTermination(
                "no server can act and nothing is in flight".into(),
            ));
        }
        let chosen = match &scheduler {
            Scheduler::RoundRobin { .. } => {
                let deliver = can_deliver && (deliver_turn || actors.is_empty());
                deliver_turn = !deliver_turn;
                if deliver {
                    None
                } else {
                    let k = *actors.iter().find(|&&k| k >= next_server).unwrap_or(&actors[0]);
                    next_server = (k + 1) % n;
                    Some(k)
                }
            }
            Scheduler::Random(_) => {
                let c = scheduler.choose(actors.len() + usize::from(can_deliver));
                actors.get(c).copied()
            }
        };
        match chosen {
            None => {
                let d = transport.step(&mut scheduler).expect("non-empty transport");
                servers[d.to.index()].receive(d.message);
            }
            Some(k) => {
                let prefer = scheduler.prefer_message();
                let outcome = servers[k].step(prefer);
                let from = servers[k].id();
                for (to, m) in servers[k].drain_outbox() {
                    transport.send(from, to, m);
                }
                match outcome {
                    StepOutcome::Terminate => {
                        check_drained(&servers, transport.in_flight())?;
                        break;
                    }
                    StepOutcome::Worked => dirty = true,
                    StepOutcome::ForwardedToken | StepOutcome::Idle => {}
                }
            }
        }
        let audit_now = match config.checkpoints {
            Checkpoints::Never => false,
            Checkpoints::EveryStep => true,
            Checkpoints::Quiescent => {
                dirty && transport.in_flight_basic() == 0 && servers.iter().all(|s| !s.has_work())
            }
        };
        if audit_now {
            dirty = false;
            checkpoints += 1;
            occurrence_violations.extend(audit::occurrence_coverage(&servers));
        }
    }
    if config.checkpoints != Checkpoints::Never {
        checkpoints += 1;
        occurrence_violations.extend(audit::occurrence_coverage(&servers));
    }
    let mut messages = MessageCounts::default();
    for s in &servers {
        messages.add(&s.stats().sent);
    }
    Ok(RunOutcome {
        servers,
        log: None,
        transport: TransportSummary {
            messages,
            high_watermark: transport.high_watermark(),
            ..TransportSummary::default()
        },
        steps,
        checkpoints,
        occurrence_violations,
        wall_time: Duration::ZERO,
    })
}

struct WorkerResult {
    server: Server,
    leftover: usize,
    high_watermark: usize,
}

fn worker(
    mut server: Server,
    inbox: Receiver<Message>,
    peers: Vec<Sender<Message>>,
    seed: Option<u64>,
) -> WorkerResult {
    let mut rng = seed.map(|s| ChaCha8Rng::seed_from_u64(s ^ u64::from(server.id().0)));
    let mut high_watermark = 0;
    let deliver = |server: &mut Server, m: Message| server.receive(m);
    'run: loop {
        high_watermark = high_watermark.max(inbox.len());
        while let Ok(m) = inbox.try_recv() {
            deliver(&mut server, m);
        }
        if server.is_terminated() {
            break;
        }
        let prefer = rng.as_mut().is_none_or(|r| r.gen_bool(0.5));
        let outcome = server.step(prefer);
        let from = server.id();
        for (to, m) in server.drain_outbox() {
            debug_assert_ne!(to, from);
            peers[to.index()].send(m).expect("peer inbox open");
        }
        match outcome {
            StepOutcome::Terminate => {
                for (i, p) in peers.iter().enumerate() {
                    if i != from.index() {
                        p.send(Message::Terminate).expect("peer inbox open");
                    }
                }
                break;
            }
            StepOutcome::Idle => loop {
                match inbox.recv_timeout(Duration::from_millis(50)) {
                    Ok(m) => {
                        deliver(&mut server, m);
                        continue 'run;
                    }
                    Err(RecvTimeoutError::Timeout) => continue,
                    Err(RecvTimeoutError::Disconnected) => break 'run,
                }
            },
            StepOutcome::Worked | StepOutcome::ForwardedToken => {}
        }
    }
    // Anything arriving after the stop is a protocol error; report it.
    let leftover = inbox.try_iter().filter(|m| !matches!(m, Message::Terminate)).count();
    WorkerResult {
        server,
        leftover,
        high_watermark,
    }
}

fn threaded(servers: Vec<Server>, config: &ClusterConfig) -> Result<RunOutcome, SimulationError> {
    let n = servers.len();
    let (senders, receivers): (Vec<_>, Vec<_>) = (0..n).map(|_| crossbeam_channel::unbounded()).unzip();
    let seed = match config.scheduler {
        SchedulerKind::RoundRobin => None,
        SchedulerKind::Random(s) => Some(s),
    };
    let results: Vec<std::thread::Result<WorkerResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = servers
            .into_iter()
            .zip(receivers)
            .map(|(server, rx)| {
                let peers = senders.clone();
                scope.spawn(move || worker(server, rx, peers, seed))
            })
            .collect();
        handles.into_iter().map(|h| h.join()).collect()
    });
    let mut finished = Vec::with_capacity(n);
    let mut leftover = 0;
    let mut high_watermark = 0;
    for r in results {
        let r = r.map_err(|_| SimulationError::WorkerPanicked)?;
        leftover += r.leftover;
        high_watermark = high_watermark.max(r.high_watermark);
        finished.push(r.server);
    }
    check_drained(&finished, leftover)?;
    let mut messages = MessageCounts::default();
    for s in &finished {
        messages.add(&s.stats().sent);
    }
    let mut occurrence_violations = Vec::new();
    let mut checkpoints = 0;
    if config.checkpoints != Checkpoints::Never {
        checkpoints = 1;
        occurrence_violations = audit::occurrence_coverage(&finished);
    }
    Ok(RunOutcome {
        servers: finished,
        log: None,
        transport: TransportSummary {
            messages,
            high_watermark,
            ..TransportSummary::default()
        },
        steps: 0,
        checkpoints,
        occurrence_violations,
        wall_time: Duration::ZERO,
    })
}
