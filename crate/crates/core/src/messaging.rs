//! Message types and the simulated transport.
//!
//! The transport keeps one FIFO queue per ordered pair of servers. Delivery
//! across pairs may interleave in any order chosen by a [`Scheduler`].

use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Atom, Fact, ResourceId, ServerId, Substitution};
use crate::occurrences::{PartialOccurrences, ServerSet};
use crate::store::{AnnotatedQuery, Timestamp};

/// Where a partial match came from: the pivot fact and its body index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub origin: Fact,
    pub pivot_index: usize,
}

/// `PAR⟨i, σ, Q, h, τ, λ⟩`: atom `i` of `Q` is the next to match.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParMessage {
    pub index: usize,
    pub sigma: Substitution,
    pub query: Arc<AnnotatedQuery>,
    pub tau: Timestamp,
    pub lambda: PartialOccurrences,
    pub provenance: Provenance,
}

impl ParMessage {
    pub fn head(&self) -> &Atom {
        &self.query.head
    }
}

/// Identifies one FCT chain: the server that derived the fact and a local
/// counter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChainId {
    pub origin: ServerId,
    pub serial: u64,
}

/// `FCT⟨f, D, k_h, τ, λ⟩`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FctMessage {
    pub fact: Fact,
    pub pending: ServerSet,
    pub owner: ServerId,
    pub tau: Timestamp,
    pub lambda: PartialOccurrences,
    pub chain: ChainId,
    /// Servers that have processed this chain so far.
    pub visited: ServerSet,
    /// Resources the owner will hold at a new position; every server known
    /// to hold one of them must see the chain before the fact is stored.
    pub announce: BTreeSet<ResourceId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Colour {
    White,
    Black,
}

/// Termination token. Besides its colour it carries the running sum of the
/// sent-minus-received counters of the servers it has visited this round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Token {
    pub colour: Colour,
    pub balance: i64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Par(ParMessage),
    Fct(FctMessage),
    Token(Token),
    Terminate,
}

impl Message {
    /// PAR and FCT messages; these are what the token ring counts.
    pub fn is_basic(&self) -> bool {
        matches!(self, Message::Par(_) | Message::Fct(_))
    }

    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Par(_) => MessageKind::Par,
            Message::Fct(_) => MessageKind::Fct,
            Message::Token(_) => MessageKind::Token,
            Message::Terminate => MessageKind::Terminate,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    Par,
    Fct,
    Token,
    Terminate,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageCounts {
    pub par: u64,
    pub fct: u64,
    pub token: u64,
}

impl MessageCounts {
    pub fn record(&mut self, kind: MessageKind) {
        match kind {
            MessageKind::Par => self.par += 1,
            MessageKind::Fct => self.fct += 1,
            MessageKind::Token => self.token += 1,
            MessageKind::Terminate => {}
        }
    }

    pub fn add(&mut self, other: &MessageCounts) {
        self.par += other.par;
        self.fct += other.fct;
        self.token += other.token;
    }
}

/// Delivery policy for the event-loop simulator.
#[derive(Clone, Debug)]
pub enum Scheduler {
    RoundRobin { cursor: usize },
    Random(Box<ChaCha8Rng>),
}

impl Scheduler {
    pub fn round_robin() -> Self {
        Scheduler::RoundRobin { cursor: 0 }
    }

    pub fn random(seed: u64) -> Self {
        Scheduler::Random(Box::new(ChaCha8Rng::seed_from_u64(seed)))
    }

    /// Picks one of `n > 0` alternatives. Round-robin walks a cursor over
    /// `0..n`; random draws uniformly.
    pub fn choose(&mut self, n: usize) -> usize {
        assert!(n > 0);
        match self {
            Scheduler::RoundRobin { cursor } => {
                let pick = *cursor % n;
                *cursor = cursor.wrapping_add(1);
                pick
            }
            Scheduler::Random(rng) => rng.gen_range(0..n),
        }
    }

    /// Whether to take a pending message before a pending fact. Round-robin
    /// always takes messages first; random flips a coin.
    pub fn prefer_message(&mut self) -> bool {
        match self {
            Scheduler::RoundRobin { .. } => true,
            Scheduler::Random(rng) => rng.gen_bool(0.5),
        }
    }
}

#[derive(Clone, Debug)]
struct Envelope {
    seq: u64,
    message: Message,
}

#[derive(Clone, Debug, Default)]
struct Channel {
    queue: VecDeque<Envelope>,
    sent: u64,
    delivered: u64,
    high_watermark: usize,
}

/// Per-queue counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub sent: u64,
    pub delivered: u64,
    pub high_watermark: usize,
}

/// A message taken off a queue.
#[derive(Clone, Debug)]
pub struct Delivery {
    pub from: ServerId,
    pub to: ServerId,
    /// Position of the message in its queue's send order, from 0.
    pub seq: u64,
    pub message: Message,
}

/// `ℓ × ℓ` FIFO queues.
#[derive(Clone, Debug)]
pub struct Transport {
    servers: usize,
    channels: Vec<Channel>,
    in_flight: usize,
    in_flight_basic: usize,
}

impl Transport {
    pub fn new(servers: usize) -> Self {
        Transport {
            servers,
            channels: vec![Channel::default(); servers * servers],
            in_flight: 0,
            in_flight_basic: 0,
        }
    }

    pub fn servers(&self) -> usize {
        self.servers
    }

    fn slot(&self, from: ServerId, to: ServerId) -> usize {
        from.index() * self.servers + to.index()
    }

    pub fn send(&mut self, from: ServerId, to: ServerId, message: Message) {
        assert!(
            (1..=self.servers as u32).contains(&to.0) && (1..=self.servers as u32).contains(&from.0),
            "server id out of range"
        );
        self.in_flight += 1;
        if message.is_basic() {
            self.in_flight_basic += 1;
        }
        let i = self.slot(from, to);
        let ch = &mut self.channels[i];
        ch.queue.push_back(Envelope { seq: ch.sent, message });
        ch.sent += 1;
        ch.high_watermark = ch.high_watermark.max(ch.queue.len());
    }

    pub fn is_empty(&self) -> bool {
        self.in_flight == 0
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight
    }

    /// PAR and FCT messages currently queued.
    pub fn in_flight_basic(&self) -> usize {
        self.in_flight_basic
    }

    /// Delivers the head of one non-empty queue chosen by `scheduler`.
    pub fn step(&mut self, scheduler: &mut Scheduler) -> Option<Delivery> {
        if self.in_flight == 0 {
            return None;
        }
        let busy: Vec<usize> = (0..self.channels.len())
            .filter(|&i| !self.channels[i].queue.is_empty())
            .collect();
        let i = busy[scheduler.choose(busy.len())];
        let ch = &mut self.channels[i];
        let env = ch.queue.pop_front().expect("non-empty queue");
        ch.delivered += 1;
        self.in_flight -= 1;
        if env.message.is_basic() {
            self.in_flight_basic -= 1;
        }
        Some(Delivery {
            from: ServerId::from_index(i / self.servers),
            to: ServerId::from_index(i % self.servers),
            seq: env.seq,
            message: env.message,
        })
    }

    pub fn channel_stats(&self, from: ServerId, to: ServerId) -> ChannelStats {
        let ch = &self.channels[self.slot(from, to)];
        ChannelStats {
            sent: ch.sent,
            delivered: ch.delivered,
            high_watermark: ch.high_watermark,
        }
    }

    /// Largest queue length seen on any channel.
    pub fn high_watermark(&self) -> usize {
        self.channels.iter().map(|c| c.high_watermark).max().unwrap_or(0)
    }
}
