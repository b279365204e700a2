//! Distributed datalog materialisation over partitioned RDF data.
//!
//! Each server holds a partition of the input triples, matches rules locally,
//! and forwards partial matches (`PAR`) and derived facts (`FCT`) to the
//! servers that may extend or store them. Lamport timestamps order matches so
//! that every rule instantiation fires exactly once across the cluster, and a
//! token ring detects global quiescence.
//!
//! The simulator in [`cluster`] runs a whole cluster either as a deterministic
//! event loop or with one thread per server.

pub mod audit;
pub mod cluster;
pub mod error;
pub mod events;
pub mod matcher;
pub mod messaging;
pub mod model;
pub mod occurrences;
pub mod oracle;
pub mod parse;
pub mod partition;
pub mod server;
pub mod store;
pub mod termination;
