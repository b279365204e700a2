use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("not a valid RDF term: {0:?}")]
    BadResource(String),
    #[error("rule {0} has an empty body")]
    EmptyBody(usize),
    #[error("rule {0} is unsafe: a head variable does not occur in the body")]
    UnsafeRule(usize),
}

/// Syntax error in a rules, triples or assignment file.
#[derive(Debug, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        ParseError {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("server count must be at least 1")]
    NoServers,
    #[error("fact on line {line} has no server assignment")]
    MissingAssignment { line: usize },
    #[error("line {line} is assigned more than once")]
    DuplicateAssignment { line: usize },
    #[error("line {line}: server id {server} outside 1..={servers}")]
    ServerOutOfRange { line: usize, server: u32, servers: u32 },
    #[error("assignment refers to line {line}, which holds no fact")]
    UnknownLine { line: usize },
    #[error("fact on line {line} is assigned to servers {first} and {second}")]
    ConflictingAssignment { line: usize, first: u32, second: u32 },
    #[error("assignment line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("partitions overlap: a fact is stored on servers {first} and {second}")]
    Overlap { first: u32, second: u32 },
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("run exceeded the step budget of {budget} steps")]
    StepBudgetExceeded { budget: u64 },
    #[error("termination declared while work remained: {0}")]
    UnsafeTermination(String),
    #[error("server thread panicked")]
    WorkerPanicked,
    #[error(transparent)]
    Partition(#[from] PartitionError),
}
