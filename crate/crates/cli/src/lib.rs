//! Driver behind the `distmat` binary: load inputs, partition, run the
//! simulated cluster, write the materialisation, statistics and
//! verification reports.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::Context;
use serde::Serialize;

use distmat::audit;
use distmat::cluster::{self, Checkpoints, ClusterConfig, Execution, RunOutcome, SchedulerKind};
use distmat::messaging::MessageCounts;
use distmat::model::{Dictionary, Fact, Program};
use distmat::oracle::{seminaive_materialise, OracleResult};
use distmat::parse::{parse_rules, parse_triples, LoadedFact};
use distmat::partition::{partition_by_subject, partition_explicit};

pub const MATERIALISATION_FILE: &str = "materialisation.nt";
pub const STATS_FILE: &str = "stats.json";
pub const VERIFICATION_FILE: &str = "verification.json";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PartitionStrategy {
    SubjectHash,
    /// Assignment file of `line server` pairs.
    Explicit(PathBuf),
}

impl FromStr for PartitionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once('=') {
            None if s == "subject-hash" => Ok(PartitionStrategy::SubjectHash),
            Some(("explicit", path)) if !path.is_empty() => Ok(PartitionStrategy::Explicit(path.into())),
            _ => Err(format!("expected subject-hash or explicit=FILE, got {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SchedulerChoice(pub SchedulerKind);

impl FromStr for SchedulerChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "round-robin" {
            return Ok(SchedulerChoice(SchedulerKind::RoundRobin));
        }
        match s.split_once('=') {
            Some(("random", seed)) => seed
                .parse()
                .map(|seed| SchedulerChoice(SchedulerKind::Random(seed)))
                .map_err(|_| format!("bad seed {seed:?}")),
            _ => Err(format!("expected round-robin or random=SEED, got {s:?}")),
        }
    }
}

impl fmt::Display for SchedulerChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            SchedulerKind::RoundRobin => f.write_str("round-robin"),
            SchedulerKind::Random(seed) => write!(f, "random={seed}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifyMode {
    Off,
    /// Compare against the centralised fixpoint.
    Oracle,
    /// Oracle comparison plus every event-log audit.
    Full,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub servers: usize,
    pub partition: PartitionStrategy,
    pub rules: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    pub scheduler: SchedulerChoice,
    pub execution: Execution,
    pub verify: VerifyMode,
    pub reorder_atoms: bool,
}

#[derive(Debug)]
pub enum CliError {
    /// Malformed rules, data or partition assignment.
    Input(String),
    /// A requested verification failed; carries the first counterexample.
    Verification(String),
    Other(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Input(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
            CliError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunStats {
    pub servers: usize,
    pub scheduler: String,
    pub execution: &'static str,
    pub input_facts: usize,
    pub output_facts: usize,
    pub wall_time_ms: f64,
    /// Derived facts per second of wall time.
    pub throughput: f64,
    pub messages: MessageCounts,
    pub derived_per_server: Vec<u64>,
    pub full_matches: u64,
    pub broadcast_par: u64,
    pub cross_server_par: u64,
    pub channel_high_watermark: usize,
    pub inbox_high_watermark: Vec<usize>,
    pub token_rounds: u64,
    pub steps: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<String>,
}

impl Check {
    fn from_violations(name: &'static str, violations: Vec<String>) -> Check {
        Check {
            name,
            passed: violations.is_empty(),
            counterexample: violations.into_iter().next(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Verification {
    pub mode: VerifyMode,
    pub checks: Vec<Check>,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn first_failure(&self) -> Option<String> {
        self.checks.iter().find(|c| !c.passed).map(|c| match &c.counterexample {
            Some(ex) => format!("{}: {ex}", c.name),
            None => c.name.to_string(),
        })
    }
}

/// Facts absent from a materialisation, and facts it has but should not.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Diff {
    pub missing: Vec<String>,
    pub spurious: Vec<String>,
}

impl Diff {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.spurious.is_empty()
    }
}

pub struct RunReport {
    pub stats: RunStats,
    pub verification: Option<Verification>,
}

struct Inputs {
    dict: Dictionary,
    loaded: Vec<LoadedFact>,
    program: Program,
}

impl Inputs {
    fn facts(&self) -> Vec<Fact> {
        self.loaded.iter().map(|l| l.fact).collect()
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::Other)
}

fn load(data: &Path, rules: &Path) -> Result<Inputs, CliError> {
    let mut dict = Dictionary::new();
    let loaded =
        parse_triples(&read(data)?, &mut dict).map_err(|e| CliError::Input(format!("{}: {e}", data.display())))?;
    let program =
        parse_rules(&read(rules)?, &mut dict).map_err(|e| CliError::Input(format!("{}: {e}", rules.display())))?;
    Ok(Inputs { dict, loaded, program })
}

fn render_sorted(facts: impl IntoIterator<Item = Fact>, dict: &Dictionary) -> Vec<String> {
    let mut lines: Vec<String> = facts.into_iter().map(|f| f.to_ntriples(dict)).collect();
    lines.sort();
    lines.dedup();
    lines
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).context("serialising report")?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn stats(config: &RunConfig, input_facts: usize, outcome: &RunOutcome) -> RunStats {
    let derived_per_server: Vec<u64> = outcome.servers.iter().map(|s| s.stats().derived).collect();
    let seconds = outcome.wall_time.as_secs_f64();
    let derived: u64 = derived_per_server.iter().sum();
    RunStats {
        servers: config.servers,
        scheduler: config.scheduler.to_string(),
        execution: match config.execution {
            Execution::EventLoop => "event-loop",
            Execution::Threads => "threads",
        },
        input_facts,
        output_facts: outcome.facts().len(),
        wall_time_ms: seconds * 1e3,
        throughput: if seconds > 0.0 { derived as f64 / seconds } else { 0.0 },
        messages: outcome.transport.messages,
        derived_per_server,
        full_matches: outcome.full_matches(),
        broadcast_par: outcome.transport.broadcast_par,
        cross_server_par: outcome.transport.cross_server_par,
        channel_high_watermark: outcome.transport.high_watermark,
        inbox_high_watermark: outcome.servers.iter().map(|s| s.stats().max_inbox).collect(),
        token_rounds: outcome.transport.token_rounds,
        steps: outcome.steps,
    }
}

fn verify_run(
    mode: VerifyMode,
    outcome: &RunOutcome,
    parts: &[Vec<Fact>],
    oracle: &OracleResult,
    dict: &Dictionary,
) -> Verification {
    let got = outcome.fact_set();
    let diff = diff_sets(&got, &oracle.facts, dict);
    let mut checks = vec![Check {
        name: "oracle-equivalence",
        passed: diff.is_empty(),
        counterexample: diff
            .missing
            .first()
            .map(|f| format!("missing {f}"))
            .or_else(|| diff.spurious.first().map(|f| format!("spurious {f}"))),
    }];
    checks.push(Check::from_violations(
        "stored-once",
        audit::completeness(&outcome.servers, &oracle.facts),
    ));
    if mode == VerifyMode::Full {
        let log = outcome.log.as_ref().expect("full verification records events");
        let matches = outcome.full_matches();
        checks.push(Check {
            name: "derivation-count",
            passed: matches == oracle.instantiations,
            counterexample: (matches != oracle.instantiations)
                .then(|| format!("{matches} full matches, {} rule instantiations", oracle.instantiations)),
        });
        checks.push(Check::from_violations("nonrepetition", audit::nonrepetition(log)));
        checks.push(Check::from_violations(
            "stamp-causality",
            audit::stamp_causality(log, &audit::final_stamps(&outcome.servers)),
        ));
        let mut coverage = outcome.occurrence_violations.clone();
        coverage.extend(audit::occurrence_coverage(&outcome.servers));
        checks.push(Check::from_violations("occurrence-coverage", coverage));
        checks.push(Check::from_violations(
            "arrival-routes",
            audit::arrival_routes_intersect(log, parts),
        ));
        checks.push(Check::from_violations(
            "soundness",
            audit::soundness(Some(log), &outcome.servers, &oracle.facts),
        ));
    }
    Verification { mode, checks }
}

fn diff_sets(got: &HashSet<Fact>, expected: &HashSet<Fact>, dict: &Dictionary) -> Diff {
    Diff {
        missing: render_sorted(expected.difference(got).copied(), dict),
        spurious: render_sorted(got.difference(expected).copied(), dict),
    }
}

/// Runs the cluster and writes the output files into `config.out`.
///
/// Returns an error after writing every file if a requested verification
/// failed.
pub fn run(config: &RunConfig) -> Result<RunReport, CliError> {
    if config.servers == 0 {
        return Err(CliError::Input("--servers must be at least 1".into()));
    }
    let inputs = load(&config.data, &config.rules)?;
    let input = inputs.facts();
    let parts = match &config.partition {
        PartitionStrategy::SubjectHash => partition_by_subject(&input, config.servers),
        PartitionStrategy::Explicit(path) => partition_explicit(&inputs.loaded, &read(path)?, config.servers),
    }
    .map_err(|e| CliError::Input(e.to_string()))?;
    let input_facts = parts.iter().map(Vec::len).sum();

    let oracle = (config.verify != VerifyMode::Off).then(|| seminaive_materialise(&input, &inputs.program));
    let full = config.verify == VerifyMode::Full;
    let cluster_config = ClusterConfig {
        scheduler: config.scheduler.0,
        execution: config.execution,
        reorder_atoms: config.reorder_atoms,
        record_events: full,
        checkpoints: if full {
            Checkpoints::Quiescent
        } else {
            Checkpoints::Never
        },
        step_budget: oracle
            .as_ref()
            .map(|o| 100 * (o.facts.len() as u64 + o.instantiations).max(1)),
    };
    let outcome = cluster::run(&parts, &inputs.program, &cluster_config).context("running the cluster")?;

    fs::create_dir_all(&config.out).with_context(|| format!("creating {}", config.out.display()))?;
    let mut text = render_sorted(outcome.facts(), &inputs.dict).join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    let nt = config.out.join(MATERIALISATION_FILE);
    fs::write(&nt, text).with_context(|| format!("writing {}", nt.display()))?;
    let stats = stats(config, input_facts, &outcome);
    write_json(&config.out.join(STATS_FILE), &stats)?;

    let verification = oracle.map(|o| verify_run(config.verify, &outcome, &parts, &o, &inputs.dict));
    if let Some(v) = &verification {
        write_json(&config.out.join(VERIFICATION_FILE), v)?;
        if let Some(first) = v.first_failure() {
            return Err(CliError::Verification(first));
        }
    }
    Ok(RunReport { stats, verification })
}

/// Recomputes the fixpoint of `data` under `rules` and diffs it against the
/// N-Triples file `materialisation`.
pub fn verify_only(materialisation: &Path, data: &Path, rules: &Path) -> Result<Diff, CliError> {
    let mut inputs = load(data, rules)?;
    let claimed = parse_triples(&read(materialisation)?, &mut inputs.dict)
        .map_err(|e| CliError::Input(format!("{}: {e}", materialisation.display())))?;
    let claimed: HashSet<Fact> = claimed.into_iter().map(|l| l.fact).collect();
    let oracle = seminaive_materialise(&inputs.facts(), &inputs.program);
    Ok(diff_sets(&claimed, &oracle.facts, &inputs.dict))
}
