use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use distmat::cluster::Execution;
use distmat_cli::{CliError, PartitionStrategy, RunConfig, SchedulerChoice, VerifyMode};

/// Materialise datalog rules over RDF triples on a simulated cluster.
#[derive(Parser)]
#[command(name = "distmat", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: Option<RunArgs>,
}

#[derive(Subcommand)]
enum Command {
    /// Diff a materialisation against the recomputed fixpoint.
    Verify {
        #[arg(long)]
        materialisation: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        rules: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 1)]
    servers: usize,
    /// subject-hash or explicit=FILE
    #[arg(long, default_value = "subject-hash")]
    partition: PartitionStrategy,
    #[arg(long)]
    rules: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// round-robin or random=SEED
    #[arg(long, default_value = "round-robin")]
    scheduler: SchedulerChoice,
    #[arg(long, value_enum, default_value_t = Exec::EventLoop)]
    exec: Exec,
    #[arg(long, value_enum, default_value_t = Verify::Off)]
    verify: Verify,
    /// Greedily reorder remainder atoms by bound positions.
    #[arg(long)]
    reorder_atoms: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Exec {
    EventLoop,
    Threads,
}

#[derive(Clone, Copy, ValueEnum)]
enum Verify {
    Off,
    Oracle,
    Full,
}

impl From<RunArgs> for RunConfig {
    fn from(a: RunArgs) -> Self {
        RunConfig {
            servers: a.servers,
            partition: a.partition,
            rules: a.rules,
            data: a.data,
            out: a.out,
            scheduler: a.scheduler,
            execution: match a.exec {
                Exec::EventLoop => Execution::EventLoop,
                Exec::Threads => Execution::Threads,
            },
            verify: match a.verify {
                Verify::Off => VerifyMode::Off,
                Verify::Oracle => VerifyMode::Oracle,
                Verify::Full => VerifyMode::Full,
            },
            reorder_atoms: a.reorder_atoms,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match (cli.command, cli.run) {
        (
            Some(Command::Verify {
                materialisation,
                data,
                rules,
            }),
            _,
        ) => distmat_cli::verify_only(&materialisation, &data, &rules).and_then(|diff| {
            println!("{}", serde_json::to_string_pretty(&diff).expect("diff serialises"));
            if diff.is_empty() {
                Ok(())
            } else {
                let first = diff
                    .missing
                    .first()
                    .map(|f| format!("missing {f}"))
                    .or_else(|| diff.spurious.first().map(|f| format!("spurious {f}")))
                    .unwrap_or_default();
                Err(CliError::Verification(first))
            }
        }),
        (None, Some(args)) => distmat_cli::run(&args.into()).map(|report| {
            let s = &report.stats;
            eprintln!(
                "{} facts ({} input) on {} servers in {:.1} ms; {} PAR, {} FCT, {} token messages",
                s.output_facts,
                s.input_facts,
                s.servers,
                s.wall_time_ms,
                s.messages.par,
                s.messages.fct,
                s.messages.token
            );
        }),
        (None, None) => unreachable!("clap requires the run flags without a subcommand"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("distmat: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
