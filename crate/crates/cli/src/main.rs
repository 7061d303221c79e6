//! `hmh` command-line tool: training, evaluation, benchmarks, basis
//! inspection and dataset generation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hmh_core::bench::{self, SuiteReport};
use hmh_core::config::RunConfig;
use hmh_core::io::{read_json, save_graph_dataset, save_node_dataset, write_json, write_text};
use hmh_core::run;
use hmh_core::HmhError;

const EXIT_FAILURE: u8 = 1;
const EXIT_DIVERGED: u8 = 2;

#[derive(Parser)]
#[command(name = "hmh", version, about = "Hierarchical Haar spectral learning on graphs")]
struct Cli {
    /// Caps worker threads (overrides train.threads).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run config.
    Train { config: PathBuf },
    /// Score a checkpoint on the dataset named by a run config.
    Eval {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write the scores here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a benchmark suite: hub, depth, squash, scaling or locality.
    Bench {
        suite: String,
        /// Suite config JSON; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "bench_out")]
        out: PathBuf,
    },
    /// Haar basis diagnostics.
    Basis {
        #[command(subcommand)]
        action: BasisAction,
    },
    /// Write a synthetic dataset: hubspoke, tree or sbm.
    Gen {
        kind: String,
        #[arg(long)]
        out: PathBuf,
        /// Generator config JSON; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum BasisAction {
    /// Per-level Gram residual, sparsity, column kinds and hop energy.
    Inspect {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        max_hops: usize,
    },
}

enum Failure {
    Invalid(String),
    Diverged(String),
}

impl From<HmhError> for Failure {
    fn from(e: HmhError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn load_config(path: &Path, threads: Option<usize>) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(t) = threads {
        cfg.train.threads = t.max(1);
    }
    Ok(cfg)
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn cmd_train(path: &Path, threads: Option<usize>) -> CmdResult {
    let cfg = load_config(path, threads)?;
    let result = run::train_and_write(&cfg)?;
    print_json(&result.report);
    match &result.report.diverged {
        Some(reason) => Err(Failure::Diverged(format!(
            "{reason}; partial history in {}",
            cfg.outdir.join("history.csv").display()
        ))),
        None => Ok(()),
    }
}

fn cmd_eval(path: &Path, checkpoint: &Path, out: Option<&Path>, threads: Option<usize>) -> CmdResult {
    let cfg = load_config(path, threads)?;
    let scores = run::eval_checkpoint(&cfg, checkpoint)?;
    match out {
        Some(p) => write_json(p, &scores)?,
        None => print_json(&scores),
    }
    Ok(())
}

fn suite_config<T: Default + for<'de> serde::Deserialize<'de>>(path: Option<&Path>) -> Result<T, Failure> {
    Ok(match path {
        Some(p) => read_json(p)?,
        None => T::default(),
    })
}

fn run_suite(suite: &str, config: Option<&Path>, threads: Option<usize>) -> Result<SuiteReport, Failure> {
    let report = match suite {
        "hub" => {
            let mut c: bench::HubSuiteConfig = suite_config(config)?;
            if let Some(t) = threads {
                c.train.threads = t;
            }
            bench::run_hub(&c)?
        }
        "depth" => bench::run_depth(&suite_config(config)?)?,
        "squash" => {
            let mut c: bench::SquashSuiteConfig = suite_config(config)?;
            if let Some(t) = threads {
                c.train.threads = t;
            }
            bench::run_squash(&c)?
        }
        "scaling" => bench::run_scaling(&suite_config(config)?)?,
        "locality" => bench::run_locality(&suite_config(config)?)?,
        other => {
            return Err(Failure::Invalid(format!(
                "unknown suite {other:?} (expected hub, depth, squash, scaling or locality)"
            )))
        }
    };
    Ok(report)
}

fn cmd_bench(suite: &str, config: Option<&Path>, out: &Path, threads: Option<usize>) -> CmdResult {
    let report = run_suite(suite, config, threads)?;
    write_text(&out.join(format!("{suite}.csv")), &report.csv)?;
    write_json(&out.join(format!("{suite}_summary.json")), &report.summary)?;
    print_json(&report.summary);
    eprintln!("{suite}: {}", if report.passed { "PASS" } else { "FAIL" });
    Ok(())
}

fn cmd_inspect(path: &Path, out: Option<&Path>, max_hops: usize) -> CmdResult {
    let cfg = load_config(path, None)?;
    let report = run::inspect_basis(&cfg, max_hops)?;
    let summary = serde_json::json!({ "levels": report.levels });
    match out {
        Some(dir) => {
            write_json(&dir.join("basis.json"), &summary)?;
            write_text(&dir.join("hop_energy.csv"), &report.hop_energy_csv)?;
        }
        None => print_json(&summary),
    }
    Ok(())
}

fn cmd_gen(kind: &str, out: &Path, config: Option<&Path>, seed: Option<u64>) -> CmdResult {
    match kind {
        "hubspoke" => {
            let mut c: bench::HubSpokeConfig = suite_config(config)?;
            c.seed = seed.unwrap_or(c.seed);
            save_node_dataset(&bench::gen_hub_spoke(&c)?.dataset, out)?;
        }
        "sbm" => {
            let mut c: bench::SbmConfig = suite_config(config)?;
            c.seed = seed.unwrap_or(c.seed);
            save_node_dataset(&bench::gen_sbm(&c)?, out)?;
        }
        "tree" => {
            let mut c: bench::TreeMatchConfig = suite_config(config)?;
            c.seed = seed.unwrap_or(c.seed);
            save_graph_dataset(&bench::gen_tree_neighborsmatch(&c)?, out)?;
        }
        other => {
            return Err(Failure::Invalid(format!(
                "unknown generator {other:?} (expected hubspoke, tree or sbm)"
            )))
        }
    }
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FAILURE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let threads = cli.threads;
    let result = match &cli.command {
        Command::Train { config } => cmd_train(config, threads),
        Command::Eval { config, checkpoint, out } => cmd_eval(config, checkpoint, out.as_deref(), threads),
        Command::Bench { suite, config, out } => cmd_bench(suite, config.as_deref(), out, threads),
        Command::Basis {
            action: BasisAction::Inspect { config, out, max_hops },
        } => cmd_inspect(config, out.as_deref(), *max_hops),
        Command::Gen { kind, out, config, seed } => cmd_gen(kind, out, config.as_deref(), *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
        Err(Failure::Diverged(msg)) => {
            eprintln!("diverged: {msg}");
            ExitCode::from(EXIT_DIVERGED)
        }
    }
}
