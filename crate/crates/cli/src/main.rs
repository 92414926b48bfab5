use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aidim::training::SearchKind;
use aidim_cli::commands::{
    cmd_certify_bundle, cmd_certify_raw, cmd_decode, cmd_encode, cmd_gen_data, cmd_search, cmd_train, cmd_transfer,
    EncodeReport,
};
use aidim_cli::config::{resolve_output, OUTPUT_ROOT_ENV};
use aidim_cli::{CliError, CliResult, ExperimentConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Subspace training, coefficient compression and generalization
/// certificates for multi-task networks.
#[derive(Parser)]
#[command(name = "aidim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a configuration value, e.g. `--set mode.k=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; defaults to the configuration's `output_dir`.
    /// Relative paths are placed under $AIDIM_OUTPUT_ROOT when it is set.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Worker threads for per-task and grid-point parallelism.
    #[arg(long)]
    jobs: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> CliResult<(ExperimentConfig, PathBuf)> {
        let mut overrides = self.overrides.clone();
        if let Some(j) = self.jobs {
            overrides.push(format!("jobs={j}"));
        }
        let cfg = ExperimentConfig::load(&self.config, &overrides)?;
        let out = match &self.out {
            Some(o) => resolve_output(o),
            None => cfg.resolved_output_dir(),
        };
        Ok((cfg, out))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Id,
    Aid,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured mode; writes checkpoints, history.csv and metrics.json.
    Train(ConfigArgs),
    /// Intrinsic (id) or amortized intrinsic (aid) dimension search.
    Search {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum)]
        kind: Kind,
        /// Comma-separated task counts; writes curve.csv. Defaults to `search.n_sweep`.
        #[arg(long, value_delimiter = ',')]
        n_sweep: Option<Vec<usize>>,
    },
    /// Quantize, fine-tune and encode checkpoints into a bundle (shared) or per-task codes (single).
    Encode {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Decode a bundle into a checkpoint carrying its codebooks.
    Decode {
        bundle: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Compute certificates from raw inputs (JSON) or from a bundle and its data.
    Certify {
        /// JSON with n, m, emp_risk, bits_meta, bits_multitask (object or array).
        #[arg(long, conflicts_with_all = ["bundle", "config"])]
        inputs: Option<PathBuf>,
        #[arg(long, requires = "config")]
        bundle: Option<PathBuf>,
        /// Per-task codes written by `encode` for the single-task comparison.
        #[arg(long, requires = "bundle")]
        single: Option<PathBuf>,
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Confidence parameter overriding the inputs or configuration.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Learn a new task on top of a multi-task bundle and from scratch; certify both.
    Transfer {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Multi-task bundle; omit for k = 0 (plain single-subspace training).
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Index of the new task in the configured dataset.
        #[arg(long, default_value_t = 0)]
        task: usize,
        /// Fresh random directions; defaults to `mode.k_prime` or 0.
        #[arg(long)]
        k_prime: Option<usize>,
    },
    /// Generate the configured task set; writes manifest.json and tasks.csv.
    GenData(ConfigArgs),
}

fn print_json<S: serde::Serialize>(value: &S) {
    match serde_json::to_string_pretty(value) {
        Ok(s) => println!("{s}"),
        Err(e) => log::error!("cannot print report: {e}"),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => {
            let (cfg, out) = a.load()?;
            let m = cmd_train(&cfg, &out)?;
            println!(
                "trained {:?}: train {:.4} val {:.4} test {:.4} -> {}",
                m.mode,
                m.mean_train_acc,
                m.mean_val_acc,
                m.mean_test_acc,
                out.display()
            );
        }
        Command::Search { cfg, kind, n_sweep } => {
            let (c, out) = cfg.load()?;
            let kind = match kind {
                Kind::Id => SearchKind::Id,
                Kind::Aid => SearchKind::Aid,
            };
            let sweep = n_sweep.unwrap_or_else(|| c.search.n_sweep.clone());
            for r in cmd_search(&c, kind, &sweep, &out)? {
                match r.result.best_amortized {
                    Some(a) => println!(
                        "n={} {:?}: {} (baseline {:.4}, target {:.4})",
                        r.n, kind, a, r.baseline.mean, r.result.target
                    ),
                    None => println!(
                        "n={} {:?}: target {:.4} not reached (best {:.4}); reached=false",
                        r.n, kind, r.result.target, r.result.best_attained
                    ),
                }
            }
        }
        Command::Encode { cfg, checkpoints } => {
            let (c, out) = cfg.load()?;
            match cmd_encode(&c, &checkpoints, &out)? {
                EncodeReport::Shared(r) => println!(
                    "l(E) = {} bits, l_E = {} bits, {:.2} bits/task, train error {:.4}, fast-rate certificate {:.4} -> {}",
                    r.bits_meta,
                    r.bits_multitask,
                    r.bits_per_task,
                    r.emp_risk,
                    r.certificate.fast_rate.value,
                    r.bundle.display()
                ),
                EncodeReport::Single(r) => println!(
                    "{} tasks, {:.1} bits/task, train error {:.4}, single-task certificate {:.4}",
                    r.codes.len(),
                    r.certificate.mean_bits,
                    r.certificate.emp_risk,
                    r.certificate.kl.value
                ),
            }
        }
        Command::Decode { bundle, out } => {
            let r = cmd_decode(&bundle, &out)?;
            println!(
                "n={} k={} l={}: l(E) = {} bits, l_E = {} bits, {:.2} bits/task -> {}",
                r.tasks,
                r.k,
                r.l,
                r.bits_meta,
                r.bits_multitask,
                r.bits_per_task,
                r.checkpoint.display()
            );
        }
        Command::Certify {
            inputs,
            bundle,
            single,
            config,
            overrides,
            delta,
            out,
        } => {
            let results = match (inputs, bundle, config) {
                (Some(i), _, _) => {
                    let out = resolve_output(&out.unwrap_or_else(|| PathBuf::from(".")));
                    cmd_certify_raw(&i, delta, &out)?
                }
                (None, Some(b), Some(c)) => {
                    let mut overrides = overrides;
                    if let Some(d) = delta {
                        overrides.push(format!("certificate.delta={d}"));
                    }
                    let cfg = ExperimentConfig::load(&c, &overrides)?;
                    let out = out.map_or_else(|| cfg.resolved_output_dir(), |o| resolve_output(&o));
                    cmd_certify_bundle(&cfg, &b, single.as_deref(), &out)?
                }
                _ => return Err(CliError::Config("certify needs --inputs, or --bundle with --config".into())),
            };
            print_json(&results);
        }
        Command::Transfer {
            cfg,
            bundle,
            task,
            k_prime,
        } => {
            let (c, out) = cfg.load()?;
            let k_prime = k_prime.unwrap_or(match c.mode {
                aidim_cli::config::ModeBlock::Transfer { k_prime } => k_prime,
                _ => 0,
            });
            let r = cmd_transfer(&c, bundle.as_deref(), task, k_prime, &out)?;
            println!(
                "transfer (k={}, k'={}): error {:.4}, {} bits, certificate {:.4}; from scratch: error {:.4}, {} bits, certificate {:.4}",
                r.k, r.k_prime, r.transfer.emp_risk, r.transfer.bits, r.transfer.bound, r.scratch.emp_risk, r.scratch.bits, r.scratch.bound
            );
        }
        Command::GenData(a) => {
            let (cfg, out) = a.load()?;
            let m = cmd_gen_data(&cfg, &out)?;
            println!("{} tasks, input dimension {} -> {}", m.n, m.input_dim, Path::new(&out).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    log::debug!("output root variable: {OUTPUT_ROOT_ENV}");
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
