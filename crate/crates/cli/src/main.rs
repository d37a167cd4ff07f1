//! `dwbc-guard`: poisons, verifies, reweights, and trains on offline
//! trajectory datasets, with each pipeline stage scriptable on its own.
//!
//! Exit codes: 0 success, 2 config error, 3 integrity abort, 4 runtime
//! error. `DWBC_GUARD_THREADS` caps worker parallelism (0 = auto).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dwbc_core::dataset::{read_jsonl, write_jsonl};
use dwbc_core::discriminator::train_discriminator;
use dwbc_core::integrity::{compute_manifest, read_manifest, verify_manifest, write_manifest};
use dwbc_core::pointmass::{evaluate_policy, expert_action};
use dwbc_core::policy::{as_actor, train_policy, write_sidecar};
use dwbc_core::weighting::{compute_weight_table, WeightTable};

use dwbc_guard::config::PipelineConfig;
use dwbc_guard::pipeline::{
    load_discriminator, load_policy, load_run, make_clean_dataset, make_poisoned, make_split,
    run_pipeline, ArtifactPaths, PipelineError,
};
use dwbc_guard::report::{emit_report, ReportRun};

#[derive(Parser)]
#[command(name = "dwbc-guard", version, about = "Poisoning-robust behavioral cloning pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonArgs {
    /// Pipeline config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the clean expert dataset.
    GenData(CommonArgs),
    /// Split the clean dataset into reference and main pools.
    SplitRef(CommonArgs),
    /// Create or verify the reference-set hash manifest.
    Manifest {
        #[command(subcommand)]
        action: ManifestCmd,
    },
    /// Apply the configured attack to the main pool.
    Poison(CommonArgs),
    /// Train the transition discriminator.
    TrainDisc(CommonArgs),
    /// Compute and freeze the per-trajectory weight table.
    Weights(CommonArgs),
    /// Train the cloned policy (weighted, or the naive baseline).
    TrainPolicy {
        #[command(flatten)]
        common: CommonArgs,
        /// Ignore the weight table and clone with unit weights.
        #[arg(long)]
        baseline: bool,
    },
    /// Evaluate the expert and any trained policies.
    Evaluate(CommonArgs),
    /// Run the full pipeline end to end.
    Run(CommonArgs),
    /// Merge completed run directories into one report.
    Report {
        /// Directory for report.csv / report.svg.
        #[arg(long)]
        out: PathBuf,
        /// Completed run directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ManifestCmd {
    Create(CommonArgs),
    Verify(CommonArgs),
}

enum CliError {
    Config(String),
    Abort(String),
    Runtime(String),
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Abort(report) => CliError::Abort(report.describe()),
            PipelineError::Config(msg) => CliError::Config(msg),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<(PipelineConfig, PathBuf), CliError> {
    let mut cfg =
        PipelineConfig::load(&common.config).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    Ok((cfg, out))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(e.to_string()))
}

fn runtime<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Runtime(e.to_string()))
}

fn run_cmd(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::GenData(common) => {
            let (cfg, out) = load_config(&common)?;
            ensure_dir(&out)?;
            let paths = ArtifactPaths::new(&out);
            let clean = make_clean_dataset(&cfg)?;
            runtime(write_jsonl(&clean, &paths.clean))?;
            println!("wrote {} trajectories to {}", clean.len(), paths.clean.display());
        }
        Cmd::SplitRef(common) => {
            let (cfg, out) = load_config(&common)?;
            let paths = ArtifactPaths::new(&out);
            let clean = runtime(read_jsonl(&paths.clean))?;
            let (d_ref, rest) = make_split(&cfg, &clean)?;
            runtime(write_jsonl(&d_ref, &paths.d_ref))?;
            runtime(write_jsonl(&rest, &paths.d_rest))?;
            println!(
                "reference set: {} trajectories, rest: {} trajectories",
                d_ref.len(),
                rest.len()
            );
        }
        Cmd::Manifest { action } => match action {
            ManifestCmd::Create(common) => {
                let (_cfg, out) = load_config(&common)?;
                let paths = ArtifactPaths::new(&out);
                let d_ref = runtime(read_jsonl(&paths.d_ref))?;
                let manifest = runtime(compute_manifest(&d_ref))?;
                runtime(write_manifest(&manifest, &paths.manifest))?;
                println!("manifest over {} trajectories -> {}", manifest.per_traj.len(), paths.manifest.display());
            }
            ManifestCmd::Verify(common) => {
                let (_cfg, out) = load_config(&common)?;
                let paths = ArtifactPaths::new(&out);
                let d_ref = runtime(read_jsonl(&paths.d_ref))?;
                let manifest = runtime(read_manifest(&paths.manifest))?;
                let report = runtime(verify_manifest(&d_ref, &manifest))?;
                println!("{}", report.describe());
                if !report.passed {
                    return Err(CliError::Abort(report.describe()));
                }
            }
        },
        Cmd::Poison(common) => {
            let (cfg, out) = load_config(&common)?;
            let paths = ArtifactPaths::new(&out);
            let rest = runtime(read_jsonl(&paths.d_rest))?;
            let (poisoned, labels) = make_poisoned(&cfg, &rest)?;
            runtime(write_jsonl(&poisoned, &paths.d_main))?;
            match labels {
                Some(labels) => {
                    runtime(labels.write(&paths.labels))?;
                    println!(
                        "{} of {} trajectories poisoned ({})",
                        labels.count_poisoned(),
                        poisoned.len(),
                        cfg.attack.kind
                    );
                }
                None => println!("attack none: main pool copied through"),
            }
        }
        Cmd::TrainDisc(common) => {
            let (cfg, out) = load_config(&common)?;
            let paths = ArtifactPaths::new(&out);
            let d_ref = runtime(read_jsonl(&paths.d_ref))?;
            let d_main = runtime(read_jsonl(&paths.d_main))?;
            let (model, log) = runtime(train_discriminator(&d_ref, &d_main, &cfg.disc_config()))?;
            runtime(model.mlp.save(&paths.disc))?;
            println!(
                "discriminator trained ({} epochs, final loss {:.4}) -> {}",
                cfg.discriminator.epochs,
                log.final_loss().unwrap_or(f64::NAN),
                paths.disc.display()
            );
        }
        Cmd::Weights(common) => {
            let (cfg, out) = load_config(&common)?;
            let paths = ArtifactPaths::new(&out);
            let model = load_discriminator(&paths.disc)?;
            let d_main = runtime(read_jsonl(&paths.d_main))?;
            let table = runtime(compute_weight_table(&model, &d_main, &cfg.weight_config()))?;
            runtime(table.write(&paths.weights))?;
            println!("froze {} weights -> {}", table.rows().len(), paths.weights.display());
        }
        Cmd::TrainPolicy { common, baseline } => {
            let (cfg, out) = load_config(&common)?;
            let paths = ArtifactPaths::new(&out);
            let d_main = runtime(read_jsonl(&paths.d_main))?;
            let pcfg = cfg.policy_config(baseline);
            let (model, table_digest) = if baseline {
                (runtime(train_policy(&d_main, None, &pcfg))?.0, "-".repeat(64))
            } else {
                let table = runtime(WeightTable::read(&paths.weights))?;
                let digest = runtime(std::fs::read(&paths.weights).map(|b| {
                    use sha2::{Digest, Sha256};
                    hex::encode(Sha256::digest(b))
                }))?;
                (runtime(train_policy(&d_main, Some(&table), &pcfg))?.0, digest)
            };
            let (mlp_path, meta_path) = if baseline {
                (&paths.policy_baseline, &paths.policy_baseline_meta)
            } else {
                (&paths.policy_dwbc, &paths.policy_dwbc_meta)
            };
            runtime(model.mlp.save(mlp_path))?;
            runtime(write_sidecar(meta_path, &pcfg, &table_digest))?;
            println!("policy trained -> {}", mlp_path.display());
        }
        Cmd::Evaluate(common) => {
            let (cfg, out) = load_config(&common)?;
            let paths = ArtifactPaths::new(&out);
            let env = cfg.env_params();
            let gains = cfg.expert_gains();
            let episodes = cfg.evaluation.episodes;
            let seed = cfg.eval_seed();
            let expert = |s: &dwbc_core::pointmass::EnvState| expert_action(s, &gains, &env);
            let rep = runtime(evaluate_policy(&expert, episodes, &env, seed))?;
            println!("expert: mean {:.4} std {:.4}", rep.mean_return, rep.std_return);
            for (name, path) in
                [("baseline", &paths.policy_baseline), ("dwbc", &paths.policy_dwbc)]
            {
                if path.exists() {
                    let model = load_policy(path, &cfg)?;
                    let rep = runtime(evaluate_policy(&as_actor(&model), episodes, &env, seed))?;
                    println!("{name}: mean {:.4} std {:.4}", rep.mean_return, rep.std_return);
                }
            }
        }
        Cmd::Run(common) => {
            let (cfg, out) = load_config(&common)?;
            let artifacts = run_pipeline(&cfg, &out)?;
            println!(
                "run complete ({} @ {}):",
                artifacts.attack_kind, artifacts.fraction
            );
            for (method, rep) in &artifacts.evals {
                println!("  {method}: mean {:.4} std {:.4}", rep.mean_return, rep.std_return);
            }
            println!("report: {}", artifacts.paths.report_csv.display());
        }
        Cmd::Report { out, runs } => {
            let mut rows = Vec::new();
            for dir in &runs {
                let artifacts = load_run(dir)?;
                rows.push(ReportRun::from_artifacts(&artifacts));
            }
            let paths = runtime(emit_report(&rows, &out))?;
            println!("report over {} runs -> {}", rows.len(), paths.csv.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_cmd(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Abort(msg)) => {
            eprintln!("integrity abort: {msg}");
            ExitCode::from(3)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(4)
        }
    }
}
