//! Pipeline orchestration: data preparation, the integrity gate, the three
//! training stages, evaluation, and the per-run artifact set.
//!
//! `run` reuses `d_ref.traj.jsonl` / `d_main.traj.jsonl` when both already
//! exist in the output directory (so an on-disk reference set is actually
//! what gets verified); otherwise it generates, splits, and poisons from the
//! config. The integrity gate runs before anything else is loaded or
//! trained, and an abort leaves no training artifacts behind.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use dwbc_core::attacks::PoisonLabels;
use dwbc_core::dataset::{read_jsonl, write_jsonl, TrajectoryDataset};
use dwbc_core::discriminator::{train_discriminator, DiscriminatorModel};
use dwbc_core::integrity::{integrity_gate, GateDecision, VerificationReport};
use dwbc_core::nn::Mlp;
use dwbc_core::pointmass::{evaluate_policy, expert_action, generate_dataset, EvalReport};
use dwbc_core::policy::{as_actor, train_policy, write_sidecar, PolicyModel};
use dwbc_core::weighting::compute_weight_table;
use dwbc_core::{split_reference, apply_attack};

use crate::config::PipelineConfig;
use crate::report::{emit_report, ReportRun};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("integrity gate aborted: {}", .0.describe())]
    Abort(VerificationReport),
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: anyhow::Error,
    },
}

fn stage<T, E: Into<anyhow::Error>>(
    name: &'static str,
    r: Result<T, E>,
) -> Result<T, PipelineError> {
    r.map_err(|e| PipelineError::Stage { stage: name, source: e.into() })
}

/// Conventional artifact names inside a run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactPaths {
    pub out_dir: PathBuf,
    pub clean: PathBuf,
    pub d_ref: PathBuf,
    pub d_rest: PathBuf,
    pub d_main: PathBuf,
    pub labels: PathBuf,
    pub manifest: PathBuf,
    pub disc: PathBuf,
    pub weights: PathBuf,
    pub policy_dwbc: PathBuf,
    pub policy_dwbc_meta: PathBuf,
    pub policy_baseline: PathBuf,
    pub policy_baseline_meta: PathBuf,
    pub eval_csv: PathBuf,
    pub run_meta: PathBuf,
    pub report_csv: PathBuf,
    pub report_svg: PathBuf,
}

impl ArtifactPaths {
    pub fn new(out_dir: &Path) -> Self {
        let p = |name: &str| out_dir.join(name);
        Self {
            out_dir: out_dir.to_path_buf(),
            clean: p("clean.traj.jsonl"),
            d_ref: p("d_ref.traj.jsonl"),
            d_rest: p("d_rest.traj.jsonl"),
            d_main: p("d_main.traj.jsonl"),
            labels: p("d_main.labels"),
            manifest: p("d_ref.manifest"),
            disc: p("disc.mlp"),
            weights: p("table.weights"),
            policy_dwbc: p("policy_dwbc.mlp"),
            policy_dwbc_meta: p("policy_dwbc.meta"),
            policy_baseline: p("policy_baseline.mlp"),
            policy_baseline_meta: p("policy_baseline.meta"),
            eval_csv: p("eval.csv"),
            run_meta: p("run.meta"),
            report_csv: p("report.csv"),
            report_svg: p("report.svg"),
        }
    }
}

/// Everything a completed run produced, plus its summary metrics.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub paths: ArtifactPaths,
    pub attack_kind: String,
    pub fraction: f64,
    pub gate: GateDecision,
    /// Keyed by method name: `expert`, `baseline`, `dwbc`.
    pub evals: BTreeMap<String, EvalReport>,
}

/// Generates the clean dataset named by the config.
pub fn make_clean_dataset(cfg: &PipelineConfig) -> Result<TrajectoryDataset, PipelineError> {
    stage(
        "generate",
        generate_dataset(cfg.data.n_traj, &cfg.expert_gains(), &cfg.env_params(), cfg.seed),
    )
}

/// Splits the clean dataset into the reference set and the main pool.
pub fn make_split(
    cfg: &PipelineConfig,
    clean: &TrajectoryDataset,
) -> Result<(TrajectoryDataset, TrajectoryDataset), PipelineError> {
    stage("split", split_reference(clean, cfg.data.n_ref, cfg.split_seed()))
}

/// Applies the configured attack to the main pool. `None` attack passes the
/// data through untouched with no labels.
pub fn make_poisoned(
    cfg: &PipelineConfig,
    rest: &TrajectoryDataset,
) -> Result<(TrajectoryDataset, Option<PoisonLabels>), PipelineError> {
    let spec = cfg.attack_spec().map_err(|e| PipelineError::Config(e.to_string()))?;
    match spec {
        None => Ok((rest.clone(), None)),
        Some(spec) => {
            let (poisoned, labels) =
                stage("poison", apply_attack(rest, &spec, &cfg.env_params()))?;
            Ok((poisoned, Some(labels)))
        }
    }
}

fn file_digest(path: &Path) -> Result<String, std::io::Error> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn eval_csv_text(evals: &BTreeMap<String, EvalReport>) -> String {
    let mut s = String::from("method,episode,return\n");
    for method in ["expert", "baseline", "dwbc"] {
        if let Some(rep) = evals.get(method) {
            for (i, ret) in rep.per_episode.iter().enumerate() {
                let _ = writeln!(s, "{method},{i},{ret:.6}");
            }
        }
    }
    s
}

fn run_meta_text(attack_kind: &str, fraction: f64, evals: &BTreeMap<String, EvalReport>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "attack_kind {attack_kind}");
    let _ = writeln!(s, "fraction {fraction:.16e}");
    for (method, rep) in evals {
        let _ = writeln!(s, "method {method} mean {:.16e} std {:.16e}", rep.mean_return, rep.std_return);
    }
    s
}

/// Parses `run.meta` back into report inputs.
pub fn parse_run_meta(text: &str) -> Result<(String, f64, BTreeMap<String, EvalReport>), PipelineError> {
    let bad = |msg: &str| PipelineError::Config(format!("run.meta: {msg}"));
    let mut attack_kind = None;
    let mut fraction = None;
    let mut evals = BTreeMap::new();
    for line in text.lines() {
        let mut parts = line.split(' ');
        match parts.next() {
            Some("attack_kind") => {
                attack_kind = Some(parts.next().ok_or_else(|| bad("missing kind"))?.to_string())
            }
            Some("fraction") => {
                let v = parts.next().ok_or_else(|| bad("missing fraction"))?;
                fraction = Some(v.parse::<f64>().map_err(|_| bad("bad fraction"))?);
            }
            Some("method") => {
                let name = parts.next().ok_or_else(|| bad("missing method name"))?;
                let rest: Vec<&str> = parts.collect();
                if rest.len() != 4 || rest[0] != "mean" || rest[2] != "std" {
                    return Err(bad("expected `method <name> mean <v> std <v>`"));
                }
                let mean = rest[1].parse::<f64>().map_err(|_| bad("bad mean"))?;
                let std = rest[3].parse::<f64>().map_err(|_| bad("bad std"))?;
                evals.insert(
                    name.to_string(),
                    EvalReport { mean_return: mean, std_return: std, per_episode: vec![] },
                );
            }
            _ => return Err(bad("unknown line")),
        }
    }
    Ok((
        attack_kind.ok_or_else(|| bad("missing attack_kind"))?,
        fraction.ok_or_else(|| bad("missing fraction"))?,
        evals,
    ))
}

/// Executes the full pipeline into `out_dir` and writes the single-run
/// report. See the module docs for the dataset reuse rule.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<RunArtifacts, PipelineError> {
    stage("setup", std::fs::create_dir_all(out_dir))?;
    let paths = ArtifactPaths::new(out_dir);
    let mode = cfg.integrity_mode().map_err(|e| PipelineError::Config(e.to_string()))?;

    // data preparation: reuse what is on disk, or build it fresh
    let reuse = paths.d_ref.exists() && paths.d_main.exists();
    let (d_ref, mut d_main) = if reuse {
        (stage("load-reference", read_jsonl(&paths.d_ref))?, None)
    } else {
        let clean = make_clean_dataset(cfg)?;
        let (d_ref, rest) = make_split(cfg, &clean)?;
        let (poisoned, labels) = make_poisoned(cfg, &rest)?;
        stage("write-datasets", write_jsonl(&d_ref, &paths.d_ref))?;
        stage("write-datasets", write_jsonl(&poisoned, &paths.d_main))?;
        if let Some(labels) = &labels {
            stage("write-datasets", labels.write(&paths.labels))?;
        }
        (d_ref, Some(poisoned))
    };

    // integrity gate, before the main pool is even loaded
    match stage("integrity-gate", integrity_gate(&d_ref, &paths.manifest, mode))? {
        GateDecision::Proceed => {}
        GateDecision::Abort(report) => return Err(PipelineError::Abort(report)),
    }

    let d_main = match d_main.take() {
        Some(ds) => ds,
        None => stage("load-main", read_jsonl(&paths.d_main))?,
    };

    // train the discriminator
    let (disc, _disc_log) =
        stage("train-discriminator", train_discriminator(&d_ref, &d_main, &cfg.disc_config()))?;
    stage("train-discriminator", disc.mlp.save(&paths.disc))?;

    // compute and freeze the weight table
    let table =
        stage("compute-weights", compute_weight_table(&disc, &d_main, &cfg.weight_config()))?;
    stage("compute-weights", table.write(&paths.weights))?;
    let table_digest_before = stage("compute-weights", file_digest(&paths.weights))?;

    // train both policies on the same data; only the weights differ
    let dwbc_cfg = cfg.policy_config(false);
    let (policy_dwbc, _) =
        stage("train-policy", train_policy(&d_main, Some(&table), &dwbc_cfg))?;
    stage("train-policy", policy_dwbc.mlp.save(&paths.policy_dwbc))?;
    stage(
        "train-policy",
        write_sidecar(&paths.policy_dwbc_meta, &dwbc_cfg, &table_digest_before),
    )?;

    let base_cfg = cfg.policy_config(true);
    let (policy_base, _) = stage("train-policy", train_policy(&d_main, None, &base_cfg))?;
    stage("train-policy", policy_base.mlp.save(&paths.policy_baseline))?;
    stage(
        "train-policy",
        write_sidecar(&paths.policy_baseline_meta, &base_cfg, &table_digest_before),
    )?;

    // frozen-table invariant: training must not have touched the file
    let table_digest_after = stage("train-policy", file_digest(&paths.weights))?;
    if table_digest_before != table_digest_after {
        return Err(PipelineError::Stage {
            stage: "train-policy",
            source: anyhow::anyhow!("weight table changed during policy training"),
        });
    }

    // shared-seed evaluation of expert, baseline, and weighted policies
    let env = cfg.env_params();
    let gains = cfg.expert_gains();
    let episodes = cfg.evaluation.episodes;
    let eval_seed = cfg.eval_seed();
    let mut evals = BTreeMap::new();
    let expert = |s: &dwbc_core::pointmass::EnvState| expert_action(s, &gains, &env);
    evals.insert(
        "expert".to_string(),
        stage("evaluate", evaluate_policy(&expert, episodes, &env, eval_seed))?,
    );
    evals.insert(
        "baseline".to_string(),
        stage("evaluate", evaluate_policy(&as_actor(&policy_base), episodes, &env, eval_seed))?,
    );
    evals.insert(
        "dwbc".to_string(),
        stage("evaluate", evaluate_policy(&as_actor(&policy_dwbc), episodes, &env, eval_seed))?,
    );
    stage("evaluate", std::fs::write(&paths.eval_csv, eval_csv_text(&evals)))?;

    let attack_kind = cfg.attack.kind.clone();
    let fraction = if attack_kind == "none" { 0.0 } else { cfg.attack.fraction };
    stage(
        "summarize",
        std::fs::write(&paths.run_meta, run_meta_text(&attack_kind, fraction, &evals)),
    )?;

    let artifacts = RunArtifacts { paths: paths.clone(), attack_kind, fraction, gate: GateDecision::Proceed, evals };
    let report_run = ReportRun::from_artifacts(&artifacts);
    stage("report", emit_report(&[report_run], out_dir).map(|_| ()))?;
    Ok(artifacts)
}

/// Reconstructs report inputs from a completed run directory.
pub fn load_run(dir: &Path) -> Result<RunArtifacts, PipelineError> {
    let paths = ArtifactPaths::new(dir);
    let text = stage("report", std::fs::read_to_string(&paths.run_meta))?;
    let (attack_kind, fraction, evals) = parse_run_meta(&text)?;
    Ok(RunArtifacts { paths, attack_kind, fraction, gate: GateDecision::Proceed, evals })
}

/// Loads a policy checkpoint with the action bound taken from the config.
pub fn load_policy(path: &Path, cfg: &PipelineConfig) -> Result<PolicyModel, PipelineError> {
    let mlp = stage("load-policy", Mlp::load(path))?;
    Ok(PolicyModel { mlp, action_bound: cfg.env.action_bound })
}

/// Loads a discriminator checkpoint.
pub fn load_discriminator(path: &Path) -> Result<DiscriminatorModel, PipelineError> {
    let mlp = stage("load-discriminator", Mlp::load(path))?;
    Ok(DiscriminatorModel { mlp })
}
