//! Converts discriminator scores into frozen per-trajectory weights:
//! `d_i = sigmoid(mean logit)`, `r_i = (d_i + eps) / (1 - d_i + eps)`,
//! `w_i = min(r_i, C)`. The assembled table is frozen before policy
//! training; the `.weights` file pins the config and the discriminator
//! checkpoint digest so every row can be recomputed independently.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{Trajectory, TrajectoryDataset};
use crate::discriminator::{transition_logit, DiscError, DiscriminatorModel};
use crate::nn::sigmoid;

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("cannot weight an empty dataset")]
    EmptyDataset,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("bad weight config: {0}")]
    BadConfig(String),
    #[error("weight table parse error at line {line}: {msg}")]
    TableParse { line: usize, msg: String },
    #[error(transparent)]
    Disc(#[from] DiscError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightConfig {
    /// Smoothing constant in the density ratio.
    pub epsilon: f64,
    /// Weight cap.
    pub clip: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self { epsilon: 0.01, clip: 10.0 }
    }
}

impl WeightConfig {
    pub fn validate(&self) -> Result<(), WeightError> {
        if !(self.epsilon >= 0.0) {
            return Err(WeightError::BadConfig(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.clip > 0.0) {
            return Err(WeightError::BadConfig(format!("clip must be > 0, got {}", self.clip)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightRow {
    pub score: f64,
    pub ratio: f64,
    pub weight: f64,
}

/// Frozen per-trajectory weights with the config snapshot and the digest of
/// the discriminator checkpoint that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    rows: BTreeMap<u64, WeightRow>,
    frozen: bool,
    config: WeightConfig,
    disc_digest: String,
}

impl WeightTable {
    /// Assembles an unfrozen table; callers freeze it before use.
    pub fn assemble(
        rows: BTreeMap<u64, WeightRow>,
        config: WeightConfig,
        disc_digest: String,
    ) -> Self {
        Self { rows, frozen: false, config, disc_digest }
    }

    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn rows(&self) -> &BTreeMap<u64, WeightRow> {
        &self.rows
    }

    pub fn config(&self) -> WeightConfig {
        self.config
    }

    pub fn disc_digest(&self) -> &str {
        &self.disc_digest
    }

    pub fn weight_of(&self, id: u64) -> Option<f64> {
        self.rows.get(&id).map(|r| r.weight)
    }

    /// `.weights` text form: config line, then one row per trajectory in
    /// ascending id order, reals with 17 significant digits.
    pub fn to_string_lines(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "epsilon {:.16e} clip {:.16e} disc {}",
            self.config.epsilon, self.config.clip, self.disc_digest
        );
        for (id, row) in &self.rows {
            let _ = writeln!(s, "traj {} {:.16e} {:.16e} {:.16e}", id, row.score, row.ratio, row.weight);
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), WeightError> {
        std::fs::write(path, self.to_string_lines())?;
        Ok(())
    }

    /// Parses a `.weights` file. The file is the frozen artifact, so the
    /// result is frozen.
    pub fn read(path: &Path) -> Result<Self, WeightError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, WeightError> {
        let err = |line: usize, msg: &str| WeightError::TableParse { line, msg: msg.into() };
        let mut lines = text.lines().enumerate();
        let (_, head) = lines.next().ok_or_else(|| err(1, "empty weight table"))?;
        let parts: Vec<&str> = head.split(' ').collect();
        if parts.len() != 6 || parts[0] != "epsilon" || parts[2] != "clip" || parts[4] != "disc" {
            return Err(err(1, "expected `epsilon <v> clip <v> disc <hex>`"));
        }
        let epsilon: f64 = parts[1].parse().map_err(|_| err(1, "bad epsilon"))?;
        let clip: f64 = parts[3].parse().map_err(|_| err(1, "bad clip"))?;
        let disc_digest = parts[5].to_string();
        if disc_digest.len() != 64 || !disc_digest.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(err(1, "digest must be 64 hex chars"));
        }
        let mut rows = BTreeMap::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() != 5 || parts[0] != "traj" {
                return Err(err(line_no, "expected `traj <id> <d> <r> <w>`"));
            }
            let id: u64 = parts[1].parse().map_err(|_| err(line_no, "bad id"))?;
            let score: f64 = parts[2].parse().map_err(|_| err(line_no, "bad score"))?;
            let ratio: f64 = parts[3].parse().map_err(|_| err(line_no, "bad ratio"))?;
            let weight: f64 = parts[4].parse().map_err(|_| err(line_no, "bad weight"))?;
            if rows.insert(id, WeightRow { score, ratio, weight }).is_some() {
                return Err(err(line_no, "duplicate trajectory id"));
            }
        }
        Ok(Self {
            rows,
            frozen: true,
            config: WeightConfig { epsilon, clip },
            disc_digest,
        })
    }
}

/// Per-trajectory score: sigmoid of the mean transition logit.
pub fn trajectory_score(model: &DiscriminatorModel, traj: &Trajectory) -> Result<f64, WeightError> {
    let mut sum = 0.0;
    for tr in &traj.transitions {
        sum += transition_logit(model, &tr.state, &tr.action)?;
    }
    Ok(sigmoid(sum / traj.transitions.len() as f64))
}

/// Discriminator-based density-ratio estimate with symmetric smoothing.
/// Monotone increasing in `d`, bounded above by `(1 + eps) / eps`.
pub fn density_ratio(d: f64, cfg: &WeightConfig) -> f64 {
    debug_assert!(d > 0.0 && d < 1.0, "score must lie in (0, 1), got {d}");
    (d + cfg.epsilon) / (1.0 - d + cfg.epsilon)
}

pub fn clip_weight(r: f64, cfg: &WeightConfig) -> f64 {
    r.min(cfg.clip)
}

/// Hex digest of a discriminator checkpoint's byte serialization; equals the
/// SHA-256 of its `.mlp` file.
pub fn checkpoint_digest(model: &DiscriminatorModel) -> String {
    hex::encode(Sha256::digest(model.mlp.to_bytes()))
}

/// Scores, ratios, and clipped weights for every trajectory of the main
/// dataset, returned frozen with the config and checkpoint digest recorded.
pub fn compute_weight_table(
    model: &DiscriminatorModel,
    d_main: &TrajectoryDataset,
    cfg: &WeightConfig,
) -> Result<WeightTable, WeightError> {
    cfg.validate()?;
    if d_main.is_empty() {
        return Err(WeightError::EmptyDataset);
    }
    if d_main.header.state_dim + d_main.header.action_dim != model.input_dim() {
        return Err(WeightError::DimMismatch(format!(
            "dataset dims {}+{} vs discriminator input {}",
            d_main.header.state_dim,
            d_main.header.action_dim,
            model.input_dim()
        )));
    }
    let mut rows = BTreeMap::new();
    for traj in &d_main.trajectories {
        let score = trajectory_score(model, traj)?;
        let ratio = density_ratio(score, cfg);
        let weight = clip_weight(ratio, cfg);
        rows.insert(traj.id, WeightRow { score, ratio, weight });
    }
    Ok(WeightTable::assemble(rows, *cfg, checkpoint_digest(model)).freeze())
}
