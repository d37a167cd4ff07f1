//! Trajectory data model, canonical binary encoding, and JSONL interchange.
//!
//! The canonical encoding is the hashing substrate: integers are 8-byte
//! little-endian two's complement, reals are 8-byte little-endian IEEE-754
//! binary64, strings are length-prefixed UTF-8. `poison_flag` is evaluation
//! metadata and is never part of the canonical bytes, so attack bookkeeping
//! cannot perturb integrity digests.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Canonical layout version emitted by [`encode_canonical`].
pub const FORMAT_VERSION: i64 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("canonical input truncated")]
    Truncated,
    #[error("{0} trailing bytes after canonical payload")]
    TrailingBytes(usize),
    #[error("unsupported format version {0}")]
    BadVersion(i64),
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error("n_ref {n_ref} out of range for dataset of {len} trajectories")]
    NRefOutOfRange { n_ref: usize, len: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One environment step: `(state, action, reward, next_state, terminal)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    #[serde(rename = "s")]
    pub state: Vec<f64>,
    #[serde(rename = "a")]
    pub action: Vec<f64>,
    #[serde(rename = "r")]
    pub reward: f64,
    #[serde(rename = "ns")]
    pub next_state: Vec<f64>,
    #[serde(rename = "t")]
    pub terminal: bool,
}

/// An ordered episode. `poison_flag` is ground truth recorded by attack
/// generators for later evaluation; training code never reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub poison_flag: Option<bool>,
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: i64,
    pub env_name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_bound: f64,
    pub generator_seed: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub header: DatasetHeader,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryDataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Total number of transitions across all trajectories.
    pub fn transition_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.transitions.len()).sum()
    }

    /// Checks every type invariant: header dims positive, trajectory ids
    /// strictly ascending, lengths >= 1, vector lengths matching the header,
    /// and all components finite.
    pub fn validate(&self) -> Result<(), DataError> {
        let h = &self.header;
        if h.format_version != FORMAT_VERSION {
            return Err(DataError::BadVersion(h.format_version));
        }
        if h.state_dim == 0 || h.action_dim == 0 {
            return Err(DataError::DimMismatch(format!(
                "header dims must be positive, got {}/{}",
                h.state_dim, h.action_dim
            )));
        }
        if !h.action_bound.is_finite() || h.action_bound <= 0.0 {
            return Err(DataError::Malformed(format!(
                "action_bound must be finite and positive, got {}",
                h.action_bound
            )));
        }
        let mut prev_id: Option<u64> = None;
        for traj in &self.trajectories {
            if let Some(p) = prev_id {
                if traj.id <= p {
                    return Err(DataError::Malformed(format!(
                        "trajectory ids must be strictly ascending ({} after {})",
                        traj.id, p
                    )));
                }
            }
            prev_id = Some(traj.id);
            if traj.transitions.is_empty() {
                return Err(DataError::Malformed(format!(
                    "trajectory {} has no transitions",
                    traj.id
                )));
            }
            for tr in &traj.transitions {
                if tr.state.len() != h.state_dim || tr.next_state.len() != h.state_dim {
                    return Err(DataError::DimMismatch(format!(
                        "trajectory {}: state length {} vs header state_dim {}",
                        traj.id,
                        tr.state.len().max(tr.next_state.len()),
                        h.state_dim
                    )));
                }
                if tr.action.len() != h.action_dim {
                    return Err(DataError::DimMismatch(format!(
                        "trajectory {}: action length {} vs header action_dim {}",
                        traj.id,
                        tr.action.len(),
                        h.action_dim
                    )));
                }
                let finite = tr.state.iter().chain(&tr.action).chain(&tr.next_state).all(|v| v.is_finite())
                    && tr.reward.is_finite();
                if !finite {
                    return Err(DataError::NonFinite(format!("trajectory {}", traj.id)));
                }
            }
        }
        Ok(())
    }

    pub fn ids(&self) -> Vec<u64> {
        self.trajectories.iter().map(|t| t.id).collect()
    }
}

fn put_i64(buf: &mut Vec<u8>, v: i64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn header_bytes(h: &DatasetHeader) -> Vec<u8> {
    let mut buf = Vec::new();
    put_i64(&mut buf, h.format_version);
    put_i64(&mut buf, h.env_name.len() as i64);
    buf.extend_from_slice(h.env_name.as_bytes());
    put_i64(&mut buf, h.state_dim as i64);
    put_i64(&mut buf, h.action_dim as i64);
    put_f64(&mut buf, h.action_bound);
    put_i64(&mut buf, h.generator_seed);
    buf
}

/// Canonical bytes of one trajectory record, exactly as it appears inside
/// [`encode_canonical`]. Integrity digests are taken over these slices.
pub fn trajectory_record_bytes(traj: &Trajectory) -> Vec<u8> {
    let mut buf = Vec::new();
    put_i64(&mut buf, traj.id as i64);
    put_i64(&mut buf, traj.transitions.len() as i64);
    for tr in &traj.transitions {
        for v in &tr.state {
            put_f64(&mut buf, *v);
        }
        for v in &tr.action {
            put_f64(&mut buf, *v);
        }
        put_f64(&mut buf, tr.reward);
        for v in &tr.next_state {
            put_f64(&mut buf, *v);
        }
        buf.push(u8::from(tr.terminal));
    }
    buf
}

/// Deterministic byte encoding of a dataset. `poison_flag` is omitted.
pub fn encode_canonical(dataset: &TrajectoryDataset) -> Result<Vec<u8>, DataError> {
    dataset.validate()?;
    let mut buf = header_bytes(&dataset.header);
    put_i64(&mut buf, dataset.trajectories.len() as i64);
    for traj in &dataset.trajectories {
        buf.extend_from_slice(&trajectory_record_bytes(traj));
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.pos + n > self.bytes.len() {
            return Err(DataError::Truncated);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn i64(&mut self) -> Result<i64, DataError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, DataError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_finite(&mut self, what: &str) -> Result<f64, DataError> {
        let v = self.f64()?;
        if !v.is_finite() {
            return Err(DataError::NonFinite(what.to_string()));
        }
        Ok(v)
    }

    fn count(&mut self, what: &str) -> Result<usize, DataError> {
        let v = self.i64()?;
        usize::try_from(v).map_err(|_| DataError::Malformed(format!("negative {what}: {v}")))
    }
}

/// Exact inverse of [`encode_canonical`]; rejects trailing bytes.
pub fn decode_canonical(bytes: &[u8]) -> Result<TrajectoryDataset, DataError> {
    let mut r = Reader { bytes, pos: 0 };
    let format_version = r.i64()?;
    if format_version != FORMAT_VERSION {
        return Err(DataError::BadVersion(format_version));
    }
    let name_len = r.count("string length")?;
    let env_name = std::str::from_utf8(r.take(name_len)?)
        .map_err(|e| DataError::Malformed(format!("env_name is not UTF-8: {e}")))?
        .to_string();
    let state_dim = r.count("state_dim")?;
    let action_dim = r.count("action_dim")?;
    if state_dim == 0 || action_dim == 0 {
        return Err(DataError::DimMismatch(format!(
            "header dims must be positive, got {state_dim}/{action_dim}"
        )));
    }
    let action_bound = r.f64_finite("action_bound")?;
    if action_bound <= 0.0 {
        return Err(DataError::Malformed(format!(
            "action_bound must be positive, got {action_bound}"
        )));
    }
    let generator_seed = r.i64()?;

    let n_traj = r.count("trajectory count")?;
    let mut trajectories = Vec::new();
    let mut prev_id: Option<u64> = None;
    for _ in 0..n_traj {
        let id_raw = r.i64()?;
        let id = u64::try_from(id_raw)
            .map_err(|_| DataError::Malformed(format!("negative trajectory id {id_raw}")))?;
        if let Some(p) = prev_id {
            if id <= p {
                return Err(DataError::Malformed(format!(
                    "trajectory ids must be strictly ascending ({id} after {p})"
                )));
            }
        }
        prev_id = Some(id);
        let n_trans = r.count("transition count")?;
        if n_trans == 0 {
            return Err(DataError::Malformed(format!("trajectory {id} has no transitions")));
        }
        let mut transitions = Vec::with_capacity(n_trans.min(1 << 16));
        for _ in 0..n_trans {
            fn vecs(r: &mut Reader<'_>, n: usize, what: &str) -> Result<Vec<f64>, DataError> {
                (0..n).map(|_| r.f64_finite(what)).collect()
            }
            let state = vecs(&mut r, state_dim, "state")?;
            let action = vecs(&mut r, action_dim, "action")?;
            let reward = r.f64_finite("reward")?;
            let next_state = vecs(&mut r, state_dim, "next_state")?;
            let terminal = match r.take(1)?[0] {
                0 => false,
                1 => true,
                b => return Err(DataError::Malformed(format!("bad terminal flag byte {b}"))),
            };
            transitions.push(Transition { state, action, reward, next_state, terminal });
        }
        trajectories.push(Trajectory { id, poison_flag: None, transitions });
    }
    if r.pos != bytes.len() {
        return Err(DataError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(TrajectoryDataset {
        header: DatasetHeader {
            format_version,
            env_name,
            state_dim,
            action_dim,
            action_bound,
            generator_seed,
        },
        trajectories,
    })
}

/// Writes the JSONL interchange form: header object on line 1, one
/// trajectory object per following line.
pub fn write_jsonl(dataset: &TrajectoryDataset, path: &Path) -> Result<(), DataError> {
    dataset.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    let line = serde_json::to_string(&dataset.header)
        .map_err(|e| DataError::Malformed(format!("header serialization: {e}")))?;
    writeln!(w, "{line}")?;
    for traj in &dataset.trajectories {
        let line = serde_json::to_string(traj)
            .map_err(|e| DataError::Malformed(format!("trajectory serialization: {e}")))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<TrajectoryDataset, DataError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| DataError::Parse { line: 1, msg: "empty file".into() })??;
    let header: DatasetHeader = serde_json::from_str(&header_line)
        .map_err(|e| DataError::Parse { line: 1, msg: e.to_string() })?;
    let mut trajectories = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let traj: Trajectory = serde_json::from_str(&line)
            .map_err(|e| DataError::Parse { line: line_no, msg: e.to_string() })?;
        trajectories.push(traj);
    }
    let dataset = TrajectoryDataset { header, trajectories };
    dataset.validate()?;
    Ok(dataset)
}

/// Splits off a uniformly sampled reference set of `n_ref` trajectories
/// (seeded, without replacement). Ids are preserved and both halves stay in
/// ascending-id order.
pub fn split_reference(
    clean: &TrajectoryDataset,
    n_ref: usize,
    seed: u64,
) -> Result<(TrajectoryDataset, TrajectoryDataset), DataError> {
    let n = clean.trajectories.len();
    if n_ref == 0 || n_ref >= n {
        return Err(DataError::NRefOutOfRange { n_ref, len: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed));
    let mut picked = idx[..n_ref].to_vec();
    picked.sort_unstable();
    let mut in_ref = vec![false; n];
    for i in &picked {
        in_ref[*i] = true;
    }
    let (mut d_ref, mut rest) = (Vec::new(), Vec::new());
    for (i, traj) in clean.trajectories.iter().enumerate() {
        if in_ref[i] {
            d_ref.push(traj.clone());
        } else {
            rest.push(traj.clone());
        }
    }
    Ok((
        TrajectoryDataset { header: clean.header.clone(), trajectories: d_ref },
        TrajectoryDataset { header: clean.header.clone(), trajectories: rest },
    ))
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    pub fn header(state_dim: usize, action_dim: usize) -> DatasetHeader {
        DatasetHeader {
            format_version: FORMAT_VERSION,
            env_name: "pointmass-v1".into(),
            state_dim,
            action_dim,
            action_bound: 1.0,
            generator_seed: 0,
        }
    }

    pub fn transition(k: f64, state_dim: usize, action_dim: usize) -> Transition {
        Transition {
            state: (0..state_dim).map(|i| k + i as f64 * 0.25).collect(),
            action: (0..action_dim).map(|i| 0.1 * (k + i as f64)).collect(),
            reward: -k,
            next_state: (0..state_dim).map(|i| k + 0.5 + i as f64 * 0.25).collect(),
            terminal: false,
        }
    }

    pub fn dataset(n_traj: usize, traj_len: usize) -> TrajectoryDataset {
        let trajectories = (0..n_traj)
            .map(|id| Trajectory {
                id: id as u64,
                poison_flag: None,
                transitions: (0..traj_len)
                    .map(|t| {
                        let mut tr = transition(id as f64 * 0.5 + t as f64 * 0.01, 4, 2);
                        tr.terminal = t + 1 == traj_len;
                        tr
                    })
                    .collect(),
            })
            .collect();
        TrajectoryDataset { header: header(4, 2), trajectories }
    }
}
