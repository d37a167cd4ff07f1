//! Reference-set integrity: per-trajectory SHA-256 digests, a plain-text
//! manifest file, and the pre-training gate that aborts on tamper.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{trajectory_record_bytes, DataError, TrajectoryDataset};
use crate::parallel;

/// Hash algorithm identifier for manifest version 1.
pub const ALGORITHM: &str = "sha-256";

#[derive(Debug, Error)]
pub enum IntegrityError {
    #[error("unsupported hash algorithm {0:?}")]
    UnsupportedAlgorithm(String),
    #[error("manifest parse error at line {line}: {msg}")]
    ManifestParse { line: usize, msg: String },
    #[error("manifest global digest does not match its per-trajectory entries")]
    ManifestInconsistent,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type TrajDigest = [u8; 32];

/// Per-trajectory and global digests of a reference set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashManifest {
    pub algorithm: String,
    /// `(trajectory id, digest)` in strictly ascending id order.
    pub per_traj: Vec<(u64, TrajDigest)>,
    /// SHA-256 of the concatenated per-trajectory digest bytes.
    pub global: TrajDigest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationReport {
    pub passed: bool,
    pub mismatched_ids: Vec<u64>,
    pub missing_ids: Vec<u64>,
    pub extra_ids: Vec<u64>,
}

impl VerificationReport {
    fn new(mismatched_ids: Vec<u64>, missing_ids: Vec<u64>, extra_ids: Vec<u64>) -> Self {
        let passed = mismatched_ids.is_empty() && missing_ids.is_empty() && extra_ids.is_empty();
        Self { passed, mismatched_ids, missing_ids, extra_ids }
    }

    pub fn describe(&self) -> String {
        if self.passed {
            return "verification passed".into();
        }
        format!(
            "verification failed: mismatched={:?} missing={:?} extra={:?}",
            self.mismatched_ids, self.missing_ids, self.extra_ids
        )
    }
}

/// Integrity check mode for the gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegrityMode {
    /// Hash verification off: compute and save a manifest, always proceed.
    Disabled,
    /// Compute and save a fresh manifest, always proceed.
    Create,
    /// Verify against an existing manifest and abort on any mismatch;
    /// bootstraps the manifest when none exists yet.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GateDecision {
    Proceed,
    Abort(VerificationReport),
}

fn global_of(per_traj: &[(u64, TrajDigest)]) -> TrajDigest {
    let mut hasher = Sha256::new();
    for (_, d) in per_traj {
        hasher.update(d);
    }
    hasher.finalize().into()
}

/// Digests every trajectory's canonical record bytes and combines them in
/// ascending id order. Hashing fans out across worker threads; the result is
/// independent of the schedule.
pub fn compute_manifest(d_ref: &TrajectoryDataset) -> Result<HashManifest, IntegrityError> {
    d_ref.validate()?;
    let digests = parallel::map_indexed(d_ref.trajectories.len(), |i| {
        let traj = &d_ref.trajectories[i];
        let d: TrajDigest = Sha256::digest(trajectory_record_bytes(traj)).into();
        (traj.id, d)
    });
    let global = global_of(&digests);
    Ok(HashManifest { algorithm: ALGORITHM.into(), per_traj: digests, global })
}

/// Recomputes all digests and reports every discrepancy. Read-only.
pub fn verify_manifest(
    d_ref: &TrajectoryDataset,
    manifest: &HashManifest,
) -> Result<VerificationReport, IntegrityError> {
    if manifest.algorithm != ALGORITHM {
        return Err(IntegrityError::UnsupportedAlgorithm(manifest.algorithm.clone()));
    }
    if global_of(&manifest.per_traj) != manifest.global {
        return Err(IntegrityError::ManifestInconsistent);
    }
    let actual = compute_manifest(d_ref)?;
    let mut mismatched = Vec::new();
    let mut missing = Vec::new();
    let mut extra = Vec::new();
    let mut want = manifest.per_traj.iter().peekable();
    let mut got = actual.per_traj.iter().peekable();
    loop {
        match (want.peek(), got.peek()) {
            (Some((wid, wd)), Some((gid, gd))) => {
                if wid == gid {
                    if wd != gd {
                        mismatched.push(*wid);
                    }
                    want.next();
                    got.next();
                } else if wid < gid {
                    missing.push(*wid);
                    want.next();
                } else {
                    extra.push(*gid);
                    got.next();
                }
            }
            (Some((wid, _)), None) => {
                missing.push(*wid);
                want.next();
            }
            (None, Some((gid, _))) => {
                extra.push(*gid);
                got.next();
            }
            (None, None) => break,
        }
    }
    Ok(VerificationReport::new(mismatched, missing, extra))
}

/// Renders the manifest file: `algorithm` line, `global` line, then one
/// `traj <id> <hex>` line per trajectory. LF endings, no trailing whitespace.
pub fn manifest_to_string(m: &HashManifest) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "algorithm {}", m.algorithm);
    let _ = writeln!(s, "global {}", hex::encode(m.global));
    for (id, d) in &m.per_traj {
        let _ = writeln!(s, "traj {} {}", id, hex::encode(d));
    }
    s
}

pub fn write_manifest(m: &HashManifest, path: &Path) -> Result<(), IntegrityError> {
    std::fs::write(path, manifest_to_string(m))?;
    Ok(())
}

pub fn parse_manifest(text: &str) -> Result<HashManifest, IntegrityError> {
    let err = |line: usize, msg: &str| IntegrityError::ManifestParse { line, msg: msg.into() };
    let mut lines = text.lines().enumerate();
    let (_, algo_line) = lines.next().ok_or_else(|| err(1, "empty manifest"))?;
    let algorithm = algo_line
        .strip_prefix("algorithm ")
        .ok_or_else(|| err(1, "expected `algorithm <name>`"))?
        .to_string();
    if algorithm != ALGORITHM {
        return Err(IntegrityError::UnsupportedAlgorithm(algorithm));
    }
    let parse_digest = |line: usize, s: &str| -> Result<TrajDigest, IntegrityError> {
        if s.len() != 64 {
            return Err(err(line, "digest must be 64 hex chars"));
        }
        let raw = hex::decode(s).map_err(|_| err(line, "digest is not valid hex"))?;
        Ok(raw.try_into().unwrap())
    };
    let (_, global_line) = lines.next().ok_or_else(|| err(2, "missing global line"))?;
    let global = parse_digest(
        2,
        global_line.strip_prefix("global ").ok_or_else(|| err(2, "expected `global <hex>`"))?,
    )?;
    let mut per_traj: Vec<(u64, TrajDigest)> = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let rest = line
            .strip_prefix("traj ")
            .ok_or_else(|| err(line_no, "expected `traj <id> <hex>`"))?;
        let (id_s, hex_s) =
            rest.split_once(' ').ok_or_else(|| err(line_no, "expected `traj <id> <hex>`"))?;
        let id: u64 = id_s.parse().map_err(|_| err(line_no, "bad trajectory id"))?;
        if let Some((prev, _)) = per_traj.last() {
            if id <= *prev {
                return Err(err(line_no, "trajectory ids must be strictly ascending"));
            }
        }
        per_traj.push((id, parse_digest(line_no, hex_s)?));
    }
    if global_of(&per_traj) != global {
        return Err(IntegrityError::ManifestInconsistent);
    }
    Ok(HashManifest { algorithm, per_traj, global })
}

pub fn read_manifest(path: &Path) -> Result<HashManifest, IntegrityError> {
    parse_manifest(&std::fs::read_to_string(path)?)
}

/// The pre-training gate. Disabled/Create always recompute and save;
/// Strict verifies against an existing manifest and aborts on failure,
/// bootstrapping the manifest on first run.
pub fn integrity_gate(
    d_ref: &TrajectoryDataset,
    manifest_path: &Path,
    mode: IntegrityMode,
) -> Result<GateDecision, IntegrityError> {
    match mode {
        IntegrityMode::Disabled | IntegrityMode::Create => {
            write_manifest(&compute_manifest(d_ref)?, manifest_path)?;
            Ok(GateDecision::Proceed)
        }
        IntegrityMode::Strict => {
            if manifest_path.exists() {
                let manifest = read_manifest(manifest_path)?;
                let report = verify_manifest(d_ref, &manifest)?;
                if report.passed {
                    Ok(GateDecision::Proceed)
                } else {
                    Ok(GateDecision::Abort(report))
                }
            } else {
                write_manifest(&compute_manifest(d_ref)?, manifest_path)?;
                Ok(GateDecision::Proceed)
            }
        }
    }
}
