//! Deterministic poisoning generators over trajectory datasets.
//!
//! Selection is at trajectory granularity: a seeded uniform sample of
//! `ceil(fraction * N)` trajectories is transformed (or, for injection, that
//! many uniform-random-action rollouts are appended with fresh ids).
//! Untouched trajectories are byte-identical to the input; altered and
//! injected ones get `poison_flag = true` and a matching ground-truth entry
//! in [`PoisonLabels`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::dataset::{DataError, TrajectoryDataset};
use crate::pointmass::{rollout, EnvError, EnvParams, EnvState};
use crate::rng;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("cannot poison an empty dataset")]
    EmptyDataset,
    #[error("bad attack spec: {0}")]
    BadSpec(String),
    #[error("labels parse error at line {line}: {msg}")]
    LabelsParse { line: usize, msg: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    /// Negate every action: the continuous-control analog of label flipping.
    ActionInversion,
    /// Add Gaussian noise to actions, then re-clip to the bound.
    ActionNoise,
    /// Append uniform-random-action rollouts with fresh ids.
    TrajectoryInjection,
    /// Negate rewards. Has no effect on behavioral cloning by design.
    RewardFlip,
    /// Add Gaussian noise to states and next states independently,
    /// deliberately breaking transition chaining.
    StateNoise,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::ActionInversion,
        AttackKind::ActionNoise,
        AttackKind::TrajectoryInjection,
        AttackKind::RewardFlip,
        AttackKind::StateNoise,
    ];
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AttackKind::ActionInversion => "action_inversion",
            AttackKind::ActionNoise => "action_noise",
            AttackKind::TrajectoryInjection => "trajectory_injection",
            AttackKind::RewardFlip => "reward_flip",
            AttackKind::StateNoise => "state_noise",
        };
        f.write_str(s)
    }
}

impl FromStr for AttackKind {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "action_inversion" => Ok(AttackKind::ActionInversion),
            "action_noise" => Ok(AttackKind::ActionNoise),
            "trajectory_injection" => Ok(AttackKind::TrajectoryInjection),
            "reward_flip" => Ok(AttackKind::RewardFlip),
            "state_noise" => Ok(AttackKind::StateNoise),
            other => Err(AttackError::BadSpec(format!("unknown attack kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Share of trajectories poisoned (or injected, relative to the
    /// original count).
    pub fraction: f64,
    /// Noise std or scale; unused by inversion and reward flip.
    pub magnitude: f64,
    pub seed: u64,
}

impl AttackSpec {
    pub fn validate(&self) -> Result<(), AttackError> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(AttackError::BadSpec(format!(
                "fraction must lie in [0, 1], got {}",
                self.fraction
            )));
        }
        if !(self.magnitude >= 0.0) {
            return Err(AttackError::BadSpec(format!(
                "magnitude must be >= 0, got {}",
                self.magnitude
            )));
        }
        Ok(())
    }
}

/// Ground truth for defense evaluation only; never read by training code.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PoisonLabels {
    pub map: BTreeMap<u64, bool>,
}

impl PoisonLabels {
    pub fn poisoned_ids(&self) -> Vec<u64> {
        self.map.iter().filter(|(_, v)| **v).map(|(k, _)| *k).collect()
    }

    pub fn count_poisoned(&self) -> usize {
        self.map.values().filter(|v| **v).count()
    }

    /// `<id> <0|1>` per line, ascending id.
    pub fn to_string_lines(&self) -> String {
        let mut s = String::new();
        for (id, p) in &self.map {
            s.push_str(&format!("{} {}\n", id, u8::from(*p)));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), AttackError> {
        std::fs::write(path, self.to_string_lines())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, AttackError> {
        let text = std::fs::read_to_string(path)?;
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let (id_s, flag_s) = line.split_once(' ').ok_or_else(|| AttackError::LabelsParse {
                line: line_no,
                msg: "expected `<id> <0|1>`".into(),
            })?;
            let id: u64 = id_s.parse().map_err(|_| AttackError::LabelsParse {
                line: line_no,
                msg: "bad trajectory id".into(),
            })?;
            let flag = match flag_s {
                "0" => false,
                "1" => true,
                other => {
                    return Err(AttackError::LabelsParse {
                        line: line_no,
                        msg: format!("bad flag {other:?}"),
                    })
                }
            };
            map.insert(id, flag);
        }
        Ok(Self { map })
    }
}

fn selected_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::substream(seed, rng::SALT_ATTACK_SELECT, 0));
    let mut picked = idx[..k].to_vec();
    picked.sort_unstable();
    picked
}

/// Applies `spec` to a clean dataset. Deterministic per seed: the same
/// `(clean, spec)` produces the same output and the same poisoned id set.
/// `env` supplies the dynamics for injected rollouts.
pub fn apply_attack(
    clean: &TrajectoryDataset,
    spec: &AttackSpec,
    env: &EnvParams,
) -> Result<(TrajectoryDataset, PoisonLabels), AttackError> {
    spec.validate()?;
    clean.validate()?;
    let n = clean.trajectories.len();
    if n == 0 {
        return Err(AttackError::EmptyDataset);
    }
    let k = (spec.fraction * n as f64).ceil() as usize;
    let mut poisoned = clean.clone();
    let mut labels = PoisonLabels::default();
    for t in &clean.trajectories {
        labels.map.insert(t.id, false);
    }
    if k == 0 {
        return Ok((poisoned, labels));
    }

    if spec.kind == AttackKind::TrajectoryInjection {
        let bound = clean.header.action_bound;
        let mut next_id = clean.trajectories.iter().map(|t| t.id).max().unwrap_or(0) + 1;
        for j in 0..k {
            let episode_seed = spec.seed ^ rng::SALT_ATTACK_INJECT ^ j as u64;
            let mut r = rng::stream(episode_seed);
            let mut actor =
                |_: &EnvState| [r.random_range(-bound..=bound), r.random_range(-bound..=bound)];
            let mut traj = rollout(&mut actor, env, episode_seed)?;
            traj.id = next_id;
            traj.poison_flag = Some(true);
            labels.map.insert(next_id, true);
            poisoned.trajectories.push(traj);
            next_id += 1;
        }
        return Ok((poisoned, labels));
    }

    for i in selected_indices(n, k, spec.seed) {
        let traj = &mut poisoned.trajectories[i];
        let mut noise = rng::substream(spec.seed, rng::SALT_ATTACK_TRANSFORM, traj.id);
        for tr in &mut traj.transitions {
            match spec.kind {
                AttackKind::ActionInversion => {
                    for a in &mut tr.action {
                        *a = -*a;
                    }
                }
                AttackKind::ActionNoise => {
                    let bound = clean.header.action_bound;
                    for a in &mut tr.action {
                        let z: f64 = noise.sample(StandardNormal);
                        *a = (*a + spec.magnitude * z).clamp(-bound, bound);
                    }
                }
                AttackKind::RewardFlip => tr.reward = -tr.reward,
                AttackKind::StateNoise => {
                    for v in tr.state.iter_mut().chain(tr.next_state.iter_mut()) {
                        let z: f64 = noise.sample(StandardNormal);
                        *v += spec.magnitude * z;
                    }
                }
                AttackKind::TrajectoryInjection => unreachable!(),
            }
        }
        traj.poison_flag = Some(true);
        labels.map.insert(traj.id, true);
    }
    Ok((poisoned, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::encode_canonical;
    use crate::pointmass::{generate_dataset, ExpertGains};

    fn small_dataset(n: usize) -> TrajectoryDataset {
        let p = EnvParams { horizon: 5, ..EnvParams::default() };
        generate_dataset(n, &ExpertGains::default(), &p, 7).unwrap()
    }

    fn spec(kind: AttackKind, fraction: f64, magnitude: f64) -> AttackSpec {
        AttackSpec { kind, fraction, magnitude, seed: 13 }
    }

    #[test]
    fn zero_fraction_is_identity() {
        let ds = small_dataset(10);
        let (out, labels) =
            apply_attack(&ds, &spec(AttackKind::ActionInversion, 0.0, 0.0), &EnvParams::default())
                .unwrap();
        assert_eq!(encode_canonical(&out).unwrap(), encode_canonical(&ds).unwrap());
        assert_eq!(labels.count_poisoned(), 0);
        assert_eq!(labels.map.len(), 10);
    }

    #[test]
    fn inversion_negates_actions() {
        let mut ds = small_dataset(1);
        ds.trajectories[0].transitions[0].action = vec![0.3, -0.5];
        let (out, _) =
            apply_attack(&ds, &spec(AttackKind::ActionInversion, 1.0, 0.0), &EnvParams::default())
                .unwrap();
        assert_eq!(out.trajectories[0].transitions[0].action, vec![-0.3, 0.5]);
    }

    #[test]
    fn fraction_counts_are_exact() {
        let ds = small_dataset(200);
        let (out, labels) =
            apply_attack(&ds, &spec(AttackKind::ActionInversion, 0.3, 0.0), &EnvParams::default())
                .unwrap();
        assert_eq!(labels.count_poisoned(), 60);
        let flagged =
            out.trajectories.iter().filter(|t| t.poison_flag == Some(true)).count();
        assert_eq!(flagged, 60);
    }

    #[test]
    fn selection_is_deterministic() {
        let ds = small_dataset(30);
        let s = spec(AttackKind::ActionNoise, 0.5, 0.2);
        let (a, la) = apply_attack(&ds, &s, &EnvParams::default()).unwrap();
        let (b, lb) = apply_attack(&ds, &s, &EnvParams::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn non_injection_preserves_counts_ids_lengths() {
        let ds = small_dataset(25);
        for kind in [
            AttackKind::ActionInversion,
            AttackKind::ActionNoise,
            AttackKind::RewardFlip,
            AttackKind::StateNoise,
        ] {
            let (out, _) = apply_attack(&ds, &spec(kind, 0.4, 0.1), &EnvParams::default()).unwrap();
            assert_eq!(out.ids(), ds.ids(), "{kind}");
            for (a, b) in out.trajectories.iter().zip(&ds.trajectories) {
                assert_eq!(a.transitions.len(), b.transitions.len(), "{kind}");
            }
        }
    }

    #[test]
    fn untouched_trajectories_are_identical() {
        let ds = small_dataset(20);
        let (out, labels) =
            apply_attack(&ds, &spec(AttackKind::StateNoise, 0.3, 0.5), &EnvParams::default())
                .unwrap();
        for (a, b) in out.trajectories.iter().zip(&ds.trajectories) {
            if !labels.map[&a.id] {
                assert_eq!(a, b);
            } else {
                assert_ne!(a.transitions, b.transitions);
            }
        }
    }

    #[test]
    fn reward_flip_negates_rewards_only() {
        let ds = small_dataset(4);
        let (out, labels) =
            apply_attack(&ds, &spec(AttackKind::RewardFlip, 1.0, 0.0), &EnvParams::default())
                .unwrap();
        assert_eq!(labels.count_poisoned(), 4);
        for (a, b) in out.trajectories.iter().zip(&ds.trajectories) {
            for (ta, tb) in a.transitions.iter().zip(&b.transitions) {
                assert_eq!(ta.reward, -tb.reward);
                assert_eq!(ta.state, tb.state);
                assert_eq!(ta.action, tb.action);
                assert_eq!(ta.next_state, tb.next_state);
            }
        }
    }

    #[test]
    fn action_noise_stays_in_bounds() {
        let ds = small_dataset(10);
        let bound = ds.header.action_bound;
        let (out, _) =
            apply_attack(&ds, &spec(AttackKind::ActionNoise, 1.0, 5.0), &EnvParams::default())
                .unwrap();
        for t in &out.trajectories {
            for tr in &t.transitions {
                assert!(tr.action.iter().all(|a| a.abs() <= bound));
            }
        }
    }

    #[test]
    fn state_noise_breaks_chaining() {
        let ds = small_dataset(5);
        let (out, labels) =
            apply_attack(&ds, &spec(AttackKind::StateNoise, 1.0, 0.3), &EnvParams::default())
                .unwrap();
        assert_eq!(labels.count_poisoned(), 5);
        let broken = out.trajectories.iter().any(|t| {
            t.transitions.windows(2).any(|w| w[0].next_state != w[1].state)
        });
        assert!(broken);
    }

    #[test]
    fn injection_appends_random_rollouts() {
        let ds = small_dataset(10);
        let env = EnvParams { horizon: 5, ..EnvParams::default() };
        let (out, labels) =
            apply_attack(&ds, &spec(AttackKind::TrajectoryInjection, 0.25, 0.0), &env).unwrap();
        // ceil(0.25 * 10) = 3 injected with fresh ids
        assert_eq!(out.len(), 13);
        assert_eq!(labels.count_poisoned(), 3);
        for t in &out.trajectories[10..] {
            assert!(t.id >= 10);
            assert_eq!(t.poison_flag, Some(true));
            assert_eq!(t.transitions.len(), 5);
        }
        out.validate().unwrap();
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let ds = TrajectoryDataset {
            header: small_dataset(1).header,
            trajectories: vec![],
        };
        assert!(matches!(
            apply_attack(&ds, &spec(AttackKind::ActionInversion, 0.5, 0.0), &EnvParams::default()),
            Err(AttackError::EmptyDataset)
        ));
    }

    #[test]
    fn bad_spec_is_rejected() {
        let ds = small_dataset(2);
        assert!(apply_attack(
            &ds,
            &spec(AttackKind::ActionNoise, 1.5, 0.1),
            &EnvParams::default()
        )
        .is_err());
        assert!(apply_attack(
            &ds,
            &spec(AttackKind::ActionNoise, 0.5, -0.1),
            &EnvParams::default()
        )
        .is_err());
    }

    #[test]
    fn labels_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.labels");
        let mut labels = PoisonLabels::default();
        labels.map.insert(0, false);
        labels.map.insert(3, true);
        labels.map.insert(9, false);
        labels.write(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "0 0\n3 1\n9 0\n");
        assert_eq!(PoisonLabels::read(&path).unwrap(), labels);
    }

    #[test]
    fn kind_names_roundtrip() {
        for kind in AttackKind::ALL {
            assert_eq!(kind.to_string().parse::<AttackKind>().unwrap(), kind);
        }
        assert!("availability".parse::<AttackKind>().is_err());
    }
}
