//! Weighted behavioral cloning: fits a tanh-squashed network to dataset
//! actions with the weighted MSE loss, each sampled transition carrying the
//! frozen weight of its source trajectory. `baseline_mode` runs the same
//! code path with unit weights.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::dataset::TrajectoryDataset;
use crate::nn::{AdamState, BackpropScratch, Cache, Gradients, Mlp, NnError, TrainLog};
use crate::pointmass::EnvState;
use crate::rng;
use crate::weighting::WeightTable;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("weight table is not frozen")]
    TableNotFrozen,
    #[error("weight table ids do not match the dataset: {0}")]
    TableIdMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTrainConfig {
    /// Optimizer steps; one transition minibatch per epoch.
    pub epochs: usize,
    /// Transitions per minibatch.
    pub minibatch: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Ignore the weight table and clone with unit weights.
    pub baseline_mode: bool,
}

impl Default for PolicyTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            minibatch: 256,
            learning_rate: 1e-3,
            hidden: vec![64, 64],
            seed: 0,
            baseline_mode: false,
        }
    }
}

/// Deterministic policy: `action = action_bound * tanh(network(state))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub mlp: Mlp,
    pub action_bound: f64,
}

impl PolicyModel {
    pub fn state_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.mlp.output_dim()
    }
}

/// Squashed policy output; always within the action bound.
pub fn policy_action(model: &PolicyModel, state: &[f64]) -> Result<Vec<f64>, PolicyError> {
    if state.len() != model.state_dim() {
        return Err(PolicyError::DimMismatch(format!(
            "state length {} vs policy input {}",
            state.len(),
            model.state_dim()
        )));
    }
    let (out, _) = model.mlp.forward(state)?;
    Ok(out.iter().map(|o| model.action_bound * o.tanh()).collect())
}

/// Adapter for the point-mass evaluator.
pub fn as_actor(model: &PolicyModel) -> impl Fn(&EnvState) -> [f64; 2] + Sync + '_ {
    move |s: &EnvState| {
        let a = policy_action(model, &s.to_vec()).expect("policy dims match the environment");
        [a[0], a[1]]
    }
}

/// Trains the cloned policy. Per epoch: one uniform with-replacement
/// minibatch of transitions, weighted MSE between the squashed output and
/// the dataset action (normalized by the batch weight sum), one optimizer
/// step. Deterministic per seed.
pub fn train_policy(
    d_main: &TrajectoryDataset,
    table: Option<&WeightTable>,
    cfg: &PolicyTrainConfig,
) -> Result<(PolicyModel, TrainLog), PolicyError> {
    if cfg.epochs == 0 || cfg.minibatch == 0 {
        return Err(PolicyError::BadConfig("epochs and minibatch must be >= 1".into()));
    }
    if d_main.is_empty() {
        return Err(PolicyError::EmptyDataset);
    }
    let weights_by_traj: Option<&WeightTable> = if cfg.baseline_mode {
        None
    } else {
        let t = table.ok_or_else(|| {
            PolicyError::BadConfig("weight table required unless baseline_mode is set".into())
        })?;
        if !t.is_frozen() {
            return Err(PolicyError::TableNotFrozen);
        }
        let table_ids: Vec<u64> = t.rows().keys().copied().collect();
        let data_ids = d_main.ids();
        if table_ids != data_ids {
            return Err(PolicyError::TableIdMismatch(format!(
                "table has {} rows, dataset has {} trajectories",
                table_ids.len(),
                data_ids.len()
            )));
        }
        Some(t)
    };

    let sd = d_main.header.state_dim;
    let ad = d_main.header.action_dim;
    let bound = d_main.header.action_bound;

    // flattened pools in dataset order, one weight per transition
    let n = d_main.transition_count();
    let mut states = Vec::with_capacity(n * sd);
    let mut actions = Vec::with_capacity(n * ad);
    let mut weights = Vec::with_capacity(n);
    for traj in &d_main.trajectories {
        let w = match weights_by_traj {
            Some(t) => t.weight_of(traj.id).expect("id coverage checked above"),
            None => 1.0,
        };
        for tr in &traj.transitions {
            states.extend_from_slice(&tr.state);
            actions.extend_from_slice(&tr.action);
            weights.push(w);
        }
    }

    let mut sizes = vec![sd];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(ad);
    let mut mlp = Mlp::init(&sizes, cfg.seed)?;
    let mut adam = AdamState::new(&mlp, cfg.learning_rate);
    let mut sampler = rng::substream(cfg.seed, rng::SALT_POLICY_SAMPLER, 0);

    let mut cache = Cache::default();
    let mut grads = Gradients::zeros_like(&mlp);
    let mut scratch = BackpropScratch::default();
    let mut batch_idx = vec![0usize; cfg.minibatch];
    let mut dout = vec![0.0; ad];
    let mut log = TrainLog::default();
    for epoch in 1..=cfg.epochs {
        for slot in batch_idx.iter_mut() {
            *slot = sampler.random_range(0..n);
        }
        let sw: f64 = batch_idx.iter().map(|i| weights[*i]).sum();
        grads.reset();
        let mut loss = 0.0;
        if sw > 0.0 {
            for &i in &batch_idx {
                let w = weights[i];
                mlp.forward_into(&states[i * sd..(i + 1) * sd], &mut cache)?;
                let target = &actions[i * ad..(i + 1) * ad];
                let out = cache.output();
                for d in 0..ad {
                    let tanh = out[d].tanh();
                    let pred = bound * tanh;
                    let diff = pred - target[d];
                    loss += w * diff * diff;
                    dout[d] = 2.0 * w * diff * bound * (1.0 - tanh * tanh) / sw;
                }
                mlp.backward_with(&cache, &dout, &mut grads, &mut scratch)?;
            }
            loss /= sw;
        }
        adam.step(&mut mlp, &grads)?;
        log.push(epoch, loss);
    }
    Ok((PolicyModel { mlp, action_bound: bound }, log))
}

/// Sidecar text recording the training config and the digest of the weight
/// table the policy was trained against.
pub fn sidecar_text(cfg: &PolicyTrainConfig, table_digest: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "epochs {}", cfg.epochs);
    let _ = writeln!(s, "minibatch {}", cfg.minibatch);
    let _ = writeln!(s, "learning_rate {:.16e}", cfg.learning_rate);
    let _ = writeln!(
        s,
        "hidden {}",
        cfg.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",")
    );
    let _ = writeln!(s, "seed {}", cfg.seed);
    let _ = writeln!(s, "baseline_mode {}", cfg.baseline_mode);
    let _ = writeln!(s, "weight_table {table_digest}");
    s
}

pub fn write_sidecar(
    path: &Path,
    cfg: &PolicyTrainConfig,
    table_digest: &str,
) -> Result<(), PolicyError> {
    std::fs::write(path, sidecar_text(cfg, table_digest))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::testutil::dataset;
    use crate::discriminator::DiscriminatorModel;
    use crate::weighting::{compute_weight_table, WeightConfig, WeightRow, WeightTable};
    use std::collections::BTreeMap;

    fn unit_table(ds: &TrajectoryDataset) -> WeightTable {
        let model = DiscriminatorModel {
            mlp: Mlp::zeros(&[ds.header.state_dim + ds.header.action_dim, 4, 1]).unwrap(),
        };
        compute_weight_table(&model, ds, &WeightConfig::default()).unwrap()
    }

    fn constant_table(ds: &TrajectoryDataset, w: f64) -> WeightTable {
        let rows: BTreeMap<u64, WeightRow> = ds
            .ids()
            .into_iter()
            .map(|id| (id, WeightRow { score: 0.5, ratio: w, weight: w }))
            .collect();
        WeightTable::assemble(rows, WeightConfig::default(), "0".repeat(64)).freeze()
    }

    #[test]
    fn zero_weights_leave_params_at_init() {
        let ds = dataset(3, 4);
        let table = constant_table(&ds, 0.0);
        let cfg = PolicyTrainConfig { epochs: 20, seed: 5, ..PolicyTrainConfig::default() };
        let (model, log) = train_policy(&ds, Some(&table), &cfg).unwrap();
        let mut sizes = vec![ds.header.state_dim];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(ds.header.action_dim);
        let init = Mlp::init(&sizes, cfg.seed).unwrap();
        assert_eq!(model.mlp, init);
        assert!(log.records.iter().all(|r| r.mean_loss == 0.0));
    }

    #[test]
    fn baseline_mode_equals_all_ones_table() {
        let ds = dataset(4, 5);
        let ones = constant_table(&ds, 1.0);
        let cfg = PolicyTrainConfig { epochs: 30, seed: 2, ..PolicyTrainConfig::default() };
        let (weighted, lw) = train_policy(&ds, Some(&ones), &cfg).unwrap();
        let cfg_base = PolicyTrainConfig { baseline_mode: true, ..cfg };
        let (base, lb) = train_policy(&ds, Some(&ones), &cfg_base).unwrap();
        assert_eq!(weighted.mlp, base.mlp);
        assert_eq!(lw, lb);
        // and with no table at all
        let (base2, _) = train_policy(&ds, None, &cfg_base).unwrap();
        assert_eq!(base.mlp, base2.mlp);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let ds = dataset(4, 5);
        let table = unit_table(&ds);
        let cfg = PolicyTrainConfig { epochs: 25, seed: 9, ..PolicyTrainConfig::default() };
        let (a, _) = train_policy(&ds, Some(&table), &cfg).unwrap();
        let (b, _) = train_policy(&ds, Some(&table), &cfg).unwrap();
        assert_eq!(a.mlp, b.mlp);
    }

    #[test]
    fn unfrozen_table_is_rejected() {
        let ds = dataset(2, 2);
        let rows: BTreeMap<u64, WeightRow> = ds
            .ids()
            .into_iter()
            .map(|id| (id, WeightRow { score: 0.5, ratio: 1.0, weight: 1.0 }))
            .collect();
        let unfrozen = WeightTable::assemble(rows, WeightConfig::default(), "0".repeat(64));
        let cfg = PolicyTrainConfig { epochs: 1, ..PolicyTrainConfig::default() };
        assert!(matches!(
            train_policy(&ds, Some(&unfrozen), &cfg),
            Err(PolicyError::TableNotFrozen)
        ));
    }

    #[test]
    fn id_mismatch_is_rejected() {
        let ds = dataset(3, 2);
        let other = dataset(4, 2);
        let table = unit_table(&other);
        let cfg = PolicyTrainConfig { epochs: 1, ..PolicyTrainConfig::default() };
        assert!(matches!(
            train_policy(&ds, Some(&table), &cfg),
            Err(PolicyError::TableIdMismatch(_))
        ));
    }

    #[test]
    fn missing_table_requires_baseline_mode() {
        let ds = dataset(2, 2);
        let cfg = PolicyTrainConfig { epochs: 1, ..PolicyTrainConfig::default() };
        assert!(matches!(train_policy(&ds, None, &cfg), Err(PolicyError::BadConfig(_))));
    }

    #[test]
    fn zero_network_outputs_zero_action() {
        let model = PolicyModel { mlp: Mlp::zeros(&[4, 8, 2]).unwrap(), action_bound: 1.0 };
        let a = policy_action(&model, &[3.0, -2.0, 1.0, 0.5]).unwrap();
        assert_eq!(a, vec![0.0, 0.0]);
    }

    #[test]
    fn actions_never_exceed_bound() {
        let model = PolicyModel { mlp: Mlp::init(&[4, 16, 2], 8).unwrap(), action_bound: 0.7 };
        for k in 0..100 {
            let s = vec![k as f64 * 5.0 - 250.0, 100.0, -100.0, 0.0];
            let a = policy_action(&model, &s).unwrap();
            assert!(a.iter().all(|v| v.abs() <= 0.7));
        }
    }

    #[test]
    fn policy_action_rejects_dim_mismatch() {
        let model = PolicyModel { mlp: Mlp::zeros(&[4, 2]).unwrap(), action_bound: 1.0 };
        assert!(matches!(
            policy_action(&model, &[1.0, 2.0]),
            Err(PolicyError::DimMismatch(_))
        ));
    }

    #[test]
    fn sidecar_text_is_deterministic() {
        let cfg = PolicyTrainConfig::default();
        let a = sidecar_text(&cfg, &"ab".repeat(32));
        let b = sidecar_text(&cfg, &"ab".repeat(32));
        assert_eq!(a, b);
        assert!(a.contains("baseline_mode false"));
    }
}
