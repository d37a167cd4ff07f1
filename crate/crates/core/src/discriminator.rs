//! Transition discriminator: separates reference transitions (label 1) from
//! main-dataset transitions (label 0) with balanced batches and binary
//! cross-entropy. Downstream density ratios assume exactly this label
//! convention.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{TrajectoryDataset, Transition};
use crate::nn::{
    sigmoid, softplus, AdamState, BackpropScratch, Cache, Gradients, Mlp, NnError, TrainLog,
};
use crate::rng;

#[derive(Debug, Error)]
pub enum DiscError {
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscTrainConfig {
    /// Optimizer steps; one balanced batch pair per epoch.
    pub epochs: usize,
    /// Transitions drawn per side each epoch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for DiscTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20_000,
            batch_size: 128,
            learning_rate: 3e-3,
            hidden: vec![64, 64],
            seed: 0,
        }
    }
}

/// The transition classifier. Input is `[state; action]`, output one logit.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorModel {
    pub mlp: Mlp,
}

impl DiscriminatorModel {
    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }
}

/// One balanced sample: `ref_batch` carries label 1, `main_batch` label 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPair {
    pub ref_batch: Vec<Transition>,
    pub main_batch: Vec<Transition>,
}

fn flat_pool(ds: &TrajectoryDataset) -> Vec<&Transition> {
    ds.trajectories.iter().flat_map(|t| t.transitions.iter()).collect()
}

fn check_dims(d_ref: &TrajectoryDataset, d_main: &TrajectoryDataset) -> Result<(), DiscError> {
    if d_ref.header.state_dim != d_main.header.state_dim
        || d_ref.header.action_dim != d_main.header.action_dim
    {
        return Err(DiscError::DimMismatch(format!(
            "reference dims {}/{} vs main dims {}/{}",
            d_ref.header.state_dim,
            d_ref.header.action_dim,
            d_main.header.state_dim,
            d_main.header.action_dim
        )));
    }
    Ok(())
}

/// Uniform with-replacement sample of `batch_size` transitions per side.
pub fn sample_balanced_batch(
    d_ref: &TrajectoryDataset,
    d_main: &TrajectoryDataset,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BatchPair, DiscError> {
    check_dims(d_ref, d_main)?;
    let ref_pool = flat_pool(d_ref);
    let main_pool = flat_pool(d_main);
    if ref_pool.is_empty() || main_pool.is_empty() {
        return Err(DiscError::EmptyDataset);
    }
    let ref_batch =
        (0..batch_size).map(|_| ref_pool[rng.random_range(0..ref_pool.len())].clone()).collect();
    let main_batch =
        (0..batch_size).map(|_| main_pool[rng.random_range(0..main_pool.len())].clone()).collect();
    Ok(BatchPair { ref_batch, main_batch })
}

/// Flattened `[state; action]` feature matrix of every transition, in
/// dataset order.
fn feature_matrix(ds: &TrajectoryDataset) -> (Vec<f64>, usize) {
    let dim = ds.header.state_dim + ds.header.action_dim;
    let mut flat = Vec::with_capacity(ds.transition_count() * dim);
    for traj in &ds.trajectories {
        for tr in &traj.transitions {
            flat.extend_from_slice(&tr.state);
            flat.extend_from_slice(&tr.action);
        }
    }
    let count = flat.len() / dim;
    (flat, count)
}

/// Trains the discriminator: per epoch, one balanced batch pair (reference
/// side drawn first) and one optimizer step on the mean BCE-with-logits
/// loss. Deterministic per seed.
pub fn train_discriminator(
    d_ref: &TrajectoryDataset,
    d_main: &TrajectoryDataset,
    cfg: &DiscTrainConfig,
) -> Result<(DiscriminatorModel, TrainLog), DiscError> {
    check_dims(d_ref, d_main)?;
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(DiscError::BadConfig("epochs and batch_size must be >= 1".into()));
    }
    let in_dim = d_ref.header.state_dim + d_ref.header.action_dim;
    let (ref_pool, n_ref) = feature_matrix(d_ref);
    let (main_pool, n_main) = feature_matrix(d_main);
    if n_ref == 0 || n_main == 0 {
        return Err(DiscError::EmptyDataset);
    }

    let mut sizes = vec![in_dim];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(1);
    let mut mlp = Mlp::init(&sizes, cfg.seed)?;
    let mut adam = AdamState::new(&mlp, cfg.learning_rate);
    let mut sampler = rng::substream(cfg.seed, rng::SALT_DISC_SAMPLER, 0);

    let total = 2 * cfg.batch_size;
    let mut cache = Cache::default();
    let mut grads = Gradients::zeros_like(&mlp);
    let mut scratch = BackpropScratch::default();
    let mut log = TrainLog::default();
    for epoch in 1..=cfg.epochs {
        grads.reset();
        let mut loss_sum = 0.0;
        for (pool, count, label) in [(&ref_pool, n_ref, 1.0), (&main_pool, n_main, 0.0)] {
            for _ in 0..cfg.batch_size {
                let idx = sampler.random_range(0..count);
                let x = &pool[idx * in_dim..(idx + 1) * in_dim];
                mlp.forward_into(x, &mut cache)?;
                let z = cache.output()[0];
                // per-sample BCE-with-logits terms of the batch mean loss
                loss_sum += softplus(z) - label * z;
                let g = (sigmoid(z) - label) / total as f64;
                mlp.backward_with(&cache, &[g], &mut grads, &mut scratch)?;
            }
        }
        adam.step(&mut mlp, &grads)?;
        log.push(epoch, loss_sum / total as f64);
    }
    Ok((DiscriminatorModel { mlp }, log))
}

fn check_input(model: &DiscriminatorModel, state: &[f64], action: &[f64]) -> Result<(), DiscError> {
    if state.len() + action.len() != model.input_dim() {
        return Err(DiscError::DimMismatch(format!(
            "state+action length {} vs discriminator input {}",
            state.len() + action.len(),
            model.input_dim()
        )));
    }
    Ok(())
}

/// Raw network logit on `[state; action]`.
pub fn transition_logit(
    model: &DiscriminatorModel,
    state: &[f64],
    action: &[f64],
) -> Result<f64, DiscError> {
    check_input(model, state, action)?;
    let mut x = Vec::with_capacity(model.input_dim());
    x.extend_from_slice(state);
    x.extend_from_slice(action);
    let (out, _) = model.mlp.forward(&x)?;
    Ok(out[0])
}

/// Probability that the transition came from the reference set; strictly
/// inside (0, 1) for finite inputs.
pub fn score_transition(
    model: &DiscriminatorModel,
    state: &[f64],
    action: &[f64],
) -> Result<f64, DiscError> {
    Ok(sigmoid(transition_logit(model, state, action)?))
}
