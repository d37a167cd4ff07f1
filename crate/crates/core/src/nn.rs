//! Minimal feed-forward network with hand-derived gradients, the two losses
//! used by the pipeline, and a bias-corrected adaptive-moment optimizer.
//!
//! Layers are affine with tanh hidden activations and an identity output;
//! consumers apply their own heads (a sigmoid for the discriminator, a
//! scaled tanh for the policy). Dot products accumulate left to right in
//! input order, which fixes the floating-point result exactly; checkpoint
//! reimplementations can reproduce scores to the last bit.

use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("bad network shape: {0}")]
    BadShape(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Checkpoint layout version.
pub const CHECKPOINT_VERSION: i64 = 1;

/// Fully-connected network parameters. `weights[l]` is row-major
/// `(layer_sizes[l+1] x layer_sizes[l])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Per-layer activations from a forward pass: `activations[0]` is the input,
/// hidden entries are post-tanh, the last entry is the identity output.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    pub activations: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Reusable delta buffers for [`Mlp::backward_with`].
#[derive(Debug, Clone, Default)]
pub struct BackpropScratch {
    delta: Vec<f64>,
    prev: Vec<f64>,
}

/// Parameter gradients with the same shapes as [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub d_weights: Vec<Vec<f64>>,
    pub d_biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            d_weights: mlp.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            d_biases: mlp.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn reset(&mut self) {
        for w in &mut self.d_weights {
            w.fill(0.0);
        }
        for b in &mut self.d_biases {
            b.fill(0.0);
        }
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<(), NnError> {
    if layer_sizes.len() < 2 {
        return Err(NnError::BadShape(format!(
            "need at least input and output sizes, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.iter().any(|s| *s == 0) {
        return Err(NnError::BadShape(format!("zero-width layer in {layer_sizes:?}")));
    }
    Ok(())
}

impl Mlp {
    /// Glorot-uniform weights (`+/- sqrt(6 / (fan_in + fan_out))`), zero
    /// biases, seeded and deterministic.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self, NnError> {
        check_sizes(layer_sizes)?;
        let mut r = rng::stream(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_sizes.len() - 1 {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> =
                (0..fan_in * fan_out).map(|_| r.random_range(-bound..bound)).collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self { layer_sizes: layer_sizes.to_vec(), weights, biases })
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self, NnError> {
        check_sizes(layer_sizes)?;
        let weights = (0..layer_sizes.len() - 1)
            .map(|l| vec![0.0; layer_sizes[l] * layer_sizes[l + 1]])
            .collect();
        let biases = (1..layer_sizes.len()).map(|l| vec![0.0; layer_sizes[l]]).collect();
        Ok(Self { layer_sizes: layer_sizes.to_vec(), weights, biases })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// Forward pass reusing the caller's cache buffers.
    pub fn forward_into(&self, input: &[f64], cache: &mut Cache) -> Result<(), NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::ShapeMismatch(format!(
                "input length {} vs input dim {}",
                input.len(),
                self.input_dim()
            )));
        }
        if !input.iter().all(|v| v.is_finite()) {
            return Err(NnError::NonFinite("input"));
        }
        cache.activations.resize(self.num_layers() + 1, Vec::new());
        cache.activations[0].clear();
        cache.activations[0].extend_from_slice(input);
        for l in 0..self.num_layers() {
            let n_in = self.layer_sizes[l];
            let n_out = self.layer_sizes[l + 1];
            let last = l + 1 == self.num_layers();
            let (head, tail) = cache.activations.split_at_mut(l + 1);
            let x = &head[l][..n_in];
            let out = &mut tail[0];
            out.resize(n_out, 0.0);
            let w = &self.weights[l][..n_in * n_out];
            let b = &self.biases[l][..n_out];
            // Eight outputs at a time: independent accumulators break the
            // FP-add latency chain. Each output still sums in ascending
            // input order, so results are bit-identical to the plain loop.
            let mut i = 0;
            while i + 8 <= n_out {
                let rows: [&[f64]; 8] =
                    std::array::from_fn(|k| &w[(i + k) * n_in..(i + k + 1) * n_in]);
                let mut acc: [f64; 8] = std::array::from_fn(|k| b[i + k]);
                for j in 0..n_in {
                    let xj = x[j];
                    for k in 0..8 {
                        acc[k] += rows[k][j] * xj;
                    }
                }
                for k in 0..8 {
                    out[i + k] = if last { acc[k] } else { acc[k].tanh() };
                }
                i += 8;
            }
            while i < n_out {
                let row = &w[i * n_in..(i + 1) * n_in];
                let mut acc = b[i];
                for j in 0..n_in {
                    acc += row[j] * x[j];
                }
                out[i] = if last { acc } else { acc.tanh() };
                i += 1;
            }
        }
        if !cache.output().iter().all(|v| v.is_finite()) {
            return Err(NnError::NonFinite("output"));
        }
        Ok(())
    }

    /// Affine + tanh composition with an identity output layer.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Cache), NnError> {
        let mut cache = Cache::default();
        self.forward_into(input, &mut cache)?;
        Ok((cache.output().to_vec(), cache))
    }

    /// Reverse-mode gradients for one sample, accumulated into `grads`,
    /// reusing the caller's scratch buffers.
    pub fn backward_with(
        &self,
        cache: &Cache,
        d_output: &[f64],
        grads: &mut Gradients,
        scratch: &mut BackpropScratch,
    ) -> Result<(), NnError> {
        if cache.activations.len() != self.num_layers() + 1 {
            return Err(NnError::ShapeMismatch("cache does not match network depth".into()));
        }
        if d_output.len() != self.output_dim() {
            return Err(NnError::ShapeMismatch(format!(
                "output gradient length {} vs output dim {}",
                d_output.len(),
                self.output_dim()
            )));
        }
        scratch.delta.clear();
        scratch.delta.extend_from_slice(d_output);
        for l in (0..self.num_layers()).rev() {
            let n_in = self.layer_sizes[l];
            let n_out = self.layer_sizes[l + 1];
            if cache.activations[l].len() != n_in {
                return Err(NnError::ShapeMismatch("cache activation width".into()));
            }
            let x = &cache.activations[l][..n_in];
            {
                let delta = &scratch.delta[..n_out];
                let gw = &mut grads.d_weights[l][..n_in * n_out];
                let gb = &mut grads.d_biases[l][..n_out];
                for i in 0..n_out {
                    let di = delta[i];
                    gb[i] += di;
                    let row = &mut gw[i * n_in..(i + 1) * n_in];
                    for j in 0..n_in {
                        row[j] += di * x[j];
                    }
                }
            }
            if l > 0 {
                let w = &self.weights[l][..n_in * n_out];
                scratch.prev.clear();
                scratch.prev.resize(n_in, 0.0);
                {
                    let delta = &scratch.delta[..n_out];
                    let prev = &mut scratch.prev[..n_in];
                    for i in 0..n_out {
                        let di = delta[i];
                        let row = &w[i * n_in..(i + 1) * n_in];
                        for j in 0..n_in {
                            prev[j] += di * row[j];
                        }
                    }
                    // tanh'(z) in terms of the cached post-activation
                    for j in 0..n_in {
                        prev[j] *= 1.0 - x[j] * x[j];
                    }
                }
                std::mem::swap(&mut scratch.delta, &mut scratch.prev);
            }
        }
        Ok(())
    }

    /// Reverse-mode gradients for one sample, accumulated into `grads`.
    pub fn backward_into(
        &self,
        cache: &Cache,
        d_output: &[f64],
        grads: &mut Gradients,
    ) -> Result<(), NnError> {
        let mut scratch = BackpropScratch::default();
        self.backward_with(cache, d_output, grads, &mut scratch)
    }

    /// Exact reverse-mode gradients of the forward map.
    pub fn backward(&self, cache: &Cache, d_output: &[f64]) -> Result<Gradients, NnError> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(cache, d_output, &mut grads)?;
        Ok(grads)
    }

    /// Versioned little-endian checkpoint bytes: version, layer count,
    /// layer sizes, then per-layer weights (row-major) and biases.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.layer_sizes.len() as i64).to_le_bytes());
        for s in &self.layer_sizes {
            buf.extend_from_slice(&(*s as i64).to_le_bytes());
        }
        for l in 0..self.num_layers() {
            for v in &self.weights[l] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in &self.biases[l] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], NnError> {
            if pos + n > bytes.len() {
                return Err(NnError::BadCheckpoint("truncated".into()));
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            Ok(s)
        };
        let version = i64::from_le_bytes(take(8)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(NnError::BadCheckpoint(format!("unsupported version {version}")));
        }
        let n_sizes = i64::from_le_bytes(take(8)?.try_into().unwrap());
        let n_sizes = usize::try_from(n_sizes)
            .map_err(|_| NnError::BadCheckpoint("negative layer count".into()))?;
        let mut layer_sizes = Vec::with_capacity(n_sizes);
        for _ in 0..n_sizes {
            let s = i64::from_le_bytes(take(8)?.try_into().unwrap());
            layer_sizes
                .push(usize::try_from(s).map_err(|_| NnError::BadCheckpoint("negative size".into()))?);
        }
        check_sizes(&layer_sizes).map_err(|e| NnError::BadCheckpoint(e.to_string()))?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..n_sizes - 1 {
            let (n_in, n_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let mut w = Vec::with_capacity(n_in * n_out);
            for _ in 0..n_in * n_out {
                w.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
            }
            let mut b = Vec::with_capacity(n_out);
            for _ in 0..n_out {
                b.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
            }
            weights.push(w);
            biases.push(b);
        }
        if pos != bytes.len() {
            return Err(NnError::BadCheckpoint(format!(
                "{} trailing bytes",
                bytes.len() - pos
            )));
        }
        Ok(Self { layer_sizes, weights, biases })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Numerically stable binary cross-entropy on logits.
/// Returns the mean loss and the per-logit gradient `(sigmoid(z) - y) / n`.
pub fn bce_with_logits(logits: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(logits.len(), labels.len(), "logits and labels must have equal length");
    assert!(!logits.is_empty(), "bce_with_logits needs at least one sample");
    debug_assert!(labels.iter().all(|y| *y == 0.0 || *y == 1.0));
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (z, y) in logits.iter().zip(labels) {
        loss += softplus(*z) - y * z;
        grad.push((sigmoid(*z) - y) / n);
    }
    (loss / n, grad)
}

/// Weighted mean squared error normalized by the weight sum:
/// `L = sum_j w_j |pred_j - target_j|^2 / sum_j w_j`, with `L = 0` when the
/// weight sum is zero. Gradients follow the same normalization.
pub fn weighted_mse(
    preds: &[Vec<f64>],
    targets: &[Vec<f64>],
    weights: &[f64],
) -> (f64, Vec<Vec<f64>>) {
    assert_eq!(preds.len(), targets.len());
    assert_eq!(preds.len(), weights.len());
    assert!(weights.iter().all(|w| *w >= 0.0), "weights must be non-negative");
    let sw: f64 = weights.iter().sum();
    if sw == 0.0 {
        return (0.0, preds.iter().map(|p| vec![0.0; p.len()]).collect());
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(preds.len());
    for ((p, t), w) in preds.iter().zip(targets).zip(weights) {
        assert_eq!(p.len(), t.len());
        let mut g = Vec::with_capacity(p.len());
        for (pi, ti) in p.iter().zip(t) {
            let d = pi - ti;
            loss += w * d * d;
            g.push(2.0 * w * d / sw);
        }
        grads.push(g);
    }
    (loss / sw, grads)
}

/// Bias-corrected adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m_weights: Vec<Vec<f64>>,
    pub v_weights: Vec<Vec<f64>>,
    pub m_biases: Vec<Vec<f64>>,
    pub v_biases: Vec<Vec<f64>>,
    pub t: u64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(mlp: &Mlp, alpha: f64) -> Self {
        Self {
            m_weights: mlp.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v_weights: mlp.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            m_biases: mlp.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_biases: mlp.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            t: 0,
            alpha,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update step applied in place.
    pub fn step(&mut self, params: &mut Mlp, grads: &Gradients) -> Result<(), NnError> {
        if grads.d_weights.len() != params.weights.len() {
            return Err(NnError::ShapeMismatch("gradient layer count".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let apply = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| -> Result<(), NnError> {
            if p.len() != g.len() {
                return Err(NnError::ShapeMismatch("gradient width".into()));
            }
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.alpha * m_hat / (v_hat.sqrt() + self.eps);
            }
            Ok(())
        };
        for l in 0..params.weights.len() {
            apply(
                &mut params.weights[l],
                &grads.d_weights[l],
                &mut self.m_weights[l],
                &mut self.v_weights[l],
            )?;
            apply(
                &mut params.biases[l],
                &grads.d_biases[l],
                &mut self.m_biases[l],
                &mut self.v_biases[l],
            )?;
        }
        Ok(())
    }
}

/// Per-epoch loss record emitted by the training loops.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn push(&mut self, epoch: usize, mean_loss: f64) {
        debug_assert_eq!(epoch, self.records.len() + 1, "epochs must be contiguous from 1");
        self.records.push(EpochRecord { epoch, mean_loss });
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.mean_loss)
    }
}

#[cfg(test)]
pub(crate) mod gradcheck {
    use super::*;

    /// Central-difference check of `backward` against the scalar objective
    /// `J(params) = sum_k c_k * f_k(x)` for a fixed random direction `c`.
    pub fn check_mlp(mlp: &Mlp, x: &[f64], c: &[f64], h: f64, rel_tol: f64) {
        let (_, cache) = mlp.forward(x).unwrap();
        let grads = mlp.backward(&cache, c).unwrap();
        let objective = |m: &Mlp| -> f64 {
            let (out, _) = m.forward(x).unwrap();
            out.iter().zip(c).map(|(o, ci)| o * ci).sum()
        };
        let mut probe = mlp.clone();
        for l in 0..mlp.num_layers() {
            for i in 0..mlp.weights[l].len() {
                let orig = probe.weights[l][i];
                probe.weights[l][i] = orig + h;
                let jp = objective(&probe);
                probe.weights[l][i] = orig - h;
                let jm = objective(&probe);
                probe.weights[l][i] = orig;
                let numeric = (jp - jm) / (2.0 * h);
                let analytic = grads.d_weights[l][i];
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (analytic - numeric).abs() / denom <= rel_tol,
                    "weight[{l}][{i}]: analytic {analytic} vs numeric {numeric}"
                );
            }
            for i in 0..mlp.biases[l].len() {
                let orig = probe.biases[l][i];
                probe.biases[l][i] = orig + h;
                let jp = objective(&probe);
                probe.biases[l][i] = orig - h;
                let jm = objective(&probe);
                probe.biases[l][i] = orig;
                let numeric = (jp - jm) / (2.0 * h);
                let analytic = grads.d_biases[l][i];
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (analytic - numeric).abs() / denom <= rel_tol,
                    "bias[{l}][{i}]: analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }
}
