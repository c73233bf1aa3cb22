//! Small MLP function approximators with explicit backprop, the Adam
//! optimizer, and the policy/value/critic network types used by the
//! trainers.
//!
//! Everything is f64 and batch-major (`[batch, features]`); gradients are
//! computed analytically and are checked against central finite differences
//! in the test suites.

use crate::env::Observation;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_2PI: f64 = 1.8378770664093453;

/// One fully connected layer; weights are `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Fully connected network with ReLU activations on every layer except the
/// last, which stays linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Per-layer activations kept by a cached forward pass; `acts[0]` is the
/// input and `acts[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub acts: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("cache holds the input")
    }
}

/// Parameter and input gradients produced by a backward pass.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub dw: Vec<Array2<f64>>,
    pub db: Vec<Array1<f64>>,
    pub dinput: Array2<f64>,
}

/// Orthogonal-style init: orthonormalize a seeded Gaussian matrix along its
/// shorter dimension, then scale by `gain`.
fn orthogonal<R: Rng>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Array2<f64> {
    let mut a = Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal));
    let transpose = rows > cols;
    if transpose {
        a = a.reversed_axes().as_standard_layout().to_owned();
    }
    // modified Gram-Schmidt on the rows
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let proj = a.row(i).dot(&a.row(j));
            let prev = a.row(j).to_owned();
            a.row_mut(i).zip_mut_with(&prev, |x, &p| *x -= proj * p);
        }
        let norm = a.row(i).dot(&a.row(i)).sqrt();
        if norm > 1e-12 {
            a.row_mut(i).mapv_inplace(|x| x / norm);
        }
    }
    if transpose {
        a = a.reversed_axes().as_standard_layout().to_owned();
    }
    a * gain
}

impl Mlp {
    /// Build a network from layer sizes `[in, h1, ..., out]`. Hidden layers
    /// use gain sqrt(2) (ReLU); the output layer uses `out_gain`.
    pub fn new<R: Rng>(dims: &[usize], out_gain: f64, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "a network needs input and output sizes");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let last = i + 2 == dims.len();
                let gain = if last { out_gain } else { 2f64.sqrt() };
                Linear {
                    w: orthogonal(pair[1], pair[0], gain, rng),
                    b: Array1::zeros(pair[1]),
                }
            })
            .collect();
        Mlp { layers }
    }

    /// All-zero network of the given shape (handy in tests).
    pub fn zeros(dims: &[usize]) -> Self {
        let layers = dims
            .windows(2)
            .map(|pair| Linear {
                w: Array2::zeros((pair[1], pair[0])),
                b: Array1::zeros(pair[1]),
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().expect("nonempty network").w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty network").w.nrows()
    }

    /// Layer sizes `[in, h1, ..., out]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.w.nrows()));
        dims
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.input_dim(), "input dimension mismatch");
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.w.t());
            z += &layer.b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        a
    }

    /// Forward pass that keeps every activation for a later backward pass.
    pub fn forward_cached(&self, x: &Array2<f64>) -> ForwardCache {
        assert_eq!(x.ncols(), self.input_dim(), "input dimension mismatch");
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&layer.w.t());
            z += &layer.b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        ForwardCache { acts }
    }

    /// Backpropagate `dout = dL/d(output)` through a cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, dout: &Array2<f64>) -> MlpGrads {
        let n_layers = self.layers.len();
        let mut dw = vec![Array2::zeros((0, 0)); n_layers];
        let mut db = vec![Array1::zeros(0); n_layers];
        let mut g = dout.to_owned();
        for l in (0..n_layers).rev() {
            dw[l] = g.t().dot(&cache.acts[l]);
            db[l] = g.sum_axis(Axis(0));
            g = g.dot(&self.layers[l].w);
            if l > 0 {
                // ReLU mask from the post-activation values
                g.zip_mut_with(&cache.acts[l], |gi, &ai| {
                    if ai <= 0.0 {
                        *gi = 0.0;
                    }
                });
            }
        }
        MlpGrads {
            dw,
            db,
            dinput: g,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Append all parameters (per layer: weights row-major, then biases).
    pub fn append_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
    }

    /// Load parameters from a flat slice; returns the number consumed.
    pub fn load_params(&mut self, src: &[f64]) -> usize {
        let mut pos = 0;
        for l in &mut self.layers {
            for w in l.w.iter_mut() {
                *w = src[pos];
                pos += 1;
            }
            for b in l.b.iter_mut() {
                *b = src[pos];
                pos += 1;
            }
        }
        pos
    }
}

impl MlpGrads {
    /// Append gradients in the same order as [`Mlp::append_params`].
    pub fn append_flat(&self, out: &mut Vec<f64>) {
        for (dw, db) in self.dw.iter().zip(&self.db) {
            out.extend(dw.iter());
            out.extend(db.iter());
        }
    }

    /// Accumulate another gradient of identical shape.
    pub fn add(&mut self, other: &MlpGrads) {
        for (a, b) in self.dw.iter_mut().zip(&other.dw) {
            *a += b;
        }
        for (a, b) in self.db.iter_mut().zip(&other.db) {
            *a += b;
        }
        self.dinput += &other.dinput;
    }
}

/// Polyak-average a target network toward a source:
/// `target = tau * source + (1 - tau) * target`.
pub fn polyak_update(target: &mut Mlp, source: &Mlp, tau: f64) {
    for (t, s) in target.layers.iter_mut().zip(&source.layers) {
        t.w.zip_mut_with(&s.w, |tv, &sv| *tv = tau * sv + (1.0 - tau) * *tv);
        t.b.zip_mut_with(&s.b, |tv, &sv| *tv = tau * sv + (1.0 - tau) * *tv);
    }
}

/// Clip a flat gradient to a maximum global L2 norm; returns the pre-clip
/// norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Gaussian policy head over the one-dimensional raw action: an MLP trunk
/// produces the mean, a state-independent log standard deviation is a
/// trained scalar clamped to [-20, 2].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNetwork {
    pub trunk: Mlp,
    pub log_std: f64,
}

impl PolicyNetwork {
    /// Default hidden widths of the policy trunk.
    pub const HIDDEN: [usize; 2] = [256, 256];

    pub fn new<R: Rng>(obs_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        PolicyNetwork {
            // small output gain keeps the initial mean action near zero
            trunk: Mlp::new(&dims, 0.01, rng),
            log_std: 0.0,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn clamped_log_std(&self) -> f64 {
        self.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)
    }

    pub fn std(&self) -> f64 {
        self.clamped_log_std().exp()
    }

    /// Mean raw actions for a batch of observations.
    pub fn mean_batch(&self, obs: &Array2<f64>) -> Array1<f64> {
        self.trunk.forward(obs).index_axis(Axis(1), 0).to_owned()
    }

    /// Mean raw action for one observation.
    pub fn act_mean(&self, obs: &Observation) -> f64 {
        let x = Array2::from_shape_vec((1, obs.0.len()), obs.0.to_vec()).unwrap();
        self.trunk.forward(&x)[[0, 0]]
    }

    /// Sample a raw action from the Gaussian head.
    pub fn sample<R: Rng>(&self, obs: &Observation, rng: &mut R) -> f64 {
        let noise: f64 = rng.sample(StandardNormal);
        self.act_mean(obs) + self.std() * noise
    }

    /// Log density of a raw action under the Gaussian head.
    pub fn log_prob(&self, mean: f64, action: f64) -> f64 {
        let std = self.std();
        let z = (action - mean) / std;
        -0.5 * z * z - self.clamped_log_std() - 0.5 * LN_2PI
    }

    /// Differential entropy of the Gaussian head.
    pub fn entropy(&self) -> f64 {
        0.5 * (LN_2PI + 1.0) + self.clamped_log_std()
    }

    pub fn n_params(&self) -> usize {
        self.trunk.n_params() + 1
    }

    /// Flat parameters: trunk, then the log standard deviation.
    pub fn collect_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.trunk.append_params(&mut out);
        out.push(self.log_std);
        out
    }

    pub fn assign_params(&mut self, params: &[f64]) {
        let used = self.trunk.load_params(params);
        self.log_std = params[used];
    }
}

/// State-value approximator.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNetwork {
    pub net: Mlp,
}

impl ValueNetwork {
    /// Default hidden widths: one extra 128-wide layer after the trunk.
    pub const HIDDEN: [usize; 3] = [256, 256, 128];

    pub fn new<R: Rng>(obs_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        ValueNetwork {
            net: Mlp::new(&dims, 1.0, rng),
        }
    }

    pub fn values(&self, obs: &Array2<f64>) -> Array1<f64> {
        self.net.forward(obs).index_axis(Axis(1), 0).to_owned()
    }

    pub fn value_one(&self, obs: &Observation) -> f64 {
        let x = Array2::from_shape_vec((1, obs.0.len()), obs.0.to_vec()).unwrap();
        self.net.forward(&x)[[0, 0]]
    }
}

/// Twin action-value critics with slowly updated target copies. The two
/// critics share no parameters; inputs are observation ⊕ action.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinQNetwork {
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
}

impl TwinQNetwork {
    /// Default hidden widths of each critic.
    pub const HIDDEN: [usize; 2] = [256, 256];

    pub fn new<R: Rng>(obs_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut dims = vec![obs_dim + action_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let q1 = Mlp::new(&dims, 1.0, rng);
        let q2 = Mlp::new(&dims, 1.0, rng);
        TwinQNetwork {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
        }
    }

    /// Polyak-average both targets toward the live critics.
    pub fn update_targets(&mut self, tau: f64) {
        polyak_update(&mut self.q1_target, &self.q1, tau);
        polyak_update(&mut self.q2_target, &self.q2, tau);
    }
}

/// Errors from reading a policy checkpoint.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint not found or unreadable: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint parameter count {got} does not match architecture (expected {expected})")]
    ParamCount { got: usize, expected: usize },
}

/// Versioned policy container: architecture descriptor plus the flat trunk
/// parameter array.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub version: u32,
    pub algo: String,
    pub obs_dim: usize,
    pub hidden: Vec<usize>,
    pub log_std: f64,
    pub params: Vec<f64>,
    pub trained_steps: u64,
    pub seed: u64,
}

impl PolicyCheckpoint {
    pub const VERSION: u32 = 1;

    pub fn from_policy(policy: &PolicyNetwork, algo: &str, trained_steps: u64, seed: u64) -> Self {
        let dims = policy.trunk.dims();
        let mut params = Vec::with_capacity(policy.trunk.n_params());
        policy.trunk.append_params(&mut params);
        PolicyCheckpoint {
            version: Self::VERSION,
            algo: algo.to_string(),
            obs_dim: dims[0],
            hidden: dims[1..dims.len() - 1].to_vec(),
            log_std: policy.log_std,
            params,
            trained_steps,
            seed,
        }
    }

    pub fn to_policy(&self) -> Result<PolicyNetwork, CheckpointError> {
        if self.version != Self::VERSION {
            return Err(CheckpointError::Version(self.version));
        }
        let mut dims = vec![self.obs_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(1);
        let mut trunk = Mlp::zeros(&dims);
        if trunk.n_params() != self.params.len() {
            return Err(CheckpointError::ParamCount {
                got: self.params.len(),
                expected: trunk.n_params(),
            });
        }
        trunk.load_params(&self.params);
        Ok(PolicyNetwork {
            trunk,
            log_std: self.log_std,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
