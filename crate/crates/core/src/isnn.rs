//! Input-sublinear neural network.
//!
//! A ReLU network without biases whose feedforward weights are nonnegative
//! and whose every layer also sees the input directly:
//!
//! ```text
//! z_1     = relu(Wy_0 y)
//! z_{k+1} = relu(Wz_k z_k + Wy_k y)        k = 1 .. L-1
//! f(y)    = Wz_L z_L + Wy_L y
//! ```
//!
//! Every map with `Wz >= 0` is convex and positively homogeneous in `y`,
//! hence a support function. Training uses Adam followed by projection of
//! the feedforward weights onto the nonnegative orthant.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SupportFunction, SupportSamples};
use crate::rng::{stream, StreamTag};

/// Hidden widths used in the reference experiments.
pub const DEFAULT_WIDTHS: [usize; 5] = [5, 20, 50, 20, 5];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IsnnArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

impl IsnnArchitecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>) -> Result<Self> {
        if input_dim == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::invalid("ISNN needs input_dim >= 1 and at least one hidden layer, all widths >= 1"));
        }
        Ok(IsnnArchitecture { input_dim, hidden })
    }

    pub fn with_default_widths(input_dim: usize) -> Result<Self> {
        Self::new(input_dim, DEFAULT_WIDTHS.to_vec())
    }

    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    /// Shapes `(rows, cols)` of the passthrough matrices `Wy_0 .. Wy_L`.
    fn passthrough_shapes(&self) -> Vec<(usize, usize)> {
        self.hidden
            .iter()
            .copied()
            .chain(std::iter::once(1))
            .map(|r| (r, self.input_dim))
            .collect()
    }

    /// Shapes of the feedforward matrices `Wz_1 .. Wz_L`.
    fn feedforward_shapes(&self) -> Vec<(usize, usize)> {
        self.hidden
            .iter()
            .enumerate()
            .map(|(k, &c)| (self.hidden.get(k + 1).copied().unwrap_or(1), c))
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.passthrough_shapes()
            .iter()
            .chain(&self.feedforward_shapes())
            .map(|(r, c)| r * c)
            .sum()
    }
}

/// Dense row-major matrix, serialized as a list of rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self * x`.
    fn mul_add(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o += self.row(r).iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `out += self' * x`.
    fn mul_t_add(&self, x: &[f64], out: &mut [f64]) {
        for (r, &xr) in x.iter().enumerate() {
            if xr != 0.0 {
                for (o, a) in out.iter_mut().zip(self.row(r)) {
                    *o += a * xr;
                }
            }
        }
    }

    /// `self += s * u v'`.
    fn add_outer(&mut self, s: f64, u: &[f64], v: &[f64]) {
        for (r, &ur) in u.iter().enumerate() {
            let f = s * ur;
            if f != 0.0 {
                for (a, b) in self.data[r * self.cols..(r + 1) * self.cols].iter_mut().zip(v) {
                    *a += f * b;
                }
            }
        }
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("matrix rows differ in length"));
        }
        Ok(Matrix { rows: rows.len(), cols, data: rows.concat() })
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        if m.cols == 0 {
            return vec![Vec::new(); m.rows];
        }
        m.data.chunks(m.cols).map(<[f64]>::to_vec).collect()
    }
}

/// Network weights. `w_y[k]` feeds the input into layer `k` (the last one
/// into the output); `w_z[k]` maps hidden layer `k` to the next layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsnnParams {
    pub w_y: Vec<Matrix>,
    pub w_z: Vec<Matrix>,
}

/// Per-layer values from a forward pass.
struct Trace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    output: f64,
}

impl IsnnParams {
    pub fn zeros(arch: &IsnnArchitecture) -> Self {
        IsnnParams {
            w_y: arch.passthrough_shapes().into_iter().map(|(r, c)| Matrix::zeros(r, c)).collect(),
            w_z: arch.feedforward_shapes().into_iter().map(|(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    /// Fan-in scaled initialization: `Wy ~ N(0, 1/d)` and
    /// `Wz ~ |N(0, 1/fan_in^2)|`, nonnegative from the start.
    pub fn init<R: Rng + ?Sized>(arch: &IsnnArchitecture, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        let sy = (arch.input_dim as f64).recip().sqrt();
        for m in &mut p.w_y {
            for w in m.as_mut_slice() {
                *w = sy * rng.sample::<f64, _>(StandardNormal);
            }
        }
        for m in &mut p.w_z {
            let sz = (m.cols() as f64).recip();
            for w in m.as_mut_slice() {
                *w = sz * rng.sample::<f64, _>(StandardNormal).abs();
            }
        }
        p
    }

    /// Shape check against `arch`.
    pub fn validate(&self, arch: &IsnnArchitecture) -> Result<()> {
        let shapes = |ms: &[Matrix]| ms.iter().map(|m| (m.rows(), m.cols())).collect::<Vec<_>>();
        if shapes(&self.w_y) != arch.passthrough_shapes() || shapes(&self.w_z) != arch.feedforward_shapes() {
            return Err(Error::invalid("ISNN weight shapes do not match the architecture"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.w_y[0].cols()
    }

    pub fn is_nonneg(&self) -> bool {
        self.w_z.iter().all(|m| m.as_slice().iter().all(|&w| w >= 0.0))
    }

    fn matrices(&self) -> impl Iterator<Item = &Matrix> {
        self.w_y.iter().chain(&self.w_z)
    }

    fn matrices_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.w_y.iter_mut().chain(&mut self.w_z)
    }

    /// All weights, passthrough matrices first.
    pub fn flatten(&self) -> Vec<f64> {
        self.matrices().flat_map(|m| m.as_slice().iter().copied()).collect()
    }

    /// Inverse of [`IsnnParams::flatten`] on a parameter set of equal shape.
    pub fn assign(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for m in self.matrices_mut() {
            for (w, v) in m.as_mut_slice().iter_mut().zip(&mut it) {
                *w = *v;
            }
        }
    }

    fn trace(&self, y: &[f64]) -> Trace {
        let depth = self.w_z.len();
        let mut pre = Vec::with_capacity(depth);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(depth);
        for k in 0..depth {
            let mut a = vec![0.0; self.w_y[k].rows()];
            self.w_y[k].mul_add(y, &mut a);
            if k > 0 {
                self.w_z[k - 1].mul_add(&post[k - 1], &mut a);
            }
            post.push(a.iter().map(|&v| v.max(0.0)).collect());
            pre.push(a);
        }
        let mut out = [0.0];
        self.w_y[depth].mul_add(y, &mut out);
        self.w_z[depth - 1].mul_add(&post[depth - 1], &mut out);
        Trace { pre, post, output: out[0] }
    }

    /// Network output at `y`.
    pub fn forward(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: y.len() });
        }
        Ok(self.trace(y).output)
    }

    /// Smallest |pre-activation| over all hidden units at `y`.
    pub fn kink_margin(&self, y: &[f64]) -> f64 {
        self.trace(y)
            .pre
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, a| m.min(a.abs()))
    }

    /// Mean squared error over `batch` and its exact gradient.
    pub fn backward(&self, batch: &[(&[f64], f64)]) -> Result<(IsnnParams, f64)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut grad = IsnnParams {
            w_y: self.w_y.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
            w_z: self.w_z.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
        };
        let depth = self.w_z.len();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &(y, target) in batch {
            if y.len() != self.input_dim() {
                return Err(Error::DimensionMismatch { expected: self.input_dim(), got: y.len() });
            }
            let tr = self.trace(y);
            let err = tr.output - target;
            loss += err * err;
            let s = 2.0 * scale * err;
            grad.w_y[depth].add_outer(s, &[1.0], y);
            grad.w_z[depth - 1].add_outer(s, &[1.0], &tr.post[depth - 1]);
            let mut delta = vec![0.0; self.w_z[depth - 1].cols()];
            self.w_z[depth - 1].mul_t_add(&[s], &mut delta);
            for k in (0..depth).rev() {
                for (d, a) in delta.iter_mut().zip(&tr.pre[k]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
                grad.w_y[k].add_outer(1.0, &delta, y);
                if k > 0 {
                    grad.w_z[k - 1].add_outer(1.0, &delta, &tr.post[k - 1]);
                    let mut next = vec![0.0; self.w_z[k - 1].cols()];
                    self.w_z[k - 1].mul_t_add(&delta, &mut next);
                    delta = next;
                }
            }
        }
        Ok((grad, loss * scale))
    }

    /// Clamps every feedforward weight at zero from below.
    pub fn project_nonneg(&mut self) {
        for m in &mut self.w_z {
            for w in m.as_mut_slice() {
                *w = w.max(0.0);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// `None` trains on the full batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 40,
            batch_size: None,
            seed: 0,
        }
    }
}

impl AdamConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.batch_size != Some(0);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("Adam needs lr > 0, betas in [0, 1), epsilon > 0 and a positive batch size"))
        }
    }
}

/// Adam moment estimates for a flat parameter vector.
struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(cfg: AdamConfig, n: usize) -> Self {
        Adam { cfg, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= c.learning_rate * mh / (vh.sqrt() + c.epsilon);
        }
    }
}

/// Bookkeeping attached to a trained network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub adam: AdamConfig,
    pub epochs: usize,
    pub seed: u64,
    /// Full-data MSE after each epoch.
    pub loss_history: Vec<f64>,
    pub final_loss: Option<f64>,
    pub seconds: f64,
}

/// Trained network; evaluates as a support function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsnnModel {
    pub arch: IsnnArchitecture,
    pub params: IsnnParams,
    pub training: TrainingInfo,
}

impl IsnnModel {
    pub fn validate(&self) -> Result<()> {
        self.params.validate(&self.arch)?;
        if !self.params.is_nonneg() {
            return Err(Error::invalid("ISNN feedforward weights must be nonnegative"));
        }
        Ok(())
    }
}

impl SupportFunction for IsnnModel {
    fn dim(&self) -> usize {
        self.arch.input_dim
    }

    fn eval(&self, z: &[f64]) -> f64 {
        self.params.trace(z).output
    }
}

fn mse(params: &IsnnParams, data: &[(&[f64], f64)]) -> f64 {
    data.iter().map(|(y, t)| (params.trace(y).output - t).powi(2)).sum::<f64>() / data.len() as f64
}

/// Trains from the seeded initialization with projected Adam.
pub fn train_isnn(samples: &SupportSamples, arch: &IsnnArchitecture, adam: &AdamConfig) -> Result<IsnnModel> {
    let mut rng = stream(adam.seed, StreamTag::Network, 0);
    let params = IsnnParams::init(arch, &mut rng);
    train_isnn_from(samples, arch, params, adam)
}

/// Trains from given initial weights (projected before the first step).
pub fn train_isnn_from(
    samples: &SupportSamples,
    arch: &IsnnArchitecture,
    mut params: IsnnParams,
    adam: &AdamConfig,
) -> Result<IsnnModel> {
    adam.validate()?;
    params.validate(arch)?;
    if samples.dim() != arch.input_dim {
        return Err(Error::DimensionMismatch { expected: arch.input_dim, got: samples.dim() });
    }
    let start = Instant::now();
    params.project_nonneg();
    let data: Vec<(&[f64], f64)> = samples
        .directions()
        .iter()
        .zip(samples.values())
        .map(|(y, &h)| (y.coords(), h))
        .collect();
    let batch = adam.batch_size.unwrap_or(data.len()).min(data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle = stream(adam.seed, StreamTag::Network, 1);
    let mut opt = Adam::new(*adam, arch.num_parameters());
    let mut flat = params.flatten();
    let mut history = Vec::with_capacity(adam.epochs);

    for epoch in 0..adam.epochs {
        if batch < data.len() {
            order.shuffle(&mut shuffle);
        }
        for (b, idx) in order.chunks(batch).enumerate() {
            let chunk: Vec<(&[f64], f64)> = idx.iter().map(|&i| data[i]).collect();
            let (grad, loss) = params.backward(&chunk)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            opt.step(&mut flat, &grad.flatten());
            params.assign(&flat);
            params.project_nonneg();
            flat = params.flatten();
        }
        let loss = mse(&params, &data);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: order.len().div_ceil(batch) });
        }
        history.push(loss);
    }

    Ok(IsnnModel {
        arch: arch.clone(),
        params,
        training: TrainingInfo {
            adam: *adam,
            epochs: adam.epochs,
            seed: adam.seed,
            final_loss: history.last().copied(),
            loss_history: history,
            seconds: start.elapsed().as_secs_f64(),
        },
    })
}
