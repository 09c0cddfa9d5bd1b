//! Box-constrained Gaussian-process input paths.
//!
//! Each input channel is a GP on a fixed time grid with squared-exponential
//! covariance and mean at the center of its interval. The finite-dimensional
//! law conditioned on the box is a truncated multivariate normal, sampled by
//! coordinate-wise Gibbs sweeps with exact 1-D truncated-normal conditionals
//! (the Metropolis-Hastings acceptance of such a move is always one).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::rng::{stream, StreamTag};

/// Diagonal jitter added to every covariance before factorization.
pub const JITTER: f64 = 1e-8;

/// CDF mass below which the inverse-CDF draw gives way to rejection.
const MIN_CDF_MASS: f64 = 1e-14;

/// Standard normal CDF, accurate in the lower tail.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal quantile, accurate for small `p`.
pub fn normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Draw from the standard normal restricted to `[a, b]`.
pub fn truncated_standard_normal<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    debug_assert!(a <= b);
    if a >= b {
        return a;
    }
    // Keep the interval on the left so both CDF values live in the
    // accurately represented lower tail.
    if a > 0.0 {
        return -truncated_standard_normal(-b, -a, rng);
    }
    let pa = normal_cdf(a);
    let pb = normal_cdf(b);
    let x = if pb - pa < MIN_CDF_MASS {
        if b <= 0.0 {
            -tail_rejection(-b, -a, rng)
        } else {
            narrow_rejection(a, b, rng)
        }
    } else {
        let u: f64 = rng.random();
        normal_quantile(pa + u * (pb - pa))
    };
    x.clamp(a, b)
}

/// Uniform-proposal rejection on an interval containing 0.
fn narrow_rejection<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    loop {
        let z = rng.random_range(a..=b);
        if rng.random::<f64>() <= (-0.5 * z * z).exp() {
            return z;
        }
    }
}

/// Robert's rejection sampler for `[lo, hi]` with `0 <= lo < hi`.
fn tail_rejection<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    let root = (lo * lo + 4.0).sqrt();
    let uniform_cutoff =
        2.0 * (0.5f64).exp().sqrt() / (lo + root) * ((lo * lo - lo * root) / 4.0).exp();
    if hi - lo < uniform_cutoff {
        loop {
            let z = rng.random_range(lo..=hi);
            if rng.random::<f64>() <= (0.5 * (lo * lo - z * z)).exp() {
                return z;
            }
        }
    }
    let alpha = 0.5 * (lo + root);
    loop {
        let u: f64 = rng.random();
        let z = lo - (1.0 - u).ln() / alpha;
        if z > hi {
            continue;
        }
        if rng.random::<f64>() <= (-0.5 * (z - alpha).powi(2)).exp() {
            return z;
        }
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("time grid must be nonempty"));
    }
    if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("time grid must be finite and strictly increasing"));
    }
    Ok(())
}

/// Squared-exponential Gram matrix `exp(-(t_i - t_j)^2 / (2 l^2))`.
pub fn gram_matrix(grid: &[f64], length_scale: f64) -> Result<DMatrix<f64>> {
    check_grid(grid)?;
    if !(length_scale > 0.0) || !length_scale.is_finite() {
        return Err(Error::invalid("length scale must be positive and finite"));
    }
    let k = grid.len();
    let denom = 2.0 * length_scale * length_scale;
    Ok(DMatrix::from_fn(k, k, |i, j| (-(grid[i] - grid[j]).powi(2) / denom).exp()))
}

fn factorize(cov: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = cov.nrows();
    let jittered = cov + DMatrix::identity(n, n) * JITTER;
    Cholesky::new(jittered.clone()).ok_or_else(|| {
        let eig = jittered.symmetric_eigenvalues();
        let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Error::Factorization(format!(
            "covariance ({n}x{n}) not positive definite after jitter {JITTER:e}: \
             eigenvalues in [{lo:e}, {hi:e}]"
        ))
    })
}

/// Chain parameters of the Gibbs sampler.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GibbsOptions {
    /// Sweeps discarded before the first retained state.
    pub burn_in: usize,
    /// Sweeps between retained states.
    pub sweeps: usize,
    /// Unconstrained draws tried for an exact (rejection) initial state
    /// before falling back to the box-clamped mean.
    pub init_attempts: usize,
}

impl Default for GibbsOptions {
    fn default() -> Self {
        GibbsOptions { burn_in: 100, sweeps: 5, init_attempts: 10_000 }
    }
}

/// `N(mean, cov)` truncated to the box `[lower, upper]`.
#[derive(Clone, Debug)]
pub struct TruncatedMvn {
    mean: DVector<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    chol_l: DMatrix<f64>,
    precision: DMatrix<f64>,
}

impl TruncatedMvn {
    pub fn new(mean: Vec<f64>, cov: &DMatrix<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let k = mean.len();
        if k == 0 || cov.nrows() != k || cov.ncols() != k || lower.len() != k || upper.len() != k {
            return Err(Error::invalid(format!(
                "truncated normal needs consistent sizes: mean {k}, cov {}x{}, bounds {}/{}",
                cov.nrows(),
                cov.ncols(),
                lower.len(),
                upper.len()
            )));
        }
        if let Some(i) = (0..k).find(|&i| !(lower[i] < upper[i])) {
            return Err(Error::invalid(format!("bounds at {i} are not lower < upper")));
        }
        let chol = factorize(cov)?;
        let precision = chol.inverse();
        for i in 0..k {
            let p = precision[(i, i)];
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::ConditionalVariance { index: i, variance: 1.0 / p });
            }
        }
        Ok(TruncatedMvn {
            mean: DVector::from_vec(mean),
            lower,
            upper,
            chol_l: chol.l(),
            precision,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn inside(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    /// Feasible starting state: the first unconstrained draw landing in the
    /// box (an exact sample of the truncated law), else the clamped mean.
    pub fn initial_state<R: Rng + ?Sized>(&self, attempts: usize, rng: &mut R) -> Vec<f64> {
        let k = self.dim();
        for _ in 0..attempts {
            let z = DVector::from_fn(k, |_, _| StandardNormal.sample(rng));
            let x = &self.mean + &self.chol_l * z;
            if self.inside(x.as_slice()) {
                return x.as_slice().to_vec();
            }
        }
        (0..k)
            .map(|i| self.mean[i].clamp(self.lower[i], self.upper[i]))
            .collect()
    }

    /// One Gibbs sweep over coordinates `0..K` in order.
    pub fn sweep<R: Rng + ?Sized>(&self, x: &mut [f64], rng: &mut R) -> Result<()> {
        for k in 0..self.dim() {
            let pkk = self.precision[(k, k)];
            let variance = 1.0 / pkk;
            if !(variance > 0.0) || !variance.is_finite() {
                return Err(Error::ConditionalVariance { index: k, variance });
            }
            let mut shift = 0.0;
            for (j, xj) in x.iter().enumerate() {
                if j != k {
                    shift += self.precision[(k, j)] * (xj - self.mean[j]);
                }
            }
            let mu = self.mean[k] - shift * variance;
            let sd = variance.sqrt();
            let a = ((self.lower[k] - mu) / sd).max(-f64::MAX);
            let b = ((self.upper[k] - mu) / sd).min(f64::MAX);
            let draw = mu + sd * truncated_standard_normal(a, b, rng);
            x[k] = draw.clamp(self.lower[k], self.upper[k]);
        }
        Ok(())
    }

    /// Independent chain: initialize, burn in, then emit a state every
    /// `opts.sweeps` sweeps.
    pub fn chain<'a, R: Rng>(&'a self, opts: GibbsOptions, mut rng: R) -> Result<GibbsChain<'a, R>> {
        let mut state = self.initial_state(opts.init_attempts, &mut rng);
        for _ in 0..opts.burn_in {
            self.sweep(&mut state, &mut rng)?;
        }
        Ok(GibbsChain { target: self, state, rng, sweeps: opts.sweeps.max(1) })
    }

    /// A single draw from a fresh chain.
    pub fn sample<R: Rng>(&self, opts: GibbsOptions, rng: R) -> Result<Vec<f64>> {
        self.chain(opts, rng)?
            .next()
            .expect("chain is infinite")
    }
}

/// Retained states of a Gibbs chain.
pub struct GibbsChain<'a, R> {
    target: &'a TruncatedMvn,
    state: Vec<f64>,
    rng: R,
    sweeps: usize,
}

impl<R: Rng> Iterator for GibbsChain<'_, R> {
    type Item = Result<Vec<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        for _ in 0..self.sweeps {
            if let Err(e) = self.target.sweep(&mut self.state, &mut self.rng) {
                return Some(Err(e));
            }
        }
        Some(Ok(self.state.clone()))
    }
}

/// One truncated-MVN draw with a fresh chain seeded by `seed`.
pub fn sample_truncated_mvn_gibbs(
    mean: Vec<f64>,
    cov: &DMatrix<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    sweeps: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let target = TruncatedMvn::new(mean, cov, lower, upper)?;
    let opts = GibbsOptions { burn_in, sweeps, ..GibbsOptions::default() };
    target.sample(opts, stream(seed, StreamTag::Generic, 0))
}

/// Axis-aligned box `U = [lower, upper]` of admissible inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct Hyperrectangle {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawBox> for Hyperrectangle {
    type Error = Error;

    fn try_from(r: RawBox) -> Result<Self> {
        Hyperrectangle::new(r.lower, r.upper)
    }
}

impl From<Hyperrectangle> for RawBox {
    fn from(h: Hyperrectangle) -> Self {
        RawBox { lower: h.lower, upper: h.upper }
    }
}

impl Hyperrectangle {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::invalid("box bounds must be nonempty and of equal length"));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] < upper[i]) || !upper[i].is_finite() || !lower[i].is_finite()) {
            return Err(Error::invalid(format!(
                "box channel {i}: need finite lower < upper, got [{}, {}]",
                lower[i], upper[i]
            )));
        }
        Ok(Hyperrectangle { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.len() == self.dim()
            && u.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }
}

/// Kernel and time discretization of the input GP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub length_scale: f64,
    pub time_grid: Vec<f64>,
}

impl GpConfig {
    /// `k` equispaced points on `[0, t_final]`.
    pub fn uniform(length_scale: f64, t_final: f64, k: usize) -> Result<Self> {
        if k < 2 || !(t_final > 0.0) {
            return Err(Error::invalid("uniform grid needs k >= 2 and t_final > 0"));
        }
        let time_grid = (0..k)
            .map(|i| if i + 1 == k { t_final } else { t_final * i as f64 / (k - 1) as f64 })
            .collect();
        Ok(GpConfig { length_scale, time_grid })
    }
}

/// Borrowed view of one input path: `values[k]` is held on
/// `[times[k], times[k + 1])`.
#[derive(Clone, Copy, Debug)]
pub struct InputPath<'a> {
    pub times: &'a [f64],
    pub values: &'a [Vec<f64>],
}

impl<'a> InputPath<'a> {
    pub fn input_dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }
}

/// `n_x` sampled input paths on a shared grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputPathEnsemble {
    pub time_grid: Vec<f64>,
    pub bounds: Hyperrectangle,
    pub length_scale: f64,
    pub seed: u64,
    /// `paths[i][k][c]`: path `i`, grid time `k`, channel `c`.
    pub paths: Vec<Vec<Vec<f64>>>,
}

impl InputPathEnsemble {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn path(&self, i: usize) -> InputPath<'_> {
        InputPath { times: &self.time_grid, values: &self.paths[i] }
    }

    /// Ensemble made of the given paths only.
    pub fn subset(&self, indices: &[usize]) -> InputPathEnsemble {
        InputPathEnsemble {
            paths: indices.iter().map(|&i| self.paths[i].clone()).collect(),
            ..self.clone()
        }
    }
}

/// Samples `n_x` paths, one independent GP per input channel, each a
/// truncated-MVN draw with mean at the channel center. Path `i`, channel `c`
/// uses its own random stream, so the result is independent of threading.
pub fn sample_constrained_gp_paths(
    cfg: &GpConfig,
    bounds: &Hyperrectangle,
    n_x: usize,
    seed: u64,
    opts: GibbsOptions,
) -> Result<InputPathEnsemble> {
    if n_x == 0 {
        return Err(Error::invalid("n_x must be positive"));
    }
    let gram = gram_matrix(&cfg.time_grid, cfg.length_scale)?;
    let k = cfg.time_grid.len();
    let m = bounds.dim();
    let center = bounds.center();
    let targets = (0..m)
        .map(|c| {
            TruncatedMvn::new(
                vec![center[c]; k],
                &gram,
                vec![bounds.lower()[c]; k],
                vec![bounds.upper()[c]; k],
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let paths = (0..n_x)
        .into_par_iter()
        .map(|i| {
            let channels = targets
                .iter()
                .enumerate()
                .map(|(c, target)| {
                    let rng = stream(seed, StreamTag::InputPaths, (i * m + c) as u64);
                    target.sample(opts, rng)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Path { index: i, source: Box::new(e) })?;
            Ok((0..k).map(|t| channels.iter().map(|ch| ch[t]).collect()).collect())
        })
        .collect::<Result<Vec<Vec<Vec<f64>>>>>()?;

    Ok(InputPathEnsemble {
        time_grid: cfg.time_grid.clone(),
        bounds: bounds.clone(),
        length_scale: cfg.length_scale,
        seed,
        paths,
    })
}
