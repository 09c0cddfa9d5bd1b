//! Controlled ODEs and reach-set point clouds.
//!
//! Inputs are zero-order held on the sample grid and integrated with
//! classical RK4, using equal substeps of at most `dt_sub` inside every
//! hold interval. Angle states are kept unwrapped.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::rng::{stream, StreamTag};
use crate::sampling::{InputPath, InputPathEnsemble};

/// Default RK4 substep in seconds.
pub const DEFAULT_DT_SUB: f64 = 0.005;

/// Relative slack when matching checkpoint times against grid times.
const TIME_EPS: f64 = 1e-12;

/// `x' = f(t, x, u)`.
pub trait VectorField: Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn input_dim(&self) -> usize;

    fn eval(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);
}

/// Dubins car `(x1, x2, heading)` with constant speed and turn-rate input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dubins {
    pub speed: f64,
}

impl Dubins {
    pub fn new(speed: f64) -> Result<Self> {
        if !(speed > 0.0) || !speed.is_finite() {
            return Err(Error::invalid("Dubins speed must be positive"));
        }
        Ok(Dubins { speed })
    }
}

impl Default for Dubins {
    fn default() -> Self {
        Dubins { speed: 2.0 }
    }
}

impl VectorField for Dubins {
    fn name(&self) -> &str {
        "dubins"
    }

    fn dim(&self) -> usize {
        3
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn eval(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = self.speed * x[2].cos();
        out[1] = self.speed * x[2].sin();
        out[2] = u[0];
    }
}

/// Kinematic bicycle `(x1, x2, speed, heading)` with inputs
/// `(acceleration, steering angle)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Bicycle;

impl Bicycle {
    /// Rear-axle to center-of-mass ratio in the sideslip relation.
    pub const SLIP_RATIO: f64 = 0.6;
    /// Length divisor in the yaw-rate equation.
    pub const LENGTH: f64 = 1.5;

    pub fn sideslip(steering: f64) -> f64 {
        (Self::SLIP_RATIO * steering.tan()).atan()
    }
}

impl VectorField for Bicycle {
    fn name(&self) -> &str {
        "bicycle"
    }

    fn dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn eval(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        let beta = Self::sideslip(u[1]);
        out[0] = x[2] * (x[3] + beta).cos();
        out[1] = x[2] * (x[3] + beta).sin();
        out[2] = u[0];
        out[3] = x[2] * beta.sin() / Self::LENGTH;
    }
}

/// Closure-backed field, mostly for tests.
pub struct FnField<F> {
    pub dim: usize,
    pub input_dim: usize,
    pub f: F,
}

impl<F> VectorField for FnField<F>
where
    F: Fn(f64, &[f64], &[f64], &mut [f64]) + Sync,
{
    fn name(&self) -> &str {
        "custom"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn eval(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.f)(t, x, u, out)
    }
}

/// One classical RK4 step with `u` held constant.
pub fn rk4_step<F: VectorField + ?Sized>(f: &F, t: f64, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::invalid("RK4 step needs dt > 0"));
    }
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    f.eval(t, x, u, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    f.eval(t + 0.5 * dt, &tmp, u, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    f.eval(t + 0.5 * dt, &tmp, u, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    f.eval(t + dt, &tmp, u, &mut k4);

    let next: Vec<f64> = (0..n)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { t: t + dt });
    }
    Ok(next)
}

/// Integrates from `t0` to `t1` in equal steps no longer than `dt_sub`.
fn advance<F: VectorField + ?Sized>(f: &F, x: &mut Vec<f64>, t0: f64, t1: f64, u: &[f64], dt_sub: f64) -> Result<()> {
    let span = t1 - t0;
    if span <= 0.0 {
        return Ok(());
    }
    let steps = ((span / dt_sub) - 1e-9).ceil().max(1.0) as usize;
    let h = span / steps as f64;
    for s in 0..steps {
        *x = rk4_step(f, t0 + s as f64 * h, x, u, h)?;
    }
    Ok(())
}

fn check_path<F: VectorField + ?Sized>(f: &F, x0: &[f64], path: &InputPath<'_>, dt_sub: f64) -> Result<()> {
    if x0.len() != f.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), got: x0.len() });
    }
    if path.times.is_empty() || path.times.len() != path.values.len() {
        return Err(Error::invalid("input path needs one value per grid time"));
    }
    if let Some(u) = path.values.iter().find(|u| u.len() != f.input_dim()) {
        return Err(Error::DimensionMismatch { expected: f.input_dim(), got: u.len() });
    }
    if !(dt_sub > 0.0) {
        return Err(Error::invalid("dt_sub must be positive"));
    }
    Ok(())
}

/// States at each of the sorted `times`, which must lie within the path's
/// grid span.
pub fn integrate_checkpoints<F: VectorField + ?Sized>(
    f: &F,
    x0: &[f64],
    path: InputPath<'_>,
    dt_sub: f64,
    times: &[f64],
) -> Result<Vec<Vec<f64>>> {
    check_path(f, x0, &path, dt_sub)?;
    let grid = path.times;
    let (t_first, t_last) = (grid[0], grid[grid.len() - 1]);
    let slack = TIME_EPS * (1.0 + t_last.abs());
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("checkpoint times must be sorted"));
    }
    if let Some(&bad) = times.iter().find(|&&t| t < t_first - slack || t > t_last + slack) {
        return Err(Error::invalid(format!(
            "checkpoint {bad} outside input grid [{t_first}, {t_last}]"
        )));
    }

    let mut out = Vec::with_capacity(times.len());
    let mut pending = times.iter().copied().peekable();
    let mut x = x0.to_vec();
    while pending.next_if(|&t| t <= t_first + slack).is_some() {
        out.push(x.clone());
    }
    for k in 0..grid.len() - 1 {
        if pending.peek().is_none() {
            break;
        }
        let (start, end) = (grid[k], grid[k + 1]);
        let u = &path.values[k];
        let mut t = start;
        while let Some(tau) = pending.next_if(|&tau| tau < end - slack) {
            advance(f, &mut x, t, tau, u, dt_sub)?;
            t = tau.max(t);
            out.push(x.clone());
        }
        advance(f, &mut x, t, end, u, dt_sub)?;
        while pending.next_if(|&tau| tau <= end + slack).is_some() {
            out.push(x.clone());
        }
    }
    Ok(out)
}

/// Terminal state at the last grid time.
pub fn integrate_path<F: VectorField + ?Sized>(f: &F, x0: &[f64], path: InputPath<'_>, dt_sub: f64) -> Result<Vec<f64>> {
    check_path(f, x0, &path, dt_sub)?;
    let t_end = *path.times.last().expect("checked nonempty");
    Ok(integrate_checkpoints(f, x0, path, dt_sub, &[t_end])?.remove(0))
}

/// Point cloud of states reached at `time` by an ensemble of input paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachCloud {
    pub time: f64,
    pub cloud: PointCloud,
    pub model: String,
    pub seed: u64,
}

/// Clouds at each of the sorted `times`; every path is integrated once.
pub fn reach_clouds_at<F: VectorField + ?Sized>(
    f: &F,
    x0: &[f64],
    ensemble: &InputPathEnsemble,
    dt_sub: f64,
    times: &[f64],
) -> Result<Vec<ReachCloud>> {
    if ensemble.input_dim() != f.input_dim() {
        return Err(Error::DimensionMismatch { expected: f.input_dim(), got: ensemble.input_dim() });
    }
    if ensemble.is_empty() {
        return Err(Error::invalid("ensemble has no paths"));
    }
    let per_path = (0..ensemble.len())
        .into_par_iter()
        .map(|i| {
            integrate_checkpoints(f, x0, ensemble.path(i), dt_sub, times)
                .map_err(|e| Error::Path { index: i, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    times
        .iter()
        .enumerate()
        .map(|(c, &time)| {
            let points = per_path.iter().map(|states| states[c].clone()).collect();
            Ok(ReachCloud {
                time,
                cloud: PointCloud::new(points)?,
                model: f.name().to_string(),
                seed: ensemble.seed,
            })
        })
        .collect()
}

/// Terminal cloud at the ensemble's final grid time.
pub fn reach_cloud<F: VectorField + ?Sized>(
    f: &F,
    x0: &[f64],
    ensemble: &InputPathEnsemble,
    dt_sub: f64,
) -> Result<ReachCloud> {
    let t_end = *ensemble
        .time_grid
        .last()
        .ok_or_else(|| Error::invalid("empty time grid"))?;
    Ok(reach_clouds_at(f, x0, ensemble, dt_sub, &[t_end])?.remove(0))
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every coordinate.
pub fn add_noise(cloud: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = stream(seed, StreamTag::Noise, 0);
    let points = cloud
        .points()
        .iter()
        .map(|p| p.iter().map(|v| v + normal.sample(&mut rng)).collect())
        .collect();
    PointCloud::new(points)
}
