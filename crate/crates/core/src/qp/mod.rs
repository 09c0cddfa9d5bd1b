//! Least-squares sublinear regression with a max-affine estimator.
//!
//! Given samples `(y_i, ĥ_i)`, fit values `h_i` and subgradients `g_i` by
//!
//! ```text
//! minimize    (1/n) sum_i (ĥ_i - h_i)^2
//! subject to  h_j >= h_i + <g_i, y_j - y_i>     for all i != j
//! ```
//!
//! and evaluate `h(z) = max_i { h_i + <g_i, z - y_i> }`. In
//! [`RegressionMode::Sublinear`] the anchors are pinned to the origin,
//! `h_i = <g_i, y_i>`; eliminating `h` leaves
//!
//! ```text
//! minimize    (1/n) sum_i (ĥ_i - <g_i, y_i>)^2
//! subject to  <g_i, y_j> <= <g_j, y_j>          for all i != j
//! ```
//!
//! and the estimator becomes `h(z) = max_i <g_i, z>`, the support function
//! of `conv{g_i}`.

pub mod admm;

use std::time::Instant;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use admm::{QpSolveOptions, SparseRows};

use crate::error::{Error, Result};
use crate::geometry::{dot, DirectionSet, PointCloud, SupportFunction, SupportSamples};

/// Largest coordinate difference at which two directions count as equal.
pub const DUPLICATE_TOL: f64 = 1e-12;

/// Slack allowed in the pairwise convexity constraints of a fitted model.
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressionMode {
    /// Convexity constraints only; the estimator is convex but not
    /// positively homogeneous.
    Convex,
    /// Convexity plus `h_i = <g_i, y_i>`; the estimator is sublinear.
    #[default]
    Sublinear,
}

/// An assembled least-squares problem.
#[derive(Clone, Debug)]
pub struct QpProblem {
    samples: SupportSamples,
    mode: RegressionMode,
    data: admm::QpData,
}

impl QpProblem {
    pub fn mode(&self) -> RegressionMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.samples.dim()
    }

    pub fn samples(&self) -> &SupportSamples {
        &self.samples
    }

    pub fn num_variables(&self) -> usize {
        self.data.q.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.data.a.nrows()
    }

    /// `(h, g)` encoded by a solver vector.
    fn unpack(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = self.samples.len();
        let d = self.dim();
        match self.mode {
            RegressionMode::Sublinear => {
                let g: Vec<Vec<f64>> = x.chunks(d).map(<[f64]>::to_vec).collect();
                let h = g
                    .iter()
                    .zip(self.samples.directions())
                    .map(|(gi, yi)| dot(gi, yi.coords()))
                    .collect();
                (h, g)
            }
            RegressionMode::Convex => {
                let h = x[..n].to_vec();
                let g = x[n..].chunks(d).map(<[f64]>::to_vec).collect();
                (h, g)
            }
        }
    }

    /// Mean squared residual of fitted values `h`.
    pub fn objective(&self, h: &[f64]) -> f64 {
        let v = self.samples.values();
        v.iter().zip(h).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / v.len() as f64
    }
}

/// Builds the QP for `samples`. Fails on duplicate directions, whose
/// constraints would be degenerate.
pub fn assemble_qp(samples: &SupportSamples, mode: RegressionMode) -> Result<QpProblem> {
    let dirs = samples.directions();
    let n = samples.len();
    let d = samples.dim();
    for i in 0..n {
        for j in i + 1..n {
            let gap = dirs
                .get(i)
                .coords()
                .iter()
                .zip(dirs.get(j).coords())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if gap <= DUPLICATE_TOL {
                return Err(Error::DuplicateDirections(i, j));
            }
        }
    }
    if n < d + 1 {
        warn!("only {n} samples in dimension {d}; at least {} recommended", d + 1);
    }

    let scale = 2.0 / n as f64;
    let h_hat = samples.values();
    let data = match mode {
        RegressionMode::Sublinear => {
            let nv = n * d;
            let mut p = DMatrix::zeros(nv, nv);
            let mut q = vec![0.0; nv];
            for (i, y) in dirs.iter().enumerate() {
                let y = y.coords();
                for r in 0..d {
                    q[i * d + r] = -scale * h_hat[i] * y[r];
                    for c in 0..d {
                        p[(i * d + r, i * d + c)] = scale * y[r] * y[c];
                    }
                }
            }
            let mut a = SparseRows::new(nv);
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let yj = dirs.get(j).coords();
                    a.push_row(
                        (0..d)
                            .map(|r| (i * d + r, yj[r]))
                            .chain((0..d).map(|r| (j * d + r, -yj[r]))),
                    );
                }
            }
            let m = a.nrows();
            admm::QpData { p, q, a, l: vec![f64::NEG_INFINITY; m], u: vec![0.0; m] }
        }
        RegressionMode::Convex => {
            let nv = n + n * d;
            let mut p = DMatrix::zeros(nv, nv);
            let mut q = vec![0.0; nv];
            for i in 0..n {
                p[(i, i)] = scale;
                q[i] = -scale * h_hat[i];
            }
            let mut a = SparseRows::new(nv);
            for i in 0..n {
                let yi = dirs.get(i).coords();
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let yj = dirs.get(j).coords();
                    a.push_row(
                        [(j, 1.0), (i, -1.0)]
                            .into_iter()
                            .chain((0..d).map(|r| (n + i * d + r, -(yj[r] - yi[r])))),
                    );
                }
            }
            let m = a.nrows();
            admm::QpData { p, q, a, l: vec![0.0; m], u: vec![f64::INFINITY; m] }
        }
    };
    Ok(QpProblem { samples: samples.clone(), mode, data })
}

/// Convergence report of a QP solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    #[serde(default)]
    pub duality_gap: f64,
    pub max_violation: f64,
    pub objective: f64,
    pub converged: bool,
    pub seconds: f64,
}

/// Piecewise-linear estimator `max_i { h_i + <g_i, z - y_i> }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxAffineModel {
    pub mode: RegressionMode,
    pub anchors: DirectionSet,
    pub values: Vec<f64>,
    pub subgradients: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<SolverDiagnostics>,
}

impl MaxAffineModel {
    pub fn new(
        mode: RegressionMode,
        anchors: DirectionSet,
        values: Vec<f64>,
        subgradients: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let model = MaxAffineModel { mode, anchors, values, subgradients, diagnostics: None };
        model.validate()?;
        Ok(model)
    }

    /// Shape checks (used after deserialization as well).
    pub fn validate(&self) -> Result<()> {
        let n = self.anchors.len();
        let d = self.anchors.dim();
        if self.values.len() != n || self.subgradients.len() != n {
            return Err(Error::invalid("model needs one value and one subgradient per anchor"));
        }
        if let Some(g) = self.subgradients.iter().find(|g| g.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: g.len() });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `max_{i,j} h_i + <g_i, y_j - y_i> - h_j` (non-positive when the
    /// pairwise convexity constraints hold exactly).
    pub fn max_convexity_violation(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (i, gi) in self.subgradients.iter().enumerate() {
            let yi = self.anchors.get(i).coords();
            for (j, yj) in self.anchors.iter().enumerate() {
                if i != j {
                    let diff: Vec<f64> = yj.coords().iter().zip(yi).map(|(a, b)| a - b).collect();
                    worst = worst.max(self.values[i] + dot(gi, &diff) - self.values[j]);
                }
            }
        }
        worst
    }

    /// `max_i |h_i - <g_i, y_i>|`.
    pub fn max_homogeneity_gap(&self) -> f64 {
        self.subgradients
            .iter()
            .zip(&self.anchors)
            .zip(&self.values)
            .map(|((g, y), h)| (h - dot(g, y.coords())).abs())
            .fold(0.0, f64::max)
    }

    /// The subgradients as a point cloud; in sublinear mode the model is
    /// exactly this cloud's support function.
    pub fn subgradient_cloud(&self) -> Result<PointCloud> {
        PointCloud::new(self.subgradients.clone())
    }

    pub fn evaluate(&self, z: &[f64]) -> f64 {
        match self.mode {
            RegressionMode::Sublinear => self
                .subgradients
                .iter()
                .map(|g| dot(z, g))
                .fold(f64::NEG_INFINITY, f64::max),
            RegressionMode::Convex => self
                .subgradients
                .iter()
                .zip(&self.anchors)
                .zip(&self.values)
                .map(|((g, y), h)| {
                    h + g.iter().zip(z.iter().zip(y.coords())).map(|(gi, (zi, yi))| gi * (zi - yi)).sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

impl SupportFunction for MaxAffineModel {
    fn dim(&self) -> usize {
        self.anchors.dim()
    }

    fn eval(&self, z: &[f64]) -> f64 {
        self.evaluate(z)
    }
}

/// Solves an assembled problem. A solve that hits the iteration limit still
/// returns the best iterate, with `diagnostics.converged = false`.
pub fn solve_qp(problem: &QpProblem, opts: &QpSolveOptions) -> Result<MaxAffineModel> {
    let start = Instant::now();
    let out = admm::solve(&problem.data, opts)?;
    let seconds = start.elapsed().as_secs_f64();
    if !out.converged {
        warn!(
            "QP stopped after {} iterations: primal {:.3e}, dual {:.3e}",
            out.iterations, out.primal_residual, out.dual_residual
        );
    }
    let (values, subgradients) = problem.unpack(&out.x);
    let diagnostics = SolverDiagnostics {
        iterations: out.iterations,
        primal_residual: out.primal_residual,
        dual_residual: out.dual_residual,
        duality_gap: out.duality_gap,
        max_violation: out.max_violation,
        objective: problem.objective(&values),
        converged: out.converged,
        seconds,
    };
    Ok(MaxAffineModel {
        mode: problem.mode,
        anchors: problem.samples.directions().clone(),
        values,
        subgradients,
        diagnostics: Some(diagnostics),
    })
}

/// Assemble and solve; `diagnostics.seconds` covers both.
pub fn fit_support_qp(samples: &SupportSamples, mode: RegressionMode, opts: &QpSolveOptions) -> Result<MaxAffineModel> {
    let start = Instant::now();
    let problem = assemble_qp(samples, mode)?;
    let mut model = solve_qp(&problem, opts)?;
    if let Some(d) = model.diagnostics.as_mut() {
        d.seconds = start.elapsed().as_secs_f64();
    }
    Ok(model)
}
