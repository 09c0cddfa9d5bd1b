//! Operator-splitting solver for
//!
//! ```text
//! minimize    1/2 x'Px + q'x
//! subject to  l <= Ax <= u
//! ```
//!
//! The iteration alternates a regularized equality-constrained quadratic
//! step (a dense Cholesky solve with `P + sigma I + rho A'A`) with a
//! projection of the constraint image onto the box `[l, u]`, followed by a
//! dual ascent step. Over-relaxation and residual-balanced penalty updates
//! follow the usual OSQP recipe. Everything runs sequentially in a fixed
//! order, so identical inputs give identical iterate sequences.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-compressed sparse matrix.
#[derive(Clone, Debug, Default)]
pub struct SparseRows {
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseRows {
    pub fn new(ncols: usize) -> Self {
        SparseRows { ncols, row_ptr: vec![0], cols: Vec::new(), vals: Vec::new() }
    }

    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        for (c, v) in entries {
            debug_assert!(c < self.ncols);
            self.cols.push(c);
            self.vals.push(v);
        }
        self.row_ptr.push(self.cols.len());
    }

    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    /// `out = A x`
    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (o, span) in out.iter_mut().zip(self.row_ptr.windows(2)) {
            let (cols, vals) = (&self.cols[span[0]..span[1]], &self.vals[span[0]..span[1]]);
            *o = cols.iter().zip(vals).fold(0.0, |s, (&c, &v)| s + v * x[c]);
        }
    }

    /// `out = A' y`
    pub fn mul_t(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (&yr, span) in y.iter().zip(self.row_ptr.windows(2)) {
            if yr != 0.0 {
                for (&c, &v) in self.cols[span[0]..span[1]].iter().zip(&self.vals[span[0]..span[1]]) {
                    out[c] += v * yr;
                }
            }
        }
    }

    /// Dense `A'A`.
    pub fn gram(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.ncols, self.ncols);
        for r in 0..self.nrows() {
            for (ci, vi) in self.row(r) {
                for (cj, vj) in self.row(r) {
                    g[(ci, cj)] += vi * vj;
                }
            }
        }
        g
    }

    fn scale_rows(&mut self, factors: &[f64]) {
        for (r, &f) in factors.iter().enumerate() {
            for v in &mut self.vals[self.row_ptr[r]..self.row_ptr[r + 1]] {
                *v *= f;
            }
        }
    }
}

/// Quadratic program data.
#[derive(Clone, Debug)]
pub struct QpData {
    pub p: DMatrix<f64>,
    pub q: Vec<f64>,
    pub a: SparseRows,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
}

impl QpData {
    fn validate(&self) -> Result<()> {
        let n = self.q.len();
        let m = self.a.nrows();
        if self.p.nrows() != n || self.p.ncols() != n || self.a.ncols() != n {
            return Err(Error::invalid("QP data: P, q and A disagree on the variable count"));
        }
        if self.l.len() != m || self.u.len() != m {
            return Err(Error::invalid("QP data: bounds must have one entry per constraint"));
        }
        if (0..m).any(|i| self.l[i] > self.u[i]) {
            return Err(Error::invalid("QP data: some lower bound exceeds its upper bound"));
        }
        Ok(())
    }
}

/// Solver parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QpSolveOptions {
    pub max_iters: usize,
    /// Absolute bound on the constraint violation of `x` at termination.
    pub primal_tol: f64,
    /// Absolute bound on `|Px + q + A'y|_inf` at termination.
    pub dual_tol: f64,
    /// Initial penalty.
    pub rho: f64,
    /// Proximal regularization of the quadratic step.
    pub sigma: f64,
    /// Over-relaxation factor in `(0, 2)`.
    pub alpha: f64,
    pub adaptive_rho: bool,
    /// Iterations between residual checks (and penalty updates).
    pub check_every: usize,
    /// Normalize each constraint row to unit max-norm before solving.
    pub scale_rows: bool,
}

impl Default for QpSolveOptions {
    fn default() -> Self {
        QpSolveOptions {
            max_iters: 100_000,
            primal_tol: 1e-6,
            dual_tol: 1e-6,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            check_every: 10,
            scale_rows: false,
        }
    }
}

impl QpSolveOptions {
    fn validate(&self) -> Result<()> {
        if !(self.primal_tol > 0.0 && self.dual_tol > 0.0) {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        if !(self.rho > 0.0 && self.sigma > 0.0) || !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(Error::invalid("need rho > 0, sigma > 0 and alpha in (0, 2)"));
        }
        Ok(())
    }
}

/// Final iterate and convergence report.
#[derive(Clone, Debug)]
pub struct AdmmOutput {
    pub x: Vec<f64>,
    /// Constraint multipliers (in the original, unscaled rows).
    pub y: Vec<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Objective minus the Lagrange dual bound at `y`; the objective is
    /// within this much of the optimum when the dual residual vanishes.
    pub duality_gap: f64,
    /// `max(0, Ax - u, l - Ax)` over all rows of the returned `x`.
    pub max_violation: f64,
    pub converged: bool,
    pub rho: f64,
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Kkt {
    p: DMatrix<f64>,
    gram: DMatrix<f64>,
    sigma: f64,
}

impl Kkt {
    fn factor(&self, rho: f64) -> Result<Cholesky<f64, Dyn>> {
        let n = self.p.nrows();
        let m = &self.p + &self.gram * rho + DMatrix::identity(n, n) * self.sigma;
        Cholesky::new(m).ok_or_else(|| Error::Factorization(format!("KKT matrix at rho = {rho:e}")))
    }
}

struct Residuals {
    /// `|Ax - z|_inf`.
    primal: f64,
    dual: f64,
    /// Largest bound violation of `Ax`, in the caller's row scaling.
    violation: f64,
    gap: f64,
    primal_scale: f64,
    dual_scale: f64,
}

impl Residuals {
    fn merit(&self, opts: &QpSolveOptions) -> f64 {
        (self.violation / opts.primal_tol).max(self.dual / opts.dual_tol)
    }

    fn certified(&self, opts: &QpSolveOptions) -> bool {
        self.violation <= opts.primal_tol && self.dual <= opts.dual_tol
    }
}

/// `sup { y'z : l <= z <= u }`.
fn bound_support(y: f64, l: f64, u: f64) -> f64 {
    if y > 0.0 {
        y * u
    } else if y < 0.0 {
        y * l
    } else {
        0.0
    }
}

fn residuals(
    data: &QpData,
    row_scale: Option<&[f64]>,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    ax: &mut [f64],
    aty: &mut [f64],
) -> Residuals {
    data.a.mul(x, ax);
    data.a.mul_t(y, aty);
    let px = &data.p * DVector::from_column_slice(x);
    let primal = ax.iter().zip(z).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let dual = (0..x.len()).fold(0.0f64, |m, i| m.max((px[i] + data.q[i] + aty[i]).abs()));
    let violation = (0..ax.len()).fold(0.0f64, |m, i| {
        let v = (ax[i] - data.u[i]).max(data.l[i] - ax[i]).max(0.0);
        m.max(row_scale.map_or(v, |f| v / f[i]))
    });
    // Primal objective minus the Lagrange dual bound at y.
    let xpx: f64 = x.iter().zip(px.iter()).map(|(a, b)| a * b).sum();
    let qx: f64 = x.iter().zip(&data.q).map(|(a, b)| a * b).sum();
    let support: f64 = (0..y.len()).map(|i| bound_support(y[i], data.l[i], data.u[i])).sum();
    Residuals {
        primal,
        dual,
        violation,
        gap: xpx + qx + support,
        primal_scale: inf_norm(ax).max(inf_norm(z)),
        dual_scale: inf_norm(px.as_slice()).max(inf_norm(aty)).max(inf_norm(&data.q)),
    }
}

/// Runs the splitting iteration. When the iteration limit is hit the best
/// iterate seen at a residual check is returned with `converged = false`.
pub fn solve(data: &QpData, opts: &QpSolveOptions) -> Result<AdmmOutput> {
    data.validate()?;
    opts.validate()?;

    let original = data;
    let scaled;
    let (data, row_scale) = if opts.scale_rows {
        let factors: Vec<f64> = (0..data.a.nrows())
            .map(|r| {
                let mx = data.a.row(r).fold(0.0f64, |m, (_, v)| m.max(v.abs()));
                if mx > 0.0 { 1.0 / mx } else { 1.0 }
            })
            .collect();
        let mut a = data.a.clone();
        a.scale_rows(&factors);
        scaled = QpData {
            p: data.p.clone(),
            q: data.q.clone(),
            a,
            l: data.l.iter().zip(&factors).map(|(l, f)| l * f).collect(),
            u: data.u.iter().zip(&factors).map(|(u, f)| u * f).collect(),
        };
        (&scaled, Some(factors))
    } else {
        (data, None)
    };

    let n = data.q.len();
    let m = data.a.nrows();
    let kkt = Kkt { p: data.p.clone(), gram: data.a.gram(), sigma: opts.sigma };
    let mut rho = opts.rho;
    let mut chol = kkt.factor(rho)?;

    if m == 0 {
        return Ok(unconstrained(data, &chol, opts));
    }

    let mut x = vec![0.0; n];
    let mut z: Vec<f64> = data.l.iter().zip(&data.u).map(|(l, u)| 0f64.clamp(*l, *u)).collect();
    let mut y = vec![0.0; m];
    let mut ax = vec![0.0; m];
    let mut aty = vec![0.0; n];
    let mut rhs_t = vec![0.0; n];
    let mut w = vec![0.0; m];

    let mut best: Option<Best> = None;
    let check_every = opts.check_every.max(1);
    let mut iterations = 0;

    while iterations < opts.max_iters {
        iterations += 1;

        // x-tilde from (P + sigma I + rho A'A) xt = sigma x - q + A'(rho z - y)
        for i in 0..m {
            w[i] = rho * z[i] - y[i];
        }
        data.a.mul_t(&w, &mut rhs_t);
        let mut rhs = DVector::from_fn(n, |i, _| opts.sigma * x[i] - data.q[i] + rhs_t[i]);
        chol.solve_mut(&mut rhs);
        data.a.mul(rhs.as_slice(), &mut ax);

        for i in 0..n {
            x[i] = opts.alpha * rhs[i] + (1.0 - opts.alpha) * x[i];
        }
        for i in 0..m {
            let relaxed = opts.alpha * ax[i] + (1.0 - opts.alpha) * z[i];
            let z_new = (relaxed + y[i] / rho).clamp(data.l[i], data.u[i]);
            y[i] += rho * (relaxed - z_new);
            // Exact arithmetic keeps these signs; rounding can flip them.
            if data.l[i] == f64::NEG_INFINITY {
                y[i] = y[i].max(0.0);
            }
            if data.u[i] == f64::INFINITY {
                y[i] = y[i].min(0.0);
            }
            z[i] = z_new;
        }

        if iterations % check_every != 0 && iterations != opts.max_iters {
            continue;
        }
        let res = residuals(data, row_scale.as_deref(), &x, &y, &z, &mut ax, &mut aty);
        if !(res.primal.is_finite() && res.dual.is_finite()) {
            return Err(Error::Factorization(format!("non-finite residuals at iteration {iterations}")));
        }
        let merit = res.merit(opts);
        let done = res.certified(opts);
        let primal_rel = res.primal / res.primal_scale.max(1e-30);
        let dual_rel = res.dual / res.dual_scale.max(1e-30);
        if done || best.as_ref().is_none_or(|b| merit < b.merit) {
            best = Some(Best { merit, x: x.clone(), y: y.clone(), res, iteration: iterations });
        }
        if done {
            break;
        }
        if opts.adaptive_rho {
            let ratio = (primal_rel / dual_rel.max(1e-30)).sqrt();
            let proposal = (rho * ratio).clamp(RHO_MIN, RHO_MAX);
            if ratio.is_finite() && (proposal > 5.0 * rho || proposal < 0.2 * rho) {
                rho = proposal;
                chol = kkt.factor(rho)?;
            }
        }
    }

    let best = best.expect("at least one residual check runs");
    let converged = best.res.certified(opts);
    let mut y = best.y;
    if let Some(f) = &row_scale {
        y.iter_mut().zip(f).for_each(|(yi, fi)| *yi *= fi);
    }
    let mut ax = vec![0.0; m];
    original.a.mul(&best.x, &mut ax);
    let max_violation = (0..m).fold(0.0f64, |acc, i| {
        acc.max(ax[i] - original.u[i]).max(original.l[i] - ax[i])
    });
    Ok(AdmmOutput {
        x: best.x,
        y,
        iterations: if converged { best.iteration } else { iterations },
        primal_residual: best.res.primal,
        dual_residual: best.res.dual,
        duality_gap: best.res.gap,
        max_violation,
        converged,
        rho,
    })
}

/// Proximal-point iteration `x <- (P + sigma I)^{-1} (sigma x - q)`, which
/// for `sigma` small converges in a handful of steps to a minimizer of the
/// unconstrained quadratic.
fn unconstrained(data: &QpData, chol: &Cholesky<f64, Dyn>, opts: &QpSolveOptions) -> AdmmOutput {
    let n = data.q.len();
    let mut x = vec![0.0; n];
    let mut dual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iters.max(1) {
        iterations += 1;
        let mut rhs = DVector::from_fn(n, |i, _| opts.sigma * x[i] - data.q[i]);
        chol.solve_mut(&mut rhs);
        let px = &data.p * &rhs;
        let next = (0..n).fold(0.0f64, |m, i| m.max((px[i] + data.q[i]).abs()));
        let stalled = next >= dual;
        if !stalled {
            x.copy_from_slice(rhs.as_slice());
            dual = next;
        }
        if stalled || dual == 0.0 {
            break;
        }
    }
    AdmmOutput {
        x,
        y: Vec::new(),
        iterations,
        primal_residual: 0.0,
        dual_residual: dual,
        duality_gap: 0.0,
        max_violation: 0.0,
        converged: dual <= opts.dual_tol,
        rho: opts.rho,
    }
}

struct Best {
    merit: f64,
    x: Vec<f64>,
    y: Vec<f64>,
    res: Residuals,
    iteration: usize,
}
