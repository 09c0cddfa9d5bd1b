//! Support functions, empirical support values and set calculus.
//!
//! A support function `h_X(y) = sup_{x in X} <y, x>` is represented by the
//! [`SupportFunction`] trait. Implementations accept any nonzero vector, not
//! only unit directions: representations that are only known on the sphere
//! are extended by positive homogeneity, `h(z) = |z| h(z / |z|)`.
//!
//! Sphere suprema (Hausdorff distance, inclusion, membership) are taken over
//! an explicit [`DirectionSet`], so they are lower bounds / one-sided
//! certificates for the true quantities.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, StreamTag};

/// Absolute tolerance for comparing O(1) support values.
pub const COMPARE_TOL: f64 = 1e-9;

/// Maximum deviation of a [`Direction`] from unit norm.
pub const UNIT_NORM_TOL: f64 = 1e-12;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// A unit vector on the sphere `S^{d-1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Direction(Vec<f64>);

impl Direction {
    /// Wraps `coords`, which must already have unit norm.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("direction must have dimension >= 1"));
        }
        let n = norm(&coords);
        if !n.is_finite() || (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::invalid(format!("direction norm {n} is not 1")));
        }
        Ok(Direction(coords))
    }

    /// Normalizes a nonzero finite vector.
    pub fn normalize(mut v: Vec<f64>) -> Result<Self> {
        let n = norm(&v);
        if v.is_empty() || !n.is_finite() || n == 0.0 {
            return Err(Error::invalid("cannot normalize a zero or non-finite vector"));
        }
        v.iter_mut().for_each(|c| *c /= n);
        Ok(Direction(v))
    }

    /// Unit vector at polar angle `theta` in the plane.
    pub fn polar(theta: f64) -> Self {
        Direction(vec![theta.cos(), theta.sin()])
    }

    /// Unit vector at azimuth `phi` and elevation `theta` (both radians).
    pub fn spherical(phi: f64, theta: f64) -> Self {
        Direction(vec![theta.cos() * phi.cos(), theta.cos() * phi.sin(), theta.sin()])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for Direction {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Direction::new(v)
    }
}

impl From<Direction> for Vec<f64> {
    fn from(d: Direction) -> Self {
        d.0
    }
}

/// Nonempty ordered list of directions of a common dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Direction>", into = "Vec<Direction>")]
pub struct DirectionSet {
    dim: usize,
    dirs: Vec<Direction>,
}

impl DirectionSet {
    pub fn new(dirs: Vec<Direction>) -> Result<Self> {
        let dim = dirs
            .first()
            .ok_or_else(|| Error::invalid("direction set must be nonempty"))?
            .dim();
        for d in &dirs {
            check_dim(dim, d.dim())?;
        }
        Ok(DirectionSet { dim, dirs })
    }

    /// `n` directions drawn i.i.d. uniformly on `S^{d-1}` (normalized
    /// standard-normal vectors). Deterministic in `seed`.
    pub fn sample_uniform(d: usize, n: usize, seed: u64) -> Result<Self> {
        if d == 0 || n == 0 {
            return Err(Error::invalid("need d >= 1 and n >= 1 to sample directions"));
        }
        let mut rng = stream(seed, StreamTag::Directions, 0);
        let dirs = (0..n)
            .map(|_| loop {
                let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                if let Ok(dir) = Direction::normalize(v) {
                    break dir;
                }
            })
            .collect();
        Ok(DirectionSet { dim: d, dirs })
    }

    /// `n` equispaced planar directions at angles covering `(-pi, pi]`.
    pub fn circle(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("circle grid needs at least one point"));
        }
        let dirs = circle_angles(n).into_iter().map(Direction::polar).collect();
        Ok(DirectionSet { dim: 2, dirs })
    }

    /// Equiangular spherical grid: `n_az` azimuths in `(-pi, pi]` times
    /// `n_el` elevations spanning `[-pi/2, pi/2]`, azimuth-major.
    pub fn sphere(n_az: usize, n_el: usize) -> Result<Self> {
        if n_az == 0 || n_el == 0 {
            return Err(Error::invalid("sphere grid needs at least one point per axis"));
        }
        let dirs = sphere_angles(n_az, n_el)
            .into_iter()
            .map(|(phi, theta)| Direction::spherical(phi, theta))
            .collect();
        Ok(DirectionSet { dim: 3, dirs })
    }

    /// Default evaluation grid for sphere suprema: 720 angles for `d = 2`,
    /// 100 x 50 for `d = 3`, both poles for `d = 1`, and 10^4 seeded random
    /// directions otherwise.
    pub fn default_grid(d: usize) -> Result<Self> {
        match d {
            0 => Err(Error::invalid("dimension must be >= 1")),
            1 => DirectionSet::new(vec![Direction(vec![-1.0]), Direction(vec![1.0])]),
            2 => DirectionSet::circle(720),
            3 => DirectionSet::sphere(100, 50),
            _ => DirectionSet::sample_uniform(d, 10_000, 0),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Direction> {
        self.dirs.iter()
    }

    pub fn get(&self, i: usize) -> &Direction {
        &self.dirs[i]
    }

    /// First `n` directions (nested subsets of one random draw).
    pub fn prefix(&self, n: usize) -> Result<Self> {
        DirectionSet::new(self.dirs[..n.min(self.dirs.len())].to_vec())
    }
}

impl TryFrom<Vec<Direction>> for DirectionSet {
    type Error = Error;

    fn try_from(v: Vec<Direction>) -> Result<Self> {
        DirectionSet::new(v)
    }
}

impl From<DirectionSet> for Vec<Direction> {
    fn from(s: DirectionSet) -> Self {
        s.dirs
    }
}

impl<'a> IntoIterator for &'a DirectionSet {
    type Item = &'a Direction;
    type IntoIter = std::slice::Iter<'a, Direction>;

    fn into_iter(self) -> Self::IntoIter {
        self.dirs.iter()
    }
}

/// Polar angles of [`DirectionSet::circle`].
pub fn circle_angles(n: usize) -> Vec<f64> {
    (0..n).map(|k| -PI + 2.0 * PI * (k + 1) as f64 / n as f64).collect()
}

/// `(phi, theta)` pairs of [`DirectionSet::sphere`].
pub fn sphere_angles(n_az: usize, n_el: usize) -> Vec<(f64, f64)> {
    let elevations: Vec<f64> = if n_el == 1 {
        vec![0.0]
    } else {
        (0..n_el)
            .map(|j| -PI / 2.0 + PI * j as f64 / (n_el - 1) as f64)
            .collect()
    };
    circle_angles(n_az)
        .into_iter()
        .flat_map(|phi| elevations.iter().map(move |&theta| (phi, theta)))
        .collect()
}

/// Finite nonempty set of points of a common dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct PointCloud {
    dim: usize,
    points: Vec<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points
            .first()
            .ok_or_else(|| Error::invalid("point cloud must be nonempty"))?
            .len();
        if dim == 0 {
            return Err(Error::invalid("points must have dimension >= 1"));
        }
        for p in &points {
            check_dim(dim, p.len())?;
        }
        Ok(PointCloud { dim, points })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Keeps only the listed coordinates of every point, in the given order.
    pub fn project(&self, coords: &[usize]) -> Result<PointCloud> {
        if coords.is_empty() {
            return Err(Error::invalid("projection needs at least one coordinate"));
        }
        if let Some(&bad) = coords.iter().find(|&&c| c >= self.dim) {
            return Err(Error::invalid(format!(
                "projection coordinate {bad} out of range for dimension {}",
                self.dim
            )));
        }
        let points = self
            .points
            .iter()
            .map(|p| coords.iter().map(|&c| p[c]).collect())
            .collect();
        Ok(PointCloud { dim: coords.len(), points })
    }

    /// Union with another cloud of the same dimension.
    pub fn extend(&mut self, other: &PointCloud) -> Result<()> {
        check_dim(self.dim, other.dim)?;
        self.points.extend(other.points.iter().cloned());
        Ok(())
    }
}

impl TryFrom<Vec<Vec<f64>>> for PointCloud {
    type Error = Error;

    fn try_from(v: Vec<Vec<f64>>) -> Result<Self> {
        PointCloud::new(v)
    }
}

impl From<PointCloud> for Vec<Vec<f64>> {
    fn from(c: PointCloud) -> Self {
        c.points
    }
}

/// Paired directions and empirical support values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSamples", into = "RawSamples")]
pub struct SupportSamples {
    directions: DirectionSet,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawSamples {
    directions: DirectionSet,
    values: Vec<f64>,
}

impl TryFrom<RawSamples> for SupportSamples {
    type Error = Error;

    fn try_from(r: RawSamples) -> Result<Self> {
        SupportSamples::new(r.directions, r.values)
    }
}

impl From<SupportSamples> for RawSamples {
    fn from(s: SupportSamples) -> Self {
        RawSamples { directions: s.directions, values: s.values }
    }
}

impl SupportSamples {
    pub fn new(directions: DirectionSet, values: Vec<f64>) -> Result<Self> {
        if directions.len() != values.len() {
            return Err(Error::invalid(format!(
                "{} directions but {} support values",
                directions.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("support value {i} is not finite")));
        }
        Ok(SupportSamples { directions, values })
    }

    /// Samples of an arbitrary support function at the given directions.
    pub fn from_function<H: SupportFunction + ?Sized>(h: &H, directions: DirectionSet) -> Result<Self> {
        check_dim(directions.dim(), h.dim())?;
        let values = directions.iter().map(|y| h.eval(y.coords())).collect();
        SupportSamples::new(directions, values)
    }

    pub fn directions(&self) -> &DirectionSet {
        &self.directions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.directions.dim()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `h_i = max_j <y_i, x_j>` over the cloud.
pub fn empirical_support(cloud: &PointCloud, dirs: &DirectionSet) -> Result<SupportSamples> {
    SupportSamples::from_function(cloud, dirs.clone())
}

/// Evaluation interface of a support function.
///
/// `eval` must accept any nonzero vector of length `dim()`; for sublinear
/// implementations `eval(a z) = a eval(z)` for `a > 0`.
pub trait SupportFunction {
    fn dim(&self) -> usize;

    fn eval(&self, z: &[f64]) -> f64;

    fn eval_dir(&self, y: &Direction) -> f64 {
        self.eval(y.coords())
    }
}

impl<T: SupportFunction + ?Sized> SupportFunction for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, z: &[f64]) -> f64 {
        (**self).eval(z)
    }
}

impl<T: SupportFunction + ?Sized> SupportFunction for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, z: &[f64]) -> f64 {
        (**self).eval(z)
    }
}

impl<T: SupportFunction + ?Sized> SupportFunction for std::sync::Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, z: &[f64]) -> f64 {
        (**self).eval(z)
    }
}

/// Owned, thread-safe support function.
pub type BoxedSupport = Box<dyn SupportFunction + Send + Sync>;

impl SupportFunction for PointCloud {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, z: &[f64]) -> f64 {
        self.points
            .iter()
            .map(|p| dot(z, p))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Euclidean ball; `radius = 0` gives a singleton.
#[derive(Clone, Debug, PartialEq)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() || !(radius >= 0.0) {
            return Err(Error::invalid("ball needs a nonempty center and radius >= 0"));
        }
        Ok(Ball { center, radius })
    }

    /// The set `{0}` in `R^d`, neutral element of Minkowski addition.
    pub fn origin(d: usize) -> Self {
        Ball { center: vec![0.0; d], radius: 0.0 }
    }
}

impl SupportFunction for Ball {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn eval(&self, z: &[f64]) -> f64 {
        dot(z, &self.center) + self.radius * norm(z)
    }
}

/// Axis-aligned box `[lower, upper]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SupportFunction for AxisBox {
    fn dim(&self) -> usize {
        self.lower.len()
    }

    fn eval(&self, z: &[f64]) -> f64 {
        z.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&zi, (&lo, &hi))| if zi >= 0.0 { zi * hi } else { zi * lo })
            .sum()
    }
}

/// Homogeneous extension of a function known only on the unit sphere.
pub struct SphereFn<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&Direction) -> f64> SphereFn<F> {
    pub fn new(dim: usize, f: F) -> Self {
        SphereFn { dim, f }
    }
}

impl<F: Fn(&Direction) -> f64> SupportFunction for SphereFn<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, z: &[f64]) -> f64 {
        let n = norm(z);
        if n == 0.0 {
            return 0.0;
        }
        let y = Direction(z.iter().map(|c| c / n).collect());
        n * (self.f)(&y)
    }
}

fn common_dim<H: SupportFunction>(hs: &[H]) -> Result<usize> {
    let d = hs
        .first()
        .ok_or_else(|| Error::invalid("need at least one support function"))?
        .dim();
    for h in hs {
        check_dim(d, h.dim())?;
    }
    Ok(d)
}

/// Support function of `X_1 + ... + X_r` (pointwise sum).
pub struct MinkowskiSum<H> {
    dim: usize,
    parts: Vec<H>,
}

impl<H: SupportFunction> SupportFunction for MinkowskiSum<H> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, z: &[f64]) -> f64 {
        self.parts.iter().map(|h| h.eval(z)).sum()
    }
}

pub fn minkowski_sum<H: SupportFunction>(hs: Vec<H>) -> Result<MinkowskiSum<H>> {
    Ok(MinkowskiSum { dim: common_dim(&hs)?, parts: hs })
}

/// Support function of `conv(X_1 u ... u X_r)` (pointwise max).
pub struct UnionHull<H> {
    dim: usize,
    parts: Vec<H>,
}

impl<H: SupportFunction> SupportFunction for UnionHull<H> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, z: &[f64]) -> f64 {
        self.parts
            .iter()
            .map(|h| h.eval(z))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn union_hull<H: SupportFunction>(hs: Vec<H>) -> Result<UnionHull<H>> {
    Ok(UnionHull { dim: common_dim(&hs)?, parts: hs })
}

/// Support function of `A X + b`: `y -> <y, b> + h_X(A^T y)`.
pub struct AffineImage<H> {
    inner: H,
    a_t: DMatrix<f64>,
    b: Vec<f64>,
}

impl<H: SupportFunction> SupportFunction for AffineImage<H> {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn eval(&self, z: &[f64]) -> f64 {
        let zt: Vec<f64> = (0..self.a_t.nrows())
            .map(|r| (0..z.len()).map(|c| self.a_t[(r, c)] * z[c]).sum())
            .collect();
        dot(z, &self.b) + self.inner.eval(&zt)
    }
}

/// `a` is square with side `h.dim()`; `b` has length `h.dim()`.
pub fn affine_image<H: SupportFunction>(h: H, a: DMatrix<f64>, b: Vec<f64>) -> Result<AffineImage<H>> {
    let d = h.dim();
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::invalid(format!(
            "affine map must be {d}x{d}, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    check_dim(d, b.len())?;
    Ok(AffineImage { inner: h, a_t: a.transpose(), b })
}

/// `max_{y in grid} |h_A(y) - h_B(y)|`, a lower bound on the Hausdorff
/// distance between the closed convex hulls represented by `h_A`, `h_B`.
pub fn hausdorff_distance<A, B>(ha: &A, hb: &B, grid: &DirectionSet) -> Result<f64>
where
    A: SupportFunction + ?Sized,
    B: SupportFunction + ?Sized,
{
    check_dim(ha.dim(), hb.dim())?;
    check_dim(ha.dim(), grid.dim())?;
    Ok(grid
        .iter()
        .map(|y| (ha.eval_dir(y) - hb.eval_dir(y)).abs())
        .fold(0.0, f64::max))
}

/// Returns `false` when some grid direction separates `x` from the set,
/// i.e. `<y, x> > h(y) + COMPARE_TOL`. `true` only means "not separated on
/// this grid".
pub fn membership_test<H: SupportFunction + ?Sized>(h: &H, x: &[f64], grid: &DirectionSet) -> Result<bool> {
    check_dim(h.dim(), x.len())?;
    check_dim(h.dim(), grid.dim())?;
    Ok(grid
        .iter()
        .all(|y| dot(y.coords(), x) <= h.eval_dir(y) + COMPARE_TOL))
}

/// Grid-certified `X_A ⊆ X_B`: `h_A(y) <= h_B(y) + COMPARE_TOL` on every
/// grid direction.
pub fn inclusion_test<A, B>(ha: &A, hb: &B, grid: &DirectionSet) -> Result<bool>
where
    A: SupportFunction + ?Sized,
    B: SupportFunction + ?Sized,
{
    check_dim(ha.dim(), hb.dim())?;
    check_dim(ha.dim(), grid.dim())?;
    Ok(grid
        .iter()
        .all(|y| ha.eval_dir(y) <= hb.eval_dir(y) + COMPARE_TOL))
}
