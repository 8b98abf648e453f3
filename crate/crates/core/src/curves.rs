//! Bezier trajectory algebra expressed as dense matrix products.
//!
//! A curve of degree `n` in `d` dimensions is stored as an `(n+1) x d`
//! control-point matrix `P`. Sampling it at `N` normalized parameters is the
//! product `A(t, n) * P` where `A` is the `N x (n+1)` Bernstein matrix, and the
//! hodograph is another Bezier curve of degree `n-1` with points
//! `n * (P[k+1] - P[k])`. Least-squares fitting inverts `A` through its SVD.

use nalgebra::{DMatrix, RowDVector};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Highest degree accepted; binomials stay exact in floating point below it.
pub const MAX_DEGREE: usize = 20;

/// Relative cutoff on singular values for the pseudoinverse in [`fit_least_squares`].
pub const PSEUDOINVERSE_RCOND: f64 = 1e-12;

/// Strictly increasing sample parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVector<T: Scalar> {
    values: Vec<T>,
}

impl<T: Scalar> TimeVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.len() < 2 {
            return Err(invalid(format!(
                "time vector needs at least 2 samples, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite_value()) {
            return Err(invalid("time vector contains non-finite values"));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("time vector must be strictly increasing"));
        }
        Ok(Self { values })
    }

    /// `count` evenly spaced parameters on `[0, 1]` with exact endpoints.
    pub fn uniform(count: usize) -> Result<Self> {
        if count < 2 {
            return Err(invalid(format!(
                "time vector needs at least 2 samples, got {count}"
            )));
        }
        let last = T::count(count - 1);
        let mut values: Vec<T> = (0..count).map(|k| T::count(k) / last).collect();
        values[0] = T::zero();
        values[count - 1] = T::one();
        Ok(Self { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when the first value is exactly 0 and the last exactly 1.
    pub fn is_normalized(&self) -> bool {
        self.values[0] == T::zero() && self.values[self.values.len() - 1] == T::one()
    }

    /// Rescales onto `[0, 1]`; see [`normalize_times`].
    pub fn normalized(&self) -> Result<(Self, T)> {
        normalize_times(&self.values)
    }
}

/// Maps absolute sample times onto `[0, 1]`.
///
/// Returns the normalized vector `s = (t - t0) / dt` together with the span
/// `dt = t[N-1] - t[0]`. The endpoints of `s` are pinned to exactly 0 and 1.
pub fn normalize_times<T: Scalar>(times: &[T]) -> Result<(TimeVector<T>, T)> {
    if times.len() < 2 {
        return Err(invalid("need at least 2 sample times"));
    }
    let t0 = times[0];
    let delta_t = times[times.len() - 1] - t0;
    if !(delta_t > T::zero()) {
        return Err(invalid(format!(
            "time span must be positive, got {}",
            delta_t.as_f64()
        )));
    }
    let mut s: Vec<T> = times.iter().map(|&t| (t - t0) / delta_t).collect();
    let last = s.len() - 1;
    s[0] = T::zero();
    s[last] = T::one();
    Ok((TimeVector::new(s)?, delta_t))
}

/// Binomial coefficient by the multiplicative recurrence.
pub fn binomial<T: Scalar>(n: usize, k: usize) -> T {
    if k > n {
        return T::zero();
    }
    let k = k.min(n - k);
    let mut c = T::one();
    for j in 1..=k {
        c = c * T::count(n - k + j) / T::count(j);
    }
    c
}

/// The `N x (n+1)` basis matrix with `A[i][j] = C(n,j) (1-t_i)^(n-j) t_i^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BernsteinMatrix<T: Scalar> {
    entries: DMatrix<T>,
    degree: usize,
}

impl<T: Scalar> BernsteinMatrix<T> {
    pub fn entries(&self) -> &DMatrix<T> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<T> {
        self.entries
    }

    pub fn degree(&self) -> usize {
        self.degree
    }
}

fn check_degree(degree: usize) -> Result<()> {
    if degree > MAX_DEGREE {
        return Err(invalid(format!(
            "degree {degree} exceeds maximum {MAX_DEGREE}"
        )));
    }
    Ok(())
}

fn bernstein_row<T: Scalar>(s: T, degree: usize, coeffs: &[T]) -> RowDVector<T> {
    let u = T::one() - s;
    RowDVector::from_fn(degree + 1, |_, j| {
        coeffs[j] * u.powi((degree - j) as i32) * s.powi(j as i32)
    })
}

/// Builds the Bernstein matrix for a normalized time vector.
pub fn bernstein_matrix<T: Scalar>(t: &TimeVector<T>, degree: usize) -> Result<BernsteinMatrix<T>> {
    if !t.is_normalized() {
        return Err(invalid("bernstein matrix requires a time vector normalized to [0, 1]"));
    }
    check_degree(degree)?;
    let coeffs: Vec<T> = (0..=degree).map(|j| binomial(degree, j)).collect();
    let mut entries = DMatrix::zeros(t.len(), degree + 1);
    for (i, &s) in t.values().iter().enumerate() {
        entries.set_row(i, &bernstein_row(s, degree, &coeffs));
    }
    Ok(BernsteinMatrix { entries, degree })
}

/// A Bezier curve given by its control-point matrix (one point per row).
#[derive(Debug, Clone, PartialEq)]
pub struct BezierCurve<T: Scalar> {
    control_points: DMatrix<T>,
}

impl<T: Scalar> BezierCurve<T> {
    pub fn new(control_points: DMatrix<T>) -> Result<Self> {
        if control_points.nrows() == 0 || control_points.ncols() == 0 {
            return Err(invalid("control point matrix must be non-empty"));
        }
        check_degree(control_points.nrows() - 1)?;
        if control_points.iter().any(|v| !v.is_finite_value()) {
            return Err(invalid("control points must be finite"));
        }
        Ok(Self { control_points })
    }

    pub fn from_points<const D: usize>(points: &[[T; D]]) -> Result<Self> {
        let m = DMatrix::from_fn(points.len(), D, |i, j| points[i][j]);
        Self::new(m)
    }

    pub fn control_points(&self) -> &DMatrix<T> {
        &self.control_points
    }

    pub fn degree(&self) -> usize {
        self.control_points.nrows() - 1
    }

    pub fn dimension(&self) -> usize {
        self.control_points.ncols()
    }

    pub fn control_point(&self, k: usize) -> RowDVector<T> {
        self.control_points.row(k).into_owned()
    }

    /// Samples the curve at every parameter of `t`; one output row per sample.
    pub fn evaluate(&self, t: &TimeVector<T>) -> Result<DMatrix<T>> {
        let a = bernstein_matrix(t, self.degree())?;
        Ok(a.entries() * &self.control_points)
    }

    /// Single point at parameter `s` in `[0, 1]`.
    pub fn point_at(&self, s: T) -> Result<RowDVector<T>> {
        if !(s >= T::zero() && s <= T::one()) {
            return Err(invalid(format!("parameter {} outside [0, 1]", s.as_f64())));
        }
        let n = self.degree();
        let coeffs: Vec<T> = (0..=n).map(|j| binomial(n, j)).collect();
        Ok(bernstein_row(s, n, &coeffs) * &self.control_points)
    }

    /// Hodograph `dB/ds`: degree `n-1` with control points `n (P[k+1] - P[k])`.
    ///
    /// A degree-0 curve yields a single zero control point.
    pub fn derivative(&self) -> BezierCurve<T> {
        let n = self.degree();
        let d = self.dimension();
        if n == 0 {
            return BezierCurve { control_points: DMatrix::zeros(1, d) };
        }
        let scale = T::count(n);
        let p = &self.control_points;
        let delta = DMatrix::from_fn(n, d, |k, j| scale * (p[(k + 1, j)] - p[(k, j)]));
        BezierCurve { control_points: delta }
    }

    /// Translates every control point by `offset`.
    pub fn translated(&self, offset: &[T]) -> Result<BezierCurve<T>> {
        if offset.len() != self.dimension() {
            return Err(invalid("offset dimension mismatch"));
        }
        let mut p = self.control_points.clone();
        for mut row in p.row_iter_mut() {
            for (v, o) in row.iter_mut().zip(offset) {
                *v += *o;
            }
        }
        Ok(BezierCurve { control_points: p })
    }
}

/// Least-squares Bezier fit `P* = V S^+ U^T L` through the SVD of `A(t, n)`.
///
/// Singular values below `1e-12 * sigma_max` are dropped, so repeated or
/// clustered sample times still yield the minimum-norm solution.
pub fn fit_least_squares<T: Scalar>(
    samples: &DMatrix<T>,
    t: &TimeVector<T>,
    degree: usize,
) -> Result<BezierCurve<T>> {
    if samples.nrows() != t.len() {
        return Err(invalid(format!(
            "{} samples but {} sample times",
            samples.nrows(),
            t.len()
        )));
    }
    if samples.ncols() == 0 {
        return Err(invalid("samples must have at least one dimension"));
    }
    if samples.nrows() < degree + 1 {
        return Err(Error::Underdetermined { samples: samples.nrows(), required: degree + 1 });
    }
    if samples.iter().any(|v| !v.is_finite_value()) {
        return Err(invalid("samples must be finite"));
    }
    let a = bernstein_matrix(t, degree)?.into_entries();
    let svd = a.svd(true, true);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let sigma_max = svd.singular_values.iter().fold(T::zero(), |m, &s| m.max(s));
    let cutoff = T::lit(PSEUDOINVERSE_RCOND) * sigma_max;

    let mut projected = u.transpose() * samples;
    for (i, &sigma) in svd.singular_values.iter().enumerate() {
        let inv = if sigma > cutoff { T::one() / sigma } else { T::zero() };
        for v in projected.row_mut(i).iter_mut() {
            *v *= inv;
        }
    }
    BezierCurve::new(v_t.transpose() * projected)
}

/// Non-negative weights of the composite Bezier loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T: Scalar> {
    pub position: T,
    pub velocity: T,
    pub control_point: T,
}

impl<T: Scalar> LossWeights<T> {
    pub fn new(position: T, velocity: T, control_point: T) -> Result<Self> {
        let w = [position, velocity, control_point];
        if w.iter().any(|v| !v.is_finite_value() || *v < T::zero()) {
            return Err(invalid("loss weights must be finite and non-negative"));
        }
        if w.iter().all(|v| *v == T::zero()) {
            return Err(invalid("loss weights must not all be zero"));
        }
        Ok(Self { position, velocity, control_point })
    }

    /// Weighted sum of the three terms.
    pub fn combine(&self, terms: &LossTerms<T>) -> T {
        self.position * terms.position
            + self.velocity * terms.velocity
            + self.control_point * terms.control_point
    }
}

impl<T: Scalar> Default for LossWeights<T> {
    /// Position 1.0, velocity 0.1, control point 0.05.
    fn default() -> Self {
        Self { position: T::lit(1.0), velocity: T::lit(0.1), control_point: T::lit(0.05) }
    }
}

/// Unweighted loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms<T: Scalar> {
    pub position: T,
    pub velocity: T,
    pub control_point: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BezierLoss<T: Scalar> {
    pub terms: LossTerms<T>,
    pub total: T,
}

fn mean_row_distance<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    let diff = a - b;
    let sum = diff.row_iter().fold(T::zero(), |acc, r| acc + r.norm());
    sum / T::count(diff.nrows())
}

/// Composite loss of a predicted curve against ground-truth positions and
/// velocities sampled at absolute `times` (seconds).
///
/// The position and velocity terms are mean Euclidean distances over the
/// samples; the curve's hodograph is divided by the window span so it is in
/// the same units as the ground-truth velocities. The control-point term is
/// the mean distance to the least-squares fit of the ground-truth positions.
pub fn bezier_loss<T: Scalar>(
    pred: &BezierCurve<T>,
    gt_points: &DMatrix<T>,
    gt_velocities: &DMatrix<T>,
    times: &[T],
    weights: &LossWeights<T>,
) -> Result<BezierLoss<T>> {
    let n = times.len();
    if gt_points.nrows() != n || gt_velocities.nrows() != n {
        return Err(invalid(format!(
            "length mismatch: {n} times, {} points, {} velocities",
            gt_points.nrows(),
            gt_velocities.nrows()
        )));
    }
    let d = pred.dimension();
    if gt_points.ncols() != d || gt_velocities.ncols() != d {
        return Err(invalid("ground truth dimension does not match curve dimension"));
    }
    let (s, delta_t) = normalize_times(times)?;

    let positions = pred.evaluate(&s)?;
    let velocities = pred.derivative().evaluate(&s)? / delta_t;
    let reference = fit_least_squares(gt_points, &s, pred.degree())?;

    let terms = LossTerms {
        position: mean_row_distance(&positions, gt_points),
        velocity: mean_row_distance(&velocities, gt_velocities),
        control_point: mean_row_distance(pred.control_points(), reference.control_points()),
    };
    Ok(BezierLoss { terms, total: weights.combine(&terms) })
}

/// Reduction used by [`waypoint_loss_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WaypointReduction {
    /// `sum_i sqrt(|y_i - y*_i|)`.
    #[default]
    SqrtNormSum,
    /// `mean_i |y_i - y*_i|`.
    MeanNorm,
}

pub fn waypoint_loss<T: Scalar>(pred: &DMatrix<T>, gt: &DMatrix<T>) -> Result<T> {
    waypoint_loss_with(pred, gt, WaypointReduction::default())
}

pub fn waypoint_loss_with<T: Scalar>(
    pred: &DMatrix<T>,
    gt: &DMatrix<T>,
    reduction: WaypointReduction,
) -> Result<T> {
    if pred.shape() != gt.shape() {
        return Err(invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    if pred.nrows() == 0 {
        return Err(invalid("no waypoints"));
    }
    let diff = pred - gt;
    let norms = diff.row_iter().map(|r| r.norm());
    Ok(match reduction {
        WaypointReduction::SqrtNormSum => norms.fold(T::zero(), |acc, d| acc + d.sqrt()),
        WaypointReduction::MeanNorm => {
            norms.fold(T::zero(), |acc, d| acc + d) / T::count(pred.nrows())
        }
    })
}
