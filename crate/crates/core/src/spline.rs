//! Interpolating cubic spline over timestamped samples.
//!
//! Piecewise cubic Hermite segments whose knot tangents are the non-uniform
//! Catmull-Rom (Barry-Goldman) tangents computed with the sample times as knots.
//! The curve passes through every sample and reproduces affine motion exactly.

use nalgebra::SVector;

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct CubicSpline<T: Scalar, const D: usize> {
    times: Vec<T>,
    points: Vec<SVector<T, D>>,
    tangents: Vec<SVector<T, D>>,
}

impl<T: Scalar, const D: usize> CubicSpline<T, D> {
    pub fn new(times: Vec<T>, points: Vec<SVector<T, D>>) -> Result<Self> {
        if times.len() != points.len() {
            return Err(invalid("spline times and points differ in length"));
        }
        if times.len() < 2 {
            return Err(invalid("spline needs at least 2 samples"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("spline times must be strictly increasing"));
        }
        let n = times.len();
        let slope = |i: usize| (points[i + 1] - points[i]) / (times[i + 1] - times[i]);
        let mut tangents = Vec::with_capacity(n);
        tangents.push(slope(0));
        for i in 1..n - 1 {
            let chord = (points[i + 1] - points[i - 1]) / (times[i + 1] - times[i - 1]);
            tangents.push(slope(i - 1) - chord + slope(i));
        }
        tangents.push(slope(n - 2));
        Ok(Self { times, points, tangents })
    }

    pub fn start(&self) -> T {
        self.times[0]
    }

    pub fn end(&self) -> T {
        self.times[self.times.len() - 1]
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    /// Index `i` of the segment `[t_i, t_{i+1}]` containing `t`.
    fn segment(&self, t: T) -> Result<usize> {
        if !(t >= self.start() && t <= self.end()) {
            return Err(Error::OutOfRange {
                query: t.as_f64(),
                start: self.start().as_f64(),
                end: self.end().as_f64(),
            });
        }
        let i = self.times.partition_point(|&k| k <= t);
        Ok(i.saturating_sub(1).min(self.times.len() - 2))
    }

    /// Position and first derivative at `t`.
    pub fn sample(&self, t: T) -> Result<(SVector<T, D>, SVector<T, D>)> {
        let i = self.segment(t)?;
        if t == self.times[i] {
            return Ok((self.points[i], self.tangents[i]));
        }
        if t == self.times[i + 1] {
            return Ok((self.points[i + 1], self.tangents[i + 1]));
        }
        let h = self.times[i + 1] - self.times[i];
        let u = (t - self.times[i]) / h;
        let (p0, p1) = (self.points[i], self.points[i + 1]);
        let (m0, m1) = (self.tangents[i] * h, self.tangents[i + 1] * h);
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        let u2 = u * u;
        let u3 = u2 * u;
        let h00 = two * u3 - three * u2 + T::one();
        let h10 = u3 - two * u2 + u;
        let h01 = -two * u3 + three * u2;
        let h11 = u3 - u2;
        let pos = p0 * h00 + m0 * h10 + p1 * h01 + m1 * h11;
        let six = T::lit(6.0);
        let four = T::lit(4.0);
        let d00 = six * u2 - six * u;
        let d10 = three * u2 - four * u + T::one();
        let d01 = -six * u2 + six * u;
        let d11 = three * u2 - two * u;
        let vel = (p0 * d00 + m0 * d10 + p1 * d01 + m1 * d11) / h;
        Ok((pos, vel))
    }

    /// Derivative at knot `i`.
    pub fn knot_tangent(&self, i: usize) -> SVector<T, D> {
        self.tangents[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    #[test]
    fn reproduces_knots_and_linear_motion() {
        let times = vec![0.0, 0.3, 0.35, 1.0, 2.2];
        let pts: Vec<Vector2<f64>> = times.iter().map(|&t| Vector2::new(1.0 + 4.0 * t, -2.0 * t)).collect();
        let s = CubicSpline::new(times.clone(), pts.clone()).unwrap();
        for (t, p) in times.iter().zip(&pts) {
            assert_eq!(s.sample(*t).unwrap().0, *p);
        }
        for k in 0..=100 {
            let t = 2.2 * k as f64 / 100.0;
            let (p, v) = s.sample(t).unwrap();
            assert!((p - Vector2::new(1.0 + 4.0 * t, -2.0 * t)).norm() < 1e-12);
            assert!((v - Vector2::new(4.0, -2.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn continuous_across_knots() {
        let times: Vec<f64> = (0..8).map(|k| k as f64 * 0.5).collect();
        let pts: Vec<Vector2<f64>> = times.iter().map(|&t| Vector2::new(t.cos(), t.sin())).collect();
        let s = CubicSpline::new(times, pts).unwrap();
        for k in 1..7 {
            let t = k as f64 * 0.5;
            let (a, va) = s.sample(t - 1e-9).unwrap();
            let (b, vb) = s.sample(t + 1e-9).unwrap();
            assert!((a - b).norm() < 1e-8);
            assert!((va - vb).norm() < 1e-6);
        }
    }

    #[test]
    fn out_of_range() {
        let s = CubicSpline::new(vec![0.0, 1.0], vec![Vector2::new(0.0, 0.0), Vector2::new(1.0, 0.0)]).unwrap();
        assert!(matches!(s.sample(1.5), Err(Error::OutOfRange { .. })));
        assert!(s.sample(-0.1).is_err());
    }
}
