//! Minimal unit quaternion with shortest-arc slerp.

use crate::scalar::Scalar;

/// Quaternion `(w, x, y, z)` kept at unit norm by its constructors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuat<T: Scalar = f64> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> UnitQuat<T> {
    pub fn identity() -> Self {
        Self { w: T::one(), x: T::zero(), y: T::zero(), z: T::zero() }
    }

    /// Normalizes `(w, x, y, z)`; returns `None` for a zero or non-finite input.
    pub fn new_normalize(w: T, x: T, y: T, z: T) -> Option<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n > T::zero()) || !n.is_finite_value() {
            return None;
        }
        Some(Self { w: w / n, x: x / n, y: y / n, z: z / n })
    }

    /// Rotation by `yaw` radians about `+z`.
    pub fn from_yaw(yaw: T) -> Self {
        let half = yaw / T::lit(2.0);
        Self { w: half.cos(), x: T::zero(), y: T::zero(), z: half.sin() }
    }

    /// Heading about `+z` in `(-pi, pi]`.
    pub fn yaw(&self) -> T {
        let two = T::lit(2.0);
        let siny = two * (self.w * self.z + self.x * self.y);
        let cosy = T::one() - two * (self.y * self.y + self.z * self.z);
        siny.atan2(cosy)
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &Self) -> T {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn negated(&self) -> Self {
        Self { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    /// Spherical interpolation from `self` (u = 0) to `other` (u = 1) along
    /// the shorter great-circle arc.
    pub fn slerp(&self, other: &Self, u: T) -> Self {
        let mut end = *other;
        let mut cos = self.dot(other);
        if cos < T::zero() {
            end = end.negated();
            cos = -cos;
        }
        let (a, b) = if cos > T::one() - T::lit(1e-12) {
            (T::one() - u, u)
        } else {
            let theta = cos.min(T::one()).acos();
            let sin = theta.sin();
            (((T::one() - u) * theta).sin() / sin, (u * theta).sin() / sin)
        };
        let q = Self {
            w: a * self.w + b * end.w,
            x: a * self.x + b * end.x,
            y: a * self.y + b * end.y,
            z: a * self.z + b * end.z,
        };
        Self::new_normalize(q.w, q.x, q.y, q.z).unwrap_or(*self)
    }
}

impl<T: Scalar> Default for UnitQuat<T> {
    fn default() -> Self {
        Self::identity()
    }
}
