//! Pure Pursuit steering and bang-bang longitudinal control.
//!
//! Waypoints are expressed in the vehicle frame: origin at the rear axle,
//! `+x` forward, `+y` left.

use nalgebra::{Point2, Vector2};

use crate::curves::{BezierCurve, TimeVector};
use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::spline::CubicSpline;

/// Number of uniform samples taken from a Bezier reference when choosing a lookahead point.
pub const BEZIER_LOOKAHEAD_SAMPLES: usize = 60;

/// Normalized actuator command. Positive steering turns left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlCommand<T: Scalar = f64> {
    pub steering: T,
    pub throttle: T,
    pub brake: T,
}

impl<T: Scalar> ControlCommand<T> {
    /// Validates ranges and rejects simultaneous throttle and brake.
    pub fn new(steering: T, throttle: T, brake: T) -> Result<Self> {
        let unit = |v: T| v >= T::zero() && v <= T::one();
        if !(steering >= -T::one() && steering <= T::one()) {
            return Err(invalid(format!("steering {} outside [-1, 1]", steering.as_f64())));
        }
        if !unit(throttle) || !unit(brake) {
            return Err(invalid("throttle and brake must lie in [0, 1]"));
        }
        if throttle > T::zero() && brake > T::zero() {
            return Err(invalid("throttle and brake cannot both be applied"));
        }
        Ok(Self { steering, throttle, brake })
    }

    pub fn neutral() -> Self {
        Self { steering: T::zero(), throttle: T::zero(), brake: T::zero() }
    }

    /// Combines a steering value with a bang-bang pedal pair.
    pub fn from_parts(steering: T, pedals: (T, T)) -> Self {
        Self {
            steering: steering.clamp(-T::one(), T::one()),
            throttle: pedals.0,
            brake: pedals.1,
        }
    }
}

impl<T: Scalar> Default for ControlCommand<T> {
    fn default() -> Self {
        Self::neutral()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PursuitConfig<T: Scalar = f64> {
    /// Lookahead gain in seconds: `d = gamma * v`.
    pub gamma: T,
    pub wheelbase: T,
    /// Physical wheel angle (radians) reached at steering = 1.
    pub max_wheel_angle: T,
    pub lookahead_min: T,
    pub lookahead_max: T,
}

impl<T: Scalar> PursuitConfig<T> {
    pub fn new(
        gamma: T,
        wheelbase: T,
        max_wheel_angle: T,
        lookahead_min: T,
        lookahead_max: T,
    ) -> Result<Self> {
        if !(gamma > T::zero()) || !(wheelbase > T::zero()) || !(max_wheel_angle > T::zero()) {
            return Err(invalid("gamma, wheelbase and max wheel angle must be positive"));
        }
        if !(lookahead_min > T::zero() && lookahead_min <= lookahead_max) {
            return Err(invalid("lookahead clamp must satisfy 0 < min <= max"));
        }
        Ok(Self { gamma, wheelbase, max_wheel_angle, lookahead_min, lookahead_max })
    }

    pub fn with_gamma(self, gamma: T) -> Result<Self> {
        Self::new(gamma, self.wheelbase, self.max_wheel_angle, self.lookahead_min, self.lookahead_max)
    }
}

impl<T: Scalar> Default for PursuitConfig<T> {
    fn default() -> Self {
        Self {
            gamma: T::lit(0.4),
            wheelbase: T::lit(3.6),
            max_wheel_angle: T::lit(0.35),
            lookahead_min: T::lit(2.0),
            lookahead_max: T::lit(50.0),
        }
    }
}

/// `clamp(gamma * v, min, max)`.
pub fn lookahead_distance<T: Scalar>(speed: T, cfg: &PursuitConfig<T>) -> T {
    (cfg.gamma * speed.max(T::zero())).clamp(cfg.lookahead_min, cfg.lookahead_max)
}

/// Waypoint whose range is closest to `distance`; ties go to the later index.
pub fn select_lookahead<T: Scalar>(
    waypoints: &[Point2<T>],
    distance: T,
) -> Result<(Point2<T>, usize)> {
    let mut best: Option<(T, usize)> = None;
    for (i, w) in waypoints.iter().enumerate() {
        let err = (w.coords.norm() - distance).abs();
        match best {
            Some((e, _)) if err > e => {}
            _ => best = Some((err, i)),
        }
    }
    let (_, index) = best.ok_or_else(|| invalid("no waypoints to choose a lookahead from"))?;
    Ok((waypoints[index], index))
}

/// Curvature of the arc through the rear axle, tangent to the heading, that
/// reaches `lookahead`: `2y / (x^2 + y^2)`.
pub fn arc_curvature<T: Scalar>(lookahead: &Point2<T>) -> Result<T> {
    let d2 = lookahead.coords.norm_squared();
    if !(d2 > T::zero()) {
        return Err(invalid("lookahead point coincides with the vehicle"));
    }
    Ok(T::lit(2.0) * lookahead.y / d2)
}

/// Normalized steering for the arc to `lookahead`.
pub fn steering_command<T: Scalar>(lookahead: &Point2<T>, cfg: &PursuitConfig<T>) -> Result<T> {
    let kappa = arc_curvature(lookahead)?;
    let delta = (kappa * cfg.wheelbase).atan();
    Ok((delta / cfg.max_wheel_angle).clamp(-T::one(), T::one()))
}

/// Full throttle below the reference speed, full brake above, coast on equality.
pub fn bang_bang_throttle<T: Scalar>(v_current: T, v_ref: T) -> (T, T) {
    if v_current < v_ref {
        (T::one(), T::zero())
    } else if v_current > v_ref {
        (T::zero(), T::one())
    } else {
        (T::zero(), T::zero())
    }
}

/// Output of one pursuit evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PursuitOutput<T: Scalar> {
    pub command: ControlCommand<T>,
    pub lookahead: Point2<T>,
    pub lookahead_index: usize,
    pub reference_speed: T,
}

/// Tracks a local-frame Bezier reference spanning `duration` seconds.
///
/// The curve is sampled at 60 uniform parameters; the reference speed is
/// `|dB/ds| / duration` at the chosen sample.
pub fn pursue_bezier<T: Scalar>(
    curve: &BezierCurve<T>,
    duration: T,
    speed: T,
    cfg: &PursuitConfig<T>,
) -> Result<PursuitOutput<T>> {
    if curve.dimension() != 2 {
        return Err(invalid("pursuit needs a planar curve"));
    }
    if !(duration > T::zero()) {
        return Err(invalid("reference duration must be positive"));
    }
    let s = TimeVector::uniform(BEZIER_LOOKAHEAD_SAMPLES)?;
    let pts = curve.evaluate(&s)?;
    let waypoints: Vec<Point2<T>> = pts.row_iter().map(|r| Point2::new(r[0], r[1])).collect();
    let (lookahead, index) = select_lookahead(&waypoints, lookahead_distance(speed, cfg))?;
    let hodograph = curve.derivative().point_at(s.values()[index])?;
    let reference_speed = hodograph.norm() / duration;
    let steering = steering_command(&lookahead, cfg)?;
    Ok(PursuitOutput {
        command: ControlCommand::from_parts(steering, bang_bang_throttle(speed, reference_speed)),
        lookahead,
        lookahead_index: index,
        reference_speed,
    })
}

/// Tracks a local-frame waypoint list sampled at `times`; the reference speed
/// is the spline derivative magnitude at the chosen waypoint.
pub fn pursue_waypoints<T: Scalar>(
    waypoints: &[Point2<T>],
    times: &[T],
    speed: T,
    cfg: &PursuitConfig<T>,
) -> Result<PursuitOutput<T>> {
    let (lookahead, index) = select_lookahead(waypoints, lookahead_distance(speed, cfg))?;
    let spline = CubicSpline::new(
        times.to_vec(),
        waypoints.iter().map(|p| p.coords).collect::<Vec<Vector2<T>>>(),
    )?;
    let reference_speed = spline.knot_tangent(index).norm();
    let steering = steering_command(&lookahead, cfg)?;
    Ok(PursuitOutput {
        command: ControlCommand::from_parts(steering, bang_bang_throttle(speed, reference_speed)),
        lookahead,
        lookahead_index: index,
        reference_speed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> PursuitConfig<f64> {
        PursuitConfig::default()
    }

    #[test]
    fn lookahead_clamps() {
        assert!((lookahead_distance(20.0, &cfg()) - 8.0).abs() < 1e-12);
        assert_eq!(lookahead_distance(0.0, &cfg()), 2.0);
        assert_eq!(lookahead_distance(1000.0, &cfg()), 50.0);
    }

    #[test]
    fn select_examples() {
        let w = [Point2::new(1.0, 0.0), Point2::new(1.9, 0.0), Point2::new(0.0, 2.5)];
        assert_eq!(select_lookahead(&w, 2.0).unwrap().1, 1);
        assert_eq!(select_lookahead(&w[..1], 2.0).unwrap().1, 0);
        let tie = [Point2::new(2.0, 0.0), Point2::new(0.0, 2.0)];
        assert_eq!(select_lookahead(&tie, 2.0).unwrap().1, 1);
        assert!(select_lookahead::<f64>(&[], 2.0).is_err());
    }

    #[test]
    fn steering_examples() {
        assert_eq!(steering_command(&Point2::new(10.0, 0.0), &cfg()).unwrap(), 0.0);
        let l = steering_command(&Point2::new(6.0, 1.3), &cfg()).unwrap();
        let r = steering_command(&Point2::new(6.0, -1.3), &cfg()).unwrap();
        assert_eq!(l, -r);
        assert!(steering_command(&Point2::new(0.0, 0.0), &cfg()).is_err());
    }

    #[test]
    fn steering_matches_circle_construction() {
        // Circle tangent to the x axis at the origin with centre (0, R) through (8, 1):
        // 64 + (1 - R)^2 = R^2  =>  R = 65 / 2.
        let radius = (8.0f64 * 8.0 + 1.0) / 2.0;
        let delta = (3.6f64 / radius).atan();
        assert!((delta - 0.110_319_497).abs() < 1e-8);
        let kappa: f64 = arc_curvature(&Point2::new(8.0, 1.0)).unwrap();
        assert!((kappa - 2.0 / 65.0).abs() < 1e-15);
        let wide = PursuitConfig { max_wheel_angle: std::f64::consts::FRAC_PI_2, ..cfg() };
        let s = steering_command(&Point2::new(8.0, 1.0), &wide).unwrap();
        assert!((s * wide.max_wheel_angle - delta).abs() < 1e-12);
    }

    #[test]
    fn bang_bang_examples() {
        assert_eq!(bang_bang_throttle(10.0, 15.0), (1.0, 0.0));
        assert_eq!(bang_bang_throttle(15.0, 10.0), (0.0, 1.0));
        assert_eq!(bang_bang_throttle(12.0, 12.0), (0.0, 0.0));
    }

    #[test]
    fn command_validation() {
        assert!(ControlCommand::new(0.0, 0.5, 0.5).is_err());
        assert!(ControlCommand::new(1.5, 0.0, 0.0).is_err());
        assert!(ControlCommand::new(-1.0, 1.0, 0.0).is_ok());
        assert!(PursuitConfig::new(0.0, 3.6, 0.35, 2.0, 50.0).is_err());
        assert!(PursuitConfig::new(0.4, 3.6, 0.35, 5.0, 2.0).is_err());
    }

    #[test]
    fn bezier_reference_speed() {
        // Straight 30 m reference over 1.5 s: 20 m/s everywhere.
        let c = BezierCurve::from_points(&[[0.0, 0.0], [10.0, 0.0], [20.0, 0.0], [30.0, 0.0]]).unwrap();
        let out = pursue_bezier(&c, 1.5, 15.0, &cfg()).unwrap();
        assert!((out.reference_speed - 20.0).abs() < 1e-9);
        assert_eq!(out.command.steering, 0.0);
        assert_eq!((out.command.throttle, out.command.brake), (1.0, 0.0));
        assert!((out.lookahead.x - 6.0).abs() <= 30.0 / 59.0);
    }

    #[test]
    fn waypoint_reference_speed() {
        let times: Vec<f64> = (0..20).map(|k| k as f64 * 0.07).collect();
        let pts: Vec<Point2<f64>> = times.iter().map(|t| Point2::new(25.0 * t, 0.0)).collect();
        let out = pursue_waypoints(&pts, &times, 30.0, &cfg()).unwrap();
        assert!((out.reference_speed - 25.0).abs() < 1e-9);
        assert_eq!((out.command.throttle, out.command.brake), (0.0, 1.0));
    }

    proptest! {
        #[test]
        fn steering_bounded_and_mirrored(x in -1e3f64..1e3, y in -1e3f64..1e3) {
            prop_assume!(x * x + y * y > 1e-9);
            let s = steering_command(&Point2::new(x, y), &cfg()).unwrap();
            prop_assert!(s.abs() <= 1.0);
            let m = steering_command(&Point2::new(x, -y), &cfg()).unwrap();
            prop_assert_eq!(s, -m);
        }

        #[test]
        fn selection_scale_invariant(pts in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..40),
                                     d in 0.5f64..40.0, scale in prop::sample::select(vec![0.5, 2.0, 4.0, 0.25])) {
            let w: Vec<Point2<f64>> = pts.iter().map(|&(x, y)| Point2::new(x, y)).collect();
            let scaled: Vec<Point2<f64>> = w.iter().map(|p| Point2::new(p.x * scale, p.y * scale)).collect();
            prop_assert_eq!(select_lookahead(&w, d).unwrap().1, select_lookahead(&scaled, d * scale).unwrap().1);
        }

        #[test]
        fn mirrored_waypoints_mirror_steering(pts in proptest::collection::vec((0.1f64..50.0, -20.0f64..20.0), 1..40), v in 0.0f64..60.0) {
            let w: Vec<Point2<f64>> = pts.iter().map(|&(x, y)| Point2::new(x, y)).collect();
            let m: Vec<Point2<f64>> = w.iter().map(|p| Point2::new(p.x, -p.y)).collect();
            let d = lookahead_distance(v, &cfg());
            let (a, _) = select_lookahead(&w, d).unwrap();
            let (b, _) = select_lookahead(&m, d).unwrap();
            prop_assert_eq!(steering_command(&a, &cfg()).unwrap(), -steering_command(&b, &cfg()).unwrap());
        }

        #[test]
        fn pedals_exclusive(v in 0.0f64..100.0, r in 0.0f64..100.0) {
            let (t, b) = bang_bang_throttle(v, r);
            prop_assert!(t * b == 0.0);
        }
    }
}
