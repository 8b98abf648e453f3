//! Kinematic vehicle and track model that stands in for the racing game.
//!
//! The vehicle is a rear-axle kinematic bicycle integrated with RK4. The
//! track is a closed centerline polyline with a uniform half width. Session
//! time and actuation latency are modelled separately so the telemetry and
//! synchronization code sees the same artefacts a real game would produce.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Point2, Vector2};

use crate::control::ControlCommand;
use crate::error::{invalid, Error, Result};
use crate::quat::UnitQuat;

/// Physics and telemetry tick.
pub const TICK_HZ: f64 = 60.0;
pub const TICK: f64 = 1.0 / TICK_HZ;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    pub wheelbase: f64,
    /// Acceleration at full throttle, m/s^2.
    pub max_accel: f64,
    /// Deceleration at full brake, m/s^2.
    pub max_brake: f64,
    /// Quadratic drag coefficient, 1/m.
    pub drag: f64,
    /// Wheel angle at steering = 1, radians.
    pub max_wheel_angle: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self { wheelbase: 3.6, max_accel: 10.0, max_brake: 20.0, drag: 0.004, max_wheel_angle: 0.35 }
    }
}

/// Rear-axle pose and speed in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub position: Point2<f64>,
    pub heading: f64,
    pub speed: f64,
}

impl VehicleState {
    pub fn new(position: Point2<f64>, heading: f64, speed: f64) -> Self {
        Self { position, heading, speed }
    }

    pub fn orientation(&self) -> UnitQuat<f64> {
        UnitQuat::from_yaw(self.heading)
    }

    pub fn velocity(&self) -> Vector2<f64> {
        Vector2::new(self.heading.cos(), self.heading.sin()) * self.speed
    }

    fn is_finite(&self) -> bool {
        self.position.x.is_finite()
            && self.position.y.is_finite()
            && self.heading.is_finite()
            && self.speed.is_finite()
    }
}

#[derive(Clone, Copy)]
struct Deriv {
    dx: f64,
    dy: f64,
    dheading: f64,
    dspeed: f64,
}

fn bicycle_rates(s: &[f64; 4], tan_delta: f64, accel: f64, p: &VehicleParams) -> Deriv {
    let v = s[3].max(0.0);
    let mut dspeed = accel - p.drag * v * v;
    if v <= 0.0 && dspeed < 0.0 {
        dspeed = 0.0;
    }
    Deriv {
        dx: v * s[2].cos(),
        dy: v * s[2].sin(),
        dheading: v * tan_delta / p.wheelbase,
        dspeed,
    }
}

/// Advances the bicycle model by `dt` seconds with the command held constant.
pub fn step_bicycle(
    state: &VehicleState,
    cmd: &ControlCommand,
    dt: f64,
    params: &VehicleParams,
) -> Result<VehicleState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid(format!("step size must be positive, got {dt}")));
    }
    if !state.is_finite() {
        return Err(Error::Fault(format!("non-finite vehicle state {state:?}")));
    }
    let tan_delta = (cmd.steering.clamp(-1.0, 1.0) * params.max_wheel_angle).tan();
    let accel = params.max_accel * cmd.throttle - params.max_brake * cmd.brake;

    let y0 = [state.position.x, state.position.y, state.heading, state.speed];
    let add = |y: &[f64; 4], k: &Deriv, h: f64| {
        [y[0] + h * k.dx, y[1] + h * k.dy, y[2] + h * k.dheading, y[3] + h * k.dspeed]
    };
    let k1 = bicycle_rates(&y0, tan_delta, accel, params);
    let k2 = bicycle_rates(&add(&y0, &k1, dt / 2.0), tan_delta, accel, params);
    let k3 = bicycle_rates(&add(&y0, &k2, dt / 2.0), tan_delta, accel, params);
    let k4 = bicycle_rates(&add(&y0, &k3, dt), tan_delta, accel, params);
    let comb = |a: f64, b: f64, c: f64, d: f64| dt / 6.0 * (a + 2.0 * b + 2.0 * c + d);

    let next = VehicleState {
        position: Point2::new(
            y0[0] + comb(k1.dx, k2.dx, k3.dx, k4.dx),
            y0[1] + comb(k1.dy, k2.dy, k3.dy, k4.dy),
        ),
        heading: y0[2] + comb(k1.dheading, k2.dheading, k3.dheading, k4.dheading),
        speed: (y0[3] + comb(k1.dspeed, k2.dspeed, k3.dspeed, k4.dspeed)).max(0.0),
    };
    if !next.is_finite() {
        return Err(Error::Fault(format!("integration produced non-finite state {next:?}")));
    }
    Ok(next)
}

/// Closed centerline with uniform half width.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    centerline: Vec<Point2<f64>>,
    arc_length: Vec<f64>,
    half_width: f64,
    start_finish_index: usize,
}

/// Projection of a world point onto the track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Localization {
    /// Centerline arc length in `[0, length)`, measured from centerline point 0.
    pub arc_length: f64,
    /// Signed distance from the centerline, positive to the left of travel.
    pub lateral_offset: f64,
    /// Distance beyond the track edge, zero while on track.
    pub outside_distance: f64,
}

impl Track {
    /// Builds a track; an open polyline is closed by repeating its first point.
    pub fn new(mut centerline: Vec<Point2<f64>>, half_width: f64, start_finish_index: usize) -> Result<Self> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(invalid("track half width must be positive"));
        }
        if centerline.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(invalid("track points must be finite"));
        }
        if centerline.first() != centerline.last() {
            if let Some(&first) = centerline.first() {
                centerline.push(first);
            }
        }
        if centerline.len() < 4 {
            return Err(invalid("track needs at least 3 distinct points"));
        }
        if start_finish_index >= centerline.len() - 1 {
            return Err(invalid("start/finish index outside the centerline"));
        }
        let mut arc_length = Vec::with_capacity(centerline.len());
        arc_length.push(0.0);
        for w in centerline.windows(2) {
            let seg = (w[1] - w[0]).norm();
            if !(seg > 0.0) {
                return Err(invalid("track has repeated consecutive points"));
            }
            arc_length.push(arc_length[arc_length.len() - 1] + seg);
        }
        Ok(Self { centerline, arc_length, half_width, start_finish_index })
    }

    pub fn centerline(&self) -> &[Point2<f64>] {
        &self.centerline
    }

    pub fn arc_lengths(&self) -> &[f64] {
        &self.arc_length
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn start_finish_index(&self) -> usize {
        self.start_finish_index
    }

    pub fn length(&self) -> f64 {
        self.arc_length[self.arc_length.len() - 1]
    }

    /// Arc length of the start/finish line.
    pub fn start_finish_arc(&self) -> f64 {
        self.arc_length[self.start_finish_index]
    }

    pub fn wrap(&self, s: f64) -> f64 {
        s.rem_euclid(self.length())
    }

    /// Centerline point and travel direction at arc length `s` (wrapped).
    pub fn station(&self, s: f64) -> (Point2<f64>, f64) {
        let s = self.wrap(s);
        let i = self
            .arc_length
            .partition_point(|&a| a <= s)
            .saturating_sub(1)
            .min(self.centerline.len() - 2);
        let (a, b) = (self.centerline[i], self.centerline[i + 1]);
        let seg = self.arc_length[i + 1] - self.arc_length[i];
        let u = ((s - self.arc_length[i]) / seg).clamp(0.0, 1.0);
        let d = b - a;
        (a + d * u, d.y.atan2(d.x))
    }

    /// Stationary vehicle on the start/finish line facing the direction of travel.
    pub fn start_pose(&self, speed: f64) -> VehicleState {
        let (p, heading) = self.station(self.start_finish_arc());
        VehicleState::new(p, heading, speed)
    }

    /// Nearest point on the centerline polyline.
    pub fn localize(&self, position: &Point2<f64>) -> Localization {
        self.localize_segments(position, 0..self.centerline.len() - 1)
    }

    /// Like [`localize`](Self::localize) but only searches within `window`
    /// meters of arc length around `hint`, falling back to the full search
    /// when nothing in that stretch is within half the window.
    pub fn localize_near(&self, position: &Point2<f64>, hint: f64, window: f64) -> Localization {
        let len = self.length();
        let segments = self.centerline.len() - 1;
        if !(window > 0.0) || 2.0 * window >= len {
            return self.localize(position);
        }
        let lo = self.wrap(hint - window);
        let first = self.arc_length.partition_point(|&a| a <= lo).saturating_sub(1).min(segments - 1);
        let mut n = 0;
        let mut covered = self.arc_length[first] - lo;
        while covered < 2.0 * window && n < segments {
            let i = (first + n) % segments;
            covered += self.arc_length[i + 1] - self.arc_length[i];
            n += 1;
        }
        let found = self.localize_segments(position, (0..n).map(|j| (first + j) % segments));
        if found.lateral_offset.abs() <= 0.5 * window {
            found
        } else {
            self.localize(position)
        }
    }

    fn localize_segments(&self, position: &Point2<f64>, segments: impl Iterator<Item = usize>) -> Localization {
        let (px, py) = (position.x, position.y);
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in segments {
            let (a, b) = (self.centerline[i], self.centerline[i + 1]);
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let len2 = dx * dx + dy * dy;
            let u = (((px - a.x) * dx + (py - a.y) * dy) / len2).clamp(0.0, 1.0);
            let (rx, ry) = (px - (a.x + dx * u), py - (a.y + dy * u));
            let dist2 = rx * rx + ry * ry;
            if dist2 < best.0 {
                let cross = dx * ry - dy * rx;
                let dist = dist2.sqrt();
                let signed = if cross < 0.0 { -dist } else { dist };
                best = (dist2, self.arc_length[i] + u * len2.sqrt(), signed);
            }
        }
        let (_, s, lateral) = best;
        Localization {
            arc_length: self.wrap(s),
            lateral_offset: lateral,
            outside_distance: (lateral.abs() - self.half_width).max(0.0),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses the `DRTRACK 1` text format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let bad = |line: usize, msg: &str| Error::TrackFormat { line, msg: msg.to_string() };

        match lines.next() {
            Some((_, "DRTRACK 1")) => {}
            Some((n, _)) => return Err(bad(n, "expected header `DRTRACK 1`")),
            None => return Err(bad(0, "empty track file")),
        }
        let half_width = match lines.next() {
            Some((n, l)) => {
                let mut parts = l.split_whitespace();
                match (parts.next(), parts.next().map(str::parse::<f64>), parts.next()) {
                    (Some("half_width"), Some(Ok(w)), None) => w,
                    _ => return Err(bad(n, "expected `half_width <meters>`")),
                }
            }
            None => return Err(bad(0, "missing half_width line")),
        };
        let mut points = Vec::new();
        for (n, l) in lines {
            let v: Vec<&str> = l.split_whitespace().collect();
            match v.as_slice() {
                [x, y] => match (x.parse::<f64>(), y.parse::<f64>()) {
                    (Ok(x), Ok(y)) => points.push(Point2::new(x, y)),
                    _ => return Err(bad(n, "coordinates must be decimal numbers")),
                },
                _ => return Err(bad(n, "expected `x y`")),
            }
        }
        Self::new(points, half_width, 0)
    }

    /// Serializes to the `DRTRACK 1` text format, rotated so the start/finish point comes first.
    pub fn to_text(&self) -> String {
        let mut out = String::from("DRTRACK 1\n");
        let _ = writeln!(out, "half_width {}", self.half_width);
        let m = self.centerline.len() - 1;
        for k in 0..=m {
            let p = self.centerline[(self.start_finish_index + k) % m];
            let _ = writeln!(out, "{} {}", p.x, p.y);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Stadium-shaped track, counter-clockwise, starting at the middle of the lower straight.
pub fn generate_oval_track(straight_length: f64, radius: f64, half_width: f64, spacing: f64) -> Result<Track> {
    let params = [straight_length, radius, half_width, spacing];
    if params.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(invalid("oval parameters must be positive and finite"));
    }
    if half_width >= radius {
        return Err(invalid("half width must be smaller than the turn radius"));
    }
    let half = straight_length / 2.0;
    let arc = std::f64::consts::PI * radius;
    let perimeter = 2.0 * straight_length + 2.0 * arc;
    let count = (perimeter / spacing).ceil() as usize;
    if count < 4 {
        return Err(invalid("spacing too coarse for the oval"));
    }
    let at = |u: f64| -> Point2<f64> {
        // Arc-length parameterization starting at (0, -radius).
        let legs = [half, arc, straight_length, arc, half];
        let mut u = u;
        if u < legs[0] {
            return Point2::new(u, -radius);
        }
        u -= legs[0];
        if u < legs[1] {
            let a = -std::f64::consts::FRAC_PI_2 + u / radius;
            return Point2::new(half + radius * a.cos(), radius * a.sin());
        }
        u -= legs[1];
        if u < legs[2] {
            return Point2::new(half - u, radius);
        }
        u -= legs[2];
        if u < legs[3] {
            let a = std::f64::consts::FRAC_PI_2 + u / radius;
            return Point2::new(-half + radius * a.cos(), radius * a.sin());
        }
        u -= legs[3];
        Point2::new(-half + u, -radius)
    };
    let step = perimeter / count as f64;
    let points: Vec<Point2<f64>> = (0..count).map(|k| at(k as f64 * step)).collect();
    Track::new(points, half_width, 0)
}

/// The oval used by the CLI and the test suite: 200 m straights, 50 m turns,
/// 6 m half width, 1 m point spacing.
pub fn default_oval() -> Track {
    generate_oval_track(200.0, 50.0, 6.0, 1.0).expect("constant oval parameters are valid")
}

/// Affine session clock: `drift * os_time + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionClock {
    drift: f64,
    offset: f64,
}

impl SessionClock {
    pub fn new(drift: f64, offset: f64) -> Result<Self> {
        if !(drift > 0.0) || !drift.is_finite() || !offset.is_finite() {
            return Err(invalid("session clock drift must be positive and offset finite"));
        }
        Ok(Self { drift, offset })
    }

    pub fn drift(&self) -> f64 {
        self.drift
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn session_now(&self, os_time: f64) -> f64 {
        self.drift * os_time + self.offset
    }
}

impl Default for SessionClock {
    fn default() -> Self {
        Self { drift: 1.0, offset: 0.0 }
    }
}

/// FIFO actuation delay line. Commands become visible `delay` seconds after
/// they are actuated; `poll` reports the newest visible command.
#[derive(Debug, Clone)]
pub struct LatencyChannel<C = ControlCommand> {
    delay: f64,
    queue: VecDeque<(C, f64)>,
    current: Option<C>,
    last_time: f64,
}

impl<C: Copy> LatencyChannel<C> {
    pub fn new(delay: f64) -> Result<Self> {
        if !(delay >= 0.0) || !delay.is_finite() {
            return Err(invalid("latency must be non-negative"));
        }
        Ok(Self { delay, queue: VecDeque::new(), current: None, last_time: f64::NEG_INFINITY })
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    /// Queues `cmd` received at `now`. Times must not go backwards.
    pub fn actuate(&mut self, cmd: C, now: f64) -> Result<()> {
        self.actuate_delayed(cmd, now, 0.0)
    }

    /// Like [`actuate`](Self::actuate) with `extra` seconds on top of the base
    /// delay. Release order stays FIFO: a command is never released before an
    /// earlier one.
    pub fn actuate_delayed(&mut self, cmd: C, now: f64, extra: f64) -> Result<()> {
        if !(extra >= 0.0) || !extra.is_finite() {
            return Err(invalid("extra delay must be non-negative"));
        }
        self.advance(now)?;
        let mut release = now + self.delay + extra;
        if let Some(&(_, last)) = self.queue.back() {
            release = release.max(last);
        }
        self.queue.push_back((cmd, release));
        Ok(())
    }

    /// Newest command whose release time has passed, if any.
    pub fn poll(&mut self, now: f64) -> Result<Option<C>> {
        self.advance(now)?;
        while let Some(&(cmd, release)) = self.queue.front() {
            if release > now {
                break;
            }
            self.current = Some(cmd);
            self.queue.pop_front();
        }
        Ok(self.current)
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    fn advance(&mut self, now: f64) -> Result<()> {
        if now < self.last_time || !now.is_finite() {
            return Err(invalid(format!("channel time went backwards: {now} < {}", self.last_time)));
        }
        self.last_time = now;
        Ok(())
    }
}
