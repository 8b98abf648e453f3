//! Clock synchronization, latency estimation, pose interpolation and label
//! extraction over logged telemetry.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, Point2, Rotation2, Vector2};

use crate::curves::{fit_least_squares, BezierCurve, TimeVector};
use crate::error::{invalid, Error, Result};
use crate::quat::UnitQuat;
use crate::scalar::Scalar;
use crate::simenv::LatencyChannel;
use crate::spline::CubicSpline;
use crate::telemetry::{decode_packet, encode_packet, TimestampedPacket, PACKET_SIZE};

/// Ordinary least-squares line `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct LineFit<T: Scalar> {
    slope: T,
    intercept: T,
    r_squared: T,
}

fn fit_line<T: Scalar>(pairs: &[(T, T)]) -> Result<LineFit<T>> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientData(format!("{} samples, need at least 2", pairs.len())));
    }
    if pairs.iter().any(|(x, y)| !x.is_finite_value() || !y.is_finite_value()) {
        return Err(invalid("regression data must be finite"));
    }
    // Canonical order makes the floating-point sums independent of input order.
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.partial_cmp(&b.1).unwrap()));

    let n = T::count(sorted.len());
    let mean_x = sorted.iter().fold(T::zero(), |acc, p| acc + p.0) / n;
    let mean_y = sorted.iter().fold(T::zero(), |acc, p| acc + p.1) / n;
    let (mut sxx, mut sxy, mut syy) = (T::zero(), T::zero(), T::zero());
    for &(x, y) in &sorted {
        let (dx, dy) = (x - mean_x, y - mean_y);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if !(sxx > T::zero()) {
        return Err(Error::DegenerateData("all abscissae are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res = sorted.iter().fold(T::zero(), |acc, &(x, y)| {
        let r = y - (slope * x + intercept);
        acc + r * r
    });
    let r_squared = if syy > T::zero() {
        (T::one() - ss_res / syy).clamp(T::zero(), T::one())
    } else {
        T::one()
    };
    Ok(LineFit { slope, intercept, r_squared })
}

/// Affine map from receiver OS time to session time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockModel<T: Scalar = f64> {
    pub slope: T,
    pub intercept: T,
    pub r_squared: T,
    pub n_samples: usize,
}

impl<T: Scalar> ClockModel<T> {
    pub fn session_time(&self, os_time: T) -> T {
        self.slope * os_time + self.intercept
    }

    pub fn os_time(&self, session_time: T) -> T {
        (session_time - self.intercept) / self.slope
    }
}

/// Least-squares regression of session time on OS time over `(os_time, session_time)` pairs.
pub fn fit_clock_model<T: Scalar>(pairs: &[(T, T)]) -> Result<ClockModel<T>> {
    let fit = fit_line(pairs)?;
    Ok(ClockModel {
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        n_samples: pairs.len(),
    })
}

/// Actuation latency from a steering ramp observed as `(os_time, steering)`.
///
/// Only unsaturated samples (strictly between 0 and 1) enter the regression;
/// the latency is the line's x-intercept minus `ramp_start`.
pub fn measure_latency<T: Scalar>(ramp: &[(T, T)], ramp_start: T) -> Result<T> {
    let rising: Vec<(T, T)> = ramp
        .iter()
        .copied()
        .filter(|&(_, s)| s > T::zero() && s < T::one())
        .collect();
    if rising.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} unsaturated ramp samples, need at least 2",
            rising.len()
        )));
    }
    let fit = fit_line(&rising).map_err(|e| match e {
        Error::DegenerateData(m) => Error::InsufficientData(m),
        other => other,
    })?;
    if !(fit.slope > T::zero()) {
        return Err(Error::DegenerateData("steering does not rise over the ramp".into()));
    }
    Ok(-fit.intercept / fit.slope - ramp_start)
}

/// Synthetic steering-ramp experiment through a [`LatencyChannel`].
///
/// Commands ramp from 0 to 1 over `ramp_duration`, are issued at
/// `command_rate_hz` starting at `ramp_start`, and the visible steering is
/// observed at `observe_rate_hz` beginning `phase` seconds after time zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampExperiment {
    pub delay: f64,
    pub ramp_start: f64,
    pub ramp_duration: f64,
    pub command_rate_hz: f64,
    pub observe_rate_hz: f64,
    pub phase: f64,
}

impl RampExperiment {
    pub fn new(delay: f64, observe_rate_hz: f64) -> Self {
        Self {
            delay,
            ramp_start: 0.5,
            ramp_duration: 1.0,
            command_rate_hz: 1000.0,
            observe_rate_hz,
            phase: 0.0,
        }
    }

    /// Observed `(os_time, steering)` samples.
    pub fn observe(&self) -> Result<Vec<(f64, f64)>> {
        if !(self.command_rate_hz > 0.0 && self.observe_rate_hz > 0.0 && self.ramp_duration > 0.0) {
            return Err(invalid("ramp rates and duration must be positive"));
        }
        let mut channel = LatencyChannel::new(self.delay)?;
        let end = self.ramp_start + self.ramp_duration + self.delay + 0.25;
        let cmd_period = 1.0 / self.command_rate_hz;
        let obs_period = 1.0 / self.observe_rate_hz;
        let mut k = 0u64;
        let mut j = 0u64;
        let mut out = Vec::new();
        loop {
            let t_cmd = self.ramp_start + k as f64 * cmd_period;
            let t_obs = self.phase + j as f64 * obs_period;
            if t_obs > end {
                break;
            }
            if t_cmd <= t_obs && t_cmd <= end {
                let value = ((t_cmd - self.ramp_start) / self.ramp_duration).clamp(0.0, 1.0);
                channel.actuate(value, t_cmd)?;
                k += 1;
            } else {
                let seen = channel.poll(t_obs)?.unwrap_or(0.0);
                out.push((t_obs, seen));
                j += 1;
            }
        }
        Ok(out)
    }

    pub fn estimate(&self) -> Result<f64> {
        measure_latency(&self.observe()?, self.ramp_start)
    }
}

/// Interpolated ego state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Point2<f64>,
    pub orientation: UnitQuat<f64>,
    pub velocity: Vector2<f64>,
}

impl Pose {
    pub fn heading(&self) -> f64 {
        self.orientation.yaw()
    }
}

const LOG_HEADER: &[u8] = b"DRLOG 1\n";
const LOG_RECORD: usize = 8 + PACKET_SIZE;

/// Telemetry log ordered by session time, with the position spline built once.
#[derive(Debug, Clone)]
pub struct StateLog {
    entries: Vec<TimestampedPacket>,
    spline: CubicSpline<f64, 2>,
}

impl StateLog {
    /// Sorts by session time and drops repeated session times (first kept).
    pub fn new(mut entries: Vec<TimestampedPacket>) -> Result<Self> {
        if entries.iter().any(|e| !e.packet.session_time.is_finite()) {
            return Err(invalid("log contains non-finite session times"));
        }
        entries.sort_by(|a, b| a.packet.session_time.total_cmp(&b.packet.session_time));
        entries.dedup_by(|b, a| a.packet.session_time == b.packet.session_time);
        if entries.len() < 2 {
            return Err(Error::InsufficientData("log needs at least 2 distinct samples".into()));
        }
        let times = entries.iter().map(|e| e.packet.session_time).collect();
        let points = entries
            .iter()
            .map(|e| Vector2::new(e.packet.position[0], e.packet.position[1]))
            .collect();
        let spline = CubicSpline::new(times, points)?;
        Ok(Self { entries, spline })
    }

    pub fn entries(&self) -> &[TimestampedPacket] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.spline.start()
    }

    pub fn end(&self) -> f64 {
        self.spline.end()
    }

    pub fn duration(&self) -> f64 {
        self.end() - self.start()
    }

    /// Regression of the logged session times on their receive timestamps.
    pub fn clock_model(&self) -> Result<ClockModel<f64>> {
        let pairs: Vec<(f64, f64)> = self.entries.iter().map(|e| (e.os_time, e.packet.session_time)).collect();
        fit_clock_model(&pairs)
    }

    fn orientation_at(&self, i: usize) -> UnitQuat<f64> {
        let [w, x, y, z] = self.entries[i].packet.orientation;
        let raw = UnitQuat { w, x, y, z };
        if (raw.norm() - 1.0).abs() <= 1e-12 {
            raw
        } else {
            UnitQuat::new_normalize(w, x, y, z).unwrap_or_default()
        }
    }

    /// Pose at `session_time`: spline position and velocity, slerped orientation.
    pub fn interpolate_pose(&self, session_time: f64) -> Result<Pose> {
        let (p, v) = self.spline.sample(session_time)?;
        let times = self.spline.times();
        let i = times.partition_point(|&t| t <= session_time).saturating_sub(1).min(times.len() - 2);
        let orientation = if session_time == times[i] {
            self.orientation_at(i)
        } else if session_time == times[i + 1] {
            self.orientation_at(i + 1)
        } else {
            let u = (session_time - times[i]) / (times[i + 1] - times[i]);
            self.orientation_at(i).slerp(&self.orientation_at(i + 1), u)
        };
        Ok(Pose { position: Point2::from(p), orientation, velocity: v })
    }

    fn sample_pose(&self, i: usize) -> Pose {
        let pk = &self.entries[i].packet;
        Pose {
            position: Point2::new(pk.position[0], pk.position[1]),
            orientation: self.orientation_at(i),
            velocity: Vector2::new(pk.velocity[0], pk.velocity[1]),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = LogWriter::create(path)?;
        for e in &self.entries {
            w.append(e)?;
        }
        w.finish()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_log_entries(path)?)
    }
}

/// Appends `DRLOG 1` records: `os_time` as little-endian `f64` then the raw packet.
pub struct LogWriter {
    out: BufWriter<File>,
}

impl LogWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(LOG_HEADER)?;
        Ok(Self { out })
    }

    pub fn append(&mut self, entry: &TimestampedPacket) -> Result<()> {
        self.out.write_all(&entry.os_time.to_le_bytes())?;
        self.out.write_all(&encode_packet(&entry.packet))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Reads every record of a `DRLOG 1` file in file order.
pub fn read_log_entries(path: impl AsRef<Path>) -> Result<Vec<TimestampedPacket>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    parse_log(&bytes)
}

pub fn parse_log(bytes: &[u8]) -> Result<Vec<TimestampedPacket>> {
    let body = bytes
        .strip_prefix(LOG_HEADER)
        .ok_or_else(|| Error::LogFormat("missing `DRLOG 1` header".into()))?;
    if body.len() % LOG_RECORD != 0 {
        return Err(Error::LogFormat(format!(
            "body length {} is not a multiple of the {LOG_RECORD}-byte record",
            body.len()
        )));
    }
    body.chunks_exact(LOG_RECORD)
        .map(|rec| {
            let os_time = f64::from_le_bytes(rec[..8].try_into().expect("8-byte prefix"));
            Ok(TimestampedPacket { packet: decode_packet(&rec[8..])?, os_time })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelConfig {
    /// Past states per record, including the anchor.
    pub context: usize,
    /// Future waypoints per record, the first at the anchor itself.
    pub points: usize,
    /// Seconds spanned by the future waypoints.
    pub horizon: f64,
    /// Degree of the fitted Bezier label.
    pub degree: usize,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self { context: 5, points: 60, horizon: 1.4, degree: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub anchor_session_time: f64,
    /// Oldest first; the last entry is the anchor.
    pub past_states: Vec<Pose>,
    /// `points x 2`, anchor frame (+x forward, +y left).
    pub future_waypoints: DMatrix<f64>,
    /// `points x 2`, m/s in the anchor frame.
    pub future_velocities: DMatrix<f64>,
    /// Session times of the future waypoints.
    pub future_times: Vec<f64>,
    pub fitted_curve: BezierCurve<f64>,
}

/// One label record per anchor sample that has `context` past samples and a
/// full `horizon` of future log.
pub fn extract_label_pairs(log: &StateLog, cfg: &LabelConfig) -> Result<Vec<LabelRecord>> {
    if cfg.context == 0 {
        return Err(invalid("context must be at least 1"));
    }
    if cfg.points < 2 {
        return Err(invalid("need at least 2 future points"));
    }
    if !(cfg.horizon > 0.0) || !cfg.horizon.is_finite() {
        return Err(invalid("horizon must be positive"));
    }
    if cfg.points < cfg.degree + 1 {
        return Err(Error::Underdetermined { samples: cfg.points, required: cfg.degree + 1 });
    }
    let s = TimeVector::uniform(cfg.points)?;
    let last = (cfg.points - 1) as f64;
    let mut records = Vec::new();
    for i in (cfg.context - 1)..log.len() {
        let anchor = log.entries[i].packet.session_time;
        if anchor + cfg.horizon > log.end() {
            break;
        }
        let here = log.sample_pose(i);
        let to_local = Rotation2::new(-here.heading());
        let mut waypoints = DMatrix::zeros(cfg.points, 2);
        let mut velocities = DMatrix::zeros(cfg.points, 2);
        let mut times = Vec::with_capacity(cfg.points);
        for k in 0..cfg.points {
            let t = if k == cfg.points - 1 { anchor + cfg.horizon } else { anchor + cfg.horizon * (k as f64 / last) };
            let pose = log.interpolate_pose(t)?;
            let p = to_local * (pose.position - here.position);
            let v = to_local * pose.velocity;
            waypoints[(k, 0)] = p.x;
            waypoints[(k, 1)] = p.y;
            velocities[(k, 0)] = v.x;
            velocities[(k, 1)] = v.y;
            times.push(t);
        }
        let fitted_curve = fit_least_squares(&waypoints, &s, cfg.degree)?;
        records.push(LabelRecord {
            anchor_session_time: anchor,
            past_states: (i + 1 - cfg.context..=i).map(|j| log.sample_pose(j)).collect(),
            future_waypoints: waypoints,
            future_velocities: velocities,
            future_times: times,
            fitted_curve,
        });
    }
    Ok(records)
}

/// CSV with one row per record: anchor time, waypoint x/y pairs, control-point x/y pairs.
pub fn write_labels_csv<W: Write>(records: &[LabelRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(first) = records.first() {
        let mut header = vec!["anchor_session_time".to_string()];
        for k in 0..first.future_waypoints.nrows() {
            header.push(format!("x{k}"));
            header.push(format!("y{k}"));
        }
        for k in 0..=first.fitted_curve.degree() {
            header.push(format!("p{k}_x"));
            header.push(format!("p{k}_y"));
        }
        w.write_record(&header)?;
    }
    for r in records {
        let mut row = vec![r.anchor_session_time.to_string()];
        for p in r.future_waypoints.row_iter().chain(r.fitted_curve.control_points().row_iter()) {
            row.push(p[0].to_string());
            row.push(p[1].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
