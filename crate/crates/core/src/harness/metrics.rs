//! Lap timing and boundary-failure metrics over a trial trace.

use std::collections::VecDeque;

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::simenv::TICK;

/// One simulation tick as recorded by the trial runner.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TickRecord {
    pub session_time: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub steering: f64,
    pub throttle: f64,
    pub brake: f64,
    pub lateral_offset: f64,
    pub outside_distance: f64,
    /// Centerline distance travelled since the start line, unwrapped across laps.
    pub progress: f64,
}

/// Window over which progress must be monotone for a crossing to count.
pub const LAP_MONOTONE_WINDOW: f64 = 1.0;

/// Counts start/finish crossings of unwrapped progress.
///
/// A crossing happens when progress moves into a new multiple of the track
/// length beyond the last counted one. It counts only if progress was monotone
/// over the preceding window; a rejected crossing can still be counted when the
/// car backs over the line and crosses it again.
#[derive(Debug, Clone)]
pub struct LapCounter {
    track_length: f64,
    laps: u32,
    last_line: i64,
    last_crossing: f64,
    history: VecDeque<(f64, f64)>,
}

impl LapCounter {
    pub fn new(track_length: f64, start_time: f64) -> Self {
        Self { track_length, laps: 0, last_line: 0, last_crossing: start_time, history: VecDeque::new() }
    }

    pub fn laps(&self) -> u32 {
        self.laps
    }

    /// Feeds one sample; returns the lap time when this sample completes a lap.
    pub fn update(&mut self, session_time: f64, progress: f64) -> Option<f64> {
        let prev = self.history.back().map(|&(_, p)| p);
        self.history.push_back((session_time, progress));
        while let Some(&(t, _)) = self.history.front() {
            if session_time - t > LAP_MONOTONE_WINDOW {
                self.history.pop_front();
            } else {
                break;
            }
        }
        let line = (progress / self.track_length).floor() as i64;
        let prev_line = (prev? / self.track_length).floor() as i64;
        if line <= prev_line || line <= self.last_line {
            return None;
        }
        let monotone = self
            .history
            .iter()
            .zip(self.history.iter().skip(1))
            .all(|(a, b)| b.1 >= a.1);
        if !monotone {
            return None;
        }
        self.laps += 1;
        self.last_line = line;
        let lap = session_time - self.last_crossing;
        self.last_crossing = session_time;
        Some(lap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFailure {
    pub t_start: f64,
    /// First inside tick after the excursion, or one tick past the trace end.
    pub t_end: f64,
    pub s_start: f64,
    pub s_end: f64,
    pub mean_outside: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metrics {
    pub lap_times: Vec<f64>,
    pub failures: Vec<BoundaryFailure>,
    pub nbf: usize,
    pub bfs: f64,
    pub tbf: f64,
    pub dbf: f64,
    /// Mean absolute lateral distance to the centerline.
    pub mean_abs_offset: f64,
    pub duration: f64,
    pub distance: f64,
}

/// Boundary failures, their score and spacing, and lap times for `trace`.
///
/// With fewer than two failures TBF and DBF fall back to the trace duration
/// and distance; with none BFS is 0.
pub fn compute_metrics(trace: &[TickRecord], track_length: f64) -> Metrics {
    let Some(first) = trace.first() else {
        return Metrics::default();
    };
    let last = trace[trace.len() - 1];
    let duration = last.session_time - first.session_time;
    let distance = last.progress - first.progress;

    let mut failures = Vec::new();
    let mut i = 0;
    while i < trace.len() {
        if trace[i].outside_distance > 0.0 {
            let start = i;
            let mut sum = 0.0;
            while i < trace.len() && trace[i].outside_distance > 0.0 {
                sum += trace[i].outside_distance;
                i += 1;
            }
            let (t_end, s_end) = match trace.get(i) {
                Some(r) => (r.session_time, r.progress),
                None => (last.session_time + TICK, last.progress),
            };
            failures.push(BoundaryFailure {
                t_start: trace[start].session_time,
                t_end,
                s_start: trace[start].progress,
                s_end,
                mean_outside: sum / (i - start) as f64,
            });
        } else {
            i += 1;
        }
    }

    let nbf = failures.len();
    let bfs = if nbf == 0 {
        0.0
    } else {
        failures.iter().map(|f| f.mean_outside).sum::<f64>() / nbf as f64
    };
    let (tbf, dbf) = if nbf < 2 {
        (duration, distance)
    } else {
        let gaps = (nbf - 1) as f64;
        let dt: f64 = failures.windows(2).map(|w| w[1].t_start - w[0].t_start).sum();
        let ds: f64 = failures.windows(2).map(|w| w[1].s_start - w[0].s_start).sum();
        (dt / gaps, ds / gaps)
    };

    let mut counter = LapCounter::new(track_length, first.session_time);
    let lap_times = trace.iter().filter_map(|r| counter.update(r.session_time, r.progress)).collect();
    let mean_abs_offset = trace.iter().map(|r| r.lateral_offset.abs()).sum::<f64>() / trace.len() as f64;

    Metrics { lap_times, failures, nbf, bfs, tbf, dbf, mean_abs_offset, duration, distance }
}

/// Component-wise RMSE of `(steering, throttle)` predictions.
pub fn rmse_control<T: Scalar>(pred: &[(T, T)], gt: &[(T, T)]) -> Result<(T, T)> {
    if pred.len() != gt.len() {
        return Err(invalid(format!("length mismatch: {} vs {}", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(invalid("no samples"));
    }
    let n = T::count(pred.len());
    let (mut ss, mut st) = (T::zero(), T::zero());
    for (p, g) in pred.iter().zip(gt) {
        let (ds, dt) = (p.0 - g.0, p.1 - g.1);
        ss += ds * ds;
        st += dt * dt;
    }
    Ok(((ss / n).sqrt(), (st / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: f64, progress: f64, outside: f64) -> TickRecord {
        TickRecord { session_time: t, progress, outside_distance: outside, ..Default::default() }
    }

    #[test]
    fn no_failures_convention() {
        let trace: Vec<TickRecord> = (0..600).map(|k| rec(k as f64 * TICK, k as f64 * 0.25, 0.0)).collect();
        let m = compute_metrics(&trace, 1000.0);
        assert_eq!(m.nbf, 0);
        assert_eq!(m.bfs, 0.0);
        assert_eq!(m.tbf, m.duration);
        assert_eq!(m.dbf, m.distance);
        assert!((m.duration - 599.0 * TICK).abs() < 1e-12);
    }

    #[test]
    fn three_constant_excursions() {
        let trace: Vec<TickRecord> = (0..300)
            .map(|k| {
                let out = if (20..30).contains(&k) || (100..101).contains(&k) || (250..300).contains(&k) { 2.0 } else { 0.0 };
                rec(k as f64 * TICK, k as f64, out)
            })
            .collect();
        let m = compute_metrics(&trace, 1e6);
        assert_eq!(m.nbf, 3);
        assert_eq!(m.bfs, 2.0);
        assert_eq!(m.failures[0].t_start, 20.0 * TICK);
        assert_eq!(m.failures[0].t_end, 30.0 * TICK);
        assert_eq!(m.failures[2].t_end, 299.0 * TICK + TICK);
    }

    #[test]
    fn failures_ten_seconds_and_500_m_apart() {
        let trace: Vec<TickRecord> = (0..1200)
            .map(|k| {
                let t = k as f64 / 60.0;
                let out = if k == 30 || k == 31 || k == 630 { 1.0 } else { 0.0 };
                rec(t, k as f64 * (500.0 / 600.0), out)
            })
            .collect();
        let m = compute_metrics(&trace, 1e6);
        assert_eq!(m.nbf, 2);
        assert!((m.tbf - 10.0).abs() < 1e-9);
        assert!((m.dbf - 500.0).abs() < 1e-9);
    }

    #[test]
    fn laps_from_progress() {
        let len = 100.0;
        let trace: Vec<TickRecord> = (0..2000).map(|k| rec(k as f64 * TICK, k as f64 * 0.2, 0.0)).collect();
        let m = compute_metrics(&trace, len);
        // 0.2 m per tick: 500 ticks per lap.
        assert_eq!(m.lap_times.len(), 3);
        for lap in &m.lap_times {
            assert!((lap - 500.0 * TICK).abs() < 1e-9);
        }
        assert!(m.lap_times.iter().sum::<f64>() <= m.duration);
    }

    #[test]
    fn reverse_crossing_is_rejected() {
        let mut c = LapCounter::new(100.0, 0.0);
        let mut t = 0.0;
        // Back and forth over the line.
        for p in [99.0, 99.5, 99.0, 100.2] {
            assert_eq!(c.update(t, p), None);
            t += 0.1;
        }
        for k in 0..20 {
            c.update(t, 100.2 + k as f64 * 0.1);
            t += 0.1;
        }
        assert_eq!(c.laps(), 0);
        // Monotone progress over a full second to the next lap line.
        let mut c = LapCounter::new(100.0, 0.0);
        let mut got = None;
        for k in 0..=200 {
            got = got.or(c.update(k as f64 * 0.01, 98.0 + k as f64 * 0.01));
        }
        assert!((got.unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn rmse_examples() {
        let gt = [(0.1, 0.5), (-0.2, 0.7), (0.0, 1.0)];
        assert_eq!(rmse_control(&gt, &gt).unwrap(), (0.0, 0.0));
        let pred: Vec<(f64, f64)> = gt.iter().map(|&(s, t)| (s + 0.1, t)).collect();
        let (rs, rt) = rmse_control(&pred, &gt).unwrap();
        assert!((rs - 0.1).abs() < 1e-12);
        assert_eq!(rt, 0.0);
        assert!(rmse_control(&pred[..2], &gt).is_err());
        assert!(rmse_control::<f64>(&[], &[]).is_err());
    }
}
