//! Snapshot ring shared between telemetry ingestion and the control loop.
//!
//! The writer keeps the last `capacity` packets privately and publishes an
//! immutable copy of the full window after every accepted push. Readers load
//! the latest published window atomically; neither side ever waits on the other.

use std::collections::VecDeque;
use std::sync::Arc;

use arc_swap::ArcSwapOption;

use crate::error::{invalid, Result};
use crate::telemetry::TimestampedPacket;

/// What happened to a pushed packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PushOutcome {
    Accepted,
    /// Accepted after discarding a window broken by a time gap.
    Restarted,
    /// Session time not after the newest stored packet.
    Rejected,
}

pub type Snapshot = Arc<Vec<TimestampedPacket>>;

/// Write side; single owner.
pub struct RingWriter {
    capacity: usize,
    max_gap: f64,
    window: VecDeque<TimestampedPacket>,
    published: Arc<ArcSwapOption<Vec<TimestampedPacket>>>,
}

/// Read side; cheap to clone and share across threads.
#[derive(Clone)]
pub struct RingReader {
    published: Arc<ArcSwapOption<Vec<TimestampedPacket>>>,
}

/// Creates a ring holding `capacity` packets. Consecutive packets further
/// apart than two `period`s break the window.
pub fn snapshot_ring(capacity: usize, period: f64) -> Result<(RingWriter, RingReader)> {
    if capacity == 0 {
        return Err(invalid("ring capacity must be at least 1"));
    }
    if !(period > 0.0) {
        return Err(invalid("telemetry period must be positive"));
    }
    let published = Arc::new(ArcSwapOption::empty());
    Ok((
        RingWriter {
            capacity,
            // Half a microsecond of slack absorbs rounding in accumulated tick times.
            max_gap: 2.0 * period + 5e-7,
            window: VecDeque::with_capacity(capacity),
            published: Arc::clone(&published),
        },
        RingReader { published },
    ))
}

impl RingWriter {
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, packet: TimestampedPacket) -> PushOutcome {
        let t = packet.packet.session_time;
        let mut outcome = PushOutcome::Accepted;
        if let Some(last) = self.window.back() {
            let prev = last.packet.session_time;
            if !(t > prev) {
                return PushOutcome::Rejected;
            }
            if t - prev > self.max_gap {
                self.window.clear();
                self.published.store(None);
                outcome = PushOutcome::Restarted;
            }
        }
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(packet);
        if self.window.len() == self.capacity {
            self.published.store(Some(Arc::new(self.window.iter().copied().collect())));
        }
        outcome
    }

    /// Drops the current window, e.g. after a vehicle reset.
    pub fn clear(&mut self) {
        self.window.clear();
        self.published.store(None);
    }
}

impl RingReader {
    /// Latest full window, oldest first, or `None` until one exists.
    pub fn snapshot(&self) -> Option<Snapshot> {
        self.published.load_full()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::TelemetryPacket;

    fn at(t: f64) -> TimestampedPacket {
        TimestampedPacket { packet: TelemetryPacket { session_time: t, ..Default::default() }, os_time: t }
    }

    #[test]
    fn publishes_only_full_windows() {
        let (mut w, r) = snapshot_ring(3, 0.1).unwrap();
        assert!(r.snapshot().is_none());
        w.push(at(0.0));
        w.push(at(0.1));
        assert!(r.snapshot().is_none());
        w.push(at(0.2));
        let s = r.snapshot().unwrap();
        assert_eq!(s.iter().map(|p| p.packet.session_time).collect::<Vec<_>>(), vec![0.0, 0.1, 0.2]);
        w.push(at(0.3));
        assert_eq!(r.snapshot().unwrap()[0].packet.session_time, 0.1);
        // Earlier snapshot is unaffected.
        assert_eq!(s[0].packet.session_time, 0.0);
    }

    #[test]
    fn gap_restarts_and_stale_is_rejected() {
        let (mut w, r) = snapshot_ring(2, 0.1).unwrap();
        w.push(at(0.0));
        w.push(at(0.1));
        assert_eq!(w.push(at(0.1)), PushOutcome::Rejected);
        assert_eq!(w.push(at(0.05)), PushOutcome::Rejected);
        assert_eq!(w.push(at(0.3)), PushOutcome::Accepted);
        assert_eq!(w.push(at(0.6)), PushOutcome::Restarted);
        assert!(r.snapshot().is_none());
        w.push(at(0.7));
        assert_eq!(r.snapshot().unwrap().len(), 2);
        assert!(snapshot_ring(0, 0.1).is_err());
    }
}
