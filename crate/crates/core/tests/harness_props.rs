use proptest::prelude::*;

use deepracing_core::harness::{compute_metrics, snapshot_ring, LapCounter, PushOutcome, TickRecord};
use deepracing_core::simenv::TICK;
use deepracing_core::telemetry::{TelemetryPacket, TimestampedPacket};

#[derive(Debug, Clone)]
enum Op {
    Push(f64),
    Read,
    Clear,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        6 => Just(Op::Push(1.0)),
        1 => (0.0f64..2.5).prop_map(Op::Push),
        1 => (2.5f64..8.0).prop_map(Op::Push),
        1 => (-2.0f64..0.0).prop_map(Op::Push),
        4 => Just(Op::Read),
        1 => Just(Op::Clear),
    ]
}

fn stamped(t: f64) -> TimestampedPacket {
    TimestampedPacket { packet: TelemetryPacket { session_time: t, ..Default::default() }, os_time: t }
}

proptest! {
    #[test]
    fn ring_snapshots_are_ordered_and_contiguous(capacity in 1usize..12, ops in prop::collection::vec(op(), 1..400)) {
        let (mut w, r) = snapshot_ring(capacity, TICK).unwrap();
        let mut t = 0.0;
        let mut newest = f64::NEG_INFINITY;
        for op in ops {
            match op {
                Op::Push(step) => {
                    let candidate = t + step * TICK;
                    let outcome = w.push(stamped(candidate));
                    prop_assert_eq!(outcome == PushOutcome::Rejected, candidate <= newest);
                    if outcome != PushOutcome::Rejected {
                        t = candidate;
                        newest = candidate;
                    }
                }
                Op::Clear => {
                    w.clear();
                    newest = f64::NEG_INFINITY;
                    prop_assert!(r.snapshot().is_none());
                }
                Op::Read => {
                    if let Some(s) = r.snapshot() {
                        prop_assert_eq!(s.len(), capacity);
                        prop_assert_eq!(s[s.len() - 1].packet.session_time, newest);
                        for pair in s.windows(2) {
                            let dt = pair[1].packet.session_time - pair[0].packet.session_time;
                            prop_assert!(dt > 0.0 && dt <= 2.0 * TICK + 1e-6);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn lap_times_fit_in_trace(steps in prop::collection::vec(-0.2f64..1.0, 2..3000), len in 20.0f64..200.0) {
        let mut progress = 0.0;
        let trace: Vec<TickRecord> = steps
            .iter()
            .enumerate()
            .map(|(k, ds)| {
                progress += ds;
                TickRecord { session_time: k as f64 * TICK, progress, ..Default::default() }
            })
            .collect();
        let m = compute_metrics(&trace, len);
        prop_assert!(m.lap_times.iter().sum::<f64>() <= m.duration + 1e-9);
        prop_assert!(m.lap_times.iter().all(|&t| t > 0.0));
        prop_assert!(m.lap_times.len() as f64 <= (progress.max(0.0) / len).floor() + 1e-9);
        prop_assert_eq!(m.nbf, 0);
    }

    #[test]
    fn failures_are_well_formed(flags in prop::collection::vec(prop::option::of(0.01f64..5.0), 1..2000)) {
        let trace: Vec<TickRecord> = flags
            .iter()
            .enumerate()
            .map(|(k, out)| TickRecord {
                session_time: k as f64 * TICK,
                progress: k as f64 * 0.3,
                outside_distance: out.unwrap_or(0.0),
                ..Default::default()
            })
            .collect();
        let m = compute_metrics(&trace, 1e9);
        prop_assert_eq!(m.nbf, m.failures.len());
        for f in &m.failures {
            prop_assert!(f.t_end > f.t_start);
            prop_assert!(f.mean_outside > 0.0);
        }
        if m.nbf > 0 {
            let mean = m.failures.iter().map(|f| f.mean_outside).sum::<f64>() / m.nbf as f64;
            prop_assert_eq!(m.bfs, mean);
        }
    }
}

#[test]
fn lap_counter_needs_forward_crossing() {
    let mut c = LapCounter::new(50.0, 0.0);
    let mut laps = Vec::new();
    for k in 0..600 {
        if let Some(l) = c.update(k as f64 * 0.1, k as f64 * 0.5) {
            laps.push(l);
        }
    }
    assert_eq!(laps.len(), 5);
    assert!(laps.iter().all(|&l| (l - 10.0).abs() < 1e-9));
}
