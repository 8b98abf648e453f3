use deepracing_core::control::PursuitConfig;
use deepracing_core::harness::{run_trial_live, CenterlinePursuit, LiveOptions, TrialConfig, TrialEnd};
use deepracing_core::simenv::default_oval;
use deepracing_core::telemetry::TimestampedPacket;

#[test]
fn live_pipeline_drives_the_oval() {
    let track = default_oval();
    let mut controller = CenterlinePursuit::new(track.clone(), PursuitConfig::default(), 15.0).unwrap();
    let cfg = TrialConfig { laps: 0, max_duration: 3.0, context: 3, initial_speed: 10.0, ..Default::default() };
    let mut recorded: Vec<TimestampedPacket> = Vec::new();
    let report = run_trial_live(&track, &mut controller, &cfg, &LiveOptions::default(), &mut [&mut recorded]).unwrap();
    assert_eq!(report.end, TrialEnd::TimeLimit);
    assert_eq!(report.trace.len(), 180);
    assert_eq!(recorded.len(), 180);
    assert!(report.timing.calls > 100, "{:?}", report.timing);
    assert_eq!(report.metrics.nbf, 0);
    let last = report.trace.last().unwrap();
    assert!(last.progress > 25.0);
    assert!(report.trace.iter().all(|t| t.lateral_offset.abs() < 1.0));
}
