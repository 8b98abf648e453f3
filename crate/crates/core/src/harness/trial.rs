//! Closed-loop trials: simulator, telemetry ring, controller and actuation delay.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::ControlCommand;
use crate::error::{invalid, Result};
use crate::harness::controllers::Controller;
use crate::harness::metrics::{compute_metrics, LapCounter, Metrics, TickRecord};
use crate::harness::ring::{snapshot_ring, RingReader, RingWriter};
use crate::simenv::{step_bicycle, LatencyChannel, SessionClock, Track, VehicleParams, VehicleState, TICK, TICK_HZ};
use crate::synclog::LogWriter;
use crate::telemetry::{
    Broadcaster, Listener, Pacer, TelemetryPacket, TimestampedPacket, FLAG_OFF_TRACK, FLAG_RESET,
};

/// Arc-length search window around the previous projection, meters.
const LOCALIZE_WINDOW: f64 = 30.0;

/// Receives every packet the simulator emits.
pub trait TelemetrySink {
    fn publish(&mut self, packet: &TimestampedPacket) -> Result<()>;
}

impl TelemetrySink for Vec<TimestampedPacket> {
    fn publish(&mut self, packet: &TimestampedPacket) -> Result<()> {
        self.push(*packet);
        Ok(())
    }
}

impl TelemetrySink for Broadcaster {
    fn publish(&mut self, packet: &TimestampedPacket) -> Result<()> {
        self.send(&packet.packet);
        Ok(())
    }
}

impl TelemetrySink for LogWriter {
    fn publish(&mut self, packet: &TimestampedPacket) -> Result<()> {
        self.append(packet)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    /// Stop after this many laps; 0 runs until `max_duration`.
    pub laps: u32,
    /// Simulated seconds before the trial is cut off.
    pub max_duration: f64,
    /// Actuation delay, seconds.
    pub latency: f64,
    /// Extra uniform random delay in `[0, latency_jitter]` per command.
    pub latency_jitter: f64,
    pub seed: u64,
    pub vehicle: VehicleParams,
    pub clock: SessionClock,
    /// Put the car back on the start line after every lap.
    pub reset_each_lap: bool,
    pub initial_speed: f64,
    /// Telemetry packets in the controller window.
    pub context: usize,
    /// Distance beyond the track edge that ends the trial.
    pub crash_distance: f64,
    /// Sleep to hold 60 Hz in wall-clock time.
    pub realtime: bool,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            laps: 5,
            max_duration: 600.0,
            latency: 0.0,
            latency_jitter: 0.0,
            seed: 0,
            vehicle: VehicleParams::default(),
            clock: SessionClock::default(),
            reset_each_lap: false,
            initial_speed: 0.0,
            context: 1,
            crash_distance: 20.0,
            realtime: false,
        }
    }
}

impl TrialConfig {
    fn validate(&self) -> Result<()> {
        if !(self.max_duration >= 0.0) || self.max_duration.is_nan() {
            return Err(invalid("max duration must be non-negative"));
        }
        if self.laps == 0 && !self.max_duration.is_finite() {
            return Err(invalid("a trial without a lap budget needs a finite duration"));
        }
        if !(self.latency_jitter >= 0.0) || !self.latency_jitter.is_finite() {
            return Err(invalid("latency jitter must be non-negative"));
        }
        if !(self.initial_speed >= 0.0) || !self.initial_speed.is_finite() {
            return Err(invalid("initial speed must be non-negative"));
        }
        if !(self.crash_distance > 0.0) {
            return Err(invalid("crash distance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialEnd {
    LapBudget,
    TimeLimit,
    /// Left the track by more than the crash distance.
    Crashed,
    ControllerFault(String),
    SimulationFault(String),
}

impl TrialEnd {
    pub fn label(&self) -> &'static str {
        match self {
            TrialEnd::LapBudget => "lap-budget",
            TrialEnd::TimeLimit => "time-limit",
            TrialEnd::Crashed => "crashed",
            TrialEnd::ControllerFault(_) => "controller-fault",
            TrialEnd::SimulationFault(_) => "simulation-fault",
        }
    }
}

/// Wall-clock cost of controller calls.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControllerTiming {
    pub calls: u64,
    pub mean: f64,
    pub max: f64,
    /// Calls that took longer than one tick.
    pub overruns: u64,
}

impl ControllerTiming {
    fn record(&mut self, elapsed: Duration) {
        let s = elapsed.as_secs_f64();
        self.calls += 1;
        self.mean += (s - self.mean) / self.calls as f64;
        self.max = self.max.max(s);
        if s > TICK {
            self.overruns += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub controller: String,
    pub metrics: Metrics,
    pub successful_laps: usize,
    pub dnf: bool,
    pub end: TrialEnd,
    pub trace: Vec<TickRecord>,
    pub timing: ControllerTiming,
}

impl TrialReport {
    pub fn lap_times(&self) -> &[f64] {
        &self.metrics.lap_times
    }

    pub fn mean_lap_time(&self) -> Option<f64> {
        let laps = self.lap_times();
        (!laps.is_empty()).then(|| laps.iter().sum::<f64>() / laps.len() as f64)
    }
}

/// Simulator side of a trial, shared by the lockstep and live runners.
struct Sim<'a> {
    track: &'a Track,
    cfg: &'a TrialConfig,
    state: VehicleState,
    applied: ControlCommand,
    channel: LatencyChannel,
    rng: ChaCha8Rng,
    counter: LapCounter,
    laps: Vec<f64>,
    progress: f64,
    last_arc: f64,
    trace: Vec<TickRecord>,
    tick: u64,
    just_reset: bool,
    end: Option<TrialEnd>,
}

impl<'a> Sim<'a> {
    fn new(track: &'a Track, cfg: &'a TrialConfig) -> Result<Self> {
        cfg.validate()?;
        let state = track.start_pose(cfg.initial_speed);
        Ok(Self {
            track,
            cfg,
            state,
            applied: ControlCommand::neutral(),
            channel: LatencyChannel::new(cfg.latency)?,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            counter: LapCounter::new(track.length(), cfg.clock.session_now(0.0)),
            laps: Vec::new(),
            progress: 0.0,
            last_arc: track.localize(&state.position).arc_length,
            trace: Vec::new(),
            tick: 0,
            just_reset: false,
            end: None,
        })
    }

    fn locate(&self) -> crate::simenv::Localization {
        self.track.localize_near(&self.state.position, self.last_arc, LOCALIZE_WINDOW)
    }

    fn os_time(&self) -> f64 {
        self.tick as f64 * TICK
    }

    /// Telemetry for the current tick, or `None` once the trial is over.
    fn observe(&mut self) -> Option<TimestampedPacket> {
        if self.end.is_some() {
            return None;
        }
        let os = self.os_time();
        if os >= self.cfg.max_duration {
            self.end = Some(TrialEnd::TimeLimit);
            return None;
        }
        let loc = self.locate();
        let lap_distance = self.track.wrap(loc.arc_length - self.track.start_finish_arc());
        let lap = u16::try_from(self.laps.len() + 1).unwrap_or(u16::MAX);
        let mut packet = TelemetryPacket::from_state(
            self.cfg.clock.session_now(os),
            &self.state,
            &self.applied,
            lap_distance,
            lap,
            self.tick as u32,
        );
        if loc.outside_distance > 0.0 {
            packet.flags |= FLAG_OFF_TRACK;
        }
        if self.just_reset {
            packet.flags |= FLAG_RESET;
        }
        Some(TimestampedPacket { packet, os_time: os })
    }

    fn actuate(&mut self, cmd: ControlCommand) -> Result<()> {
        let extra = if self.cfg.latency_jitter > 0.0 {
            self.rng.random_range(0.0..=self.cfg.latency_jitter)
        } else {
            0.0
        };
        let os = self.os_time();
        self.channel.actuate_delayed(cmd, os, extra)
    }

    /// Records the tick, checks laps and limits, and steps the physics.
    fn finish_tick(&mut self) {
        let os = self.os_time();
        let session = self.cfg.clock.session_now(os);
        match self.channel.poll(os) {
            Ok(Some(cmd)) => self.applied = cmd,
            Ok(None) => {}
            Err(e) => {
                self.end = Some(TrialEnd::SimulationFault(e.to_string()));
                return;
            }
        }
        let loc = self.locate();
        let len = self.track.length();
        let mut ds = loc.arc_length - self.last_arc;
        ds -= len * (ds / len).round();
        self.progress += ds;
        self.last_arc = loc.arc_length;
        self.trace.push(TickRecord {
            session_time: session,
            x: self.state.position.x,
            y: self.state.position.y,
            heading: self.state.heading,
            speed: self.state.speed,
            steering: self.applied.steering,
            throttle: self.applied.throttle,
            brake: self.applied.brake,
            lateral_offset: loc.lateral_offset,
            outside_distance: loc.outside_distance,
            progress: self.progress,
        });
        self.just_reset = false;

        if let Some(lap) = self.counter.update(session, self.progress) {
            self.laps.push(lap);
            log::info!("lap {} in {lap:.3} s", self.laps.len());
            if self.cfg.laps > 0 && self.laps.len() >= self.cfg.laps as usize {
                self.end = Some(TrialEnd::LapBudget);
                return;
            }
            if self.cfg.reset_each_lap {
                self.state = self.track.start_pose(self.cfg.initial_speed);
                self.last_arc = self.track.localize(&self.state.position).arc_length;
                self.just_reset = true;
                self.tick += 1;
                return;
            }
        }
        if loc.outside_distance > self.cfg.crash_distance {
            self.end = Some(TrialEnd::Crashed);
            return;
        }
        match step_bicycle(&self.state, &self.applied, TICK, &self.cfg.vehicle) {
            Ok(next) => self.state = next,
            Err(e) => {
                self.end = Some(TrialEnd::SimulationFault(e.to_string()));
                return;
            }
        }
        self.tick += 1;
    }

    fn into_report(self, controller: String, timing: ControllerTiming) -> TrialReport {
        let metrics = compute_metrics(&self.trace, self.track.length());
        debug_assert_eq!(metrics.lap_times, self.laps);
        let end = self.end.unwrap_or(TrialEnd::TimeLimit);
        let successful_laps = metrics.lap_times.len();
        let dnf = matches!(end, TrialEnd::ControllerFault(_)) || successful_laps == 0;
        TrialReport { controller, metrics, successful_laps, dnf, end, trace: self.trace, timing }
    }
}

fn publish_all(sinks: &mut [&mut dyn TelemetrySink], packet: &TimestampedPacket) -> Result<()> {
    for sink in sinks.iter_mut() {
        sink.publish(packet)?;
    }
    Ok(())
}

/// Runs a trial in lockstep: every tick the controller sees the window ending
/// at the current state before the physics advances.
pub fn run_trial(track: &Track, controller: &mut dyn Controller, cfg: &TrialConfig) -> Result<TrialReport> {
    run_trial_with_sinks(track, controller, cfg, &mut [])
}

pub fn run_trial_with_sinks(
    track: &Track,
    controller: &mut dyn Controller,
    cfg: &TrialConfig,
    sinks: &mut [&mut dyn TelemetrySink],
) -> Result<TrialReport> {
    let mut sim = Sim::new(track, cfg)?;
    let (mut writer, reader) = snapshot_ring(cfg.context.max(1), TICK)?;
    let mut timing = ControllerTiming::default();
    let mut pacer = if cfg.realtime { Some(Pacer::new(TICK_HZ)?) } else { None };

    while let Some(packet) = sim.observe() {
        if let Some(p) = pacer.as_mut() {
            p.wait();
        }
        if packet.packet.flags & FLAG_RESET != 0 {
            writer.clear();
            controller.on_reset();
        }
        if let Err(e) = publish_all(sinks, &packet) {
            sim.end = Some(TrialEnd::SimulationFault(e.to_string()));
            break;
        }
        writer.push(packet);
        if let Some(window) = reader.snapshot() {
            let started = Instant::now();
            let out = controller.command(&window);
            timing.record(started.elapsed());
            match out.and_then(|cmd| sim.actuate(cmd)) {
                Ok(()) => {}
                Err(e) => {
                    log::warn!("controller {} failed: {e}", controller.name());
                    sim.end = Some(TrialEnd::ControllerFault(e.to_string()));
                    sim.finish_tick_partial();
                    break;
                }
            }
        }
        sim.finish_tick();
    }
    Ok(sim.into_report(controller.name().to_string(), timing))
}

impl Sim<'_> {
    /// Records the faulted tick without stepping.
    fn finish_tick_partial(&mut self) {
        let end = self.end.take();
        self.finish_tick();
        self.end = end;
    }
}

/// Where the live runner sends and receives telemetry.
#[derive(Debug, Clone)]
pub struct LiveOptions {
    /// Address the ingestion context listens on.
    pub listen: SocketAddr,
    /// Extra destination for every packet, e.g. an external agent.
    pub mirror: Option<SocketAddr>,
}

impl Default for LiveOptions {
    fn default() -> Self {
        Self { listen: SocketAddr::from(([127, 0, 0, 1], 0)), mirror: None }
    }
}

/// Runs a trial in wall-clock time with three concurrent contexts: the
/// simulator broadcasts over UDP at 60 Hz, an ingestion thread feeds received
/// packets into the snapshot ring, and a control thread reads the ring and
/// sends commands back to the simulator.
pub fn run_trial_live(
    track: &Track,
    controller: &mut (dyn Controller + Send),
    cfg: &TrialConfig,
    live: &LiveOptions,
    sinks: &mut [&mut dyn TelemetrySink],
) -> Result<TrialReport> {
    let mut sim = Sim::new(track, cfg)?;
    let listener = Listener::bind(live.listen, 1024)?;
    let mut local = Broadcaster::new(listener.local_addr())?;
    let mut mirror = live.mirror.map(Broadcaster::new).transpose()?;
    let (writer, reader) = snapshot_ring(cfg.context.max(1), TICK)?;
    let (cmd_tx, cmd_rx) = unbounded::<std::result::Result<ControlCommand, String>>();
    let stop = AtomicBool::new(false);
    let name = controller.name().to_string();

    let timing = std::thread::scope(|scope| -> Result<ControllerTiming> {
        let ingest = scope.spawn(|| ingest_loop(&listener, writer, &stop));
        let control = scope.spawn(|| control_loop(controller, reader, cmd_tx, &stop));
        let sim_result = (|| -> Result<()> {
            let mut pacer = Pacer::new(TICK_HZ)?;
            while let Some(packet) = sim.observe() {
                pacer.wait();
                local.send(&packet.packet);
                if let Some(m) = mirror.as_mut() {
                    m.send(&packet.packet);
                }
                if let Err(e) = publish_all(sinks, &packet) {
                    sim.end = Some(TrialEnd::SimulationFault(e.to_string()));
                    break;
                }
                if drain_commands(&mut sim, &cmd_rx) {
                    sim.finish_tick_partial();
                    break;
                }
                sim.finish_tick();
            }
            Ok(())
        })();
        stop.store(true, Ordering::Relaxed);
        ingest.join().expect("ingestion thread panicked");
        let timing = control.join().expect("control thread panicked");
        sim_result.map(|_| timing)
    })?;
    listener.shutdown();
    Ok(sim.into_report(name, timing))
}

/// Applies pending commands; returns true if the controller reported a fault.
fn drain_commands(sim: &mut Sim<'_>, rx: &Receiver<std::result::Result<ControlCommand, String>>) -> bool {
    while let Ok(msg) = rx.try_recv() {
        match msg.and_then(|cmd| sim.actuate(cmd).map_err(|e| e.to_string())) {
            Ok(()) => {}
            Err(e) => {
                sim.end = Some(TrialEnd::ControllerFault(e));
                return true;
            }
        }
    }
    false
}

fn ingest_loop(listener: &Listener, mut writer: RingWriter, stop: &AtomicBool) {
    while !stop.load(Ordering::Relaxed) {
        if let Some(packet) = listener.recv_timeout(Duration::from_millis(20)) {
            if packet.packet.flags & FLAG_RESET != 0 {
                writer.clear();
            }
            writer.push(packet);
        }
    }
}

fn control_loop(
    controller: &mut (dyn Controller + Send),
    reader: RingReader,
    tx: crossbeam_channel::Sender<std::result::Result<ControlCommand, String>>,
    stop: &AtomicBool,
) -> ControllerTiming {
    let mut timing = ControllerTiming::default();
    let mut last_frame = None;
    let Ok(mut pacer) = Pacer::new(4.0 * TICK_HZ) else {
        return timing;
    };
    while !stop.load(Ordering::Relaxed) {
        pacer.wait();
        let Some(window) = reader.snapshot() else { continue };
        let newest = window[window.len() - 1].packet.frame;
        if last_frame == Some(newest) {
            continue;
        }
        last_frame = Some(newest);
        let started = Instant::now();
        let out = controller.command(&window);
        timing.record(started.elapsed());
        let failed = out.is_err();
        if tx.send(out.map_err(|e| e.to_string())).is_err() || failed {
            break;
        }
    }
    timing
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::PursuitConfig;
    use crate::error::Error;
    use crate::harness::controllers::{CenterlinePursuit, ConstantController};
    use crate::simenv::default_oval;

    struct Failing(u32);

    impl Controller for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn command(&mut self, _w: &[TimestampedPacket]) -> Result<ControlCommand> {
            self.0 = self.0.saturating_sub(1);
            if self.0 == 0 {
                Err(Error::Fault("boom".into()))
            } else {
                Ok(ControlCommand::new(0.0, 1.0, 0.0)?)
            }
        }
    }

    fn pursuit(track: &Track) -> CenterlinePursuit {
        CenterlinePursuit::new(track.clone(), PursuitConfig::default(), 15.0).unwrap()
    }

    #[test]
    fn zero_duration_is_empty() {
        let track = default_oval();
        let cfg = TrialConfig { max_duration: 0.0, ..Default::default() };
        let r = run_trial(&track, &mut pursuit(&track), &cfg).unwrap();
        assert!(r.trace.is_empty());
        assert_eq!(r.successful_laps, 0);
        assert_eq!(r.end, TrialEnd::TimeLimit);
    }

    #[test]
    fn hard_left_is_dnf_with_failure() {
        let track = default_oval();
        let mut c = ConstantController(ControlCommand::new(1.0, 1.0, 0.0).unwrap());
        let cfg = TrialConfig { max_duration: 60.0, ..Default::default() };
        let r = run_trial(&track, &mut c, &cfg).unwrap();
        assert!(r.dnf);
        assert_eq!(r.successful_laps, 0);
        assert!(r.metrics.nbf >= 1);
    }

    #[test]
    fn controller_fault_gives_partial_dnf() {
        let track = default_oval();
        let r = run_trial(&track, &mut Failing(30), &TrialConfig::default()).unwrap();
        assert!(r.dnf);
        assert!(matches!(r.end, TrialEnd::ControllerFault(_)));
        assert_eq!(r.trace.len(), 30);
    }

    #[test]
    fn latency_delays_first_command() {
        let track = default_oval();
        let mut c = ConstantController(ControlCommand::new(0.0, 1.0, 0.0).unwrap());
        let cfg = TrialConfig { max_duration: 1.0, latency: 0.1, ..Default::default() };
        let r = run_trial(&track, &mut c, &cfg).unwrap();
        let first = r.trace.iter().position(|t| t.throttle == 1.0).unwrap();
        // Command from tick 0 released at 0.1 s, i.e. tick 6.
        assert_eq!(first, 6);
    }

    #[test]
    fn deterministic_with_jitter_seed() {
        let track = default_oval();
        let cfg = TrialConfig { laps: 1, latency: 0.02, latency_jitter: 0.03, seed: 7, ..Default::default() };
        let a = run_trial(&track, &mut pursuit(&track), &cfg).unwrap();
        let b = run_trial(&track, &mut pursuit(&track), &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn reset_each_lap_keeps_progress_monotone() {
        let track = generate_small();
        let cfg = TrialConfig { laps: 3, reset_each_lap: true, initial_speed: 10.0, ..Default::default() };
        let r = run_trial(&track, &mut pursuit(&track), &cfg).unwrap();
        assert_eq!(r.successful_laps, 3, "{:?}", r.end);
        assert!(r.trace.windows(2).all(|w| w[1].progress >= w[0].progress - 1e-9));
        let start = track.start_pose(10.0);
        let at_start = r.trace.iter().filter(|t| t.x == start.position.x && t.y == start.position.y).count();
        assert_eq!(at_start, 3);
    }

    fn generate_small() -> Track {
        crate::simenv::generate_oval_track(40.0, 25.0, 5.0, 1.0).unwrap()
    }
}
