//! Controllers driven by the trial runner.

use std::net::{SocketAddr, UdpSocket};
use std::path::Path;

use nalgebra::{Point2, Rotation2};

use crate::control::{
    bang_bang_throttle, lookahead_distance, select_lookahead, steering_command, ControlCommand, PursuitConfig,
};
use crate::error::{invalid, Error, Result};
use crate::quat::UnitQuat;
use crate::simenv::Track;
use crate::telemetry::{decode_command, TimestampedPacket, COMMAND_SIZE};

/// Maps the latest telemetry window (oldest first) to one command.
pub trait Controller {
    fn name(&self) -> &str;

    fn command(&mut self, window: &[TimestampedPacket]) -> Result<ControlCommand>;

    /// Called after the vehicle is reset to the start pose.
    fn on_reset(&mut self) {}
}

fn newest(window: &[TimestampedPacket]) -> Result<&TimestampedPacket> {
    window.last().ok_or_else(|| Error::InsufficientData("empty telemetry window".into()))
}

/// Pure pursuit on points sampled along the track centerline ahead of the car.
#[derive(Debug, Clone)]
pub struct CenterlinePursuit {
    track: Track,
    cfg: PursuitConfig,
    target_speed: f64,
    spacing: f64,
    last_arc: Option<f64>,
}

impl CenterlinePursuit {
    pub fn new(track: Track, cfg: PursuitConfig, target_speed: f64) -> Result<Self> {
        if !(target_speed >= 0.0) || !target_speed.is_finite() {
            return Err(invalid("target speed must be non-negative"));
        }
        Ok(Self { track, cfg, target_speed, spacing: 0.25, last_arc: None })
    }

    pub fn config(&self) -> &PursuitConfig {
        &self.cfg
    }

    pub fn target_speed(&self) -> f64 {
        self.target_speed
    }

    /// Centerline points ahead of `position`, in the vehicle frame.
    fn local_waypoints(&mut self, position: Point2<f64>, heading: f64, reach: f64) -> Vec<Point2<f64>> {
        let s0 = match self.last_arc {
            Some(hint) => self.track.localize_near(&position, hint, 30.0),
            None => self.track.localize(&position),
        }
        .arc_length;
        self.last_arc = Some(s0);
        let to_local = Rotation2::new(-heading);
        let count = (reach / self.spacing).ceil() as usize + 1;
        (1..=count)
            .map(|k| {
                let (p, _) = self.track.station(s0 + k as f64 * self.spacing);
                Point2::from(to_local * (p - position))
            })
            .collect()
    }
}

impl Controller for CenterlinePursuit {
    fn name(&self) -> &str {
        "pure-pursuit-centerline"
    }

    fn command(&mut self, window: &[TimestampedPacket]) -> Result<ControlCommand> {
        let p = &newest(window)?.packet;
        let position = Point2::new(p.position[0], p.position[1]);
        let [w, x, y, z] = p.orientation;
        let heading = UnitQuat { w, x, y, z }.yaw();
        let speed = f64::from(p.speed);
        let d = lookahead_distance(speed, &self.cfg);
        let waypoints = self.local_waypoints(position, heading, d + 10.0);
        let (target, _) = select_lookahead(&waypoints, d)?;
        let steering = steering_command(&target, &self.cfg)?;
        Ok(ControlCommand::from_parts(steering, bang_bang_throttle(speed, self.target_speed)))
    }

    fn on_reset(&mut self) {
        self.last_arc = None;
    }
}

/// Emits the same command every tick.
#[derive(Debug, Clone, Copy)]
pub struct ConstantController(pub ControlCommand);

impl Controller for ConstantController {
    fn name(&self) -> &str {
        "constant"
    }

    fn command(&mut self, _window: &[TimestampedPacket]) -> Result<ControlCommand> {
        Ok(self.0)
    }
}

/// Plays back a recorded command sequence, holding the last one when exhausted.
#[derive(Debug, Clone)]
pub struct ReplayController {
    commands: Vec<ControlCommand>,
    next: usize,
}

impl ReplayController {
    pub fn new(commands: Vec<ControlCommand>) -> Result<Self> {
        if commands.is_empty() {
            return Err(invalid("replay needs at least one command"));
        }
        Ok(Self { commands, next: 0 })
    }

    /// Reads the steering, throttle and brake columns of a `report.csv`.
    pub fn from_report(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| invalid(format!("replay file lacks column {name}")))
        };
        let (si, ti, bi) = (col("steering")?, col("throttle")?, col("brake")?);
        let mut commands = Vec::new();
        for row in reader.records() {
            let row = row?;
            let get = |i: usize| -> Result<f64> {
                row.get(i)
                    .and_then(|v| v.trim().parse().ok())
                    .ok_or_else(|| invalid(format!("bad number in replay row {}", commands.len() + 1)))
            };
            commands.push(ControlCommand::new(get(si)?, get(ti)?, get(bi)?)?);
        }
        Self::new(commands)
    }
}

impl Controller for ReplayController {
    fn name(&self) -> &str {
        "replay"
    }

    fn command(&mut self, _window: &[TimestampedPacket]) -> Result<ControlCommand> {
        let cmd = self.commands[self.next.min(self.commands.len() - 1)];
        self.next += 1;
        Ok(cmd)
    }
}

/// Commands arriving as UDP datagrams from another process; the newest valid
/// datagram wins, and the previous command is held when none arrived.
#[derive(Debug)]
pub struct ExternalController {
    socket: UdpSocket,
    current: ControlCommand,
    rejected: u64,
}

impl ExternalController {
    pub fn bind(addr: SocketAddr) -> Result<Self> {
        let socket = UdpSocket::bind(addr)?;
        socket.set_nonblocking(true)?;
        Ok(Self { socket, current: ControlCommand::neutral(), rejected: 0 })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.socket.local_addr()?)
    }

    /// Datagrams that failed to decode.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }
}

impl Controller for ExternalController {
    fn name(&self) -> &str {
        "external"
    }

    fn command(&mut self, _window: &[TimestampedPacket]) -> Result<ControlCommand> {
        let mut buf = [0u8; 64];
        loop {
            match self.socket.recv(&mut buf) {
                Ok(n) => match decode_command(&buf[..n]) {
                    Ok(cmd) => self.current = cmd,
                    Err(e) => {
                        self.rejected += 1;
                        log::warn!("dropping command datagram ({n} bytes, want {COMMAND_SIZE}): {e}");
                    }
                },
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => break,
                Err(e) => return Err(e.into()),
            }
        }
        Ok(self.current)
    }
}
