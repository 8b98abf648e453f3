//! Fire-and-forget UDP telemetry.
//!
//! One datagram carries exactly one fixed-size little-endian packet:
//!
//! | offset | size | field                         |
//! |-------:|-----:|-------------------------------|
//! | 0      | 4    | magic `DRTB`                  |
//! | 4      | 1    | version (1)                   |
//! | 5      | 8    | session_time `f64`            |
//! | 13     | 4    | steering `f32`                |
//! | 17     | 4    | throttle `f32`                |
//! | 21     | 4    | brake `f32`                   |
//! | 25     | 24   | position `3 x f64`            |
//! | 49     | 24   | velocity `3 x f64`            |
//! | 73     | 32   | orientation `4 x f64` (w,x,y,z) |
//! | 105    | 4    | speed `f32`                   |
//! | 109    | 4    | lap_distance `f32`            |
//! | 113    | 2    | lap_number `u16`              |
//! | 115    | 1    | flags `u8`                    |
//! | 116    | 4    | frame `u32`                   |
//! | 120    | 1    | reserved, zero                |

use std::io::ErrorKind;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, TrySendError};

use crate::control::ControlCommand;
use crate::error::{invalid, Error, Result};
use crate::simenv::VehicleState;

pub const MAGIC: [u8; 4] = *b"DRTB";
pub const VERSION: u8 = 1;
pub const PACKET_SIZE: usize = 121;
pub const DEFAULT_PORT: u16 = 20777;
pub const ADDR_ENV: &str = "DEEPRACING_TELEMETRY_ADDR";

/// Set on packets emitted while the vehicle is outside the track limits.
pub const FLAG_OFF_TRACK: u8 = 0x01;
/// Set on the first packet after a reset to the start pose.
pub const FLAG_RESET: u8 = 0x02;

/// One vehicle-state snapshot as broadcast by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TelemetryPacket {
    /// Session time at which the physics step produced this state.
    pub session_time: f64,
    pub steering: f32,
    pub throttle: f32,
    pub brake: f32,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub orientation: [f64; 4],
    pub speed: f32,
    pub lap_distance: f32,
    pub lap_number: u16,
    pub flags: u8,
    /// Physics tick counter.
    pub frame: u32,
}

impl TelemetryPacket {
    pub fn from_state(
        session_time: f64,
        state: &VehicleState,
        cmd: &ControlCommand,
        lap_distance: f64,
        lap_number: u16,
        frame: u32,
    ) -> Self {
        let q = state.orientation();
        let v = state.velocity();
        Self {
            session_time,
            steering: cmd.steering as f32,
            throttle: cmd.throttle as f32,
            brake: cmd.brake as f32,
            position: [state.position.x, state.position.y, 0.0],
            velocity: [v.x, v.y, 0.0],
            orientation: [q.w, q.x, q.y, q.z],
            speed: state.speed as f32,
            lap_distance: lap_distance as f32,
            lap_number,
            flags: 0,
            frame,
        }
    }

    /// Checks value ranges and the quaternion norm.
    pub fn validate(&self) -> Result<()> {
        let q = self.orientation;
        let norm = (q.iter().map(|c| c * c).sum::<f64>()).sqrt();
        if !((norm - 1.0).abs() <= 1e-6) {
            return Err(invalid(format!("orientation norm {norm} is not 1")));
        }
        if !(-1.0..=1.0).contains(&self.steering)
            || !(0.0..=1.0).contains(&self.throttle)
            || !(0.0..=1.0).contains(&self.brake)
        {
            return Err(invalid("control fields out of range"));
        }
        if !self.session_time.is_finite() || self.position.iter().chain(&self.velocity).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite kinematic field"));
        }
        Ok(())
    }
}

/// Packet paired with the receiver's monotonic clock reading.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TimestampedPacket {
    pub packet: TelemetryPacket,
    pub os_time: f64,
}

pub fn encode_packet(p: &TelemetryPacket) -> [u8; PACKET_SIZE] {
    let mut out = [0u8; PACKET_SIZE];
    let mut at = 0;
    let mut put = |bytes: &[u8]| {
        out[at..at + bytes.len()].copy_from_slice(bytes);
        at += bytes.len();
    };
    put(&MAGIC);
    put(&[VERSION]);
    put(&p.session_time.to_le_bytes());
    put(&p.steering.to_le_bytes());
    put(&p.throttle.to_le_bytes());
    put(&p.brake.to_le_bytes());
    for v in p.position.iter().chain(&p.velocity).chain(&p.orientation) {
        put(&v.to_le_bytes());
    }
    put(&p.speed.to_le_bytes());
    put(&p.lap_distance.to_le_bytes());
    put(&p.lap_number.to_le_bytes());
    put(&[p.flags]);
    put(&p.frame.to_le_bytes());
    put(&[0]);
    debug_assert_eq!(at, PACKET_SIZE);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[self.at..self.at + N]);
        self.at += N;
        b
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }
}

pub fn decode_packet(bytes: &[u8]) -> Result<TelemetryPacket> {
    if bytes.len() != PACKET_SIZE {
        return Err(Error::Truncated { expected: PACKET_SIZE, actual: bytes.len() });
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Protocol(format!("bad magic {:02x?}", &bytes[..4])));
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    if bytes[PACKET_SIZE - 1] != 0 {
        return Err(Error::Protocol("reserved byte is not zero".into()));
    }
    let mut r = Reader { buf: bytes, at: 5 };
    let session_time = r.f64();
    let steering = r.f32();
    let throttle = r.f32();
    let brake = r.f32();
    let position = [r.f64(), r.f64(), r.f64()];
    let velocity = [r.f64(), r.f64(), r.f64()];
    let orientation = [r.f64(), r.f64(), r.f64(), r.f64()];
    let speed = r.f32();
    let lap_distance = r.f32();
    let lap_number = u16::from_le_bytes(r.take());
    let [flags] = r.take();
    let frame = u32::from_le_bytes(r.take());
    Ok(TelemetryPacket {
        session_time,
        steering,
        throttle,
        brake,
        position,
        velocity,
        orientation,
        speed,
        lap_distance,
        lap_number,
        flags,
        frame,
    })
}

/// Magic of the command datagram sent by an external controller.
pub const COMMAND_MAGIC: [u8; 4] = *b"DRCC";
/// `DRCC`, version, then steering, throttle and brake as little-endian `f32`.
pub const COMMAND_SIZE: usize = 17;

pub fn encode_command(cmd: &ControlCommand) -> [u8; COMMAND_SIZE] {
    let mut out = [0u8; COMMAND_SIZE];
    out[..4].copy_from_slice(&COMMAND_MAGIC);
    out[4] = VERSION;
    out[5..9].copy_from_slice(&(cmd.steering as f32).to_le_bytes());
    out[9..13].copy_from_slice(&(cmd.throttle as f32).to_le_bytes());
    out[13..17].copy_from_slice(&(cmd.brake as f32).to_le_bytes());
    out
}

pub fn decode_command(bytes: &[u8]) -> Result<ControlCommand> {
    if bytes.len() != COMMAND_SIZE {
        return Err(Error::Truncated { expected: COMMAND_SIZE, actual: bytes.len() });
    }
    if bytes[..4] != COMMAND_MAGIC {
        return Err(Error::Protocol(format!("bad command magic {:02x?}", &bytes[..4])));
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    let f = |at: usize| f64::from(f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")));
    ControlCommand::new(f(5), f(9), f(13))
}

/// Telemetry address from `DEEPRACING_TELEMETRY_ADDR`, else `127.0.0.1:20777`.
pub fn telemetry_addr() -> Result<SocketAddr> {
    match std::env::var(ADDR_ENV) {
        Ok(s) => resolve(&s),
        Err(_) => Ok(SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT))),
    }
}

/// Resolves `host:port`, or a bare host on the default port.
pub fn resolve(addr: &str) -> Result<SocketAddr> {
    let mut found = if addr.contains(':') { addr.to_socket_addrs()? } else { (addr, DEFAULT_PORT).to_socket_addrs()? };
    found
        .next()
        .ok_or_else(|| invalid(format!("address {addr} did not resolve")))
}

/// Monotonic seconds since a shared epoch.
#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    epoch: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        Self { epoch: Instant::now() }
    }

    pub fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

/// Sends packets to one address without waiting for anybody to listen.
#[derive(Debug)]
pub struct Broadcaster {
    socket: UdpSocket,
    target: SocketAddr,
    sent: u64,
    failed: u64,
}

impl Broadcaster {
    pub fn new(target: SocketAddr) -> Result<Self> {
        let bind: SocketAddr = if target.is_ipv4() {
            SocketAddr::from(([0, 0, 0, 0], 0))
        } else {
            SocketAddr::from(([0u16; 8], 0))
        };
        let socket = UdpSocket::bind(bind)?;
        socket.set_broadcast(true)?;
        Ok(Self { socket, target, sent: 0, failed: 0 })
    }

    pub fn target(&self) -> SocketAddr {
        self.target
    }

    /// Sends one packet; failures are logged and counted, never returned.
    pub fn send(&mut self, packet: &TelemetryPacket) -> bool {
        self.send_raw(&encode_packet(packet))
    }

    pub fn send_raw(&mut self, bytes: &[u8]) -> bool {
        match self.socket.send_to(bytes, self.target) {
            Ok(_) => {
                self.sent += 1;
                true
            }
            Err(e) => {
                self.failed += 1;
                log::warn!("telemetry send to {} failed: {e}", self.target);
                false
            }
        }
    }

    pub fn sent(&self) -> u64 {
        self.sent
    }

    pub fn failed(&self) -> u64 {
        self.failed
    }
}

/// Absolute-deadline pacer; oversleeping one tick does not shift later ones.
#[derive(Debug)]
pub struct Pacer {
    period: Duration,
    next: Instant,
}

impl Pacer {
    pub fn new(rate_hz: f64) -> Result<Self> {
        if !(rate_hz > 0.0) || !rate_hz.is_finite() {
            return Err(invalid("rate must be positive"));
        }
        Ok(Self { period: Duration::from_secs_f64(1.0 / rate_hz), next: Instant::now() })
    }

    /// Blocks until the next tick deadline.
    pub fn wait(&mut self) {
        let now = Instant::now();
        if self.next > now {
            std::thread::sleep(self.next - now);
        }
        self.next += self.period;
    }
}

/// Paces `packets` onto the wire at `rate_hz`.
pub fn broadcast_paced(
    broadcaster: &mut Broadcaster,
    packets: impl IntoIterator<Item = TelemetryPacket>,
    rate_hz: f64,
) -> Result<u64> {
    let mut pacer = Pacer::new(rate_hz)?;
    let mut n = 0;
    for p in packets {
        pacer.wait();
        broadcaster.send(&p);
        n += 1;
    }
    Ok(n)
}

#[derive(Debug, Default)]
pub struct ListenerStats {
    received: AtomicU64,
    malformed: AtomicU64,
    dropped: AtomicU64,
}

impl ListenerStats {
    pub fn received(&self) -> u64 {
        self.received.load(Ordering::Relaxed)
    }
    pub fn malformed(&self) -> u64 {
        self.malformed.load(Ordering::Relaxed)
    }
    /// Packets discarded because the consumer queue was full.
    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}

/// Background UDP receiver that timestamps each decoded packet on arrival.
pub struct Listener {
    rx: Receiver<TimestampedPacket>,
    stats: Arc<ListenerStats>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
    local_addr: SocketAddr,
}

impl Listener {
    pub fn bind(addr: SocketAddr, capacity: usize) -> Result<Self> {
        Self::bind_with_clock(addr, capacity, MonotonicClock::new())
    }

    pub fn bind_with_clock(addr: SocketAddr, capacity: usize, clock: MonotonicClock) -> Result<Self> {
        let socket = UdpSocket::bind(addr)?;
        socket.set_read_timeout(Some(Duration::from_millis(20)))?;
        let local_addr = socket.local_addr()?;
        let (tx, rx) = bounded(capacity.max(1));
        let stats = Arc::new(ListenerStats::default());
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let stats = Arc::clone(&stats);
            let stop = Arc::clone(&stop);
            std::thread::Builder::new().name("telemetry-listener".into()).spawn(move || {
                let mut buf = [0u8; 2048];
                let mut last = f64::NEG_INFINITY;
                while !stop.load(Ordering::Relaxed) {
                    let len = match socket.recv(&mut buf) {
                        Ok(len) => len,
                        Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => continue,
                        Err(e) => {
                            log::warn!("telemetry receive failed: {e}");
                            continue;
                        }
                    };
                    let os_time = clock.now().max(last);
                    last = os_time;
                    match decode_packet(&buf[..len]) {
                        Ok(packet) => {
                            stats.received.fetch_add(1, Ordering::Relaxed);
                            match tx.try_send(TimestampedPacket { packet, os_time }) {
                                Ok(()) => {}
                                Err(TrySendError::Full(_)) => {
                                    stats.dropped.fetch_add(1, Ordering::Relaxed);
                                }
                                Err(TrySendError::Disconnected(_)) => break,
                            }
                        }
                        Err(e) => {
                            stats.malformed.fetch_add(1, Ordering::Relaxed);
                            log::debug!("skipping malformed datagram: {e}");
                        }
                    }
                }
            })?
        };
        Ok(Self { rx, stats, stop, handle: Some(handle), local_addr })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn stats(&self) -> &ListenerStats {
        &self.stats
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<TimestampedPacket> {
        self.rx.recv_timeout(timeout).ok()
    }

    pub fn try_recv(&self) -> Option<TimestampedPacket> {
        self.rx.try_recv().ok()
    }

    /// Collects packets until `count` arrive or nothing arrives for `idle`.
    pub fn collect(&self, count: usize, idle: Duration) -> Vec<TimestampedPacket> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            match self.recv_timeout(idle) {
                Some(p) => out.push(p),
                None => break,
            }
        }
        out
    }

    pub fn shutdown(mut self) {
        self.stop_thread();
    }

    fn stop_thread(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Listener {
    fn drop(&mut self) {
        self.stop_thread();
    }
}
