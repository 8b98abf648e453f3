use std::net::{SocketAddr, UdpSocket};
use std::time::Duration;

use deepracing_core::telemetry::{
    broadcast_paced, encode_packet, resolve, Broadcaster, Listener, TelemetryPacket, ADDR_ENV, DEFAULT_PORT,
};

fn loopback() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 0))
}

fn packet(frame: u32) -> TelemetryPacket {
    TelemetryPacket { session_time: f64::from(frame) / 60.0, frame, lap_number: 1, ..Default::default() }
}

#[test]
fn receives_packets_in_order() {
    let listener = Listener::bind(loopback(), 256).unwrap();
    let mut b = Broadcaster::new(listener.local_addr()).unwrap();
    for k in 0..50 {
        assert!(b.send(&packet(k)));
    }
    let got = listener.collect(50, Duration::from_millis(500));
    assert_eq!(got.len(), 50);
    for (k, p) in got.iter().enumerate() {
        assert_eq!(p.packet, packet(k as u32));
    }
    assert!(got.windows(2).all(|w| w[1].os_time >= w[0].os_time));
    assert_eq!(listener.stats().received(), 50);
    assert_eq!(b.sent(), 50);
}

#[test]
fn malformed_datagram_is_counted_and_skipped() {
    let listener = Listener::bind(loopback(), 16).unwrap();
    let raw = UdpSocket::bind(loopback()).unwrap();
    let to = listener.local_addr();
    raw.send_to(&encode_packet(&packet(1)), to).unwrap();
    raw.send_to(&encode_packet(&packet(2))[..100], to).unwrap();
    raw.send_to(&encode_packet(&packet(3)), to).unwrap();
    let got = listener.collect(2, Duration::from_millis(500));
    assert_eq!(got.iter().map(|p| p.packet.frame).collect::<Vec<_>>(), vec![1, 3]);
    std::thread::sleep(Duration::from_millis(50));
    assert_eq!(listener.stats().malformed(), 1);
}

#[test]
fn full_queue_drops_instead_of_blocking() {
    let listener = Listener::bind(loopback(), 4).unwrap();
    let mut b = Broadcaster::new(listener.local_addr()).unwrap();
    for k in 0..20 {
        b.send(&packet(k));
    }
    std::thread::sleep(Duration::from_millis(100));
    let got = listener.collect(20, Duration::from_millis(100));
    assert_eq!(got.len(), 4);
    assert_eq!(listener.stats().dropped() + got.len() as u64, listener.stats().received());
}

#[test]
fn paced_broadcast_holds_60_hz() {
    let listener = Listener::bind(loopback(), 256).unwrap();
    let target = listener.local_addr();
    let sender = std::thread::spawn(move || {
        let mut b = Broadcaster::new(target).unwrap();
        broadcast_paced(&mut b, (0..60).map(packet), 60.0).unwrap()
    });
    assert_eq!(sender.join().unwrap(), 60);
    let got = listener.collect(60, Duration::from_millis(500));
    assert!(got.len() >= 55);
    let mean = (got[got.len() - 1].os_time - got[0].os_time) / (got.len() - 1) as f64;
    assert!((mean - 1.0 / 60.0).abs() < 0.005, "mean inter-arrival {mean}");
}

#[test]
fn address_resolution() {
    assert_eq!(resolve("127.0.0.1:9000").unwrap(), SocketAddr::from(([127, 0, 0, 1], 9000)));
    assert_eq!(resolve("127.0.0.1").unwrap().port(), DEFAULT_PORT);
    assert!(resolve("not an address:x").is_err());
    assert_eq!(ADDR_ENV, "DEEPRACING_TELEMETRY_ADDR");
}
