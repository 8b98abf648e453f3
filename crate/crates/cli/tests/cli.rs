use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn deepracing(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepracing")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn error_json(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().expect("error line");
    serde_json::from_str(last).expect("json error line")
}

#[test]
fn run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trial");
    let log = dir.path().join("trial.drlog");
    let args = ["run", "--track", "oval", "--laps", "1", "--seed", "3", "--out"];
    let mut full: Vec<&str> = args.to_vec();
    full.push(out.to_str().unwrap());
    full.extend(["--log", log.to_str().unwrap()]);
    let v = stdout_json(&deepracing(&full));
    assert_eq!(v["laps"], 1);
    assert_eq!(v["NBF"], 0);
    assert_eq!(v["dnf"], false);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("laps,mean_lap_time,NBF,BFS,TBF,DBF,dnf\n"));
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().count() as u64, v["ticks"].as_u64().unwrap() + 1);
    assert!(out.join("path.svg").exists());
    assert_eq!(&fs::read(&log).unwrap()[..8], b"DRLOG 1\n");

    // The recorded log feeds the dataset command.
    let labels = dir.path().join("labels.csv");
    let v = stdout_json(&deepracing(&[
        "dataset",
        "--log",
        log.to_str().unwrap(),
        "--context",
        "5",
        "--points",
        "60",
        "--horizon",
        "1.4",
        "--degree",
        "5",
        "--out",
        labels.to_str().unwrap(),
    ]));
    let n = v["records"].as_u64().unwrap();
    assert!(n > 100);
    let text = fs::read_to_string(&labels).unwrap();
    assert_eq!(text.lines().count() as u64, n + 1);
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header[0], "anchor_session_time");
    assert_eq!(header.len(), 1 + 2 * 60 + 2 * 6);

    // Replaying the recorded commands reproduces the trace.
    let replay_out = dir.path().join("replay");
    let v = stdout_json(&deepracing(&[
        "run",
        "--controller",
        "replay",
        "--replay",
        out.join("report.csv").to_str().unwrap(),
        "--laps",
        "1",
        "--out",
        replay_out.to_str().unwrap(),
    ]));
    assert_eq!(v["laps"], 1);
    assert_eq!(fs::read_to_string(replay_out.join("report.csv")).unwrap(), report);
}

#[test]
fn clock_and_latency_tests_print_estimates() {
    let v = stdout_json(&deepracing(&["clock-test", "--drift", "0.99999", "--offset", "-1.616876", "--samples", "10000", "--noise", "0"]));
    assert!((v["slope"].as_f64().unwrap() - 0.99999).abs() < 1e-9);
    assert!((v["intercept"].as_f64().unwrap() + 1.616876).abs() < 1e-6);

    let v = stdout_json(&deepracing(&["latency-test", "--inject", "26.79", "--rate", "1000"]));
    assert!((v["estimated_ms"].as_f64().unwrap() - 26.79).abs() < 2.0);
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

#[test]
fn bezier_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("pts.csv");
    let mut text = String::from("x,y\n");
    for k in 0..30 {
        let s = k as f64 / 29.0;
        // Quadratic with control points (0,0), (1,2), (2,0).
        let x = 2.0 * s;
        let y = 4.0 * s * (1.0 - s);
        text.push_str(&format!("{x},{y}\n"));
    }
    write(&input, &text);
    let out = dir.path().join("cp.csv");
    let v = stdout_json(&deepracing(&["bezier-fit", "--in", input.to_str().unwrap(), "--degree", "2", "--out", out.to_str().unwrap()]));
    assert!(v["max_residual"].as_f64().unwrap() < 1e-9);
    let cp = fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<f64>> =
        cp.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    let want = [[0.0, 0.0], [1.0, 2.0], [2.0, 0.0]];
    for (r, w) in rows.iter().zip(want) {
        assert!((r[0] - w[0]).abs() < 1e-9 && (r[1] - w[1]).abs() < 1e-9, "{rows:?}");
    }

    let e = error_json(&deepracing(&["bezier-fit", "--in", input.to_str().unwrap(), "--degree", "40", "--out", out.to_str().unwrap()]));
    assert_eq!(e["error"], "underdetermined");
}

#[test]
fn failures_are_machine_readable() {
    let e = error_json(&deepracing(&["dataset", "--log", "/nonexistent/x.drlog", "--out", "/tmp/never.csv"]));
    assert_eq!(e["error"], "io");
    assert!(e["message"].as_str().unwrap().contains("x.drlog"));

    let e = error_json(&deepracing(&["run", "--laps", "1"]));
    assert_eq!(e["error"], "usage");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.track");
    write(&bad, "DRTRACK 9\n");
    let e = error_json(&deepracing(&["run", "--track", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]));
    assert_eq!(e["error"], "track-format");

    let out = deepracing(&["run", "--laps", "1", "--latency=-5", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(error_json(&out)["error"], "invalid-argument");
}

#[test]
fn external_controller_over_udp() {
    use std::net::UdpSocket;
    use std::time::Duration;

    let telemetry = UdpSocket::bind("127.0.0.1:0").unwrap();
    telemetry.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let command_port = UdpSocket::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let command_addr = format!("127.0.0.1:{command_port}");
    let dir = tempfile::tempdir().unwrap();

    let child = Command::new(env!("CARGO_BIN_EXE_deepracing"))
        .env("DEEPRACING_TELEMETRY_ADDR", telemetry.local_addr().unwrap().to_string())
        .args(["run", "--controller", "external", "--command-addr", &command_addr, "--laps", "1"])
        .args(["--max-duration", "1.5", "--out", dir.path().to_str().unwrap()])
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();

    // Steer gently left at full throttle: magic, version, then three f32.
    let mut cmd = b"DRCC\x01".to_vec();
    for v in [0.25f32, 1.0, 0.0] {
        cmd.extend_from_slice(&v.to_le_bytes());
    }
    let mut buf = [0u8; 256];
    let mut packets = 0;
    while let Ok(n) = telemetry.recv(&mut buf) {
        assert_eq!(n, 121);
        assert_eq!(&buf[..4], b"DRTB");
        packets += 1;
        telemetry.send_to(&cmd, &command_addr).unwrap();
        if packets == 80 {
            break;
        }
    }
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    assert!(packets >= 60);
    let report = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let last = report.lines().last().unwrap();
    let cols: Vec<f64> = last.split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!((cols[4], cols[5]), (0.25, 1.0));
}
