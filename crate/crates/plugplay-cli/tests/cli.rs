//! Command-level behavior: exit codes, degenerate outputs and a real
//! two-process key exchange over a socket.

use std::fs;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::Duration;

fn plugplay(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plugplay")).args(args).output().expect("binary spawns")
}

fn spawn(args: &[&str]) -> Child {
    Command::new(env!("CARGO_BIN_EXE_plugplay"))
        .args(args)
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary spawns")
}

#[test]
fn sweep_of_zero_points_emits_the_header_only() {
    let dir = tempfile::tempdir().expect("tempdir");
    let conf = dir.path().join("curve.conf");
    fs::write(&conf, "[detector]\ncurve = 0.025:2e-7, 0.2:1.2e-4\n").expect("config writes");
    let out = dir.path().join("sweep.csv");

    let output = plugplay(&[
        "model",
        "--sweep",
        "0",
        "--config",
        conf.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    assert_eq!(
        fs::read_to_string(&out).expect("sweep CSV exists"),
        "eta_d,p_noise,raw_rate_hz,qber,useful_rate_hz\n"
    );
}

#[test]
fn attacked_session_aborts_with_a_failing_exit_code() {
    let dir = tempfile::tempdir().expect("tempdir");
    let conf = dir.path().join("attacked.conf");
    fs::write(&conf, "[attacker]\nintercept_resend = true\n").expect("config writes");
    let out = dir.path().join("session.csv");

    let output = plugplay(&[
        "run",
        "--role",
        "local",
        "--config",
        conf.to_str().unwrap(),
        "--trains",
        "20000",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1), "attacked run must fail");
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("aborted at estimate"), "stderr was: {stderr}");
    let csv = fs::read_to_string(&out).expect("session CSV exists");
    let row = csv.lines().nth(1).expect("one data row");
    assert!(row.ends_with(",estimate"), "row was: {row}");
}

#[test]
fn socketed_processes_agree_with_the_local_run() {
    let dir = tempfile::tempdir().expect("tempdir");
    let trains = "40000";
    let seed = "7";

    let local_key = dir.path().join("local.key");
    let output = plugplay(&[
        "run",
        "--role",
        "local",
        "--trains",
        trains,
        "--seed",
        seed,
        "--key-out",
        local_key.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let reference = fs::read(dir.path().join("local.key.alice")).expect("local key written");
    assert_eq!(reference, fs::read(dir.path().join("local.key.bob")).expect("bob key written"));

    // Fixed pid-derived port; the connecting process is retried until the
    // listener is up.
    let port = 40_000 + (std::process::id() % 20_000);
    let addr = format!("127.0.0.1:{port}");
    let alice_key = dir.path().join("alice.key");
    let bob_key = dir.path().join("bob.key");

    let alice = spawn(&[
        "run",
        "--role",
        "alice",
        "--listen",
        &addr,
        "--trains",
        trains,
        "--seed",
        seed,
        "--key-out",
        alice_key.to_str().unwrap(),
    ]);
    let mut bob_ok = false;
    for _ in 0..100 {
        let bob = plugplay(&[
            "run",
            "--role",
            "bob",
            "--connect",
            &addr,
            "--seed",
            seed,
            "--key-out",
            bob_key.to_str().unwrap(),
        ]);
        if bob.status.success() {
            bob_ok = true;
            break;
        }
        std::thread::sleep(Duration::from_millis(30));
    }
    let alice_out = alice.wait_with_output().expect("alice terminates");
    assert!(bob_ok, "bob never reached the listener");
    assert!(alice_out.status.success(), "alice failed: {}", String::from_utf8_lossy(&alice_out.stderr));

    let read = |p: &Path| fs::read(p).expect("key file written");
    assert_eq!(read(&alice_key), reference, "socketed alice key differs from the local run");
    assert_eq!(read(&bob_key), reference, "socketed bob key differs from the local run");
}
