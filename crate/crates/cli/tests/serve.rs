//! `tactwrist serve` as a process, talked to over TCP.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

struct Serve {
    child: Child,
    addr: String,
    out: tempfile::TempDir,
}

impl Serve {
    fn start() -> Serve {
        let out = tempfile::tempdir().unwrap();
        let mut child = Command::new(env!("CARGO_BIN_EXE_tactwrist"))
            .args(["serve", "--port", "0", "--seed", "8", "--out"])
            .arg(out.path())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("{line:?}")).to_string();
        Serve { child, addr, out }
    }

    fn interrupt(&mut self) -> (bool, String) {
        let ok = Command::new("kill")
            .args(["-INT", &self.child.id().to_string()])
            .status()
            .unwrap()
            .success();
        assert!(ok);
        let deadline = Instant::now() + Duration::from_secs(10);
        loop {
            if let Some(status) = self.child.try_wait().unwrap() {
                let mut rest = String::new();
                let _ = std::io::Read::read_to_string(self.child.stdout.as_mut().unwrap(), &mut rest);
                return (status.success(), rest);
            }
            assert!(Instant::now() < deadline, "serve did not exit");
            std::thread::sleep(Duration::from_millis(10));
        }
    }
}

impl Drop for Serve {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

struct Console {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Console {
    fn connect(addr: &str) -> Console {
        let s = TcpStream::connect(addr).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        Console {
            writer: s.try_clone().unwrap(),
            reader: BufReader::new(s),
        }
    }

    fn read(&mut self) -> Value {
        let mut line = String::new();
        self.reader.read_line(&mut line).unwrap();
        serde_json::from_str(&line).unwrap_or_else(|e| panic!("{e}: {line:?}"))
    }

    fn send(&mut self, v: Value) {
        writeln!(self.writer, "{v}").unwrap();
    }

    /// Sends and waits for the reply carrying the same id.
    fn call(&mut self, v: Value) -> Value {
        let id = v["id"].clone();
        self.send(v);
        loop {
            let r = self.read();
            if r["id"] == id {
                return r;
            }
        }
    }
}

#[test]
fn status_query_answers_within_100_ms() {
    let s = Serve::start();
    let mut c = Console::connect(&s.addr);
    assert_eq!(c.read()["type"], "STATUS", "greeting");
    for k in 0..5 {
        let t = Instant::now();
        let r = c.call(json!({"id": k, "type": "QUERY_STATUS"}));
        let dt = t.elapsed();
        assert_eq!(r["type"], "STATUS");
        assert!(dt < Duration::from_millis(100), "{dt:?}");
    }
}

#[test]
fn second_console_is_turned_away() {
    let s = Serve::start();
    let mut first = Console::connect(&s.addr);
    first.read();
    let mut second = Console::connect(&s.addr);
    let r = second.read();
    assert_eq!((r["type"].as_str(), r["code"].as_str()), (Some("ERROR"), Some("busy")));
    // the first session is unaffected
    assert_eq!(first.call(json!({"id": 1, "type": "QUERY_STATUS"}))["type"], "STATUS");
    drop(first);
    // once it leaves, the next console gets in
    std::thread::sleep(Duration::from_millis(200));
    let mut third = Console::connect(&s.addr);
    assert_eq!(third.read()["type"], "STATUS");
}

#[test]
fn interrupt_mid_calibration_stops_device() {
    let mut s = Serve::start();
    let mut c = Console::connect(&s.addr);
    c.read();
    assert_eq!(c.call(json!({"id": 1, "type": "ARM"}))["type"], "ACK");
    c.call(json!({"id": 2, "type": "CAL_START", "finger": "thumb"}));
    assert_eq!(c.call(json!({"id": 3, "type": "CAL_STEP", "action": "up"}))["intensity_ua"], 100);
    // a long train left running on the real-time clock
    c.call(json!({"id": 4, "type": "SET_INTENSITY", "intensity_ua": 300}));
    assert_eq!(c.call(json!({"id": 5, "type": "STIM_TRAIN", "count": 100, "gap_ms": 50}))["type"], "ACK");
    std::thread::sleep(Duration::from_millis(100));
    let (ok, stdout) = s.interrupt();
    assert!(ok, "{stdout}");
    assert!(stdout.contains("shutdown: device disarmed, relays idle"), "{stdout}");

    // the console sees the final state before the line drops
    let mut last = Value::Null;
    let mut line = String::new();
    while c.reader.read_line(&mut line).map(|n| n > 0).unwrap_or(false) {
        last = serde_json::from_str(&line).unwrap();
        line.clear();
    }
    assert_eq!(last["state"], "disarmed");

    let log: Vec<Value> = std::fs::read_to_string(s.out.path().join("device_log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let stop = log
        .iter()
        .rposition(|e| e["event"] == "received" && e["command"]["cmd"] == "STOP")
        .expect("STOP reached the device");
    let train = log
        .iter()
        .position(|e| e["event"] == "received" && e["command"]["cmd"] == "STIM_TRAIN")
        .unwrap();
    assert!(stop > train);
    let last_frame = log.iter().rev().find(|e| e["event"] == "frame").unwrap();
    assert!(last_frame["bits"].as_str().unwrap().chars().all(|c| c == '0'), "{last_frame}");
}

#[test]
fn port_in_use_is_an_error() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let o = Command::new(env!("CARGO_BIN_EXE_tactwrist"))
        .args(["serve", "--seed", "1", "--port", &port, "--out"])
        .arg(tempfile::tempdir().unwrap().path())
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("binding"));
}
