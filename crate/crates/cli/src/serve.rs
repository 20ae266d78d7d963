//! TCP front end for [`Session`]: one console at a time, message per line.

use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crate::messages::{ErrorCode, Reply};
use crate::session::{Session, ShutdownReport};

/// Real-time period of the device clock thread.
pub const TICK: Duration = Duration::from_millis(10);
const POLL: Duration = Duration::from_millis(5);
const READ_TIMEOUT: Duration = Duration::from_millis(50);

type Client = Arc<Mutex<Option<TcpStream>>>;

pub struct Server {
    listener: TcpListener,
    session: Arc<Mutex<Session>>,
}

fn send_lines(client: &Client, lines: &[String]) {
    let mut guard = client.lock().expect("client lock");
    if let Some(stream) = guard.as_mut() {
        let mut buf = String::new();
        for l in lines {
            buf.push_str(l);
            buf.push('\n');
        }
        if stream.write_all(buf.as_bytes()).and_then(|_| stream.flush()).is_err() {
            *guard = None;
        }
    }
}

fn serve_connection(stream: TcpStream, session: Arc<Mutex<Session>>, client: Client, stop: Arc<AtomicBool>) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(READ_TIMEOUT))?;
    stream.set_nodelay(true)?;
    *client.lock().expect("client lock") = Some(stream.try_clone()?);
    // greet with the current status so a fresh console can render at once
    let hello = Reply::Status(session.lock().expect("session lock").status()).to_line(None);
    send_lines(&client, &[hello]);

    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => break,
            Ok(_) if buf.ends_with(b"\n") => {
                let line = String::from_utf8_lossy(&buf).trim().to_string();
                buf.clear();
                if line.is_empty() {
                    continue;
                }
                let out = session.lock().expect("session lock").handle_line(&line);
                send_lines(&client, &out);
            }
            Ok(_) => {}
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

impl Server {
    pub fn bind(addr: &str, session: Session) -> io::Result<Self> {
        Ok(Server {
            listener: TcpListener::bind(addr)?,
            session: Arc::new(Mutex::new(session)),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves until `stop` is set, then brings the device to a safe state.
    pub fn run(self, stop: Arc<AtomicBool>) -> io::Result<ShutdownReport> {
        self.listener.set_nonblocking(true)?;
        let client: Client = Arc::new(Mutex::new(None));
        let active = Arc::new(AtomicBool::new(false));

        let ticker = {
            let (session, client, stop) = (self.session.clone(), client.clone(), stop.clone());
            thread::spawn(move || {
                let dt = TICK.as_secs_f64() * 1000.0;
                while !stop.load(Ordering::SeqCst) {
                    thread::sleep(TICK);
                    let push = session.lock().expect("session lock").tick(dt);
                    if let Some(p) = push {
                        send_lines(&client, &[p.to_line(None)]);
                    }
                }
            })
        };

        let mut workers = Vec::new();
        while !stop.load(Ordering::SeqCst) {
            match self.listener.accept() {
                Ok((mut stream, _)) => {
                    if active.swap(true, Ordering::SeqCst) {
                        let busy = Reply::error(ErrorCode::Busy, "another console is connected").to_line(None);
                        let _ = stream.set_nonblocking(false);
                        let _ = writeln!(stream, "{busy}");
                        let _ = stream.shutdown(Shutdown::Both);
                        continue;
                    }
                    let (session, client, stop, active) = (self.session.clone(), client.clone(), stop.clone(), active.clone());
                    workers.push(thread::spawn(move || {
                        if let Err(e) = serve_connection(stream, session, client.clone(), stop) {
                            eprintln!("console connection: {e}");
                        }
                        *client.lock().expect("client lock") = None;
                        active.store(false, Ordering::SeqCst);
                    }));
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }

        let _ = ticker.join();
        let report = {
            let mut s = self.session.lock().expect("session lock");
            let report = s.shutdown();
            let last = s.state_change().unwrap_or_else(|| Reply::Status(s.status()));
            send_lines(&client, &[last.to_line(None)]);
            report
        };
        if let Some(stream) = client.lock().expect("client lock").take() {
            let _ = stream.shutdown(Shutdown::Both);
        }
        for w in workers {
            let _ = w.join();
        }
        Ok(report)
    }
}
