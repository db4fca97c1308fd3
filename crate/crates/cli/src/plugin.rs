//! Out-of-process policies over line-delimited JSON on stdio.
//!
//! Each step the host writes `{"v":1,"obs":{"speed":..,"gap":..,"lead_speed":..}}`
//! and expects `{"accel":..}` back within the timeout. Any failure makes the
//! policy return NaN from then on, which the simulator reports as a fault.

use accel_eval::policy::{EgoPolicy, Observation};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct Request {
    pub v: u32,
    pub obs: ObsMsg,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ObsMsg {
    pub speed: f64,
    pub gap: f64,
    pub lead_speed: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Response {
    pub accel: f64,
}

struct Channel {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    broken: Option<String>,
}

pub struct ExternalPolicy {
    id: String,
    timeout: Duration,
    channel: Mutex<Channel>,
}

impl ExternalPolicy {
    pub fn spawn(command: &[String], id: Option<String>, timeout: Duration) -> std::io::Result<Self> {
        let (program, args) = command.split_first().ok_or_else(|| std::io::Error::other("empty command"))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let id = id.unwrap_or_else(|| format!("external({})", command.join(" ")));
        Ok(Self { id, timeout, channel: Mutex::new(Channel { child, stdin, lines: rx, broken: None }) })
    }

    /// Why the plugin stopped answering, if it did.
    pub fn failure(&self) -> Option<String> {
        self.channel.lock().ok().and_then(|c| c.broken.clone())
    }

    fn exchange(&self, ch: &mut Channel, obs: &Observation) -> Result<f64, String> {
        let req = Request { v: PROTOCOL_VERSION, obs: ObsMsg { speed: obs.speed, gap: obs.gap, lead_speed: obs.lead_speed } };
        let mut line = serde_json::to_string(&req).expect("request serialises");
        line.push('\n');
        ch.stdin.write_all(line.as_bytes()).and_then(|_| ch.stdin.flush()).map_err(|e| format!("write: {e}"))?;
        match ch.lines.recv_timeout(self.timeout) {
            Ok(Ok(text)) => {
                let resp: Response = serde_json::from_str(&text).map_err(|e| format!("bad response `{text}`: {e}"))?;
                Ok(resp.accel)
            }
            Ok(Err(e)) => Err(format!("read: {e}")),
            Err(RecvTimeoutError::Timeout) => Err(format!("no response within {} ms", self.timeout.as_millis())),
            Err(RecvTimeoutError::Disconnected) => Err("plugin exited".into()),
        }
    }
}

impl EgoPolicy for ExternalPolicy {
    fn decide(&self, obs: &Observation) -> f64 {
        let mut ch = match self.channel.lock() {
            Ok(ch) => ch,
            Err(_) => return f64::NAN,
        };
        if ch.broken.is_some() {
            return f64::NAN;
        }
        match self.exchange(&mut ch, obs) {
            Ok(a) => a,
            Err(msg) => {
                ch.broken = Some(msg);
                f64::NAN
            }
        }
    }

    fn policy_id(&self) -> &str {
        &self.id
    }
}

impl Drop for ExternalPolicy {
    fn drop(&mut self) {
        if let Ok(ch) = self.channel.get_mut() {
            let _ = ch.child.kill();
            let _ = ch.child.wait();
        }
    }
}

/// Serves `policy` over stdio until stdin closes; `delay` stalls every reply.
pub fn serve<P: EgoPolicy>(policy: &P, delay: Duration) -> std::io::Result<()> {
    let stdin = std::io::stdin();
    let mut out = std::io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: Request = serde_json::from_str(&line).map_err(std::io::Error::other)?;
        if req.v != PROTOCOL_VERSION {
            return Err(std::io::Error::other(format!("unsupported protocol version {}", req.v)));
        }
        let obs = Observation { speed: req.obs.speed, gap: req.obs.gap, lead_speed: req.obs.lead_speed };
        if !delay.is_zero() {
            thread::sleep(delay);
        }
        let resp = Response { accel: policy.decide(&obs) };
        writeln!(out, "{}", serde_json::to_string(&resp).expect("response serialises"))?;
        out.flush()?;
    }
    Ok(())
}
