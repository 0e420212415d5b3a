//! Scoring through a child process over stdin/stdout.
//!
//! The child first prints the handshake line, then answers one request line
//! `{"id":N,"rows":[[..],..]}` with one reply line `{"id":N,"scores":[..]}`.
//! A reply carrying `"error"` instead of `"scores"` breaks the channel.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::channel::{ChannelError, ChannelKind, ScoringChannel};

pub const HANDSHAKE_LINE: &str = r#"{"protocol":"score/1"}"#;

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
const DEFAULT_BATCH_LIMIT: usize = 1024;

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    rows: &'a [Vec<f64>],
}

#[derive(Deserialize)]
struct Reply {
    id: u64,
    #[serde(default)]
    scores: Option<Vec<f64>>,
    #[serde(default)]
    error: Option<String>,
}

#[derive(Deserialize)]
struct Handshake {
    protocol: String,
}

pub struct ExternalChannel {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    batch_limit: usize,
    timeout: Duration,
    n_features: Option<usize>,
    broken: bool,
}

impl std::fmt::Debug for ExternalChannel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalChannel")
            .field("pid", &self.child.id())
            .field("next_id", &self.next_id)
            .field("batch_limit", &self.batch_limit)
            .finish()
    }
}

impl ExternalChannel {
    /// Spawns `argv[0]` with the remaining arguments and waits for the
    /// handshake line.
    pub fn spawn(argv: &[String]) -> Result<Self, ChannelError> {
        Self::spawn_with(argv, DEFAULT_BATCH_LIMIT, DEFAULT_TIMEOUT)
    }

    pub fn spawn_with(
        argv: &[String],
        batch_limit: usize,
        timeout: Duration,
    ) -> Result<Self, ChannelError> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| ChannelError::ChannelBroken("empty scoring command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ChannelError::ChannelBroken(format!("cannot spawn `{program}`: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut channel = Self {
            child,
            stdin,
            lines: rx,
            next_id: 1,
            batch_limit: batch_limit.max(1),
            timeout,
            n_features: None,
            broken: false,
        };
        let line = channel.read_line()?;
        match serde_json::from_str::<Handshake>(&line) {
            Ok(h) if h.protocol == "score/1" => Ok(channel),
            _ => Err(channel.fail(format!("bad handshake: {line}"))),
        }
    }

    /// Declares the row width so mis-shaped batches fail before they are sent.
    pub fn with_n_features(mut self, n: usize) -> Self {
        self.n_features = Some(n);
        self
    }

    fn fail(&mut self, msg: String) -> ChannelError {
        self.broken = true;
        let _ = self.child.kill();
        ChannelError::ChannelBroken(msg)
    }

    fn read_line(&mut self) -> Result<String, ChannelError> {
        loop {
            match self.lines.recv_timeout(self.timeout) {
                Ok(Ok(line)) if line.trim().is_empty() => continue,
                Ok(Ok(line)) => return Ok(line),
                Ok(Err(e)) => return Err(self.fail(format!("read failed: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(self.fail(format!("no reply within {:?}", self.timeout)))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(self.fail("scoring process closed its output".into()))
                }
            }
        }
    }
}

impl ScoringChannel for ExternalChannel {
    fn kind(&self) -> ChannelKind {
        ChannelKind::ExternalProcess
    }

    fn batch_limit(&self) -> usize {
        self.batch_limit
    }

    fn n_features(&self) -> Option<usize> {
        self.n_features
    }

    fn score_chunk(&mut self, rows: &[Vec<f64>]) -> Result<Vec<f64>, ChannelError> {
        if self.broken {
            return Err(ChannelError::ChannelBroken("channel already failed".into()));
        }
        let id = self.next_id;
        self.next_id += 1;
        let mut line = serde_json::to_string(&Request { id, rows })
            .map_err(|e| ChannelError::ChannelBroken(format!("cannot encode request: {e}")))?;
        line.push('\n');
        let write = match self.stdin.as_mut() {
            Some(stdin) => stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()),
            None => Err(std::io::ErrorKind::BrokenPipe.into()),
        };
        if let Err(e) = write {
            return Err(self.fail(format!("write failed: {e}")));
        }

        let reply_line = self.read_line()?;
        let reply: Reply = match serde_json::from_str(&reply_line) {
            Ok(r) => r,
            Err(e) => return Err(self.fail(format!("malformed reply ({e}): {reply_line}"))),
        };
        if reply.id != id {
            return Err(self.fail(format!("reply id {} for request {id}", reply.id)));
        }
        if let Some(err) = reply.error {
            return Err(self.fail(format!("model error: {err}")));
        }
        match reply.scores {
            Some(scores) if scores.len() == rows.len() => Ok(scores),
            Some(scores) => {
                Err(self.fail(format!("{} scores for {} rows", scores.len(), rows.len())))
            }
            None => Err(self.fail("reply without scores".into())),
        }
    }
}

impl Drop for ExternalChannel {
    fn drop(&mut self) {
        // Closing stdin asks a well-behaved server to exit.
        drop(self.stdin.take());
        match self.child.try_wait() {
            Ok(Some(_)) => {}
            _ => {
                thread::sleep(Duration::from_millis(20));
                if !matches!(self.child.try_wait(), Ok(Some(_))) {
                    let _ = self.child.kill();
                }
                let _ = self.child.wait();
            }
        }
    }
}
