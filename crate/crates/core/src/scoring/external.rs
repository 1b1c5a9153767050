//! Out-of-process scorers over newline-delimited JSON.
//!
//! Requests: `{"id": u64, "kind": "sim"|"mos"|"intell", "speech": [f64...],
//! "target": [f64...]|null, "text_id": u64|null}`. Responses:
//! `{"id": u64, "score": f64}` or `{"id": u64, "error": "..."}`. One object per
//! line, UTF-8. Responses may come back in any order and are matched by id.
//!
//! Writes are serialized per connection; any number of callers may have
//! requests in flight. A line that cannot be parsed, or that names an id
//! nobody is waiting for, poisons the connection: every pending and future
//! request fails with [`ScorerFault::Protocol`].

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ScoreContext, Scorer, ScorerFault, ScorerKind, SpeechFeatures};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub kind: ScorerKind,
    pub speech: Vec<f64>,
    pub target: Option<Vec<f64>>,
    pub text_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Response {
    Score { id: u64, score: f64 },
    Error { id: u64, error: String },
}

impl Response {
    pub fn id(&self) -> u64 {
        match self {
            Response::Score { id, .. } | Response::Error { id, .. } => *id,
        }
    }
}

type Reply = Result<f64, ScorerFault>;

#[derive(Default)]
struct Shared {
    pending: Mutex<HashMap<u64, Sender<Reply>>>,
    poisoned: Mutex<Option<ScorerFault>>,
}

impl Shared {
    fn poison(&self, fault: ScorerFault) {
        let mut poisoned = self.poisoned.lock().unwrap();
        if poisoned.is_none() {
            *poisoned = Some(fault.clone());
        }
        for (_, tx) in self.pending.lock().unwrap().drain() {
            let _ = tx.send(Err(fault.clone()));
        }
    }
}

/// Client side of one scorer connection.
pub struct ExternalScorerClient {
    writer: Mutex<Box<dyn Write + Send>>,
    shared: Arc<Shared>,
    next_id: AtomicU64,
    timeout: Duration,
    child: Mutex<Option<Child>>,
    reader: Option<JoinHandle<()>>,
}

/// A request that has been written and is awaiting its response.
#[derive(Debug)]
pub struct PendingScore {
    pub id: u64,
    rx: Receiver<Reply>,
    timeout: Duration,
    shared: Arc<Shared>,
}

impl std::fmt::Debug for Shared {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Shared").finish_non_exhaustive()
    }
}

impl PendingScore {
    pub fn wait(self) -> Result<f64, ScorerFault> {
        match self.rx.recv_timeout(self.timeout) {
            Ok(reply) => reply,
            Err(RecvTimeoutError::Timeout) => {
                self.shared.pending.lock().unwrap().remove(&self.id);
                Err(ScorerFault::Timeout(self.timeout))
            }
            Err(RecvTimeoutError::Disconnected) => Err(self
                .shared
                .poisoned
                .lock()
                .unwrap()
                .clone()
                .unwrap_or_else(|| ScorerFault::Disconnected("reader stopped".into()))),
        }
    }
}

impl ExternalScorerClient {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

    /// Wraps an arbitrary byte stream pair.
    pub fn connect<R, W>(reader: R, writer: W, timeout: Duration) -> Self
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let shared = Arc::new(Shared::default());
        let reader_shared = Arc::clone(&shared);
        let handle = std::thread::Builder::new()
            .name("scorer-reader".into())
            .spawn(move || read_loop(BufReader::new(reader), &reader_shared))
            .expect("spawn scorer reader thread");
        Self {
            writer: Mutex::new(Box::new(writer)),
            shared,
            next_id: AtomicU64::new(1),
            timeout,
            child: Mutex::new(None),
            reader: Some(handle),
        }
    }

    pub fn connect_tcp<A: ToSocketAddrs>(addr: A, timeout: Duration) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Ok(Self::connect(reader, stream, timeout))
    }

    /// Spawns `command` and talks to it over its stdin/stdout.
    pub fn spawn(command: &mut Command, timeout: Duration) -> std::io::Result<Self> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let client = Self::connect(stdout, stdin, timeout);
        *client.child.lock().unwrap() = Some(child);
        Ok(client)
    }

    /// Writes a request and returns a handle to wait on.
    pub fn submit(
        &self,
        kind: ScorerKind,
        speech: &[f64],
        target: Option<&[f64]>,
        text_id: Option<u64>,
    ) -> Result<PendingScore, ScorerFault> {
        if let Some(fault) = self.shared.poisoned.lock().unwrap().clone() {
            return Err(fault);
        }
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let request = Request {
            id,
            kind,
            speech: speech.to_vec(),
            target: target.map(<[f64]>::to_vec),
            text_id,
        };
        let mut line = serde_json::to_string(&request)
            .map_err(|e| ScorerFault::BadInput(format!("cannot encode request: {e}")))?;
        line.push('\n');
        let (tx, rx) = mpsc::channel();
        self.shared.pending.lock().unwrap().insert(id, tx);
        let written = {
            let mut w = self.writer.lock().unwrap();
            w.write_all(line.as_bytes()).and_then(|_| w.flush())
        };
        if let Err(e) = written {
            self.shared.pending.lock().unwrap().remove(&id);
            return Err(ScorerFault::Disconnected(e.to_string()));
        }
        Ok(PendingScore {
            id,
            rx,
            timeout: self.timeout,
            shared: Arc::clone(&self.shared),
        })
    }

    pub fn request(
        &self,
        kind: ScorerKind,
        speech: &[f64],
        target: Option<&[f64]>,
        text_id: Option<u64>,
    ) -> Result<f64, ScorerFault> {
        self.submit(kind, speech, target, text_id)?.wait()
    }
}

impl Drop for ExternalScorerClient {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.lock().unwrap().take() {
            let _ = child.kill();
            let _ = child.wait();
        }
        // The reader thread exits on EOF; it is detached rather than joined
        // because a TCP peer may keep the socket open.
        drop(self.reader.take());
    }
}

fn read_loop<R: BufRead>(reader: R, shared: &Shared) {
    for line in reader.lines() {
        let line = match line {
            Ok(line) => line,
            Err(e) => {
                shared.poison(ScorerFault::Disconnected(e.to_string()));
                return;
            }
        };
        let response: Response = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                shared.poison(ScorerFault::Protocol(format!(
                    "malformed response line {line:?}: {e}"
                )));
                return;
            }
        };
        let tx = shared.pending.lock().unwrap().remove(&response.id());
        match (tx, response) {
            (Some(tx), Response::Score { score, .. }) => {
                let _ = tx.send(Ok(score));
            }
            (Some(tx), Response::Error { error, .. }) => {
                let _ = tx.send(Err(ScorerFault::Remote(error)));
            }
            (None, r) => {
                shared.poison(ScorerFault::Protocol(format!(
                    "response for unknown request id {}",
                    r.id()
                )));
                return;
            }
        }
    }
    shared.poison(ScorerFault::Disconnected("scorer closed the stream".into()));
}

/// [`Scorer`] adapter for one quantity served by an external process.
#[derive(Clone)]
pub struct ExternalScorer {
    client: Arc<ExternalScorerClient>,
    kind: ScorerKind,
}

impl ExternalScorer {
    pub fn new(client: Arc<ExternalScorerClient>, kind: ScorerKind) -> Self {
        Self { client, kind }
    }
}

impl Scorer for ExternalScorer {
    fn kind(&self) -> ScorerKind {
        self.kind
    }

    fn score(&self, speech: &SpeechFeatures, ctx: &ScoreContext<'_>) -> Result<f64, ScorerFault> {
        self.client
            .request(self.kind, speech.as_slice(), ctx.target_voiceprint, ctx.text_id)
    }
}

/// Reference scorer used for loopback testing: the score is `speech[0]`.
///
/// Responses are written in reverse arrival order, in batches of up to
/// `window` requests, so clients must match by id. A batch is also released
/// whenever no further input is already buffered, so a lone blocking request
/// is always answered.
pub fn serve_echo<R: BufRead, W: Write>(mut input: R, mut output: W, window: usize) -> std::io::Result<()> {
    let window = window.max(1);
    let mut held: Vec<Response> = Vec::with_capacity(window);
    let mut line = String::new();
    loop {
        line.clear();
        let n = input.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        let response = match serde_json::from_str::<Request>(line.trim_end()) {
            Ok(req) => match req.speech.first() {
                Some(&score) => Response::Score { id: req.id, score },
                None => Response::Error {
                    id: req.id,
                    error: "empty speech".into(),
                },
            },
            // Without an id the request cannot be answered; stop serving.
            Err(e) => {
                return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, e));
            }
        };
        held.push(response);
        if held.len() >= window || input.fill_buf()?.is_empty() {
            flush_reversed(&mut held, &mut output)?;
        }
    }
    flush_reversed(&mut held, &mut output)
}

fn flush_reversed<W: Write>(held: &mut Vec<Response>, output: &mut W) -> std::io::Result<()> {
    for r in held.drain(..).rev() {
        serde_json::to_writer(&mut *output, &r)?;
        output.write_all(b"\n")?;
    }
    output.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_format() {
        let r = Request {
            id: 7,
            kind: ScorerKind::Mos,
            speech: vec![0.5, -1.0],
            target: None,
            text_id: Some(3),
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"id":7,"kind":"mos","speech":[0.5,-1.0],"target":null,"text_id":3}"#
        );
        let ok: Response = serde_json::from_str(r#"{"id":7,"score":4.5}"#).unwrap();
        assert_eq!(ok, Response::Score { id: 7, score: 4.5 });
        let err: Response = serde_json::from_str(r#"{"id":8,"error":"boom"}"#).unwrap();
        assert_eq!(
            err,
            Response::Error {
                id: 8,
                error: "boom".into()
            }
        );
        assert!(serde_json::from_str::<Response>(r#"{"id":8}"#).is_err());
        assert!(serde_json::from_str::<Response>(r#"{"score":1.0}"#).is_err());
    }

    #[test]
    fn echo_server_reverses_batches() {
        let mut input = Vec::new();
        for id in 1..=3u64 {
            let req = Request {
                id,
                kind: ScorerKind::Sim,
                speech: vec![id as f64 / 10.0],
                target: None,
                text_id: None,
            };
            input.extend(serde_json::to_vec(&req).unwrap());
            input.push(b'\n');
        }
        let mut out = Vec::new();
        serve_echo(&input[..], &mut out, 8).unwrap();
        let ids: Vec<u64> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<Response>(l).unwrap().id())
            .collect();
        assert_eq!(ids, vec![3, 2, 1]);
    }
}
