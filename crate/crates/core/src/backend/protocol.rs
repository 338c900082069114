//! JSON-lines protocol between the pipeline and an external segmenter
//! process.
//!
//! Requests and responses are single UTF-8 JSON objects terminated by `\n`,
//! written to the child's stdin and read from its stdout. The child logs to
//! stderr only. One request is in flight per process.
//!
//! ```text
//! -> {"id":1,"width":W,"height":H,"pixels_b64":"...","box":[x0,y0,x1,y1],
//!     "inclusions":[[x,y],...],"exclusions":[[x,y],...]}
//! <- {"id":1,"candidates":[{"rle":[z0,o1,...],"score":0.93},...]}
//! <- {"id":1,"error":"..."}
//! ```

use std::io::{self, BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::rle::{rle_decode, rle_encode};
use super::{Candidate, SegmentError, Segmenter};
use crate::prompt::PromptSet;
use crate::slicing::{Mask2D, SliceImage};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
const STDERR_TAIL: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: u64,
    pub width: usize,
    pub height: usize,
    pub pixels_b64: String,
    #[serde(rename = "box")]
    pub bbox: [usize; 4],
    pub inclusions: Vec<[usize; 2]>,
    pub exclusions: Vec<[usize; 2]>,
}

impl WireRequest {
    pub fn new(id: u64, slice: &SliceImage, prompts: &PromptSet) -> Self {
        Self {
            id,
            width: slice.width,
            height: slice.height,
            pixels_b64: BASE64.encode(&slice.pixels),
            bbox: prompts.bbox.into(),
            inclusions: prompts.inclusions.iter().map(|&(x, y)| [x, y]).collect(),
            exclusions: prompts.exclusions.iter().map(|&(x, y)| [x, y]).collect(),
        }
    }

    pub fn pixels(&self) -> Result<Vec<u8>, String> {
        let px = BASE64
            .decode(&self.pixels_b64)
            .map_err(|e| format!("pixels_b64: {e}"))?;
        if px.len() != self.width * self.height {
            return Err(format!(
                "pixels_b64 holds {} bytes, expected {}",
                px.len(),
                self.width * self.height
            ));
        }
        Ok(px)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireCandidate {
    pub rle: Vec<u32>,
    pub score: f64,
}

/// Either `candidates` or `error` is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<WireCandidate>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl WireResponse {
    /// Checks the response against its request and decodes the masks.
    pub fn into_candidates(self, request: &WireRequest) -> Result<Vec<Candidate>, SegmentError> {
        if self.id != request.id as i64 {
            return Err(SegmentError::ProtocolError(format!(
                "response id {} does not match request id {}",
                self.id, request.id
            )));
        }
        if let Some(err) = self.error {
            return Err(SegmentError::ProtocolError(format!("backend reported: {err}")));
        }
        let wire = self
            .candidates
            .filter(|c| !c.is_empty())
            .ok_or_else(|| SegmentError::ProtocolError("response has no candidates".into()))?;
        wire.into_iter()
            .map(|c| {
                if !(c.score.is_finite() && (0.0..=1.0).contains(&c.score)) {
                    return Err(SegmentError::ProtocolError(format!("score {} outside [0, 1]", c.score)));
                }
                let mask = rle_decode(&c.rle, request.width, request.height)
                    .map_err(|e| SegmentError::ProtocolError(format!("bad RLE: {e}")))?;
                Ok(Candidate { mask, score: c.score })
            })
            .collect()
    }
}

/// A spawned backend process and its serial request channel.
pub struct ProcessBackend {
    command: Vec<String>,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<io::Result<String>>,
    stderr: Arc<Mutex<Vec<u8>>>,
    timeout: Duration,
    next_id: u64,
}

impl std::fmt::Debug for ProcessBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProcessBackend")
            .field("command", &self.command)
            .field("pid", &self.child.id())
            .finish()
    }
}

impl ProcessBackend {
    pub fn spawn(command: &[String], timeout: Duration) -> Result<Self, SegmentError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| SegmentError::BackendUnavailable("empty backend command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| SegmentError::BackendUnavailable(format!("cannot start {program}: {e}")))?;

        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });

        let stderr = Arc::new(Mutex::new(Vec::new()));
        let mut err_pipe = child.stderr.take().expect("piped stderr");
        let sink = Arc::clone(&stderr);
        thread::spawn(move || {
            let mut buf = [0u8; 1024];
            while let Ok(n) = err_pipe.read(&mut buf) {
                if n == 0 {
                    break;
                }
                let mut tail = sink.lock().unwrap();
                tail.extend_from_slice(&buf[..n]);
                if tail.len() > STDERR_TAIL {
                    let cut = tail.len() - STDERR_TAIL;
                    tail.drain(..cut);
                }
            }
        });

        Ok(Self {
            command: command.to_vec(),
            stdin: child.stdin.take(),
            child,
            lines,
            stderr,
            timeout,
            next_id: 1,
        })
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    fn unavailable(&mut self, what: &str) -> SegmentError {
        // give the process a moment to finish exiting so the status is known
        let deadline = Instant::now() + Duration::from_millis(500);
        let status = loop {
            match self.child.try_wait() {
                Ok(Some(s)) => break Some(s),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                _ => break None,
            }
        };
        let tail = String::from_utf8_lossy(&self.stderr.lock().unwrap()).trim().to_string();
        let status = status.map_or_else(|| "still running".to_string(), |s| s.to_string());
        let mut msg = format!("{what} ({status})");
        if !tail.is_empty() {
            msg.push_str(": ");
            msg.push_str(&tail);
        }
        SegmentError::BackendUnavailable(msg)
    }

    /// Sends one request and waits for the matching response line.
    pub fn call(&mut self, request: &WireRequest) -> Result<WireResponse, SegmentError> {
        let mut line = serde_json::to_string(request).expect("request serializes");
        line.push('\n');
        let wrote = match self.stdin.as_mut() {
            Some(stdin) => stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()),
            None => Err(io::Error::new(io::ErrorKind::BrokenPipe, "stdin closed")),
        };
        if wrote.is_err() {
            return Err(self.unavailable("backend process is not accepting input"));
        }
        let deadline = Instant::now() + self.timeout;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            match self.lines.recv_timeout(remaining) {
                Ok(Ok(text)) if text.trim().is_empty() => continue,
                Ok(Ok(text)) => {
                    return serde_json::from_str(&text)
                        .map_err(|e| SegmentError::ProtocolError(format!("malformed response line {text:?}: {e}")))
                }
                Ok(Err(e)) => return Err(SegmentError::ProtocolError(format!("reading response: {e}"))),
                Err(RecvTimeoutError::Timeout) => return Err(SegmentError::Timeout(self.timeout)),
                Err(RecvTimeoutError::Disconnected) => return Err(self.unavailable("backend process exited")),
            }
        }
    }
}

impl Segmenter for ProcessBackend {
    fn identity(&self) -> String {
        format!("external-process({})", self.command.join(" "))
    }

    fn predict(&mut self, slice: &SliceImage, prompts: &PromptSet) -> Result<Vec<Candidate>, SegmentError> {
        let request = WireRequest::new(self.next_id, slice, prompts);
        self.next_id += 1;
        let response = self.call(&request)?;
        response.into_candidates(&request)
    }
}

impl Drop for ProcessBackend {
    fn drop(&mut self) {
        // closing stdin is the shutdown signal
        drop(self.stdin.take());
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Answers one request the way the service's echo mode does: a single
/// candidate of the pixels at or above `threshold` inside the box, score 0.5.
pub fn echo_response(request: &WireRequest, threshold: u8) -> WireResponse {
    let id = request.id as i64;
    let fail = |error: String| WireResponse {
        id,
        candidates: None,
        error: Some(error),
    };
    let pixels = match request.pixels() {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let [x0, y0, x1, y1] = request.bbox;
    let (w, h) = (request.width, request.height);
    let bits = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            u8::from((x0..=x1).contains(&x) && (y0..=y1).contains(&y) && pixels[i] >= threshold)
        })
        .collect();
    WireResponse {
        id,
        candidates: Some(vec![WireCandidate {
            rle: rle_encode(&Mask2D::from_bits(w, h, bits)),
            score: 0.5,
        }]),
        error: None,
    }
}

/// Echo-mode request loop over arbitrary streams. Malformed lines produce an
/// error object carrying the last good id (or -1); the loop ends cleanly at
/// end of input.
pub fn serve_echo<R: BufRead, W: Write>(input: R, mut output: W, threshold: u8) -> io::Result<()> {
    let mut last_id: i64 = -1;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<WireRequest>(&line) {
            Ok(req) => {
                last_id = req.id as i64;
                echo_response(&req, threshold)
            }
            Err(e) => WireResponse {
                id: last_id,
                candidates: None,
                error: Some(format!("malformed request: {e}")),
            },
        };
        serde_json::to_writer(&mut output, &response)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}
