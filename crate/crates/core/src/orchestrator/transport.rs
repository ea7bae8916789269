//! Wire types and clients for the executor and the external test generator.
//!
//! Executor protocol: one JSON request per test,
//! `{"id", "focal_source", "test_source", "timeout_ms"}`, answered by
//! `{"id", "status", "executable_lines", "covered_lines", "covered_branches",
//! "has_assertion", "wall_time_ms", "error_message"}`. In subprocess mode each
//! document is one line on the worker's stdin/stdout; in HTTP mode the same
//! bodies are POSTed.
//!
//! Generator protocol: POST `{"state_text", "history", "instruction"}`,
//! answered by `{"test_text"}`.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::coverage::CoverageUniverse;
use crate::error::{Error, Result};
use crate::outcome::{ExecutionOutcome, Status};

/// Default per-test execution limit in milliseconds.
pub const DEFAULT_EXEC_TIMEOUT_MS: u64 = 3000;
/// Slack allowed on top of the execution limit before a worker is abandoned.
pub const TIMEOUT_GRACE_MS: u64 = 500;
/// Connection attempts before an endpoint is declared unreachable.
pub const CONNECT_ATTEMPTS: usize = 3;

/// Fixed preamble sent with every generation request.
pub const GREEDY_INSTRUCTION: &str = "Write exactly one new unit test for the function above. \
Lines ending in `#uncovered` have not been executed by the existing tests. \
Target as many of those lines as possible, do not repeat behavior already checked \
by the previous tests, and include at least one assertion on the observed behavior.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecRequest {
    pub id: String,
    pub focal_source: String,
    pub test_source: String,
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResponse {
    pub id: Option<String>,
    pub status: Option<Status>,
    #[serde(default)]
    pub executable_lines: Vec<usize>,
    #[serde(default)]
    pub covered_lines: Vec<usize>,
    #[serde(default)]
    pub covered_branches: Vec<String>,
    #[serde(default)]
    pub has_assertion: bool,
    #[serde(default)]
    pub wall_time_ms: u64,
    #[serde(default)]
    pub error_message: Option<String>,
}

impl ExecResponse {
    /// Maps executor line numbers and arc labels onto `universe` units.
    /// Lines or arcs outside the universe are dropped.
    pub fn to_outcome(&self, test_id: &str, universe: &CoverageUniverse) -> Result<ExecutionOutcome> {
        let status = self.status.ok_or_else(|| {
            Error::Transport(format!(
                "executor returned no status: {}",
                self.error_message.as_deref().unwrap_or("no message")
            ))
        })?;
        let mut covered_lines = BTreeSet::new();
        for &line in &self.covered_lines {
            match universe.unit_for_line(line) {
                Some(id) => {
                    covered_lines.insert(id);
                }
                None => log::debug!("test `{test_id}`: line {line} not in universe"),
            }
        }
        let covered_branches = self
            .covered_branches
            .iter()
            .filter_map(|arc| universe.unit_for_arc(arc))
            .collect();
        Ok(ExecutionOutcome {
            test_id: test_id.to_owned(),
            status,
            covered_lines,
            covered_branches,
            has_assertion: self.has_assertion,
            wall_time_ms: self.wall_time_ms,
        })
    }
}

pub trait Executor: Send {
    /// `Error::Transport` marks the single request as failed;
    /// `Error::Unreachable` means the executor cannot be used at all.
    fn execute(&mut self, request: &ExecRequest) -> Result<ExecResponse>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub state_text: String,
    pub history: Vec<String>,
    pub instruction: String,
}

#[derive(Debug, Clone, Deserialize)]
struct GenerateResponse {
    test_text: String,
}

pub trait Generator: Send {
    fn generate(&mut self, request: &GenerateRequest) -> Result<String>;
}

/// How to reach an executor: an HTTP endpoint or a worker command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecutorSpec {
    Http(String),
    Subprocess(Vec<String>),
}

impl ExecutorSpec {
    /// `http://…`/`https://…` selects HTTP; anything else is a command line
    /// split on whitespace.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec.starts_with("http://") || spec.starts_with("https://") {
            return Ok(ExecutorSpec::Http(spec.to_owned()));
        }
        let argv: Vec<String> = spec.split_whitespace().map(str::to_owned).collect();
        if argv.is_empty() {
            return Err(Error::InvalidConfig("empty executor command".into()));
        }
        Ok(ExecutorSpec::Subprocess(argv))
    }

    pub fn connect(&self, timeout_ms: u64) -> Result<Box<dyn Executor>> {
        Ok(match self {
            ExecutorSpec::Http(url) => Box::new(HttpExecutor::new(url, timeout_ms)?),
            ExecutorSpec::Subprocess(argv) => Box::new(SubprocessExecutor::new(argv.clone())),
        })
    }
}

fn http_client(timeout: Duration) -> Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .connect_timeout(Duration::from_secs(2))
        .build()
        .map_err(|e| Error::Transport(format!("building HTTP client: {e}")))
}

/// POSTs `body`, retrying connection failures. Timeouts and HTTP errors are
/// not retried.
fn post_json<B: Serialize, R: serde::de::DeserializeOwned>(
    client: &reqwest::blocking::Client,
    url: &str,
    body: &B,
) -> Result<R> {
    let mut last = String::new();
    for attempt in 1..=CONNECT_ATTEMPTS {
        match client.post(url).json(body).send() {
            Ok(resp) => {
                let resp = resp
                    .error_for_status()
                    .map_err(|e| Error::Transport(format!("{url}: {e}")))?;
                let text = resp
                    .text()
                    .map_err(|e| Error::Transport(format!("{url}: reading body: {e}")))?;
                return serde_json::from_str(&text)
                    .map_err(|e| Error::Transport(format!("{url}: malformed response body: {e}")));
            }
            Err(e) if e.is_timeout() => {
                return Err(Error::Transport(format!("{url}: timed out")));
            }
            Err(e) if e.is_connect() => {
                log::warn!("{url}: connection attempt {attempt}/{CONNECT_ATTEMPTS} failed: {e}");
                last = e.to_string();
                thread::sleep(Duration::from_millis(50 * attempt as u64));
            }
            Err(e) => return Err(Error::Transport(format!("{url}: {e}"))),
        }
    }
    Err(Error::Unreachable(format!(
        "{url} after {CONNECT_ATTEMPTS} attempts: {last}"
    )))
}

pub struct HttpExecutor {
    client: reqwest::blocking::Client,
    url: String,
}

impl HttpExecutor {
    pub fn new(url: &str, timeout_ms: u64) -> Result<Self> {
        Ok(HttpExecutor {
            client: http_client(Duration::from_millis(timeout_ms + TIMEOUT_GRACE_MS))?,
            url: url.to_owned(),
        })
    }
}

impl Executor for HttpExecutor {
    fn execute(&mut self, request: &ExecRequest) -> Result<ExecResponse> {
        let resp: ExecResponse = post_json(&self.client, &self.url, request)?;
        check_correlation(request, &resp)?;
        Ok(resp)
    }
}

fn check_correlation(request: &ExecRequest, resp: &ExecResponse) -> Result<()> {
    match &resp.id {
        Some(id) if id == &request.id => Ok(()),
        other => Err(Error::Transport(format!(
            "response id {other:?} does not match request id `{}`{}",
            request.id,
            resp.error_message
                .as_deref()
                .map(|m| format!(" ({m})"))
                .unwrap_or_default()
        ))),
    }
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Long-lived worker process speaking line-delimited JSON. A crashed or hung
/// worker is discarded and respawned on the next request.
pub struct SubprocessExecutor {
    argv: Vec<String>,
    worker: Option<Worker>,
}

impl SubprocessExecutor {
    pub fn new(argv: Vec<String>) -> Self {
        SubprocessExecutor { argv, worker: None }
    }

    fn spawn(&self) -> Result<Worker> {
        let (program, args) = self
            .argv
            .split_first()
            .ok_or_else(|| Error::InvalidConfig("empty executor command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Unreachable(format!("spawning `{program}`: {e}")))?;
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
        Ok(Worker {
            child,
            stdin,
            lines: rx,
        })
    }
}

impl Executor for SubprocessExecutor {
    fn execute(&mut self, request: &ExecRequest) -> Result<ExecResponse> {
        if self.worker.is_none() {
            self.worker = Some(self.spawn()?);
        }
        let worker = self.worker.as_mut().expect("spawned");
        let mut line = serde_json::to_string(request)?;
        line.push('\n');
        if let Err(e) = worker
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| worker.stdin.flush())
        {
            self.worker = None;
            return Err(Error::Transport(format!("worker stdin: {e}")));
        }
        let wait = Duration::from_millis(request.timeout_ms + TIMEOUT_GRACE_MS);
        let reply = match worker.lines.recv_timeout(wait) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => {
                self.worker = None;
                return Err(Error::Transport(format!("worker stdout: {e}")));
            }
            Err(RecvTimeoutError::Timeout) => {
                self.worker = None;
                return Err(Error::Transport(format!(
                    "worker gave no response within {} ms",
                    wait.as_millis()
                )));
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.worker = None;
                return Err(Error::Transport("worker exited mid-request".into()));
            }
        };
        let resp: ExecResponse = serde_json::from_str(&reply)
            .map_err(|e| Error::Transport(format!("malformed worker response: {e}")))?;
        check_correlation(request, &resp)?;
        Ok(resp)
    }
}

pub struct HttpGenerator {
    client: reqwest::blocking::Client,
    url: String,
}

impl HttpGenerator {
    pub fn new(url: &str, timeout_ms: u64) -> Result<Self> {
        Ok(HttpGenerator {
            client: http_client(Duration::from_millis(timeout_ms))?,
            url: url.to_owned(),
        })
    }
}

impl Generator for HttpGenerator {
    fn generate(&mut self, request: &GenerateRequest) -> Result<String> {
        let resp: GenerateResponse = post_json(&self.client, &self.url, request)?;
        Ok(resp.test_text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::{CoverageUnit, UnitKind};

    #[test]
    fn spec_parsing() {
        assert_eq!(
            ExecutorSpec::parse("http://localhost:9000/exec").unwrap(),
            ExecutorSpec::Http("http://localhost:9000/exec".into())
        );
        assert_eq!(
            ExecutorSpec::parse("python3 -m executor serve").unwrap(),
            ExecutorSpec::Subprocess(vec![
                "python3".into(),
                "-m".into(),
                "executor".into(),
                "serve".into()
            ])
        );
        assert!(ExecutorSpec::parse("   ").is_err());
    }

    #[test]
    fn response_maps_onto_universe() {
        let u = CoverageUniverse::new(vec![
            CoverageUnit::new(0, UnitKind::Line, "f.py:2"),
            CoverageUnit::new(1, UnitKind::Line, "f.py:4"),
            CoverageUnit::new(2, UnitKind::Branch, "f.py:2->4"),
        ])
        .unwrap();
        let resp: ExecResponse = serde_json::from_str(
            r#"{"id":"r1","status":"pass","executable_lines":[2,4,9],"covered_lines":[2,9],
                "covered_branches":["2->4","4->-1"],"has_assertion":true,"wall_time_ms":12,"error_message":null}"#,
        )
        .unwrap();
        let o = resp.to_outcome("t", &u).unwrap();
        assert!(o.is_valid());
        assert_eq!(o.covered_lines.iter().copied().collect::<Vec<_>>(), vec![0]);
        assert_eq!(o.covered_branches.iter().copied().collect::<Vec<_>>(), vec![2]);

        let protocol_error: ExecResponse =
            serde_json::from_str(r#"{"id":null,"error_message":"bad request"}"#).unwrap();
        assert!(protocol_error.to_outcome("t", &u).is_err());
    }

    #[test]
    fn correlation_enforced() {
        let req = ExecRequest {
            id: "a".into(),
            focal_source: "x".into(),
            test_source: "y".into(),
            timeout_ms: 10,
        };
        let mut resp: ExecResponse = serde_json::from_str(r#"{"id":"b","status":"pass"}"#).unwrap();
        assert!(check_correlation(&req, &resp).is_err());
        resp.id = Some("a".into());
        assert!(check_correlation(&req, &resp).is_ok());
    }

    #[test]
    fn missing_worker_binary_is_unreachable() {
        let mut ex = SubprocessExecutor::new(vec!["/nonexistent/worker-binary".into()]);
        let req = ExecRequest {
            id: "a".into(),
            focal_source: "x".into(),
            test_source: "y".into(),
            timeout_ms: 10,
        };
        assert!(matches!(ex.execute(&req), Err(Error::Unreachable(_))));
    }
}
