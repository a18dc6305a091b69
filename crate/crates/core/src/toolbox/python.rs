//! Client side of the python sandbox runner.
//!
//! The runner is a separate process. One request line (JSON) is written to
//! its stdin and one result line (JSON) is read from its stdout.

use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

pub const DEFAULT_TIMEOUT_SECS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecRequest {
    pub code: String,
    pub timeout: f64,
}

impl ExecRequest {
    pub fn new(code: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            timeout: DEFAULT_TIMEOUT_SECS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecStatus {
    Ok,
    Error,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResult {
    pub status: ExecStatus,
    pub stdout: String,
    pub stderr: String,
    pub wall_time: f64,
}

pub trait PythonRunner: Send + Sync {
    fn run(&self, request: &ExecRequest) -> Result<ExecResult, String>;
}

/// Spawns the runner command once per call.
#[derive(Debug, Clone)]
pub struct SubprocessRunner {
    command: Vec<String>,
}

impl SubprocessRunner {
    pub fn new(command: Vec<String>) -> Self {
        Self { command }
    }
}

impl PythonRunner for SubprocessRunner {
    fn run(&self, request: &ExecRequest) -> Result<ExecResult, String> {
        let (program, args) = self
            .command
            .split_first()
            .ok_or_else(|| "empty runner command".to_string())?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .env_remove("TRANSLATOR_API_KEY")
            .env_remove("REASONER_API_KEY")
            .spawn()
            .map_err(|e| format!("spawning `{program}`: {e}"))?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            let line = serde_json::to_string(request).map_err(|e| e.to_string())?;
            writeln!(stdin, "{line}").map_err(|e| format!("writing request: {e}"))?;
        }
        let mut line = String::new();
        let read = BufReader::new(child.stdout.take().expect("piped stdout")).read_line(&mut line);
        let status = child.wait().map_err(|e| e.to_string())?;
        read.map_err(|e| format!("reading result: {e}"))?;
        if line.trim().is_empty() {
            return Err(format!("runner produced no result line (exit {status})"));
        }
        serde_json::from_str(line.trim_end()).map_err(|e| format!("bad result line: {e}"))
    }
}

/// Returns the same stdout for every request.
#[derive(Debug, Clone)]
pub struct FixedOutputRunner {
    pub stdout: String,
}

impl FixedOutputRunner {
    pub fn new(stdout: impl Into<String>) -> Self {
        Self { stdout: stdout.into() }
    }
}

impl PythonRunner for FixedOutputRunner {
    fn run(&self, _request: &ExecRequest) -> Result<ExecResult, String> {
        Ok(ExecResult {
            status: ExecStatus::Ok,
            stdout: self.stdout.clone(),
            stderr: String::new(),
            wall_time: 0.0,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoSandbox;

impl PythonRunner for NoSandbox {
    fn run(&self, _request: &ExecRequest) -> Result<ExecResult, String> {
        Err("no sandbox command configured".into())
    }
}
