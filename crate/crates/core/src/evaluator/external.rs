//! Evaluation by an external process.
//!
//! The child receives one JSON request line on stdin,
//! `{"model_path": str, "dataset": str, "per_sample": bool}`, and must answer with one JSON line
//! on stdout, `{"error": float, "per_sample": [float]?, "wall_ms": int}`. A nonzero exit status
//! is a failure. The model file uses the regular binary model format.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{EvalResult, Evaluator};
use crate::error::{Error, Result};
use crate::netmodel::CompressedModel;

pub const DEFAULT_TIMEOUT_SECS: u64 = 3600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalRequest {
    pub model_path: String,
    pub dataset: String,
    pub per_sample: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalResponse {
    pub error: f64,
    #[serde(default)]
    pub per_sample: Option<Vec<f64>>,
    pub wall_ms: u64,
}

/// Runs `command` (program followed by arguments) once for one model file and dataset id.
///
/// `expected_samples`, when known, is checked against the length of a returned `per_sample`.
pub fn external_evaluate(
    command: &[String],
    model_path: &Path,
    dataset: &str,
    per_sample: bool,
    expected_samples: Option<usize>,
    timeout: Duration,
) -> Result<EvalResult> {
    let (program, args) = command.split_first().ok_or_else(|| Error::Protocol("empty evaluator command".into()))?;
    let request = ExternalRequest { model_path: model_path.display().to_string(), dataset: dataset.to_string(), per_sample };
    let mut line = serde_json::to_string(&request)?;
    line.push('\n');

    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::Protocol(format!("failed to spawn `{program}`: {e}")))?;

    // A child that exits without reading its input closes the pipe; that is not our failure.
    if let Some(mut stdin) = child.stdin.take() {
        let _ = stdin.write_all(line.as_bytes());
    }
    let mut stdout = child.stdout.take().expect("piped stdout");
    let mut stderr = child.stderr.take().expect("piped stderr");
    let out_reader = thread::spawn(move || {
        let mut buf = String::new();
        let _ = stdout.read_to_string(&mut buf);
        buf
    });
    let err_reader = thread::spawn(move || {
        let mut buf = String::new();
        let _ = stderr.read_to_string(&mut buf);
        buf
    });

    let started = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if started.elapsed() >= timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(Error::EvalTimeout(timeout.as_secs()));
        }
        thread::sleep(Duration::from_millis(5));
    };
    let out = out_reader.join().unwrap_or_default();
    let diagnostics = err_reader.join().unwrap_or_default();

    if !status.success() {
        return Err(Error::Protocol(format!("evaluator exited with {status}: {}", diagnostics.trim())));
    }
    let response_line = out
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::Protocol(format!("evaluator produced no response: {}", diagnostics.trim())))?;
    let response: ExternalResponse =
        serde_json::from_str(response_line).map_err(|e| Error::Protocol(format!("malformed response `{response_line}`: {e}")))?;
    if !response.error.is_finite() || !(0.0..=100.0).contains(&response.error) {
        return Err(Error::Protocol(format!("error {} is outside [0, 100]", response.error)));
    }
    match (&response.per_sample, per_sample, expected_samples) {
        (None, true, _) => return Err(Error::Protocol("per_sample errors were requested but not returned".into())),
        (Some(v), _, Some(n)) if v.len() != n => {
            return Err(Error::Protocol(format!("per_sample has {} entries, expected {n}", v.len())))
        }
        _ => {}
    }
    Ok(EvalResult { error: response.error, per_sample: response.per_sample, wall_ms: response.wall_ms })
}

/// [`Evaluator`] backed by an external command; each call writes the model to a scratch file.
#[derive(Debug, Clone)]
pub struct ExternalEvaluator {
    pub command: Vec<String>,
    pub dataset: String,
    pub expected_samples: Option<usize>,
    pub timeout: Duration,
    pub scratch_dir: PathBuf,
}

impl ExternalEvaluator {
    pub fn new(command: Vec<String>, dataset: impl Into<String>) -> Self {
        Self {
            command,
            dataset: dataset.into(),
            expected_samples: None,
            timeout: Duration::from_secs(DEFAULT_TIMEOUT_SECS),
            scratch_dir: std::env::temp_dir(),
        }
    }
}

static SCRATCH_COUNTER: AtomicU64 = AtomicU64::new(0);

impl Evaluator for ExternalEvaluator {
    fn evaluate(&self, model: &CompressedModel, with_per_sample: bool) -> Result<EvalResult> {
        let n = SCRATCH_COUNTER.fetch_add(1, Ordering::Relaxed);
        let path = self.scratch_dir.join(format!("rankpilot-{}-{n}.lrfm", std::process::id()));
        model.save(&path)?;
        let result = external_evaluate(&self.command, &path, &self.dataset, with_per_sample, self.expected_samples, self.timeout);
        let _ = std::fs::remove_file(&path);
        result
    }
}
