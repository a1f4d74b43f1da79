//! External model behind a pipe: GTT batch on stdin, GTT batch on stdout.

use std::io::{Read, Write};
use std::process::{Command, Stdio};

use super::{OutputKind, Predictor};
use crate::error::{GttaError, Result};
use crate::io::{tensor_from_bytes, tensor_to_bytes};
use crate::tensor::Tensor;

/// Spawns `program args...` once per `predict` call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubprocessPredictor {
    program: String,
    args: Vec<String>,
    kind: OutputKind,
}

impl SubprocessPredictor {
    pub fn new(program: impl Into<String>, args: Vec<String>, kind: OutputKind) -> Self {
        Self {
            program: program.into(),
            args,
            kind,
        }
    }

    /// Splits a whitespace-separated command line.
    pub fn from_command_line(cmd: &str, kind: OutputKind) -> Result<Self> {
        let mut parts = cmd.split_whitespace().map(str::to_owned);
        let program = parts
            .next()
            .ok_or_else(|| GttaError::Param("empty predictor command".into()))?;
        Ok(Self::new(program, parts.collect(), kind))
    }
}

impl Predictor for SubprocessPredictor {
    fn output_kind(&self) -> OutputKind {
        self.kind
    }

    fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let request = tensor_to_bytes(batch)?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| GttaError::Predictor(format!("cannot spawn {:?}: {e}", self.program)))?;
        let mut stdin = child.stdin.take().expect("stdin piped");
        // Feed stdin from another thread so a child that streams output cannot deadlock us.
        let writer = std::thread::spawn(move || stdin.write_all(&request));
        let mut response = Vec::new();
        child
            .stdout
            .take()
            .expect("stdout piped")
            .read_to_end(&mut response)
            .map_err(|e| GttaError::Predictor(format!("reading predictor output: {e}")))?;
        let mut stderr = String::new();
        if let Some(mut e) = child.stderr.take() {
            let _ = e.read_to_string(&mut stderr);
        }
        let status = child.wait().map_err(|e| GttaError::Predictor(e.to_string()))?;
        let write_result = writer.join().map_err(|_| GttaError::Predictor("stdin writer panicked".into()))?;
        if !status.success() {
            return Err(GttaError::Predictor(format!("{:?} exited with {status}: {}", self.program, stderr.trim())));
        }
        write_result.map_err(|e| GttaError::Predictor(format!("writing predictor input: {e}")))?;
        let out = tensor_from_bytes(&response).map_err(|e| GttaError::Predictor(format!("bad predictor output: {e}")))?;
        self.kind.check_output(&out, batch.nrows())?;
        Ok(out)
    }
}
