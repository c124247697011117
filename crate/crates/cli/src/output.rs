use std::io::Write;
use std::path::Path;

use ckf_core::simulation::TraceRecord;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct Envelope<T: Serialize> {
    pub command: String,
    /// SHA-256 of the scenario file bytes, or of the command arguments when
    /// there is no scenario.
    pub input_digest: String,
    pub version: String,
    pub timestamp: String,
    pub payload: T,
}

impl<T: Serialize> Envelope<T> {
    pub fn new(command: &str, input: &[u8], payload: T) -> Self {
        Self {
            command: command.to_string(),
            input_digest: digest(input),
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            payload,
        }
    }
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary file in the target directory, then renames,
/// so a failed command never leaves a partial file behind.
pub fn write_atomic(path: &Path, force: bool, fill: impl FnOnce(&mut dyn Write) -> Result<(), CliError>) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::Exists(path.display().to_string()));
    }
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush().map_err(io)?;
    }
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, force: bool, value: &T) -> Result<(), CliError> {
    write_atomic(path, force, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::Io(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| CliError::Io(e.to_string()))
    })
}

/// Trace columns: `t, trial, s_1..s_k, shat_1..shat_k, sq_err, power`.
pub fn trace_header(k: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string(), "trial".to_string()];
    cols.extend((1..=k).map(|i| format!("s_{i}")));
    cols.extend((1..=k).map(|i| format!("shat_{i}")));
    cols.push("sq_err".into());
    cols.push("power".into());
    cols
}

pub fn write_trace(path: &Path, force: bool, k: usize, records: &[TraceRecord]) -> Result<(), CliError> {
    write_atomic(path, force, |w| {
        let err = |e: csv::Error| CliError::Io(e.to_string());
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(trace_header(k)).map_err(err)?;
        for r in records {
            let mut row = vec![r.t.to_string(), r.trial.to_string()];
            row.extend(r.s.iter().chain(&r.s_hat).map(f64::to_string));
            row.push(r.sq_err.to_string());
            row.push(r.power.to_string());
            out.write_record(&row).map_err(err)?;
        }
        out.flush().map_err(|e| CliError::Io(e.to_string()))
    })
}
