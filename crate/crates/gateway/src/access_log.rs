use std::fs::OpenOptions;
use std::io::{self, BufRead, LineWriter, Write};
use std::path::Path;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

/// One access log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessRecord {
    pub timestamp: String,
    pub path: String,
    /// `forwarded`, `challenged`, `verified`, `served`, `rejected_<reason>`
    /// or `error_<kind>`.
    pub verdict: String,
    /// Time from request arrival to upstream dispatch for forwarded
    /// requests; to response completion for everything the gateway answers
    /// itself.
    pub latency_ms: f64,
    pub status: u16,
}

pub struct AccessLog {
    sink: Mutex<Box<dyn Write + Send>>,
}

impl AccessLog {
    pub fn stdout() -> Self {
        AccessLog { sink: Mutex::new(Box::new(LineWriter::new(io::stdout()))) }
    }

    pub fn file(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AccessLog { sink: Mutex::new(Box::new(LineWriter::new(file))) })
    }

    pub fn to_writer(writer: Box<dyn Write + Send>) -> Self {
        AccessLog { sink: Mutex::new(writer) }
    }

    pub fn record(&self, path: &str, verdict: &str, latency: Duration, status: u16) {
        let record = AccessRecord {
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
            path: path.to_owned(),
            verdict: verdict.to_owned(),
            latency_ms: latency.as_secs_f64() * 1000.0,
            status,
        };
        let mut line = serde_json::to_vec(&record).expect("access record serializes");
        line.push(b'\n');
        if let Err(e) = self.sink.lock().write_all(&line) {
            log::warn!("access log write failed: {e}");
        }
    }
}

/// Parses a JSON-lines access log, skipping lines that are not records.
pub fn read_access_log(reader: impl BufRead) -> io::Result<Vec<AccessRecord>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        if let Ok(record) = serde_json::from_str(&line?) {
            out.push(record);
        }
    }
    Ok(out)
}
