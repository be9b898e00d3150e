use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Forwarded,
    Blocked,
    Failed,
}

/// One workload request as seen by the client.
#[derive(Debug, Clone, Copy)]
pub struct Sample {
    /// Milliseconds since the run started, at completion.
    pub at_ms: u64,
    pub latency_us: u64,
    pub outcome: Outcome,
    pub status: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondStats {
    pub second: u64,
    pub requests: u64,
    pub failures: u64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub start_second: u64,
    pub end_second: u64,
    pub throughput_rps: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub failures: u64,
}

/// Counters for the verified client that runs alongside a flood.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CanaryStats {
    pub requests: u64,
    pub failures: u64,
    pub forwarded_to_origin: u64,
    pub p50_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub scenario: String,
    pub duration_s: f64,
    pub users: u64,
    pub requests_total: u64,
    pub failures_total: u64,
    /// From the origin stub's own arrival counter when one is attached,
    /// otherwise from origin-marked responses seen by the client.
    pub forwarded_to_origin: u64,
    pub forwarded_source: String,
    pub blocked_at_gateway: u64,
    pub status_5xx: u64,
    pub latency_p50_ms: f64,
    pub latency_p95_ms: f64,
    pub latency_p99_ms: f64,
    pub rps_series: Vec<SecondStats>,
    pub steady_state: SteadyState,
    pub ceremonies_attempted: u64,
    pub ceremonies_failed: u64,
    pub canary: Option<CanaryStats>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("accounting identity violated: requests_total {total} != forwarded {forwarded} + blocked {blocked} + failed {failed}")]
    Identity { total: u64, forwarded: u64, blocked: u64, failed: u64 },
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown report format for {0:?} (use .json or .csv)")]
    Format(String),
}

/// Nearest-rank percentile of an unsorted slice, in the slice's unit.
pub fn percentile(values: &mut [u64], p: f64) -> u64 {
    if values.is_empty() {
        return 0;
    }
    values.sort_unstable();
    let rank = ((p / 100.0) * values.len() as f64).ceil() as usize;
    values[rank.clamp(1, values.len()) - 1]
}

fn ms(us: u64) -> f64 {
    us as f64 / 1000.0
}

impl BenchReport {
    pub fn check_identity(&self) -> Result<(), ReportError> {
        let sum = self.forwarded_to_origin + self.blocked_at_gateway + self.failures_total;
        if sum == self.requests_total {
            Ok(())
        } else {
            Err(ReportError::Identity {
                total: self.requests_total,
                forwarded: self.forwarded_to_origin,
                blocked: self.blocked_at_gateway,
                failed: self.failures_total,
            })
        }
    }

    /// Aggregates samples. `steady` is the [start, end) window in seconds
    /// used for the steady-state figures.
    pub fn from_samples(scenario: &str, users: u64, duration_s: f64, samples: &[Sample], steady: (u64, u64)) -> BenchReport {
        let seconds = (duration_s.ceil() as u64).max(samples.iter().map(|s| s.at_ms / 1000 + 1).max().unwrap_or(0));
        let mut per_second: Vec<Vec<&Sample>> = vec![Vec::new(); seconds as usize];
        for s in samples {
            per_second[(s.at_ms / 1000) as usize].push(s);
        }
        let rps_series = per_second
            .iter()
            .enumerate()
            .map(|(i, bucket)| {
                let mut lat: Vec<u64> = bucket.iter().map(|s| s.latency_us).collect();
                SecondStats {
                    second: i as u64,
                    requests: bucket.len() as u64,
                    failures: bucket.iter().filter(|s| s.outcome == Outcome::Failed).count() as u64,
                    p50_ms: ms(percentile(&mut lat, 50.0)),
                    p95_ms: ms(percentile(&mut lat, 95.0)),
                }
            })
            .collect();

        let (start, end) = steady;
        let window: Vec<&Sample> = samples.iter().filter(|s| (start * 1000..end * 1000).contains(&s.at_ms)).collect();
        let mut window_lat: Vec<u64> = window.iter().map(|s| s.latency_us).collect();
        let span = end.saturating_sub(start).max(1) as f64;
        let steady_state = SteadyState {
            start_second: start,
            end_second: end,
            throughput_rps: window.len() as f64 / span,
            p50_ms: ms(percentile(&mut window_lat, 50.0)),
            p95_ms: ms(percentile(&mut window_lat, 95.0)),
            failures: window.iter().filter(|s| s.outcome == Outcome::Failed).count() as u64,
        };

        let mut all: Vec<u64> = samples.iter().map(|s| s.latency_us).collect();
        let count = |o| samples.iter().filter(|s| s.outcome == o).count() as u64;
        BenchReport {
            scenario: scenario.to_owned(),
            duration_s,
            users,
            requests_total: samples.len() as u64,
            failures_total: count(Outcome::Failed),
            forwarded_to_origin: count(Outcome::Forwarded),
            forwarded_source: "client".into(),
            blocked_at_gateway: count(Outcome::Blocked),
            status_5xx: samples.iter().filter(|s| s.status >= 500).count() as u64,
            latency_p50_ms: ms(percentile(&mut all, 50.0)),
            latency_p95_ms: ms(percentile(&mut all, 95.0)),
            latency_p99_ms: ms(percentile(&mut all, 99.0)),
            rps_series,
            steady_state,
            ceremonies_attempted: 0,
            ceremonies_failed: 0,
            canary: None,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("second,requests,failures,p50_ms,p95_ms\n");
        for s in &self.rps_series {
            out.push_str(&format!("{},{},{},{:.3},{:.3}\n", s.second, s.requests, s.failures, s.p50_ms, s.p95_ms));
        }
        out
    }
}

/// Checks the accounting identity, then writes JSON or CSV by extension.
pub fn emit_report(report: &BenchReport, path: &Path) -> Result<(), ReportError> {
    report.check_identity()?;
    let text = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        Some("csv") => report.to_csv(),
        _ => return Err(ReportError::Format(path.display().to_string())),
    };
    let mut file = std::fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}
