//! Load and flood generator for the gateway, with an instrumented origin
//! stub that counts what actually reaches the backend.

pub mod client;
pub mod local;
pub mod report;
pub mod scenario;
pub mod stub;

pub use client::{BenchClient, ClientError, Reply, Trust};
pub use local::{LocalDeployment, LocalOptions};
pub use report::{emit_report, BenchReport, CanaryStats, Outcome, ReportError, Sample};
pub use scenario::{run, run_bot_flood, run_verified_load, BenchError, BenchScenario, ScenarioKind};
pub use stub::{ArrivalCounters, OriginStub, Role};

/// Reads every CERTIFICATE block from a PEM file, as DER.
pub fn read_pem_roots(path: &std::path::Path) -> std::io::Result<Vec<Vec<u8>>> {
    use rustls::pki_types::pem::PemObject;
    use rustls::pki_types::CertificateDer;
    CertificateDer::pem_file_iter(path)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?
        .map(|cert| {
            cert.map(|c| c.to_vec()).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
        })
        .collect()
}
