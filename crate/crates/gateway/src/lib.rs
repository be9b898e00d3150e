//! Reverse proxy that admits only clients holding a valid session cookie
//! minted after a hardware-attested WebAuthn registration ceremony.

pub mod access_log;
pub mod config;
pub mod gateway;
pub mod page;
pub mod server;

pub use access_log::{read_access_log, AccessLog, AccessRecord};
pub use config::{ConfigError, GatewayConfig};
pub use gateway::{Body, Gateway, StartupError, RESERVED_PREFIX};
pub use server::{load_tls, serve, spawn, spawn_on, tls_from_der, RunningGateway};

/// Writes a development TLS identity and fixture MDS files into `dir`.
/// Returns the paths in the order: cert, key, TLS root, MDS blob, MDS root.
pub fn write_dev_fixtures(
    dir: &std::path::Path,
    host: &str,
    seed: u64,
) -> std::io::Result<[std::path::PathBuf; 5]> {
    use cahicha_core::soft::pki::{pem_encode, FixturePki};
    let pki = FixturePki::new(seed);
    let tls = pki.tls_identity(host);
    std::fs::create_dir_all(dir)?;
    let files = [
        ("tls-cert.pem", pem_encode("CERTIFICATE", &tls.cert_der)),
        ("tls-key.pem", pem_encode("PRIVATE KEY", &tls.key_pkcs8_der)),
        ("tls-root.pem", pem_encode("CERTIFICATE", &tls.root_der)),
        ("mds-blob.jwt", cahicha_core::soft::fixture_mds_blob(&pki)),
        ("mds-root.pem", pem_encode("CERTIFICATE", &pki.mds_root.cert_der)),
    ];
    let mut paths: [std::path::PathBuf; 5] = Default::default();
    for (slot, (name, contents)) in paths.iter_mut().zip(files) {
        *slot = dir.join(name);
        std::fs::write(&*slot, contents)?;
    }
    Ok(paths)
}
