//! In-process deployment: origin stub plus a TLS gateway on localhost,
//! using the fixture PKI for the TLS identity and MDS trust store.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use cahicha_core::engine::Mode;
use cahicha_core::soft::fixture_trust_store;
use cahicha_core::soft::pki::FixturePki;
use cahicha_core::token::TokenKey;
use cahicha_core::UnixMillis;
use cahicha_gateway::{spawn_on, AccessLog, Gateway, GatewayConfig, RunningGateway, StartupError};
use tokio::net::TcpListener;

use crate::client::Trust;
use crate::stub::OriginStub;

pub const DEFAULT_FIXTURE_SEED: u64 = 1;

#[derive(Debug, Clone)]
pub struct LocalOptions {
    pub mode: Mode,
    pub fixture_seed: u64,
    /// Where the gateway writes its access log. `None` discards it.
    pub access_log: Option<PathBuf>,
    pub stub_addr: SocketAddr,
}

impl Default for LocalOptions {
    fn default() -> Self {
        LocalOptions {
            mode: Mode::General,
            fixture_seed: DEFAULT_FIXTURE_SEED,
            access_log: None,
            stub_addr: SocketAddr::from(([127, 0, 0, 1], 0)),
        }
    }
}

pub struct LocalDeployment {
    pub gateway: RunningGateway,
    pub stub: OriginStub,
    pub pki: Arc<FixturePki>,
    pub trust: Trust,
}

impl LocalDeployment {
    pub async fn start(options: LocalOptions) -> Result<LocalDeployment, StartupError> {
        let pki = Arc::new(FixturePki::new(options.fixture_seed));
        let stub = OriginStub::start(options.stub_addr)
            .await
            .map_err(|e| StartupError::Io(format!("starting origin stub: {e}")))?;
        let listener = TcpListener::bind("127.0.0.1:0").await.map_err(|e| StartupError::Io(e.to_string()))?;
        let port = listener.local_addr().map_err(|e| StartupError::Io(e.to_string()))?.port();
        let config = GatewayConfig {
            listen_address: format!("127.0.0.1:{port}"),
            upstream_origin: format!("http://{}", stub.addr),
            mode: options.mode,
            expected_origins: vec![format!("https://localhost:{port}")],
            ..Default::default()
        };
        let log = match &options.access_log {
            Some(path) => AccessLog::file(path).map_err(|e| StartupError::Io(format!("{}: {e}", path.display())))?,
            None => AccessLog::to_writer(Box::new(std::io::sink())),
        };
        let trust_store = Some(fixture_trust_store(&pki, UnixMillis::now()));
        let gateway = Gateway::new(config, trust_store, TokenKey::generate()?, log)?;
        let identity = pki.tls_identity("localhost");
        let acceptor = cahicha_gateway::tls_from_der(&[identity.cert_der], &identity.key_pkcs8_der)?;
        let gateway = spawn_on(listener, Arc::new(gateway), Some(acceptor))?;
        Ok(LocalDeployment { gateway, stub, pki, trust: Trust { roots: vec![identity.root_der] } })
    }

    /// The URL clients should use. The TLS identity is issued for "localhost".
    pub fn target_url(&self) -> String {
        format!("https://localhost:{}/", self.gateway.local_addr.port())
    }

    pub async fn shutdown(self) {
        self.gateway.shutdown().await;
    }
}
