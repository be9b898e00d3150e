use std::convert::Infallible;
use std::future::Future;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use cahicha_core::UnixMillis;
use hyper::server::conn::http1;
use hyper::service::service_fn;
use hyper_util::rt::TokioIo;
use rustls::pki_types::pem::PemObject;
use rustls::pki_types::{CertificateDer, PrivateKeyDer, PrivatePkcs8KeyDer};
use tokio::io::{AsyncRead, AsyncWrite};
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tokio_rustls::TlsAcceptor;

use crate::gateway::{Gateway, StartupError};

const SWEEP_INTERVAL: Duration = Duration::from_secs(30);
const TLS_HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);

fn acceptor(chain: Vec<CertificateDer<'static>>, key: PrivateKeyDer<'static>) -> Result<TlsAcceptor, StartupError> {
    let provider = Arc::new(rustls::crypto::ring::default_provider());
    let mut config = rustls::ServerConfig::builder_with_provider(provider)
        .with_safe_default_protocol_versions()
        .map_err(|e| StartupError::Tls(e.to_string()))?
        .with_no_client_auth()
        .with_single_cert(chain, key)
        .map_err(|e| StartupError::Tls(e.to_string()))?;
    config.alpn_protocols = vec![b"http/1.1".to_vec()];
    Ok(TlsAcceptor::from(Arc::new(config)))
}

/// TLS acceptor from PEM files (certificate chain, private key).
pub fn load_tls(cert_path: &Path, key_path: &Path) -> Result<TlsAcceptor, StartupError> {
    let chain = CertificateDer::pem_file_iter(cert_path)
        .and_then(|it| it.collect::<Result<Vec<_>, _>>())
        .map_err(|e| StartupError::Tls(format!("{}: {e}", cert_path.display())))?;
    if chain.is_empty() {
        return Err(StartupError::Tls(format!("{}: no certificates", cert_path.display())));
    }
    let key = PrivateKeyDer::from_pem_file(key_path).map_err(|e| StartupError::Tls(format!("{}: {e}", key_path.display())))?;
    acceptor(chain, key)
}

/// TLS acceptor from DER certificate chain and PKCS#8 key.
pub fn tls_from_der(chain: &[Vec<u8>], key_pkcs8: &[u8]) -> Result<TlsAcceptor, StartupError> {
    let chain = chain.iter().map(|c| CertificateDer::from(c.clone())).collect();
    let key = PrivateKeyDer::Pkcs8(PrivatePkcs8KeyDer::from(key_pkcs8.to_vec()));
    acceptor(chain, key)
}

/// A gateway serving on a background task.
pub struct RunningGateway {
    pub local_addr: SocketAddr,
    pub gateway: Arc<Gateway>,
    shutdown: watch::Sender<bool>,
    task: JoinHandle<()>,
}

impl RunningGateway {
    pub async fn shutdown(self) {
        let _ = self.shutdown.send(true);
        let _ = self.task.await;
    }
}

/// Binds the configured listen address (port 0 picks a free port) and
/// serves until [`RunningGateway::shutdown`].
pub async fn spawn(gateway: Arc<Gateway>, tls: Option<TlsAcceptor>) -> Result<RunningGateway, StartupError> {
    let listener = TcpListener::bind(&gateway.config().listen_address)
        .await
        .map_err(|e| StartupError::Io(format!("binding {}: {e}", gateway.config().listen_address)))?;
    spawn_on(listener, gateway, tls)
}

/// Like [`spawn`] on an already bound listener.
pub fn spawn_on(listener: TcpListener, gateway: Arc<Gateway>, tls: Option<TlsAcceptor>) -> Result<RunningGateway, StartupError> {
    let local_addr = listener.local_addr().map_err(|e| StartupError::Io(e.to_string()))?;
    let (shutdown, mut rx) = watch::channel(false);
    let task = tokio::spawn(serve(listener, gateway.clone(), tls, async move {
        let _ = rx.changed().await;
    }));
    Ok(RunningGateway { local_addr, gateway, shutdown, task })
}

/// Accept loop. Returns once `shutdown` resolves and open connections
/// have finished their in-flight requests.
pub async fn serve(listener: TcpListener, gateway: Arc<Gateway>, tls: Option<TlsAcceptor>, shutdown: impl Future<Output = ()>) {
    let (stop_tx, stop_rx) = watch::channel(false);
    let sweeper = {
        let gateway = gateway.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(SWEEP_INTERVAL);
            loop {
                tick.tick().await;
                let removed = gateway.engine().sweep(UnixMillis::now());
                if removed > 0 {
                    log::debug!("swept {removed} expired challenges");
                }
            }
        })
    };
    let mut connections = tokio::task::JoinSet::new();
    tokio::pin!(shutdown);
    loop {
        tokio::select! {
            _ = &mut shutdown => break,
            accepted = listener.accept() => {
                let (stream, peer) = match accepted {
                    Ok(pair) => pair,
                    Err(e) => {
                        log::warn!("accept failed: {e}");
                        tokio::time::sleep(Duration::from_millis(10)).await;
                        continue;
                    }
                };
                let _ = stream.set_nodelay(true);
                let gateway = gateway.clone();
                let tls = tls.clone();
                let stop = stop_rx.clone();
                connections.spawn(async move {
                    match tls {
                        Some(acceptor) => match tokio::time::timeout(TLS_HANDSHAKE_TIMEOUT, acceptor.accept(stream)).await {
                            Ok(Ok(stream)) => serve_connection(stream, peer, gateway, stop).await,
                            Ok(Err(e)) => log::debug!("TLS handshake with {peer} failed: {e}"),
                            Err(_) => log::debug!("TLS handshake with {peer} timed out"),
                        },
                        None => serve_connection(stream, peer, gateway, stop).await,
                    }
                });
            }
            Some(_) = connections.join_next(), if !connections.is_empty() => {}
        }
    }
    sweeper.abort();
    let _ = stop_tx.send(true);
    while connections.join_next().await.is_some() {}
}

async fn serve_connection<S>(stream: S, peer: SocketAddr, gateway: Arc<Gateway>, mut stop: watch::Receiver<bool>)
where
    S: AsyncRead + AsyncWrite + Unpin + Send + 'static,
{
    let service = service_fn(move |request| {
        let gateway = gateway.clone();
        async move { Ok::<_, Infallible>(gateway.handle(request, peer).await) }
    });
    let connection = http1::Builder::new()
        .keep_alive(true)
        .timer(hyper_util::rt::TokioTimer::new())
        .header_read_timeout(Duration::from_secs(30))
        .serve_connection(TokioIo::new(stream), service);
    tokio::pin!(connection);
    tokio::select! {
        result = connection.as_mut() => {
            if let Err(e) = result {
                log::debug!("connection from {peer}: {e}");
            }
        }
        _ = stop.changed() => {
            connection.as_mut().graceful_shutdown();
            let _ = connection.await;
        }
    }
}
