#![allow(dead_code)]

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;

use bytes::Bytes;
use cahicha_core::engine::Mode;
use cahicha_core::soft::pki::FixturePki;
use cahicha_core::soft::fixture_trust_store;
use cahicha_core::token::TokenKey;
use cahicha_core::UnixMillis;
use cahicha_gateway::{spawn_on, AccessLog, Gateway, GatewayConfig, RunningGateway};
use http_body_util::{BodyExt, Full};
use hyper::header::HeaderMap;
use hyper::service::service_fn;
use hyper::{Request, Response, StatusCode};
use hyper_util::rt::TokioIo;
use parking_lot::Mutex;
use rustls::pki_types::{CertificateDer, ServerName};
use tokio::net::{TcpListener, TcpStream};

#[derive(Debug, Clone)]
pub struct Arrival {
    pub method: String,
    pub path: String,
    pub headers: HeaderMap,
    pub body: Bytes,
}

/// Origin stand-in: echoes request bodies, answers `/missing` with 404,
/// and records every arrival.
pub struct Origin {
    pub addr: SocketAddr,
    pub arrivals: Arc<Mutex<Vec<Arrival>>>,
}

pub async fn start_origin() -> Origin {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let arrivals: Arc<Mutex<Vec<Arrival>>> = Arc::default();
    let log = arrivals.clone();
    tokio::spawn(async move {
        loop {
            let Ok((stream, _)) = listener.accept().await else { continue };
            let log = log.clone();
            tokio::spawn(async move {
                let service = service_fn(move |req: Request<hyper::body::Incoming>| {
                    let log = log.clone();
                    async move {
                        let (parts, body) = req.into_parts();
                        let body = body.collect().await.unwrap().to_bytes();
                        let path = parts.uri.path_and_query().unwrap().to_string();
                        log.lock().push(Arrival {
                            method: parts.method.to_string(),
                            path: path.clone(),
                            headers: parts.headers.clone(),
                            body: body.clone(),
                        });
                        let mut response = if path == "/missing" {
                            let mut r = Response::new(Full::new(Bytes::from_static(b"origin says no")));
                            *r.status_mut() = StatusCode::NOT_FOUND;
                            r
                        } else if body.is_empty() {
                            Response::new(Full::new(Bytes::from(format!("origin page {path}"))))
                        } else {
                            Response::new(Full::new(body))
                        };
                        response.headers_mut().insert("x-origin", "stub".parse().unwrap());
                        Ok::<_, Infallible>(response)
                    }
                });
                let _ = hyper::server::conn::http1::Builder::new().serve_connection(TokioIo::new(stream), service).await;
            });
        }
    });
    Origin { addr, arrivals }
}

pub const SEED: u64 = 21;

pub struct Harness {
    pub running: RunningGateway,
    pub origin: Origin,
    pub pki: Arc<FixturePki>,
    pub tls_root: Option<Vec<u8>>,
    pub log_path: std::path::PathBuf,
    _dir: tempfile::TempDir,
}

impl Harness {
    pub fn origin_url(&self) -> String {
        let scheme = if self.tls_root.is_some() { "https" } else { "http" };
        format!("{scheme}://localhost:{}", self.running.local_addr.port())
    }

    pub fn arrivals(&self) -> Vec<Arrival> {
        self.origin.arrivals.lock().clone()
    }

    pub async fn send(&self, request: Request<Full<Bytes>>) -> Response<Bytes> {
        send(self.running.local_addr, self.tls_root.as_deref(), request).await
    }
}

pub async fn start(mode: Mode, tls: bool, tweak: impl FnOnce(&mut GatewayConfig)) -> Harness {
    let pki = Arc::new(FixturePki::new(SEED));
    let origin = start_origin().await;
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("access.log");
    let mut config = GatewayConfig {
        listen_address: addr.to_string(),
        upstream_origin: origin.addr.to_string(),
        unsafe_no_tls: !tls,
        mode,
        expected_origins: vec![format!("{}://localhost:{}", if tls { "https" } else { "http" }, addr.port())],
        ..Default::default()
    };
    tweak(&mut config);
    let trust = Some(fixture_trust_store(&pki, UnixMillis::now()));
    let gateway = Gateway::new(
        config,
        trust,
        TokenKey::generate().unwrap(),
        AccessLog::file(&log_path).unwrap(),
    )
    .unwrap();
    let (acceptor, tls_root) = if tls {
        let identity = pki.tls_identity("localhost");
        let acceptor = cahicha_gateway::tls_from_der(&[identity.cert_der], &identity.key_pkcs8_der).unwrap();
        (Some(acceptor), Some(identity.root_der))
    } else {
        (None, None)
    };
    let running = spawn_on(listener, Arc::new(gateway), acceptor).unwrap();
    Harness { running, origin, pki, tls_root, log_path, _dir: dir }
}

/// One request on a fresh connection. With `tls_root`, speaks HTTPS to
/// "localhost" trusting only that root.
pub async fn send(addr: SocketAddr, tls_root: Option<&[u8]>, mut request: Request<Full<Bytes>>) -> Response<Bytes> {
    if !request.headers().contains_key(hyper::header::HOST) {
        request.headers_mut().insert(hyper::header::HOST, format!("localhost:{}", addr.port()).parse().unwrap());
    }
    let tcp = TcpStream::connect(addr).await.unwrap();
    match tls_root {
        Some(root) => {
            let mut roots = rustls::RootCertStore::empty();
            roots.add(CertificateDer::from(root.to_vec())).unwrap();
            let provider = Arc::new(rustls::crypto::ring::default_provider());
            let config = rustls::ClientConfig::builder_with_provider(provider)
                .with_safe_default_protocol_versions()
                .unwrap()
                .with_root_certificates(roots)
                .with_no_client_auth();
            let connector = tokio_rustls::TlsConnector::from(Arc::new(config));
            let stream = connector.connect(ServerName::try_from("localhost").unwrap(), tcp).await.unwrap();
            exchange(TokioIo::new(stream), request).await
        }
        None => exchange(TokioIo::new(tcp), request).await,
    }
}

async fn exchange<I>(io: I, request: Request<Full<Bytes>>) -> Response<Bytes>
where
    I: hyper::rt::Read + hyper::rt::Write + Unpin + Send + 'static,
{
    let (mut sender, connection) = hyper::client::conn::http1::handshake(io).await.unwrap();
    tokio::spawn(connection);
    let response = sender.send_request(request).await.unwrap();
    let (parts, body) = response.into_parts();
    Response::from_parts(parts, body.collect().await.unwrap().to_bytes())
}

pub fn get(path: &str) -> hyper::http::request::Builder {
    Request::builder().method("GET").uri(path)
}

pub fn empty() -> Full<Bytes> {
    Full::new(Bytes::new())
}

pub fn json_body(response: &Response<Bytes>) -> serde_json::Value {
    serde_json::from_slice(response.body()).unwrap()
}
