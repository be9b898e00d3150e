//! Instrumented origin server. It counts every request that reaches it,
//! keyed by the `x-loadbench-role` header the bench clients send, so gate
//! soundness is measured where traffic lands rather than inferred.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use bytes::Bytes;
use http_body_util::{BodyExt, Full};
use hyper::service::service_fn;
use hyper::{Request, Response};
use hyper_util::rt::TokioIo;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

pub const ROLE_HEADER: &str = "x-loadbench-role";
/// Set on every stub response so clients can tell origin answers apart.
pub const STUB_MARKER: &str = "x-origin-stub";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Verified,
    Flood,
    Canary,
    Other,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Verified => "verified",
            Role::Flood => "flood",
            Role::Canary => "canary",
            Role::Other => "other",
        }
    }

    fn from_header(value: Option<&[u8]>) -> Role {
        match value {
            Some(b"verified") => Role::Verified,
            Some(b"flood") => Role::Flood,
            Some(b"canary") => Role::Canary,
            _ => Role::Other,
        }
    }
}

#[derive(Default)]
pub struct ArrivalCounters {
    verified: AtomicU64,
    flood: AtomicU64,
    canary: AtomicU64,
    other: AtomicU64,
}

impl ArrivalCounters {
    fn slot(&self, role: Role) -> &AtomicU64 {
        match role {
            Role::Verified => &self.verified,
            Role::Flood => &self.flood,
            Role::Canary => &self.canary,
            Role::Other => &self.other,
        }
    }

    pub fn get(&self, role: Role) -> u64 {
        self.slot(role).load(Ordering::SeqCst)
    }

    pub fn total(&self) -> u64 {
        [Role::Verified, Role::Flood, Role::Canary, Role::Other].iter().map(|r| self.get(*r)).sum()
    }
}

const PAGE: &str = "<!doctype html><html><head><title>origin</title></head><body><h1>Origin page</h1><p>Served by the loadbench origin stub.</p></body></html>";

pub struct OriginStub {
    pub addr: SocketAddr,
    pub counters: Arc<ArrivalCounters>,
    task: JoinHandle<()>,
}

impl OriginStub {
    pub async fn start(addr: SocketAddr) -> std::io::Result<OriginStub> {
        let listener = TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let counters: Arc<ArrivalCounters> = Arc::default();
        let shared = counters.clone();
        let task = tokio::spawn(async move {
            loop {
                let Ok((stream, _)) = listener.accept().await else { continue };
                let _ = stream.set_nodelay(true);
                let counters = shared.clone();
                tokio::spawn(async move {
                    let service = service_fn(move |request: Request<hyper::body::Incoming>| {
                        let counters = counters.clone();
                        async move {
                            let role = Role::from_header(request.headers().get(ROLE_HEADER).map(|v| v.as_bytes()));
                            counters.slot(role).fetch_add(1, Ordering::SeqCst);
                            let body = request.into_body().collect().await.map(|b| b.to_bytes()).unwrap_or_default();
                            let reply = if body.is_empty() { Bytes::from_static(PAGE.as_bytes()) } else { body };
                            let mut response = Response::new(Full::new(reply));
                            response.headers_mut().insert(STUB_MARKER, hyper::header::HeaderValue::from_static("1"));
                            response
                                .headers_mut()
                                .insert(hyper::header::CONTENT_TYPE, hyper::header::HeaderValue::from_static("text/html"));
                            Ok::<_, Infallible>(response)
                        }
                    });
                    let _ = hyper::server::conn::http1::Builder::new()
                        .keep_alive(true)
                        .serve_connection(TokioIo::new(stream), service)
                        .await;
                });
            }
        });
        Ok(OriginStub { addr, counters, task })
    }

    pub fn arrivals(&self, role: Role) -> u64 {
        self.counters.get(role)
    }
}

impl Drop for OriginStub {
    fn drop(&mut self) {
        self.task.abort();
    }
}
