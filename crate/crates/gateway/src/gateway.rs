use std::net::SocketAddr;
use std::path::Path;
use std::time::{Duration, Instant};

use bytes::Bytes;
use cahicha_core::codec::decode_base64url;
use cahicha_core::engine::{AttestationResponse, EngineError, VerificationEngine, VerificationPolicy};
use cahicha_core::mds::{load_mds_blob, MdsError, TrustStore};
use cahicha_core::token::{
    build_cookie, find_cookie, mint_token, strip_cookie, validate_token, CookieSettings, TokenError, TokenKey,
};
use cahicha_core::UnixMillis;
use http_body_util::combinators::UnsyncBoxBody;
use http_body_util::{BodyExt, Full, Limited};
use hyper::header::{self, HeaderMap, HeaderName, HeaderValue};
use hyper::{Method, Request, Response, StatusCode, Uri};
use hyper_util::client::legacy::connect::HttpConnector;
use hyper_util::client::legacy::Client;
use hyper_util::rt::TokioExecutor;
use serde::Deserialize;

use crate::access_log::AccessLog;
use crate::config::{ConfigError, GatewayConfig};
use crate::page;

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;
pub type Body = UnsyncBoxBody<Bytes, BoxError>;

/// Paths below this prefix belong to the gateway and never reach the origin.
pub const RESERVED_PREFIX: &str = "/__cahicha/";
const VERIFY_BODY_LIMIT: usize = 256 * 1024;

const HOP_BY_HOP: &[&str] = &[
    "connection",
    "keep-alive",
    "proxy-authenticate",
    "proxy-authorization",
    "proxy-connection",
    "te",
    "trailer",
    "transfer-encoding",
    "upgrade",
];

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("loading MDS metadata: {0}")]
    Mds(#[from] MdsError),
    #[error("token key: {0}")]
    Token(#[from] TokenError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{0}")]
    Io(String),
    #[error("TLS setup: {0}")]
    Tls(String),
}

fn read_file(path: &Path) -> Result<Vec<u8>, StartupError> {
    std::fs::read(path).map_err(|e| StartupError::Io(format!("reading {}: {e}", path.display())))
}

/// Loads the trust store named by the config, if any.
pub fn load_trust_store(config: &GatewayConfig, now: UnixMillis) -> Result<Option<TrustStore>, StartupError> {
    match (&config.mds_blob_path, &config.mds_root_path) {
        (Some(blob), Some(root)) => {
            let store = load_mds_blob(&read_file(blob)?, &read_file(root)?, now, config.mds_expiry)?;
            log::info!("loaded {} MDS entries (serial {})", store.len(), store.serial);
            Ok(Some(store))
        }
        _ => Ok(None),
    }
}

pub fn full(bytes: impl Into<Bytes>) -> Body {
    Full::new(bytes.into()).map_err(|never| match never {}).boxed_unsync()
}

fn json_response(status: StatusCode, value: serde_json::Value) -> Response<Body> {
    let mut response = Response::new(full(value.to_string()));
    *response.status_mut() = status;
    let headers = response.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    headers.insert(header::CACHE_CONTROL, HeaderValue::from_static("no-store"));
    response
}

fn error_response(status: StatusCode, error: &str) -> Response<Body> {
    json_response(status, serde_json::json!({ "error": error }))
}

fn accepts_html(headers: &HeaderMap) -> bool {
    headers
        .get_all(header::ACCEPT)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .any(|v| v.contains("text/html"))
}

fn strip_hop_by_hop(headers: &mut HeaderMap) {
    let listed: Vec<HeaderName> = headers
        .get_all(header::CONNECTION)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .filter_map(|name| HeaderName::from_bytes(name.trim().as_bytes()).ok())
        .collect();
    for name in listed {
        headers.remove(name);
    }
    for name in HOP_BY_HOP {
        headers.remove(*name);
    }
}

#[derive(Deserialize)]
struct VerifyBody {
    record_id: String,
    attestation_object_b64: String,
    client_data_b64: String,
    #[serde(default)]
    redirect_to: Option<String>,
}

pub struct Gateway {
    config: GatewayConfig,
    engine: VerificationEngine,
    token_key: TokenKey,
    cookie: CookieSettings,
    upstream: String,
    client: Client<HttpConnector, Body>,
    log: AccessLog,
}

impl Gateway {
    /// Validates `config` and loads everything it points at: MDS files,
    /// the token key (generated on first start) and the access log.
    pub fn from_config(config: GatewayConfig) -> Result<Self, StartupError> {
        config.validate()?;
        let trust = load_trust_store(&config, UnixMillis::now())?;
        let token_key = TokenKey::load_or_generate(&config.token_key_path)?;
        let log = match &config.access_log_path {
            Some(path) => AccessLog::file(path)
                .map_err(|e| StartupError::Io(format!("opening access log {}: {e}", path.display())))?,
            None => AccessLog::stdout(),
        };
        Self::new(config, trust, token_key, log)
    }

    /// Builds a gateway from already loaded material. Strict mode still
    /// needs `trust`.
    pub fn new(
        config: GatewayConfig,
        trust: Option<TrustStore>,
        token_key: TokenKey,
        log: AccessLog,
    ) -> Result<Self, StartupError> {
        config.validate_settings()?;
        let upstream = config.upstream_uri()?.to_string().trim_end_matches('/').to_owned();
        let origins = config.effective_origins();
        let origins: Vec<&str> = origins.iter().map(String::as_str).collect();
        let mut policy = VerificationPolicy::new(config.mode, &config.rp_id, &origins);
        policy.challenge_ttl = config.challenge_ttl();
        if let Some(require_uv) = config.require_uv {
            policy.require_uv = require_uv;
        }
        let store = cahicha_core::engine::ChallengeStore::with_capacity(config.max_pending_challenges);
        let engine = VerificationEngine::with_store(policy, trust, store)?;

        let mut connector = HttpConnector::new();
        connector.set_nodelay(true);
        connector.set_connect_timeout(Some(config.upstream_timeout()));
        let client = Client::builder(TokioExecutor::new())
            .pool_idle_timeout(Duration::from_secs(90))
            .build(connector);

        let cookie = CookieSettings { name: config.cookie_name.clone(), max_age: config.token_max_age() };
        Ok(Gateway { config, engine, token_key, cookie, upstream, client, log })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn engine(&self) -> &VerificationEngine {
        &self.engine
    }

    pub fn token_key(&self) -> &TokenKey {
        &self.token_key
    }

    pub async fn handle<B>(&self, request: Request<B>, peer: SocketAddr) -> Response<Body>
    where
        B: hyper::body::Body<Data = Bytes> + Send + 'static,
        B::Error: Into<BoxError>,
    {
        let started = Instant::now();
        let logged_path = request.uri().path_and_query().map_or("/", |p| p.as_str()).to_owned();
        let path = request.uri().path();

        let (response, verdict, latency) = if path == "/__cahicha" || path.starts_with(RESERVED_PREFIX) {
            let (response, verdict) = self.reserved(request).await;
            (response, verdict, started.elapsed())
        } else if self.has_valid_cookie(request.headers()) {
            self.forward(request, peer, started).await
        } else {
            (self.challenge(&request, &logged_path), "challenged".to_owned(), started.elapsed())
        };
        self.log.record(&logged_path, &verdict, latency, response.status().as_u16());
        response
    }

    fn has_valid_cookie(&self, headers: &HeaderMap) -> bool {
        let now = UnixMillis::now();
        headers
            .get_all(header::COOKIE)
            .iter()
            .filter_map(|v| v.to_str().ok())
            .filter_map(|v| find_cookie(v, &self.cookie.name))
            .any(|token| validate_token(&self.token_key, token, now, self.cookie.max_age).is_valid())
    }

    fn challenge<B>(&self, request: &Request<B>, original: &str) -> Response<Body> {
        if !accepts_html(request.headers()) {
            let mut response = error_response(StatusCode::UNAUTHORIZED, "verification_required");
            response.headers_mut().insert(header::VARY, HeaderValue::from_static("Accept, Cookie"));
            return response;
        }
        let target = if request.method() == Method::GET { original } else { "/" };
        self.page_response(target)
    }

    fn page_response(&self, redirect_to: &str) -> Response<Body> {
        let mut response = Response::new(full(page::render_page(redirect_to)));
        let headers = response.headers_mut();
        headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("text/html; charset=utf-8"));
        headers.insert(header::CACHE_CONTROL, HeaderValue::from_static("no-store"));
        headers.insert(header::VARY, HeaderValue::from_static("Accept, Cookie"));
        response
    }

    async fn reserved<B>(&self, request: Request<B>) -> (Response<Body>, String)
    where
        B: hyper::body::Body<Data = Bytes> + Send + 'static,
        B::Error: Into<BoxError>,
    {
        let served = |r| (r, "served".to_owned());
        let path = request.uri().path().to_owned();
        let name = path.strip_prefix(RESERVED_PREFIX).unwrap_or("");
        let method = request.method().clone();
        match (name, method) {
            ("challenge", Method::GET) => self.issue_challenge(),
            ("verify", Method::POST) => self.verify(request).await,
            ("" | "index.html", Method::GET | Method::HEAD) => served(self.page_response("/")),
            (name, Method::GET | Method::HEAD) if page::asset(name).is_some() => {
                let asset = page::asset(name).unwrap();
                let mut response = Response::new(full(asset.body));
                response.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static(asset.content_type));
                response.headers_mut().insert(header::CACHE_CONTROL, HeaderValue::from_static("public, max-age=300"));
                served(response)
            }
            ("challenge" | "verify", _) => served(error_response(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed")),
            _ => served(error_response(StatusCode::NOT_FOUND, "not_found")),
        }
    }

    fn issue_challenge(&self) -> (Response<Body>, String) {
        match self.engine.issue_challenge(UnixMillis::now()) {
            Ok((record, options)) => (
                json_response(
                    StatusCode::OK,
                    serde_json::json!({ "record_id": record.record_id, "publicKey": options }),
                ),
                "challenged".to_owned(),
            ),
            Err(e) => {
                log::error!("challenge issue failed: {e}");
                (error_response(StatusCode::SERVICE_UNAVAILABLE, "EntropyUnavailable"), "error_entropy".to_owned())
            }
        }
    }

    async fn verify<B>(&self, request: Request<B>) -> (Response<Body>, String)
    where
        B: hyper::body::Body<Data = Bytes> + Send + 'static,
        B::Error: Into<BoxError>,
    {
        let malformed = || (error_response(StatusCode::BAD_REQUEST, "MalformedBody"), "rejected_MalformedBody".to_owned());
        let Ok(collected) = Limited::new(request.into_body(), VERIFY_BODY_LIMIT).collect().await else {
            return malformed();
        };
        let Ok(body) = serde_json::from_slice::<VerifyBody>(&collected.to_bytes()) else {
            return malformed();
        };
        let (Ok(attestation_object), Ok(client_data_json)) =
            (decode_base64url(&body.attestation_object_b64), decode_base64url(&body.client_data_b64))
        else {
            return malformed();
        };
        let response = AttestationResponse { record_id: body.record_id, attestation_object, client_data_json };
        let now = UnixMillis::now();
        let outcome = self.engine.verify_attestation(&response, now);
        if let Some(reason) = outcome.rejection_reason {
            return (error_response(StatusCode::FORBIDDEN, reason.as_str()), format!("rejected_{reason}"));
        }
        let token = match mint_token(&self.token_key, now) {
            Ok(token) => token,
            Err(e) => {
                log::error!("token mint failed: {e}");
                return (error_response(StatusCode::SERVICE_UNAVAILABLE, "EntropyUnavailable"), "error_entropy".to_owned());
            }
        };
        let target = page::safe_redirect(body.redirect_to.as_deref().unwrap_or("/"));
        let mut reply = Response::new(full(Bytes::new()));
        *reply.status_mut() = StatusCode::SEE_OTHER;
        let headers = reply.headers_mut();
        headers.insert(header::LOCATION, HeaderValue::from_str(target).unwrap_or(HeaderValue::from_static("/")));
        headers.insert(
            header::SET_COOKIE,
            HeaderValue::from_str(&build_cookie(&token, &self.cookie)).expect("cookie is ASCII"),
        );
        headers.insert(header::CACHE_CONTROL, HeaderValue::from_static("no-store"));
        (reply, "verified".to_owned())
    }

    async fn forward<B>(&self, request: Request<B>, peer: SocketAddr, started: Instant) -> (Response<Body>, String, Duration)
    where
        B: hyper::body::Body<Data = Bytes> + Send + 'static,
        B::Error: Into<BoxError>,
    {
        let (mut parts, body) = request.into_parts();
        let path_and_query = parts.uri.path_and_query().map_or("/", |p| p.as_str());
        parts.uri = match format!("{}{}", self.upstream, path_and_query).parse::<Uri>() {
            Ok(uri) => uri,
            Err(_) => {
                return (error_response(StatusCode::BAD_REQUEST, "bad_request_target"), "error_bad_target".into(), started.elapsed())
            }
        };
        parts.version = hyper::Version::HTTP_11;
        strip_hop_by_hop(&mut parts.headers);

        let cookies: Vec<String> = parts
            .headers
            .get_all(header::COOKIE)
            .iter()
            .filter_map(|v| v.to_str().ok())
            .filter_map(|v| strip_cookie(v, &self.cookie.name))
            .collect();
        parts.headers.remove(header::COOKIE);
        if !cookies.is_empty() {
            if let Ok(value) = HeaderValue::from_str(&cookies.join("; ")) {
                parts.headers.insert(header::COOKIE, value);
            }
        }

        let forwarded_for = match parts.headers.get("x-forwarded-for").and_then(|v| v.to_str().ok()) {
            Some(prior) => format!("{prior}, {}", peer.ip()),
            None => peer.ip().to_string(),
        };
        if let Ok(value) = HeaderValue::from_str(&forwarded_for) {
            parts.headers.insert("x-forwarded-for", value);
        }
        let proto = if self.config.tls_enabled() { "https" } else { "http" };
        parts.headers.insert("x-forwarded-proto", HeaderValue::from_static(proto));
        if !parts.headers.contains_key(header::HOST) {
            if let Some(authority) = parts.uri.authority() {
                if let Ok(value) = HeaderValue::from_str(authority.as_str()) {
                    parts.headers.insert(header::HOST, value);
                }
            }
        }

        let upstream_request = Request::from_parts(parts, body.map_err(Into::into).boxed_unsync());
        let dispatched = started.elapsed();
        match tokio::time::timeout(self.config.upstream_timeout(), self.client.request(upstream_request)).await {
            Ok(Ok(response)) => {
                let (mut parts, body) = response.into_parts();
                strip_hop_by_hop(&mut parts.headers);
                let body = body.map_err(|e| Box::new(e) as BoxError).boxed_unsync();
                (Response::from_parts(parts, body), "forwarded".to_owned(), dispatched)
            }
            Ok(Err(e)) => {
                log::warn!("upstream request failed: {e}");
                (error_response(StatusCode::BAD_GATEWAY, "upstream_unreachable"), "error_upstream_unreachable".into(), dispatched)
            }
            Err(_) => {
                (error_response(StatusCode::GATEWAY_TIMEOUT, "upstream_timeout"), "error_upstream_timeout".into(), dispatched)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hop_by_hop_and_connection_listed_headers_go() {
        let mut h = HeaderMap::new();
        h.insert(header::CONNECTION, HeaderValue::from_static("keep-alive, x-private"));
        h.insert("x-private", HeaderValue::from_static("1"));
        h.insert("keep-alive", HeaderValue::from_static("timeout=5"));
        h.insert(header::TRANSFER_ENCODING, HeaderValue::from_static("chunked"));
        h.insert("x-kept", HeaderValue::from_static("yes"));
        strip_hop_by_hop(&mut h);
        assert_eq!(h.len(), 1);
        assert!(h.contains_key("x-kept"));
    }

    #[test]
    fn html_detection() {
        let mut h = HeaderMap::new();
        assert!(!accepts_html(&h));
        h.insert(header::ACCEPT, HeaderValue::from_static("text/html,application/xhtml+xml;q=0.9"));
        assert!(accepts_html(&h));
        h.insert(header::ACCEPT, HeaderValue::from_static("application/json"));
        assert!(!accepts_html(&h));
    }
}
