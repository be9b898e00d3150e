use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use cahicha_core::codec::encode_base64url;
use cahicha_core::engine::CreationOptions;
use cahicha_core::soft::{AuthenticatorBehavior, SoftAuthenticator};
use http_body_util::{BodyExt, Full};
use hyper::header::{self, HeaderValue};
use hyper::{Method, Request, StatusCode, Uri};
use hyper_rustls::HttpsConnector;
use hyper_util::client::legacy::connect::HttpConnector;
use hyper_util::client::legacy::Client;
use hyper_util::rt::TokioExecutor;
use rustls::pki_types::CertificateDer;

use crate::stub::{Role, ROLE_HEADER, STUB_MARKER};

pub const REQUEST_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("bad target URL {0:?}")]
    BadTarget(String),
    #[error("trust root: {0}")]
    Trust(String),
    #[error("request failed: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("ceremony failed: {0}")]
    Ceremony(String),
}

/// What came back for one request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reply {
    pub status: StatusCode,
    pub from_origin: bool,
    pub latency: Duration,
}

/// A connection-pooling HTTP(S) client standing in for one browser.
#[derive(Clone)]
pub struct BenchClient {
    client: Client<HttpsConnector<HttpConnector>, Full<Bytes>>,
    base: Uri,
    origin: String,
    role: Role,
    cookie: Option<HeaderValue>,
}

/// Trust settings for HTTPS targets: the roots to accept.
#[derive(Debug, Clone, Default)]
pub struct Trust {
    pub roots: Vec<Vec<u8>>,
}

impl BenchClient {
    pub fn new(target: &str, trust: &Trust, role: Role) -> Result<Self, ClientError> {
        let base: Uri = target.parse().map_err(|_| ClientError::BadTarget(target.into()))?;
        let (Some(scheme), Some(authority)) = (base.scheme_str(), base.authority()) else {
            return Err(ClientError::BadTarget(target.into()));
        };
        let origin = format!("{scheme}://{authority}");

        let mut roots = rustls::RootCertStore::empty();
        for der in &trust.roots {
            roots.add(CertificateDer::from(der.clone())).map_err(|e| ClientError::Trust(e.to_string()))?;
        }
        let provider = Arc::new(rustls::crypto::ring::default_provider());
        let tls = rustls::ClientConfig::builder_with_provider(provider)
            .with_safe_default_protocol_versions()
            .map_err(|e| ClientError::Trust(e.to_string()))?
            .with_root_certificates(roots)
            .with_no_client_auth();
        let connector = hyper_rustls::HttpsConnectorBuilder::new()
            .with_tls_config(tls)
            .https_or_http()
            .enable_http1()
            .build();
        let client = Client::builder(TokioExecutor::new()).pool_idle_timeout(Duration::from_secs(30)).build(connector);
        Ok(BenchClient { client, base, origin, role, cookie: None })
    }

    /// `scheme://host:port` of the target, as a browser would report it.
    pub fn origin(&self) -> &str {
        &self.origin
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn has_cookie(&self) -> bool {
        self.cookie.is_some()
    }

    fn uri(&self, path: &str) -> Uri {
        format!("{}{}", self.origin, path).parse().unwrap_or_else(|_| self.base.clone())
    }

    async fn exchange(&self, request: Request<Full<Bytes>>) -> Result<(hyper::http::response::Parts, Bytes), ClientError> {
        let run = async {
            let response = self.client.request(request).await.map_err(|e| ClientError::Transport(e.to_string()))?;
            let (parts, body) = response.into_parts();
            let body = body.collect().await.map_err(|e| ClientError::Transport(e.to_string()))?.to_bytes();
            Ok((parts, body))
        };
        tokio::time::timeout(REQUEST_TIMEOUT, run).await.map_err(|_| ClientError::Timeout)?
    }

    /// Sends one workload request (with this client's cookie, if any).
    pub async fn request(&self, method: Method, path: &str, body: Bytes, extra: &[(&str, &str)]) -> Result<Reply, ClientError> {
        let mut builder = Request::builder()
            .method(method)
            .uri(self.uri(path))
            .header(ROLE_HEADER, self.role.as_str());
        for (name, value) in extra {
            builder = builder.header(*name, *value);
        }
        if let Some(cookie) = &self.cookie {
            builder = builder.header(header::COOKIE, cookie.clone());
        }
        let request = builder.body(Full::new(body)).map_err(|e| ClientError::Transport(e.to_string()))?;
        let started = Instant::now();
        let (parts, _) = self.exchange(request).await?;
        Ok(Reply { status: parts.status, from_origin: parts.headers.contains_key(STUB_MARKER), latency: started.elapsed() })
    }

    pub async fn get(&self, path: &str) -> Result<Reply, ClientError> {
        self.request(Method::GET, path, Bytes::new(), &[]).await
    }

    /// Runs the registration ceremony with a software authenticator and
    /// keeps the resulting cookie. Returns the full Set-Cookie value.
    pub async fn verify(&mut self, authenticator: &mut SoftAuthenticator, behavior: &AuthenticatorBehavior) -> Result<String, ClientError> {
        let fail = |m: String| ClientError::Ceremony(m);
        let request = Request::get(self.uri("/__cahicha/challenge")).body(Full::new(Bytes::new())).unwrap();
        let (parts, body) = self.exchange(request).await?;
        if parts.status != StatusCode::OK {
            return Err(fail(format!("challenge returned {}", parts.status)));
        }
        let json: serde_json::Value = serde_json::from_slice(&body).map_err(|e| fail(e.to_string()))?;
        let options: CreationOptions = serde_json::from_value(json["publicKey"].clone()).map_err(|e| fail(e.to_string()))?;
        let record_id = json["record_id"].as_str().ok_or_else(|| fail("no record_id".into()))?;
        let response = authenticator
            .create_credential(&options, record_id, &self.origin, behavior)
            .map_err(|e| fail(e.to_string()))?;
        let submission = serde_json::json!({
            "record_id": response.record_id,
            "attestation_object_b64": encode_base64url(&response.attestation_object),
            "client_data_b64": encode_base64url(&response.client_data_json),
            "redirect_to": "/",
        });
        let request = Request::post(self.uri("/__cahicha/verify"))
            .header(header::CONTENT_TYPE, "application/json")
            .body(Full::new(Bytes::from(submission.to_string())))
            .unwrap();
        let (parts, body) = self.exchange(request).await?;
        if parts.status != StatusCode::SEE_OTHER {
            return Err(fail(format!("verify returned {}: {}", parts.status, String::from_utf8_lossy(&body))));
        }
        let set_cookie = parts
            .headers
            .get(header::SET_COOKIE)
            .and_then(|v| v.to_str().ok())
            .ok_or_else(|| fail("no Set-Cookie".into()))?;
        let pair = set_cookie.split(';').next().unwrap_or_default();
        self.cookie = Some(HeaderValue::from_str(pair).map_err(|e| fail(e.to_string()))?);
        Ok(set_cookie.to_owned())
    }
}
