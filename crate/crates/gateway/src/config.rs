use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::time::Duration;

use cahicha_core::engine::Mode;
use cahicha_core::mds::ExpiryPolicy;
use cahicha_core::token::DEFAULT_COOKIE_NAME;
use hyper::Uri;
use serde::Deserialize;

pub const ENV_PREFIX: &str = "CAHICHA_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("environment variable {name}: {message}")]
    Env { name: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub listen_address: String,
    /// Origin server, `host:port` or `http://host:port`.
    pub upstream_origin: String,
    pub tls_cert_path: Option<PathBuf>,
    pub tls_key_path: Option<PathBuf>,
    /// Serve plain HTTP. Only permitted on a loopback listen address.
    pub unsafe_no_tls: bool,
    pub mode: Mode,
    pub rp_id: String,
    /// Empty means "derive from rp_id and the listen port".
    pub expected_origins: Vec<String>,
    pub require_uv: Option<bool>,
    pub cookie_name: String,
    pub token_key_path: PathBuf,
    pub token_max_age_hours: u64,
    pub challenge_ttl_seconds: u64,
    pub max_pending_challenges: usize,
    pub mds_blob_path: Option<PathBuf>,
    pub mds_root_path: Option<PathBuf>,
    pub mds_expiry: ExpiryPolicy,
    pub upstream_timeout_seconds: u64,
    /// JSON-lines access log. Standard output when unset.
    pub access_log_path: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            listen_address: "127.0.0.1:8443".into(),
            upstream_origin: "http://127.0.0.1:8080".into(),
            tls_cert_path: None,
            tls_key_path: None,
            unsafe_no_tls: false,
            mode: Mode::General,
            rp_id: "localhost".into(),
            expected_origins: Vec::new(),
            require_uv: None,
            cookie_name: DEFAULT_COOKIE_NAME.into(),
            token_key_path: "cahicha-token.key".into(),
            token_max_age_hours: 24,
            challenge_ttl_seconds: 120,
            max_pending_challenges: cahicha_core::engine::DEFAULT_STORE_CAPACITY,
            mds_blob_path: None,
            mds_root_path: None,
            mds_expiry: ExpiryPolicy::Warn,
            upstream_timeout_seconds: 30,
            access_log_path: None,
        }
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Str,
    Int,
    Bool,
    List,
}

const ENV_KEYS: &[(&str, Kind)] = &[
    ("listen_address", Kind::Str),
    ("upstream_origin", Kind::Str),
    ("tls_cert_path", Kind::Str),
    ("tls_key_path", Kind::Str),
    ("unsafe_no_tls", Kind::Bool),
    ("mode", Kind::Str),
    ("rp_id", Kind::Str),
    ("expected_origins", Kind::List),
    ("require_uv", Kind::Bool),
    ("cookie_name", Kind::Str),
    ("token_key_path", Kind::Str),
    ("token_max_age_hours", Kind::Int),
    ("challenge_ttl_seconds", Kind::Int),
    ("max_pending_challenges", Kind::Int),
    ("mds_blob_path", Kind::Str),
    ("mds_root_path", Kind::Str),
    ("mds_expiry", Kind::Str),
    ("upstream_timeout_seconds", Kind::Int),
    ("access_log_path", Kind::Str),
];

/// Overlays `CAHICHA_*` variables onto a parsed config table. Unknown
/// `CAHICHA_` names are errors so typos don't pass silently.
pub fn apply_env<I>(table: &mut toml::Table, vars: I) -> Result<(), ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    for (name, raw) in vars {
        let Some(suffix) = name.strip_prefix(ENV_PREFIX) else { continue };
        let key = suffix.to_ascii_lowercase();
        let Some(&(_, kind)) = ENV_KEYS.iter().find(|(k, _)| *k == key) else {
            return Err(ConfigError::Env { name, message: "unknown setting".into() });
        };
        let bad = |message: &str| ConfigError::Env { name: name.clone(), message: message.into() };
        let value = match kind {
            Kind::Str => toml::Value::String(raw),
            Kind::Int => toml::Value::Integer(raw.trim().parse().map_err(|_| bad("expected an integer"))?),
            Kind::Bool => toml::Value::Boolean(match raw.trim().to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" | "on" => true,
                "0" | "false" | "no" | "off" => false,
                _ => return Err(bad("expected a boolean")),
            }),
            Kind::List => toml::Value::Array(
                raw.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| toml::Value::String(s.to_owned()))
                    .collect(),
            ),
        };
        table.insert(key, value);
    }
    Ok(())
}

impl GatewayConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_table(toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?)
    }

    pub fn from_table(table: toml::Table) -> Result<Self, ConfigError> {
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    /// File (if any), then environment overrides.
    pub fn load<I>(path: Option<&Path>, env: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|source| ConfigError::Read { path: path.to_owned(), source })?;
                toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?
            }
            None => toml::Table::new(),
        };
        apply_env(&mut table, env)?;
        Self::from_table(table)
    }

    pub fn tls_enabled(&self) -> bool {
        !self.unsafe_no_tls
    }

    pub fn listen_socket(&self) -> Result<SocketAddr, ConfigError> {
        self.listen_address
            .to_socket_addrs()
            .ok()
            .and_then(|mut it| it.next())
            .ok_or_else(|| ConfigError::Invalid(format!("listen_address {:?} does not resolve", self.listen_address)))
    }

    /// `http://host:port` form of the upstream, without path.
    pub fn upstream_uri(&self) -> Result<Uri, ConfigError> {
        let text = if self.upstream_origin.contains("://") {
            self.upstream_origin.clone()
        } else {
            format!("http://{}", self.upstream_origin)
        };
        let uri: Uri = text
            .parse()
            .map_err(|e| ConfigError::Invalid(format!("upstream_origin {:?}: {e}", self.upstream_origin)))?;
        if uri.scheme_str() != Some("http") {
            return Err(ConfigError::Invalid("upstream_origin must use http".into()));
        }
        if uri.authority().is_none() {
            return Err(ConfigError::Invalid("upstream_origin needs a host".into()));
        }
        if uri.path() != "/" && !uri.path().is_empty() {
            return Err(ConfigError::Invalid("upstream_origin must not carry a path".into()));
        }
        Ok(uri)
    }

    pub fn effective_origins(&self) -> Vec<String> {
        if !self.expected_origins.is_empty() {
            return self.expected_origins.clone();
        }
        let scheme = if self.tls_enabled() { "https" } else { "http" };
        let default_port = if self.tls_enabled() { 443 } else { 80 };
        let port = self.listen_socket().map(|a| a.port()).unwrap_or(default_port);
        if port == default_port {
            vec![format!("{scheme}://{}", self.rp_id)]
        } else {
            vec![format!("{scheme}://{}:{port}", self.rp_id)]
        }
    }

    pub fn token_max_age(&self) -> Duration {
        Duration::from_secs(self.token_max_age_hours * 3600)
    }

    pub fn challenge_ttl(&self) -> Duration {
        Duration::from_secs(self.challenge_ttl_seconds)
    }

    pub fn upstream_timeout(&self) -> Duration {
        Duration::from_secs(self.upstream_timeout_seconds)
    }

    /// Startup checks, including that the TLS and MDS files are named.
    /// Everything here is fatal rather than a runtime fallback.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_settings()?;
        if self.mode == Mode::Strict && (self.mds_blob_path.is_none() || self.mds_root_path.is_none()) {
            return Err(ConfigError::Invalid("strict mode requires mds_blob_path and mds_root_path".into()));
        }
        if self.tls_enabled() && (self.tls_cert_path.is_none() || self.tls_key_path.is_none()) {
            return Err(ConfigError::Invalid(
                "tls_cert_path and tls_key_path are required unless unsafe_no_tls is set".into(),
            ));
        }
        Ok(())
    }

    /// The checks that don't depend on where TLS and MDS material comes
    /// from, for callers that supply it directly.
    pub fn validate_settings(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let listen = self.listen_socket()?;
        let upstream = self.upstream_uri()?;
        let authority = upstream.authority().unwrap();
        let upstream_port = authority.port_u16().unwrap_or(80);
        let same_host = match authority.host() {
            "localhost" => listen.ip().is_loopback() || listen.ip().is_unspecified(),
            host => host
                .trim_matches(|c| c == '[' || c == ']')
                .parse::<std::net::IpAddr>()
                .map(|ip| ip == listen.ip() || (ip.is_loopback() && listen.ip().is_unspecified()))
                .unwrap_or(false),
        };
        if same_host && upstream_port == listen.port() && listen.port() != 0 {
            return invalid("upstream_origin must not equal listen_address".into());
        }
        if self.unsafe_no_tls && !listen.ip().is_loopback() {
            return invalid("unsafe_no_tls is only allowed on a loopback listen address".into());
        }
        if self.rp_id.is_empty() {
            return invalid("rp_id must not be empty".into());
        }
        if self.cookie_name.is_empty() || self.cookie_name.contains(|c: char| c == ';' || c == '=' || c.is_whitespace()) {
            return invalid(format!("cookie_name {:?} is not a valid cookie name", self.cookie_name));
        }
        if self.token_max_age_hours == 0 || self.challenge_ttl_seconds == 0 || self.upstream_timeout_seconds == 0 {
            return invalid("token_max_age_hours, challenge_ttl_seconds and upstream_timeout_seconds must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| ((*k).into(), (*v).into())).collect()
    }

    #[test]
    fn defaults() {
        let c = GatewayConfig::load(None, env(&[])).unwrap();
        assert_eq!(c.mode, Mode::General);
        assert_eq!(c.token_max_age(), Duration::from_secs(86_400));
        assert_eq!(c.challenge_ttl(), Duration::from_secs(120));
        assert_eq!(c.cookie_name, "cahicha_token");
        assert_eq!(c.effective_origins(), vec!["https://localhost:8443".to_owned()]);
    }

    #[test]
    fn env_overrides_file() {
        let mut table: toml::Table = toml::from_str("mode = \"general\"\nrp_id = \"example.org\"\n").unwrap();
        apply_env(
            &mut table,
            env(&[
                ("CAHICHA_MODE", "strict"),
                ("CAHICHA_EXPECTED_ORIGINS", "https://a.example, https://b.example"),
                ("CAHICHA_TOKEN_MAX_AGE_HOURS", "2"),
                ("PATH", "/usr/bin"),
            ]),
        )
        .unwrap();
        let c = GatewayConfig::from_table(table).unwrap();
        assert_eq!(c.mode, Mode::Strict);
        assert_eq!(c.rp_id, "example.org");
        assert_eq!(c.expected_origins, vec!["https://a.example", "https://b.example"]);
        assert_eq!(c.token_max_age_hours, 2);
    }

    #[test]
    fn bad_env_is_reported() {
        let mut t = toml::Table::new();
        assert!(matches!(apply_env(&mut t, env(&[("CAHICHA_NOPE", "1")])), Err(ConfigError::Env { .. })));
        assert!(matches!(
            apply_env(&mut t, env(&[("CAHICHA_CHALLENGE_TTL_SECONDS", "soon")])),
            Err(ConfigError::Env { .. })
        ));
        assert!(GatewayConfig::from_toml_str("colour = 1").is_err());
    }

    #[test]
    fn validation() {
        let tls = GatewayConfig {
            tls_cert_path: Some("c.pem".into()),
            tls_key_path: Some("k.pem".into()),
            ..Default::default()
        };
        assert!(tls.validate().is_ok());
        assert!(GatewayConfig::default().validate().is_err(), "TLS material missing");

        let strict = GatewayConfig { mode: Mode::Strict, ..tls.clone() };
        assert!(strict.validate().is_err());
        let strict = GatewayConfig { mds_blob_path: Some("b".into()), mds_root_path: Some("r".into()), ..strict };
        assert!(strict.validate().is_ok());

        let looped = GatewayConfig { upstream_origin: "127.0.0.1:8443".into(), ..tls.clone() };
        assert!(looped.validate().is_err());
        let looped = GatewayConfig { upstream_origin: "http://localhost:8443".into(), ..tls.clone() };
        assert!(looped.validate().is_err());

        let plain = GatewayConfig { unsafe_no_tls: true, ..Default::default() };
        assert!(plain.validate().is_ok());
        let exposed = GatewayConfig { listen_address: "0.0.0.0:8000".into(), ..plain };
        assert!(exposed.validate().is_err());

        let pathy = GatewayConfig { upstream_origin: "http://127.0.0.1:8080/app".into(), ..tls };
        assert!(pathy.validate().is_err());
    }
}
