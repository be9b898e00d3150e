//! Encrypted presence tokens carried in the gateway cookie.
//!
//! The plaintext is `CAHICHA-OK-1|<minted_at millis>` inside a Fernet
//! container. Expiry is decided from the millisecond payload timestamp;
//! the container's own seconds field is informational only.

mod cookie;
pub mod fernet;

pub use cookie::{build_cookie, find_cookie, strip_cookie, CookieSettings, DEFAULT_COOKIE_NAME};

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::time::Duration;

use base64::engine::general_purpose::URL_SAFE;
use base64::Engine as _;
use rand::rngs::OsRng;
use rand::RngCore;

use crate::UnixMillis;

pub const MAGIC: &str = "CAHICHA-OK-1";
const SEPARATOR: u8 = b'|';
pub const DEFAULT_MAX_AGE: Duration = Duration::from_secs(24 * 60 * 60);
/// How far in the future a minted_at may lie before the token is refused.
pub const CLOCK_SKEW_ALLOWANCE: Duration = Duration::from_secs(60);

#[derive(Debug, thiserror::Error)]
pub enum TokenError {
    #[error("secure randomness unavailable")]
    EntropyUnavailable,
    #[error("token key must be 32 bytes, got {0}")]
    BadKeyLength(usize),
    #[error("token key file {path}: {source}")]
    KeyFile { path: String, source: std::io::Error },
}

/// 16-byte HMAC signing key followed by a 16-byte AES-128 key.
#[derive(Clone, PartialEq, Eq)]
pub struct TokenKey([u8; 32]);

impl fmt::Debug for TokenKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("TokenKey(..)")
    }
}

impl TokenKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TokenError> {
        bytes.try_into().map(TokenKey).map_err(|_| TokenError::BadKeyLength(bytes.len()))
    }

    /// Parses the 44-character key representation other Fernet
    /// implementations print.
    pub fn from_fernet_base64(text: &str) -> Result<Self, TokenError> {
        let bytes = URL_SAFE.decode(text.trim()).map_err(|_| TokenError::BadKeyLength(0))?;
        Self::from_bytes(&bytes)
    }

    pub fn generate() -> Result<Self, TokenError> {
        let mut bytes = [0u8; 32];
        OsRng.try_fill_bytes(&mut bytes).map_err(|_| TokenError::EntropyUnavailable)?;
        Ok(TokenKey(bytes))
    }

    /// Reads the 32-byte key file, creating it with owner-only permissions
    /// on first start.
    pub fn load_or_generate(path: &Path) -> Result<Self, TokenError> {
        let io_err = |source| TokenError::KeyFile { path: path.display().to_string(), source };
        match std::fs::read(path) {
            Ok(bytes) => Self::from_bytes(&bytes),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                let key = Self::generate()?;
                let mut options = std::fs::OpenOptions::new();
                options.write(true).create_new(true);
                #[cfg(unix)]
                {
                    use std::os::unix::fs::OpenOptionsExt;
                    options.mode(0o600);
                }
                let mut file = options.open(path).map_err(io_err)?;
                file.write_all(&key.0).map_err(io_err)?;
                Ok(key)
            }
            Err(e) => Err(io_err(e)),
        }
    }

    pub fn signing_key(&self) -> &[u8] {
        &self.0[..16]
    }

    pub fn encryption_key(&self) -> &[u8; 16] {
        self.0[16..].try_into().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenPayload {
    pub magic: String,
    pub minted_at: UnixMillis,
}

impl TokenPayload {
    pub fn new(minted_at: UnixMillis) -> Self {
        TokenPayload { magic: MAGIC.to_owned(), minted_at }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        format!("{}|{}", self.magic, self.minted_at.0).into_bytes()
    }

    /// Exact inverse of [`TokenPayload::to_bytes`]; `None` when there is no
    /// separator or the timestamp is not a plain decimal.
    pub fn parse(bytes: &[u8]) -> Option<Self> {
        let split = bytes.iter().rposition(|&b| b == SEPARATOR)?;
        let (magic, digits) = (&bytes[..split], &bytes[split + 1..]);
        if digits.is_empty() || !digits.iter().all(u8::is_ascii_digit) {
            return None;
        }
        let minted_at = std::str::from_utf8(digits).ok()?.parse().ok()?;
        Some(TokenPayload { magic: String::from_utf8(magic.to_vec()).ok()?, minted_at: UnixMillis(minted_at) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvalidReason {
    MalformedContainer,
    IntegrityFailure,
    BadMagic,
    Expired,
    ClockSkew,
}

impl InvalidReason {
    pub fn as_str(self) -> &'static str {
        match self {
            InvalidReason::MalformedContainer => "MalformedContainer",
            InvalidReason::IntegrityFailure => "IntegrityFailure",
            InvalidReason::BadMagic => "BadMagic",
            InvalidReason::Expired => "Expired",
            InvalidReason::ClockSkew => "ClockSkew",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenValidity {
    Valid { age: Duration },
    Invalid(InvalidReason),
}

impl TokenValidity {
    pub fn is_valid(self) -> bool {
        matches!(self, TokenValidity::Valid { .. })
    }
}

pub fn mint_token(key: &TokenKey, now: UnixMillis) -> Result<String, TokenError> {
    let mut iv = [0u8; 16];
    OsRng.try_fill_bytes(&mut iv).map_err(|_| TokenError::EntropyUnavailable)?;
    Ok(mint_token_with_iv(key, now, iv))
}

pub fn mint_token_with_iv(key: &TokenKey, now: UnixMillis, iv: [u8; 16]) -> String {
    fernet::seal(key, &TokenPayload::new(now).to_bytes(), now.as_secs(), iv)
}

pub fn validate_token(key: &TokenKey, token: &str, now: UnixMillis, max_age: Duration) -> TokenValidity {
    match fernet::decode(token) {
        Some(bytes) => validate_token_bytes(key, &bytes, now, max_age),
        None => TokenValidity::Invalid(InvalidReason::MalformedContainer),
    }
}

/// Validation over the already base64-decoded container.
pub fn validate_token_bytes(key: &TokenKey, bytes: &[u8], now: UnixMillis, max_age: Duration) -> TokenValidity {
    use fernet::ContainerError;
    let plaintext = match fernet::open_bytes(key, bytes) {
        Ok((_, plaintext)) => plaintext,
        Err(ContainerError::Integrity) => return TokenValidity::Invalid(InvalidReason::IntegrityFailure),
        Err(ContainerError::Malformed | ContainerError::Padding) => {
            return TokenValidity::Invalid(InvalidReason::MalformedContainer)
        }
    };
    let Some(payload) = TokenPayload::parse(&plaintext) else {
        return TokenValidity::Invalid(InvalidReason::MalformedContainer);
    };
    if payload.magic != MAGIC {
        return TokenValidity::Invalid(InvalidReason::BadMagic);
    }
    if payload.minted_at > now.saturating_add(CLOCK_SKEW_ALLOWANCE) {
        return TokenValidity::Invalid(InvalidReason::ClockSkew);
    }
    let age = now.since(payload.minted_at);
    if age > max_age {
        return TokenValidity::Invalid(InvalidReason::Expired);
    }
    TokenValidity::Valid { age }
}
