//! Byte-exact codecs for the WebAuthn registration wire formats.
//!
//! Everything in here is a pure function over borrowed input. Parsed
//! structures keep the exact bytes they were decoded from wherever a
//! signature or digest is later computed over them, so nothing is ever
//! re-serialized before hashing.

mod attestation;
mod auth_data;
pub mod cbor;
mod client_data;
mod cose;

pub use attestation::{decode_attestation_object, AttestationFormat, AttestationObject, AttestationStatement};
pub use auth_data::{
    parse_authenticator_data, AttestedCredentialData, AuthenticatorData, FlagSet, MIN_AUTH_DATA_LEN,
    MIN_AUTH_DATA_WITH_CREDENTIAL_LEN,
};
pub use client_data::{parse_client_data, ClientData, CREATE_CEREMONY};
pub use cose::{decode_cose_key, CoseAlgorithm, CoseKeyType, CosePublicKey};

use base64::engine::general_purpose::{URL_SAFE, URL_SAFE_NO_PAD};
use base64::Engine as _;
use sha2::{Digest, Sha256};

/// A SHA-256 digest.
pub type Digest32 = [u8; 32];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("malformed base64url encoding")]
    MalformedEncoding,
    #[error("input truncated: needed {needed} bytes, have {available}")]
    TruncatedInput { needed: usize, available: usize },
    #[error("malformed attested credential data: {0}")]
    MalformedCredentialData(String),
    #[error("malformed client data: {0}")]
    MalformedClientData(String),
    #[error("wrong ceremony type {0:?}")]
    WrongCeremonyType(String),
    #[error("malformed CBOR: {0}")]
    MalformedCbor(String),
    #[error("unsupported attestation format {0:?}")]
    UnsupportedFormat(String),
    #[error("unsupported COSE algorithm or key type: {0}")]
    UnsupportedAlgorithm(String),
    #[error("malformed COSE key: {0}")]
    MalformedKey(String),
}

/// Decodes URL-safe base64 with or without trailing padding.
pub fn decode_base64url(text: &str) -> Result<Vec<u8>, CodecError> {
    let result = if text.ends_with('=') {
        URL_SAFE.decode(text)
    } else {
        URL_SAFE_NO_PAD.decode(text)
    };
    result.map_err(|_| CodecError::MalformedEncoding)
}

/// Encodes bytes as unpadded URL-safe base64, the WebAuthn JSON convention.
pub fn encode_base64url(bytes: &[u8]) -> String {
    URL_SAFE_NO_PAD.encode(bytes)
}

pub fn sha256(bytes: &[u8]) -> Digest32 {
    Sha256::digest(bytes).into()
}
