//! Signature verification keys shared by the attestation and MDS paths.

use p256::ecdsa::signature::Verifier;
use p256::ecdsa::{Signature as EcdsaSignature, VerifyingKey};
use p256::EncodedPoint;
use rsa::pkcs1v15::{Signature as RsaSignature, VerifyingKey as RsaVerifyingKey};
use rsa::{BigUint, RsaPublicKey};
use sha2::Sha256;

use crate::codec::CoseAlgorithm;

#[derive(Debug, thiserror::Error)]
pub enum KeyError {
    #[error("invalid P-256 public key")]
    InvalidP256,
    #[error("invalid RSA public key: {0}")]
    InvalidRsa(String),
    #[error("unsupported public key algorithm")]
    Unsupported,
}

#[derive(Debug, Clone)]
pub enum PublicKey {
    P256(VerifyingKey),
    Rsa(RsaPublicKey),
}

const OID_EC_PUBLIC_KEY: &str = "1.2.840.10045.2.1";
const OID_PRIME256V1: &str = "1.2.840.10045.3.1.7";
const OID_RSA_ENCRYPTION: &str = "1.2.840.113549.1.1.1";

impl PublicKey {
    pub fn p256_from_coordinates(x: &[u8; 32], y: &[u8; 32]) -> Result<Self, KeyError> {
        let point = EncodedPoint::from_affine_coordinates(x.into(), y.into(), false);
        VerifyingKey::from_encoded_point(&point)
            .map(PublicKey::P256)
            .map_err(|_| KeyError::InvalidP256)
    }

    pub fn rsa_from_components(modulus: &[u8], exponent: &[u8]) -> Result<Self, KeyError> {
        RsaPublicKey::new(BigUint::from_bytes_be(modulus), BigUint::from_bytes_be(exponent))
            .map(PublicKey::Rsa)
            .map_err(|e| KeyError::InvalidRsa(e.to_string()))
    }

    /// Builds a key from a parsed X.509 SubjectPublicKeyInfo.
    pub fn from_spki(spki: &x509_parser::x509::SubjectPublicKeyInfo<'_>) -> Result<Self, KeyError> {
        let alg = spki.algorithm.algorithm.to_id_string();
        let raw = spki.subject_public_key.data.as_ref();
        if alg == OID_EC_PUBLIC_KEY {
            let curve = spki
                .algorithm
                .parameters
                .as_ref()
                .and_then(|p| p.as_oid().ok())
                .map(|oid| oid.to_id_string());
            if curve.as_deref() != Some(OID_PRIME256V1) {
                return Err(KeyError::Unsupported);
            }
            VerifyingKey::from_sec1_bytes(raw)
                .map(PublicKey::P256)
                .map_err(|_| KeyError::InvalidP256)
        } else if alg == OID_RSA_ENCRYPTION {
            use rsa::pkcs1::DecodeRsaPublicKey;
            RsaPublicKey::from_pkcs1_der(raw)
                .map(PublicKey::Rsa)
                .map_err(|e| KeyError::InvalidRsa(e.to_string()))
        } else {
            Err(KeyError::Unsupported)
        }
    }

    pub fn algorithm(&self) -> CoseAlgorithm {
        match self {
            PublicKey::P256(_) => CoseAlgorithm::Es256,
            PublicKey::Rsa(_) => CoseAlgorithm::Rs256,
        }
    }

    /// Verifies `signature` over `message`. ES256 signatures are DER encoded
    /// as WebAuthn and X.509 carry them; RS256 signatures are raw PKCS#1 v1.5.
    pub fn verify(&self, alg: CoseAlgorithm, message: &[u8], signature: &[u8]) -> bool {
        match (self, alg) {
            (PublicKey::P256(key), CoseAlgorithm::Es256) => EcdsaSignature::from_der(signature)
                .map(|sig| key.verify(message, &sig).is_ok())
                .unwrap_or(false),
            (PublicKey::Rsa(key), CoseAlgorithm::Rs256) => {
                let verifier = RsaVerifyingKey::<Sha256>::new(key.clone());
                RsaSignature::try_from(signature)
                    .map(|sig| verifier.verify(message, &sig).is_ok())
                    .unwrap_or(false)
            }
            _ => false,
        }
    }

    /// ES256 in JOSE form: the 64-byte `r || s` concatenation.
    pub fn verify_jose_es256(&self, message: &[u8], signature: &[u8]) -> bool {
        match self {
            PublicKey::P256(key) => EcdsaSignature::from_slice(signature)
                .map(|sig| key.verify(message, &sig).is_ok())
                .unwrap_or(false),
            PublicKey::Rsa(_) => false,
        }
    }
}
