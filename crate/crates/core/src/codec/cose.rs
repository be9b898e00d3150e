use super::cbor::Value;
use super::CodecError;
use crate::sig::PublicKey;

const LABEL_KTY: i64 = 1;
const LABEL_ALG: i64 = 3;
const LABEL_CRV_OR_N: i64 = -1;
const LABEL_X_OR_E: i64 = -2;
const LABEL_Y: i64 = -3;

const KTY_OKP: i64 = 1;
const KTY_EC2: i64 = 2;
const KTY_RSA: i64 = 3;
const CRV_P256: i64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoseKeyType {
    Ec2,
    Rsa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CoseAlgorithm {
    /// ECDSA over P-256 with SHA-256.
    Es256,
    /// RSASSA-PKCS1-v1_5 with SHA-256.
    Rs256,
}

impl CoseAlgorithm {
    pub fn id(self) -> i64 {
        match self {
            CoseAlgorithm::Es256 => -7,
            CoseAlgorithm::Rs256 => -257,
        }
    }

    pub fn from_id(id: i64) -> Option<Self> {
        match id {
            -7 => Some(CoseAlgorithm::Es256),
            -257 => Some(CoseAlgorithm::Rs256),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CosePublicKey {
    Ec2P256 { x: [u8; 32], y: [u8; 32] },
    Rsa { modulus: Vec<u8>, exponent: Vec<u8> },
}

impl CosePublicKey {
    pub fn key_type(&self) -> CoseKeyType {
        match self {
            CosePublicKey::Ec2P256 { .. } => CoseKeyType::Ec2,
            CosePublicKey::Rsa { .. } => CoseKeyType::Rsa,
        }
    }

    pub fn algorithm(&self) -> CoseAlgorithm {
        match self {
            CosePublicKey::Ec2P256 { .. } => CoseAlgorithm::Es256,
            CosePublicKey::Rsa { .. } => CoseAlgorithm::Rs256,
        }
    }

    /// Canonical CTAP2 encoding (integer labels in encoded-byte order).
    pub fn to_cbor(&self) -> Value {
        let int = Value::integer;
        match self {
            CosePublicKey::Ec2P256 { x, y } => Value::Map(vec![
                (int(LABEL_KTY), int(KTY_EC2)),
                (int(LABEL_ALG), int(CoseAlgorithm::Es256.id())),
                (int(LABEL_CRV_OR_N), int(CRV_P256)),
                (int(LABEL_X_OR_E), Value::Bytes(x.to_vec())),
                (int(LABEL_Y), Value::Bytes(y.to_vec())),
            ]),
            CosePublicKey::Rsa { modulus, exponent } => Value::Map(vec![
                (int(LABEL_KTY), int(KTY_RSA)),
                (int(LABEL_ALG), int(CoseAlgorithm::Rs256.id())),
                (int(LABEL_CRV_OR_N), Value::Bytes(modulus.clone())),
                (int(LABEL_X_OR_E), Value::Bytes(exponent.clone())),
            ]),
        }
    }

    pub fn to_public_key(&self) -> Result<PublicKey, CodecError> {
        match self {
            CosePublicKey::Ec2P256 { x, y } => PublicKey::p256_from_coordinates(x, y),
            CosePublicKey::Rsa { modulus, exponent } => PublicKey::rsa_from_components(modulus, exponent),
        }
        .map_err(|e| CodecError::MalformedKey(e.to_string()))
    }
}

pub fn decode_cose_key(map: &Value) -> Result<CosePublicKey, CodecError> {
    let entries = map
        .as_map()
        .ok_or_else(|| CodecError::MalformedKey("COSE key is not a map".into()))?;
    if entries.iter().any(|(k, _)| k.as_i64().is_none()) {
        return Err(CodecError::MalformedKey("COSE key labels must be integers".into()));
    }
    let field = |label: i64| map.get(&Value::integer(label));
    let int_field = |label: i64, name: &str| {
        field(label)
            .and_then(Value::as_i64)
            .ok_or_else(|| CodecError::MalformedKey(format!("missing or non-integer {name}")))
    };
    let bytes_field = |label: i64, name: &str| {
        field(label)
            .and_then(Value::as_bytes)
            .ok_or_else(|| CodecError::MalformedKey(format!("missing or non-bytes {name}")))
    };

    let kty = int_field(LABEL_KTY, "kty")?;
    let alg = int_field(LABEL_ALG, "alg")?;
    let key = match kty {
        KTY_EC2 => {
            if alg != CoseAlgorithm::Es256.id() {
                return Err(CodecError::UnsupportedAlgorithm(format!("EC2 key with alg {alg}")));
            }
            let crv = int_field(LABEL_CRV_OR_N, "crv")?;
            if crv != CRV_P256 {
                return Err(CodecError::UnsupportedAlgorithm(format!("EC2 curve {crv}")));
            }
            let x = bytes_field(LABEL_X_OR_E, "x")?;
            let y = bytes_field(LABEL_Y, "y")?;
            let coord = |c: &[u8], name: &str| -> Result<[u8; 32], CodecError> {
                c.try_into()
                    .map_err(|_| CodecError::MalformedKey(format!("{name} coordinate is {} bytes, expected 32", c.len())))
            };
            CosePublicKey::Ec2P256 { x: coord(x, "x")?, y: coord(y, "y")? }
        }
        KTY_RSA => {
            if alg != CoseAlgorithm::Rs256.id() {
                return Err(CodecError::UnsupportedAlgorithm(format!("RSA key with alg {alg}")));
            }
            CosePublicKey::Rsa {
                modulus: bytes_field(LABEL_CRV_OR_N, "n")?.to_vec(),
                exponent: bytes_field(LABEL_X_OR_E, "e")?.to_vec(),
            }
        }
        KTY_OKP => return Err(CodecError::UnsupportedAlgorithm("OKP key type".into())),
        other => return Err(CodecError::UnsupportedAlgorithm(format!("key type {other}"))),
    };
    // Rejects points off the curve and degenerate RSA parameters.
    key.to_public_key()?;
    Ok(key)
}
