use super::auth_data::{parse_authenticator_data, AuthenticatorData};
use super::cbor::{self, Value};
use super::cose::CoseAlgorithm;
use super::CodecError;

/// Attestation statement formats the gateway accepts. Adding one means a
/// new variant here plus a verification branch in the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttestationFormat {
    Packed,
    None,
}

impl AttestationFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            AttestationFormat::Packed => "packed",
            AttestationFormat::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttestationStatement {
    /// Empty statement of the "none" format.
    Empty,
    Packed {
        alg: CoseAlgorithm,
        sig: Vec<u8>,
        /// Attestation certificate chain, leaf first. Empty for self attestation.
        x5c: Vec<Vec<u8>>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationObject {
    pub format: AttestationFormat,
    pub statement: AttestationStatement,
    /// authData exactly as received; signatures are checked over these bytes.
    pub auth_data_bytes: Vec<u8>,
    pub auth_data: AuthenticatorData,
}

impl AttestationObject {
    pub fn to_cbor(&self) -> Vec<u8> {
        let statement = match &self.statement {
            AttestationStatement::Empty => Value::Map(vec![]),
            AttestationStatement::Packed { alg, sig, x5c } => {
                let mut entries = vec![
                    (Value::text("alg"), Value::integer(alg.id())),
                    (Value::text("sig"), Value::Bytes(sig.clone())),
                ];
                if !x5c.is_empty() {
                    entries.push((
                        Value::text("x5c"),
                        Value::Array(x5c.iter().cloned().map(Value::Bytes).collect()),
                    ));
                }
                Value::Map(entries)
            }
        };
        cbor::to_vec(&Value::Map(vec![
            (Value::text("fmt"), Value::text(self.format.as_str())),
            (Value::text("attStmt"), statement),
            (Value::text("authData"), Value::Bytes(self.auth_data_bytes.clone())),
        ]))
    }
}

fn malformed(msg: &str) -> CodecError {
    CodecError::MalformedCbor(msg.to_owned())
}

pub fn decode_attestation_object(bytes: &[u8]) -> Result<AttestationObject, CodecError> {
    let root = cbor::from_slice(bytes)?;
    if root.as_map().is_none() {
        return Err(malformed("attestation object is not a map"));
    }
    let fmt = root
        .get(&Value::text("fmt"))
        .and_then(Value::as_text)
        .ok_or_else(|| malformed("missing fmt"))?;
    let statement = root.get(&Value::text("attStmt")).ok_or_else(|| malformed("missing attStmt"))?;
    let auth_data_bytes = root
        .get(&Value::text("authData"))
        .and_then(Value::as_bytes)
        .ok_or_else(|| malformed("missing authData"))?
        .to_vec();
    let stmt_entries = statement.as_map().ok_or_else(|| malformed("attStmt is not a map"))?;

    let (format, statement) = match fmt {
        "none" => {
            if !stmt_entries.is_empty() {
                return Err(malformed("\"none\" attestation with non-empty statement"));
            }
            (AttestationFormat::None, AttestationStatement::Empty)
        }
        "packed" => (AttestationFormat::Packed, decode_packed(statement, stmt_entries)?),
        other => return Err(CodecError::UnsupportedFormat(other.to_owned())),
    };
    let auth_data = parse_authenticator_data(&auth_data_bytes)?;
    Ok(AttestationObject { format, statement, auth_data_bytes, auth_data })
}

fn decode_packed(statement: &Value, entries: &[(Value, Value)]) -> Result<AttestationStatement, CodecError> {
    for (key, _) in entries {
        match key.as_text() {
            Some("alg" | "sig" | "x5c") => {}
            _ => return Err(malformed("unexpected key in packed statement")),
        }
    }
    let alg_id = statement
        .get(&Value::text("alg"))
        .and_then(Value::as_i64)
        .ok_or_else(|| malformed("packed statement missing alg"))?;
    let alg = CoseAlgorithm::from_id(alg_id)
        .ok_or_else(|| CodecError::UnsupportedAlgorithm(format!("attestation alg {alg_id}")))?;
    let sig = statement
        .get(&Value::text("sig"))
        .and_then(Value::as_bytes)
        .ok_or_else(|| malformed("packed statement missing sig"))?
        .to_vec();
    let x5c = match statement.get(&Value::text("x5c")) {
        None => Vec::new(),
        Some(Value::Array(items)) if !items.is_empty() => items
            .iter()
            .map(|c| c.as_bytes().map(<[u8]>::to_vec).ok_or_else(|| malformed("x5c entry is not bytes")))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(malformed("x5c must be a non-empty array")),
    };
    Ok(AttestationStatement::Packed { alg, sig, x5c })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_auth_data() -> Vec<u8> {
        let mut b = vec![0u8; 37];
        b[32] = 0x01;
        b
    }

    fn object(fmt: &str, stmt: Value) -> Vec<u8> {
        cbor::to_vec(&Value::Map(vec![
            (Value::text("fmt"), Value::text(fmt)),
            (Value::text("attStmt"), stmt),
            (Value::text("authData"), Value::Bytes(minimal_auth_data())),
        ]))
    }

    #[test]
    fn none_format_with_empty_statement() {
        let obj = decode_attestation_object(&object("none", Value::Map(vec![]))).unwrap();
        assert_eq!(obj.format, AttestationFormat::None);
        assert_eq!(obj.statement, AttestationStatement::Empty);
        assert_eq!(obj.auth_data_bytes, minimal_auth_data());
    }

    #[test]
    fn none_format_rejects_statement() {
        let stmt = Value::Map(vec![(Value::text("sig"), Value::Bytes(vec![1]))]);
        assert!(matches!(decode_attestation_object(&object("none", stmt)), Err(CodecError::MalformedCbor(_))));
    }

    #[test]
    fn unsupported_formats() {
        for fmt in ["fido-u2f", "tpm", "android-key", "apple"] {
            assert_eq!(
                decode_attestation_object(&object(fmt, Value::Map(vec![]))),
                Err(CodecError::UnsupportedFormat(fmt.into()))
            );
        }
    }

    #[test]
    fn packed_requires_signature() {
        let stmt = Value::Map(vec![(Value::text("alg"), Value::integer(-7))]);
        assert!(decode_attestation_object(&object("packed", stmt)).is_err());
    }

    #[test]
    fn packed_round_trips() {
        let stmt = Value::Map(vec![
            (Value::text("alg"), Value::integer(-7)),
            (Value::text("sig"), Value::Bytes(vec![0x30, 0x01])),
        ]);
        let bytes = object("packed", stmt);
        let obj = decode_attestation_object(&bytes).unwrap();
        assert_eq!(obj.to_cbor(), bytes);
    }

    #[test]
    fn garbage_is_malformed_cbor() {
        assert!(matches!(decode_attestation_object(&[0xff, 0x00]), Err(CodecError::MalformedCbor(_))));
        assert!(matches!(decode_attestation_object(&[0x80]), Err(CodecError::MalformedCbor(_))));
    }
}
