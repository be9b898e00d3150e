use super::{sha256, CodecError, Digest32};

pub const CREATE_CEREMONY: &str = "webauthn.create";

/// Parsed `clientDataJSON`. The original bytes are retained because the
/// authenticator signed their hash, not any re-serialization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientData {
    pub ceremony_type: String,
    pub challenge: String,
    pub origin: String,
    pub raw_bytes: Vec<u8>,
}

impl ClientData {
    pub fn hash(&self) -> Digest32 {
        sha256(&self.raw_bytes)
    }
}

pub fn parse_client_data(bytes: &[u8]) -> Result<ClientData, CodecError> {
    let json: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| CodecError::MalformedClientData(e.to_string()))?;
    let field = |name: &str| -> Result<String, CodecError> {
        json.get(name)
            .and_then(serde_json::Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| CodecError::MalformedClientData(format!("missing string field {name:?}")))
    };
    let ceremony_type = field("type")?;
    if ceremony_type != CREATE_CEREMONY {
        return Err(CodecError::WrongCeremonyType(ceremony_type));
    }
    Ok(ClientData {
        ceremony_type,
        challenge: field("challenge")?,
        origin: field("origin")?,
        raw_bytes: bytes.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_fields() {
        let raw = br#"{"type":"webauthn.create","challenge":"AQ","origin":"https://localhost"}"#;
        let cd = parse_client_data(raw).unwrap();
        assert_eq!(cd.ceremony_type, "webauthn.create");
        assert_eq!(cd.challenge, "AQ");
        assert_eq!(cd.origin, "https://localhost");
        assert_eq!(cd.raw_bytes, raw.to_vec());
    }

    #[test]
    fn get_ceremony_is_rejected() {
        let raw = br#"{"type":"webauthn.get","challenge":"AQ","origin":"https://localhost"}"#;
        assert_eq!(
            parse_client_data(raw),
            Err(CodecError::WrongCeremonyType("webauthn.get".into()))
        );
    }

    #[test]
    fn missing_fields_and_bad_json() {
        assert!(matches!(
            parse_client_data(br#"{"type":"webauthn.create","origin":"x"}"#),
            Err(CodecError::MalformedClientData(_))
        ));
        assert!(matches!(parse_client_data(b"{not json"), Err(CodecError::MalformedClientData(_))));
        assert!(matches!(
            parse_client_data(br#"{"type":"webauthn.create","challenge":5,"origin":"x"}"#),
            Err(CodecError::MalformedClientData(_))
        ));
    }

    #[test]
    fn hash_is_over_raw_bytes() {
        // Same fields, different key order and whitespace: distinct hashes.
        let a = br#"{"type":"webauthn.create","challenge":"AQ","origin":"https://localhost"}"#;
        let b = br#"{"origin":"https://localhost", "challenge":"AQ","type":"webauthn.create"}"#;
        let (ca, cb) = (parse_client_data(a).unwrap(), parse_client_data(b).unwrap());
        assert_eq!(ca.hash(), parse_client_data(a).unwrap().hash());
        assert_ne!(ca.hash(), cb.hash());
        // Pinned with Python hashlib over the literal bytes of `a`.
        assert_eq!(
            ca.hash().iter().map(|b| format!("{b:02x}")).collect::<String>(),
            "074eba48a1d5d79e6c53b2eb2f9e694a18b7450d5291e38aa70f01b398473401"
        );
    }
}
