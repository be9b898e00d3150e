use super::cbor;
use super::cose::{decode_cose_key, CosePublicKey};
use super::{CodecError, Digest32};

/// RP ID hash, flags byte and signature counter.
pub const MIN_AUTH_DATA_LEN: usize = 32 + 1 + 4;
/// Fixed header plus AAGUID and the credential id length prefix.
pub const MIN_AUTH_DATA_WITH_CREDENTIAL_LEN: usize = MIN_AUTH_DATA_LEN + 16 + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlagSet {
    pub raw: u8,
}

impl FlagSet {
    pub const USER_PRESENT: u8 = 0x01;
    pub const USER_VERIFIED: u8 = 0x04;
    pub const ATTESTED_CREDENTIAL: u8 = 0x40;
    pub const EXTENSION_DATA: u8 = 0x80;

    pub fn from_raw(raw: u8) -> Self {
        FlagSet { raw }
    }

    pub fn up(self) -> bool {
        self.raw & Self::USER_PRESENT != 0
    }

    pub fn uv(self) -> bool {
        self.raw & Self::USER_VERIFIED != 0
    }

    pub fn at(self) -> bool {
        self.raw & Self::ATTESTED_CREDENTIAL != 0
    }

    pub fn ed(self) -> bool {
        self.raw & Self::EXTENSION_DATA != 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestedCredentialData {
    pub aaguid: [u8; 16],
    pub credential_id: Vec<u8>,
    pub public_key: CosePublicKey,
    /// The COSE_Key exactly as it appeared on the wire.
    pub public_key_bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthenticatorData {
    pub rp_id_hash: Digest32,
    pub flags: FlagSet,
    pub sign_count: u32,
    pub attested_credential: Option<AttestedCredentialData>,
    /// Raw bytes following the attested credential data when the ED flag
    /// is set. Their content is not interpreted.
    pub extensions: Option<Vec<u8>>,
}

impl AuthenticatorData {
    pub fn extensions_present(&self) -> bool {
        self.flags.ed()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MIN_AUTH_DATA_LEN + 128);
        out.extend_from_slice(&self.rp_id_hash);
        out.push(self.flags.raw);
        out.extend_from_slice(&self.sign_count.to_be_bytes());
        if let Some(cred) = &self.attested_credential {
            out.extend_from_slice(&cred.aaguid);
            out.extend_from_slice(&(cred.credential_id.len() as u16).to_be_bytes());
            out.extend_from_slice(&cred.credential_id);
            out.extend_from_slice(&cred.public_key_bytes);
        }
        if let Some(ext) = &self.extensions {
            out.extend_from_slice(ext);
        }
        out
    }
}

pub fn parse_authenticator_data(bytes: &[u8]) -> Result<AuthenticatorData, CodecError> {
    if bytes.len() < MIN_AUTH_DATA_LEN {
        return Err(CodecError::TruncatedInput { needed: MIN_AUTH_DATA_LEN, available: bytes.len() });
    }
    let rp_id_hash: Digest32 = bytes[..32].try_into().unwrap();
    let flags = FlagSet::from_raw(bytes[32]);
    let sign_count = u32::from_be_bytes(bytes[33..37].try_into().unwrap());
    let mut rest = &bytes[MIN_AUTH_DATA_LEN..];

    let attested_credential = if flags.at() {
        let (cred, used) = parse_attested_credential(rest, bytes.len())?;
        rest = &rest[used..];
        Some(cred)
    } else {
        None
    };

    let extensions = if flags.ed() {
        Some(rest.to_vec())
    } else if !rest.is_empty() {
        return Err(CodecError::MalformedCredentialData(format!(
            "{} unexpected trailing bytes without extension flag",
            rest.len()
        )));
    } else {
        None
    };

    Ok(AuthenticatorData { rp_id_hash, flags, sign_count, attested_credential, extensions })
}

fn parse_attested_credential(
    rest: &[u8],
    total_len: usize,
) -> Result<(AttestedCredentialData, usize), CodecError> {
    if rest.len() < 18 {
        return Err(CodecError::TruncatedInput { needed: MIN_AUTH_DATA_WITH_CREDENTIAL_LEN, available: total_len });
    }
    let aaguid: [u8; 16] = rest[..16].try_into().unwrap();
    let id_len = usize::from(u16::from_be_bytes([rest[16], rest[17]]));
    let id_end = 18 + id_len;
    if rest.len() < id_end {
        return Err(CodecError::TruncatedInput {
            needed: total_len - rest.len() + id_end,
            available: total_len,
        });
    }
    let credential_id = rest[18..id_end].to_vec();
    let (key_value, key_len) = cbor::decode_prefix(&rest[id_end..])
        .map_err(|e| CodecError::MalformedCredentialData(format!("credential public key: {e}")))?;
    let public_key = decode_cose_key(&key_value)?;
    let public_key_bytes = rest[id_end..id_end + key_len].to_vec();
    Ok((
        AttestedCredentialData { aaguid, credential_id, public_key, public_key_bytes },
        id_end + key_len,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_layout() {
        let mut bytes = vec![0u8; 32];
        bytes.push(0x01);
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        let ad = parse_authenticator_data(&bytes).unwrap();
        assert_eq!(ad.rp_id_hash, [0u8; 32]);
        assert!(ad.flags.up() && !ad.flags.uv() && !ad.flags.at());
        assert_eq!(ad.sign_count, 0);
        assert!(ad.attested_credential.is_none());
        assert_eq!(ad.to_bytes(), bytes);
    }

    #[test]
    fn flags_0x45_decomposition() {
        let f = FlagSet::from_raw(0x45);
        assert!(f.up() && f.uv() && f.at() && !f.ed());
    }

    #[test]
    fn flags_exhaustive() {
        for raw in 0..=255u8 {
            let f = FlagSet::from_raw(raw);
            assert_eq!(f.up(), raw & 0x01 != 0);
            assert_eq!(f.uv(), raw & 0x04 != 0);
            assert_eq!(f.at(), raw & 0x40 != 0);
            assert_eq!(f.ed(), raw & 0x80 != 0);
        }
    }

    #[test]
    fn short_input_is_truncated() {
        let err = parse_authenticator_data(&[0u8; 36]).unwrap_err();
        assert_eq!(err, CodecError::TruncatedInput { needed: 37, available: 36 });
    }

    #[test]
    fn at_flag_without_room_is_truncated() {
        for len in MIN_AUTH_DATA_LEN..MIN_AUTH_DATA_WITH_CREDENTIAL_LEN {
            let mut bytes = vec![0u8; len];
            bytes[32] = 0x41;
            assert!(matches!(
                parse_authenticator_data(&bytes),
                Err(CodecError::TruncatedInput { .. })
            ));
        }
    }

    #[test]
    fn credential_id_overrun_is_truncated() {
        let mut bytes = vec![0u8; 55];
        bytes[32] = 0x41;
        bytes[53] = 0x00;
        bytes[54] = 0x10; // claims 16 id bytes, none present
        assert!(matches!(parse_authenticator_data(&bytes), Err(CodecError::TruncatedInput { .. })));
    }

    #[test]
    fn trailing_bytes_need_extension_flag() {
        let mut bytes = vec![0u8; 37];
        bytes[32] = 0x01;
        bytes.push(0xa0);
        assert!(matches!(
            parse_authenticator_data(&bytes),
            Err(CodecError::MalformedCredentialData(_))
        ));
        bytes[32] = 0x81;
        let ad = parse_authenticator_data(&bytes).unwrap();
        assert_eq!(ad.extensions.as_deref(), Some(&[0xa0][..]));
        assert_eq!(ad.to_bytes(), bytes);
    }
}
