//! The Fernet container: `0x80 || ts(8, BE seconds) || iv(16) ||
//! AES-128-CBC(PKCS#7) ciphertext || HMAC-SHA256(32)`, base64url with
//! padding on the outside.

use aes::cipher::{block_padding::Pkcs7, BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use base64::engine::general_purpose::{URL_SAFE, URL_SAFE_NO_PAD};
use base64::Engine as _;
use hmac::{Hmac, Mac};
use sha2::Sha256;

use super::TokenKey;

pub const VERSION: u8 = 0x80;
const HEADER_LEN: usize = 1 + 8 + 16;
const TAG_LEN: usize = 32;
const BLOCK: usize = 16;

type Aes128CbcEnc = cbc::Encryptor<aes::Aes128>;
type Aes128CbcDec = cbc::Decryptor<aes::Aes128>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContainerError {
    /// Bad base64, wrong version byte, or impossible length.
    Malformed,
    /// HMAC mismatch.
    Integrity,
    /// Authenticated but undecryptable; only reachable with a broken key pair.
    Padding,
}

pub fn seal(key: &TokenKey, plaintext: &[u8], timestamp_secs: u64, iv: [u8; 16]) -> String {
    let mut out = Vec::with_capacity(HEADER_LEN + plaintext.len() + BLOCK + TAG_LEN);
    out.push(VERSION);
    out.extend_from_slice(&timestamp_secs.to_be_bytes());
    out.extend_from_slice(&iv);
    let ciphertext = Aes128CbcEnc::new(key.encryption_key().into(), &iv.into())
        .encrypt_padded_vec_mut::<Pkcs7>(plaintext);
    out.extend_from_slice(&ciphertext);
    let mut mac = new_mac(key);
    mac.update(&out);
    out.extend_from_slice(&mac.finalize().into_bytes());
    URL_SAFE.encode(out)
}

/// Decodes and authenticates a container, returning the header timestamp
/// and the plaintext.
pub fn open(key: &TokenKey, token: &str) -> Result<(u64, Vec<u8>), ContainerError> {
    let bytes = decode(token).ok_or(ContainerError::Malformed)?;
    open_bytes(key, &bytes)
}

pub fn decode(token: &str) -> Option<Vec<u8>> {
    if token.ends_with('=') {
        URL_SAFE.decode(token).ok()
    } else {
        URL_SAFE_NO_PAD.decode(token).ok()
    }
}

pub(crate) fn open_bytes(key: &TokenKey, bytes: &[u8]) -> Result<(u64, Vec<u8>), ContainerError> {
    if bytes.len() < HEADER_LEN + BLOCK + TAG_LEN || !(bytes.len() - HEADER_LEN - TAG_LEN).is_multiple_of(BLOCK) {
        return Err(ContainerError::Malformed);
    }
    if bytes[0] != VERSION {
        return Err(ContainerError::Malformed);
    }
    let (signed, tag) = bytes.split_at(bytes.len() - TAG_LEN);
    let mut mac = new_mac(key);
    mac.update(signed);
    mac.verify_slice(tag).map_err(|_| ContainerError::Integrity)?;

    let timestamp = u64::from_be_bytes(signed[1..9].try_into().unwrap());
    let iv: [u8; 16] = signed[9..HEADER_LEN].try_into().unwrap();
    let plaintext = Aes128CbcDec::new(key.encryption_key().into(), &iv.into())
        .decrypt_padded_vec_mut::<Pkcs7>(&signed[HEADER_LEN..])
        .map_err(|_| ContainerError::Padding)?;
    Ok((timestamp, plaintext))
}

fn new_mac(key: &TokenKey) -> Hmac<Sha256> {
    <Hmac<Sha256> as Mac>::new_from_slice(key.signing_key()).expect("HMAC accepts any key length")
}

#[cfg(test)]
mod tests {
    use super::*;

    // Produced with Python `cryptography.fernet.Fernet._encrypt_from_parts`.
    const KEY_B64: &str = "cw_0x689RpI-jtRR7oE8h_eQsKImvJapLeSbXpwF4e4=";
    const HELLO_TOKEN: &str =
        "gAAAAAAdwJ6wAAECAwQFBgcICQoLDA0ODy021cpGVWKZ_eEwCGM4BLLF_5CV9dOPmrhuVUPgJobwOz7JcbmrR64jVmpU4IwqDA==";
    const PAYLOAD_TOKEN: &str = "gAAAAABlU_EAEBESExQVFhcYGRobHB0eHyB8rPTsIdDXVvsmRoy3yBQeMZnu0RetjFKHKaXO66nDxnve9318aM2H3q1HUZZjwmBv7GKcBtZgIRWW5cHDiqY=";

    fn key() -> TokenKey {
        TokenKey::from_fernet_base64(KEY_B64).unwrap()
    }

    fn iv(start: u8) -> [u8; 16] {
        std::array::from_fn(|i| start + i as u8)
    }

    #[test]
    fn matches_reference_implementation() {
        assert_eq!(seal(&key(), b"hello", 499_162_800, iv(0)), HELLO_TOKEN);
        assert_eq!(
            seal(&key(), b"CAHICHA-OK-1|1700000000123", 1_700_000_000, iv(16)),
            PAYLOAD_TOKEN
        );
    }

    #[test]
    fn opens_reference_tokens() {
        assert_eq!(open(&key(), HELLO_TOKEN).unwrap(), (499_162_800, b"hello".to_vec()));
        let (ts, pt) = open(&key(), PAYLOAD_TOKEN).unwrap();
        assert_eq!(ts, 1_700_000_000);
        assert_eq!(pt, b"CAHICHA-OK-1|1700000000123");
    }

    #[test]
    fn wrong_version_and_lengths_are_malformed() {
        let mut bytes = decode(HELLO_TOKEN).unwrap();
        assert_eq!(open_bytes(&key(), &bytes[..40]), Err(ContainerError::Malformed));
        assert_eq!(open_bytes(&key(), &bytes[..bytes.len() - 1]), Err(ContainerError::Malformed));
        bytes[0] = 0x81;
        assert_eq!(open_bytes(&key(), &bytes), Err(ContainerError::Malformed));
        assert_eq!(open(&key(), "not*base64"), Err(ContainerError::Malformed));
    }

    #[test]
    fn tag_flip_is_integrity_failure() {
        let mut bytes = decode(HELLO_TOKEN).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        assert_eq!(open_bytes(&key(), &bytes), Err(ContainerError::Integrity));
    }
}
