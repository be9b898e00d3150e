//! Software FIDO2 authenticator used as a test oracle. It performs the
//! authenticator's cryptographic duties (key generation, authData assembly,
//! attestation signing) and can be told to misbehave in specific ways.

pub mod der;
pub mod pki;

use std::sync::Arc;

use p256::ecdsa::signature::Signer;
use p256::ecdsa::{Signature, SigningKey};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::codec::{cbor, encode_base64url, sha256, CoseAlgorithm, CosePublicKey, FlagSet};
use crate::engine::{AttestationResponse, CreationOptions};
use pki::{CertifiedKey, FixturePki};

/// AAGUID of the fixture "registered" authenticator model.
pub const FIXTURE_AAGUID: [u8; 16] = [
    0xca, 0x41, 0xc4, 0xa0, 0x5e, 0x11, 0x4b, 0x7d, 0x9a, 0x6e, 0x00, 0x00, 0x00, 0x00, 0x00, 0x01,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftAttestation {
    /// Signed by a per-model attestation key, certificate chain in x5c.
    PackedX5c,
    /// Signed by the credential key itself, no x5c.
    PackedSelf,
    None,
}

impl SoftAttestation {
    pub fn as_str(self) -> &'static str {
        match self {
            SoftAttestation::PackedX5c => "packed-x5c",
            SoftAttestation::PackedSelf => "packed-self",
            SoftAttestation::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthenticatorBehavior {
    pub set_up: bool,
    pub set_uv: bool,
    pub attestation_format: SoftAttestation,
    pub aaguid: [u8; 16],
    /// Challenge bytes to put in client data instead of the real one.
    pub wrong_challenge: Option<Vec<u8>>,
    pub wrong_origin: Option<String>,
    /// RP ID to hash into authData instead of the one in the options.
    pub wrong_rp_id: Option<String>,
    pub corrupt_signature: bool,
    pub sign_count_start: u32,
    /// Exact flags byte. Credential data is included iff AT is set and an
    /// empty extensions map iff ED is set, so the blob stays well formed.
    pub flags_override: Option<u8>,
    /// Chain the attestation certificate to a self-signed root that is not
    /// registered in the fixture metadata.
    pub rogue_attestation_root: bool,
}

impl Default for AuthenticatorBehavior {
    fn default() -> Self {
        AuthenticatorBehavior {
            set_up: true,
            set_uv: true,
            attestation_format: SoftAttestation::PackedX5c,
            aaguid: FIXTURE_AAGUID,
            wrong_challenge: None,
            wrong_origin: None,
            wrong_rp_id: None,
            corrupt_signature: false,
            sign_count_start: 0,
            flags_override: None,
            rogue_attestation_root: false,
        }
    }
}

impl AuthenticatorBehavior {
    pub fn honest() -> Self {
        Self::default()
    }

    fn flags(&self) -> u8 {
        if let Some(raw) = self.flags_override {
            return raw;
        }
        let mut flags = FlagSet::ATTESTED_CREDENTIAL;
        if self.set_up {
            flags |= FlagSet::USER_PRESENT;
        }
        if self.set_uv {
            flags |= FlagSet::USER_VERIFIED;
        }
        flags
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SoftError {
    #[error("unsupported option: {0}")]
    UnsupportedOption(String),
    #[error("creation options are invalid: {0}")]
    InvalidOptions(String),
}

pub struct SoftAuthenticator {
    rng: ChaCha20Rng,
    pki: Arc<FixturePki>,
}

impl SoftAuthenticator {
    /// Deterministic instance: equal seeds and inputs give identical bytes.
    pub fn seeded(pki: Arc<FixturePki>, seed: u64) -> Self {
        SoftAuthenticator { rng: ChaCha20Rng::seed_from_u64(seed), pki }
    }

    pub fn from_entropy(pki: Arc<FixturePki>) -> Self {
        SoftAuthenticator { rng: ChaCha20Rng::from_entropy(), pki }
    }

    pub fn pki(&self) -> &Arc<FixturePki> {
        &self.pki
    }

    /// Attestation key and chain (leaf first) this authenticator would use
    /// for `behavior`.
    pub fn attestation_keys(&self, behavior: &AuthenticatorBehavior) -> (CertifiedKey, Vec<Vec<u8>>) {
        if behavior.rogue_attestation_root {
            let root = self.pki.rogue_root("Rogue Attestation Root");
            let leaf = self.pki.issue_attestation_with(behavior.aaguid, &root, pki::Validity::default());
            let chain = vec![leaf.cert_der.clone(), root.cert_der];
            (leaf, chain)
        } else {
            let leaf = self.pki.issue_attestation(behavior.aaguid);
            let chain = vec![leaf.cert_der.clone()];
            (leaf, chain)
        }
    }

    pub fn create_credential(
        &mut self,
        options: &CreationOptions,
        record_id: &str,
        origin: &str,
        behavior: &AuthenticatorBehavior,
    ) -> Result<AttestationResponse, SoftError> {
        if !options.pub_key_cred_params.iter().any(|p| p.alg == CoseAlgorithm::Es256.id()) {
            return Err(SoftError::UnsupportedOption("algorithm list excludes ES256".into()));
        }
        if options.challenge.is_empty() {
            return Err(SoftError::InvalidOptions("empty challenge".into()));
        }

        let challenge = match &behavior.wrong_challenge {
            Some(bytes) => encode_base64url(bytes),
            None => options.challenge.clone(),
        };
        let origin = behavior.wrong_origin.as_deref().unwrap_or(origin);
        let client_data_json = format!(
            r#"{{"type":"webauthn.create","challenge":"{}","origin":{},"crossOrigin":false}}"#,
            challenge,
            serde_json::Value::String(origin.to_owned())
        )
        .into_bytes();

        let credential_key = SigningKey::random(&mut self.rng);
        let mut credential_id = [0u8; 16];
        self.rng.fill_bytes(&mut credential_id);
        let point = credential_key.verifying_key().to_encoded_point(false);
        let cose_key = CosePublicKey::Ec2P256 {
            x: point.x().unwrap().as_slice().try_into().unwrap(),
            y: point.y().unwrap().as_slice().try_into().unwrap(),
        };

        let flags = behavior.flags();
        let rp_id = behavior.wrong_rp_id.as_deref().unwrap_or(&options.rp.id);
        let mut auth_data = sha256(rp_id.as_bytes()).to_vec();
        auth_data.push(flags);
        auth_data.extend_from_slice(&behavior.sign_count_start.to_be_bytes());
        if flags & FlagSet::ATTESTED_CREDENTIAL != 0 {
            auth_data.extend_from_slice(&behavior.aaguid);
            auth_data.extend_from_slice(&(credential_id.len() as u16).to_be_bytes());
            auth_data.extend_from_slice(&credential_id);
            auth_data.extend_from_slice(&cbor::to_vec(&cose_key.to_cbor()));
        }
        if flags & FlagSet::EXTENSION_DATA != 0 {
            auth_data.push(0xa0);
        }

        let mut message = auth_data.clone();
        message.extend_from_slice(&sha256(&client_data_json));
        let sign = |key: &SigningKey, corrupt: bool| {
            let signature: Signature = key.sign(&message);
            let mut der = signature.to_der().as_bytes().to_vec();
            if corrupt {
                *der.last_mut().unwrap() ^= 0x01;
            }
            der
        };

        let statement = match behavior.attestation_format {
            SoftAttestation::None => cbor::Value::Map(vec![]),
            SoftAttestation::PackedSelf => packed_statement(sign(&credential_key, behavior.corrupt_signature), None),
            SoftAttestation::PackedX5c => {
                let (leaf, chain) = self.attestation_keys(behavior);
                packed_statement(sign(&leaf.key, behavior.corrupt_signature), Some(chain))
            }
        };
        let fmt = match behavior.attestation_format {
            SoftAttestation::None => "none",
            _ => "packed",
        };
        let attestation_object = cbor::to_vec(&cbor::Value::Map(vec![
            (cbor::Value::text("fmt"), cbor::Value::text(fmt)),
            (cbor::Value::text("attStmt"), statement),
            (cbor::Value::text("authData"), cbor::Value::Bytes(auth_data)),
        ]));

        Ok(AttestationResponse { record_id: record_id.to_owned(), attestation_object, client_data_json })
    }

    /// Byte-identical copy of an earlier response.
    pub fn replay_response(previous: &AttestationResponse) -> AttestationResponse {
        previous.clone()
    }
}

fn packed_statement(sig: Vec<u8>, x5c: Option<Vec<Vec<u8>>>) -> cbor::Value {
    let mut entries = vec![
        (cbor::Value::text("alg"), cbor::Value::integer(CoseAlgorithm::Es256.id())),
        (cbor::Value::text("sig"), cbor::Value::Bytes(sig)),
    ];
    if let Some(chain) = x5c {
        entries.push((cbor::Value::text("x5c"), cbor::Value::Array(chain.into_iter().map(cbor::Value::Bytes).collect())));
    }
    cbor::Value::Map(entries)
}

/// Metadata entry registering the fixture attestation root for `aaguid`.
pub fn fixture_mds_entry(pki: &FixturePki, aaguid: [u8; 16], status: &str) -> pki::FixtureMdsEntry {
    pki::FixtureMdsEntry {
        aaguid,
        description: format!("Fixture authenticator {}", crate::mds::format_aaguid(&aaguid)),
        attestation_roots: vec![pki.attestation_root.cert_der.clone()],
        status: status.to_owned(),
    }
}

/// AAGUID registered in the fixture metadata with a REVOKED status.
pub const REVOKED_AAGUID: [u8; 16] = [
    0xca, 0x41, 0xc4, 0xa0, 0x5e, 0x11, 0x4b, 0x7d, 0x9a, 0x6e, 0x00, 0x00, 0x00, 0x00, 0x00, 0x02,
];

/// Signed metadata blob listing [`FIXTURE_AAGUID`] as certified and
/// [`REVOKED_AAGUID`] as revoked.
pub fn fixture_mds_blob(pki: &FixturePki) -> String {
    let entries = [
        fixture_mds_entry(pki, FIXTURE_AAGUID, "FIDO_CERTIFIED_L1"),
        fixture_mds_entry(pki, REVOKED_AAGUID, "REVOKED"),
    ];
    pki.mds_blob(&entries, chrono::NaiveDate::from_ymd_opt(2049, 12, 1).unwrap())
}

pub fn fixture_trust_store(pki: &FixturePki, now: crate::UnixMillis) -> crate::mds::TrustStore {
    crate::mds::load_mds_blob(
        fixture_mds_blob(pki).as_bytes(),
        &pki.mds_root.cert_der,
        now,
        crate::mds::ExpiryPolicy::Reject,
    )
    .expect("fixture metadata loads")
}
