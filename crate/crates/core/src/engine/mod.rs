//! Challenge issuance and the attestation verification pipeline.
//!
//! [`VerificationEngine::verify_attestation`] runs its checks in a fixed
//! order and reports the first one that fails:
//!
//! 1. client data: ceremony type and origin
//! 2. challenge binding, consuming the single-use record
//! 3. authenticator data: RP ID hash, UP, and UV when required
//! 4. the attestation signature over `authData || SHA-256(clientDataJSON)`
//! 5. strict mode only: the attestation chain against the MDS trust store

mod challenge;

pub use challenge::{
    AuthenticatorSelection, ChallengeRecord, ChallengeStore, ConsumeError, CreationOptions, PubKeyCredParam,
    RelyingParty, UserEntity, CHALLENGE_LEN, DEFAULT_CHALLENGE_TTL, DEFAULT_STORE_CAPACITY,
};

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::RwLock;
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::codec::{
    decode_attestation_object, decode_base64url, encode_base64url, parse_client_data, sha256, AttestationStatement,
    CoseAlgorithm, CosePublicKey, Digest32,
};
use crate::mds::{certificate_public_key, validate_attestation_chain, ChainVerdict, TrustStore};
use crate::UnixMillis;

pub const DEFAULT_CEREMONY_TIMEOUT_MS: u64 = 60_000;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("secure randomness unavailable")]
    EntropyUnavailable,
    #[error("strict mode requires a loaded MDS trust store")]
    MissingTrustStore,
    #[error("unsupported algorithm")]
    UnsupportedAlgorithm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Strict,
    #[default]
    General,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Strict => "strict",
            Mode::General => "general",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationPolicy {
    pub mode: Mode,
    pub expected_origins: Vec<String>,
    pub rp_id: String,
    pub rp_name: String,
    /// Strict mode always requires UV regardless of this flag.
    pub require_uv: bool,
    pub challenge_ttl: Duration,
}

impl VerificationPolicy {
    pub fn new(mode: Mode, rp_id: &str, expected_origins: &[&str]) -> Self {
        VerificationPolicy {
            mode,
            expected_origins: expected_origins.iter().map(|s| (*s).to_owned()).collect(),
            rp_id: rp_id.to_owned(),
            rp_name: rp_id.to_owned(),
            require_uv: mode == Mode::Strict,
            challenge_ttl: DEFAULT_CHALLENGE_TTL,
        }
    }

    pub fn uv_required(&self) -> bool {
        self.require_uv || self.mode == Mode::Strict
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RejectionReason {
    BadSignature,
    ChallengeMismatch,
    ChallengeExpired,
    ChallengeReplayed,
    MissingUserPresence,
    MissingUserVerification,
    OriginMismatch,
    RpIdMismatch,
    UntrustedAuthenticator,
    Malformed,
}

impl RejectionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectionReason::BadSignature => "BadSignature",
            RejectionReason::ChallengeMismatch => "ChallengeMismatch",
            RejectionReason::ChallengeExpired => "ChallengeExpired",
            RejectionReason::ChallengeReplayed => "ChallengeReplayed",
            RejectionReason::MissingUserPresence => "MissingUserPresence",
            RejectionReason::MissingUserVerification => "MissingUserVerification",
            RejectionReason::OriginMismatch => "OriginMismatch",
            RejectionReason::RpIdMismatch => "RpIdMismatch",
            RejectionReason::UntrustedAuthenticator => "UntrustedAuthenticator",
            RejectionReason::Malformed => "Malformed",
        }
    }
}

impl fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Human,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationOutcome {
    pub verdict: Verdict,
    pub rejection_reason: Option<RejectionReason>,
    pub aaguid: Option<[u8; 16]>,
    pub attestation_format: Option<String>,
    /// Recorded for diagnostics only; not enforced.
    pub sign_count: Option<u32>,
}

impl VerificationOutcome {
    pub fn is_human(&self) -> bool {
        self.verdict == Verdict::Human
    }

    fn rejected(reason: RejectionReason) -> Self {
        VerificationOutcome {
            verdict: Verdict::Rejected,
            rejection_reason: Some(reason),
            aaguid: None,
            attestation_format: None,
            sign_count: None,
        }
    }
}

/// What the browser posts back after `navigator.credentials.create()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationResponse {
    pub record_id: String,
    pub attestation_object: Vec<u8>,
    pub client_data_json: Vec<u8>,
}

/// True iff `signature` verifies over `auth_data_bytes || client_data_hash`.
pub fn verify_signature(
    auth_data_bytes: &[u8],
    client_data_hash: &Digest32,
    signature: &[u8],
    key: &CosePublicKey,
) -> Result<bool, EngineError> {
    let public = key.to_public_key().map_err(|_| EngineError::UnsupportedAlgorithm)?;
    Ok(public.verify(key.algorithm(), &signed_message(auth_data_bytes, client_data_hash), signature))
}

fn signed_message(auth_data_bytes: &[u8], client_data_hash: &Digest32) -> Vec<u8> {
    let mut message = Vec::with_capacity(auth_data_bytes.len() + 32);
    message.extend_from_slice(auth_data_bytes);
    message.extend_from_slice(client_data_hash);
    message
}

pub struct VerificationEngine {
    policy: VerificationPolicy,
    rp_id_hash: Digest32,
    challenges: ChallengeStore,
    trust: RwLock<Option<Arc<TrustStore>>>,
}

impl VerificationEngine {
    pub fn new(policy: VerificationPolicy, trust: Option<TrustStore>) -> Result<Self, EngineError> {
        Self::with_store(policy, trust, ChallengeStore::default())
    }

    pub fn with_store(
        policy: VerificationPolicy,
        trust: Option<TrustStore>,
        challenges: ChallengeStore,
    ) -> Result<Self, EngineError> {
        if policy.mode == Mode::Strict && trust.is_none() {
            return Err(EngineError::MissingTrustStore);
        }
        Ok(VerificationEngine {
            rp_id_hash: sha256(policy.rp_id.as_bytes()),
            policy,
            challenges,
            trust: RwLock::new(trust.map(Arc::new)),
        })
    }

    pub fn policy(&self) -> &VerificationPolicy {
        &self.policy
    }

    pub fn challenges(&self) -> &ChallengeStore {
        &self.challenges
    }

    /// Swaps in a freshly loaded trust store.
    pub fn replace_trust_store(&self, store: TrustStore) {
        *self.trust.write() = Some(Arc::new(store));
    }

    pub fn trust_store(&self) -> Option<Arc<TrustStore>> {
        self.trust.read().clone()
    }

    pub fn sweep(&self, now: UnixMillis) -> usize {
        self.challenges.sweep(now, self.policy.challenge_ttl)
    }

    pub fn issue_challenge(&self, now: UnixMillis) -> Result<(ChallengeRecord, CreationOptions), EngineError> {
        let mut challenge = [0u8; CHALLENGE_LEN];
        let mut record_id = [0u8; 16];
        let mut user_id = [0u8; 16];
        for buf in [&mut challenge[..], &mut record_id[..], &mut user_id[..]] {
            OsRng.try_fill_bytes(buf).map_err(|_| EngineError::EntropyUnavailable)?;
        }
        let record = ChallengeRecord {
            record_id: encode_base64url(&record_id),
            challenge,
            issued_at: now,
            rp_id: self.policy.rp_id.clone(),
            consumed: false,
        };
        let options = CreationOptions {
            challenge: encode_base64url(&challenge),
            rp: RelyingParty { id: self.policy.rp_id.clone(), name: self.policy.rp_name.clone() },
            user: UserEntity {
                id: encode_base64url(&user_id),
                name: "visitor".into(),
                display_name: "Visitor".into(),
            },
            pub_key_cred_params: [CoseAlgorithm::Es256, CoseAlgorithm::Rs256]
                .into_iter()
                .map(|alg| PubKeyCredParam { kind: "public-key".into(), alg: alg.id() })
                .collect(),
            authenticator_selection: AuthenticatorSelection {
                // Always requested; whether a missing UV bit is fatal is policy.
                user_verification: "required".into(),
                authenticator_attachment: None,
            },
            attestation: "direct".into(),
            timeout: DEFAULT_CEREMONY_TIMEOUT_MS,
        };
        self.challenges.insert(record.clone());
        Ok((record, options))
    }

    pub fn verify_attestation(&self, response: &AttestationResponse, now: UnixMillis) -> VerificationOutcome {
        use RejectionReason::*;
        let reject = VerificationOutcome::rejected;

        // 1. client data
        let Ok(client) = parse_client_data(&response.client_data_json) else {
            return reject(Malformed);
        };
        if !self.policy.expected_origins.contains(&client.origin) {
            return reject(OriginMismatch);
        }

        // 2. challenge binding
        let Ok(presented) = decode_base64url(&client.challenge) else {
            return reject(ChallengeMismatch);
        };
        if let Err(e) = self.challenges.consume(&response.record_id, &presented, now, self.policy.challenge_ttl) {
            return reject(match e {
                ConsumeError::Mismatch => ChallengeMismatch,
                ConsumeError::Expired => ChallengeExpired,
                ConsumeError::Replayed => ChallengeReplayed,
            });
        }

        // 3. authenticator data
        let Ok(object) = decode_attestation_object(&response.attestation_object) else {
            return reject(Malformed);
        };
        let auth = &object.auth_data;
        if auth.rp_id_hash != self.rp_id_hash {
            return reject(RpIdMismatch);
        }
        if !auth.flags.up() {
            return reject(MissingUserPresence);
        }
        if self.policy.uv_required() && !auth.flags.uv() {
            return reject(MissingUserVerification);
        }
        let Some(credential) = &auth.attested_credential else {
            return reject(Malformed);
        };
        let mut outcome = VerificationOutcome {
            verdict: Verdict::Rejected,
            rejection_reason: None,
            aaguid: Some(credential.aaguid),
            attestation_format: Some(object.format.as_str().to_owned()),
            sign_count: Some(auth.sign_count),
        };
        let fail = |mut outcome: VerificationOutcome, reason| {
            outcome.rejection_reason = Some(reason);
            outcome
        };

        // 4. signature
        let client_hash = client.hash();
        if let AttestationStatement::Packed { alg, sig, x5c } = &object.statement {
            let key = if let Some(leaf) = x5c.first() {
                match certificate_public_key(leaf) {
                    Ok(key) => key,
                    Err(_) => return fail(outcome, BadSignature),
                }
            } else {
                if *alg != credential.public_key.algorithm() {
                    return fail(outcome, BadSignature);
                }
                match credential.public_key.to_public_key() {
                    Ok(key) => key,
                    Err(_) => return fail(outcome, Malformed),
                }
            };
            if !key.verify(*alg, &signed_message(&object.auth_data_bytes, &client_hash), sig) {
                return fail(outcome, BadSignature);
            }
        }

        // 5. trust
        if self.policy.mode == Mode::Strict {
            let x5c = match &object.statement {
                AttestationStatement::Packed { x5c, .. } if !x5c.is_empty() => x5c,
                _ => return fail(outcome, UntrustedAuthenticator),
            };
            let Some(store) = self.trust_store() else {
                return fail(outcome, UntrustedAuthenticator);
            };
            if let ChainVerdict::Untrusted(why) = validate_attestation_chain(x5c, &credential.aaguid, &store, now) {
                log::debug!("attestation chain rejected: {why}");
                return fail(outcome, UntrustedAuthenticator);
            }
        }

        outcome.verdict = Verdict::Human;
        outcome
    }
}
