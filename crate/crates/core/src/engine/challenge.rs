use std::collections::{HashMap, VecDeque};
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::UnixMillis;

pub const CHALLENGE_LEN: usize = 32;
pub const DEFAULT_CHALLENGE_TTL: Duration = Duration::from_secs(120);
pub const DEFAULT_STORE_CAPACITY: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChallengeRecord {
    pub record_id: String,
    pub challenge: [u8; CHALLENGE_LEN],
    pub issued_at: UnixMillis,
    pub rp_id: String,
    pub consumed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsumeError {
    Mismatch,
    Expired,
    Replayed,
}

#[derive(Default)]
struct Inner {
    records: HashMap<String, ChallengeRecord>,
    // Issue order, for evicting the oldest pending record when full. May hold
    // ids that were already swept; those are skipped lazily.
    order: VecDeque<String>,
}

/// In-memory single-use challenge registry. Consumption is a
/// check-and-set under one lock, so concurrent submissions of the same
/// response see exactly one success.
pub struct ChallengeStore {
    inner: Mutex<Inner>,
    capacity: usize,
}

impl Default for ChallengeStore {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_STORE_CAPACITY)
    }
}

impl ChallengeStore {
    pub fn with_capacity(capacity: usize) -> Self {
        ChallengeStore { inner: Mutex::new(Inner::default()), capacity: capacity.max(1) }
    }

    pub fn insert(&self, record: ChallengeRecord) {
        let mut inner = self.inner.lock();
        while inner.records.len() >= self.capacity {
            match inner.order.pop_front() {
                Some(oldest) => {
                    inner.records.remove(&oldest);
                }
                None => break,
            }
        }
        inner.order.push_back(record.record_id.clone());
        inner.records.insert(record.record_id.clone(), record);
    }

    /// Marks the record consumed if `presented` matches its challenge and it
    /// is fresh and unused.
    pub fn consume(
        &self,
        record_id: &str,
        presented: &[u8],
        now: UnixMillis,
        ttl: Duration,
    ) -> Result<ChallengeRecord, ConsumeError> {
        let mut inner = self.inner.lock();
        let record = inner.records.get_mut(record_id).ok_or(ConsumeError::Mismatch)?;
        if record.challenge[..] != *presented {
            return Err(ConsumeError::Mismatch);
        }
        if record.consumed {
            return Err(ConsumeError::Replayed);
        }
        if now.since(record.issued_at) > ttl {
            return Err(ConsumeError::Expired);
        }
        record.consumed = true;
        Ok(record.clone())
    }

    /// Drops records older than `ttl`. Returns how many were removed.
    pub fn sweep(&self, now: UnixMillis, ttl: Duration) -> usize {
        let mut inner = self.inner.lock();
        let before = inner.records.len();
        inner.records.retain(|_, r| now.since(r.issued_at) <= ttl);
        let Inner { records, order } = &mut *inner;
        order.retain(|id| records.contains_key(id));
        before - inner.records.len()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelyingParty {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct UserEntity {
    /// base64url of random ephemeral bytes.
    pub id: String,
    pub name: String,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PubKeyCredParam {
    #[serde(rename = "type")]
    pub kind: String,
    pub alg: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AuthenticatorSelection {
    pub user_verification: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authenticator_attachment: Option<String>,
}

/// `PublicKeyCredentialCreationOptions` in its JSON transport form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CreationOptions {
    pub challenge: String,
    pub rp: RelyingParty,
    pub user: UserEntity,
    pub pub_key_cred_params: Vec<PubKeyCredParam>,
    pub authenticator_selection: AuthenticatorSelection,
    pub attestation: String,
    pub timeout: u64,
}
