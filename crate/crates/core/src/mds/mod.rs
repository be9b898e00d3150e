//! Offline FIDO Metadata Service (v3) ingestion and attestation chain
//! validation for strict mode.
//!
//! The blob is a compact JWS whose header carries the signing certificate
//! chain. Loading verifies the JWS signature and the chain up to an
//! operator-supplied root before any entry is accepted; a store is either
//! built from a fully verified blob or not at all.

mod x509;

use std::collections::HashMap;
use std::fmt;

use base64::engine::general_purpose::{STANDARD, URL_SAFE_NO_PAD};
use base64::Engine as _;
use chrono::{NaiveDate, TimeZone, Utc};
use serde::Deserialize;

use crate::codec::{sha256, CoseAlgorithm, Digest32};
use crate::sig::PublicKey;
use crate::UnixMillis;

pub use x509::{parse_certificate_input, ChainFailure};

#[derive(Debug, thiserror::Error)]
pub enum MdsError {
    #[error("MDS blob signature or certificate chain does not verify: {0}")]
    BadBlobSignature(String),
    #[error("malformed MDS blob: {0}")]
    MalformedBlob(String),
    #[error("MDS blob expired: nextUpdate {0} is in the past")]
    ExpiredBlob(NaiveDate),
    #[error("malformed root certificate: {0}")]
    MalformedRoot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetadataStatus {
    Certified,
    Revoked,
    Other,
}

impl MetadataStatus {
    /// Maps an MDS status report string. Key-compromise reports are treated
    /// as revocation.
    pub fn from_report(status: &str) -> Self {
        if status == "REVOKED" || status.ends_with("_COMPROMISE") {
            MetadataStatus::Revoked
        } else if status.starts_with("FIDO_CERTIFIED") {
            MetadataStatus::Certified
        } else {
            MetadataStatus::Other
        }
    }
}

#[derive(Debug, Clone)]
pub struct MetadataEntry {
    pub aaguid: [u8; 16],
    pub description: String,
    pub attestation_root_certificates: Vec<Vec<u8>>,
    pub status: MetadataStatus,
}

#[derive(Clone)]
pub struct TrustStore {
    entries: HashMap<[u8; 16], MetadataEntry>,
    pub loaded_at: UnixMillis,
    pub source_digest: Digest32,
    pub next_update: Option<NaiveDate>,
    pub serial: u64,
}

impl fmt::Debug for TrustStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrustStore")
            .field("entries", &self.entries.len())
            .field("loaded_at", &self.loaded_at)
            .field("serial", &self.serial)
            .finish()
    }
}

impl TrustStore {
    pub fn empty(now: UnixMillis) -> Self {
        TrustStore { entries: HashMap::new(), loaded_at: now, source_digest: sha256(b""), next_update: None, serial: 0 }
    }

    pub fn get(&self, aaguid: &[u8; 16]) -> Option<&MetadataEntry> {
        self.entries.get(aaguid)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpiryPolicy {
    /// Load the blob anyway and log a warning.
    #[default]
    Warn,
    Reject,
}

#[derive(Deserialize)]
struct JwsHeader {
    alg: String,
    #[serde(default)]
    x5c: Vec<String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct BlobPayload {
    #[serde(default)]
    no: u64,
    next_update: String,
    entries: Vec<BlobEntry>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct BlobEntry {
    aaguid: Option<String>,
    metadata_statement: Option<MetadataStatement>,
    #[serde(default)]
    status_reports: Vec<StatusReport>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct MetadataStatement {
    #[serde(default)]
    description: String,
    #[serde(default)]
    attestation_root_certificates: Vec<String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct StatusReport {
    status: String,
    effective_date: Option<String>,
}

fn malformed(msg: impl fmt::Display) -> MdsError {
    MdsError::MalformedBlob(msg.to_string())
}

/// Verifies and ingests an MDS blob. `root_certificate` is DER or PEM.
pub fn load_mds_blob(
    blob_bytes: &[u8],
    root_certificate: &[u8],
    now: UnixMillis,
    expiry: ExpiryPolicy,
) -> Result<TrustStore, MdsError> {
    let root_der = parse_certificate_input(root_certificate).map_err(MdsError::MalformedRoot)?;
    let text = std::str::from_utf8(blob_bytes).map_err(|_| malformed("blob is not UTF-8"))?.trim();
    let mut segments = text.split('.');
    let (Some(header_b64), Some(payload_b64), Some(sig_b64), None) =
        (segments.next(), segments.next(), segments.next(), segments.next())
    else {
        return Err(malformed("expected three dot-separated segments"));
    };
    let decode = |s: &str, what: &str| URL_SAFE_NO_PAD.decode(s).map_err(|_| malformed(format!("{what} is not base64url")));
    let header: JwsHeader =
        serde_json::from_slice(&decode(header_b64, "header")?).map_err(|e| malformed(format!("header: {e}")))?;
    let signature = decode(sig_b64, "signature")?;
    let payload_bytes = decode(payload_b64, "payload")?;

    if header.x5c.is_empty() {
        return Err(malformed("header has no x5c chain"));
    }
    let chain: Vec<Vec<u8>> = header
        .x5c
        .iter()
        .map(|c| STANDARD.decode(c).map_err(|_| malformed("x5c entry is not base64")))
        .collect::<Result<_, _>>()?;
    x509::verify_chain_to_roots(&chain, std::slice::from_ref(&root_der), now)
        .map_err(|f| MdsError::BadBlobSignature(f.to_string()))?;

    let signer = x509::leaf_public_key(&chain[0]).map_err(|f| MdsError::BadBlobSignature(f.to_string()))?;
    let signing_input = &text.as_bytes()[..header_b64.len() + 1 + payload_b64.len()];
    let signature_ok = match header.alg.as_str() {
        "ES256" => signer.verify_jose_es256(signing_input, &signature),
        "RS256" => signer.verify(CoseAlgorithm::Rs256, signing_input, &signature),
        other => return Err(malformed(format!("unsupported JWS alg {other}"))),
    };
    if !signature_ok {
        return Err(MdsError::BadBlobSignature("JWS signature mismatch".into()));
    }

    let payload: BlobPayload =
        serde_json::from_slice(&payload_bytes).map_err(|e| malformed(format!("payload: {e}")))?;
    let next_update = NaiveDate::parse_from_str(&payload.next_update, "%Y-%m-%d")
        .map_err(|_| malformed("nextUpdate is not a date"))?;
    let today = Utc.timestamp_millis_opt(now.0 as i64).single().map(|t| t.date_naive());
    if today.is_some_and(|today| next_update < today) {
        match expiry {
            ExpiryPolicy::Reject => return Err(MdsError::ExpiredBlob(next_update)),
            ExpiryPolicy::Warn => log::warn!("loading MDS blob #{} past its nextUpdate {next_update}", payload.no),
        }
    }

    let mut entries = HashMap::new();
    for entry in payload.entries {
        // Entries without an AAGUID describe U2F devices keyed by certificate
        // key identifiers; the registration flow cannot use them.
        let Some(aaguid_text) = entry.aaguid else { continue };
        let aaguid = parse_aaguid(&aaguid_text).ok_or_else(|| malformed(format!("bad aaguid {aaguid_text:?}")))?;
        let statement = entry.metadata_statement.ok_or_else(|| malformed("entry without metadataStatement"))?;
        let roots = statement
            .attestation_root_certificates
            .iter()
            .map(|c| STANDARD.decode(c).map_err(|_| malformed("attestation root is not base64")))
            .collect::<Result<Vec<_>, _>>()?;
        let status = latest_status(&entry.status_reports);
        entries.insert(
            aaguid,
            MetadataEntry { aaguid, description: statement.description, attestation_root_certificates: roots, status },
        );
    }

    Ok(TrustStore { entries, loaded_at: now, source_digest: sha256(blob_bytes), next_update: Some(next_update), serial: payload.no })
}

/// Status of the report with the latest effective date; later entries win ties.
fn latest_status(reports: &[StatusReport]) -> MetadataStatus {
    reports
        .iter()
        .enumerate()
        .max_by_key(|(i, r)| (r.effective_date.clone().unwrap_or_default(), *i))
        .map(|(_, r)| MetadataStatus::from_report(&r.status))
        .unwrap_or(MetadataStatus::Other)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainVerdict {
    Trusted,
    Untrusted(ChainFailure),
}

impl ChainVerdict {
    pub fn is_trusted(&self) -> bool {
        matches!(self, ChainVerdict::Trusted)
    }
}

/// Checks an attestation chain (leaf first) against the metadata entry for
/// `aaguid`.
pub fn validate_attestation_chain(x5c: &[Vec<u8>], aaguid: &[u8; 16], store: &TrustStore, now: UnixMillis) -> ChainVerdict {
    let Some(entry) = store.get(aaguid) else {
        return ChainVerdict::Untrusted(ChainFailure::UnknownAaguid);
    };
    if entry.status == MetadataStatus::Revoked {
        return ChainVerdict::Untrusted(ChainFailure::Revoked);
    }
    if x5c.is_empty() {
        return ChainVerdict::Untrusted(ChainFailure::EmptyChain);
    }
    if let Err(f) = x509::check_leaf_aaguid(&x5c[0], aaguid) {
        return ChainVerdict::Untrusted(f);
    }
    match x509::verify_chain_to_roots(x5c, &entry.attestation_root_certificates, now) {
        Ok(()) => ChainVerdict::Trusted,
        Err(f) => ChainVerdict::Untrusted(f),
    }
}

/// Public key of a DER certificate, for packed attestation signatures.
pub fn certificate_public_key(der: &[u8]) -> Result<PublicKey, ChainFailure> {
    x509::leaf_public_key(der)
}

pub fn format_aaguid(aaguid: &[u8; 16]) -> String {
    let hex: String = aaguid.iter().map(|b| format!("{b:02x}")).collect();
    format!("{}-{}-{}-{}-{}", &hex[..8], &hex[8..12], &hex[12..16], &hex[16..20], &hex[20..])
}

pub fn parse_aaguid(text: &str) -> Option<[u8; 16]> {
    let hex: String = text.chars().filter(|&c| c != '-').collect();
    if hex.len() != 32 || text.len() != 36 {
        return None;
    }
    let mut out = [0u8; 16];
    for (i, byte) in out.iter_mut().enumerate() {
        *byte = u8::from_str_radix(hex.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::soft::pki::{FixtureMdsEntry, FixturePki, Validity};

    const NOW: UnixMillis = UnixMillis(1_760_000_000_000); // 2025-10-09
    const REGISTERED: [u8; 16] = [0x11; 16];
    const OTHER: [u8; 16] = [0x22; 16];

    fn next_year() -> NaiveDate {
        NaiveDate::from_ymd_opt(2026, 10, 1).unwrap()
    }

    fn entry(pki: &FixturePki, aaguid: [u8; 16], status: &str) -> FixtureMdsEntry {
        FixtureMdsEntry {
            aaguid,
            description: "fixture key".into(),
            attestation_roots: vec![pki.attestation_root.cert_der.clone()],
            status: status.into(),
        }
    }

    fn store(pki: &FixturePki, entries: &[FixtureMdsEntry]) -> TrustStore {
        let blob = pki.mds_blob(entries, next_year());
        load_mds_blob(blob.as_bytes(), &pki.mds_root.cert_der, NOW, ExpiryPolicy::Reject).unwrap()
    }

    #[test]
    fn loads_two_entries() {
        let pki = FixturePki::new(1);
        let s = store(&pki, &[entry(&pki, REGISTERED, "FIDO_CERTIFIED_L1"), entry(&pki, OTHER, "REVOKED")]);
        assert_eq!(s.len(), 2);
        assert_eq!(s.get(&REGISTERED).unwrap().status, MetadataStatus::Certified);
        assert_eq!(s.get(&OTHER).unwrap().status, MetadataStatus::Revoked);
        assert_eq!(s.serial, 1);
    }

    #[test]
    fn flipped_signature_byte_is_rejected() {
        let pki = FixturePki::new(1);
        let blob = pki.mds_blob(&[entry(&pki, REGISTERED, "FIDO_CERTIFIED")], next_year());
        let (input, sig) = blob.rsplit_once('.').unwrap();
        let mut sig = URL_SAFE_NO_PAD.decode(sig).unwrap();
        *sig.last_mut().unwrap() ^= 0x01;
        let tampered = format!("{input}.{}", URL_SAFE_NO_PAD.encode(sig));
        assert!(matches!(
            load_mds_blob(tampered.as_bytes(), &pki.mds_root.cert_der, NOW, ExpiryPolicy::Warn),
            Err(MdsError::BadBlobSignature(_))
        ));
    }

    #[test]
    fn tampered_payload_is_rejected() {
        let pki = FixturePki::new(1);
        let blob = pki.mds_blob(&[entry(&pki, REGISTERED, "REVOKED")], next_year());
        let mut parts: Vec<String> = blob.split('.').map(str::to_owned).collect();
        let payload = String::from_utf8(URL_SAFE_NO_PAD.decode(&parts[1]).unwrap()).unwrap();
        parts[1] = URL_SAFE_NO_PAD.encode(payload.replace("REVOKED", "FIDO_CERTIFIED"));
        let tampered = parts.join(".");
        assert!(matches!(
            load_mds_blob(tampered.as_bytes(), &pki.mds_root.cert_der, NOW, ExpiryPolicy::Warn),
            Err(MdsError::BadBlobSignature(_))
        ));
    }

    #[test]
    fn blob_signed_under_foreign_root_is_rejected() {
        let pki = FixturePki::new(1);
        let foreign = FixturePki::new(2);
        let blob = foreign.mds_blob(&[], next_year());
        assert!(matches!(
            load_mds_blob(blob.as_bytes(), &pki.mds_root.cert_der, NOW, ExpiryPolicy::Warn),
            Err(MdsError::BadBlobSignature(_))
        ));
    }

    #[test]
    fn empty_store_trusts_nothing() {
        let pki = FixturePki::new(1);
        let s = store(&pki, &[]);
        assert!(s.is_empty());
        let leaf = pki.issue_attestation(REGISTERED);
        assert_eq!(
            validate_attestation_chain(&[leaf.cert_der], &REGISTERED, &s, NOW),
            ChainVerdict::Untrusted(ChainFailure::UnknownAaguid)
        );
    }

    #[test]
    fn expiry_policy() {
        let pki = FixturePki::new(1);
        let stale = NaiveDate::from_ymd_opt(2025, 1, 1).unwrap();
        let blob = pki.mds_blob(&[], stale);
        assert!(matches!(
            load_mds_blob(blob.as_bytes(), &pki.mds_root.cert_der, NOW, ExpiryPolicy::Reject),
            Err(MdsError::ExpiredBlob(d)) if d == stale
        ));
        assert!(load_mds_blob(blob.as_bytes(), &pki.mds_root.cert_der, NOW, ExpiryPolicy::Warn).is_ok());
    }

    #[test]
    fn garbage_blobs_are_malformed() {
        let pki = FixturePki::new(1);
        for blob in ["", "a.b", "a.b.c.d", "!!.!!.!!"] {
            assert!(
                matches!(load_mds_blob(blob.as_bytes(), &pki.mds_root.cert_der, NOW, ExpiryPolicy::Warn), Err(MdsError::MalformedBlob(_))),
                "{blob:?}"
            );
        }
    }

    #[test]
    fn root_accepts_pem() {
        let pki = FixturePki::new(1);
        let pem = crate::soft::pki::pem_encode("CERTIFICATE", &pki.mds_root.cert_der);
        let blob = pki.mds_blob(&[], next_year());
        assert!(load_mds_blob(blob.as_bytes(), pem.as_bytes(), NOW, ExpiryPolicy::Reject).is_ok());
    }

    #[test]
    fn chain_validation_outcomes() {
        let pki = FixturePki::new(1);
        let leaf = pki.issue_attestation(REGISTERED).cert_der;
        let certified = store(&pki, &[entry(&pki, REGISTERED, "FIDO_CERTIFIED_L2")]);
        assert_eq!(validate_attestation_chain(std::slice::from_ref(&leaf), &REGISTERED, &certified, NOW), ChainVerdict::Trusted);

        let missing = store(&pki, &[entry(&pki, OTHER, "FIDO_CERTIFIED_L2")]);
        assert_eq!(
            validate_attestation_chain(std::slice::from_ref(&leaf), &REGISTERED, &missing, NOW),
            ChainVerdict::Untrusted(ChainFailure::UnknownAaguid)
        );

        let revoked = store(&pki, &[entry(&pki, REGISTERED, "REVOKED")]);
        assert_eq!(
            validate_attestation_chain(std::slice::from_ref(&leaf), &REGISTERED, &revoked, NOW),
            ChainVerdict::Untrusted(ChainFailure::Revoked)
        );

        // Certificate for another model presented under the registered aaguid.
        let other_leaf = pki.issue_attestation(OTHER).cert_der;
        assert_eq!(
            validate_attestation_chain(&[other_leaf], &REGISTERED, &certified, NOW),
            ChainVerdict::Untrusted(ChainFailure::AaguidMismatch)
        );

        let rogue = pki.rogue_root("Rogue Root");
        let rogue_leaf = pki.issue_attestation_with(REGISTERED, &rogue, Validity::default()).cert_der;
        assert!(matches!(
            validate_attestation_chain(&[rogue_leaf], &REGISTERED, &certified, NOW),
            ChainVerdict::Untrusted(ChainFailure::NoTrustedRoot)
        ));

        let expired = Validity {
            not_before: Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(),
            not_after: Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap(),
        };
        let old_leaf = pki.issue_attestation_with(REGISTERED, &pki.attestation_root, expired).cert_der;
        assert!(matches!(
            validate_attestation_chain(&[old_leaf], &REGISTERED, &certified, NOW),
            ChainVerdict::Untrusted(ChainFailure::OutsideValidity)
        ));
    }

    #[test]
    fn chain_validation_is_deterministic() {
        let pki = FixturePki::new(3);
        let leaf = pki.issue_attestation(REGISTERED).cert_der;
        let s = store(&pki, &[entry(&pki, REGISTERED, "FIDO_CERTIFIED")]);
        let first = validate_attestation_chain(std::slice::from_ref(&leaf), &REGISTERED, &s, NOW);
        for _ in 0..10 {
            assert_eq!(validate_attestation_chain(std::slice::from_ref(&leaf), &REGISTERED, &s, NOW), first);
        }
    }

    #[test]
    fn aaguid_text_round_trip() {
        let a = [0x01, 0x23, 0x45, 0x67, 0x89, 0xab, 0xcd, 0xef, 0, 1, 2, 3, 4, 5, 6, 7];
        let text = format_aaguid(&a);
        assert_eq!(text, "01234567-89ab-cdef-0001-020304050607");
        assert_eq!(parse_aaguid(&text), Some(a));
        assert_eq!(parse_aaguid("0123456789abcdef0001020304050607"), None);
    }
}
