//! Deterministic test PKI: an MDS root and blob signer, an attestation
//! root that issues per-AAGUID attestation certificates, and a localhost
//! TLS identity for development runs.

use std::sync::atomic::{AtomicU64, Ordering};

use base64::engine::general_purpose::{STANDARD, URL_SAFE_NO_PAD};
use base64::Engine as _;
use chrono::{DateTime, NaiveDate, TimeZone, Utc};
use p256::ecdsa::signature::Signer;
use p256::ecdsa::{Signature, SigningKey, VerifyingKey};
use p256::pkcs8::EncodePrivateKey;

use super::der;
use crate::codec::sha256;
use crate::mds::format_aaguid;

const OID_ECDSA_SHA256: &str = "1.2.840.10045.4.3.2";
const OID_EC_PUBLIC_KEY: &str = "1.2.840.10045.2.1";
const OID_PRIME256V1: &str = "1.2.840.10045.3.1.7";
const OID_BASIC_CONSTRAINTS: &str = "2.5.29.19";
const OID_KEY_USAGE: &str = "2.5.29.15";
const OID_SUBJECT_ALT_NAME: &str = "2.5.29.17";
const OID_EXT_KEY_USAGE: &str = "2.5.29.37";
const OID_SERVER_AUTH: &str = "1.3.6.1.5.5.7.3.1";
pub const OID_FIDO_AAGUID: &str = "1.3.6.1.4.1.45724.1.1.4";

const OID_COUNTRY: &str = "2.5.4.6";
const OID_ORG: &str = "2.5.4.10";
const OID_ORG_UNIT: &str = "2.5.4.11";
const OID_COMMON_NAME: &str = "2.5.4.3";

/// A signing key together with the certificate binding it.
#[derive(Clone)]
pub struct CertifiedKey {
    pub key: SigningKey,
    pub cert_der: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Validity {
    pub not_before: DateTime<Utc>,
    pub not_after: DateTime<Utc>,
}

impl Default for Validity {
    fn default() -> Self {
        Validity {
            not_before: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
            not_after: Utc.with_ymd_and_hms(2049, 12, 31, 23, 59, 59).unwrap(),
        }
    }
}

/// What goes into one fixture MDS entry.
#[derive(Debug, Clone)]
pub struct FixtureMdsEntry {
    pub aaguid: [u8; 16],
    pub description: String,
    pub attestation_roots: Vec<Vec<u8>>,
    /// An MDS status string such as "FIDO_CERTIFIED_L1" or "REVOKED".
    pub status: String,
}

pub struct TlsIdentity {
    pub cert_der: Vec<u8>,
    pub key_pkcs8_der: Vec<u8>,
    pub root_der: Vec<u8>,
}

pub struct FixturePki {
    seed: u64,
    pub mds_root: CertifiedKey,
    pub mds_signer: CertifiedKey,
    pub attestation_root: CertifiedKey,
    serial: AtomicU64,
}

type Name = Vec<(&'static str, String)>;

fn name(cn: &str, ou: Option<&str>) -> Name {
    let mut n = vec![(OID_COUNTRY, "US".to_owned()), (OID_ORG, "Cahicha Test Fixtures".to_owned())];
    if let Some(ou) = ou {
        n.push((OID_ORG_UNIT, ou.to_owned()));
    }
    n.push((OID_COMMON_NAME, cn.to_owned()));
    n
}

fn encode_name(name: &Name) -> Vec<u8> {
    let rdns: Vec<Vec<u8>> = name
        .iter()
        .map(|(oid, value)| {
            let value = if *oid == OID_COUNTRY { der::printable(value) } else { der::utf8(value) };
            der::set(&[der::seq(&[der::oid(oid), value])])
        })
        .collect();
    der::seq(&rdns)
}

fn extension(oid: &str, critical: bool, value: Vec<u8>) -> Vec<u8> {
    let mut parts = vec![der::oid(oid)];
    if critical {
        parts.push(der::boolean(true));
    }
    parts.push(der::octets(&value));
    der::seq(&parts)
}

pub fn spki(key: &VerifyingKey) -> Vec<u8> {
    der::seq(&[
        der::seq(&[der::oid(OID_EC_PUBLIC_KEY), der::oid(OID_PRIME256V1)]),
        der::bits(key.to_encoded_point(false).as_bytes()),
    ])
}

/// Parameters for one certificate.
pub struct CertParams<'a> {
    pub serial: u64,
    pub subject: Name,
    pub subject_key: &'a VerifyingKey,
    pub issuer: Name,
    pub issuer_key: &'a SigningKey,
    pub validity: Validity,
    pub is_ca: bool,
    pub aaguid: Option<[u8; 16]>,
    pub dns_name: Option<&'a str>,
}

pub fn issue_certificate(p: &CertParams<'_>) -> Vec<u8> {
    let alg = der::seq(&[der::oid(OID_ECDSA_SHA256)]);
    let mut extensions = Vec::new();
    if p.is_ca {
        extensions.push(extension(OID_BASIC_CONSTRAINTS, true, der::seq(&[der::boolean(true)])));
        // keyCertSign | cRLSign
        extensions.push(extension(OID_KEY_USAGE, true, der::tlv(0x03, &[0x01, 0x06])));
    } else {
        extensions.push(extension(OID_BASIC_CONSTRAINTS, true, der::seq(&[])));
    }
    if let Some(aaguid) = p.aaguid {
        extensions.push(extension(OID_FIDO_AAGUID, false, der::octets(&aaguid)));
    }
    if let Some(host) = p.dns_name {
        let general_names = der::seq(&[der::tlv(0x82, host.as_bytes()), der::tlv(0x87, &[127, 0, 0, 1])]);
        extensions.push(extension(OID_SUBJECT_ALT_NAME, false, general_names));
        extensions.push(extension(OID_EXT_KEY_USAGE, false, der::seq(&[der::oid(OID_SERVER_AUTH)])));
    }
    let tbs = der::seq(&[
        der::explicit(0, &der::small_uint(2)),
        der::small_uint(p.serial),
        alg.clone(),
        encode_name(&p.issuer),
        der::seq(&[der::time(p.validity.not_before), der::time(p.validity.not_after)]),
        encode_name(&p.subject),
        spki(p.subject_key),
        der::explicit(3, &der::seq(&extensions)),
    ]);
    let signature: Signature = p.issuer_key.sign(&tbs);
    der::seq(&[tbs, alg, der::bits(signature.to_der().as_bytes())])
}

/// A P-256 key derived from the fixture seed and a label.
pub fn derive_key(seed: u64, label: &[u8]) -> SigningKey {
    let mut material = seed.to_be_bytes().to_vec();
    material.extend_from_slice(label);
    let mut counter = 0u8;
    loop {
        let mut m = material.clone();
        m.push(counter);
        if let Ok(key) = SigningKey::from_slice(&sha256(&m)) {
            return key;
        }
        counter += 1;
    }
}

impl FixturePki {
    pub fn new(seed: u64) -> Self {
        let self_signed = |label: &[u8], cn: &str, serial| {
            let key = derive_key(seed, label);
            let cert_der = issue_certificate(&CertParams {
                serial,
                subject: name(cn, None),
                subject_key: key.verifying_key(),
                issuer: name(cn, None),
                issuer_key: &key,
                validity: Validity::default(),
                is_ca: true,
                aaguid: None,
                dns_name: None,
            });
            CertifiedKey { key, cert_der }
        };
        let mds_root = self_signed(b"mds-root", "Fixture MDS Root", 1);
        let attestation_root = self_signed(b"attestation-root", "Fixture Attestation Root", 2);
        let signer_key = derive_key(seed, b"mds-signer");
        let signer_cert = issue_certificate(&CertParams {
            serial: 3,
            subject: name("Fixture MDS Signer", None),
            subject_key: signer_key.verifying_key(),
            issuer: name("Fixture MDS Root", None),
            issuer_key: &mds_root.key,
            validity: Validity::default(),
            is_ca: false,
            aaguid: None,
            dns_name: None,
        });
        FixturePki {
            seed,
            mds_root,
            mds_signer: CertifiedKey { key: signer_key, cert_der: signer_cert },
            attestation_root,
            serial: AtomicU64::new(100),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Attestation certificate for one authenticator model. The key is a
    /// function of (seed, aaguid), so repeated calls agree.
    pub fn issue_attestation(&self, aaguid: [u8; 16]) -> CertifiedKey {
        self.issue_attestation_with(aaguid, &self.attestation_root, Validity::default())
    }

    pub fn issue_attestation_with(&self, aaguid: [u8; 16], issuer: &CertifiedKey, validity: Validity) -> CertifiedKey {
        let mut label = b"attestation/".to_vec();
        label.extend_from_slice(&aaguid);
        let key = derive_key(self.seed, &label);
        let serial = u64::from_be_bytes(sha256(&label)[..8].try_into().unwrap()) >> 1;
        let issuer_name = issuer_common_name(&issuer.cert_der);
        let cert_der = issue_certificate(&CertParams {
            serial,
            subject: name(&format!("Fixture Authenticator {}", format_aaguid(&aaguid)), Some("Authenticator Attestation")),
            subject_key: key.verifying_key(),
            issuer: name(&issuer_name, None),
            issuer_key: &issuer.key,
            validity,
            is_ca: false,
            aaguid: Some(aaguid),
            dns_name: None,
        });
        CertifiedKey { key, cert_der }
    }

    /// A self-signed CA that is not the attestation root, for negative tests.
    pub fn rogue_root(&self, label: &str) -> CertifiedKey {
        let key = derive_key(self.seed, format!("rogue/{label}").as_bytes());
        let cert_der = issue_certificate(&CertParams {
            serial: self.serial.fetch_add(1, Ordering::Relaxed),
            subject: name(label, None),
            subject_key: key.verifying_key(),
            issuer: name(label, None),
            issuer_key: &key,
            validity: Validity::default(),
            is_ca: true,
            aaguid: None,
            dns_name: None,
        });
        CertifiedKey { key, cert_der }
    }

    /// Compact JWS over an MDS v3 style payload, signed by the fixture signer.
    pub fn mds_blob(&self, entries: &[FixtureMdsEntry], next_update: NaiveDate) -> String {
        self.mds_blob_signed_by(entries, next_update, &self.mds_signer)
    }

    pub fn mds_blob_signed_by(&self, entries: &[FixtureMdsEntry], next_update: NaiveDate, signer: &CertifiedKey) -> String {
        let header = serde_json::json!({
            "alg": "ES256",
            "typ": "JWT",
            "x5c": [STANDARD.encode(&signer.cert_der)],
        });
        let entries: Vec<serde_json::Value> = entries
            .iter()
            .map(|e| {
                let aaguid = format_aaguid(&e.aaguid);
                serde_json::json!({
                    "aaguid": aaguid,
                    "metadataStatement": {
                        "aaguid": aaguid,
                        "description": e.description,
                        "protocolFamily": "fido2",
                        "attestationTypes": ["basic_full"],
                        "attestationRootCertificates":
                            e.attestation_roots.iter().map(|c| STANDARD.encode(c)).collect::<Vec<_>>(),
                    },
                    "statusReports": [{ "status": e.status, "effectiveDate": "2024-01-01" }],
                    "timeOfLastStatusChange": "2024-01-01",
                })
            })
            .collect();
        let payload = serde_json::json!({
            "legalHeader": "Fixture metadata for tests only.",
            "no": 1,
            "nextUpdate": next_update.format("%Y-%m-%d").to_string(),
            "entries": entries,
        });
        let signing_input = format!(
            "{}.{}",
            URL_SAFE_NO_PAD.encode(header.to_string()),
            URL_SAFE_NO_PAD.encode(payload.to_string())
        );
        let signature: Signature = signer.key.sign(signing_input.as_bytes());
        format!("{signing_input}.{}", URL_SAFE_NO_PAD.encode(signature.to_bytes()))
    }

    /// Server certificate for `host` (and 127.0.0.1) under a dedicated dev root.
    pub fn tls_identity(&self, host: &str) -> TlsIdentity {
        let root_key = derive_key(self.seed, b"tls-root");
        let root_name = name("Cahicha Development Root", None);
        let root_der = issue_certificate(&CertParams {
            serial: 10,
            subject: root_name.clone(),
            subject_key: root_key.verifying_key(),
            issuer: root_name.clone(),
            issuer_key: &root_key,
            validity: Validity::default(),
            is_ca: true,
            aaguid: None,
            dns_name: None,
        });
        let leaf_key = derive_key(self.seed, format!("tls/{host}").as_bytes());
        let cert_der = issue_certificate(&CertParams {
            serial: 11,
            subject: name(host, None),
            subject_key: leaf_key.verifying_key(),
            issuer: root_name,
            issuer_key: &root_key,
            validity: Validity::default(),
            is_ca: false,
            aaguid: None,
            dns_name: Some(host),
        });
        let key_pkcs8_der = leaf_key.to_pkcs8_der().expect("PKCS#8 encoding").as_bytes().to_vec();
        TlsIdentity { cert_der, key_pkcs8_der, root_der }
    }
}

fn issuer_common_name(cert_der: &[u8]) -> String {
    use x509_parser::prelude::*;
    let (_, cert) = X509Certificate::from_der(cert_der).expect("fixture issuer certificate parses");
    let cn = cert
        .subject()
        .iter_common_name()
        .next()
        .and_then(|cn| cn.as_str().ok())
        .unwrap_or_default()
        .to_owned();
    cn
}

/// PEM armor with 64-column base64 lines.
pub fn pem_encode(label: &str, der: &[u8]) -> String {
    let b64 = STANDARD.encode(der);
    let mut out = format!("-----BEGIN {label}-----\n");
    for chunk in b64.as_bytes().chunks(64) {
        out.push_str(std::str::from_utf8(chunk).unwrap());
        out.push('\n');
    }
    out.push_str(&format!("-----END {label}-----\n"));
    out
}
