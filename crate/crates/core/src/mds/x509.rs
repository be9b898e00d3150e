use std::fmt;

use x509_parser::prelude::*;

use crate::codec::CoseAlgorithm;
use crate::sig::PublicKey;
use crate::soft::pki::OID_FIDO_AAGUID;
use crate::UnixMillis;

const OID_ECDSA_SHA256: &str = "1.2.840.10045.4.3.2";
const OID_RSA_SHA256: &str = "1.2.840.113549.1.1.11";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainFailure {
    UnknownAaguid,
    Revoked,
    EmptyChain,
    Unparsable,
    AaguidMismatch,
    OutsideValidity,
    IssuerNotCa,
    BadSignature,
    UnsupportedKey,
    NoTrustedRoot,
}

impl fmt::Display for ChainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            ChainFailure::UnknownAaguid => "aaguid not present in trust store",
            ChainFailure::Revoked => "metadata entry is revoked",
            ChainFailure::EmptyChain => "empty certificate chain",
            ChainFailure::Unparsable => "certificate does not parse",
            ChainFailure::AaguidMismatch => "attestation certificate aaguid differs from authenticator data",
            ChainFailure::OutsideValidity => "certificate outside its validity period",
            ChainFailure::IssuerNotCa => "issuing certificate is not a CA",
            ChainFailure::BadSignature => "certificate signature does not verify",
            ChainFailure::UnsupportedKey => "unsupported certificate key or signature algorithm",
            ChainFailure::NoTrustedRoot => "chain does not end at a trusted root",
        };
        f.write_str(text)
    }
}

/// Accepts a PEM or DER certificate and returns the DER bytes.
pub fn parse_certificate_input(bytes: &[u8]) -> Result<Vec<u8>, String> {
    let der = if bytes.trim_ascii_start().starts_with(b"-----BEGIN") {
        let (_, pem) = x509_parser::pem::parse_x509_pem(bytes).map_err(|e| e.to_string())?;
        pem.contents
    } else {
        bytes.to_vec()
    };
    X509Certificate::from_der(&der).map_err(|e| e.to_string())?;
    Ok(der)
}

/// x509-parser tolerates sloppy tags and OIDs in the outer certificate
/// framing, which the certificate signature does not cover. Requiring the
/// input to equal its canonical re-encoding closes that gap; everything
/// inside the TBS is protected by the signature itself.
fn canonical_framing(der: &[u8], cert: &X509Certificate<'_>) -> bool {
    use crate::soft::der as enc;
    let algorithm = match cert.signature_algorithm.algorithm.to_id_string().as_str() {
        OID_ECDSA_SHA256 => enc::seq(&[enc::oid(OID_ECDSA_SHA256)]),
        OID_RSA_SHA256 => enc::seq(&[enc::oid(OID_RSA_SHA256), vec![0x05, 0x00]]),
        _ => return true,
    };
    if cert.signature_value.unused_bits != 0 {
        return false;
    }
    let rebuilt = enc::seq(&[
        cert.tbs_certificate.as_ref().to_vec(),
        algorithm,
        enc::bits(&cert.signature_value.data),
    ]);
    rebuilt == der
}

fn parse(der: &[u8]) -> Result<X509Certificate<'_>, ChainFailure> {
    match X509Certificate::from_der(der) {
        Ok((rest, cert)) if rest.is_empty() && canonical_framing(der, &cert) => Ok(cert),
        _ => Err(ChainFailure::Unparsable),
    }
}

pub(crate) fn leaf_public_key(der: &[u8]) -> Result<PublicKey, ChainFailure> {
    let cert = parse(der)?;
    PublicKey::from_spki(cert.public_key()).map_err(|_| ChainFailure::UnsupportedKey)
}

/// If the leaf carries the FIDO aaguid extension it must name `aaguid`.
pub(crate) fn check_leaf_aaguid(der: &[u8], aaguid: &[u8; 16]) -> Result<(), ChainFailure> {
    let cert = parse(der)?;
    let Some(ext) = cert.extensions().iter().find(|e| e.oid.to_id_string() == OID_FIDO_AAGUID) else {
        return Ok(());
    };
    // extnValue wraps an OCTET STRING holding the 16 raw bytes.
    match ext.value {
        [0x04, 0x10, rest @ ..] if rest == aaguid => Ok(()),
        _ => Err(ChainFailure::AaguidMismatch),
    }
}

fn valid_at(cert: &X509Certificate<'_>, now: UnixMillis) -> bool {
    ASN1Time::from_timestamp((now.0 / 1000) as i64)
        .map(|t| cert.validity().is_valid_at(t))
        .unwrap_or(false)
}

fn signed_by(cert: &X509Certificate<'_>, issuer: &X509Certificate<'_>) -> Result<(), ChainFailure> {
    if !issuer.is_ca() {
        return Err(ChainFailure::IssuerNotCa);
    }
    let alg = match cert.signature_algorithm.algorithm.to_id_string().as_str() {
        OID_ECDSA_SHA256 => CoseAlgorithm::Es256,
        OID_RSA_SHA256 => CoseAlgorithm::Rs256,
        _ => return Err(ChainFailure::UnsupportedKey),
    };
    let key = PublicKey::from_spki(issuer.public_key()).map_err(|_| ChainFailure::UnsupportedKey)?;
    if key.verify(alg, cert.tbs_certificate.as_ref(), &cert.signature_value.data) {
        Ok(())
    } else {
        Err(ChainFailure::BadSignature)
    }
}

/// Verifies `chain` (leaf first) link by link and requires its last
/// certificate to be one of `roots` or to be issued by one of them.
pub(crate) fn verify_chain_to_roots(chain: &[Vec<u8>], roots: &[Vec<u8>], now: UnixMillis) -> Result<(), ChainFailure> {
    if chain.is_empty() {
        return Err(ChainFailure::EmptyChain);
    }
    let certs = chain.iter().map(|d| parse(d)).collect::<Result<Vec<_>, _>>()?;
    if !certs.iter().all(|c| valid_at(c, now)) {
        return Err(ChainFailure::OutsideValidity);
    }
    for pair in certs.windows(2) {
        if pair[0].issuer() != pair[1].subject() {
            return Err(ChainFailure::BadSignature);
        }
        signed_by(&pair[0], &pair[1])?;
    }

    let last_der = chain.last().unwrap();
    if roots.iter().any(|r| r == last_der) {
        return Ok(());
    }
    let last = certs.last().unwrap();
    let mut failure = ChainFailure::NoTrustedRoot;
    for root_der in roots {
        let Ok(root) = parse(root_der) else { continue };
        if root.subject() != last.issuer() {
            continue;
        }
        if !valid_at(&root, now) {
            failure = ChainFailure::OutsideValidity;
            continue;
        }
        match signed_by(last, &root) {
            Ok(()) => return Ok(()),
            Err(f) => failure = f,
        }
    }
    Err(failure)
}
