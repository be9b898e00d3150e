//! Python bindings: the verification engine, the software authenticator,
//! session tokens and a few codec helpers.

use std::time::Duration;

use cahicha_core::codec::parse_authenticator_data as parse_auth_data;
use cahicha_core::engine::{
    AttestationResponse, CreationOptions, Mode, VerificationEngine, VerificationOutcome, VerificationPolicy,
};
use cahicha_core::mds::{format_aaguid, load_mds_blob, parse_aaguid, ExpiryPolicy};
use cahicha_core::soft::pki::{pem_encode, FixturePki};
use cahicha_core::soft::{fixture_trust_store, AuthenticatorBehavior, SoftAttestation, SoftAuthenticator, FIXTURE_AAGUID};
use cahicha_core::token::{mint_token, validate_token, TokenKey, TokenValidity};
use cahicha_core::UnixMillis;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn clock(now_ms: Option<u64>) -> UnixMillis {
    now_ms.map(UnixMillis).unwrap_or_else(UnixMillis::now)
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    match mode.to_ascii_lowercase().as_str() {
        "strict" => Ok(Mode::Strict),
        "general" => Ok(Mode::General),
        other => Err(PyValueError::new_err(format!("unknown mode {other:?}, expected 'strict' or 'general'"))),
    }
}

/// Result of verifying one registration response.
#[pyclass(name = "Outcome", frozen)]
struct PyOutcome {
    #[pyo3(get)]
    verdict: String,
    #[pyo3(get)]
    rejection_reason: Option<String>,
    #[pyo3(get)]
    aaguid: Option<String>,
    #[pyo3(get)]
    attestation_format: Option<String>,
    #[pyo3(get)]
    sign_count: Option<u32>,
}

impl From<VerificationOutcome> for PyOutcome {
    fn from(o: VerificationOutcome) -> Self {
        PyOutcome {
            verdict: if o.is_human() { "Human" } else { "Rejected" }.to_owned(),
            rejection_reason: o.rejection_reason.map(|r| r.as_str().to_owned()),
            aaguid: o.aaguid.as_ref().map(format_aaguid),
            attestation_format: o.attestation_format,
            sign_count: o.sign_count,
        }
    }
}

#[pymethods]
impl PyOutcome {
    #[getter]
    fn is_human(&self) -> bool {
        self.rejection_reason.is_none()
    }

    fn __repr__(&self) -> String {
        match &self.rejection_reason {
            None => format!("Outcome(Human, aaguid={:?})", self.aaguid.as_deref().unwrap_or("")),
            Some(reason) => format!("Outcome(Rejected, {reason})"),
        }
    }
}

#[pyclass(name = "VerificationEngine")]
struct PyEngine {
    engine: VerificationEngine,
}

#[pymethods]
impl PyEngine {
    /// Strict mode needs a trust store: either `fixture_seed` (the fixture
    /// MDS blob for that seed) or `mds_blob` plus `mds_root` (DER or PEM).
    #[new]
    #[pyo3(signature = (mode = "general", rp_id = "localhost", origins = None, *, fixture_seed = None, mds_blob = None, mds_root = None, require_uv = None, now_ms = None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        mode: &str,
        rp_id: &str,
        origins: Option<Vec<String>>,
        fixture_seed: Option<u64>,
        mds_blob: Option<Vec<u8>>,
        mds_root: Option<Vec<u8>>,
        require_uv: Option<bool>,
        now_ms: Option<u64>,
    ) -> PyResult<Self> {
        let mode = parse_mode(mode)?;
        let origins = origins.unwrap_or_else(|| vec![format!("https://{rp_id}")]);
        let origins: Vec<&str> = origins.iter().map(String::as_str).collect();
        let mut policy = VerificationPolicy::new(mode, rp_id, &origins);
        if let Some(uv) = require_uv {
            policy.require_uv = uv;
        }
        let now = clock(now_ms);
        let trust = match (fixture_seed, mds_blob, mds_root) {
            (Some(seed), None, None) => Some(fixture_trust_store(&FixturePki::new(seed), now)),
            (None, Some(blob), Some(root)) => Some(load_mds_blob(&blob, &root, now, ExpiryPolicy::Reject).map_err(value_error)?),
            (None, None, None) => None,
            _ => return Err(PyValueError::new_err("pass either fixture_seed or both mds_blob and mds_root")),
        };
        let engine = VerificationEngine::new(policy, trust).map_err(value_error)?;
        Ok(PyEngine { engine })
    }

    #[getter]
    fn mode(&self) -> String {
        self.engine.policy().mode.to_string()
    }

    #[getter]
    fn pending_challenges(&self) -> usize {
        self.engine.challenges().len()
    }

    /// Returns `(record_id, options_json)`; the JSON is the `publicKey`
    /// member of a WebAuthn creation request.
    #[pyo3(signature = (now_ms = None))]
    fn issue_challenge(&self, now_ms: Option<u64>) -> PyResult<(String, String)> {
        let (record, options) = self.engine.issue_challenge(clock(now_ms)).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        let json = serde_json::to_string(&options).map_err(value_error)?;
        Ok((record.record_id, json))
    }

    #[pyo3(signature = (record_id, attestation_object, client_data_json, now_ms = None))]
    fn verify(&self, record_id: String, attestation_object: Vec<u8>, client_data_json: Vec<u8>, now_ms: Option<u64>) -> PyOutcome {
        let response = AttestationResponse { record_id, attestation_object, client_data_json };
        self.engine.verify_attestation(&response, clock(now_ms)).into()
    }

    /// Drops expired challenges and returns how many went.
    #[pyo3(signature = (now_ms = None))]
    fn sweep(&self, now_ms: Option<u64>) -> usize {
        self.engine.sweep(clock(now_ms))
    }
}

#[pyclass(name = "SoftAuthenticator")]
struct PySoftAuthenticator {
    inner: SoftAuthenticator,
}

#[pymethods]
impl PySoftAuthenticator {
    /// `fixture_seed` selects the fixture PKI (it must match the engine's
    /// in strict mode). Without `seed` the key material is random.
    #[new]
    #[pyo3(signature = (fixture_seed = 1, seed = None))]
    fn new(fixture_seed: u64, seed: Option<u64>) -> Self {
        let pki = std::sync::Arc::new(FixturePki::new(fixture_seed));
        let inner = match seed {
            Some(seed) => SoftAuthenticator::seeded(pki, seed),
            None => SoftAuthenticator::from_entropy(pki),
        };
        PySoftAuthenticator { inner }
    }

    /// Returns `(record_id, attestation_object, client_data_json)`. The
    /// keyword arguments make the authenticator misbehave on purpose.
    #[pyo3(signature = (options_json, record_id, origin, *, user_presence = true, user_verification = true, attestation = "packed-x5c", aaguid = None, flags = None, corrupt_signature = false, wrong_origin = None, wrong_rp_id = None, wrong_challenge = None))]
    #[allow(clippy::too_many_arguments)]
    fn create_credential<'py>(
        &mut self,
        py: Python<'py>,
        options_json: &str,
        record_id: &str,
        origin: &str,
        user_presence: bool,
        user_verification: bool,
        attestation: &str,
        aaguid: Option<&str>,
        flags: Option<u8>,
        corrupt_signature: bool,
        wrong_origin: Option<String>,
        wrong_rp_id: Option<String>,
        wrong_challenge: Option<Vec<u8>>,
    ) -> PyResult<(String, Bound<'py, PyBytes>, Bound<'py, PyBytes>)> {
        let options: CreationOptions = serde_json::from_str(options_json).map_err(value_error)?;
        let attestation_format = match attestation {
            "packed-x5c" => SoftAttestation::PackedX5c,
            "packed-self" => SoftAttestation::PackedSelf,
            "none" => SoftAttestation::None,
            other => return Err(PyValueError::new_err(format!("unknown attestation {other:?}"))),
        };
        let aaguid = match aaguid {
            Some(text) => parse_aaguid(text).ok_or_else(|| PyValueError::new_err(format!("bad aaguid {text:?}")))?,
            None => FIXTURE_AAGUID,
        };
        let behavior = AuthenticatorBehavior {
            set_up: user_presence,
            set_uv: user_verification,
            attestation_format,
            aaguid,
            flags_override: flags,
            corrupt_signature,
            wrong_origin,
            wrong_rp_id,
            wrong_challenge,
            ..AuthenticatorBehavior::honest()
        };
        let response = self.inner.create_credential(&options, record_id, origin, &behavior).map_err(value_error)?;
        Ok((
            response.record_id,
            PyBytes::new(py, &response.attestation_object),
            PyBytes::new(py, &response.client_data_json),
        ))
    }
}

/// Symmetric key for session tokens.
#[pyclass(name = "TokenKey", frozen)]
struct PyTokenKey {
    key: TokenKey,
}

#[pymethods]
impl PyTokenKey {
    #[staticmethod]
    fn generate() -> PyResult<Self> {
        Ok(PyTokenKey { key: TokenKey::generate().map_err(|e| PyRuntimeError::new_err(e.to_string()))? })
    }

    /// 32 raw bytes: signing key then encryption key.
    #[staticmethod]
    fn from_bytes(raw: Vec<u8>) -> PyResult<Self> {
        Ok(PyTokenKey { key: TokenKey::from_bytes(&raw).map_err(value_error)? })
    }

    /// A Fernet key as written by `Fernet.generate_key()`.
    #[staticmethod]
    fn from_fernet(text: &str) -> PyResult<Self> {
        Ok(PyTokenKey { key: TokenKey::from_fernet_base64(text).map_err(value_error)? })
    }

    #[pyo3(signature = (now_ms = None))]
    fn mint(&self, now_ms: Option<u64>) -> PyResult<String> {
        mint_token(&self.key, clock(now_ms)).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Returns `(True, age_ms)` or `(False, reason)`.
    #[pyo3(signature = (token, now_ms = None, max_age_seconds = 86400))]
    fn validate<'py>(&self, py: Python<'py>, token: &str, now_ms: Option<u64>, max_age_seconds: u64) -> PyResult<(bool, Bound<'py, PyAny>)> {
        Ok(match validate_token(&self.key, token, clock(now_ms), Duration::from_secs(max_age_seconds)) {
            TokenValidity::Valid { age } => (true, (age.as_millis() as u64).into_pyobject(py)?.into_any()),
            TokenValidity::Invalid(reason) => (false, reason.as_str().into_pyobject(py)?.into_any()),
        })
    }
}

/// Decodes authenticator data into a dict.
#[pyfunction]
fn parse_authenticator_data<'py>(py: Python<'py>, data: Vec<u8>) -> PyResult<Bound<'py, PyDict>> {
    let parsed = parse_auth_data(&data).map_err(value_error)?;
    let out = PyDict::new(py);
    out.set_item("rp_id_hash", PyBytes::new(py, &parsed.rp_id_hash))?;
    out.set_item("flags", parsed.flags.raw)?;
    out.set_item("user_present", parsed.flags.up())?;
    out.set_item("user_verified", parsed.flags.uv())?;
    out.set_item("sign_count", parsed.sign_count)?;
    match &parsed.attested_credential {
        Some(credential) => {
            out.set_item("aaguid", format_aaguid(&credential.aaguid))?;
            out.set_item("credential_id", PyBytes::new(py, &credential.credential_id))?;
            out.set_item("algorithm", credential.public_key.algorithm().id())?;
        }
        None => out.set_item("aaguid", py.None())?,
    }
    Ok(out)
}

/// The fixture MDS blob for `seed` and its root certificate as PEM.
#[pyfunction]
#[pyo3(signature = (seed = 1))]
fn fixture_mds(seed: u64) -> (String, String) {
    let pki = FixturePki::new(seed);
    (cahicha_core::soft::fixture_mds_blob(&pki), pem_encode("CERTIFICATE", &pki.mds_root.cert_der))
}

#[pymodule]
pub fn cahicha(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyOutcome>()?;
    m.add_class::<PyEngine>()?;
    m.add_class::<PySoftAuthenticator>()?;
    m.add_class::<PyTokenKey>()?;
    m.add_function(wrap_pyfunction!(parse_authenticator_data, m)?)?;
    m.add_function(wrap_pyfunction!(fixture_mds, m)?)?;
    m.add("FIXTURE_AAGUID", format_aaguid(&FIXTURE_AAGUID))?;
    Ok(())
}
