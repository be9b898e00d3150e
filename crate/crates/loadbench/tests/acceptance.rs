//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Takes about two and a half minutes (the load and flood runs
//! dominate).

use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use cahicha_core::codec::FlagSet;
use cahicha_core::engine::{Mode, RejectionReason, VerificationEngine, VerificationPolicy, Verdict};
use cahicha_core::soft::pki::FixturePki;
use cahicha_core::soft::{fixture_trust_store, AuthenticatorBehavior, SoftAttestation, SoftAuthenticator, FIXTURE_AAGUID};
use cahicha_core::token::{fernet, mint_token_with_iv, validate_token, validate_token_bytes, TokenKey};
use cahicha_core::UnixMillis;
use cahicha_gateway::read_access_log;
use cahicha_loadbench::{
    run_bot_flood, run_verified_load, BenchClient, BenchReport, BenchScenario, LocalDeployment, LocalOptions, Role,
    ScenarioKind,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const ORIGIN: &str = "https://localhost:8443";
const NOW: UnixMillis = UnixMillis(1_760_000_000_000);

type Check = Result<String, String>;

fn ensure(condition: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if condition {
        Ok(())
    } else {
        Err(message())
    }
}

fn engine(pki: &FixturePki, mode: Mode) -> VerificationEngine {
    let policy = VerificationPolicy::new(mode, "localhost", &[ORIGIN]);
    VerificationEngine::new(policy, Some(fixture_trust_store(pki, NOW))).expect("engine")
}

fn ceremony(
    engine: &VerificationEngine,
    auth: &mut SoftAuthenticator,
    behavior: &AuthenticatorBehavior,
) -> cahicha_core::engine::AttestationResponse {
    let (record, options) = engine.issue_challenge(NOW).expect("challenge");
    auth.create_credential(&options, &record.record_id, ORIGIN, behavior).expect("credential")
}

async fn human_path() -> Check {
    let deployment = LocalDeployment::start(LocalOptions::default()).await.map_err(|e| e.to_string())?;
    let started = Instant::now();
    let result = async {
        let mut client = BenchClient::new(&deployment.target_url(), &deployment.trust, Role::Verified)
            .map_err(|e| e.to_string())?;
        let mut auth = SoftAuthenticator::seeded(deployment.pki.clone(), 1);
        let set_cookie = client.verify(&mut auth, &AuthenticatorBehavior::honest()).await.map_err(|e| e.to_string())?;
        let attrs: Vec<String> = set_cookie.split(';').map(|a| a.trim().to_ascii_lowercase()).collect();
        ensure(attrs.iter().any(|a| a == "httponly") && attrs.iter().any(|a| a == "secure"), || {
            format!("cookie attributes missing: {set_cookie}")
        })?;
        ensure(deployment.stub.counters.total() == 0, || "ceremony reached the origin".into())?;
        let reply = client.get("/").await.map_err(|e| e.to_string())?;
        let arrivals = deployment.stub.counters.total();
        ensure(reply.from_origin && reply.status == 200, || format!("follow-up got {:?}", reply))?;
        ensure(arrivals == 1, || format!("origin saw {arrivals} requests, expected 1"))?;
        Ok(format!("verdict Human, cookie HttpOnly+Secure, forwarded once, {:?}", started.elapsed()))
    }
    .await;
    deployment.shutdown().await;
    result
}

fn strict_trust_gate() -> Check {
    let pki = Arc::new(FixturePki::new(7));
    let registered = AuthenticatorBehavior::honest();
    let unregistered = AuthenticatorBehavior { aaguid: [0x5a; 16], ..AuthenticatorBehavior::honest() };
    let strict = engine(&pki, Mode::Strict);
    let general = engine(&pki, Mode::General);
    let mut auth = SoftAuthenticator::seeded(pki.clone(), 3);
    let outcome = |e: &VerificationEngine, auth: &mut SoftAuthenticator, b: &AuthenticatorBehavior| {
        let response = ceremony(e, auth, b);
        e.verify_attestation(&response, NOW)
    };
    let a = outcome(&strict, &mut auth, &registered);
    ensure(a.verdict == Verdict::Human && a.aaguid == Some(FIXTURE_AAGUID), || format!("registered: {a:?}"))?;
    let b = outcome(&strict, &mut auth, &unregistered);
    ensure(b.rejection_reason == Some(RejectionReason::UntrustedAuthenticator), || format!("unregistered: {b:?}"))?;
    for behavior in [&registered, &unregistered] {
        let g = outcome(&general, &mut auth, behavior);
        ensure(g.is_human(), || format!("general mode rejected: {g:?}"))?;
    }
    Ok("strict: registered Human, unregistered UntrustedAuthenticator; general accepts both".into())
}

fn replay_and_tamper() -> Check {
    let pki = Arc::new(FixturePki::new(7));
    let mut rng = StdRng::seed_from_u64(0x7a3);
    let mut auth = SoftAuthenticator::seeded(pki.clone(), 5);

    let strict = engine(&pki, Mode::Strict);
    let response = ceremony(&strict, &mut auth, &AuthenticatorBehavior::honest());
    ensure(strict.verify_attestation(&response, NOW).is_human(), || "honest response rejected".into())?;
    let replay = SoftAuthenticator::replay_response(&response);
    let again = strict.verify_attestation(&replay, NOW);
    ensure(again.rejection_reason == Some(RejectionReason::ChallengeReplayed), || format!("replay: {again:?}"))?;

    let general = engine(&pki, Mode::General);
    let self_attested = AuthenticatorBehavior { attestation_format: SoftAttestation::PackedSelf, ..AuthenticatorBehavior::honest() };
    let mut flips = 0;
    for i in 0..1200 {
        let (engine, behavior) =
            if i % 2 == 0 { (&strict, AuthenticatorBehavior::honest()) } else { (&general, self_attested.clone()) };
        let mut response = ceremony(engine, &mut auth, &behavior);
        let total_bits = (response.attestation_object.len() + response.client_data_json.len()) * 8;
        let bit = rng.gen_range(0..total_bits);
        let (target, bit) = if bit < response.attestation_object.len() * 8 {
            (&mut response.attestation_object, bit)
        } else {
            (&mut response.client_data_json, bit - response.attestation_object.len() * 8)
        };
        target[bit / 8] ^= 1 << (bit % 8);
        let outcome = engine.verify_attestation(&response, NOW);
        ensure(!outcome.is_human(), || format!("flip {i} at bit {bit} was accepted"))?;
        flips += 1;
    }

    let key = TokenKey::from_bytes(&[0x42; 32]).map_err(|e| e.to_string())?;
    let token = mint_token_with_iv(&key, NOW, [9; 16]);
    let max_age = Duration::from_secs(24 * 3600);
    ensure(validate_token(&key, &token, NOW, max_age).is_valid(), || "fresh token invalid".into())?;
    let bytes = fernet::decode(&token).ok_or("token does not decode")?;
    let mut token_flips = 0;
    for bit in 0..bytes.len() * 8 {
        let mut tampered = bytes.clone();
        tampered[bit / 8] ^= 1 << (bit % 8);
        ensure(!validate_token_bytes(&key, &tampered, NOW, max_age).is_valid(), || format!("token bit {bit} accepted"))?;
        token_flips += 1;
    }
    Ok(format!("replay rejected, {flips}/{flips} response flips rejected, {token_flips}/{token_flips} token flips invalid"))
}

fn flag_bytes() -> Check {
    let pki = Arc::new(FixturePki::new(7));
    let mut auth = SoftAuthenticator::seeded(pki.clone(), 11);
    for mode in [Mode::General, Mode::Strict] {
        let engine = engine(&pki, mode);
        let mut accepted = 0;
        for raw in 0..=255u8 {
            let behavior = AuthenticatorBehavior { flags_override: Some(raw), ..AuthenticatorBehavior::honest() };
            let response = ceremony(&engine, &mut auth, &behavior);
            let outcome = engine.verify_attestation(&response, NOW);
            let mut required = FlagSet::USER_PRESENT | FlagSet::ATTESTED_CREDENTIAL;
            if mode == Mode::Strict {
                required |= FlagSet::USER_VERIFIED;
            }
            let expect = raw & required == required;
            ensure(outcome.is_human() == expect, || format!("{mode} flags {raw:#04x}: {outcome:?}"))?;
            if raw & FlagSet::USER_PRESENT == 0 {
                ensure(outcome.rejection_reason == Some(RejectionReason::MissingUserPresence), || {
                    format!("{mode} flags {raw:#04x}: {:?}", outcome.rejection_reason)
                })?;
            }
            accepted += outcome.is_human() as u32;
        }
        let expected = if mode == Mode::Strict { 32 } else { 64 };
        ensure(accepted == expected, || format!("{mode}: {accepted} accepted, expected {expected}"))?;
    }
    Ok("256/256 flag bytes per mode as expected; UP clear -> MissingUserPresence".into())
}

fn token_expiry() -> Check {
    let key = TokenKey::from_bytes(&[0x24; 32]).map_err(|e| e.to_string())?;
    let max_age = Duration::from_secs(24 * 3600);
    let token = mint_token_with_iv(&key, NOW, [1; 16]);
    let at = |ms: u64| validate_token(&key, &token, UnixMillis(NOW.0 + ms), max_age);
    let day = 24 * 3600 * 1000;
    ensure(at(0).is_valid() && at(day - 1).is_valid() && at(day).is_valid(), || "valid ages rejected".into())?;
    ensure(!at(day + 1).is_valid(), || format!("24h+1ms accepted: {:?}", at(day + 1)))?;
    Ok("accepts 0, 24h-1ms and 24h exactly; rejects 24h+1ms".into())
}

fn forwarded_latencies(log: &Path) -> Result<Vec<f64>, String> {
    let file = std::fs::File::open(log).map_err(|e| e.to_string())?;
    let records = read_access_log(std::io::BufReader::new(file)).map_err(|e| e.to_string())?;
    Ok(records.into_iter().filter(|r| r.verdict == "forwarded").map(|r| r.latency_ms).collect())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values[(values.len() - 1) / 2]
}

struct LoadResults {
    verified: Check,
    fast_path: Check,
    flood: Check,
    reports: Vec<BenchReport>,
}

async fn load_runs(dir: &Path) -> LoadResults {
    let mut reports = Vec::new();
    let log = dir.join("access.log");
    let options = LocalOptions { access_log: Some(log.clone()), ..Default::default() };
    let (verified, fast_path) = match LocalDeployment::start(options).await {
        Err(e) => (Err(e.to_string()), Err(e.to_string())),
        Ok(deployment) => {
            let mut s = BenchScenario::new(ScenarioKind::VerifiedLoad, &deployment.target_url());
            s.trust = deployment.trust.clone();
            s.users = 6;
            s.duration = Duration::from_secs(60);
            let verified = match run_verified_load(&s, Some(&deployment.stub.counters)).await {
                Err(e) => Err(e.to_string()),
                Ok(report) => {
                    let steady = report.steady_state.clone();
                    let check = ensure(report.failures_total == 0, || format!("{} failures", report.failures_total))
                        .and_then(|_| {
                            ensure(steady.throughput_rps >= 4.0, || format!("{:.2} req/s", steady.throughput_rps))
                        })
                        .and_then(|_| ensure(steady.p50_ms <= 300.0, || format!("p50 {:.2} ms", steady.p50_ms)))
                        .map(|_| {
                            format!(
                                "{} requests, 0 failures, steady {:.2} req/s, p50 {:.2} ms",
                                report.requests_total, steady.throughput_rps, steady.p50_ms
                            )
                        });
                    reports.push(report);
                    check
                }
            };

            // Back-to-back cookie-carrying requests so the access log holds
            // well over 1000 forwarded entries.
            let mut s = BenchScenario::new(ScenarioKind::VerifiedLoad, &deployment.target_url());
            s.trust = deployment.trust.clone();
            s.users = 1;
            s.duration = Duration::from_secs(4);
            s.think_time = (Duration::ZERO, Duration::ZERO);
            let fast = run_verified_load(&s, Some(&deployment.stub.counters)).await;
            deployment.shutdown().await;
            let fast_path = match fast {
                Err(e) => Err(e.to_string()),
                Ok(report) => {
                    reports.push(report);
                    forwarded_latencies(&log).and_then(|mut lat| {
                        ensure(lat.len() >= 1000, || format!("only {} forwarded records", lat.len()))?;
                        let m = median(&mut lat);
                        ensure(m <= 12.0, || format!("median {m:.3} ms"))?;
                        Ok(format!("median {m:.3} ms over {} forwarded requests", lat.len()))
                    })
                }
            };
            (verified, fast_path)
        }
    };

    let log = dir.join("flood-access.log");
    let options = LocalOptions { access_log: Some(log.clone()), ..Default::default() };
    let flood = match LocalDeployment::start(options).await {
        Err(e) => Err(e.to_string()),
        Ok(deployment) => {
            let mut s = BenchScenario::new(ScenarioKind::BotFlood, &deployment.target_url());
            s.trust = deployment.trust.clone();
            s.flood_threads = 64;
            s.duration = Duration::from_secs(30);
            let result = run_bot_flood(&s, Some(&deployment.stub.counters)).await;
            let flood_arrivals = deployment.stub.arrivals(Role::Flood);
            deployment.shutdown().await;
            match result {
                Err(e) => Err(e.to_string()),
                Ok(report) => {
                    let canary = report.canary.clone().unwrap_or_default();
                    let log_5xx = std::fs::File::open(&log)
                        .map_err(|e| e.to_string())
                        .and_then(|f| read_access_log(std::io::BufReader::new(f)).map_err(|e| e.to_string()))
                        .map(|records| records.iter().filter(|r| r.status >= 500).count());
                    let check = (|| {
                        ensure(flood_arrivals == 0, || format!("origin saw {flood_arrivals} flood requests"))?;
                        ensure(canary.requests > 0 && canary.failures == 0, || {
                            format!("canary {} requests, {} failures", canary.requests, canary.failures)
                        })?;
                        ensure(report.status_5xx == 0, || format!("{} 5xx responses", report.status_5xx))?;
                        let log_5xx = log_5xx?;
                        ensure(log_5xx == 0, || format!("{log_5xx} 5xx entries in the access log"))?;
                        Ok(format!(
                            "{} flood requests, origin arrivals 0, canary {} requests 0 failures, no 5xx",
                            report.requests_total, canary.requests
                        ))
                    })();
                    reports.push(report);
                    check
                }
            }
        }
    };
    LoadResults { verified, fast_path, flood, reports }
}

fn identity(reports: &[BenchReport]) -> Check {
    ensure(reports.len() == 3, || format!("only {} of 3 reports produced", reports.len()))?;
    for report in reports {
        report.check_identity().map_err(|e| format!("{}: {e}", report.scenario))?;
        ensure(report.forwarded_source == "origin_stub", || "forwarded count not from the stub".into())?;
    }
    let forwarded: Vec<String> = reports.iter().map(|r| format!("{}={}", r.scenario, r.forwarded_to_origin)).collect();
    Ok(format!("identity holds in {} reports ({})", reports.len(), forwarded.join(", ")))
}

fn main() -> ExitCode {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("runtime");
    let dir = tempfile::tempdir().expect("tempdir");
    let mut failed = 0;
    let mut report = |name: &str, check: Check| match check {
        Ok(detail) => println!("PASS {name}: {detail}"),
        Err(detail) => {
            failed += 1;
            println!("FAIL {name}: {detail}");
        }
    };

    report("end-to-end human path", runtime.block_on(human_path()));
    report("strict-mode trust gate", strict_trust_gate());
    report("replay and tamper suite", replay_and_tamper());
    report("UP-flag gate over all flag bytes", flag_bytes());
    report("24-hour token expiry", token_expiry());
    let load = runtime.block_on(load_runs(dir.path()));
    report("verified load, 6 users, 60 s hold", load.verified);
    report("flood resilience, 64 threads, 30 s", load.flood);
    report("fast-path latency from the access log", load.fast_path);
    report("accounting identity across loadbench reports", identity(&load.reports));

    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
