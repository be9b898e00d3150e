use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use cahicha_core::soft::pki::FixturePki;
use cahicha_core::soft::{AuthenticatorBehavior, SoftAuthenticator};
use hyper::{Method, StatusCode};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::client::{BenchClient, ClientError, Reply, Trust};
use crate::report::{percentile, BenchReport, CanaryStats, Outcome, Sample};
use crate::stub::{ArrivalCounters, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    VerifiedLoad,
    BotFlood,
    /// A flood with `users` verified clients running alongside instead of one.
    Mixed,
}

#[derive(Debug, Clone)]
pub struct BenchScenario {
    pub kind: ScenarioKind,
    pub users: u64,
    /// Users started (and stopped) per second around the hold window.
    pub spawn_rate: f64,
    /// Length of the hold window, with every user active.
    pub duration: Duration,
    pub target_url: String,
    pub flood_threads: u64,
    /// Pause between a verified user's requests, drawn uniformly.
    pub think_time: (Duration, Duration),
    pub path: String,
    pub seed: u64,
    pub trust: Trust,
    /// Fixture PKI the soft authenticators attest with. It must match the
    /// gateway's trust store for Strict mode.
    pub fixture_seed: u64,
}

impl BenchScenario {
    pub fn new(kind: ScenarioKind, target_url: &str) -> Self {
        BenchScenario {
            kind,
            users: if kind == ScenarioKind::VerifiedLoad { 6 } else { 1 },
            spawn_rate: 1.0,
            duration: Duration::from_secs(if kind == ScenarioKind::VerifiedLoad { 60 } else { 30 }),
            target_url: target_url.to_owned(),
            flood_threads: 64,
            think_time: (Duration::from_millis(500), Duration::from_millis(1000)),
            path: "/".into(),
            seed: 1,
            trust: Trust::default(),
            fixture_seed: crate::local::DEFAULT_FIXTURE_SEED,
        }
    }

    fn check(&self) -> Result<(), BenchError> {
        if self.users < 1 {
            return Err(BenchError::InvalidScenario("users must be at least 1".into()));
        }
        if self.duration < Duration::from_secs(1) {
            return Err(BenchError::InvalidScenario("duration must be at least 1 s".into()));
        }
        if self.spawn_rate.is_nan() || self.spawn_rate <= 0.0 {
            return Err(BenchError::InvalidScenario("spawn rate must be positive".into()));
        }
        if self.think_time.0 > self.think_time.1 {
            return Err(BenchError::InvalidScenario("think time range is inverted".into()));
        }
        if self.kind != ScenarioKind::VerifiedLoad && self.flood_threads < 1 {
            return Err(BenchError::InvalidScenario("flood needs at least one thread".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("target unreachable: {0}")]
    TargetUnreachable(String),
    #[error(transparent)]
    Client(#[from] ClientError),
}

async fn probe(scenario: &BenchScenario) -> Result<(), BenchError> {
    let client = BenchClient::new(&scenario.target_url, &scenario.trust, Role::Other)?;
    client
        .request(Method::GET, "/__cahicha/challenge", Bytes::new(), &[])
        .await
        .map_err(|e| BenchError::TargetUnreachable(e.to_string()))?;
    Ok(())
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

fn sample(start: Instant, result: &Result<Reply, ClientError>, took: Duration, classify: impl Fn(&Reply) -> Outcome) -> Sample {
    let (outcome, status) = match result {
        Ok(reply) => (classify(reply), reply.status.as_u16()),
        Err(_) => (Outcome::Failed, 0),
    };
    Sample { at_ms: elapsed_ms(start), latency_us: took.as_micros() as u64, outcome, status }
}

/// A verified user is served only by the origin; anything else is a failure.
fn classify_verified(reply: &Reply) -> Outcome {
    if reply.from_origin {
        Outcome::Forwarded
    } else {
        Outcome::Failed
    }
}

/// A flood request is blocked when the gateway answers with its challenge
/// (401 for API clients, the page for browsers). 5xx and the rest are failures.
fn classify_flood(reply: &Reply) -> Outcome {
    if reply.from_origin {
        Outcome::Forwarded
    } else if reply.status == StatusCode::UNAUTHORIZED || reply.status == StatusCode::OK {
        Outcome::Blocked
    } else {
        Outcome::Failed
    }
}

struct UserPlan {
    start: Instant,
    begin: Duration,
    stop: Duration,
}

struct UserResult {
    samples: Vec<Sample>,
    ceremonies: u64,
    ceremony_failures: u64,
}

/// One simulated browser: ceremony once, then cookie-carrying requests with
/// think time until its stop time. A failed ceremony is recorded as a failed
/// request and retried after a pause.
async fn verified_user(
    scenario: Arc<BenchScenario>,
    pki: Arc<FixturePki>,
    role: Role,
    index: u64,
    plan: UserPlan,
) -> Result<UserResult, ClientError> {
    let mut result = UserResult { samples: Vec::new(), ceremonies: 0, ceremony_failures: 0 };
    tokio::time::sleep_until((plan.start + plan.begin).into()).await;
    let mut client = BenchClient::new(&scenario.target_url, &scenario.trust, role)?;
    let mut authenticator = SoftAuthenticator::seeded(pki, scenario.seed.wrapping_mul(1000).wrapping_add(index));
    let mut rng = StdRng::seed_from_u64(scenario.seed ^ (index << 32));
    let deadline = plan.start + plan.stop;
    let think = |rng: &mut StdRng| {
        let (lo, hi) = scenario.think_time;
        if lo == hi {
            lo
        } else {
            rng.gen_range(lo..=hi)
        }
    };
    let accept = [("accept", "text/html,application/xhtml+xml")];

    while Instant::now() < deadline {
        if !client.has_cookie() {
            result.ceremonies += 1;
            let began = Instant::now();
            if let Err(e) = client.verify(&mut authenticator, &AuthenticatorBehavior::honest()).await {
                log::warn!("user {index}: {e}");
                result.ceremony_failures += 1;
                let failed: Result<Reply, ClientError> = Err(e);
                result.samples.push(sample(plan.start, &failed, began.elapsed(), classify_verified));
                tokio::time::sleep(think(&mut rng)).await;
                continue;
            }
        }
        let began = Instant::now();
        let reply = client.request(Method::GET, &scenario.path, Bytes::new(), &accept).await;
        result.samples.push(sample(plan.start, &reply, began.elapsed(), classify_verified));
        let pause = think(&mut rng);
        if Instant::now() + pause >= deadline {
            break;
        }
        tokio::time::sleep(pause).await;
    }
    Ok(result)
}

struct Windows {
    hold_start: Duration,
    hold_end: Duration,
    total: Duration,
}

fn plan_windows(scenario: &BenchScenario) -> Windows {
    let last_start = Duration::from_secs_f64((scenario.users - 1) as f64 / scenario.spawn_rate);
    let hold_end = last_start + scenario.duration;
    Windows { hold_start: last_start, hold_end, total: hold_end + last_start }
}

fn steady_window(w: &Windows) -> (u64, u64) {
    let start = w.hold_start.as_secs_f64().ceil() as u64;
    let end = (w.hold_end.as_secs_f64().floor() as u64).max(start + 1);
    (start, end)
}

/// Replaces the client-side forwarded count with the stub's own arrival
/// counter for `role`, when a stub is attached.
fn attach_stub(report: &mut BenchReport, stub: Option<(&ArrivalCounters, u64)>, role: Role) {
    if let Some((counters, before)) = stub {
        report.forwarded_to_origin = counters.get(role) - before;
        report.forwarded_source = "origin_stub".into();
    }
}

/// Verified users ramp up at `spawn_rate`, all hold for `duration`, then
/// ramp down at the same rate. Each performs the ceremony once.
pub async fn run_verified_load(scenario: &BenchScenario, stub: Option<&ArrivalCounters>) -> Result<BenchReport, BenchError> {
    scenario.check()?;
    probe(scenario).await?;
    let windows = plan_windows(scenario);
    let pki = Arc::new(FixturePki::new(scenario.fixture_seed));
    let before = stub.map(|c| c.get(Role::Verified));
    let shared = Arc::new(scenario.clone());
    let start = Instant::now();
    let step = 1.0 / scenario.spawn_rate;
    let workers: Vec<_> = (0..scenario.users)
        .map(|i| {
            let offset = Duration::from_secs_f64(i as f64 * step);
            let plan = UserPlan { start, begin: offset, stop: windows.hold_end + offset };
            tokio::spawn(verified_user(shared.clone(), pki.clone(), Role::Verified, i, plan))
        })
        .collect();

    let mut samples = Vec::new();
    let (mut ceremonies, mut ceremony_failures) = (0, 0);
    for worker in workers {
        let result = worker.await.map_err(|e| BenchError::InvalidScenario(e.to_string()))??;
        samples.extend(result.samples);
        ceremonies += result.ceremonies;
        ceremony_failures += result.ceremony_failures;
    }
    samples.sort_by_key(|s| s.at_ms);
    let mut report = BenchReport::from_samples(
        "verified",
        scenario.users,
        windows.total.as_secs_f64(),
        &samples,
        steady_window(&windows),
    );
    report.ceremonies_attempted = ceremonies;
    report.ceremonies_failed = ceremony_failures;
    attach_stub(&mut report, stub.zip(before), Role::Verified);
    Ok(report)
}

const FLOOD_UA: &str = "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/120.0 Safari/537.36";

/// Cookie-less requests as fast as each worker can go, alternating a
/// browser-style GET with a form POST, all with identical headers.
async fn flood_worker(scenario: Arc<BenchScenario>, start: Instant, deadline: Instant) -> Result<Vec<Sample>, ClientError> {
    let client = BenchClient::new(&scenario.target_url, &scenario.trust, Role::Flood)?;
    let get_headers = [("user-agent", FLOOD_UA), ("accept", "text/html,application/xhtml+xml,*/*;q=0.8")];
    let post_headers = [
        ("user-agent", FLOOD_UA),
        ("accept", "*/*"),
        ("content-type", "application/x-www-form-urlencoded"),
    ];
    let form = Bytes::from_static(b"username=admin&password=admin");
    let mut samples = Vec::new();
    let mut n: u64 = 0;
    while Instant::now() < deadline {
        let began = Instant::now();
        let reply = if n.is_multiple_of(2) {
            client.request(Method::GET, &scenario.path, Bytes::new(), &get_headers).await
        } else {
            client.request(Method::POST, "/login", form.clone(), &post_headers).await
        };
        samples.push(sample(start, &reply, began.elapsed(), classify_flood));
        n += 1;
    }
    Ok(samples)
}

/// `flood_threads` workers flood the target for `duration` while verified
/// canary clients (one for BotFlood, `users` for Mixed) keep browsing.
pub async fn run_bot_flood(scenario: &BenchScenario, stub: Option<&ArrivalCounters>) -> Result<BenchReport, BenchError> {
    scenario.check()?;
    probe(scenario).await?;
    let canaries = if scenario.kind == ScenarioKind::Mixed { scenario.users } else { 1 };
    let pki = Arc::new(FixturePki::new(scenario.fixture_seed));
    let before_flood = stub.map(|c| c.get(Role::Flood));
    let before_canary = stub.map(|c| c.get(Role::Canary));
    let shared = Arc::new(scenario.clone());
    let start = Instant::now();
    let deadline = start + scenario.duration;

    let canary_workers: Vec<_> = (0..canaries)
        .map(|i| {
            let plan = UserPlan { start, begin: Duration::ZERO, stop: scenario.duration };
            tokio::spawn(verified_user(shared.clone(), pki.clone(), Role::Canary, 10_000 + i, plan))
        })
        .collect();
    let flood_workers: Vec<_> =
        (0..scenario.flood_threads).map(|_| tokio::spawn(flood_worker(shared.clone(), start, deadline))).collect();

    let mut samples = Vec::new();
    for worker in flood_workers {
        samples.extend(worker.await.map_err(|e| BenchError::InvalidScenario(e.to_string()))??);
    }
    samples.sort_by_key(|s| s.at_ms);
    let mut canary_samples = Vec::new();
    let (mut ceremonies, mut ceremony_failures) = (0, 0);
    for worker in canary_workers {
        let result = worker.await.map_err(|e| BenchError::InvalidScenario(e.to_string()))??;
        canary_samples.extend(result.samples);
        ceremonies += result.ceremonies;
        ceremony_failures += result.ceremony_failures;
    }

    let secs = scenario.duration.as_secs_f64();
    let mut report = BenchReport::from_samples("flood", scenario.flood_threads, secs, &samples, (0, secs.floor() as u64));
    attach_stub(&mut report, stub.zip(before_flood), Role::Flood);
    report.ceremonies_attempted = ceremonies;
    report.ceremonies_failed = ceremony_failures;

    let mut latencies: Vec<u64> = canary_samples.iter().map(|s| s.latency_us).collect();
    let mut canary = CanaryStats {
        requests: canary_samples.len() as u64,
        failures: canary_samples.iter().filter(|s| s.outcome != Outcome::Forwarded).count() as u64,
        forwarded_to_origin: canary_samples.iter().filter(|s| s.outcome == Outcome::Forwarded).count() as u64,
        p50_ms: percentile(&mut latencies, 50.0) as f64 / 1000.0,
    };
    if let Some((counters, before)) = stub.zip(before_canary) {
        canary.forwarded_to_origin = counters.get(Role::Canary) - before;
    }
    report.canary = Some(canary);
    Ok(report)
}

pub async fn run(scenario: &BenchScenario, stub: Option<&ArrivalCounters>) -> Result<BenchReport, BenchError> {
    match scenario.kind {
        ScenarioKind::VerifiedLoad => run_verified_load(scenario, stub).await,
        ScenarioKind::BotFlood | ScenarioKind::Mixed => run_bot_flood(scenario, stub).await,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_ramp_hold_ramp() {
        let mut s = BenchScenario::new(ScenarioKind::VerifiedLoad, "https://localhost:1/");
        s.users = 6;
        s.spawn_rate = 1.0;
        s.duration = Duration::from_secs(60);
        let w = plan_windows(&s);
        assert_eq!(w.hold_start, Duration::from_secs(5));
        assert_eq!(w.hold_end, Duration::from_secs(65));
        assert_eq!(w.total, Duration::from_secs(70));
        assert_eq!(steady_window(&w), (5, 65));
    }

    #[test]
    fn scenario_invariants() {
        let mut s = BenchScenario::new(ScenarioKind::VerifiedLoad, "https://localhost:1/");
        s.check().unwrap();
        s.users = 0;
        assert!(s.check().is_err());
        s.users = 1;
        s.duration = Duration::from_millis(999);
        assert!(s.check().is_err());
        s.duration = Duration::from_secs(1);
        s.spawn_rate = 0.0;
        assert!(s.check().is_err());
    }

    #[test]
    fn classification() {
        let reply = |status: u16, from_origin| Reply {
            status: StatusCode::from_u16(status).unwrap(),
            from_origin,
            latency: Duration::ZERO,
        };
        assert_eq!(classify_verified(&reply(200, true)), Outcome::Forwarded);
        assert_eq!(classify_verified(&reply(200, false)), Outcome::Failed);
        assert_eq!(classify_verified(&reply(401, false)), Outcome::Failed);
        assert_eq!(classify_flood(&reply(401, false)), Outcome::Blocked);
        assert_eq!(classify_flood(&reply(200, false)), Outcome::Blocked);
        assert_eq!(classify_flood(&reply(200, true)), Outcome::Forwarded);
        assert_eq!(classify_flood(&reply(502, false)), Outcome::Failed);
    }
}
