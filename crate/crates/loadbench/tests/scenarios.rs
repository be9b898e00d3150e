use std::time::Duration;

use cahicha_core::engine::Mode;
use cahicha_loadbench::{
    run_bot_flood, run_verified_load, BenchClient, BenchError, BenchScenario, LocalDeployment, LocalOptions,
    OriginStub, Role, ScenarioKind, Trust,
};

async fn local(mode: Mode) -> LocalDeployment {
    LocalDeployment::start(LocalOptions { mode, ..Default::default() }).await.unwrap()
}

fn scenario(kind: ScenarioKind, deployment: &LocalDeployment) -> BenchScenario {
    let mut s = BenchScenario::new(kind, &deployment.target_url());
    s.trust = deployment.trust.clone();
    s.duration = Duration::from_secs(2);
    s.spawn_rate = 4.0;
    s.think_time = (Duration::from_millis(20), Duration::from_millis(40));
    s
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn short_verified_run_is_all_forwarded() {
    let deployment = local(Mode::Strict).await;
    let mut s = scenario(ScenarioKind::VerifiedLoad, &deployment);
    s.users = 3;
    let report = run_verified_load(&s, Some(&deployment.stub.counters)).await.unwrap();
    report.check_identity().unwrap();
    assert_eq!(report.forwarded_source, "origin_stub");
    assert_eq!(report.failures_total, 0);
    assert_eq!(report.blocked_at_gateway, 0);
    assert!(report.requests_total > 20, "{}", report.requests_total);
    assert_eq!(report.forwarded_to_origin, report.requests_total);
    assert_eq!(report.ceremonies_attempted, 3);
    assert_eq!(report.ceremonies_failed, 0);
    assert_eq!(deployment.stub.arrivals(Role::Flood), 0);
    let series: u64 = report.rps_series.iter().map(|s| s.requests).sum();
    assert_eq!(series, report.requests_total);
    deployment.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn short_flood_reaches_nothing() {
    let deployment = local(Mode::General).await;
    let mut s = scenario(ScenarioKind::BotFlood, &deployment);
    s.flood_threads = 8;
    let report = run_bot_flood(&s, Some(&deployment.stub.counters)).await.unwrap();
    report.check_identity().unwrap();
    assert_eq!(report.forwarded_to_origin, 0);
    assert_eq!(report.status_5xx, 0);
    assert_eq!(report.failures_total, 0);
    assert!(report.blocked_at_gateway > 100);
    let canary = report.canary.unwrap();
    assert!(canary.requests > 5);
    assert_eq!(canary.failures, 0);
    assert_eq!(canary.forwarded_to_origin, canary.requests);
    deployment.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn mixed_runs_several_canaries() {
    let deployment = local(Mode::General).await;
    let mut s = scenario(ScenarioKind::Mixed, &deployment);
    s.flood_threads = 2;
    s.users = 3;
    let report = cahicha_loadbench::run(&s, Some(&deployment.stub.counters)).await.unwrap();
    assert_eq!(report.ceremonies_attempted, 3);
    assert_eq!(report.canary.unwrap().failures, 0);
    deployment.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn untrusted_authenticators_show_up_as_failures() {
    let deployment = local(Mode::Strict).await;
    let mut s = scenario(ScenarioKind::VerifiedLoad, &deployment);
    s.users = 1;
    // A different fixture PKI: its attestation root is not in the MDS blob.
    s.fixture_seed = 99;
    let report = run_verified_load(&s, Some(&deployment.stub.counters)).await.unwrap();
    report.check_identity().unwrap();
    assert!(report.failures_total > 0);
    assert_eq!(report.forwarded_to_origin, 0);
    assert_eq!(report.ceremonies_failed, report.ceremonies_attempted);
    deployment.shutdown().await;
}

#[tokio::test]
async fn unreachable_target_is_reported_before_start() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    drop(listener);
    let s = BenchScenario::new(ScenarioKind::VerifiedLoad, &format!("http://127.0.0.1:{port}/"));
    assert!(matches!(run_verified_load(&s, None).await, Err(BenchError::TargetUnreachable(_))));
}

#[tokio::test]
async fn stub_counts_by_role() {
    let stub = OriginStub::start("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let url = format!("http://{}/", stub.addr);
    for (role, n) in [(Role::Verified, 3), (Role::Flood, 2), (Role::Canary, 1)] {
        let client = BenchClient::new(&url, &Trust::default(), role).unwrap();
        for _ in 0..n {
            let reply = client.get("/").await.unwrap();
            assert!(reply.from_origin);
        }
    }
    assert_eq!(stub.arrivals(Role::Verified), 3);
    assert_eq!(stub.arrivals(Role::Flood), 2);
    assert_eq!(stub.arrivals(Role::Canary), 1);
    assert_eq!(stub.arrivals(Role::Other), 0);
    assert_eq!(stub.counters.total(), 6);
}

#[test]
fn cli_fails_on_unreachable_target() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    drop(listener);
    let output = std::process::Command::new(env!("CARGO_BIN_EXE_loadbench"))
        .args(["verified", "--users", "1", "--duration", "1", "--target", &format!("http://127.0.0.1:{port}/")])
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("target unreachable"));
}

#[test]
fn cli_local_run_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    let output = std::process::Command::new(env!("CARGO_BIN_EXE_loadbench"))
        .args(["flood", "--local", "--threads", "2", "--duration", "1", "--report"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(output.status.success());
    let csv = std::fs::read_to_string(&path).unwrap();
    assert!(csv.starts_with("second,requests,failures,p50_ms,p95_ms\n"));
}
