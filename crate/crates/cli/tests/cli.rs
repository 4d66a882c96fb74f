use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use encmatch_core::client::{FeatureFile, FeatureRecord};
use encmatch_core::params::{HeParams, Profile};
use encmatch_core::transport::{Role, ServiceClient, ServiceConfig};

const EXE: &str = env!("CARGO_BIN_EXE_encmatch");

fn encmatch(args: &[&str]) -> Output {
    Command::new(EXE).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn one_record(src: &Path, line: usize, dst: &Path) -> String {
    let file = FeatureFile::read(src).unwrap();
    let r = file.records[line].clone();
    FeatureFile { header: vec![], records: vec![FeatureRecord { label: None, values: r.values }] }.write(dst).unwrap();
    r.label.unwrap_or_default()
}

struct Killed(Child);

impl Drop for Killed {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn keygen_enroll_auth_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p);
    let s = |p: &str| d(p).to_str().unwrap().to_owned();

    stdout(&encmatch(&["keygen", "--profile", "test", "--seed", "3", "--out", &s("keys")]));
    for f in ["public.key", "galois.key", "relin.key", "secret.key"] {
        assert!(d("keys").join(f).exists(), "{f}");
    }
    let bad = encmatch(&["keygen", "--profile", "production", "--seed", "3", "--out", &s("prodkeys")]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error:"));

    stdout(&encmatch(&["fixture", "--n", "40", "--queries", "2", "--seed", "4", "--out", &s("fx")]));

    let addr = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().to_string();
    let server = ServiceConfig {
        listen: Some(addr.clone()),
        registry_path: Some("registry".into()),
        public_key: Some("keys/public.key".into()),
        galois_key: Some("keys/galois.key".into()),
        relin_key: Some("keys/relin.key".into()),
        model_path: Some("fx/model.json".into()),
        ..ServiceConfig::new(Role::Main, Profile::Test)
    };
    server.save(&d("main.json")).unwrap();
    ServiceConfig { secret_key: Some("keys/secret.key".into()), ..server.clone() }.save(&d("leaky.json")).unwrap();
    let client = ServiceConfig {
        public_key: Some("keys/public.key".into()),
        secret_key: Some("keys/secret.key".into()),
        model_path: Some("fx/model.json".into()),
        server: Some(addr.clone()),
        ..ServiceConfig::new(Role::ClientTool, Profile::Test)
    };
    client.save(&d("client.json")).unwrap();

    // Servers refuse to start with secret-key material in their config.
    let leaky = encmatch(&["serve", "--config", &s("leaky.json")]);
    assert!(!leaky.status.success());
    assert!(String::from_utf8_lossy(&leaky.stderr).contains("secret key"));

    let _server = Killed(
        Command::new(EXE)
            .args(["serve", "--config", &s("main.json")])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let probe = ServiceClient::new(addr.clone(), HeParams::test_profile().digest());
    let start = Instant::now();
    while probe.health().is_err() {
        assert!(start.elapsed() < Duration::from_secs(60), "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    }

    let out = stdout(&encmatch(&["enroll", "--config", &s("client.json"), "--features", &s("fx/registry.txt")]));
    assert_eq!(out.lines().count(), 40);
    assert!(out.lines().last().unwrap().ends_with("at index 39"));

    let who = one_record(&d("fx/genuine.txt"), 0, &d("probe.txt"));
    let out = stdout(&encmatch(&["auth", "--config", &s("client.json"), "--features", &s("probe.txt")]));
    assert!(out.starts_with(&format!("match {who} ")), "{out}");

    one_record(&d("fx/imposters.txt"), 0, &d("far.txt"));
    let out = stdout(&encmatch(&["auth", "--config", &s("client.json"), "--features", &s("far.txt")]));
    assert_eq!(out.trim(), "no_match");

    let out = stdout(&encmatch(&["enroll", "--config", &s("client.json"), "--features", &s("far.txt"), "--id", "late"]));
    assert_eq!(out.trim(), "enrolled late at index 40");
    let out = stdout(&encmatch(&["auth", "--config", &s("client.json"), "--features", &s("far.txt")]));
    assert!(out.starts_with("match late (index 40"), "{out}");

    let missing = encmatch(&["auth", "--config", &s("client.json"), "--features", &s("nope.txt")]);
    assert!(!missing.status.success());
}

#[test]
fn bench_reports_every_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&encmatch(&[
        "bench", "--workers", "1,2", "--n", "300", "--queries", "2", "--profile", "test", "--dir",
        dir.path().to_str().unwrap(),
    ]));
    let rows: Vec<&str> = out.lines().skip(2).collect();
    assert_eq!(rows.len(), 2, "{out}");
    assert!(rows[0].starts_with("1 ") && rows[0].ends_with("2/2"), "{out}");
    assert!(rows[1].starts_with("2 ") && rows[1].contains(" 1/2 ") && rows[1].ends_with("2/2"), "{out}");
}
