use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use audit_core::boost::BoostModel;
use audit_core::cluster::{AssignmentResult, ClusterModel, CorrelationMatrix, Dendrogram};
use audit_core::inference::LogitFit;
use audit_core::vision::load_checkpoint;
use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn audit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_audit")).args(args).output().expect("binary runs")
}

fn audit_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_audit")).args(args).env(key, value).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
    /// Output of `audit all` on the fixture config.
    report: PathBuf,
    elapsed: Duration,
}

impl Fixture {
    fn config(&self) -> PathBuf {
        self.dir.path().join("audit.toml")
    }

    /// A copy of the fixture config with extra lines appended.
    fn config_with(&self, name: &str, extra: &str) -> PathBuf {
        let text = std::fs::read_to_string(self.config()).unwrap();
        let path = self.dir.path().join(name);
        std::fs::write(&path, format!("{text}\n{extra}\n")).unwrap();
        path
    }
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        ok(&audit(&["fixture", "--out", s(dir.path()), "--seed", "11"]));
        let report = dir.path().join("report");
        let start = Instant::now();
        ok(&audit(&["all", "--config", s(&dir.path().join("audit.toml"))]));
        Fixture { dir, report, elapsed: start.elapsed() }
    })
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn digests(dir: &Path) -> BTreeMap<String, String> {
    manifest(dir)["files"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(k, v)| (k.clone(), v["sha256"].as_str().unwrap().to_owned()))
        .collect()
}

fn read(dir: &Path, rel: &str) -> String {
    std::fs::read_to_string(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

#[test]
fn full_run_on_the_fixture_is_fast() {
    let f = fixture();
    assert!(f.elapsed < Duration::from_secs(60), "audit all took {:?}", f.elapsed);
    let m = manifest(&f.report);
    assert_eq!(m["command"], "all");
    assert_eq!(m["seed"], 11);
    for level in ["cluster", "regress", "shap", "saliency"] {
        assert!(digests(&f.report).keys().any(|k| k.starts_with(level)), "no {level} artifacts");
    }
}

#[test]
fn manifest_digests_match_file_contents() {
    let f = fixture();
    let listed = digests(&f.report);
    for (rel, digest) in &listed {
        let bytes = std::fs::read(f.report.join(rel)).unwrap();
        let actual: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(&actual, digest, "{rel}");
    }
    // nothing on disk escapes the manifest
    let mut on_disk = Vec::new();
    let mut stack = vec![f.report.clone()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                on_disk.push(p.strip_prefix(&f.report).unwrap().to_str().unwrap().replace('\\', "/"));
            }
        }
    }
    on_disk.retain(|p| p != "manifest.json");
    on_disk.sort();
    assert_eq!(on_disk, listed.keys().cloned().collect::<Vec<_>>());
}

#[test]
fn emitted_tables_reload_and_validate() {
    let r = &fixture().report;
    let assignments = AssignmentResult::from_csv(&read(r, "cluster/assignments.csv")).unwrap();
    assert_eq!(assignments.len(), 2000);
    assert_eq!(assignments.k, 4);
    let twin: AssignmentResult = serde_json::from_str(&read(r, "cluster/assignments.json")).unwrap();
    assert_eq!(twin, assignments);
    let membership: ClusterModel = serde_json::from_str(&read(r, "cluster/membership.json")).unwrap();
    assert_eq!(membership.k(), 4);
    // the four generated bundles come back as the four clusters
    for set in &membership.members {
        let bundle = set[0].split('_').next().unwrap();
        assert!(set.iter().all(|a| a.starts_with(bundle)), "{set:?}");
    }
    Dendrogram::from_json(&read(r, "cluster/dendrogram.json")).unwrap().validate().unwrap();
    let corr = CorrelationMatrix::from_csv(&read(r, "cluster/correlation.csv")).unwrap();
    assert_eq!(corr.len(), 12);

    let fit: LogitFit = serde_json::from_str(&read(r, "regress/logit.json")).unwrap();
    assert!(fit.converged);
    assert_eq!(fit.p(), 8);

    let model = BoostModel::from_json(&read(r, "shap/model.json")).unwrap();
    assert_eq!(model.n_features(), 14);
    let metrics: Value = serde_json::from_str(&read(r, "shap/metrics.json")).unwrap();
    assert!(metrics["test_roc_auc"].as_f64().unwrap() > 0.6);
    let attributions = read(r, "shap/attributions.csv");
    assert_eq!(attributions.lines().count(), 1 + 200 * 14);

    let ckpt = std::fs::read(r.join("saliency/model.ckpt")).unwrap();
    load_checkpoint(&ckpt).unwrap();
    let subgroups: Value = serde_json::from_str(&read(r, "saliency/subgroups.json")).unwrap();
    assert_eq!(subgroups["groups"].as_array().unwrap().len(), 4);
}

#[test]
fn reruns_are_byte_identical() {
    let f = fixture();
    let other = tempfile::tempdir().unwrap();
    ok(&audit_env(&["all", "--config", s(&f.config()), "--out", s(other.path())], "AUDIT_THREADS", "3"));
    assert_eq!(digests(other.path()), digests(&f.report));
    assert_eq!(manifest(other.path())["config_hash"], manifest(&f.report)["config_hash"]);

    let reseeded = tempfile::tempdir().unwrap();
    ok(&audit(&["saliency", "--config", s(&f.config()), "--seed", "12", "--out", s(reseeded.path())]));
    let a = digests(&f.report);
    let b = digests(reseeded.path());
    assert_ne!(a["saliency/model.ckpt"], b["saliency/model.ckpt"]);
    assert_ne!(manifest(reseeded.path())["config_hash"], manifest(&f.report)["config_hash"]);
}

#[test]
fn changing_the_reference_cluster_rebases_the_fit() {
    let f = fixture();
    let out = tempfile::tempdir().unwrap();
    let config = f.config_with("ref3.toml", "reference_cluster = 3");
    ok(&audit(&["regress", "--config", s(&config), "--out", s(out.path())]));
    let base: LogitFit = serde_json::from_str(&read(&f.report, "regress/logit.json")).unwrap();
    let moved: LogitFit = serde_json::from_str(&read(out.path(), "regress/logit.json")).unwrap();
    let b = |n: &str| base.coef_of(n).unwrap_or(0.0);
    let m = |n: &str| moved.coef_of(n).unwrap_or(0.0);
    let close = |x: f64, y: f64| assert!((x - y).abs() < 1e-6, "{x} vs {y}");

    close(m("Intercept"), b("Intercept") + b("Cluster3"));
    close(m("Male"), b("Male") + b("Cluster3:Male"));
    for c in [1, 2, 4] {
        close(m(&format!("Cluster{c}")), b(&format!("Cluster{c}")) - b("Cluster3"));
        close(m(&format!("Cluster{c}:Male")), b(&format!("Cluster{c}:Male")) - b("Cluster3:Male"));
    }
    // the model itself is unchanged
    close(moved.log_likelihood, base.log_likelihood);
}

#[test]
fn saved_assignments_are_reused_and_checked() {
    let f = fixture();
    let saved = f.report.join("cluster/assignments.csv");
    let out = tempfile::tempdir().unwrap();
    let config = f.config_with("reuse.toml", &format!("assignments = {:?}", s(&saved)));
    ok(&audit(&["regress", "--config", s(&config), "--out", s(out.path())]));
    assert!(!out.path().join("cluster").exists());
    assert_eq!(digests(out.path())["regress/logit.json"], digests(&f.report)["regress/logit.json"]);

    // one image short of the attribute file
    let text = read(&f.report, "cluster/assignments.csv");
    let truncated = out.path().join("short.csv");
    std::fs::write(&truncated, text.lines().take(1500).collect::<Vec<_>>().join("\n")).unwrap();
    let stale = f.config_with("stale.toml", &format!("assignments = {:?}", s(&truncated)));
    let res = audit(&["regress", "--config", s(&stale), "--out", s(out.path())]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("assignment file"));
}

#[test]
fn data_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("a.toml");
    std::fs::write(&cfg, "attributes = \"nowhere/list_attr.txt\"\n").unwrap();
    let res = audit(&["cluster", "--config", s(&cfg)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("nowhere/list_attr.txt"));

    std::fs::write(&cfg, "attributes = \"x\"\nclusters = 3\n").unwrap();
    assert_eq!(audit(&["cluster", "--config", s(&cfg)]).status.code(), Some(2));

    std::fs::write(&cfg, "").unwrap();
    let res = audit(&["saliency", "--config", s(&cfg)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("image manifest"));

    let res = audit_env(&["cluster", "--config", s(&cfg)], "AUDIT_THREADS", "many");
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn rank_deficient_design_exits_with_3() {
    // Every row covering B is male, so the B x female cell is empty.
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("60\nA B Male Attractive\n");
    for i in 0..60 {
        let (a, b, male) = if i < 40 { (1, -1, if i % 2 == 0 { 1 } else { -1 }) } else { (-1, 1, 1) };
        let y = if i % 3 == 0 { 1 } else { -1 };
        text.push_str(&format!("{i:04}.jpg {a} {b} {male} {y}\n"));
    }
    std::fs::write(dir.path().join("attr.txt"), text).unwrap();
    let cfg = dir.path().join("a.toml");
    std::fs::write(&cfg, "attributes = \"attr.txt\"\ncluster_exclude = [\"Male\"]\nk = 2\n").unwrap();
    let res = audit(&["regress", "--config", s(&cfg)]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
}
