use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gradfield"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("gradfield-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run(kind: &str, cfg: &str, out: &Path, extra: &[&str]) -> Output {
    bin().args([kind, "--config"]).arg(config(cfg)).arg("--out").arg(out).args(extra).output().unwrap()
}

#[test]
fn validate_lists_every_violation() {
    let o = bin().arg("validate").arg("--config").arg(config("invalid_tilt.json")).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let s = stdout(&o);
    assert!(s.contains("FAIL  tilt admissibility"), "{s}");
    assert!(s.contains("diam(supp V+)"), "{s}");
    assert!(s.contains("FAIL  time-step stability"), "{s}");
    let ok = bin().arg("validate").arg("--config").arg(config("field_gaussian.json")).output().unwrap();
    assert!(ok.status.success(), "{}", stdout(&ok));
}

#[test]
fn invalid_config_is_refused_before_compute() {
    let out = scratch("invalid");
    let o = run("field", "invalid_tilt.json", &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn subcommand_must_match_the_experiment() {
    let out = scratch("mismatch");
    let o = run("walk", "field_gaussian.json", &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not `walk`"));
}

#[test]
fn trivial_isomorphism_passes() {
    let out = scratch("iso");
    let o = run("isomorphism", "isomorphism_trivial.json", &out, &[]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS         isomorphism"));
}

#[test]
fn gaussian_scaling_ladder_matches_oracle() {
    let out = scratch("scaling");
    let o = run("scaling", "scaling_free_energy.json", &out, &[]);
    assert!(o.status.success(), "{}", stdout(&o));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert!(report["rel_gap"].as_f64().unwrap() < 0.01);
    assert!(out.join("ladder.csv").exists());
}

#[test]
fn reruns_are_byte_identical_and_report_verifies_hashes() {
    let a = scratch("det-a");
    let b = scratch("det-b");
    assert!(run("soup", "soup_gaussian.json", &a, &[]).status.success());
    assert!(run("soup", "soup_gaussian.json", &b, &["--threads", "2"]).status.success());
    for f in ["report.json", "replicas.csv", "occupation.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let files: Vec<&str> =
        manifest["artifacts"].as_array().unwrap().iter().map(|x| x["file"].as_str().unwrap()).collect();
    assert_eq!(files, ["config.json", "report.json", "replicas.csv", "occupation.csv"]);
    // a different seed changes the numbers
    let c = scratch("det-c");
    assert!(run("soup", "soup_gaussian.json", &c, &["--seed", "99"]).status.success());
    assert_ne!(std::fs::read(a.join("replicas.csv")).unwrap(), std::fs::read(c.join("replicas.csv")).unwrap());

    let r = bin().arg("report").arg("--out").arg(&a).output().unwrap();
    assert!(r.status.success(), "{}", stdout(&r));
    assert!(stdout(&r).contains("hash ok  report.json"));
    std::fs::write(a.join("occupation.csv"), "edited").unwrap();
    let r = bin().arg("report").arg("--out").arg(&a).output().unwrap();
    assert_eq!(r.status.code(), Some(1));
    assert!(stdout(&r).contains("MODIFIED occupation.csv"));
    for d in [a, b, c] {
        std::fs::remove_dir_all(d).unwrap();
    }
}

#[test]
fn remaining_experiments_run() {
    for (kind, cfg, artifact) in [
        ("field", "field_gaussian.json", "observables.csv"),
        ("walk", "walk_cosine.json", "trajectories.csv"),
        ("green", "green_box.json", "heat_kernel.csv"),
    ] {
        let out = scratch(kind);
        let o = run(kind, cfg, &out, &[]);
        assert!(o.status.success(), "{kind}: {}", stdout(&o));
        assert!(out.join(artifact).exists());
        assert!(out.join("manifest.json").exists());
        std::fs::remove_dir_all(out).unwrap();
    }
}
