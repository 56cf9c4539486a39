use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn omnisfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omnisfm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = omnisfm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn header(text: &str) -> &str {
    text.lines().find(|l| !l.starts_with('#')).unwrap()
}

fn max_error(report: &Value) -> f64 {
    report["errors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e.as_f64().unwrap())
        .fold(0.0, f64::max)
}

#[test]
fn generate_project_reconstruct_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("world.json");
    let obs = dir.path().join("obs.csv");
    ok(&[
        "generate",
        "-n",
        "6",
        "-m",
        "5",
        "--seed",
        "3",
        "--out",
        path(&world),
    ]);
    ok(&["project", "--world", path(&world), "--out", path(&obs)]);
    let table = std::fs::read_to_string(&obs).unwrap();
    assert_eq!(header(&table), "i,j,theta,phi,visible");
    assert_eq!(table.lines().count(), 1 + 6 * 5);

    let report: Value = serde_json::from_str(&ok(&[
        "reconstruct",
        "--observations",
        path(&obs),
        "--truth",
        path(&world),
    ]))
    .unwrap();
    assert_eq!(report["verdict"], "unique");
    assert!(max_error(&report) < 1e-8, "{}", max_error(&report));

    let csv = ok(&[
        "reconstruct",
        "--observations",
        path(&obs),
        "--format",
        "csv",
    ]);
    assert_eq!(header(&csv), "kind,index,x,y,z");
    assert_eq!(csv.lines().count(), 1 + 6 + 5);
}

#[test]
fn spatial_worlds_round_trip_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("world.json");
    let obs = dir.path().join("obs.json");
    ok(&[
        "generate",
        "-n",
        "5",
        "-m",
        "4",
        "--dimension",
        "3",
        "--out",
        path(&world),
    ]);
    ok(&[
        "project",
        "--world",
        path(&world),
        "--format",
        "json",
        "--out",
        path(&obs),
    ]);
    let report: Value = serde_json::from_str(&ok(&[
        "reconstruct",
        "--observations",
        path(&obs),
        "--truth",
        path(&world),
    ]))
    .unwrap();
    assert_eq!(report["verdict"], "unique");
    assert!(max_error(&report) < 1e-8, "{}", max_error(&report));
}

#[test]
fn noisy_projection_depends_on_seed_only() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("world.json");
    ok(&["generate", "-n", "4", "-m", "3", "--out", path(&world)]);
    let run = |seed: &str| {
        ok(&[
            "project",
            "--world",
            path(&world),
            "--delta",
            "0.01",
            "--seed",
            seed,
        ])
    };
    assert_eq!(run("5"), run("5"));
    assert_ne!(run("5"), run("6"));
}

#[test]
fn unoriented_reconstruction_recovers_turning_cameras() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("world.json");
    let obs = dir.path().join("obs.csv");
    ok(&[
        "generate",
        "-n",
        "8",
        "-m",
        "6",
        "--turn-rate",
        "0.01",
        "--seed",
        "11",
        "--out",
        path(&world),
    ]);
    ok(&["project", "--world", path(&world), "--out", path(&obs)]);
    let report: Value = serde_json::from_str(&ok(&[
        "reconstruct",
        "--observations",
        path(&obs),
        "--unoriented",
    ]))
    .unwrap();
    let headings = report["headings"].as_array().unwrap();
    assert_eq!(headings.len(), 6);
    assert!(headings.iter().all(|h| h.as_f64().unwrap().is_finite()));
}

#[test]
fn sweep_writes_one_row_per_trial() {
    let csv = ok(&[
        "sweep",
        "-m",
        "4",
        "-n",
        "5",
        "--levels",
        "3",
        "--trials",
        "2",
        "--max-delta",
        "0.01",
    ]);
    assert_eq!(
        header(&csv),
        "delta,trial,max_abs,mean_abs,mean,rms,ambiguous"
    );
    assert_eq!(csv.lines().count(), 1 + 3 * 2);

    let json: Value = serde_json::from_str(&ok(&[
        "sweep", "-m", "4", "-n", "5", "--levels", "3", "--trials", "2", "--format", "json",
    ]))
    .unwrap();
    assert_eq!(json["mean_max_abs"].as_array().unwrap().len(), 3);
}

#[test]
fn grid_writes_one_row_per_cell() {
    let csv = ok(&["grid", "--size", "4", "--worlds", "2"]);
    assert_eq!(header(&csv), "m,n,avg_max_abs,ambiguous_fraction");
    assert_eq!(csv.lines().count(), 1 + 4 * 4);
}

#[test]
fn ambiguity_reports_kernel_and_perturbed_verdict() {
    let report: Value =
        serde_json::from_str(&ok(&["ambiguity", "--family", "two-line-i"])).unwrap();
    assert_eq!(report["family"], "two-line-i");
    assert_eq!(report["verdict"], "ambiguous");
    assert!(report["kernel_dimension"].as_u64().unwrap() >= 1);
    assert_eq!(report["perturbed_verdict"], "unique");

    let csv = ok(&["ambiguity", "--family", "two-camera", "--format", "csv"]);
    assert!(csv.starts_with("# two-camera: Ambiguous"));
    assert_eq!(header(&csv), "kind,index,x,y,z");
}

#[test]
fn bad_input_fails_with_message() {
    let out = omnisfm(&["ambiguity", "--family", "three-line"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("two-line-i"));

    let out = omnisfm(&["reconstruct", "--observations", "/nonexistent/obs.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
