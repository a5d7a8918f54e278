//! End-to-end tests of the command-line interface: exit-code contract,
//! file products, and report determinism.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_omniflow"))
}

fn tempdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("omniflow-cli-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

#[test]
fn construct_pd46_reports_convexity_and_writes_flow() {
    let dir = tempdir("construct");
    let flow = dir.join("pd46.json");
    let out = run(&[
        "construct", "--family", "pd46", "--dim", "3", "--ctilde", "3",
        "--out", flow.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("convex for 0 <= ctilde < 12"), "{stdout}");
    let text = std::fs::read_to_string(&flow).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["flow"]["dim"], 3);
    assert_eq!(v["flow"]["kind"], "polynomial-family");
}

#[test]
fn construct_rejects_excluded_parameter() {
    let out = run(&["construct", "--family", "pd46", "--dim", "3", "--ctilde", "12"]);
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("ctilde"), "{stderr}");
}

#[test]
fn construct_p2_even_writes_quartic_block() {
    let dir = tempdir("p2even");
    let flow = dir.join("p4.json");
    let out = run(&[
        "construct", "--family", "p2-even", "--k", "2", "--a", "0", "--b", "0",
        "--out", flow.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&flow).unwrap()).unwrap();
    // (2a+1) q1^4 + 6 q1^2 q2^2 + (2b+1) q2^4 with a = b = 0.
    let terms = v["flow"]["blocks"][0]["poly"]["terms"].as_array().unwrap();
    assert_eq!(terms.len(), 3);
}

#[test]
fn verify_constructed_flow_passes_and_is_deterministic() {
    let dir = tempdir("verify");
    let flow = dir.join("flow.json");
    assert_eq!(
        exit_code(&run(&[
            "construct", "--family", "pd46", "--dim", "3", "--ctilde", "3",
            "--out", flow.to_str().unwrap(),
        ])),
        0
    );
    let r1 = dir.join("r1.json");
    let r2 = dir.join("r2.json");
    for r in [&r1, &r2] {
        let out = run(&[
            "verify", "--flow", flow.to_str().unwrap(), "--points", "64",
            "--time-pairs", "8", "--seed", "5", "--out", r.to_str().unwrap(),
        ]);
        assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    }
    // Identical config + seed: byte-identical reports.
    assert_eq!(std::fs::read(&r1).unwrap(), std::fs::read(&r2).unwrap());
}

const CONTROL_FLOW: &str = r#"{
  "dim": 2, "kind": "custom", "quad_mu": [1.0],
  "blocks": [
    {"poly": {"dim": 2, "degree": 4, "terms": [{"exp": [2, 2], "coef": "1/1"}]}, "mu": [0.0, 1.0]},
    {"poly": {"dim": 2, "degree": 4, "terms": [{"exp": [4, 0], "coef": "1/1"}]}, "mu": [0.0, 0.0, 1.0]}
  ],
  "time_range": [0.0, 0.2]
}"#;

#[test]
fn verify_control_flow_fails_with_defect() {
    let dir = tempdir("control");
    let flow = dir.join("control.json");
    std::fs::write(&flow, CONTROL_FLOW).unwrap();
    let out = run(&["verify", "--flow", flow.to_str().unwrap(), "--points", "64", "--time-pairs", "8"]);
    assert_eq!(exit_code(&out), 1);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL"), "{stdout}");
}

#[test]
fn verify_float_data_cannot_meet_machine_zero_tolerance() {
    // Tolerances are physical, not cosmetic: 1e-15 is below rounding.
    let dir = tempdir("tighttol");
    let flow = dir.join("flow.json");
    assert_eq!(
        exit_code(&run(&[
            "construct", "--family", "pd46", "--dim", "3", "--ctilde", "3",
            "--out", flow.to_str().unwrap(),
        ])),
        0
    );
    let out = run(&[
        "verify", "--flow", flow.to_str().unwrap(), "--points", "64",
        "--time-pairs", "8", "--tol", "1e-15",
    ]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn reconstruct_solvers_agree_and_match_fully() {
    let dir = tempdir("reconstruct");
    let flow = dir.join("flow.json");
    assert_eq!(
        exit_code(&run(&[
            "construct", "--family", "pd46", "--dim", "3", "--ctilde", "3",
            "--out", flow.to_str().unwrap(),
        ])),
        0
    );
    let mut reports = Vec::new();
    for solver in ["auction", "hungarian"] {
        let report = dir.join(format!("{solver}.json"));
        let out = run(&[
            "reconstruct", "--flow", flow.to_str().unwrap(), "--grid-n", "6",
            "--t", "0.1", "--solver", solver, "--out", report.to_str().unwrap(),
        ]);
        assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
        assert_eq!(v["match_fraction"], 1.0);
        // runtime_ms is the one nondeterministic field.
        v.as_object_mut().unwrap().remove("runtime_ms");
        reports.push(v);
    }
    assert_eq!(reports[0]["total_cost"], reports[1]["total_cost"]);
}

#[test]
fn reconstruct_refuses_past_shell_crossing() {
    let dir = tempdir("shell");
    let flow = dir.join("fold.json");
    std::fs::write(
        &flow,
        r#"{
          "dim": 2, "kind": "custom", "quad_mu": [1.0],
          "blocks": [{"poly": {"dim": 2, "degree": 4,
            "terms": [{"exp": [4, 0], "coef": "-1/1"}, {"exp": [0, 4], "coef": "-1/1"}]},
            "mu": [0.0, 1.0]}],
          "time_range": [0.0, 1.0]
        }"#,
    )
    .unwrap();
    let out = run(&[
        "reconstruct", "--flow", flow.to_str().unwrap(), "--grid-n", "6", "--t", "0.5",
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("shell-crossing"));
}

#[test]
fn reconstruct_divergence_csv_is_plot_ready() {
    let dir = tempdir("divcsv");
    let flow = dir.join("flow.json");
    assert_eq!(
        exit_code(&run(&[
            "construct", "--family", "p2-even", "--k", "2", "--a", "1", "--b", "1",
            "--amplitude", "0.2", "--out", flow.to_str().unwrap(),
        ])),
        0
    );
    let csv = dir.join("div.csv");
    let out = run(&[
        "reconstruct", "--flow", flow.to_str().unwrap(), "--grid-n", "8", "--t", "0.1",
        "--divergence-csv", csv.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 64);
    // q coordinates plus one value per line.
    assert_eq!(lines[0].split(',').count(), 3);
}

#[test]
fn reconstruct_external_clouds_with_permutation() {
    let dir = tempdir("clouds");
    let q = dir.join("q.csv");
    let x = dir.join("x.csv");
    let perm = dir.join("perm.txt");
    std::fs::write(&q, "0,0\n1,0\n").unwrap();
    std::fs::write(&x, "1.1,0\n-0.1,0\n").unwrap();
    std::fs::write(&perm, "1\n0\n").unwrap();
    let out = run(&[
        "reconstruct",
        "--lagrangian", q.to_str().unwrap(),
        "--eulerian", x.to_str().unwrap(),
        "--perm", perm.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("match fraction 1"), "{stdout}");
}

#[test]
fn invariants_identity_matrix_all_poles() {
    let dir = tempdir("invid");
    let m = dir.join("id.json");
    std::fs::write(&m, r#"{"dim": 3, "upper": [1.0, 0.0, 0.0, 1.0, 0.0, 1.0]}"#).unwrap();
    let report = dir.join("report.json");
    let out = run(&["invariants", "--matrix", m.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for entry in v["invariants"].as_array().unwrap() {
        assert_eq!(entry["gamma"], "pole");
    }
}

#[test]
fn invariants_random_matrix_relations_pass() {
    let dir = tempdir("invrand");
    let m = dir.join("m.json");
    std::fs::write(&m, r#"{"dim": 3, "upper": [0.9, 0.31, -0.24, 0.65, 0.48, 1.37]}"#).unwrap();
    let out = run(&["invariants", "--matrix", m.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0);
    let v: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert_eq!(v["all_pass"], true);
}

#[test]
fn invariants_along_flow_trajectory_drift_below_tolerance() {
    let dir = tempdir("invflow");
    let flow = dir.join("flow.json");
    assert_eq!(
        exit_code(&run(&[
            "construct", "--family", "pd46", "--dim", "3", "--ctilde", "3",
            "--out", flow.to_str().unwrap(),
        ])),
        0
    );
    let out = run(&[
        "invariants", "--flow", flow.to_str().unwrap(), "--point", "0.4,0.7,-0.6",
        "--times", "0.05,0.1,0.15,0.2", "--tol", "1e-8",
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn wkb_degenerate_potential_is_a_clean_error() {
    // The radial quartic has a double eigenvalue at the origin, which sits
    // inside the default patch.
    let out = run(&["wkb", "--phi0", "radial4", "--grid", "33"]);
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("degenerate") && stderr.contains("(0, 0)"), "{stderr}");
}

#[test]
fn wkb_kappa_sweep_measures_first_order_slope() {
    let dir = tempdir("sweep");
    let report = dir.join("report.json");
    let out = run(&[
        "wkb", "--phi0", "q1q2-cubic", "--grid", "97",
        "--kappa-sweep", "25,50,100,200",
        "--out", report.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let slope = v["kappa_sweep"]["slope_log2"].as_f64().unwrap();
    assert!((slope + 1.0).abs() <= 0.3, "slope {slope}");
}

#[test]
fn wkb_saddle_patch_end_to_end() {
    let dir = tempdir("wkb");
    let report = dir.join("report.json");
    let patch = dir.join("patch.csv");
    let flow = dir.join("flow.json");
    let out = run(&[
        "wkb", "--phi0", "q1q2", "--kappa", "50", "--grid", "49",
        "--out", report.to_str().unwrap(),
        "--out-patch", patch.to_str().unwrap(),
        "--out-flow", flow.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(v["eikonal_residual"].as_f64().unwrap() < 1e-10);
    // Patch CSV: grid header then one row per node.
    let text = std::fs::read_to_string(&patch).unwrap();
    assert_eq!(text.lines().count(), 2 + 49 * 49);
    // The exported flow tabulates the WKB block as a gridded field and
    // still verifies (at gridded-derivative accuracy).
    let vflow: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&flow).unwrap()).unwrap();
    assert_eq!(vflow["blocks"][1]["gridded"], true);
    let verify = run(&[
        "verify", "--flow", flow.to_str().unwrap(), "--points", "32",
        "--time-pairs", "4", "--half-width", "0.8", "--tol", "1e-2",
    ]);
    assert_eq!(exit_code(&verify), 0, "{}", String::from_utf8_lossy(&verify.stdout));
}
