use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn rcnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn check_accepts_example() {
    let out = rcnet(&["check", "--model", path(&fixture("example1.json"))]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("4 distinct real eigenvalues"));
}

#[test]
fn check_rejects_complex_spectrum() {
    let out = rcnet(&["check", "--model", path(&fixture("rotation.json"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_input_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ \"a_hat\": [1, 2").unwrap();
    assert_eq!(
        rcnet(&["check", "--model", path(&bad)]).status.code(),
        Some(1)
    );
    assert_eq!(
        rcnet(&["check", "--model", path(&dir.path().join("missing.json"))])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(rcnet(&["reconstruct"]).status.code(), Some(1));
    assert_eq!(rcnet(&["--help"]).status.code(), Some(0));
}

#[test]
fn reconstruct_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = rcnet(&[
        "reconstruct",
        "--model",
        path(&fixture("example1.json")),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let dot = fs::read_to_string(dir.path().join("network.dot")).unwrap();
    assert_eq!(dot.matches(" -- ").count(), 4);
    assert!(dot.contains("4 [color=red];"));
    let real = json(&dir.path().join("realization.json"));
    let s: Vec<f64> = real["s"]["data"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let s1 = [
        -4.0, 1.0, 1.0, 2.0, 1.0, -1.0, 0.0, 0.0, 1.0, 0.0, -2.0, 1.0, 2.0, 0.0, 1.0, -3.0,
    ];
    assert!(s.iter().zip(s1).all(|(a, b)| (a - b).abs() < 1e-6));
    let report = json(&dir.path().join("report.json"));
    assert_eq!(report["rotation"]["k"], 1);
    assert_eq!(report["scaling"]["generators"].as_array().unwrap().len(), 2);
    assert!(report["scaling"]["alphas"].is_array());
    assert!(report["search"]["restarts"].is_array());
}

#[test]
fn infeasible_search_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = rcnet(&[
        "reconstruct",
        "--model",
        path(&fixture("negative_coupling.json")),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(
        json(&dir.path().join("report.json"))["search"]["feasible"],
        false
    );
}

#[test]
fn relaxed_reconstruction_of_noisy_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = json(&fixture("example1.json"));
    for (i, v) in model["a_hat"]["data"]
        .as_array_mut()
        .unwrap()
        .iter_mut()
        .enumerate()
    {
        let x = v.as_f64().unwrap();
        *v = serde_json::json!(x * (1.0 + 1e-7 * ((i % 5) as f64 - 2.0)));
    }
    let noisy = dir.path().join("noisy.json");
    fs::write(&noisy, model.to_string()).unwrap();
    let out = rcnet(&[
        "reconstruct",
        "--model",
        path(&noisy),
        "--relaxed",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = json(&dir.path().join("report.json"));
    assert_eq!(report["relaxed"], true);
    assert!(report["scaling"]["residual"].as_f64().unwrap() < 1e-4);
}

#[test]
fn generate_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let out = rcnet(&[
            "generate",
            "--n",
            "10",
            "--m",
            "8",
            "--seed",
            "42",
            "--out",
            path(dir.path()),
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    for name in ["instance.json", "model.json", "truth.dot"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn self_comparison_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    rcnet(&[
        "generate",
        "--n",
        "6",
        "--m",
        "4",
        "--seed",
        "1",
        "--out",
        path(dir.path()),
    ]);
    let inst = dir.path().join("instance.json");
    let out = rcnet(&[
        "compare",
        "--truth",
        path(&inst),
        "--reconstructed",
        path(&inst),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["verdict"], "identical");
}

#[test]
fn generate_reconstruct_compare() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        rcnet(&[
            "generate",
            "--n",
            "10",
            "--m",
            "8",
            "--seed",
            "3",
            "--out",
            path(d)
        ])
        .status
        .code(),
        Some(0)
    );
    let rec_dir = d.join("rec");
    let out = rcnet(&[
        "reconstruct",
        "--model",
        path(&d.join("model.json")),
        "--out",
        path(&rec_dir),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = json(&rec_dir.join("report.json"));
    assert_eq!(report["rotation"]["k"], 2);
    let search = &report["search"];
    assert!(search["output_residual"].as_f64().unwrap() <= 1e-8);
    assert!(search["definition_residual"].as_f64().unwrap() <= 1e-8);
    assert!(search["spectrum_residual"].as_f64().unwrap() <= 1e-8);
    let cmp_path = d.join("compare.json");
    let out = rcnet(&[
        "compare",
        "--truth",
        path(&d.join("instance.json")),
        "--reconstructed",
        path(&rec_dir.join("realization.json")),
        "--out",
        path(&cmp_path),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let verdict = json(&cmp_path)["verdict"].as_str().unwrap().to_string();
    assert!(["identical", "same-topology", "different"].contains(&verdict.as_str()));
}
