use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cascade-tuner"))
        .args(args)
        .output()
        .unwrap()
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_str()
        .unwrap()
        .to_string()
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

struct Run {
    _dir: tempfile::TempDir,
    data: PathBuf,
    model: PathBuf,
    root: PathBuf,
}

fn synth_and_fit(cfg: &str, extra_fit: &[&str]) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let (data, model) = (root.join("data.csv"), root.join("model.json"));
    assert!(bin(&["synth", "--config", cfg, "--out", &s(&data)])
        .status
        .success());
    let mut args = vec![
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--config",
        cfg,
        "--out",
        model.to_str().unwrap(),
    ];
    args.extend_from_slice(extra_fit);
    let out = bin(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    Run {
        _dir: dir,
        data,
        model,
        root,
    }
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn fit_writes_model_of_the_right_shape() {
    let cfg = config("synthetic_raw_k3.json");
    let r = synth_and_fit(&cfg, &[]);
    let m = json(&r.model);
    assert_eq!(m["model"]["marginals"].as_array().unwrap().len(), 3);
    assert_eq!(m["model"]["copulas"].as_array().unwrap().len(), 2);
    assert_eq!(m["mode"], "raw");
    assert_eq!(m["calibration"].as_array().unwrap().len(), 3);
    assert_eq!(m["n_train"], 300);
    assert!(m["components_override"].is_null());
}

#[test]
fn components_override_is_recorded() {
    let cfg = config("synthetic_rho08.json");
    let r = synth_and_fit(&cfg, &["--components", "2"]);
    let m = json(&r.model);
    assert_eq!(m["components_override"], 2);
    for d in m["diagnostics"]["marginals"].as_array().unwrap() {
        assert_eq!(d["selected_components"], 2);
    }
}

#[test]
fn single_cell_sweep() {
    let cfg = config("synthetic_rho08.json");
    let r = synth_and_fit(&cfg, &[]);
    let out = r.root.join("sweep");
    let o = bin(&[
        "sweep",
        "--model",
        &s(&r.model),
        "--config",
        &cfg,
        "--data",
        &s(&r.data),
        "--out",
        &s(&out),
        "--grid",
        "1x1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let c = json(&out.join("comparison.json"));
    assert_eq!(c["train"]["cells"].as_array().unwrap().len(), 1);
    assert!(c["smooth_r"].is_null());
    assert_eq!(c["test"]["n_test"], 1000);
    let e = json(&out.join("sweep_early.json"));
    assert_eq!(e["sweep"]["architecture"], "early_abstention");
    assert_eq!(e["test"]["cells"][0].as_array().unwrap().len(), 1);
}

#[test]
fn single_architecture_sweep_writes_one_file() {
    let cfg = config("synthetic_rho08.json");
    let r = synth_and_fit(&cfg, &[]);
    let out = r.root.join("final");
    let o = bin(&[
        "sweep",
        "--model",
        &s(&r.model),
        "--config",
        &cfg,
        "--out",
        &s(&out),
        "--grid",
        "3x3",
        "--architecture",
        "final",
    ]);
    assert!(o.status.success());
    let files: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(files, vec![std::ffi::OsString::from("sweep_final.json")]);
    let f = json(&out.join("sweep_final.json"));
    for cell in f["sweep"]["cells"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|r| r.as_array().unwrap())
    {
        assert_eq!(cell["xi"][0], 0.0);
    }
    assert!(f["test"].is_null());
}

#[test]
fn pr_writes_one_curve_per_rate() {
    let cfg = config("synthetic_rho08.json");
    let r = synth_and_fit(&cfg, &[]);
    let out = r.root.join("pr");
    let o = bin(&[
        "pr",
        "--data",
        &s(&r.data),
        "--config",
        &cfg,
        "--out",
        &s(&out),
    ]);
    assert!(o.status.success());
    for rate in ["0.20", "0.30"] {
        let p = json(&out.join(format!("pr_{rate}.json")));
        let curve = &p["curve"];
        assert!(curve["baseline"].as_f64().unwrap() > 0.0);
        assert!(!curve["points"].as_array().unwrap().is_empty());
        assert!(
            p["precision_at_recall_20"].as_f64().unwrap()
                > p["test_abstention_rate"].as_f64().unwrap()
        );
    }
    let o = bin(&[
        "pr",
        "--data",
        &s(&r.data),
        "--config",
        &cfg,
        "--out",
        &s(&out),
        "--rate",
        "0.25",
    ]);
    assert!(o.status.success());
    assert!(out.join("pr_0.25.json").exists());
}

#[test]
fn route_prints_decision_path() {
    let cfg = config("synthetic_rho08.json");
    let o = bin(&[
        "route", "--config", &cfg, "--phi", "0.7", "--xi", "0.2,0.3", "--conf", "0.5,0.25",
    ]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("-> defer"));
    assert!(text.contains("Abstained(2)"));
}

#[test]
fn error_classes_map_to_exit_codes() {
    let cfg = config("synthetic_rho08.json");
    let dir = tempfile::tempdir().unwrap();
    let out = s(&dir.path().join("m.json"));
    // usage
    assert_eq!(bin(&["fit"]).status.code(), Some(2));
    assert_eq!(
        bin(&["route", "--config", &cfg, "--phi", "0.3", "--xi", "0.5,0.1", "--conf", "0.5,0.2"])
            .status
            .code(),
        Some(2)
    );
    // i/o
    assert_eq!(
        bin(&[
            "fit",
            "--data",
            "/nonexistent/x.csv",
            "--config",
            &cfg,
            "--out",
            &out
        ])
        .status
        .code(),
        Some(3)
    );
    // schema
    let bad = dir.path().join("bad.csv");
    std::fs::write(
        &bad,
        "query_id,conf_1,correct_1,conf_2,correct_2\na,0.2,1,0.3,1\na,0.2,1,0.3,1\n",
    )
    .unwrap();
    let o = bin(&["fit", "--data", &s(&bad), "--config", &cfg, "--out", &out]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 2"));
    // fitting: too few training queries for the mixture fit
    let small = dir.path().join("small.csv");
    let mut text = String::from("query_id,conf_1,correct_1,conf_2,correct_2\n");
    for i in 0..20 {
        text.push_str(&format!(
            "q{i},{},1,{},0\n",
            0.1 + 0.04 * i as f64,
            0.9 - 0.03 * i as f64
        ));
    }
    std::fs::write(&small, text).unwrap();
    let o = bin(&[
        "fit",
        "--data",
        &s(&small),
        "--config",
        &cfg,
        "--out",
        &out,
        "--train-n",
        "15",
    ]);
    assert_eq!(
        o.status.code(),
        Some(5),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    // optimization options rejected
    let r = synth_and_fit(&cfg, &[]);
    let bad_cfg = dir.path().join("cfg.json");
    let mut c = json(Path::new(&cfg));
    c["optimizer"] = serde_json::json!({"n_starts": 0});
    std::fs::write(&bad_cfg, c.to_string()).unwrap();
    let o = bin(&[
        "sweep",
        "--model",
        &s(&r.model),
        "--config",
        &s(&bad_cfg),
        "--out",
        &s(&dir.path().join("o")),
        "--grid",
        "2x2",
    ]);
    assert_eq!(o.status.code(), Some(6));
}
