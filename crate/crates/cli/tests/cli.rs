use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_netoffload"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn json(o: &Output) -> Value {
    assert_eq!(
        o.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn help_lists_subcommands() {
    let o = run(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for cmd in ["simulate", "partition", "decide", "appstats"] {
        assert!(text.contains(cmd));
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["simulate"]).status.code(), Some(2));
    assert_eq!(
        run(&["simulate", "--preset", "nope"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["simulate", "--preset", "fig3", "--seeds", "5..2"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["appstats", "--corpus", "/nonexistent/corpus.tsv"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn invalid_inputs_exit_two_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(
        &bad,
        r#"{"vertices": [{"name": "A"}], "edges": [{"a": "A", "b": "Z"}]}"#,
    )
    .unwrap();
    let out = tmp.path().join("report.json");
    let o = run(&[
        "partition",
        "--graph",
        bad.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    assert!(o.stdout.is_empty());
    assert!(!out.exists());

    let cfg = tmp.path().join("scenario.json");
    fs::write(&cfg, r#"{"topology": {"generate": {"kind": "line", "n": 3}}, "services": [], "base_rate": 10, "horizon": 1, "seed": 1, "strategy": {"kind": "none"}}"#).unwrap();
    let sim_out = tmp.path().join("sim");
    let o = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        sim_out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!sim_out.exists());
}

#[test]
fn print_config_round_trips_through_config() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&[
        "simulate",
        "--preset",
        "overload-line",
        "--strategy",
        "passive",
        "--seed",
        "4",
        "--print-config",
    ]);
    assert!(o.status.success());
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, &o.stdout).unwrap();
    let a = json(&run(&["simulate", "--config", cfg.to_str().unwrap()]));
    let b = json(&run(&[
        "simulate",
        "--preset",
        "overload-line",
        "--strategy",
        "passive",
        "--seed",
        "4",
    ]));
    assert_eq!(a, b);
}

#[test]
fn simulate_exports_requested_format() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let d = dir.to_str().unwrap();
    let m = json(&run(&[
        "simulate",
        "--config",
        data("scenario.json").to_str().unwrap(),
        "--format",
        "json",
        "--out",
        d,
    ]));
    assert!(dir.join("summary.json").exists());
    assert!(dir.join("series.json").exists());
    let total = m["total"].as_u64().unwrap();
    assert_eq!(
        m["executed"].as_u64().unwrap() + m["dropped"].as_u64().unwrap(),
        total
    );
}

#[test]
fn batch_reports_every_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    let s = json(&run(&[
        "simulate", "--preset", "fig3", "--seeds", "1..4", "--out", d,
    ]));
    assert_eq!(s["runs"], 4);
    for seed in 1..=4 {
        assert!(tmp.path().join(format!("seed-{seed}/summary.csv")).exists());
    }
    let file: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("batch.json")).unwrap()).unwrap();
    assert_eq!(file, s);
}

#[test]
fn partition_report_shape() {
    let r = json(&run(&[
        "partition",
        "--graph",
        data("callgraph.json").to_str().unwrap(),
        "--rules",
        data("rules.json").to_str().unwrap(),
    ]));
    let n_opt = r["n_opt"].as_u64().unwrap();
    let sets = r["sets"].as_array().unwrap();
    assert_eq!(sets.len() as u64, n_opt - 1);
    for (i, s) in sets.iter().enumerate() {
        assert_eq!(s["n_clusters"].as_u64().unwrap(), i as u64 + 2);
        let f = s["offloadable_fraction"].as_f64().unwrap();
        assert!((0.0..=100.0).contains(&f));
    }
}

#[test]
fn decide_keeps_pinned_classes_local() {
    let r = json(&run(&[
        "decide",
        "--graph",
        data("callgraph.json").to_str().unwrap(),
        "--rules",
        data("rules.json").to_str().unwrap(),
        "--rtt-ms",
        "1",
        "--bandwidth-bps",
        "1e9",
        "--speedup",
        "10",
        "--mode",
        "all",
    ]));
    for c in r["offload_classes"].as_array().unwrap() {
        let c = c.as_str().unwrap();
        assert!(!c.contains(".ui."), "{c}");
    }
}

#[test]
fn appstats_depth_controls_sharing() {
    let corpus = data("corpus.tsv");
    let shallow = json(&run(&[
        "appstats",
        "--corpus",
        corpus.to_str().unwrap(),
        "--depth",
        "2",
    ]));
    let deep = json(&run(&[
        "appstats",
        "--corpus",
        corpus.to_str().unwrap(),
        "--depth",
        "7",
    ]));
    assert!(deep["mean"].as_f64().unwrap() >= shallow["mean"].as_f64().unwrap());
    assert_eq!(deep["depth"], 7);
}
