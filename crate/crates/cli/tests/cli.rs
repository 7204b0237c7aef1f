use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .canonicalize()
        .unwrap()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agentrouter"))
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Fixture config with absolute paths, one seed and a short schedule.
fn quick_config(dir: &Path, edits: &[(&str, &str)]) -> PathBuf {
    let fx = fixtures();
    let mut text = fs::read_to_string(fx.join("config.toml"))
        .unwrap()
        .replace("\"train.jsonl\"", &format!("{:?}", fx.join("train.jsonl")))
        .replace("\"val.jsonl\"", &format!("{:?}", fx.join("val.jsonl")))
        .replace("\"cache.jsonl\"", &format!("{:?}", fx.join("cache.jsonl")))
        .replace("seeds = [0, 1, 2]", "seeds = [0]")
        .replace("epochs = 30", "epochs = 3");
    for (from, to) in edits {
        assert!(text.contains(from), "{from} not in fixture config");
        text = text.replace(from, to);
    }
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn help_lists_the_commands() {
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in [
        "build-graphs",
        "train",
        "eval",
        "sweep-topk",
        "transfer",
        "agents",
        "report",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&run(&["train"])), 2);
    let cfg = fixtures().join("config.toml");
    assert_eq!(
        code(&run(&[
            "eval",
            "--config",
            cfg.to_str().unwrap(),
            "--drop-mode",
            "sideways"
        ])),
        2
    );
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn malformed_data_exits_3() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\": \"x\", \"question\": \n").unwrap();
    let train = format!("{:?}", fixtures().join("train.jsonl"));
    let cfg = quick_config(tmp.path(), &[]);
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace(&train, &format!("{bad:?}"));
    fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("out");
    let o = run(&[
        "build-graphs",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn build_graphs_writes_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = quick_config(tmp.path(), &[]);
    let out = tmp.path().join("g");
    let o = run(&[
        "build-graphs",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("graphs/fx-0.graph.json").exists());
    assert!(out.join("graph_stats.txt").exists());
    assert!(out.join("config.effective.toml").exists());
}

#[test]
fn train_then_eval_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = quick_config(tmp.path(), &[]);
    let cfg = cfg.to_str().unwrap();
    let run_dir = tmp.path().join("run");
    let o = run(&["train", "--config", cfg, "--out", run_dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut reports = Vec::new();
    for name in ["e1", "e2"] {
        let out = tmp.path().join(name);
        let ckpt = run_dir.to_str().unwrap();
        let o = run(&[
            "eval",
            "--config",
            cfg,
            "--checkpoint",
            ckpt,
            "--k",
            "6",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).contains("router"));
        reports.push((
            fs::read(out.join("report.jsonl")).unwrap(),
            fs::read(out.join("routing-seed-0.jsonl")).unwrap(),
        ));
    }
    assert_eq!(reports[0], reports[1]);
    let out = tmp.path().join("e3");
    let missing = run(&[
        "eval",
        "--config",
        cfg,
        "--checkpoint",
        run_dir.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&missing), 3, "{}", stderr(&missing));
    assert!(stderr(&missing).contains("seed 9"));
}

#[test]
fn mock_agents_run_fills_the_cache() {
    let tmp = TempDir::new().unwrap();
    let cfg = quick_config(
        tmp.path(),
        &[
            ("train_range = [0, 15]", "train_range = [0, 1]"),
            ("val_range = [0, 5]", "val_range = [0, 0]"),
            ("test_range = [5, 15]", "test_range = [5, 5]"),
        ],
    );
    let out = tmp.path().join("agents");
    let args = [
        "agents",
        "run",
        "--mock-backend",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(out.join("agent_cache.jsonl"))
            .unwrap()
            .lines()
            .count(),
        24
    );
}
