use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
n_subjects = 60
n_features = 5
n_informative = 2
n_static = 1
min_ticks = 6
max_ticks = 10
n_trees = 20
hidden = 6
rollout_ticks = 128
min_steps = 256
max_steps = 512
c_max = 2.0
";

fn dynafs(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynafs"))
        .args(args)
        .current_dir(dir)
        .env("DYNAFS_THREADS", "1")
        .output()
        .expect("spawn dynafs")
}

fn write_config(dir: &Path, name: &str, extra: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "no_such_key = 1\n");
    let o = dynafs(&["--config", &cfg, "run"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let cfg = write_config(dir.path(), "neg.toml", "ema_coeff = 1.5\n");
    let o = dynafs(&["--config", &cfg, "run"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_events_file_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("schema.csv"),
        "name,kind,obs_cost\na,dynamic,1\n",
    )
    .unwrap();
    let cfg = write_config(
        dir.path(),
        "csv.toml",
        "data_source = \"csv\"\nevents_path = \"missing.csv\"\nschema_path = \"schema.csv\"\nlabel_feature = \"label\"\n",
    );
    let o = dynafs(&["--config", &cfg, "train-predictor"], dir.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn budget_out_of_reach_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tight.toml", "");
    let text = std::fs::read_to_string(&cfg)
        .unwrap()
        .replace("c_max = 2.0", "c_max = 0.05")
        .replace(
            "min_steps = 256\nmax_steps = 512",
            "min_steps = 128\nmax_steps = 128",
        );
    std::fs::write(&cfg, text).unwrap();
    let o = dynafs(&["--config", &cfg, "--out-dir", "out", "run"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(dir.path().join("out/metrics.json").exists());
}

#[test]
fn gen_data_then_run_on_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gen.toml", "");
    let o = dynafs(
        &["--config", &cfg, "--out-dir", "data", "gen-data"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["schema.csv", "events.csv", "relevance.json"] {
        assert!(dir.path().join("data").join(f).exists(), "{f}");
    }

    let csv = write_config(
        dir.path(),
        "csv.toml",
        "data_source = \"csv\"\nevents_path = \"data/events.csv\"\nschema_path = \"data/schema.csv\"\nlabel_feature = \"label\"\ntick_hours = 1.0\n",
    );
    let o = dynafs(
        &["--config", &csv, "--seed", "4", "--out-dir", "run", "run"],
        dir.path(),
    );
    assert!(matches!(o.status.code(), Some(0 | 3)), "{}", stderr(&o));
    let metrics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("run/metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics["seed"], 4);
    assert!(metrics["test"]["loss"].as_f64().unwrap().is_finite());

    let o = dynafs(
        &[
            "--config",
            &csv,
            "viz",
            "--input",
            "run/activation.csv",
            "--output",
            "act.svg",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = std::fs::read_to_string(dir.path().join("act.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn staged_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", "");
    let run = |args: &[&str]| {
        let mut all = vec!["--config", cfg.as_str(), "--out-dir", "out"];
        all.extend_from_slice(args);
        let o = dynafs(&all, dir.path());
        assert!(
            matches!(o.status.code(), Some(0 | 3)),
            "{args:?}: {}",
            stderr(&o)
        );
    };
    run(&["train-predictor"]);
    run(&[
        "train-policy",
        "--predictor",
        "out/predictor_pretrained.json",
    ]);
    run(&[
        "retrain-predictor",
        "--policy",
        "out/policy.json",
        "--predictor",
        "out/predictor_pretrained.json",
    ]);
    run(&["baseline", "--selection", "knapsack"]);
    for f in [
        "history.jsonl",
        "policy.json",
        "selection.csv",
        "baseline_metrics.json",
    ] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
}

#[test]
fn sweep_writes_curve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", "");
    let o = dynafs(
        &[
            "--config",
            &cfg,
            "--out-dir",
            "sw",
            "sweep",
            "--c-max",
            "1,3",
            "--baseline",
            "permutation",
        ],
        dir.path(),
    );
    assert!(matches!(o.status.code(), Some(0 | 3)), "{}", stderr(&o));
    let curve = std::fs::read_to_string(dir.path().join("sw/curve.csv")).unwrap();
    assert!(curve.lines().count() >= 4, "{curve}");
    assert!(dir.path().join("sw/curve.svg").exists());
    assert!(dir.path().join("sw/cmax_1/metrics.json").exists());
}

#[test]
fn run_twice_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "d.toml", "");
    for out in ["a", "b"] {
        let o = dynafs(
            &["--config", &cfg, "--seed", "9", "--out-dir", out, "run"],
            dir.path(),
        );
        assert!(matches!(o.status.code(), Some(0 | 3)), "{}", stderr(&o));
    }
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a/metrics.json"), read("b/metrics.json"));
}
