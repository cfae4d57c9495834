use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
    "truth": {"length_days": 5, "separation_days": 5, "spinup_days": 2},
    "dataset": {"n_samples": [3]},
    "train": {"config": {"epochs_phase1": 5, "epochs_phase2": 5}},
    "skill": {"n_ensemble": 2, "init_spacing_days": 1, "leads_days": [0, 1, 2]},
    "da": {"minimizer": {"max_iterations": 5}}
}"#;

fn qgml(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qgml"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("QGML_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn stages_chain_through_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("run");

    let o = qgml(&["obs"], &cfg, &out);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("qgml truth"));

    for stage in ["truth", "obs", "assimilate"] {
        let o = qgml(&[stage], &cfg, &out);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    for dir in ["truth", "obs", "assimilate/original"] {
        assert!(out.join(dir).join("manifest.json").is_file(), "{dir}");
    }
    let o = qgml(&["assimilate", "--mode", "hybrid"], &cfg, &out);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("qgml train"));

    for stage in ["dataset", "train", "skill"] {
        let o = qgml(&[stage], &cfg, &out);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let o = qgml(&["assimilate", "--mode", "oracle", "--tau", "3h"], &cfg, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("assimilate/oracle-tau3h/summary.csv").is_file());
    let o = qgml(&["report"], &cfg, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("report/summary.csv")).unwrap();
    assert!(summary.contains("analysis_rmse_oracle-tau3h"), "{summary}");

    // Rerunning from the truth manifest reproduces its bytes elsewhere.
    let again = dir.path().join("again");
    let o = qgml(&["truth"], &out.join("truth/manifest.json"), &again);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(out.join("truth/traj_0.qgt")).unwrap(),
        fs::read(again.join("truth/traj_0.qgt")).unwrap()
    );
}

#[test]
fn seed_flag_changes_observations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, SMALL).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, seed) in [(&a, "1"), (&b, "2")] {
        for stage in ["truth", "obs"] {
            let o = qgml(&[stage, "--seed", seed], &cfg, out);
            assert!(o.status.success(), "{}", stderr(&o));
        }
    }
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(b.join("obs/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["seed"], 2);
    assert_ne!(
        fs::read(a.join("obs/obs_0.jsonl")).unwrap(),
        fs::read(b.join("obs/obs_0.jsonl")).unwrap()
    );
}

#[test]
fn bad_inputs_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"obs": {"obs_var": -1}}"#).unwrap();
    let o = qgml(&["truth"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("obs"), "{}", stderr(&o));

    fs::write(&cfg, r#"{"dataset": {"tau_days": [0.01]}}"#).unwrap();
    let o = qgml(&["truth"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dataset.tau_days[0]"), "{}", stderr(&o));

    fs::write(&cfg, "{}").unwrap();
    let o = qgml(&["assimilate", "--tau", "soon"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2));

    let o = Command::new(env!("CARGO_BIN_EXE_qgml"))
        .args(["truth", "--config"])
        .arg(&cfg)
        .env("QGML_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("QGML_THREADS"));
}
