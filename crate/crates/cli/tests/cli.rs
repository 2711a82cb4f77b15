use std::path::Path;
use std::process::Command;

fn seanav(args: &[&str], cwd: &Path) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_seanav"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

const TINY: &str = r#"
seed = 3
[camera]
hfov = 1.5
width = 16
height = 16
max_range = 6.0
[data]
terrains = 2
references_per_terrain = 2
obs_stride = 12
val_fraction = 0.0
store_frames = true
[policy]
width = 8
layers = 1
heads = 2
ff = 8
unet = [4, 8]
step_embed = 4
[train]
epochs = 1
batch = 4
[navigation]
trials = 1
[navigation.episode]
max_time = 2.0
[hover]
duration = 2.0
disturbances = []
[sweep]
noise_seeds = [0]
"#;

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(seanav(&["no-such-command"], dir.path()).0, 1);
    assert_eq!(seanav(&["eval"], dir.path()).0, 1);
    assert_eq!(seanav(&["--help"], dir.path()).0, 0);
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = seanav(&["eval", "--checkpoint", "missing.ckpt"], dir.path());
    assert_eq!(code, 2, "{err}");
    let (code, _, err) = seanav(&["gen-data", "--water", "9C"], dir.path());
    assert_eq!(code, 2);
    assert!(err.contains("9C"));
}

#[test]
fn pipeline_from_data_to_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("run.toml"), TINY).unwrap();
    let run = |args: &[&str]| {
        let mut full = vec!["--config", "run.toml"];
        full.extend_from_slice(args);
        let (code, out, err) = seanav(&full, p);
        assert_eq!(code, 0, "{args:?}\nstdout: {out}\nstderr: {err}");
        out
    };
    run(&["gen-world", "--index", "1", "--out", "world"]);
    assert!(p.join("world/plan.json").exists());
    let out = run(&["gen-data", "--out", "data"]);
    assert!(out.contains("episodes"));
    run(&["fit-stats", "--data", "data", "--out", "stats.json"]);
    run(&["train", "--data", "data", "--out", "policy.ckpt"]);
    run(&[
        "eval",
        "--checkpoint",
        "policy.ckpt",
        "--out",
        "results/eval",
    ]);
    run(&[
        "eval",
        "--checkpoint",
        "policy.ckpt",
        "--extractor",
        "degraded",
        "--water",
        "7C",
        "--out",
        "results/eval7c",
    ]);
    run(&[
        "hover",
        "--checkpoint",
        "policy.ckpt",
        "--out",
        "results/hover",
    ]);
    run(&[
        "sweep",
        "--checkpoint",
        "policy.ckpt",
        "--out",
        "results/sweep",
    ]);
    run(&[
        "render", "--data", "data", "--water", "3C", "--limit", "2", "--out", "frames",
    ]);
    assert_eq!(std::fs::read_dir(p.join("frames")).unwrap().count(), 2);
    run(&["report", "--inputs", "results", "--out", "report"]);
    let table = std::fs::read_to_string(p.join("report/metrics.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.contains("degraded/7C"));
    assert!(p.join("report/hover_series_0.csv").exists());
    assert!(p.join("report/sweep_traces.csv").exists());
}
