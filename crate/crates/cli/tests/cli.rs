use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn roomforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roomforge")).args(args).output().expect("binary runs")
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    fs::write(
        &path,
        r#"
seed = 5
asset_count = 1

[paths]
output = "out"

[prompts]
max_prompts = 30

[cameras]
count = 6
image_size = 20
elevations_deg = [-20.0, 20.0]

[train]
resolution = 12
steps = 3
rays_per_batch = 64
samples_per_ray = 24

[extraction]
iso = 0.05
smooth_iters = 1

[mesh]
refine_iters = 0

[preview]
width = 24
height = 16
views = 1
"#,
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn validate_default_config() {
    let o = roomforge(&["validate-config"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("configuration ok"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "asset_count = \"many\"\n").unwrap();
    let o = roomforge(&["validate-config", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    fs::write(&bad, "[paths]\nfloorplan = \"missing.json\"\n").unwrap();
    let o = roomforge(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("paths.floorplan"));

    let o = roomforge(&["validate-config", "--config", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stage_out_of_order_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = roomforge(&["train", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("views"));
}

#[test]
fn prompts_stage_with_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for (out, seed) in [(&out_a, "1"), (&out_b, "2")] {
        let o = roomforge(&["prompts", "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read_to_string(out_a.join("prompts/ranked.csv")).unwrap();
    let b = fs::read_to_string(out_b.join("prompts/ranked.csv")).unwrap();
    assert!(a.starts_with("rank,prompt,"));
    assert_ne!(a, b);
}

#[test]
fn run_then_rerun_is_fully_cached() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = roomforge(&["run", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("6 of 6 stages executed"));
    assert!(dir.path().join("out/preview/room_0.png").is_file());
    let o = roomforge(&["run", "--config", &cfg]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("0 of 6 stages executed"), "{stdout}");
    assert_eq!(stdout.matches("cached").count(), 6);
}
