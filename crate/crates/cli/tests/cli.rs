use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lichi::{save_gray, Image};
use tempfile::TempDir;

fn lichi() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lichi"));
    cmd.env_remove("LICHI_THREADS");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn scene(h: usize, w: usize, v: usize) -> Image {
    Image::from_fn(h, w, |r, c| (((r / 4 + c / 5 + v) % 4) * 55 + 20) as f64)
}

fn write_scene(dir: &Path, name: &str, v: usize) -> PathBuf {
    let p = dir.join(name);
    save_gray(&scene(32, 32, v), &p).unwrap();
    p
}

fn sidecar(out: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(format!("{}.json", out.display())).unwrap();
    serde_json::from_str(&text).unwrap()
}

const SMALL: [&str; 4] = ["--window", "15", "--iters", "2"];

#[test]
fn zero_sigma_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let input = write_scene(dir.path(), "in.png", 0);
    let out = run(lichi()
        .args(["denoise", "--sigma", "0", "--out"])
        .arg(dir.path().join("o.png"))
        .arg("--in")
        .arg(&input));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("sigma must be positive"), "{}", stderr(&out));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let out = run(lichi()
        .args(["denoise", "--sigma", "10", "--in"])
        .arg(dir.path().join("nope.png"))
        .arg("--out")
        .arg(dir.path().join("o.png")));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_dataset_exits_one() {
    let dir = TempDir::new().unwrap();
    let out = run(lichi()
        .args(["eval", "--reproduce", "table2", "--dataset"])
        .arg(dir.path().join("set12"))
        .arg("--out")
        .arg(dir.path().join("r.csv")));
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let input = write_scene(dir.path(), "in.png", 0);
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "patchh = 5\n").unwrap();
    let out = run(lichi()
        .args(["denoise", "--sigma", "10", "--in"])
        .arg(&input)
        .arg("--out")
        .arg(dir.path().join("o.png"))
        .arg("--config")
        .arg(&cfg));
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn sigma_25_uses_the_default_schedule() {
    let dir = TempDir::new().unwrap();
    let gt = write_scene(dir.path(), "gt.png", 1);
    let o = dir.path().join("o.png");
    let out = run(lichi()
        .args(["denoise", "--add-noise", "--sigma", "25", "--seed", "3", "--gt"])
        .arg(&gt)
        .arg("--out")
        .arg(&o));
    assert!(out.status.success(), "{}", stderr(&out));
    let cfg = &sidecar(&o)["config"]["lichi"];
    assert_eq!(cfg["iterations"], 9);
    assert_eq!(cfg["patch_side"], 6);
    assert_eq!(cfg["group_size"], 64);
    assert_eq!(cfg["pilot"]["patch_side"], 11);
    assert_eq!(cfg["pilot"]["group_size"], 16);
    assert!(stderr(&out).contains("config_hash "));
    let text = stdout(&out);
    assert!(text.contains("psnr_noisy_db") && text.contains("psnr_db"), "{text}");
}

#[test]
fn add_noise_with_a_seed_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let gt = write_scene(dir.path(), "gt.png", 2);
    let outputs: Vec<Vec<u8>> = ["a.png", "b.png"]
        .iter()
        .map(|name| {
            let o = dir.path().join(name);
            let out = run(lichi()
                .args(["denoise", "--add-noise", "--sigma", "20", "--seed", "7", "--gt"])
                .arg(&gt)
                .arg("--out")
                .arg(&o)
                .args(SMALL));
            assert!(out.status.success(), "{}", stderr(&out));
            std::fs::read(&o).unwrap()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn thread_count_does_not_change_the_output() {
    let dir = TempDir::new().unwrap();
    let gt = write_scene(dir.path(), "gt.png", 3);
    let mut images = Vec::new();
    for threads in ["1", "3"] {
        let o = dir.path().join(format!("t{threads}.png"));
        let out = run(lichi()
            .args(["denoise", "--add-noise", "--sigma", "30", "--seed", "1", "--threads", threads, "--gt"])
            .arg(&gt)
            .arg("--out")
            .arg(&o)
            .args(SMALL));
        assert!(out.status.success(), "{}", stderr(&out));
        images.push(std::fs::read(&o).unwrap());
    }
    assert_eq!(images[0], images[1]);
}

#[test]
fn flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    let gt = write_scene(dir.path(), "gt.png", 4);
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "seed = 5\niters = 3\nwindow = 15\npatch = 4\npilot = \"avg\"\n").unwrap();

    let from_file = dir.path().join("f.png");
    let out = run(lichi()
        .args(["denoise", "--add-noise", "--sigma", "20", "--gt"])
        .arg(&gt)
        .arg("--out")
        .arg(&from_file)
        .arg("--config")
        .arg(&cfg));
    assert!(out.status.success(), "{}", stderr(&out));
    let rec = sidecar(&from_file);
    assert_eq!(rec["config"]["seed"], 5);
    assert_eq!(rec["config"]["lichi"]["iterations"], 3);
    assert_eq!(rec["config"]["lichi"]["patch_side"], 4);
    assert_eq!(rec["config"]["lichi"]["pilot"]["method"]["name"], "avg");

    let flagged = dir.path().join("g.png");
    let out = run(lichi()
        .args(["denoise", "--add-noise", "--sigma", "20", "--iters", "2", "--seed", "6", "--gt"])
        .arg(&gt)
        .arg("--out")
        .arg(&flagged)
        .arg("--config")
        .arg(&cfg));
    assert!(out.status.success(), "{}", stderr(&out));
    let rec2 = sidecar(&flagged);
    assert_eq!(rec2["config"]["seed"], 6);
    assert_eq!(rec2["config"]["lichi"]["iterations"], 2);
    assert_eq!(rec2["config"]["lichi"]["patch_side"], 4);
    assert_ne!(rec["config_hash"], rec2["config_hash"]);
}

#[test]
fn table2_preset_writes_one_row_per_image_and_sigma() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("set12");
    std::fs::create_dir(&data).unwrap();
    for v in 0..12 {
        save_gray(&scene(24, 24, v), data.join(format!("{v:02}.png"))).unwrap();
    }
    let csv = dir.path().join("r.csv");
    let out = run(lichi()
        .args(["eval", "--reproduce", "table2", "--dataset"])
        .arg(&data)
        .arg("--out")
        .arg(&csv)
        .args(["--window", "9", "--iters", "1", "--patch", "4", "--group", "8", "--pilot-patch", "5", "--pilot-group", "6"]));
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.contains("config_hash"), "{header}");
    assert_eq!(lines.count(), 60);
}

#[test]
fn adaptation_preset_writes_a_curve() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("imgs");
    std::fs::create_dir(&data).unwrap();
    save_gray(&scene(32, 32, 5), data.join("a.png")).unwrap();
    let csv = dir.path().join("c.csv");
    let out = run(lichi()
        .args(["eval", "--reproduce", "fig2", "--steps", "3", "--dataset"])
        .arg(&data)
        .arg("--out")
        .arg(&csv)
        .args(["--window", "15"]));
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "step,psnr_db,config_hash");
    assert_eq!(text.lines().count(), 5);
}
