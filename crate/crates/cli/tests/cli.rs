//! End-to-end checks of the command-line interface and its exit codes.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_saliency"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cli_test_{tag}"));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn no_arguments_is_a_usage_error() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_variant_exits_1_and_lists_variants() {
    let dir = temp_dir("unknown_variant");
    let out = bin()
        .args(["train", "--data", "nowhere", "--out"])
        .arg(dir.join("out"))
        .args(["--variant", "gluon"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    for name in ["additive", "concatenative", "gmu", "largmu"] {
        assert!(stderr.contains(name), "stderr should list {name}: {stderr}");
    }
}

#[test]
fn invalid_context_is_rejected_before_any_work() {
    let out = bin()
        .args([
            "train", "--data", "nowhere", "--out", "nowhere2", "--variant", "gmu",
            "--context", "5",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("context"), "{stderr}");
}

#[test]
fn gradcheck_single_op_passes_with_exit_0() {
    let out = bin().args(["gradcheck", "--op", "conv2d"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{:?}", out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS"), "{stdout}");
}

#[test]
fn gradcheck_without_scope_is_a_usage_error() {
    let out = bin().arg("gradcheck").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gen_data_then_render_writes_five_maps() {
    let dir = temp_dir("gen_render");
    let data = dir.join("data");
    let out = bin()
        .args(["gen-data", "--preset", "tiny", "--seed", "5", "--out"])
        .arg(&data)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{:?}", out);

    let render_out = dir.join("maps");
    let out = bin()
        .args(["render", "--scene"])
        .arg(data.join("scenes/scene_0002/scene.json"))
        .args(["--frame", "3", "--out"])
        .arg(&render_out)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{:?}", out);
    let mut names: Vec<String> = std::fs::read_dir(&render_out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        vec!["fer.ppm", "ge.ppm", "gf.ppm", "img.ppm", "sp.ppm"]
    );
    // PPM payload sanity: P6 header and 3 bytes per pixel
    let bytes = std::fs::read(render_out.join("ge.ppm")).unwrap();
    assert!(bytes.starts_with(b"P6\n24 24\n255\n"));
    assert_eq!(bytes.len(), 13 + 3 * 24 * 24);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bad_preset_is_a_usage_error() {
    let out = bin()
        .args(["gen-data", "--preset", "huge", "--out", "nowhere"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_dataset_fails_cleanly() {
    let out = bin()
        .args([
            "train", "--data", "/definitely/not/here", "--out", "alsonot", "--variant", "gmu",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
