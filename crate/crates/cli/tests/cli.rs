use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dermgan_core::codec::dataset::{self, mask_path, read_bitmap, read_rgb};
use dermgan_core::codec::synth_samples;
use dermgan_core::Attribute;
use tempfile::TempDir;

fn dermgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dermgan"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn dermgan")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two-epoch run on four 32 px synthetic samples.
fn tiny_run(out: &Path, seed: &str) -> Output {
    dermgan(&[
        "--threads", "1", "train", "--synth", "4", "--image-size", "32", "--base-width", "8",
        "--epochs", "2", "--seed", seed, "--out", s(out),
    ])
}

#[test]
fn rejects_unsupported_disc_channels() {
    let dir = TempDir::new().unwrap();
    let o = dermgan(&["train", "--synth", "2", "--disc-channels", "5", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("{1, 6}"), "{}", stderr(&o));
}

#[test]
fn conflicting_flags_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d");
    fs::create_dir(&data).unwrap();
    let o = dermgan(&["train", "--synth", "2", "--data-dir", s(&data), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let o = dermgan(&["train", "--manifest", "m.json", "--epochs", "3", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let o = dermgan(&["train", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_data_dir_is_reported() {
    let dir = TempDir::new().unwrap();
    let o = dermgan(&["train", "--data-dir", "/nonexistent/lesions", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/lesions"));
}

#[test]
fn train_writes_run_directory() {
    let dir = TempDir::new().unwrap();
    let o = tiny_run(dir.path(), "3");
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["manifest.json", "metrics.jsonl", "checkpoint.bin"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["net"]["image_size"], 32);
    assert_eq!(manifest["train"]["epochs"], 2);
    assert_eq!(manifest["train"]["lambda_l1"], 100.0);
    assert_eq!(manifest["data"]["kind"], "synth");
    assert_eq!(manifest["train_ids"].as_array().unwrap().len(), 4);
    assert_eq!(fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap().lines().count(), 2);
}

#[test]
fn identical_flags_give_identical_metrics() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    assert!(tiny_run(a.path(), "5").status.success());
    assert!(tiny_run(b.path(), "5").status.success());
    for f in ["metrics.jsonl", "checkpoint.bin", "manifest.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn manifest_replay_at_other_thread_count() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    assert!(tiny_run(a.path(), "6").status.success());
    let manifest = a.path().join("manifest.json");
    let o = dermgan(&["--threads", "3", "train", "--manifest", s(&manifest), "--out", s(b.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["metrics.jsonl", "checkpoint.bin", "manifest.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn presets_set_discriminator_channels() {
    let dir = TempDir::new().unwrap();
    let o = dermgan(&[
        "train", "--synth", "1", "--image-size", "32", "--base-width", "4", "--epochs", "1",
        "--preset", "exp2", "--out", s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["net"]["disc_out_channels"], 6);
}

#[test]
fn eval_writes_six_row_table() {
    let dir = TempDir::new().unwrap();
    assert!(tiny_run(dir.path(), "2").status.success());
    let out = dir.path().join("eval");
    let o = dermgan(&[
        "eval", "--checkpoint", s(&dir.path().join("checkpoint.bin")), "--data-dir",
        s(&dir.path().join("data")), "--out", s(&out), "--grid",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(out.join("metrics.txt")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    for (row, attr) in rows.iter().zip(Attribute::ALL) {
        assert!(row.starts_with(attr.label()), "{row}");
    }
    assert_eq!(String::from_utf8_lossy(&o.stdout), table);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report["sample_count"], 4);
    assert_eq!(read_rgb(&out.join("grid.png")).unwrap().dimensions(), (160, 128));
}

#[test]
fn corrupt_checkpoint_exits_with_integrity_code() {
    let dir = TempDir::new().unwrap();
    assert!(tiny_run(dir.path(), "1").status.success());
    let ckpt = dir.path().join("checkpoint.bin");
    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    fs::write(&ckpt, bytes).unwrap();
    let o = dermgan(&[
        "eval", "--checkpoint", s(&ckpt), "--data-dir", s(&dir.path().join("data")), "--out",
        s(&dir.path().join("eval")),
    ]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("corrupt checkpoint"), "{}", stderr(&o));
}

#[test]
fn predict_is_binary_and_deterministic() {
    let dir = TempDir::new().unwrap();
    assert!(tiny_run(dir.path(), "4").status.success());
    let image = dataset::image_path(&dir.path().join("data"), "0000002");
    let run = |out: &Path| {
        let o = dermgan(&[
            "predict", "--checkpoint", s(&dir.path().join("checkpoint.bin")), "--image", s(&image),
            "--out", s(out), "--eval-seed", "9",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        ["A", "B"].map(|p| fs::read(out.join(format!("ISIC_0000002_pack{p}.png"))).unwrap())
    };
    let first = run(&dir.path().join("p1"));
    let second = run(&dir.path().join("p2"));
    assert_eq!(first, second);
    for p in ["A", "B"] {
        let img = read_rgb(&dir.path().join("p1").join(format!("ISIC_0000002_pack{p}.png"))).unwrap();
        assert_eq!(img.dimensions(), (32, 32));
        assert!(img.as_raw().iter().all(|&v| v == 0 || v == 255));
    }
}

#[test]
fn predict_reports_unreadable_image() {
    let dir = TempDir::new().unwrap();
    assert!(tiny_run(dir.path(), "4").status.success());
    let bogus = dir.path().join("ISIC_1.png");
    fs::write(&bogus, b"not a png").unwrap();
    let o = dermgan(&[
        "predict", "--checkpoint", s(&dir.path().join("checkpoint.bin")), "--image", s(&bogus), "--out",
        s(&dir.path().join("p")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("ISIC_1.png"));
}

fn mask_fixture(root: &Path) -> Vec<dermgan_core::SamplePair> {
    let samples = synth_samples(3, 48, 11);
    for s in &samples {
        dataset::write_sample(root, s).unwrap();
    }
    samples
}

#[test]
fn pack_unpack_round_trip() {
    let dir = TempDir::new().unwrap();
    let (src, packed, unpacked) = (dir.path().join("src"), dir.path().join("pk"), dir.path().join("up"));
    let samples = mask_fixture(&src);
    let o = dermgan(&["pack", "--data-dir", s(&src), "--out", s(&packed)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = dermgan(&["unpack", "--data-dir", s(&packed), "--out", s(&unpacked)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for sample in &samples {
        for attr in Attribute::ALL {
            let got = read_bitmap(&mask_path(&unpacked, sample.id(), attr)).unwrap();
            assert_eq!(&got, sample.masks.get(attr), "{} {}", sample.id(), attr.label());
        }
    }
}

#[test]
fn pack_warns_about_missing_attribute() {
    let dir = TempDir::new().unwrap();
    let (src, packed, unpacked) = (dir.path().join("src"), dir.path().join("pk"), dir.path().join("up"));
    let samples = mask_fixture(&src);
    let id = samples[1].id();
    fs::remove_file(mask_path(&src, id, Attribute::Streaks)).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dermgan"))
        .args(["pack", "--data-dir", s(&src), "--out", s(&packed)])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let log = stderr(&o);
    assert!(log.contains("WARN") && log.contains(id) && log.contains("streaks"), "{log}");
    assert!(dermgan(&["unpack", "--data-dir", s(&packed), "--out", s(&unpacked)]).status.success());
    let streaks = read_bitmap(&mask_path(&unpacked, id, Attribute::Streaks)).unwrap();
    assert!(streaks.is_empty());
    let boundary = read_bitmap(&mask_path(&unpacked, id, Attribute::LesionBoundary)).unwrap();
    assert_eq!(&boundary, samples[1].masks.get(Attribute::LesionBoundary));
}

#[test]
fn empty_input_is_a_no_input_error() {
    let dir = TempDir::new().unwrap();
    fs::create_dir_all(dir.path().join("masks")).unwrap();
    for cmd in ["pack", "unpack"] {
        let o = dermgan(&[cmd, "--data-dir", s(dir.path()), "--out", s(&dir.path().join("o"))]);
        assert_eq!(o.status.code(), Some(3), "{cmd}");
        assert!(stderr(&o).contains("no input files"), "{cmd}: {}", stderr(&o));
    }
}

#[test]
fn unreadable_mask_fails_the_batch() {
    let dir = TempDir::new().unwrap();
    let src = dir.path().join("src");
    let samples = mask_fixture(&src);
    fs::write(mask_path(&src, samples[0].id(), Attribute::Globules), b"garbage").unwrap();
    let o = dermgan(&["pack", "--data-dir", s(&src), "--out", s(&dir.path().join("pk"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("1 of 3"), "{}", stderr(&o));
    assert!(dataset::packed_paths(&dir.path().join("pk"), samples[2].id()).0.is_file());
}

#[test]
fn gradcheck_filters_by_op() {
    let o = dermgan(&["gradcheck", "--op", "conv2d"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let rows: Vec<&str> = stdout.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|l| l.split_whitespace().nth(1) == Some("conv2d")), "{stdout}");
}

#[test]
fn gradcheck_catches_broken_derivative() {
    let o = dermgan(&["gradcheck", "--op", "tanh", "--break-tanh"]);
    assert_eq!(o.status.code(), Some(4));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("FAIL tanh"), "{stdout}");
    assert!(stdout.contains("max rel err"), "{stdout}");
}

#[test]
fn gradcheck_rejects_unknown_op() {
    let o = dermgan(&["gradcheck", "--op", "conv3d"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("conv2d"));
}
