use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use xcat::format::{load_qmodel, save_weights};
use xcat::image_io::{load_png, save_png, save_png_f32};
use xcat::manifest::RunManifest;
use xcat_core::ops::nearest_upsample_reference;
use xcat_core::{synth, Model, Shape, Tensor, XcatConfig};

fn xcat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xcat"))
        .args(args)
        .env("XCAT_LOG", "warn")
        .output()
        .expect("spawn xcat")
}

fn ok(args: &[&str]) -> Output {
    let out = xcat(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn image_dir(root: &Path, name: &str, seed: u64, count: usize, side: usize) -> PathBuf {
    let dir = root.join(name);
    std::fs::create_dir_all(&dir).unwrap();
    for (i, img) in synth::images(seed, count, side, side)
        .unwrap()
        .iter()
        .enumerate()
    {
        save_png_f32(img, &dir.join(format!("img{i}.png"))).unwrap();
    }
    dir
}

fn trained_model(root: &Path) -> PathBuf {
    let data = image_dir(root, "train", 10, 2, 30);
    let out = root.join("run");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--epochs",
        "1",
        "--minibatches",
        "2",
        "--batch",
        "2",
        "--crop",
        "24",
        "--seed",
        "3",
    ]);
    out.join("model.hxsr")
}

#[test]
fn train_is_reproducible_and_replayable() {
    let root = tempfile::tempdir().unwrap();
    let data = image_dir(root.path(), "data", 1, 3, 36);
    let args = |out: &Path| {
        vec![
            "train".to_string(),
            "--data".into(),
            s(&data).into(),
            "--out".into(),
            s(out).into(),
            "--epochs".into(),
            "3".into(),
            "--minibatches".into(),
            "4".into(),
            "--batch".into(),
            "2".into(),
            "--crop".into(),
            "24".into(),
            "--seed".into(),
            "7".into(),
            "--deterministic".into(),
        ]
    };
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    ok(&args(&a).iter().map(String::as_str).collect::<Vec<_>>());
    ok(&args(&b).iter().map(String::as_str).collect::<Vec<_>>());
    let ckpt = std::fs::read(a.join("model.hxsr")).unwrap();
    assert_eq!(ckpt, std::fs::read(b.join("model.hxsr")).unwrap());

    let log = std::fs::read_to_string(a.join("train_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,lr,mean_loss,wall_seconds");
    assert_eq!(lines.len(), 4);

    let manifest = RunManifest::read(&a.join("train.manifest.json")).unwrap();
    assert_eq!(manifest.command, "train");
    assert_eq!(manifest.seed, 7);
    assert_eq!(manifest.config["stage_one"]["epochs"], 3);
    assert_eq!(manifest.config["architecture"]["blocks"], 2);
    std::fs::remove_file(a.join("model.hxsr")).unwrap();
    ok(&["rerun", "--manifest", s(&a.join("train.manifest.json"))]);
    assert_eq!(std::fs::read(a.join("model.hxsr")).unwrap(), ckpt);
}

#[test]
fn stage_two_from_checkpoint() {
    let root = tempfile::tempdir().unwrap();
    let data = image_dir(root.path(), "data", 2, 2, 30);
    let missing = root.path().join("nope.hxsr");
    let out = xcat(&[
        "train",
        "--data",
        s(&data),
        "--stage2",
        "--from",
        s(&missing),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.hxsr"));

    let ckpt = trained_model(root.path());
    let out2 = root.path().join("s2");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&out2),
        "--stage2",
        "--from",
        s(&ckpt),
        "--epochs",
        "1",
        "--minibatches",
        "2",
        "--batch",
        "2",
        "--crop",
        "24",
    ]);
    assert!(out2.join("train_log_stage2.csv").is_file());
    assert!(!out2.join("train_log.csv").exists());
    let m = RunManifest::read(&out2.join("train.manifest.json")).unwrap();
    assert!(m.config["stage_one"].is_null());
    assert_eq!(m.config["stage_two"]["loss"], "mse");
}

#[test]
fn missing_paths_exit_2() {
    let root = tempfile::tempdir().unwrap();
    let out = xcat(&["train", "--data", s(&root.path().join("missing"))]);
    assert_eq!(out.status.code(), Some(2));
    let empty = root.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(xcat(&["train", "--data", s(&empty)]).status.code(), Some(2));
    assert_eq!(
        xcat(&["infer", "--model", "x", "--input", "y", "--output", "z"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn infer_zero_model_is_nearest_upsampling() {
    let root = tempfile::tempdir().unwrap();
    let model = root.path().join("zero.hxsr");
    save_weights(
        &Model::<f32>::zeroed(XcatConfig::default()).unwrap(),
        &model,
    )
    .unwrap();
    let lr = Tensor::from_fn(Shape::new(1, 7, 9, 3), |_, y, x, c| {
        ((y * 31 + x * 7 + c * 50) % 256) as u8
    })
    .unwrap();
    let input = root.path().join("lr.png");
    save_png(&lr, &input).unwrap();
    let output = root.path().join("sr.png");
    ok(&[
        "infer",
        "--model",
        s(&model),
        "--input",
        s(&input),
        "--output",
        s(&output),
    ]);
    assert_eq!(
        load_png(&output).unwrap(),
        nearest_upsample_reference(&lr, 3).unwrap()
    );
    assert!(root.path().join("sr.png.manifest.json").is_file());
}

#[test]
fn float_and_quantized_inference() {
    let root = tempfile::tempdir().unwrap();
    let model = trained_model(root.path());
    let input = root.path().join("lr.png");
    save_png_f32(&synth::image(40, 10, 12).unwrap(), &input).unwrap();
    let q = root.path().join("m.hxq8");
    ok(&[
        "quantize",
        "--model",
        s(&model),
        "--representative",
        s(&input),
        "--output",
        s(&q),
    ]);
    let (f_out, q_out) = (root.path().join("f.png"), root.path().join("q.png"));
    ok(&[
        "infer",
        "--model",
        s(&model),
        "--input",
        s(&input),
        "--output",
        s(&f_out),
    ]);
    ok(&[
        "infer",
        "--model",
        s(&q),
        "--input",
        s(&input),
        "--output",
        s(&q_out),
        "--quantized",
    ]);
    assert_eq!(load_png(&f_out).unwrap().shape(), Shape::new(1, 30, 36, 3));
    assert_eq!(load_png(&q_out).unwrap().shape(), Shape::new(1, 30, 36, 3));
    // a float weight file is not a quantized model
    assert_eq!(
        xcat(&[
            "infer",
            "--model",
            s(&model),
            "--input",
            s(&input),
            "--output",
            s(&q_out),
            "--quantized"
        ])
        .status
        .code(),
        Some(2)
    );

    let rgba = root.path().join("rgba.png");
    image::RgbaImage::from_pixel(4, 4, image::Rgba([1, 2, 3, 255]))
        .save(&rgba)
        .unwrap();
    let out = xcat(&[
        "infer",
        "--model",
        s(&model),
        "--input",
        s(&rgba),
        "--output",
        s(&f_out),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn search_rep_picks_the_best_candidate() {
    let root = tempfile::tempdir().unwrap();
    let model = trained_model(root.path());
    let cands = image_dir(root.path(), "cands", 50, 3, 12);
    let val = image_dir(root.path(), "val", 60, 2, 24);
    let (q, report) = (
        root.path().join("best.hxq8"),
        root.path().join("search.csv"),
    );
    ok(&[
        "search-rep",
        "--model",
        s(&model),
        "--candidates",
        s(&cands),
        "--val",
        s(&val),
        "--output",
        s(&q),
        "--report",
        s(&report),
    ]);
    let mut rdr = csv::Reader::from_path(&report).unwrap();
    let rows: Vec<(String, f64, bool)> = rdr.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    let best = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let chosen: Vec<_> = rows.iter().filter(|r| r.2).collect();
    assert_eq!(chosen.len(), 1);
    assert_eq!(chosen[0].1, best);
    assert_eq!(chosen[0].1, rows.iter().find(|r| r.1 == best).unwrap().1);

    // the chosen model equals a plain quantize with the chosen image
    let chosen_png = cands.join(format!("{}.png", chosen[0].0));
    let plain = root.path().join("plain.hxq8");
    ok(&[
        "quantize",
        "--model",
        s(&model),
        "--representative",
        s(&chosen_png),
        "--output",
        s(&plain),
    ]);
    assert_eq!(load_qmodel(&q).unwrap(), load_qmodel(&plain).unwrap());

    // sequential mode gives the same table; Y metric gives a different one
    let report_det = root.path().join("det.csv");
    ok(&[
        "search-rep",
        "--model",
        s(&model),
        "--candidates",
        s(&cands),
        "--val",
        s(&val),
        "--output",
        s(&q),
        "--report",
        s(&report_det),
        "--deterministic",
    ]);
    assert_eq!(
        std::fs::read(&report).unwrap(),
        std::fs::read(&report_det).unwrap()
    );
    let report_y = root.path().join("y.csv");
    ok(&[
        "search-rep",
        "--model",
        s(&model),
        "--candidates",
        s(&cands),
        "--val",
        s(&val),
        "--output",
        s(&q),
        "--report",
        s(&report_y),
        "--metric",
        "y",
    ]);
    assert_ne!(
        std::fs::read(&report).unwrap(),
        std::fs::read(&report_y).unwrap()
    );

    let empty = root.path().join("none");
    std::fs::create_dir(&empty).unwrap();
    let out = xcat(&[
        "search-rep",
        "--model",
        s(&model),
        "--candidates",
        s(&empty),
        "--val",
        s(&val),
        "--output",
        s(&q),
        "--report",
        s(&report),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_report_and_score() {
    let root = tempfile::tempdir().unwrap();
    let model = trained_model(root.path());
    let data = image_dir(root.path(), "eval", 70, 2, 27);
    let input = data.join("img0.png");
    let q = root.path().join("m.hxq8");
    ok(&[
        "quantize",
        "--model",
        s(&model),
        "--representative",
        s(&input),
        "--output",
        s(&q),
    ]);
    let report = root.path().join("eval.csv");
    ok(&[
        "eval",
        "--model",
        s(&model),
        "--qmodel",
        s(&q),
        "--data",
        s(&data),
        "--runtime-ms",
        "320",
        "--report",
        s(&report),
    ]);
    let text = std::fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "image_id,psnr_fp32,psnr_uint8,delta");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("img0,"));
    assert!(lines[3].starts_with("# mean_fp32=") && lines[3].contains("challenge_score="));
    assert!(root.path().join("eval.csv.manifest.json").is_file());
    let out = ok(&[
        "eval",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--metric",
        "y",
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("image_id,"));
    assert_eq!(xcat(&["eval", "--data", s(&data)]).status.code(), Some(2));
}

#[test]
fn ablate_and_count() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("ablate.csv");
    ok(&["ablate", "--out", s(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(
        text.lines().count(),
        1 + xcat_core::model::presets::names().len()
    );
    assert!(root.path().join("ablate.csv.manifest.json").is_file());
    let stdout = String::from_utf8(ok(&["count", "--config", "xcat-baseline"]).stdout).unwrap();
    assert!(stdout.contains("trainable 16519\n") && stdout.contains("fixed 81\n"));
    let bad = xcat(&["count", "--config", "Z"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("valid names"));
    assert!(xcat(&["count", "--help"]).status.success());
}
