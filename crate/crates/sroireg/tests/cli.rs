use std::path::Path;
use std::process::{Command, Output};

use sroireg::raster::{save_image, Image, RegionMask};
use sroireg::synth::{generate, write_scene, Deform, ModalityGap, SceneSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sroireg"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn sroireg")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn identity_scene(dir: &Path) {
    let spec = SceneSpec {
        width: 128,
        height: 128,
        n_blobs: 6,
        seed: 11,
        deform: Deform::None,
        modality_gap: ModalityGap::None,
    };
    let (ir, vi, gt) = generate(&spec).unwrap();
    write_scene(dir, &spec, &ir, &vi, &gt).unwrap();
}

#[test]
fn match_identity_pair_reports_full_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    identity_scene(&scene);
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "match",
        "--ir",
        scene.join("ir.pgm").to_str().unwrap(),
        "--vi",
        scene.join("vi.pgm").to_str().unwrap(),
        "--mask-ir",
        &format!("file:{}", scene.join("mask_ir.pgm").display()),
        "--mask-vi",
        &format!("file:{}", scene.join("mask_vi.pgm").display()),
        "--gt",
        scene.join("gt.json").to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["accuracy"], 1.0);
    assert!(report["matches"].as_u64().unwrap() > 0);
    let tsv = std::fs::read_to_string(out_dir.join("matches.tsv")).unwrap();
    assert!(tsv.starts_with("x_ir\ty_ir\tx_vi\ty_vi\tscore\n"));
    assert!(out_dir.join("effective-config.json").is_file());
}

#[test]
fn missing_mask_file_exits_2_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    identity_scene(&scene);
    let out = run(&[
        "match",
        "--ir",
        scene.join("ir.pgm").to_str().unwrap(),
        "--vi",
        scene.join("vi.pgm").to_str().unwrap(),
        "--mask",
        "file:/nonexistent/mask.pgm",
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("/nonexistent/mask.pgm"), "stderr: {msg}");
}

#[test]
fn high_theta_yields_zero_matches_with_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    identity_scene(&scene);
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "match",
        "--ir",
        scene.join("ir.pgm").to_str().unwrap(),
        "--vi",
        scene.join("vi.pgm").to_str().unwrap(),
        "--mask-ir",
        &format!("file:{}", scene.join("mask_ir.pgm").display()),
        "--mask-vi",
        &format!("file:{}", scene.join("mask_vi.pgm").display()),
        "--theta",
        "1.1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["matches"], 0);
    assert_eq!(report["warning"], "too_few_for_ransac");
}

#[test]
fn register_identity_pair_is_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    identity_scene(&scene);
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "register",
        "--ir",
        scene.join("ir.pgm").to_str().unwrap(),
        "--vi",
        scene.join("vi.pgm").to_str().unwrap(),
        "--mask-ir",
        &format!("file:{}", scene.join("mask_ir.pgm").display()),
        "--mask-vi",
        &format!("file:{}", scene.join("mask_vi.pgm").display()),
        "--transform",
        "homography",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    // identical inputs give exact self-correspondences; the fitted
    // model reproduces the input bit for bit at 8-bit depth
    let warped = std::fs::read(out_dir.join("warped.pgm")).unwrap();
    let ir = std::fs::read(scene.join("ir.pgm")).unwrap();
    assert_eq!(warped, ir);
    assert!(out_dir.join("model.json").is_file());
    assert!(out_dir.join("model.txt").is_file());
}

#[test]
fn register_with_tiny_region_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    identity_scene(&scene);
    // two grid cells only: at most two matches, below every model floor
    let mut bits = vec![false; 128 * 128];
    for y in 56..64 {
        for x in 56..72 {
            bits[y * 128 + x] = true;
        }
    }
    let mask = RegionMask::new(128, 128, bits).unwrap();
    let mask_img = Image::new(
        128,
        128,
        mask.bits.iter().map(|&b| b as u8 as f64).collect(),
    )
    .unwrap();
    let mask_path = tmp.path().join("tiny.pgm");
    save_image(&mask_img, &mask_path).unwrap();
    let out = run(&[
        "register",
        "--ir",
        scene.join("ir.pgm").to_str().unwrap(),
        "--vi",
        scene.join("vi.pgm").to_str().unwrap(),
        "--mask",
        &format!("file:{}", mask_path.display()),
        "--transform",
        "tps",
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains('2'), "stderr should carry the count: {msg}");
}

#[test]
fn empty_mask_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    identity_scene(&scene);
    let empty = Image::filled(128, 128, 0.0);
    let mask_path = tmp.path().join("empty.pgm");
    save_image(&empty, &mask_path).unwrap();
    let out = run(&[
        "match",
        "--ir",
        scene.join("ir.pgm").to_str().unwrap(),
        "--vi",
        scene.join("vi.pgm").to_str().unwrap(),
        "--mask",
        &format!("file:{}", mask_path.display()),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn fuse_average_of_identical_images_is_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    identity_scene(&scene);
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "fuse",
        "--ir",
        scene.join("vi.pgm").to_str().unwrap(),
        "--vi",
        scene.join("vi.pgm").to_str().unwrap(),
        "--fusion",
        "average",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let fused = std::fs::read(out_dir.join("fused.pgm")).unwrap();
    let original = std::fs::read(scene.join("vi.pgm")).unwrap();
    assert_eq!(fused, original);
}

#[test]
fn metrics_identical_pair_identities_and_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    identity_scene(&scene);
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "metrics",
        "--ir",
        scene.join("vi.pgm").to_str().unwrap(),
        "--vi",
        scene.join("vi.pgm").to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    let obj = report.as_object().unwrap();
    let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        ["accuracy", "ag", "ce", "correct_matches", "ct", "ei", "matches", "mi", "ssim"]
    );
    assert!((report["ssim"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let ce = report["ce"].as_f64().unwrap();
    let mi = report["mi"].as_f64().unwrap();
    assert!((ce - mi).abs() < 1e-9);
}

#[test]
fn match_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    identity_scene(&scene);
    let mut artifacts = Vec::new();
    for name in ["a", "b"] {
        let out_dir = tmp.path().join(name);
        let out = run(&[
            "match",
            "--ir",
            scene.join("ir.pgm").to_str().unwrap(),
            "--vi",
            scene.join("vi.pgm").to_str().unwrap(),
            "--mask-ir",
            &format!("file:{}", scene.join("mask_ir.pgm").display()),
            "--mask-vi",
            &format!("file:{}", scene.join("mask_vi.pgm").display()),
            "--seed",
            "7",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
        artifacts.push((
            std::fs::read(out_dir.join("matches.tsv")).unwrap(),
            std::fs::read(out_dir.join("report.json")).unwrap(),
        ));
    }
    assert_eq!(artifacts[0], artifacts[1]);
}

#[test]
fn config_file_merges_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    identity_scene(&scene);
    let out_dir = tmp.path().join("out");
    let config = serde_json::json!({
        "ir": scene.join("ir.pgm"),
        "vi": scene.join("vi.pgm"),
        "mask_ir": format!("file:{}", scene.join("mask_ir.pgm").display()),
        "mask_vi": format!("file:{}", scene.join("mask_vi.pgm").display()),
        "theta": 0.1,
        "omega": 0.4,
    });
    let cfg_path = tmp.path().join("config.json");
    std::fs::write(&cfg_path, serde_json::to_vec(&config).unwrap()).unwrap();
    let out = run(&[
        "match",
        "--config",
        cfg_path.to_str().unwrap(),
        "--theta",
        "0.3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let eff: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("effective-config.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(eff["theta"], 0.3);
    assert_eq!(eff["omega"], 0.4);
}

#[test]
fn eval_empty_suite_exits_2_and_reruns_match() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let out = run(&["eval", "--suite", empty.to_str().unwrap()]);
    assert_eq!(code(&out), 2);

    let suite = tmp.path().join("suite");
    for seed in 0..2u64 {
        let spec = SceneSpec {
            width: 128,
            height: 128,
            n_blobs: 6,
            seed,
            deform: Deform::Homography {
                tx: 5.0,
                ty: -3.0,
                angle_deg: 1.0,
                scale: 1.0,
            },
            modality_gap: ModalityGap::Gamma { g: 1.5 },
        };
        let (ir, vi, gt) = generate(&spec).unwrap();
        write_scene(suite.join(format!("case{seed}")), &spec, &ir, &vi, &gt).unwrap();
    }
    let mut tables = Vec::new();
    for name in ["e1", "e2"] {
        let out_dir = tmp.path().join(name);
        let out = run(&[
            "eval",
            "--suite",
            suite.to_str().unwrap(),
            "--omegas",
            "0.5",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        tables.push(std::fs::read(out_dir.join("table.tsv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
    let text = String::from_utf8(tables[0].clone()).unwrap();
    assert!(text.starts_with("Method\tMatches\tCorrect Matches\tMatches Accuracy\n"));
    assert!(text.contains("deep only"));
    assert!(text.contains("hol only"));
    assert!(text.contains("w/o decay"));
}
