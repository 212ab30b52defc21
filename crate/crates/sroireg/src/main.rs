//! Command-line front end wiring mask ingestion, matching, registration,
//! fusion, metrics and the synthetic benchmark together.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use sroireg::features::{
    extract_gradhist_opts, extract_meanvar, load_feature_grid, propose_mask, strip_pool_saliency,
    FeatureGrid,
};
use sroireg::matching::{refine_matches, run_hdm, HybridParams, MatchSet};
use sroireg::metrics::{self, FuseStrategy, MetricsReport};
use sroireg::raster::{load_image, load_mask, save_image, Image, RegionMask};
use sroireg::synth::{
    eval_table, generate, read_scene, write_scene, Deform, ModalityGap, SceneSpec, SynthCase,
};
use sroireg::transform::{fit_homography, fit_tps, warp_image, TransformModel};
use sroireg::{Error, Result};

#[derive(Parser)]
#[command(
    name = "sroireg",
    version,
    about = "Region-constrained infrared/visible image registration and fusion"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Match grid points between the two region masks
    Match(PairArgs),
    /// Match, then fit a transform and warp the infrared image
    Register(PairArgs),
    /// Fuse a registered pair into one image
    Fuse(PairArgs),
    /// Image-quality metrics for a registered pair
    Metrics(PairArgs),
    /// Generate a synthetic scene with exact ground truth
    Synth(SynthArgs),
    /// Run the ablation sweep over a directory of synthetic scenes
    Eval(EvalArgs),
}

#[derive(Args, Clone, Default)]
struct PairArgs {
    /// JSON config; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Infrared image (PGM or PNG)
    #[arg(long)]
    ir: Option<PathBuf>,
    /// Visible image (PGM or PNG)
    #[arg(long)]
    vi: Option<PathBuf>,
    /// Mask spec for both sides: file:PATH or propose:THRESHOLD
    #[arg(long)]
    mask: Option<String>,
    #[arg(long)]
    mask_ir: Option<String>,
    #[arg(long)]
    mask_vi: Option<String>,
    /// Descriptor for both sides: gradhist, meanvar, or file:PATH
    #[arg(long)]
    features: Option<String>,
    #[arg(long)]
    features_ir: Option<String>,
    #[arg(long)]
    features_vi: Option<String>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// tps or homography
    #[arg(long)]
    transform: Option<String>,
    #[arg(long)]
    tps_reg: Option<f64>,
    /// average, max, or mask-max
    #[arg(long)]
    fusion: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ground-truth sidecar (gt.json) for accuracy reporting
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Restrict metrics to the bounding box of this mask image
    #[arg(long)]
    metrics_mask: Option<PathBuf>,
    /// Precomputed fused image for metrics
    #[arg(long)]
    fused: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 8)]
    blobs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// none, homography:TX,TY,ANGLE,SCALE, or tps:ANCHORS,DISP
    #[arg(long, default_value = "none")]
    deform: String,
    /// none, invert, gamma:G, or contrast
    #[arg(long, default_value = "none")]
    gap: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of scene subdirectories written by `synth`
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Comma-separated omega values
    #[arg(long, default_value = "0.3,0.5,0.7")]
    omegas: String,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// The resolved pipeline configuration; echoed into the output
/// directory as effective-config.json.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Config {
    ir: Option<PathBuf>,
    vi: Option<PathBuf>,
    mask_ir: Option<String>,
    mask_vi: Option<String>,
    features_ir: String,
    features_vi: String,
    theta: f64,
    omega: f64,
    delta: f64,
    ransac_iters: usize,
    ransac_tol: f64,
    ransac_min_inliers: usize,
    seed: u64,
    transform: String,
    tps_reg: f64,
    fusion: String,
    out: PathBuf,
    gt: Option<PathBuf>,
    metrics_mask: Option<PathBuf>,
    fused: Option<PathBuf>,
}

/// Config-file schema: every field optional so flags and defaults can
/// fill the gaps.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    ir: Option<PathBuf>,
    vi: Option<PathBuf>,
    mask: Option<String>,
    mask_ir: Option<String>,
    mask_vi: Option<String>,
    features: Option<String>,
    features_ir: Option<String>,
    features_vi: Option<String>,
    theta: Option<f64>,
    omega: Option<f64>,
    delta: Option<f64>,
    ransac_iters: Option<usize>,
    ransac_tol: Option<f64>,
    ransac_min_inliers: Option<usize>,
    seed: Option<u64>,
    transform: Option<String>,
    tps_reg: Option<f64>,
    fusion: Option<String>,
    out: Option<PathBuf>,
    gt: Option<PathBuf>,
    metrics_mask: Option<PathBuf>,
    fused: Option<PathBuf>,
    suite: Option<PathBuf>,
    omegas: Option<String>,
}

fn read_file_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Format(format!("config {}: {e}", p.display())))
        }
    }
}

fn resolve(args: &PairArgs) -> Result<Config> {
    let file = read_file_config(&args.config)?;
    let defaults = HybridParams::default();
    let both_mask = args.mask.clone().or(file.mask.clone());
    let both_features = args.features.clone().or(file.features.clone());
    let cfg = Config {
        ir: args.ir.clone().or(file.ir),
        vi: args.vi.clone().or(file.vi),
        mask_ir: args.mask_ir.clone().or(file.mask_ir).or(both_mask.clone()),
        mask_vi: args.mask_vi.clone().or(file.mask_vi).or(both_mask),
        features_ir: args
            .features_ir
            .clone()
            .or(file.features_ir)
            .or(both_features.clone())
            .unwrap_or_else(|| "gradhist".into()),
        features_vi: args
            .features_vi
            .clone()
            .or(file.features_vi)
            .or(both_features)
            .unwrap_or_else(|| "gradhist".into()),
        theta: args.theta.or(file.theta).unwrap_or(defaults.theta),
        omega: args.omega.or(file.omega).unwrap_or(defaults.omega),
        delta: args.delta.or(file.delta).unwrap_or(defaults.delta),
        ransac_iters: file.ransac_iters.unwrap_or(defaults.ransac_iters),
        ransac_tol: file.ransac_tol.unwrap_or(defaults.ransac_tol),
        ransac_min_inliers: file.ransac_min_inliers.unwrap_or(defaults.ransac_min_inliers),
        seed: args.seed.or(file.seed).unwrap_or(0),
        transform: args
            .transform
            .clone()
            .or(file.transform)
            .unwrap_or_else(|| "tps".into()),
        // smooths out residual noise of the refined grid matches
        tps_reg: args.tps_reg.or(file.tps_reg).unwrap_or(1e4),
        fusion: args
            .fusion
            .clone()
            .or(file.fusion)
            .unwrap_or_else(|| "average".into()),
        out: args.out.clone().or(file.out).unwrap_or_else(|| "out".into()),
        gt: args.gt.clone().or(file.gt),
        metrics_mask: args.metrics_mask.clone().or(file.metrics_mask),
        fused: args.fused.clone().or(file.fused),
    };
    if !matches!(cfg.transform.as_str(), "tps" | "homography") {
        return Err(Error::Parameter(format!(
            "unknown transform '{}'",
            cfg.transform
        )));
    }
    if !matches!(cfg.fusion.as_str(), "average" | "max" | "mask-max") {
        return Err(Error::Parameter(format!("unknown fusion '{}'", cfg.fusion)));
    }
    Ok(cfg)
}

impl Config {
    fn params(&self) -> HybridParams {
        HybridParams {
            delta: self.delta,
            omega: self.omega,
            theta: self.theta,
            ransac_iters: self.ransac_iters,
            ransac_tol: self.ransac_tol,
            ransac_min_inliers: self.ransac_min_inliers,
            seed: self.seed,
        }
    }

    fn require(&self, field: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
        field
            .clone()
            .ok_or_else(|| Error::Parameter(format!("missing required input --{name}")))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact"),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn save_image_atomic(img: &Image, path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("image"),
        std::process::id()
    ));
    save_image(img, &tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_effective_config(cfg: &Config) -> Result<()> {
    let json = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::Format(format!("config serialization: {e}")))?;
    write_atomic(&cfg.out.join("effective-config.json"), (json + "\n").as_bytes())
}

fn build_features(img: &Image, spec: &str) -> Result<FeatureGrid> {
    match spec {
        "gradhist" => extract_gradhist_opts(img, true),
        "meanvar" => extract_meanvar(img),
        other => {
            let path = other.strip_prefix("file:").ok_or_else(|| {
                Error::Parameter(format!(
                    "feature spec '{other}' is not gradhist, meanvar, or file:PATH"
                ))
            })?;
            let loaded = load_feature_grid(path)?;
            let grid = loaded.grid;
            if (grid.grid_w * 8, grid.grid_h * 8) != (img.width, img.height) {
                return Err(Error::Dimension(format!(
                    "feature grid {}x{} does not cover a {}x{} image",
                    grid.grid_w, grid.grid_h, img.width, img.height
                )));
            }
            Ok(grid)
        }
    }
}

fn build_mask(img: &Image, feats: &FeatureGrid, spec: &Option<String>) -> Result<RegionMask> {
    match spec.as_deref() {
        None => Ok(RegionMask::filled(img.width, img.height, true)),
        Some(s) => {
            if let Some(path) = s.strip_prefix("file:") {
                load_mask(path, (img.width, img.height))
            } else if let Some(t) = s.strip_prefix("propose:") {
                let threshold: f64 = t
                    .parse()
                    .map_err(|_| Error::Parameter(format!("bad propose threshold '{t}'")))?;
                Ok(propose_mask(&strip_pool_saliency(feats), threshold))
            } else {
                load_mask(s, (img.width, img.height))
            }
        }
    }
}

struct Pipeline {
    ir: Image,
    vi: Image,
    matches: MatchSet,
}

fn run_match_pipeline(cfg: &Config) -> Result<Pipeline> {
    let ir = load_image(cfg.require(&cfg.ir, "ir")?)?;
    let vi = load_image(cfg.require(&cfg.vi, "vi")?)?;
    let f_ir = build_features(&ir, &cfg.features_ir)?;
    let f_vi = build_features(&vi, &cfg.features_vi)?;
    let mask_ir = build_mask(&ir, &f_ir, &cfg.mask_ir)?;
    let mask_vi = build_mask(&vi, &f_vi, &cfg.mask_vi)?;
    let matches = run_hdm(&f_ir, &f_vi, &mask_ir, &mask_vi, &cfg.params())?;
    Ok(Pipeline { ir, vi, matches })
}

fn matches_tsv(ms: &MatchSet) -> String {
    let mut out = String::from("x_ir\ty_ir\tx_vi\ty_vi\tscore\n");
    for p in &ms.pairs {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.6}\n",
            p.ir.x, p.ir.y, p.vi.x, p.vi.y, p.score
        ));
    }
    out
}

fn load_gt_forward(path: &Path) -> Result<TransformModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    #[derive(Deserialize)]
    struct Sidecar {
        forward: TransformModel,
    }
    let sc: Sidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("bad sidecar {}: {e}", path.display())))?;
    Ok(sc.forward)
}

#[derive(Serialize)]
struct MatchSummary {
    matches: usize,
    warning: Option<sroireg::matching::MatchWarning>,
    #[serde(skip_serializing_if = "Option::is_none")]
    correct_matches: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy: Option<f64>,
}

fn cmd_match(args: &PairArgs) -> Result<()> {
    let cfg = resolve(args)?;
    let p = run_match_pipeline(&cfg)?;
    write_atomic(&cfg.out.join("matches.tsv"), matches_tsv(&p.matches).as_bytes())?;
    let mut summary = MatchSummary {
        matches: p.matches.len(),
        warning: p.matches.warning,
        correct_matches: None,
        accuracy: None,
    };
    if let Some(gt_path) = &cfg.gt {
        let forward = load_gt_forward(gt_path)?;
        let (_, correct, acc) = metrics::match_accuracy(&p.matches, &forward, 8.0);
        summary.correct_matches = Some(correct);
        summary.accuracy = Some(acc);
    }
    let json = serde_json::to_string_pretty(&summary).unwrap();
    write_atomic(&cfg.out.join("report.json"), (json + "\n").as_bytes())?;
    write_effective_config(&cfg)?;
    println!("{} matches", p.matches.len());
    Ok(())
}

fn fit_registration(cfg: &Config, ir: &Image, vi: &Image, ms: &MatchSet) -> Result<TransformModel> {
    // the warp samples ir at each vi pixel, so the model is fitted in
    // the vi -> ir direction, on sub-pixel refined correspondences
    let (dst, src) = refine_matches(ir, vi, ms, 4);
    match cfg.transform.as_str() {
        "tps" => {
            if src.len() < 3 {
                return Err(Error::InsufficientMatches {
                    got: src.len(),
                    need: 3,
                });
            }
            Ok(TransformModel::Tps(fit_tps(&src, &dst, cfg.tps_reg)?))
        }
        _ => {
            if src.len() < 4 {
                return Err(Error::InsufficientMatches {
                    got: src.len(),
                    need: 4,
                });
            }
            Ok(TransformModel::Homography(fit_homography(&src, &dst)?))
        }
    }
}

fn cmd_register(args: &PairArgs) -> Result<()> {
    let cfg = resolve(args)?;
    let p = run_match_pipeline(&cfg)?;
    let model = fit_registration(&cfg, &p.ir, &p.vi, &p.matches)?;
    let warped = warp_image(&p.ir, &model, (p.vi.width, p.vi.height));
    write_atomic(&cfg.out.join("matches.tsv"), matches_tsv(&p.matches).as_bytes())?;
    save_image_atomic(&warped, &cfg.out.join("warped.pgm"))?;
    let json = serde_json::to_string_pretty(&model).unwrap();
    write_atomic(&cfg.out.join("model.json"), (json + "\n").as_bytes())?;
    write_atomic(&cfg.out.join("model.txt"), model.dump().as_bytes())?;
    write_effective_config(&cfg)?;
    println!("registered with {} matches", p.matches.len());
    Ok(())
}

fn fuse_strategy(cfg: &Config, vi: &Image) -> Result<FuseStrategy> {
    Ok(match cfg.fusion.as_str() {
        "average" => FuseStrategy::Average,
        "max" => FuseStrategy::Max,
        _ => {
            let spec = cfg.mask_vi.clone().or(cfg.mask_ir.clone()).ok_or_else(|| {
                Error::Parameter("mask-max fusion needs --mask (or a per-side mask)".into())
            })?;
            let path = spec.strip_prefix("file:").unwrap_or(&spec);
            FuseStrategy::MaskMax(load_mask(path, (vi.width, vi.height))?)
        }
    })
}

fn cmd_fuse(args: &PairArgs) -> Result<()> {
    let cfg = resolve(args)?;
    let ir = load_image(cfg.require(&cfg.ir, "ir")?)?;
    let vi = load_image(cfg.require(&cfg.vi, "vi")?)?;
    let strategy = fuse_strategy(&cfg, &vi)?;
    let fused = metrics::fuse(&ir, &vi, &strategy)?;
    save_image_atomic(&fused, &cfg.out.join("fused.pgm"))?;
    write_effective_config(&cfg)?;
    println!("fused {}x{}", fused.width, fused.height);
    Ok(())
}

fn crop_bbox(img: &Image, mask: &RegionMask) -> Result<Image> {
    if (mask.width, mask.height) != (img.width, img.height) {
        return Err(Error::Dimension("metrics mask does not match images".into()));
    }
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.bits[y * mask.width + x] {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return Err(Error::DegenerateRegion("metrics mask is empty".into()));
    }
    let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
    let mut data = Vec::with_capacity(w * h);
    for y in y0..=y1 {
        data.extend_from_slice(&img.data[y * img.width + x0..y * img.width + x1 + 1]);
    }
    Image::new(w, h, data)
}

fn cmd_metrics(args: &PairArgs) -> Result<()> {
    let cfg = resolve(args)?;
    let ir = load_image(cfg.require(&cfg.ir, "ir")?)?;
    let vi = load_image(cfg.require(&cfg.vi, "vi")?)?;
    let fused = match &cfg.fused {
        Some(p) => load_image(p)?,
        None => metrics::fuse(&ir, &vi, &fuse_strategy(&cfg, &vi)?)?,
    };
    // optional region restriction, applied as a bounding-box crop so
    // the windowed metrics keep their 2-d structure
    let (ir_m, vi_m, fused_m) = match &cfg.metrics_mask {
        Some(path) => {
            let mask = load_mask(path, (vi.width, vi.height))?;
            (
                crop_bbox(&ir, &mask)?,
                crop_bbox(&vi, &mask)?,
                crop_bbox(&fused, &mask)?,
            )
        }
        None => (ir.clone(), vi.clone(), fused.clone()),
    };
    let (matches, correct_matches, accuracy) = match &cfg.gt {
        Some(gt_path) => {
            let forward = load_gt_forward(gt_path)?;
            let p = run_match_pipeline(&cfg)?;
            metrics::match_accuracy(&p.matches, &forward, 8.0)
        }
        None => (0, 0, 0.0),
    };
    let report = MetricsReport {
        ag: metrics::ag(&fused_m)?,
        ce: metrics::ce(&ir_m, &vi_m)?,
        ei: metrics::ei(&fused_m)?,
        mi: metrics::mi(&ir_m, &vi_m)?,
        ssim: metrics::ssim(&ir_m, &vi_m)?,
        ct: metrics::ct(&fused_m)?,
        matches,
        correct_matches,
        accuracy,
    };
    let json = serde_json::to_string_pretty(&report).unwrap();
    write_atomic(&cfg.out.join("report.json"), (json + "\n").as_bytes())?;
    write_effective_config(&cfg)?;
    println!("ssim {:.4} mi {:.4}", report.ssim, report.mi);
    Ok(())
}

fn parse_deform(s: &str) -> Result<Deform> {
    if s == "none" {
        return Ok(Deform::None);
    }
    if let Some(rest) = s.strip_prefix("homography:") {
        let v: Vec<f64> = rest
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parameter(format!("bad homography spec '{rest}'")))?;
        if v.len() != 4 {
            return Err(Error::Parameter(
                "homography spec needs TX,TY,ANGLE,SCALE".into(),
            ));
        }
        return Ok(Deform::Homography {
            tx: v[0],
            ty: v[1],
            angle_deg: v[2],
            scale: v[3],
        });
    }
    if let Some(rest) = s.strip_prefix("tps:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.len() != 2 {
            return Err(Error::Parameter("tps spec needs ANCHORS,DISP".into()));
        }
        let n_anchors = parts[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parameter(format!("bad anchor count '{}'", parts[0])))?;
        let max_disp = parts[1]
            .trim()
            .parse()
            .map_err(|_| Error::Parameter(format!("bad displacement '{}'", parts[1])))?;
        return Ok(Deform::Tps { n_anchors, max_disp });
    }
    Err(Error::Parameter(format!("unknown deform spec '{s}'")))
}

fn parse_gap(s: &str) -> Result<ModalityGap> {
    match s {
        "none" => Ok(ModalityGap::None),
        "invert" => Ok(ModalityGap::Invert),
        "contrast" => Ok(ModalityGap::ContrastRemap),
        other => {
            let g = other
                .strip_prefix("gamma:")
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Parameter(format!("unknown gap spec '{other}'")))?;
            Ok(ModalityGap::Gamma { g })
        }
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let file = read_file_config(&args.config)?;
    let out = args
        .out
        .clone()
        .or(file.out)
        .unwrap_or_else(|| "out".into());
    let spec = SceneSpec {
        width: args.width,
        height: args.height,
        n_blobs: args.blobs,
        seed: args.seed,
        deform: parse_deform(&args.deform)?,
        modality_gap: parse_gap(&args.gap)?,
    };
    let (ir, vi, gt) = generate(&spec)?;
    write_scene(&out, &spec, &ir, &vi, &gt)?;
    println!("scene written to {}", out.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let file = read_file_config(&args.config)?;
    let suite = args
        .suite
        .clone()
        .or(file.suite)
        .ok_or_else(|| Error::Parameter("missing required input --suite".into()))?;
    let out = args.out.clone().or(file.out).unwrap_or_else(|| "out".into());
    let omegas: Vec<f64> = file
        .omegas
        .as_deref()
        .unwrap_or(&args.omegas)
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parameter(format!("bad omega list '{}'", args.omegas)))?;
    let mut params = HybridParams::default();
    if let Some(t) = args.theta.or(file.theta) {
        params.theta = t;
    }
    if let Some(d) = args.delta.or(file.delta) {
        params.delta = d;
    }
    if let Some(s) = args.seed.or(file.seed) {
        params.seed = s;
    }

    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&suite)
        .map_err(|e| Error::io(&suite, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("gt.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Parameter(format!(
            "suite {} holds no scene directories",
            suite.display()
        )));
    }
    let cases: Vec<SynthCase> = dirs
        .iter()
        .map(|d| {
            let (ir, vi, gt, _) = read_scene(d)?;
            Ok(SynthCase { ir, vi, gt })
        })
        .collect::<Result<_>>()?;
    let table = eval_table(&cases, &omegas, &params)?;
    write_atomic(&out.join("table.tsv"), table.to_tsv().as_bytes())?;
    let echo = serde_json::json!({
        "suite": suite,
        "omegas": omegas,
        "theta": params.theta,
        "delta": params.delta,
        "seed": params.seed,
        "cases": dirs.len(),
        "out": out,
    });
    write_atomic(
        &out.join("effective-config.json"),
        (serde_json::to_string_pretty(&echo).unwrap() + "\n").as_bytes(),
    )?;
    print!("{}", table.to_tsv());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::DegenerateRegion(_) | Error::Fit(_) => 3,
        Error::InsufficientMatches { .. } => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Match(a) => cmd_match(a),
        Cmd::Register(a) => cmd_register(a),
        Cmd::Fuse(a) => cmd_fuse(a),
        Cmd::Metrics(a) => cmd_metrics(a),
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
