//! Procedural scene generator with exact ground-truth deformations,
//! simulated modality gaps, and the omega-sweep ablation harness.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::extract_gradhist_opts;
use crate::matching::{run_hdm_mode, HybridParams, ScoreMode};
use crate::metrics::match_accuracy;
use crate::raster::{load_image, load_mask, save_image, Image, RegionMask};
use crate::transform::{fit_tps, warp_image, HomographyModel, TransformModel};
use nalgebra::Matrix3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Deform {
    None,
    /// Similarity-style homography: rotate and scale about the image
    /// center, then translate.
    Homography {
        tx: f64,
        ty: f64,
        angle_deg: f64,
        scale: f64,
    },
    /// Smooth warp from jittered interior anchors with bounded random
    /// displacements; the four corners are pinned.
    Tps { n_anchors: usize, max_disp: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModalityGap {
    None,
    Invert,
    Gamma { g: f64 },
    /// Non-monotone remap 4v(1-v), collapses dark and bright together.
    ContrastRemap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub n_blobs: usize,
    pub seed: u64,
    pub deform: Deform,
    pub modality_gap: ModalityGap,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width % 8 != 0 || self.height % 8 != 0 {
            return Err(Error::Parameter(format!(
                "scene size {}x{} must be nonzero multiples of 8",
                self.width, self.height
            )));
        }
        if self.width < 64 || self.height < 64 {
            return Err(Error::Parameter("scene smaller than 64x64".into()));
        }
        match &self.deform {
            Deform::Tps { n_anchors, max_disp } => {
                if *n_anchors < 4 {
                    return Err(Error::Parameter("tps deform needs >= 4 anchors".into()));
                }
                let cap = self.width.min(self.height) as f64 / 8.0;
                if !(*max_disp >= 0.0 && *max_disp <= cap) {
                    return Err(Error::Parameter(format!(
                        "max_disp {max_disp} outside [0, {cap}]"
                    )));
                }
            }
            Deform::Homography { scale, .. } => {
                if !(*scale > 0.0) {
                    return Err(Error::Parameter("scale must be positive".into()));
                }
            }
            Deform::None => {}
        }
        if let ModalityGap::Gamma { g } = self.modality_gap {
            if !(g > 0.0) {
                return Err(Error::Parameter("gamma must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Maps ir coordinates onto vi coordinates.
    pub forward: TransformModel,
    /// Numerical (TPS) or exact (homography) inverse of `forward`.
    pub inverse: TransformModel,
    pub mask_ir: RegionMask,
    pub mask_vi: RegionMask,
}

fn apply_gap(v: f64, gap: &ModalityGap) -> f64 {
    let out = match gap {
        ModalityGap::None => v,
        ModalityGap::Invert => 1.0 - v,
        ModalityGap::Gamma { g } => v.powf(*g),
        ModalityGap::ContrastRemap => 4.0 * v * (1.0 - v),
    };
    out.clamp(0.0, 1.0)
}

fn procedural_scene(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Image {
    let (w, h) = (spec.width, spec.height);
    let (wf, hf) = (w as f64, h as f64);
    // blobs carry most of the matching signal, sinusoids add texture
    let blobs: Vec<[f64; 4]> = (0..spec.n_blobs)
        .map(|_| {
            [
                rng.gen_range(0.12..0.88) * wf,
                rng.gen_range(0.12..0.88) * hf,
                rng.gen_range(0.04..0.14) * wf.min(hf),
                rng.gen_range(-0.5..0.5),
            ]
        })
        .collect();
    let waves: Vec<[f64; 5]> = (0..3)
        .map(|_| {
            [
                rng.gen_range(3.0..9.0),
                rng.gen_range(3.0..9.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.02..0.05),
            ]
        })
        .collect();
    let gdir = [rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25)];
    let mut data = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let mut v = 0.45 + gdir[0] * (xf / wf - 0.5) + gdir[1] * (yf / hf - 0.5);
            for b in &blobs {
                let d2 = (xf - b[0]).powi(2) + (yf - b[1]).powi(2);
                v += b[3] * (-d2 / (2.0 * b[2] * b[2])).exp();
            }
            for s in &waves {
                v += s[4]
                    * (std::f64::consts::TAU * s[0] * xf / wf + s[2]).sin()
                    * (std::f64::consts::TAU * s[1] * yf / hf + s[3]).sin();
            }
            data[y * w + x] = v.clamp(0.02, 0.98);
        }
    }
    Image::new(w, h, data).unwrap()
}

fn deform_models(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<(TransformModel, TransformModel)> {
    let (wf, hf) = (spec.width as f64, spec.height as f64);
    match &spec.deform {
        Deform::None => Ok((TransformModel::Identity, TransformModel::Identity)),
        Deform::Homography {
            tx,
            ty,
            angle_deg,
            scale,
        } => {
            let (cx, cy) = (wf / 2.0, hf / 2.0);
            let a = angle_deg.to_radians();
            let (s, c) = (a.sin() * scale, a.cos() * scale);
            // translate(tx,ty) composed with rotate-scale about center
            let m = Matrix3::new(
                c,
                -s,
                cx - c * cx + s * cy + tx,
                s,
                c,
                cy - s * cx - c * cy + ty,
                0.0,
                0.0,
                1.0,
            );
            let fwd = HomographyModel::from_matrix(m);
            let inv = fwd.inverse()?;
            Ok((
                TransformModel::Homography(fwd),
                TransformModel::Homography(inv),
            ))
        }
        Deform::Tps { n_anchors, max_disp } => {
            let side = (*n_anchors as f64).sqrt().ceil() as usize;
            let margin = 0.12;
            let mut src = vec![
                [0.0, 0.0],
                [wf - 1.0, 0.0],
                [0.0, hf - 1.0],
                [wf - 1.0, hf - 1.0],
            ];
            let mut dst = src.clone();
            for k in 0..*n_anchors {
                let gx = (k % side) as f64 / (side.max(2) - 1) as f64;
                let gy = (k / side) as f64 / (side.max(2) - 1) as f64;
                let x = (margin + (1.0 - 2.0 * margin) * gx) * wf
                    + rng.gen_range(-2.0..2.0);
                let y = (margin + (1.0 - 2.0 * margin) * gy) * hf
                    + rng.gen_range(-2.0..2.0);
                src.push([x, y]);
                dst.push([
                    x + rng.gen_range(-1.0..1.0) * max_disp,
                    y + rng.gen_range(-1.0..1.0) * max_disp,
                ]);
            }
            let fwd = fit_tps(&src, &dst, 1e-6)?;
            let inv = fit_tps(&dst, &src, 1e-6)?;
            Ok((TransformModel::Tps(fwd), TransformModel::Tps(inv)))
        }
    }
}

fn mask_to_image(mask: &RegionMask) -> Image {
    Image {
        width: mask.width,
        height: mask.height,
        data: mask.bits.iter().map(|&b| b as u8 as f64).collect(),
    }
}

/// Build the (ir, vi, ground truth) triple for a spec. The visible
/// image is procedural; ir is the visible image pulled back through the
/// forward mapping with the modality gap applied.
pub fn generate(spec: &SceneSpec) -> Result<(Image, Image, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vi = procedural_scene(spec, &mut rng);
    let (forward, inverse) = deform_models(spec, &mut rng)?;
    let size = (spec.width, spec.height);

    let ir_geom = warp_image(&vi, &forward, size);
    let ir = Image {
        width: spec.width,
        height: spec.height,
        data: ir_geom
            .data
            .iter()
            .map(|&v| apply_gap(v, &spec.modality_gap))
            .collect(),
    };

    // disc region in ir coordinates, pushed forward onto vi
    let (cx, cy) = (
        spec.width as f64 / 2.0 + rng.gen_range(-8.0..8.0),
        spec.height as f64 / 2.0 + rng.gen_range(-8.0..8.0),
    );
    let radius = 0.3 * spec.width.min(spec.height) as f64;
    let bits = (0..spec.width * spec.height)
        .map(|i| {
            let x = (i % spec.width) as f64;
            let y = (i / spec.width) as f64;
            (x - cx).powi(2) + (y - cy).powi(2) <= radius * radius
        })
        .collect();
    let mask_ir = RegionMask::new(spec.width, spec.height, bits)?;
    let pushed = warp_image(&mask_to_image(&mask_ir), &inverse, size);
    let mask_vi = RegionMask::new(
        spec.width,
        spec.height,
        pushed.data.iter().map(|&v| v > 0.5).collect(),
    )?;

    Ok((
        ir,
        vi,
        GroundTruth {
            forward,
            inverse,
            mask_ir,
            mask_vi,
        },
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSidecar {
    pub spec: SceneSpec,
    pub forward: TransformModel,
    pub inverse: TransformModel,
}

/// Write ir.pgm, vi.pgm, mask_ir.pgm, mask_vi.pgm and gt.json into a
/// directory.
pub fn write_scene(
    dir: impl AsRef<Path>,
    spec: &SceneSpec,
    ir: &Image,
    vi: &Image,
    gt: &GroundTruth,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_image(ir, dir.join("ir.pgm"))?;
    save_image(vi, dir.join("vi.pgm"))?;
    save_image(&mask_to_image(&gt.mask_ir), dir.join("mask_ir.pgm"))?;
    save_image(&mask_to_image(&gt.mask_vi), dir.join("mask_vi.pgm"))?;
    let sidecar = SceneSidecar {
        spec: spec.clone(),
        forward: gt.forward.clone(),
        inverse: gt.inverse.clone(),
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::Format(format!("sidecar serialization: {e}")))?;
    let path = dir.join("gt.json");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Read a scene directory written by [`write_scene`].
pub fn read_scene(dir: impl AsRef<Path>) -> Result<(Image, Image, GroundTruth, SceneSpec)> {
    let dir = dir.as_ref();
    let ir = load_image(dir.join("ir.pgm"))?;
    let vi = load_image(dir.join("vi.pgm"))?;
    let mask_ir = load_mask(dir.join("mask_ir.pgm"), (ir.width, ir.height))?;
    let mask_vi = load_mask(dir.join("mask_vi.pgm"), (vi.width, vi.height))?;
    let path = dir.join("gt.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let sidecar: SceneSidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("bad sidecar {}: {e}", path.display())))?;
    Ok((
        ir,
        vi,
        GroundTruth {
            forward: sidecar.forward,
            inverse: sidecar.inverse,
            mask_ir,
            mask_vi,
        },
        sidecar.spec,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub mean_matches: f64,
    pub mean_correct: f64,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<SweepRow>,
}

impl AblationTable {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("Method\tMatches\tCorrect Matches\tMatches Accuracy\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{:.3}\t{:.3}\t{:.3}\n",
                r.label, r.mean_matches, r.mean_correct, r.mean_accuracy
            ));
        }
        out
    }
}

pub struct SynthCase {
    pub ir: Image,
    pub vi: Image,
    pub gt: GroundTruth,
}

struct PreparedCase {
    f_ir: crate::features::FeatureGrid,
    f_vi: crate::features::FeatureGrid,
    mask_ir: RegionMask,
    mask_vi: RegionMask,
    forward: TransformModel,
}

fn prepare(cases: &[SynthCase]) -> Result<Vec<PreparedCase>> {
    cases
        .iter()
        .map(|c| {
            Ok(PreparedCase {
                f_ir: extract_gradhist_opts(&c.ir, true)?,
                f_vi: extract_gradhist_opts(&c.vi, true)?,
                // dilating one side simulates an inaccurate region
                mask_ir: c.gt.mask_ir.dilate_cells(1),
                mask_vi: c.gt.mask_vi.clone(),
                forward: c.gt.forward.clone(),
            })
        })
        .collect()
}

fn mean_row(
    label: &str,
    prepared: &[PreparedCase],
    params: &HybridParams,
    mode: ScoreMode,
) -> Result<SweepRow> {
    let n = prepared.len() as f64;
    let (mut tm, mut tc, mut ta) = (0.0, 0.0, 0.0);
    for c in prepared {
        let ms = run_hdm_mode(&c.f_ir, &c.f_vi, &c.mask_ir, &c.mask_vi, params, mode)?;
        let (m, correct, acc) = match_accuracy(&ms, &c.forward, 8.0);
        tm += m as f64;
        tc += correct as f64;
        ta += acc;
    }
    Ok(SweepRow {
        label: label.to_string(),
        mean_matches: tm / n,
        mean_correct: tc / n,
        mean_accuracy: ta / n,
    })
}

/// One row per omega plus a no-decay baseline (delta forced to zero),
/// means taken over the cases with the ir mask dilated by one cell.
pub fn omega_sweep(
    cases: &[SynthCase],
    omegas: &[f64],
    params: &HybridParams,
) -> Result<AblationTable> {
    if cases.is_empty() || omegas.is_empty() {
        return Err(Error::Parameter("empty sweep inputs".into()));
    }
    let prepared = prepare(cases)?;
    let mut rows = Vec::new();
    let no_decay = HybridParams {
        delta: 0.0,
        ..*params
    };
    rows.push(mean_row(
        "w/o decay",
        &prepared,
        &no_decay,
        ScoreMode::Hybrid,
    )?);
    for &omega in omegas {
        let p = HybridParams { omega, ..*params };
        rows.push(mean_row(
            &format!("omega={omega}"),
            &prepared,
            &p,
            ScoreMode::Hybrid,
        )?);
    }
    Ok(AblationTable { rows })
}

/// Full ablation table: per-method rows (deep-only, HOL-only) on top of
/// the omega sweep.
pub fn eval_table(
    cases: &[SynthCase],
    omegas: &[f64],
    params: &HybridParams,
) -> Result<AblationTable> {
    if cases.is_empty() || omegas.is_empty() {
        return Err(Error::Parameter("empty sweep inputs".into()));
    }
    let prepared = prepare(cases)?;
    let mut rows = vec![
        mean_row("deep only", &prepared, params, ScoreMode::DeepOnly)?,
        mean_row("hol only", &prepared, params, ScoreMode::HolOnly)?,
    ];
    let no_decay = HybridParams {
        delta: 0.0,
        ..*params
    };
    rows.push(mean_row(
        "w/o decay",
        &prepared,
        &no_decay,
        ScoreMode::Hybrid,
    )?);
    for &omega in omegas {
        let p = HybridParams { omega, ..*params };
        rows.push(mean_row(
            &format!("omega={omega}"),
            &prepared,
            &p,
            ScoreMode::Hybrid,
        )?);
    }
    Ok(AblationTable { rows })
}
