//! Deterministic fusion strategies, reconstruction-loss formulas kept as
//! reusable metrics, the six fusion IQA metrics and the matching
//! accuracy protocol.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::MatchSet;
use crate::raster::{Image, RegionMask};
use crate::transform::TransformModel;

/// The flat report serialized as JSON by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ag: f64,
    pub ce: f64,
    pub ei: f64,
    pub mi: f64,
    pub ssim: f64,
    pub ct: f64,
    pub matches: usize,
    pub correct_matches: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FuseStrategy {
    Average,
    Max,
    MaskMax(RegionMask),
}

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::Dimension(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Pixelwise fusion: average, max, or max inside a mask with average
/// outside.
pub fn fuse(ir: &Image, vi: &Image, strategy: &FuseStrategy) -> Result<Image> {
    check_dims(ir, vi)?;
    if let FuseStrategy::MaskMax(mask) = strategy {
        if (mask.width, mask.height) != (ir.width, ir.height) {
            return Err(Error::Dimension("mask does not match images".into()));
        }
    }
    let data = ir
        .data
        .iter()
        .zip(&vi.data)
        .enumerate()
        .map(|(i, (&a, &b))| match strategy {
            FuseStrategy::Average => 0.5 * (a + b),
            FuseStrategy::Max => a.max(b),
            FuseStrategy::MaskMax(mask) => {
                if mask.bits[i] {
                    a.max(b)
                } else {
                    0.5 * (a + b)
                }
            }
        })
        .collect();
    Ok(Image {
        width: ir.width,
        height: ir.height,
        data,
    })
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let mut w: Vec<f64> = (0..size * size)
        .map(|i| {
            let x = (i % size) as f64 - half;
            let y = (i / size) as f64 - half;
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5) and the
/// standard stabilizers C1 = 0.01^2, C2 = 0.03^2 on unit dynamic range.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    const WIN: usize = 11;
    if a.width < WIN || a.height < WIN {
        return Err(Error::Dimension(format!(
            "{}x{} smaller than the {WIN}x{WIN} window",
            a.width, a.height
        )));
    }
    let w = gaussian_window(WIN, 1.5);
    let c1 = 0.01f64.powi(2);
    let c2 = 0.03f64.powi(2);
    let mut sum = 0.0;
    let mut count = 0usize;
    for cy in 0..=a.height - WIN {
        for cx in 0..=a.width - WIN {
            let (mut ma, mut mb) = (0.0, 0.0);
            let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
            for ly in 0..WIN {
                for lx in 0..WIN {
                    let wv = w[ly * WIN + lx];
                    let va = a.get(cx + lx, cy + ly);
                    let vb = b.get(cx + lx, cy + ly);
                    ma += wv * va;
                    mb += wv * vb;
                    saa += wv * va * va;
                    sbb += wv * vb * vb;
                    sab += wv * va * vb;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Mean absolute difference.
pub fn l1(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let n = a.data.len() as f64;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n)
}

pub fn ssim_loss(a: &Image, b: &Image) -> Result<f64> {
    Ok(1.0 - ssim(a, b)?)
}

/// Combined reconstruction loss: 0.3 * (1 - SSIM) + 0.7 * L1.
pub fn ifm_loss(a: &Image, b: &Image) -> Result<f64> {
    Ok(0.3 * ssim_loss(a, b)? + 0.7 * l1(a, b)?)
}

/// Weighted binary cross entropy over a prediction map and a binary
/// ground truth; predictions are clamped to [1e-7, 1 - 1e-7].
pub fn weighted_bce(pred: &Image, gt: &RegionMask, w: f64) -> Result<f64> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::Dimension("prediction and label maps differ".into()));
    }
    if !(0.0..1.0).contains(&w) {
        return Err(Error::Parameter(format!("bce weight {w} not in (0,1)")));
    }
    let n = pred.data.len() as f64;
    let mut sum = 0.0;
    for (&p, &y) in pred.data.iter().zip(&gt.bits) {
        let p = p.clamp(1e-7, 1.0 - 1e-7);
        sum += if y {
            w * p.ln()
        } else {
            (1.0 - w) * (1.0 - p).ln()
        };
    }
    Ok(-sum / n)
}

/// Average gradient: mean over interior pixels of sqrt((gx^2 + gy^2)/2)
/// with forward differences.
pub fn ag(img: &Image) -> Result<f64> {
    if img.width < 3 || img.height < 3 {
        return Err(Error::Dimension("image too small for gradients".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..img.height - 1 {
        for x in 0..img.width - 1 {
            let gx = img.get(x + 1, y) - img.get(x, y);
            let gy = img.get(x, y + 1) - img.get(x, y);
            sum += ((gx * gx + gy * gy) / 2.0).sqrt();
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Edge intensity: mean Sobel gradient magnitude over interior pixels.
pub fn ei(img: &Image) -> Result<f64> {
    if img.width < 3 || img.height < 3 {
        return Err(Error::Dimension("image too small for Sobel".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 1..img.height - 1 {
        for x in 1..img.width - 1 {
            let p = |dx: isize, dy: isize| {
                img.get((x as isize + dx) as usize, (y as isize + dy) as usize)
            };
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            sum += (gx * gx + gy * gy).sqrt();
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Tamura contrast: std / kurtosis^(1/4), zero for constant images.
pub fn ct(img: &Image) -> Result<f64> {
    if img.width < 3 || img.height < 3 {
        return Err(Error::Dimension("image too small".into()));
    }
    let n = img.data.len() as f64;
    let mean = img.data.iter().sum::<f64>() / n;
    let var = img.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var <= 1e-24 {
        return Ok(0.0);
    }
    let m4 = img.data.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let kurtosis = m4 / (var * var);
    Ok(var.sqrt() / kurtosis.powf(0.25))
}

fn quantize(v: f64) -> usize {
    ((v * 255.0 + 0.5).floor().clamp(0.0, 255.0)) as usize
}

fn histograms(a: &Image, b: &Image) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = a.data.len() as f64;
    let mut pa = vec![0.0; 256];
    let mut pb = vec![0.0; 256];
    let mut joint = vec![0.0; 256 * 256];
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let (i, j) = (quantize(x), quantize(y));
        pa[i] += 1.0 / n;
        pb[j] += 1.0 / n;
        joint[i * 256 + j] += 1.0 / n;
    }
    (pa, pb, joint)
}

/// Cross entropy of the 256-level intensity distributions (bits), with
/// the reference distribution floored at 1e-12.
pub fn ce(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let (pa, pb, _) = histograms(a, b);
    Ok(pa
        .iter()
        .zip(&pb)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| -p * q.max(1e-12).log2())
        .sum())
}

/// Mutual information of the 256-level joint intensity distribution (bits).
pub fn mi(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let (pa, pb, joint) = histograms(a, b);
    let mut sum = 0.0;
    for i in 0..256 {
        if pa[i] == 0.0 {
            continue;
        }
        for j in 0..256 {
            let pj = joint[i * 256 + j];
            if pj > 0.0 {
                sum += pj * (pj / (pa[i] * pb[j])).log2();
            }
        }
    }
    Ok(sum)
}

/// Marginal entropy of the 256-level intensity distribution (bits).
pub fn entropy(img: &Image) -> f64 {
    let n = img.data.len() as f64;
    let mut p = vec![0.0; 256];
    for &v in &img.data {
        p[quantize(v)] += 1.0 / n;
    }
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.log2()).sum()
}

/// Count matches whose visible point lies within `tol` pixels of the
/// ground-truth mapping of the infrared point. Returns (matches,
/// correct, accuracy).
pub fn match_accuracy(
    matches: &MatchSet,
    gt: &TransformModel,
    tol: f64,
) -> (usize, usize, f64) {
    let total = matches.len();
    let correct = matches
        .pairs
        .iter()
        .filter(|m| {
            gt.map([m.ir.x as f64, m.ir.y as f64])
                .map(|q| {
                    let dx = m.vi.x as f64 - q[0];
                    let dy = m.vi.y as f64 - q[1];
                    (dx * dx + dy * dy).sqrt() <= tol
                })
                .unwrap_or(false)
        })
        .count();
    let accuracy = if total > 0 {
        correct as f64 / total as f64
    } else {
        0.0
    };
    (total, correct, accuracy)
}

/// Restrict an image to the mask for region-limited IQA: out-of-mask
/// pixels are dropped by packing in-mask pixels into a single row.
pub fn masked_pixels(img: &Image, mask: &RegionMask) -> Result<Vec<f64>> {
    if (img.width, img.height) != (mask.width, mask.height) {
        return Err(Error::Dimension("mask does not match image".into()));
    }
    Ok(img
        .data
        .iter()
        .zip(&mask.bits)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .collect())
}
