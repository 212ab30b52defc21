//! Hybrid HOL + deep-feature scoring with the Gaussian-weighted decay,
//! regional mutual-max matching and RANSAC mismatch removal.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{deep_scores, FeatureGrid, ScoreMatrix};
use crate::hol::{build_hol, hol_cost_matrix, CostMatrix, HolParams};
use crate::raster::{grid_points, GridPoint, GridPointSet, Image, RegionMask};
use crate::transform::{fit_homography, symmetric_transfer};

/// Hybrid matcher parameters; defaults follow the reference settings
/// (omega 0.5, theta 0.2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridParams {
    pub delta: f64,
    pub omega: f64,
    pub theta: f64,
    pub ransac_iters: usize,
    pub ransac_tol: f64,
    pub ransac_min_inliers: usize,
    pub seed: u64,
}

impl Default for HybridParams {
    fn default() -> Self {
        HybridParams {
            delta: 1.0,
            omega: 0.5,
            theta: 0.2,
            ransac_iters: 2000,
            ransac_tol: 10.0,
            ransac_min_inliers: 8,
            seed: 0,
        }
    }
}

impl HybridParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(Error::Parameter(format!("omega {} not in (0,1]", self.omega)));
        }
        // a theta above the score range is a legitimate way to ask for
        // zero matches, so only reject non-finite values
        if !self.theta.is_finite() {
            return Err(Error::Parameter(format!("theta {} not finite", self.theta)));
        }
        if self.ransac_tol <= 0.0 {
            return Err(Error::Parameter("ransac_tol must be positive".into()));
        }
        if self.delta < 0.0 {
            return Err(Error::Parameter("delta must be non-negative".into()));
        }
        Ok(())
    }
}

/// Which score the regional matcher thresholds. `Hybrid` is the normal
/// path; the other two exist for the ablation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    Hybrid,
    DeepOnly,
    /// 1 - normalized chi-square cost, so the theta threshold stays meaningful.
    HolOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub ir: GridPoint,
    pub vi: GridPoint,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchWarning {
    TooFewForRansac,
    NoConsensus,
}

/// One-to-one correspondences surviving the threshold (and, when run
/// through `ransac_filter`, the consensus test).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub pairs: Vec<MatchPair>,
    pub warning: Option<MatchWarning>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Area ratio of the two regions scaled by omega, using grid point
/// counts as the area proxy.
pub fn area_ratio_sigma(s_ir: usize, s_vi: usize, omega: f64) -> Result<f64> {
    if s_ir == 0 || s_vi == 0 {
        return Err(Error::DegenerateRegion(format!(
            "region area counts {s_ir}, {s_vi}"
        )));
    }
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(Error::Parameter(format!("omega {omega} not in (0,1]")));
    }
    let (lo, hi) = (s_ir.min(s_vi) as f64, s_ir.max(s_vi) as f64);
    Ok(omega * lo / hi)
}

fn centroid_fraction(p: &GridPoint, set: &GridPointSet) -> f64 {
    if set.max_centroid_dist == 0.0 {
        return 0.0;
    }
    let dx = p.x as f64 - set.centroid[0];
    let dy = p.y as f64 - set.centroid[1];
    (dx * dx + dy * dy).sqrt() / set.max_centroid_dist
}

/// Gaussian weighting factor: sum of two Gaussians in the normalized
/// centroid distances of the pair, with sigma both width and prefactor.
pub fn gaussian_lambda(
    p_ir: &GridPoint,
    p_vi: &GridPoint,
    set_ir: &GridPointSet,
    set_vi: &GridPointSet,
    sigma: f64,
) -> f64 {
    let u_ir = centroid_fraction(p_ir, set_ir);
    let u_vi = centroid_fraction(p_vi, set_vi);
    let g = |u: f64| (-u * u / (2.0 * sigma * sigma)).exp();
    (g(u_ir) + g(u_vi)) / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Combine deep scores with the max-normalized chi-square costs:
/// S = S_deep - delta * sigma * lambda .* (C / max C).
pub fn hybrid_scores(
    s_deep: &ScoreMatrix,
    c_hol: &CostMatrix,
    lam: &[f64],
    sigma: f64,
    delta: f64,
) -> Result<ScoreMatrix> {
    if (s_deep.rows, s_deep.cols) != (c_hol.rows, c_hol.cols)
        || lam.len() != s_deep.values.len()
    {
        return Err(Error::Dimension(format!(
            "score {}x{}, cost {}x{}, lambda {}",
            s_deep.rows,
            s_deep.cols,
            c_hol.rows,
            c_hol.cols,
            lam.len()
        )));
    }
    let max = c_hol.max();
    let values = s_deep
        .values
        .iter()
        .zip(&c_hol.values)
        .zip(lam)
        .map(|((&s, &c), &l)| {
            let cbar = if max > 0.0 { c / max } else { 0.0 };
            s - delta * sigma * l * cbar
        })
        .collect();
    Ok(ScoreMatrix {
        rows: s_deep.rows,
        cols: s_deep.cols,
        values,
    })
}

/// Mutual-max thresholded matching: a pair is kept when its score is the
/// maximum of both its row and its column and at least theta. Ties break
/// to the smallest column, then smallest row index.
pub fn match_regional(
    s: &ScoreMatrix,
    pts_ir: &GridPointSet,
    pts_vi: &GridPointSet,
    theta: f64,
) -> Result<MatchSet> {
    if s.rows != pts_ir.len() || s.cols != pts_vi.len() {
        return Err(Error::Dimension(format!(
            "score matrix {}x{} vs point sets {}x{}",
            s.rows,
            s.cols,
            pts_ir.len(),
            pts_vi.len()
        )));
    }
    let mut row_best = vec![usize::MAX; s.rows];
    for i in 0..s.rows {
        let mut best = f64::NEG_INFINITY;
        for j in 0..s.cols {
            let v = s.get(i, j);
            if v > best {
                best = v;
                row_best[i] = j;
            }
        }
    }
    let mut col_best = vec![usize::MAX; s.cols];
    for j in 0..s.cols {
        let mut best = f64::NEG_INFINITY;
        for i in 0..s.rows {
            let v = s.get(i, j);
            if v > best {
                best = v;
                col_best[j] = i;
            }
        }
    }
    let mut pairs = Vec::new();
    for i in 0..s.rows {
        let j = row_best[i];
        if j != usize::MAX && col_best[j] == i && s.get(i, j) >= theta {
            pairs.push(MatchPair {
                ir: pts_ir.points[i],
                vi: pts_vi.points[j],
                score: s.get(i, j),
            });
        }
    }
    Ok(MatchSet {
        pairs,
        warning: None,
    })
}

/// Remove mismatches by hypothesizing homographies from random
/// 4-subsets and keeping the best consensus (symmetric transfer error
/// below `ransac_tol`). Sets too small for the hypothesis, or without a
/// consensus of `ransac_min_inliers`, come back unchanged with a warning.
pub fn ransac_filter(matches: &MatchSet, params: &HybridParams) -> Result<MatchSet> {
    params.validate()?;
    if matches.len() < 4 {
        return Ok(MatchSet {
            pairs: matches.pairs.clone(),
            warning: Some(MatchWarning::TooFewForRansac),
        });
    }
    let src: Vec<[f64; 2]> = matches
        .pairs
        .iter()
        .map(|m| [m.ir.x as f64, m.ir.y as f64])
        .collect();
    let dst: Vec<[f64; 2]> = matches
        .pairs
        .iter()
        .map(|m| [m.vi.x as f64, m.vi.y as f64])
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let indices: Vec<usize> = (0..matches.len()).collect();
    let mut best_inliers: Vec<usize> = Vec::new();
    for _ in 0..params.ransac_iters {
        let sample: Vec<usize> = indices
            .choose_multiple(&mut rng, 4)
            .cloned()
            .collect();
        let s4: Vec<[f64; 2]> = sample.iter().map(|&i| src[i]).collect();
        let d4: Vec<[f64; 2]> = sample.iter().map(|&i| dst[i]).collect();
        let Ok(h) = fit_homography(&s4, &d4) else {
            continue; // degenerate sample, skip
        };
        let Ok(h_inv) = h.inverse() else {
            continue;
        };
        let inliers: Vec<usize> = (0..matches.len())
            .filter(|&i| {
                symmetric_transfer(&h, &h_inv, src[i], dst[i])
                    .is_some_and(|(f, b)| f < params.ransac_tol && b < params.ransac_tol)
            })
            .collect();
        // strictly-greater keeps the earliest best hypothesis
        if inliers.len() > best_inliers.len() {
            best_inliers = inliers;
        }
    }
    if best_inliers.len() < params.ransac_min_inliers {
        return Ok(MatchSet {
            pairs: matches.pairs.clone(),
            warning: Some(MatchWarning::NoConsensus),
        });
    }
    Ok(MatchSet {
        pairs: best_inliers
            .iter()
            .map(|&i| matches.pairs[i])
            .collect(),
        warning: None,
    })
}

/// Full regional matching pipeline over two feature grids and masks.
pub fn run_hdm(
    f_ir: &FeatureGrid,
    f_vi: &FeatureGrid,
    mask_ir: &RegionMask,
    mask_vi: &RegionMask,
    params: &HybridParams,
) -> Result<MatchSet> {
    run_hdm_mode(f_ir, f_vi, mask_ir, mask_vi, params, ScoreMode::Hybrid)
}

pub fn run_hdm_mode(
    f_ir: &FeatureGrid,
    f_vi: &FeatureGrid,
    mask_ir: &RegionMask,
    mask_vi: &RegionMask,
    params: &HybridParams,
    mode: ScoreMode,
) -> Result<MatchSet> {
    params.validate()?;
    let pts_ir = grid_points(mask_ir);
    let pts_vi = grid_points(mask_vi);
    if pts_ir.is_empty() || pts_vi.is_empty() {
        return Err(Error::DegenerateRegion(format!(
            "grid point counts {} and {}",
            pts_ir.len(),
            pts_vi.len()
        )));
    }
    let s_deep = deep_scores(f_ir, f_vi, &pts_ir, &pts_vi)?;
    let scored = match mode {
        ScoreMode::DeepOnly => s_deep,
        ScoreMode::Hybrid | ScoreMode::HolOnly => {
            let hol_params = HolParams::default();
            let d_ir = build_hol(&pts_ir, &hol_params)?;
            let d_vi = build_hol(&pts_vi, &hol_params)?;
            let c_hol = hol_cost_matrix(&d_ir, &d_vi)?;
            match mode {
                ScoreMode::HolOnly => {
                    let max = c_hol.max();
                    let values = c_hol
                        .values
                        .iter()
                        .map(|&c| 1.0 - if max > 0.0 { c / max } else { 0.0 })
                        .collect();
                    ScoreMatrix {
                        rows: c_hol.rows,
                        cols: c_hol.cols,
                        values,
                    }
                }
                _ => {
                    let sigma = area_ratio_sigma(pts_ir.len(), pts_vi.len(), params.omega)?;
                    let mut lam = Vec::with_capacity(pts_ir.len() * pts_vi.len());
                    for p in &pts_ir.points {
                        for q in &pts_vi.points {
                            lam.push(gaussian_lambda(p, q, &pts_ir, &pts_vi, sigma));
                        }
                    }
                    hybrid_scores(&s_deep, &c_hol, &lam, sigma, params.delta)?
                }
            }
        }
    };
    let matched = match_regional(&scored, &pts_ir, &pts_vi, params.theta)?;
    ransac_filter(&matched, params)
}

fn gradient_magnitude(img: &Image) -> Vec<f64> {
    let (w, h) = (img.width, img.height);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let gx = img.get((x + 1).min(w - 1), y) - img.get(x.saturating_sub(1), y);
            let gy = img.get(x, (y + 1).min(h - 1)) - img.get(x, y.saturating_sub(1));
            out[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

fn patch_at(gm: &[f64], w: usize, h: usize, cx: isize, cy: isize, half: isize) -> Vec<f64> {
    let mut out = Vec::with_capacity(((2 * half + 1) * (2 * half + 1)) as usize);
    for dy in -half..=half {
        for dx in -half..=half {
            let x = (cx + dx).clamp(0, w as isize - 1) as usize;
            let y = (cy + dy).clamp(0, h as isize - 1) as usize;
            out.push(gm[y * w + x]);
        }
    }
    out
}

fn zncc(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (u, v) = (x - ma, y - mb);
        dot += u * v;
        na += u * u;
        nb += v * v;
    }
    if na < 1e-12 || nb < 1e-12 {
        return None;
    }
    Some(dot / (na * nb).sqrt())
}

fn parabolic_offset(sm: f64, s0: f64, sp: f64) -> f64 {
    let denom = sm - 2.0 * s0 + sp;
    if denom < -1e-12 {
        (0.5 * (sm - sp) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Sub-pixel refinement of matched grid points. Each visible-side point
/// is shifted to the integer offset (within `radius`) maximizing the
/// zero-normalized cross correlation of 17x17 gradient-magnitude
/// patches, then interpolated with a parabolic peak fit. Gradient
/// magnitude keeps the search meaningful across monotone intensity
/// remaps. Matches without usable texture keep their grid coordinates.
/// Returns (ir, vi) coordinate lists ready for model fitting.
pub fn refine_matches(
    ir: &Image,
    vi: &Image,
    matches: &MatchSet,
    radius: usize,
) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let gm_ir = gradient_magnitude(ir);
    let gm_vi = gradient_magnitude(vi);
    let half = 8isize;
    let r = radius as isize;
    let side = (2 * r + 1) as usize;
    let mut pts_ir = Vec::with_capacity(matches.len());
    let mut pts_vi = Vec::with_capacity(matches.len());
    for m in &matches.pairs {
        pts_ir.push([m.ir.x as f64, m.ir.y as f64]);
        let reference = patch_at(
            &gm_ir,
            ir.width,
            ir.height,
            m.ir.x as isize,
            m.ir.y as isize,
            half,
        );
        let mut scores = vec![f64::NEG_INFINITY; side * side];
        let mut best = (0isize, 0isize, f64::NEG_INFINITY);
        for dy in -r..=r {
            for dx in -r..=r {
                let cand = patch_at(
                    &gm_vi,
                    vi.width,
                    vi.height,
                    m.vi.x as isize + dx,
                    m.vi.y as isize + dy,
                    half,
                );
                if let Some(s) = zncc(&reference, &cand) {
                    scores[((dy + r) * (2 * r + 1) + dx + r) as usize] = s;
                    if s > best.2 {
                        best = (dx, dy, s);
                    }
                }
            }
        }
        if !best.2.is_finite() {
            pts_vi.push([m.vi.x as f64, m.vi.y as f64]);
            continue;
        }
        let (bx, by) = (best.0, best.1);
        // a perfect correlation means the peak sits exactly on the
        // lattice; interpolating around it would only add noise
        if best.2 > 1.0 - 1e-9 {
            pts_vi.push([(m.vi.x as isize + bx) as f64, (m.vi.y as isize + by) as f64]);
            continue;
        }
        let at = |dx: isize, dy: isize| scores[((dy + r) * (2 * r + 1) + dx + r) as usize];
        let mut fx = bx as f64;
        let mut fy = by as f64;
        if bx > -r && bx < r && at(bx - 1, by).is_finite() && at(bx + 1, by).is_finite() {
            fx += parabolic_offset(at(bx - 1, by), at(bx, by), at(bx + 1, by));
        }
        if by > -r && by < r && at(bx, by - 1).is_finite() && at(bx, by + 1).is_finite() {
            fy += parabolic_offset(at(bx, by - 1), at(bx, by), at(bx, by + 1));
        }
        pts_vi.push([m.vi.x as f64 + fx, m.vi.y as f64 + fy]);
    }
    (pts_ir, pts_vi)
}
