//! Per-grid-cell descriptors standing in for learned 1/8-scale feature
//! maps, a binary interchange format for externally computed features,
//! the deterministic strip-pool saliency aggregator and the deep score
//! matrix.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{GridPointSet, Image, RegionMask, GRID_STRIDE};

/// Dense per-cell descriptor array over the stride-8 grid. Descriptors
/// are either unit L2 norm or exactly all-zero (empty cell).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub grid_h: usize,
    pub grid_w: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FeatureGrid {
    pub fn descriptor(&self, col: usize, row: usize) -> &[f32] {
        let i = (row * self.grid_w + col) * self.dim;
        &self.data[i..i + self.dim]
    }
}

/// Per-cell saliency in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub values: Vec<f64>,
}

/// M x N score matrix between two region point sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ScoreMatrix {
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

fn require_multiple_of_8(img: &Image) -> Result<(usize, usize)> {
    if img.width % GRID_STRIDE != 0 || img.height % GRID_STRIDE != 0 {
        return Err(Error::Dimension(format!(
            "image {}x{} is not a multiple of 8",
            img.width, img.height
        )));
    }
    Ok((img.width / GRID_STRIDE, img.height / GRID_STRIDE))
}

fn normalize(desc: &mut [f32]) {
    let norm = desc.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in desc.iter_mut() {
            *v = (*v as f64 / norm) as f32;
        }
    }
}

/// Gradient-orientation histogram descriptor: 4x4 spatial subcells of 8
/// orientation bins (dim 128) accumulated over the 16x16 window centered
/// on each cell, magnitude weighted, L2 normalized.
///
/// With `unsigned_orientations` the orientation is folded modulo pi,
/// which makes the descriptor invariant to intensity inversion.
pub fn extract_gradhist_opts(img: &Image, unsigned_orientations: bool) -> Result<FeatureGrid> {
    let (grid_w, grid_h) = require_multiple_of_8(img)?;
    let dim = 128;
    let mut data = vec![0.0f32; grid_h * grid_w * dim];
    for ci in 0..grid_h {
        for cj in 0..grid_w {
            let desc =
                &mut data[(ci * grid_w + cj) * dim..(ci * grid_w + cj) * dim + dim];
            let x0 = cj as isize * 8 - 4;
            let y0 = ci as isize * 8 - 4;
            for ly in 0..16isize {
                for lx in 0..16isize {
                    let (x, y) = (x0 + lx, y0 + ly);
                    // window positions outside the raster contribute nothing
                    if x < 0 || y < 0 || x as usize >= img.width || y as usize >= img.height {
                        continue;
                    }
                    let clamp = |x: isize, y: isize| {
                        img.get(
                            x.clamp(0, img.width as isize - 1) as usize,
                            y.clamp(0, img.height as isize - 1) as usize,
                        )
                    };
                    let gx = (clamp(x + 1, y) - clamp(x - 1, y)) / 2.0;
                    let gy = (clamp(x, y + 1) - clamp(x, y - 1)) / 2.0;
                    let mag = (gx * gx + gy * gy).sqrt();
                    if mag == 0.0 {
                        continue;
                    }
                    let mut angle = gy.atan2(gx);
                    let range = if unsigned_orientations {
                        if angle < 0.0 {
                            angle += std::f64::consts::PI;
                        }
                        std::f64::consts::PI
                    } else {
                        if angle < 0.0 {
                            angle += 2.0 * std::f64::consts::PI;
                        }
                        2.0 * std::f64::consts::PI
                    };
                    let bin = ((angle / range * 8.0) as usize).min(7);
                    let subcell = (ly / 4) * 4 + lx / 4;
                    desc[subcell as usize * 8 + bin] += mag as f32;
                }
            }
            normalize(desc);
        }
    }
    Ok(FeatureGrid {
        grid_h,
        grid_w,
        dim,
        data,
    })
}

pub fn extract_gradhist(img: &Image) -> Result<FeatureGrid> {
    extract_gradhist_opts(img, false)
}

/// Per-cell standardized intensities (dim 64): subtract the cell mean,
/// divide by std + 1e-6, L2 normalize. Invariant to per-cell affine
/// intensity maps up to the epsilon guard.
pub fn extract_meanvar(img: &Image) -> Result<FeatureGrid> {
    let (grid_w, grid_h) = require_multiple_of_8(img)?;
    let dim = 64;
    let mut data = vec![0.0f32; grid_h * grid_w * dim];
    for ci in 0..grid_h {
        for cj in 0..grid_w {
            let mut cell = [0.0f64; 64];
            for ly in 0..8 {
                for lx in 0..8 {
                    cell[ly * 8 + lx] = img.get(cj * 8 + lx, ci * 8 + ly);
                }
            }
            let mean = cell.iter().sum::<f64>() / 64.0;
            let var = cell.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 64.0;
            let std = var.sqrt();
            let desc =
                &mut data[(ci * grid_w + cj) * dim..(ci * grid_w + cj) * dim + dim];
            // guard against rounding in the mean of a constant cell
            if std > 1e-12 {
                for (d, v) in desc.iter_mut().zip(cell) {
                    *d = ((v - mean) / (std + 1e-6)) as f32;
                }
            }
            normalize(desc);
        }
    }
    Ok(FeatureGrid {
        grid_h,
        grid_w,
        dim,
        data,
    })
}

const FGRD_MAGIC: &[u8; 4] = b"FGRD";

/// Write the feature-grid interchange format: magic "FGRD", then LE u32
/// grid_h, grid_w, dim, then the f32 payload row-major and
/// descriptor-contiguous.
pub fn save_feature_grid(grid: &FeatureGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(16 + grid.data.len() * 4);
    out.write_all(FGRD_MAGIC).unwrap();
    for v in [grid.grid_h as u32, grid.grid_w as u32, grid.dim as u32] {
        out.extend(v.to_le_bytes());
    }
    for v in &grid.data {
        out.extend(v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// A loaded feature grid plus the count of descriptors that had to be
/// re-normalized because their norm was neither 0 nor 1.
pub struct LoadedFeatureGrid {
    pub grid: FeatureGrid,
    pub renormalized: usize,
}

pub fn load_feature_grid(path: impl AsRef<Path>) -> Result<LoadedFeatureGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != FGRD_MAGIC {
        return Err(Error::Format("bad feature grid magic".into()));
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    }
    let [grid_h, grid_w, dim] = dims;
    let n = grid_h
        .checked_mul(grid_w)
        .and_then(|v| v.checked_mul(dim))
        .ok_or_else(|| Error::Format("feature grid dimensions overflow".into()))?;
    if bytes.len() != 16 + 4 * n {
        return Err(Error::Format(format!(
            "feature grid payload holds {} floats, header declares {}",
            (bytes.len() - 16) / 4,
            n
        )));
    }
    let mut data: Vec<f32> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut renormalized = 0;
    if dim > 0 {
        for desc in data.chunks_exact_mut(dim) {
            let norm = desc
                .iter()
                .map(|&v| v as f64 * v as f64)
                .sum::<f64>()
                .sqrt();
            if (norm - 1.0).abs() > 1e-3 && norm > 1e-3 {
                normalize(desc);
                renormalized += 1;
            }
        }
    }
    Ok(LoadedFeatureGrid {
        grid: FeatureGrid {
            grid_h,
            grid_w,
            dim,
            data,
        },
        renormalized,
    })
}

/// Strip pooling: per-channel row and column means combined additively,
/// reduced to a scalar per cell by L2 norm over channels and min-max
/// rescaled to `[0, 1]`.
pub fn strip_pool_saliency(grid: &FeatureGrid) -> SaliencyMap {
    let (h, w, c) = (grid.grid_h, grid.grid_w, grid.dim);
    let mut row_mean = vec![0.0f64; h * c];
    let mut col_mean = vec![0.0f64; w * c];
    for i in 0..h {
        for j in 0..w {
            let d = grid.descriptor(j, i);
            for (k, &v) in d.iter().enumerate() {
                row_mean[i * c + k] += v as f64 / w as f64;
                col_mean[j * c + k] += v as f64 / h as f64;
            }
        }
    }
    let mut values = vec![0.0f64; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut sq = 0.0;
            for k in 0..c {
                let v = row_mean[i * c + k] + col_mean[j * c + k];
                sq += v * v;
            }
            values[i * w + j] = sq.sqrt();
        }
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        for v in values.iter_mut() {
            *v = (*v - min) / (max - min);
        }
    } else {
        values.iter_mut().for_each(|v| *v = 0.0);
    }
    SaliencyMap {
        grid_h: h,
        grid_w: w,
        values,
    }
}

/// Threshold a saliency map into a full-resolution mask by 8x8 block
/// replication of `value >= threshold`.
pub fn propose_mask(sal: &SaliencyMap, threshold: f64) -> RegionMask {
    let (width, height) = (sal.grid_w * GRID_STRIDE, sal.grid_h * GRID_STRIDE);
    let mut bits = vec![false; width * height];
    for y in 0..height {
        for x in 0..width {
            bits[y * width + x] =
                sal.values[(y / GRID_STRIDE) * sal.grid_w + x / GRID_STRIDE] >= threshold;
        }
    }
    RegionMask {
        width,
        height,
        bits,
    }
}

/// Plain inner-product score matrix between the descriptors at two
/// region point sets. No softmax, no temperature.
pub fn deep_scores(
    f_ir: &FeatureGrid,
    f_vi: &FeatureGrid,
    pts_ir: &GridPointSet,
    pts_vi: &GridPointSet,
) -> Result<ScoreMatrix> {
    if f_ir.dim != f_vi.dim {
        return Err(Error::Dimension(format!(
            "descriptor dims differ: {} vs {}",
            f_ir.dim, f_vi.dim
        )));
    }
    let cell_of = |p: &crate::raster::GridPoint, g: &FeatureGrid| -> Result<(usize, usize)> {
        let (cj, ci) = p.cell();
        if cj >= g.grid_w || ci >= g.grid_h {
            return Err(Error::Dimension(format!(
                "point ({}, {}) outside {}x{} grid",
                p.x, p.y, g.grid_w, g.grid_h
            )));
        }
        Ok((cj, ci))
    };
    let rows = pts_ir.len();
    let cols = pts_vi.len();
    let mut values = vec![0.0f64; rows * cols];
    for (m, p) in pts_ir.points.iter().enumerate() {
        let (cj, ci) = cell_of(p, f_ir)?;
        let a = f_ir.descriptor(cj, ci);
        for (n, q) in pts_vi.points.iter().enumerate() {
            let (dj, di) = cell_of(q, f_vi)?;
            let b = f_vi.descriptor(dj, di);
            values[m * cols + n] = a
                .iter()
                .zip(b)
                .map(|(&x, &y)| x as f64 * y as f64)
                .sum::<f64>();
        }
    }
    Ok(ScoreMatrix { rows, cols, values })
}
