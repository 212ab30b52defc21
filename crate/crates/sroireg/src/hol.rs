//! Hierarchical Orientation Line descriptors: per-point histograms
//! counting the region's grid points on concentric Chebyshev rings,
//! split into four cardinal directions, compared with a chi-square cost.

use crate::error::{Error, Result};
use crate::raster::GridPointSet;

/// Ring layout parameters. The defaults (stride 8, rings strictly inside
/// (0, 240)) give 29 layers x 4 directions = 116 bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolParams {
    pub stride: usize,
    pub k_max: usize,
}

impl Default for HolParams {
    fn default() -> Self {
        HolParams {
            stride: 8,
            k_max: 240,
        }
    }
}

impl HolParams {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.k_max <= self.stride || self.k_max % self.stride != 0 {
            return Err(Error::Parameter(format!(
                "bad HOL params: stride {}, k_max {}",
                self.stride, self.k_max
            )));
        }
        Ok(())
    }

    /// Number of ring layers: multiples of `stride` strictly inside `(0, k_max)`.
    pub fn layers(&self) -> usize {
        self.k_max / self.stride - 1
    }

    pub fn descriptor_len(&self) -> usize {
        4 * self.layers()
    }
}

/// Layer-major counts, direction order (top, bottom, left, right).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HolDescriptor {
    pub counts: Vec<u32>,
}

/// Non-negative chi-square costs between two descriptor lists.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl CostMatrix {
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// Build one descriptor per point. For each other point at Chebyshev
/// distance k (a ring layer), the direction bin is top/bottom when
/// |dy| > |dx|, otherwise left/right by the sign of dx; diagonal ties
/// go to left/right.
pub fn build_hol(pts: &GridPointSet, params: &HolParams) -> Result<Vec<HolDescriptor>> {
    params.validate()?;
    let layers = params.layers();
    let mut out = Vec::with_capacity(pts.len());
    for p in &pts.points {
        let mut counts = vec![0u32; 4 * layers];
        for q in &pts.points {
            if p == q {
                continue;
            }
            let dx = q.x as isize - p.x as isize;
            let dy = q.y as isize - p.y as isize;
            let cheb = dx.abs().max(dy.abs()) as usize;
            if cheb % params.stride != 0 || cheb >= params.k_max {
                continue;
            }
            let layer = cheb / params.stride - 1;
            let dir = if dy < 0 && dy.abs() > dx.abs() {
                0 // top
            } else if dy > 0 && dy.abs() > dx.abs() {
                1 // bottom
            } else if dx < 0 {
                2 // left
            } else {
                3 // right
            };
            counts[layer * 4 + dir] += 1;
        }
        out.push(HolDescriptor { counts });
    }
    Ok(out)
}

/// Chi-square histogram distance: half-sum of squared bin differences
/// over bin sums, empty bins contributing zero.
pub fn chi2_cost(a: &HolDescriptor, b: &HolDescriptor) -> Result<f64> {
    if a.counts.len() != b.counts.len() {
        return Err(Error::Dimension(format!(
            "descriptor lengths differ: {} vs {}",
            a.counts.len(),
            b.counts.len()
        )));
    }
    let mut sum = 0.0;
    for (&x, &y) in a.counts.iter().zip(&b.counts) {
        let (x, y) = (x as f64, y as f64);
        if x + y > 0.0 {
            sum += (x - y) * (x - y) / (x + y);
        }
    }
    Ok(0.5 * sum)
}

pub fn hol_cost_matrix(
    d_ir: &[HolDescriptor],
    d_vi: &[HolDescriptor],
) -> Result<CostMatrix> {
    let rows = d_ir.len();
    let cols = d_vi.len();
    let mut values = Vec::with_capacity(rows * cols);
    for a in d_ir {
        for b in d_vi {
            values.push(chi2_cost(a, b)?);
        }
    }
    Ok(CostMatrix { rows, cols, values })
}
