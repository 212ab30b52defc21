//! Thin-plate-spline and homography estimation, point mapping and
//! inverse-mapped bilinear warping.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;

/// Thin-plate radial basis, U(r) = r^2 ln r with U(0) = 0.
#[inline]
fn tps_kernel(r: f64) -> f64 {
    if r <= 0.0 {
        0.0
    } else {
        r * r * r.ln()
    }
}

/// Fitted thin-plate spline: affine part plus radial weights anchored at
/// the source control points. Weights satisfy the side conditions
/// sum(w) = 0 and sum(w * control) = 0 per output dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TpsModel {
    pub control_points: Vec<[f64; 2]>,
    pub weights: Vec<[f64; 2]>,
    /// rows correspond to [1, x, y]
    pub affine: [[f64; 2]; 3],
    pub regularization: f64,
}

/// 3x3 projective mapping, Frobenius-normalized with h[2][2] >= 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HomographyModel {
    pub h: [[f64; 3]; 3],
}

fn collinearity_residual(pts: &[[f64; 2]]) -> f64 {
    // largest perpendicular spread of the points around their best line
    let n = pts.len() as f64;
    let (mx, my) = pts
        .iter()
        .fold((0.0, 0.0), |(x, y), p| (x + p[0] / n, y + p[1] / n));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    // smaller eigenvalue of the scatter matrix
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    (tr / 2.0 - disc).max(0.0).sqrt()
}

/// Solve the interpolation system for a TPS mapping `src -> dst`.
/// `reg` adds reg * I to the kernel block for noisy correspondences.
pub fn fit_tps(src: &[[f64; 2]], dst: &[[f64; 2]], reg: f64) -> Result<TpsModel> {
    let n = src.len();
    if n != dst.len() {
        return Err(Error::Dimension(format!(
            "src has {n} points, dst has {}",
            dst.len()
        )));
    }
    if n < 3 {
        return Err(Error::Fit(format!("need at least 3 control points, got {n}")));
    }
    if reg < 0.0 {
        return Err(Error::Parameter("negative TPS regularization".into()));
    }
    for i in 0..n {
        for j in i + 1..n {
            if src[i] == src[j] {
                return Err(Error::Fit(format!(
                    "duplicate control point ({}, {})",
                    src[i][0], src[i][1]
                )));
            }
        }
    }
    if collinearity_residual(src) < 1e-9 {
        return Err(Error::Fit("control points are collinear".into()));
    }

    let size = n + 3;
    let mut l = DMatrix::<f64>::zeros(size, size);
    for i in 0..n {
        for j in 0..n {
            let dx = src[i][0] - src[j][0];
            let dy = src[i][1] - src[j][1];
            l[(i, j)] = tps_kernel((dx * dx + dy * dy).sqrt());
        }
        l[(i, i)] += reg;
        l[(i, n)] = 1.0;
        l[(i, n + 1)] = src[i][0];
        l[(i, n + 2)] = src[i][1];
        l[(n, i)] = 1.0;
        l[(n + 1, i)] = src[i][0];
        l[(n + 2, i)] = src[i][1];
    }

    let lu = l.clone().full_piv_lu();
    let mut weights = vec![[0.0; 2]; n];
    let mut affine = [[0.0; 2]; 3];
    for d in 0..2 {
        let mut rhs = DVector::<f64>::zeros(size);
        for i in 0..n {
            rhs[i] = dst[i][d];
        }
        let sol = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Fit("singular TPS system".into()))?;
        let residual = (&l * &sol - &rhs).norm() / rhs.norm().max(1.0);
        if residual > 1e-8 {
            return Err(Error::Fit(format!(
                "ill-conditioned TPS system, relative residual {residual:.2e}"
            )));
        }
        for i in 0..n {
            weights[i][d] = sol[i];
        }
        for k in 0..3 {
            affine[k][d] = sol[n + k];
        }
    }
    Ok(TpsModel {
        control_points: src.to_vec(),
        weights,
        affine,
        regularization: reg,
    })
}

pub fn tps_apply(model: &TpsModel, p: [f64; 2]) -> [f64; 2] {
    let mut out = [0.0; 2];
    for d in 0..2 {
        let mut v = model.affine[0][d] + model.affine[1][d] * p[0] + model.affine[2][d] * p[1];
        for (c, w) in model.control_points.iter().zip(&model.weights) {
            let dx = p[0] - c[0];
            let dy = p[1] - c[1];
            v += w[d] * tps_kernel((dx * dx + dy * dy).sqrt());
        }
        out[d] = v;
    }
    out
}

impl TpsModel {
    /// Bending energy w^T K w summed over both output dimensions.
    pub fn bending_energy(&self) -> f64 {
        let n = self.control_points.len();
        let mut e = 0.0;
        for i in 0..n {
            for j in 0..n {
                let dx = self.control_points[i][0] - self.control_points[j][0];
                let dy = self.control_points[i][1] - self.control_points[j][1];
                let u = tps_kernel((dx * dx + dy * dy).sqrt());
                for d in 0..2 {
                    e += self.weights[i][d] * u * self.weights[j][d];
                }
            }
        }
        e
    }
}

/// Hartley normalization: translate to zero mean, scale to mean distance
/// sqrt(2) from the origin.
fn normalize_points(pts: &[[f64; 2]]) -> Option<(Vec<[f64; 2]>, Matrix3<f64>)> {
    let n = pts.len() as f64;
    let (mx, my) = pts
        .iter()
        .fold((0.0, 0.0), |(x, y), p| (x + p[0] / n, y + p[1] / n));
    let mean_dist = pts
        .iter()
        .map(|p| ((p[0] - mx).powi(2) + (p[1] - my).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if mean_dist < 1e-12 {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0);
    let normed = pts
        .iter()
        .map(|p| [s * (p[0] - mx), s * (p[1] - my)])
        .collect();
    Some((normed, t))
}

/// Normalized DLT homography estimate mapping `src` to `dst`.
pub fn fit_homography(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<HomographyModel> {
    let n = src.len();
    if n != dst.len() {
        return Err(Error::Dimension(format!(
            "src has {n} points, dst has {}",
            dst.len()
        )));
    }
    if n < 4 {
        return Err(Error::Fit(format!(
            "need at least 4 correspondences, got {n}"
        )));
    }
    let (src_n, t_src) = normalize_points(src)
        .ok_or_else(|| Error::Fit("degenerate source configuration".into()))?;
    let (dst_n, t_dst) = normalize_points(dst)
        .ok_or_else(|| Error::Fit("degenerate destination configuration".into()))?;

    let mut a = DMatrix::<f64>::zeros(2 * n, 9);
    for (i, (p, q)) in src_n.iter().zip(&dst_n).enumerate() {
        let (x, y) = (p[0], p[1]);
        let (u, v) = (q[0], q[1]);
        let r0 = 2 * i;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        let r1 = r0 + 1;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }
    // least-squares null vector of A via the eigenvector of A^T A with
    // the smallest eigenvalue (a thin SVD of A would drop the null space
    // for the minimal 8x9 case)
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let min_idx = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.total_cmp(b))
        .map(|(i, _)| i)
        .unwrap();
    let h_vec = eig.eigenvectors.column(min_idx);
    let hn = Matrix3::new(
        h_vec[0], h_vec[1], h_vec[2], h_vec[3], h_vec[4], h_vec[5], h_vec[6], h_vec[7], h_vec[8],
    );
    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or_else(|| Error::Fit("singular normalization".into()))?;
    let mut h = t_dst_inv * hn * t_src;
    let norm = h.norm();
    if norm < 1e-12 {
        return Err(Error::Fit("degenerate configuration".into()));
    }
    h /= norm;
    if h.determinant().abs() < 1e-10 {
        return Err(Error::Fit("degenerate configuration".into()));
    }
    if h[(2, 2)] < 0.0 {
        h = -h;
    }
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = h[(r, c)];
        }
    }
    Ok(HomographyModel { h: out })
}

pub fn homography_apply(model: &HomographyModel, p: [f64; 2]) -> Result<[f64; 2]> {
    let h = &model.h;
    let w = h[2][0] * p[0] + h[2][1] * p[1] + h[2][2];
    if w.abs() <= 1e-12 {
        return Err(Error::Fit(format!(
            "point ({}, {}) maps to infinity",
            p[0], p[1]
        )));
    }
    Ok([
        (h[0][0] * p[0] + h[0][1] * p[1] + h[0][2]) / w,
        (h[1][0] * p[0] + h[1][1] * p[1] + h[1][2]) / w,
    ])
}

impl HomographyModel {
    pub fn identity() -> Self {
        HomographyModel {
            h: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn inverse(&self) -> Result<HomographyModel> {
        let m = Matrix3::from_fn(|r, c| self.h[r][c]);
        let inv = m
            .try_inverse()
            .ok_or_else(|| Error::Fit("homography is not invertible".into()))?;
        let mut h = inv / inv.norm();
        if h[(2, 2)] < 0.0 {
            h = -h;
        }
        let mut out = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                out[r][c] = h[(r, c)];
            }
        }
        Ok(HomographyModel { h: out })
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Self {
        let mut h = m / m.norm();
        if h[(2, 2)] < 0.0 {
            h = -h;
        }
        let mut out = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                out[r][c] = h[(r, c)];
            }
        }
        HomographyModel { h: out }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.h[r][c])
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        HomographyModel::from_matrix(Matrix3::new(
            1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0,
        ))
    }
}

/// A point mapping backed by one of the fitted models. For warping the
/// mapping runs output pixel -> source location (inverse direction).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TransformModel {
    Identity,
    Homography(HomographyModel),
    Tps(TpsModel),
}

impl TransformModel {
    /// Map a point; `None` when a homography sends it to infinity.
    pub fn map(&self, p: [f64; 2]) -> Option<[f64; 2]> {
        match self {
            TransformModel::Identity => Some(p),
            TransformModel::Homography(h) => homography_apply(h, p).ok(),
            TransformModel::Tps(t) => Some(tps_apply(t, p)),
        }
    }

    /// Plain-text coefficient dump for debugging; not a stability contract.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        match self {
            TransformModel::Identity => out.push_str("identity\n"),
            TransformModel::Homography(m) => {
                out.push_str("homography\n");
                for row in &m.h {
                    for v in row {
                        out.push_str(&format!("{v:.17e}\n"));
                    }
                }
            }
            TransformModel::Tps(m) => {
                out.push_str("tps\n");
                out.push_str(&format!("n {}\n", m.control_points.len()));
                out.push_str(&format!("reg {:.17e}\n", m.regularization));
                for row in &m.affine {
                    out.push_str(&format!("affine {:.17e} {:.17e}\n", row[0], row[1]));
                }
                for (c, w) in m.control_points.iter().zip(&m.weights) {
                    out.push_str(&format!(
                        "cp {:.17e} {:.17e} w {:.17e} {:.17e}\n",
                        c[0], c[1], w[0], w[1]
                    ));
                }
            }
        }
        out
    }
}

fn bilinear_sample(img: &Image, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let sample = |ix: f64, iy: f64| -> f64 {
        if ix < 0.0 || iy < 0.0 || ix >= img.width as f64 || iy >= img.height as f64 {
            0.0
        } else {
            img.get(ix as usize, iy as usize)
        }
    };
    let v00 = sample(x0, y0);
    let v10 = sample(x0 + 1.0, y0);
    let v01 = sample(x0, y0 + 1.0);
    let v11 = sample(x0 + 1.0, y0 + 1.0);
    (v00 * (1.0 - fx) + v10 * fx) * (1.0 - fy) + (v01 * (1.0 - fx) + v11 * fx) * fy
}

/// Inverse-mapped warp: for each output pixel center, sample the source
/// at `mapping(pixel)` with bilinear interpolation, zero outside.
pub fn warp_image(img: &Image, mapping: &TransformModel, out_size: (usize, usize)) -> Image {
    let (w, h) = out_size;
    let mut data = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            if let Some([sx, sy]) = mapping.map([x as f64, y as f64]) {
                data[y * w + x] = bilinear_sample(img, sx, sy).clamp(0.0, 1.0);
            }
        }
    }
    Image {
        width: w,
        height: h,
        data,
    }
}

/// Symmetric transfer distances (forward, backward) of a correspondence
/// under a homography and its inverse.
pub fn symmetric_transfer(
    h: &HomographyModel,
    h_inv: &HomographyModel,
    src: [f64; 2],
    dst: [f64; 2],
) -> Option<(f64, f64)> {
    let f = homography_apply(h, src).ok()?;
    let b = homography_apply(h_inv, dst).ok()?;
    let df = ((f[0] - dst[0]).powi(2) + (f[1] - dst[1]).powi(2)).sqrt();
    let db = ((b[0] - src[0]).powi(2) + (b[1] - src[1]).powi(2)).sqrt();
    Some((df, db))
}

#[allow(dead_code)]
fn _projective_check(h: &HomographyModel, p: [f64; 2]) -> Vector3<f64> {
    h.matrix() * Vector3::new(p[0], p[1], 1.0)
}
