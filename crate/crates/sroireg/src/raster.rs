//! Single-channel rasters, binary region masks and the stride-8 grid
//! point sets that all matching operates on.
//!
//! Images are stored as `f64` intensities in `[0, 1]`. File I/O supports
//! binary PGM (P5, maxval 255) and 8-bit grayscale PNG; writing always
//! produces PGM.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const GRID_STRIDE: usize = 8;
const CELL_OFFSET: usize = 4;

/// Grayscale raster with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Format("zero image dimension".into()));
        }
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "data length {} != {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Format("intensity outside [0,1]".into()));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Image {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Intensity at `(x, y)` with zero padding outside the raster.
    #[inline]
    pub fn get_padded(&self, x: isize, y: isize) -> f64 {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            0.0
        } else {
            self.data[y as usize * self.width + x as usize]
        }
    }
}

/// Binary sROI mask; `true` marks pixels inside the region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl RegionMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Dimension(format!(
                "mask bits length {} != {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        Ok(RegionMask {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        RegionMask {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Chebyshev dilation by `cells` grid cells (8 px per cell).
    pub fn dilate_cells(&self, cells: usize) -> RegionMask {
        let r = (cells * GRID_STRIDE) as isize;
        let mut bits = vec![false; self.bits.len()];
        for y in 0..self.height as isize {
            for x in 0..self.width as isize {
                'scan: for dy in -r..=r {
                    for dx in -r..=r {
                        let (sx, sy) = (x + dx, y + dy);
                        if sx >= 0
                            && sy >= 0
                            && (sx as usize) < self.width
                            && (sy as usize) < self.height
                            && self.get(sx as usize, sy as usize)
                        {
                            bits[(y * self.width as isize + x) as usize] = true;
                            break 'scan;
                        }
                    }
                }
            }
        }
        RegionMask {
            width: self.width,
            height: self.height,
            bits,
        }
    }
}

/// A stride-8 grid cell center at full image resolution.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
pub struct GridPoint {
    pub x: usize,
    pub y: usize,
}

impl GridPoint {
    /// Grid cell indices `(col, row)` this point belongs to.
    #[inline]
    pub fn cell(&self) -> (usize, usize) {
        (
            (self.x - CELL_OFFSET) / GRID_STRIDE,
            (self.y - CELL_OFFSET) / GRID_STRIDE,
        )
    }
}

/// The grid points inside one region, with the centroid statistics used
/// by the Gaussian decay weighting. The point count doubles as the
/// region's area proxy.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPointSet {
    pub points: Vec<GridPoint>,
    pub centroid: [f64; 2],
    pub max_centroid_dist: f64,
}

impl GridPointSet {
    pub fn from_points(mut points: Vec<GridPoint>) -> Self {
        points.sort_by_key(|p| (p.y, p.x));
        points.dedup();
        let n = points.len();
        let centroid = if n == 0 {
            [0.0, 0.0]
        } else {
            let (sx, sy) = points
                .iter()
                .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x as f64, sy + p.y as f64));
            [sx / n as f64, sy / n as f64]
        };
        let max_centroid_dist = if n <= 1 {
            0.0
        } else {
            points
                .iter()
                .map(|p| {
                    let dx = p.x as f64 - centroid[0];
                    let dy = p.y as f64 - centroid[1];
                    (dx * dx + dy * dy).sqrt()
                })
                .fold(0.0, f64::max)
        };
        GridPointSet {
            points,
            centroid,
            max_centroid_dist,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn sniff_is_png(bytes: &[u8]) -> bool {
    bytes.len() >= 8 && bytes[..8] == [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a]
}

/// Parse a binary PGM (P5) with maxval 255. Comments and arbitrary
/// whitespace in the header are accepted.
fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format("not a P5 PGM".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Format("truncated PGM header".into())),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(Error::Format("malformed PGM header".into()));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = text
            .parse()
            .map_err(|_| Error::Format("malformed PGM header".into()))?;
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if width == 0 || height == 0 {
        return Err(Error::Format("zero PGM dimension".into()));
    }
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    // single whitespace byte separates the header from the payload
    if bytes.get(pos).is_none_or(|b| !b.is_ascii_whitespace()) {
        return Err(Error::Format("malformed PGM header".into()));
    }
    pos += 1;
    let n = width * height;
    if bytes.len() < pos + n {
        return Err(Error::Format("truncated PGM payload".into()));
    }
    Ok((width, height, bytes[pos..pos + n].to_vec()))
}

fn load_gray8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if sniff_is_png(&bytes) {
        let img = image::load_from_memory(&bytes)
            .map_err(|e| Error::Format(format!("bad PNG {}: {e}", path.display())))?;
        let gray = match img {
            image::DynamicImage::ImageLuma8(g) => g,
            _ => return Err(Error::Format("PNG is not 8-bit grayscale".into())),
        };
        let (w, h) = (gray.width() as usize, gray.height() as usize);
        if w == 0 || h == 0 {
            return Err(Error::Format("zero PNG dimension".into()));
        }
        Ok((w, h, gray.into_raw()))
    } else {
        parse_pgm(&bytes)
    }
}

/// Load a PGM or 8-bit grayscale PNG, mapping intensities to `[0,1]` by v/255.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let (width, height, raw) = load_gray8(path.as_ref())?;
    let data = raw.iter().map(|&v| v as f64 / 255.0).collect();
    Ok(Image {
        width,
        height,
        data,
    })
}

/// Write a binary PGM with v' = round(255 v), round half up.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(img.data.len() + 32);
    write!(out, "P5\n{} {}\n255\n", img.width, img.height).unwrap();
    out.extend(
        img.data
            .iter()
            .map(|&v| (255.0 * v + 0.5).floor().clamp(0.0, 255.0) as u8),
    );
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Load a mask for an image of `size = (width, height)`. The file may be
/// full resolution or the 1/8-resolution prediction shape, in which case
/// it is upsampled by 8x8 block replication. Pixels > 127 map to true.
pub fn load_mask(path: impl AsRef<Path>, size: (usize, usize)) -> Result<RegionMask> {
    let (width, height) = size;
    let (mw, mh, raw) = load_gray8(path.as_ref())?;
    let gw = width.div_ceil(GRID_STRIDE);
    let gh = height.div_ceil(GRID_STRIDE);
    if (mw, mh) == (width, height) {
        let bits = raw.iter().map(|&v| v > 127).collect();
        RegionMask::new(width, height, bits)
    } else if (mw, mh) == (gw, gh) {
        let mut bits = vec![false; width * height];
        for y in 0..height {
            for x in 0..width {
                bits[y * width + x] = raw[(y / GRID_STRIDE) * mw + x / GRID_STRIDE] > 127;
            }
        }
        RegionMask::new(width, height, bits)
    } else {
        Err(Error::Dimension(format!(
            "mask is {mw}x{mh}, expected {width}x{height} or {gw}x{gh}"
        )))
    }
}

/// Derive the stride-8 grid points of a mask. A cell contributes a point
/// at its center `(8j+4, 8i+4)` when at least 32 of its 64 pixels are
/// true; masks whose dimensions are not multiples of 8 behave as if
/// padded with false on the bottom/right.
pub fn grid_points(mask: &RegionMask) -> GridPointSet {
    let gw = mask.width.div_ceil(GRID_STRIDE);
    let gh = mask.height.div_ceil(GRID_STRIDE);
    let mut points = Vec::new();
    for ci in 0..gh {
        for cj in 0..gw {
            let mut count = 0usize;
            for dy in 0..GRID_STRIDE {
                let y = ci * GRID_STRIDE + dy;
                if y >= mask.height {
                    break;
                }
                for dx in 0..GRID_STRIDE {
                    let x = cj * GRID_STRIDE + dx;
                    if x >= mask.width {
                        break;
                    }
                    if mask.get(x, y) {
                        count += 1;
                    }
                }
            }
            if count >= GRID_STRIDE * GRID_STRIDE / 2 {
                points.push(GridPoint {
                    x: cj * GRID_STRIDE + CELL_OFFSET,
                    y: ci * GRID_STRIDE + CELL_OFFSET,
                });
            }
        }
    }
    GridPointSet::from_points(points)
}
