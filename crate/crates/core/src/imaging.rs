//! Image containers and a census-cost semi-global matching disparity estimator.
//!
//! Inputs are assumed rectified: a scene point seen at column `x` in the left
//! image appears at column `x - d` on the same row of the right image, where
//! `d` is its disparity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Marker stored in [`DisparityMap`] for pixels without a disparity.
pub const INVALID_DISPARITY: f64 = f64::NAN;

#[derive(Debug, Error, PartialEq)]
pub enum ImagingError {
    #[error("image dimensions {width}x{height} must be nonzero")]
    EmptyImage { width: usize, height: usize },
    #[error("buffer of length {got} does not match {width}x{height}x{channels}")]
    BufferSize {
        width: usize,
        height: usize,
        channels: usize,
        got: usize,
    },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("disparity range {range} (starting at {min}) exceeds image width {width}")]
    RangeExceedsWidth { min: i32, range: usize, width: usize },
    #[error("invalid matcher parameters: {0}")]
    InvalidParams(String),
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImagingError> {
        check_dims(width, height)?;
        if data.len() != width * height * 3 {
            return Err(ImagingError::BufferSize {
                width,
                height,
                channels: 3,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self, ImagingError> {
        check_dims(width, height)?;
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Row-major 8-bit single channel image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImagingError> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(ImagingError::BufferSize {
                width,
                height,
                channels: 1,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

/// Per-pixel disparity in pixels. Invalid pixels hold [`INVALID_DISPARITY`].
#[derive(Debug, Clone)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DisparityMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, ImagingError> {
        check_dims(width, height)?;
        if values.len() != width * height {
            return Err(ImagingError::BufferSize {
                width,
                height,
                channels: 1,
                got: values.len(),
            });
        }
        // Collapse every non-finite value onto the one sentinel.
        let values = values
            .into_iter()
            .map(|v| if v.is_finite() { v } else { INVALID_DISPARITY })
            .collect();
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn invalid(width: usize, height: usize) -> Result<Self, ImagingError> {
        Self::new(width, height, vec![INVALID_DISPARITY; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Disparity at a pixel, `None` when invalid.
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let v = self.values[y * self.width + x];
        is_valid_disparity(v).then_some(v)
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| is_valid_disparity(**v)).count()
    }
}

impl PartialEq for DisparityMap {
    /// Bitwise equality, so two invalid pixels compare equal.
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub fn is_valid_disparity(v: f64) -> bool {
    v.is_finite()
}

fn check_dims(width: usize, height: usize) -> Result<(), ImagingError> {
    if width == 0 || height == 0 {
        return Err(ImagingError::EmptyImage { width, height });
    }
    Ok(())
}

/// Luma with the ITU-R BT.601 weights, rounded to nearest.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| {
            let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        data,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgbmParams {
    pub min_disparity: i32,
    pub disparity_range: usize,
    /// Side of the square census window; odd, 3..=7.
    pub census_window: usize,
    /// Penalty for a one pixel disparity change between neighbours.
    pub penalty_small: u16,
    /// Penalty for larger disparity jumps.
    pub penalty_large: u16,
    /// 4 or 8 aggregation directions.
    pub path_count: usize,
    /// Percent margin the best cost must win by.
    pub uniqueness_ratio: u32,
    pub lr_consistency_threshold: f64,
}

impl Default for SgbmParams {
    fn default() -> Self {
        Self {
            min_disparity: 0,
            disparity_range: 64,
            census_window: 5,
            penalty_small: 8,
            penalty_large: 32,
            path_count: 8,
            uniqueness_ratio: 10,
            lr_consistency_threshold: 1.0,
        }
    }
}

impl SgbmParams {
    pub fn validate(&self) -> Result<(), ImagingError> {
        let bad = |m: &str| Err(ImagingError::InvalidParams(m.to_string()));
        if self.disparity_range == 0 {
            return bad("disparity_range must be positive");
        }
        if self.census_window % 2 == 0 || !(3..=7).contains(&self.census_window) {
            return bad("census_window must be odd and within 3..=7");
        }
        if !(self.penalty_large > self.penalty_small && self.penalty_small > 0) {
            return bad("penalties must satisfy P2 > P1 > 0");
        }
        if self.path_count != 4 && self.path_count != 8 {
            return bad("path_count must be 4 or 8");
        }
        if self.uniqueness_ratio >= 100 {
            return bad("uniqueness_ratio must be below 100");
        }
        if !(self.lr_consistency_threshold >= 0.0) {
            return bad("lr_consistency_threshold must be nonnegative");
        }
        let max_cost = self.max_census_cost() as u64;
        let bound = self.path_count as u64 * (max_cost + self.penalty_large as u64);
        if bound > u16::MAX as u64 {
            return bad("penalty_large too large for 16-bit cost aggregation");
        }
        Ok(())
    }

    fn max_census_cost(&self) -> u16 {
        (self.census_window * self.census_window - 1) as u16
    }
}

const DIRECTIONS_4: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const DIRECTIONS_8: [(isize, isize); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (-1, 1),
    (1, -1),
    (-1, -1),
];

fn census_transform(img: &GrayImage, window: usize) -> Vec<u64> {
    let (w, h) = (img.width as isize, img.height as isize);
    let r = (window / 2) as isize;
    let mut out = vec![0u64; img.data.len()];
    out.par_chunks_mut(img.width)
        .enumerate()
        .for_each(|(y, row)| {
            let y = y as isize;
            for (x, code) in row.iter_mut().enumerate() {
                let x = x as isize;
                let center = img.data[(y * w + x) as usize];
                let mut bits = 0u64;
                for dy in -r..=r {
                    let yy = (y + dy).clamp(0, h - 1);
                    for dx in -r..=r {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let xx = (x + dx).clamp(0, w - 1);
                        bits = (bits << 1) | (img.data[(yy * w + xx) as usize] < center) as u64;
                    }
                }
                *code = bits;
            }
        });
    out
}

/// One SGM recurrence step for a single pixel.
#[inline]
fn aggregate_step(
    cost: &[u8],
    prev: Option<(&[u16], u16)>,
    out: &mut [u16],
    p1: u16,
    p2: u16,
) -> u16 {
    let mut min_out = u16::MAX;
    match prev {
        None => {
            for (o, &c) in out.iter_mut().zip(cost) {
                *o = c as u16;
                min_out = min_out.min(*o);
            }
        }
        Some((lp, min_prev)) => {
            let n = cost.len();
            let jump = min_prev + p2;
            for d in 0..n {
                let mut best = lp[d];
                if d > 0 {
                    best = best.min(lp[d - 1] + p1);
                }
                if d + 1 < n {
                    best = best.min(lp[d + 1] + p1);
                }
                best = best.min(jump);
                let v = cost[d] as u16 + best - min_prev;
                out[d] = v;
                min_out = min_out.min(v);
            }
        }
    }
    min_out
}

fn aggregate_direction(
    cost: &[u8],
    sum: &mut [u16],
    width: usize,
    height: usize,
    ndisp: usize,
    dir: (isize, isize),
    p1: u16,
    p2: u16,
) {
    let (dx, dy) = dir;
    let row_len = width * ndisp;
    if dy == 0 {
        sum.par_chunks_mut(row_len)
            .zip(cost.par_chunks(row_len))
            .for_each(|(srow, crow)| {
                let mut prev = vec![0u16; ndisp];
                let mut cur = vec![0u16; ndisp];
                let mut prev_min = 0u16;
                for i in 0..width {
                    let x = if dx > 0 { i } else { width - 1 - i };
                    let c = &crow[x * ndisp..(x + 1) * ndisp];
                    let p = (i > 0).then_some((prev.as_slice(), prev_min));
                    prev_min = aggregate_step(c, p, &mut cur, p1, p2);
                    for (s, v) in srow[x * ndisp..(x + 1) * ndisp].iter_mut().zip(&cur) {
                        *s += *v;
                    }
                    std::mem::swap(&mut prev, &mut cur);
                }
            });
        return;
    }

    let mut prev_row = vec![0u16; row_len];
    let mut prev_min = vec![0u16; width];
    let mut cur_row = vec![0u16; row_len];
    let mut cur_min = vec![0u16; width];
    for i in 0..height {
        let y = if dy > 0 { i } else { height - 1 - i };
        let crow = &cost[y * row_len..(y + 1) * row_len];
        {
            let prev_row = &prev_row;
            let prev_min = &prev_min;
            cur_row
                .par_chunks_mut(ndisp)
                .zip(cur_min.par_iter_mut())
                .enumerate()
                .for_each(|(x, (out, m))| {
                    let px = x as isize - dx;
                    let prev = if i > 0 && px >= 0 && (px as usize) < width {
                        let px = px as usize;
                        Some((&prev_row[px * ndisp..(px + 1) * ndisp], prev_min[px]))
                    } else {
                        None
                    };
                    *m = aggregate_step(&crow[x * ndisp..(x + 1) * ndisp], prev, out, p1, p2);
                });
        }
        sum[y * row_len..(y + 1) * row_len]
            .par_iter_mut()
            .zip(cur_row.par_iter())
            .for_each(|(s, v)| *s += *v);
        std::mem::swap(&mut prev_row, &mut cur_row);
        std::mem::swap(&mut prev_min, &mut cur_min);
    }
}

/// Semi-global matching over census/Hamming costs with quadratic subpixel
/// refinement, uniqueness and left-right consistency checks.
///
/// The output is a pure function of the inputs; parallel execution only
/// reorders integer additions.
pub fn compute_disparity(
    left: &GrayImage,
    right: &GrayImage,
    params: &SgbmParams,
) -> Result<DisparityMap, ImagingError> {
    params.validate()?;
    if left.width != right.width || left.height != right.height {
        return Err(ImagingError::DimensionMismatch(
            left.width,
            left.height,
            right.width,
            right.height,
        ));
    }
    let (width, height) = (left.width, left.height);
    let ndisp = params.disparity_range;
    let dmin = params.min_disparity;
    if ndisp > width || dmin.unsigned_abs() as usize + ndisp > width {
        return Err(ImagingError::RangeExceedsWidth {
            min: dmin,
            range: ndisp,
            width,
        });
    }

    let census_l = census_transform(left, params.census_window);
    let census_r = census_transform(right, params.census_window);
    let max_cost = params.max_census_cost() as u8;

    let row_len = width * ndisp;
    let mut cost = vec![0u8; height * row_len];
    cost.par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(y, crow)| {
            for x in 0..width {
                let cl = census_l[y * width + x];
                for k in 0..ndisp {
                    let xr = x as i64 - (dmin as i64 + k as i64);
                    crow[x * ndisp + k] = if xr >= 0 && (xr as usize) < width {
                        (cl ^ census_r[y * width + xr as usize]).count_ones() as u8
                    } else {
                        max_cost
                    };
                }
            }
        });

    let mut sum = vec![0u16; height * row_len];
    let dirs: &[(isize, isize)] = if params.path_count == 4 {
        &DIRECTIONS_4
    } else {
        &DIRECTIONS_8
    };
    for &dir in dirs {
        aggregate_direction(
            &cost,
            &mut sum,
            width,
            height,
            ndisp,
            dir,
            params.penalty_small,
            params.penalty_large,
        );
    }
    drop(cost);

    let uniq = params.uniqueness_ratio;
    let thr = params.lr_consistency_threshold;
    let mut values = vec![INVALID_DISPARITY; width * height];
    values
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(y, out)| {
            let srow = &sum[y * row_len..(y + 1) * row_len];
            // Right-view winners read from the same aggregated volume.
            let right_best: Vec<Option<i64>> = (0..width)
                .map(|xr| {
                    let mut best: Option<(u16, usize)> = None;
                    for k in 0..ndisp {
                        let xl = xr as i64 + dmin as i64 + k as i64;
                        if xl < 0 || xl as usize >= width {
                            continue;
                        }
                        let s = srow[xl as usize * ndisp + k];
                        if best.is_none_or(|(b, _)| s < b) {
                            best = Some((s, k));
                        }
                    }
                    best.map(|(_, k)| dmin as i64 + k as i64)
                })
                .collect();

            for (x, o) in out.iter_mut().enumerate() {
                let s = &srow[x * ndisp..(x + 1) * ndisp];
                let (mut best_k, mut best_s) = (0usize, u16::MAX);
                for (k, &v) in s.iter().enumerate() {
                    if v < best_s {
                        best_s = v;
                        best_k = k;
                    }
                }
                let unique = s.iter().enumerate().all(|(k, &v)| {
                    k.abs_diff(best_k) <= 1 || v as u64 * (100 - uniq as u64) >= best_s as u64 * 100
                });
                if !unique {
                    continue;
                }
                let mut d = dmin as f64 + best_k as f64;
                if best_k > 0 && best_k + 1 < ndisp {
                    let (a, b, c) = (
                        s[best_k - 1] as f64,
                        s[best_k] as f64,
                        s[best_k + 1] as f64,
                    );
                    let denom = a - 2.0 * b + c;
                    if denom > 0.0 {
                        d += ((a - c) / (2.0 * denom)).clamp(-0.5, 0.5);
                    }
                }
                let xr = x as i64 - (dmin as i64 + best_k as i64);
                if xr < 0 || xr as usize >= width {
                    continue;
                }
                match right_best[xr as usize] {
                    Some(dr) if (d - dr as f64).abs() <= thr => *o = d,
                    _ => {}
                }
            }
        });
    DisparityMap::new(width, height, values)
}

/// Median of the valid disparities in an odd `window` around each valid pixel.
pub fn median_filter_disparity(d: &DisparityMap, window: usize) -> Result<DisparityMap, ImagingError> {
    if window % 2 == 0 {
        return Err(ImagingError::InvalidParams(
            "median window must be odd".into(),
        ));
    }
    let r = (window / 2) as isize;
    let (w, h) = (d.width as isize, d.height as isize);
    let mut values = vec![INVALID_DISPARITY; d.values.len()];
    values
        .par_chunks_mut(d.width)
        .enumerate()
        .for_each(|(y, out)| {
            let mut buf = Vec::with_capacity(window * window);
            for (x, o) in out.iter_mut().enumerate() {
                if !is_valid_disparity(d.values[y * d.width + x]) {
                    continue;
                }
                buf.clear();
                for yy in (y as isize - r).max(0)..=(y as isize + r).min(h - 1) {
                    for xx in (x as isize - r).max(0)..=(x as isize + r).min(w - 1) {
                        let v = d.values[(yy * w + xx) as usize];
                        if is_valid_disparity(v) {
                            buf.push(v);
                        }
                    }
                }
                buf.sort_by(f64::total_cmp);
                let n = buf.len();
                *o = if n % 2 == 1 {
                    buf[n / 2]
                } else {
                    0.5 * (buf[n / 2 - 1] + buf[n / 2])
                };
            }
        });
    DisparityMap::new(d.width, d.height, values)
}
