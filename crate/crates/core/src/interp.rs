//! Interpolation, resampling and neighbourhood filters shared by the
//! product simulator and the editing functions.

use serde::{Deserialize, Serialize};

use crate::raster::Grid;
use crate::{Error, Result};

/// Resampling kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolator {
    Nearest,
    Bilinear,
    Bicubic,
}

impl Interpolator {
    pub fn name(self) -> &'static str {
        match self {
            Interpolator::Nearest => "nearest",
            Interpolator::Bilinear => "bilinear",
            Interpolator::Bicubic => "bicubic",
        }
    }
}

impl std::str::FromStr for Interpolator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Self::Nearest),
            "bilinear" => Ok(Self::Bilinear),
            "bicubic" => Ok(Self::Bicubic),
            other => Err(Error::Validation(format!("unknown interpolator `{other}`"))),
        }
    }
}

/// Reflect-101 index (`dcb|abcd|cba`) for any integer position.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Continuous counterpart of [`reflect_index`]: folds `x` into `[0, n-1]`.
#[inline]
pub fn mirror_coord(x: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let period = 2.0 * (n as f64 - 1.0);
    let m = x.rem_euclid(period);
    if m <= n as f64 - 1.0 {
        m
    } else {
        period - m
    }
}

/// Keys cubic convolution kernel with `a = -0.5`.
#[inline]
fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x < 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Taps `(source index, weight)` for one output coordinate at source
/// position `s`, with indices clamped to the border.
fn taps(kernel: Interpolator, s: f64, n: usize) -> Vec<(usize, f64)> {
    let clamp = |i: isize| i.clamp(0, n as isize - 1) as usize;
    match kernel {
        Interpolator::Nearest => vec![(clamp((s + 0.5).floor() as isize), 1.0)],
        Interpolator::Bilinear => {
            let s = s.clamp(0.0, n as f64 - 1.0);
            let i0 = s.floor();
            let t = s - i0;
            let i0 = i0 as isize;
            if t == 0.0 {
                vec![(clamp(i0), 1.0)]
            } else {
                vec![(clamp(i0), 1.0 - t), (clamp(i0 + 1), t)]
            }
        }
        Interpolator::Bicubic => {
            let i0 = s.floor();
            let t = s - i0;
            let i0 = i0 as isize;
            if t == 0.0 {
                return vec![(clamp(i0), 1.0)];
            }
            (-1..=2)
                .map(|k| (clamp(i0 + k), cubic(t - k as f64)))
                .collect()
        }
    }
}

/// Resample to `out_h x out_w`. Output pixel centres map to source
/// positions `(d + 0.5) * in / out - 0.5`; borders are clamped.
pub fn resize(grid: &Grid, out_h: usize, out_w: usize, kernel: Interpolator) -> Result<Grid> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Sizing(format!("resize to {out_h}x{out_w}")));
    }
    let (h, w) = grid.dims();
    if (h, w) == (out_h, out_w) {
        return Ok(grid.clone());
    }
    let col_taps: Vec<_> = (0..out_w)
        .map(|d| taps(kernel, (d as f64 + 0.5) * w as f64 / out_w as f64 - 0.5, w))
        .collect();
    let row_taps: Vec<_> = (0..out_h)
        .map(|d| taps(kernel, (d as f64 + 0.5) * h as f64 / out_h as f64 - 0.5, h))
        .collect();

    let mut horiz = vec![0.0f64; h * out_w];
    for r in 0..h {
        let src = grid.row(r);
        for (c, tc) in col_taps.iter().enumerate() {
            horiz[r * out_w + c] = tc.iter().map(|&(i, wt)| wt * src[i] as f64).sum();
        }
    }
    let mut out = Vec::with_capacity(out_h * out_w);
    for tr in &row_taps {
        for c in 0..out_w {
            let v: f64 = tr.iter().map(|&(i, wt)| wt * horiz[i * out_w + c]).sum();
            out.push(v as f32);
        }
    }
    Grid::new(out_h, out_w, out)
}

/// Scale both axes by `factor`, giving `round(f*H) x round(f*W)`.
pub fn resize_by(grid: &Grid, factor: f64, kernel: Interpolator) -> Result<Grid> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::Validation(format!("resize factor {factor}")));
    }
    let oh = (factor * grid.height() as f64).round() as usize;
    let ow = (factor * grid.width() as f64).round() as usize;
    resize(grid, oh, ow, kernel)
}

/// Bilinear sample at a continuous position, mirror-reflecting outside the grid.
#[inline]
pub fn sample_bilinear_mirror(grid: &Grid, r: f64, c: f64) -> f64 {
    let (h, w) = grid.dims();
    let r = mirror_coord(r, h);
    let c = mirror_coord(c, w);
    let r0 = (r.floor() as usize).min(h - 1);
    let c0 = (c.floor() as usize).min(w - 1);
    let (tr, tc) = (r - r0 as f64, c - c0 as f64);
    let r1 = (r0 + 1).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    let top = grid.get(r0, c0) as f64 * (1.0 - tc) + grid.get(r0, c1) as f64 * tc;
    let bot = grid.get(r1, c0) as f64 * (1.0 - tc) + grid.get(r1, c1) as f64 * tc;
    top * (1.0 - tr) + bot * tr
}

/// Rotate counterclockwise (as displayed, rows pointing down) by `degrees`
/// about the grid centre. Out-of-support samples are mirror-reflected.
pub fn rotate(grid: &Grid, degrees: f64) -> Grid {
    let (h, w) = grid.dims();
    let (s, c) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    Grid::from_fn(h, w, |r, col| {
        let (dy, dx) = (r as f64 - cy, col as f64 - cx);
        let sr = cy + dx * s + dy * c;
        let sc = cx + dx * c - dy * s;
        sample_bilinear_mirror(grid, sr, sc) as f32
    })
}

/// `k x k` mean filter. For even `k` the window spans `[i - k/2, i + k/2 - 1]`
/// (half-pixel bias toward the top-left). Reflect-101 padding.
pub fn box_blur(grid: &Grid, k: usize) -> Grid {
    assert!(k >= 1, "box kernel side must be positive");
    let (h, w) = grid.dims();
    let lo = (k / 2) as isize;
    let mut horiz = vec![0.0f64; h * w];
    for r in 0..h {
        let row = grid.row(r);
        for c in 0..w {
            let mut acc = 0.0;
            for j in 0..k as isize {
                acc += row[reflect_index(c as isize - lo + j, w)] as f64;
            }
            horiz[r * w + c] = acc;
        }
    }
    let norm = 1.0 / (k * k) as f64;
    Grid::from_fn(h, w, |r, c| {
        let mut acc = 0.0;
        for j in 0..k as isize {
            acc += horiz[reflect_index(r as isize - lo + j, h) * w + c];
        }
        (acc * norm) as f32
    })
}

/// `k x k` median filter with reflect-101 padding. An even sample count
/// takes the lower of the two middle order statistics.
pub fn median_blur(grid: &Grid, k: usize) -> Grid {
    assert!(k >= 1, "median kernel side must be positive");
    let (h, w) = grid.dims();
    let lo = (k / 2) as isize;
    let mut buf = Vec::with_capacity(k * k);
    Grid::from_fn(h, w, |r, c| {
        buf.clear();
        for dy in 0..k as isize {
            let rr = reflect_index(r as isize - lo + dy, h);
            let row = grid.row(rr);
            for dx in 0..k as isize {
                buf.push(row[reflect_index(c as isize - lo + dx, w)]);
            }
        }
        let mid = (buf.len() - 1) / 2;
        *buf.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1
    })
}

/// Separable Gaussian low-pass, truncated at `3 sigma`, reflect-101 padding.
pub fn gaussian_blur(grid: &Grid, sigma: f64) -> Grid {
    if sigma <= 0.0 {
        return grid.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kern: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kern.iter().sum();
    kern.iter_mut().for_each(|v| *v /= total);

    let (h, w) = grid.dims();
    let mut horiz = vec![0.0f64; h * w];
    for r in 0..h {
        let row = grid.row(r);
        for c in 0..w {
            horiz[r * w + c] = kern
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * row[reflect_index(c as isize + j as isize - radius, w)] as f64)
                .sum();
        }
    }
    Grid::from_fn(h, w, |r, c| {
        kern.iter()
            .enumerate()
            .map(|(j, kv)| kv * horiz[reflect_index(r as isize + j as isize - radius, h) * w + c])
            .sum::<f64>() as f32
    })
}
