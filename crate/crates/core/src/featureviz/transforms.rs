//! Image-space regularizing transforms applied between ascent steps.
//!
//! All functions take and return `[.., H, W]` tensors and act on each
//! trailing plane independently.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    Nearest,
    #[default]
    Bilinear,
    Bicubic,
}

impl fmt::Display for Interpolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interpolation::Nearest => "nearest",
            Interpolation::Bilinear => "bilinear",
            Interpolation::Bicubic => "bicubic",
        })
    }
}

impl FromStr for Interpolation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nearest" => Ok(Interpolation::Nearest),
            "bilinear" => Ok(Interpolation::Bilinear),
            "bicubic" => Ok(Interpolation::Bicubic),
            _ => Err(format!(
                "unknown interpolation {s:?} (expected nearest, bilinear or bicubic)"
            )),
        }
    }
}

fn plane_dims(image: &Tensor) -> (usize, usize) {
    let s = image.shape();
    assert!(s.len() >= 2, "image must have at least two dimensions, got {s:?}");
    (s[s.len() - 2], s[s.len() - 1])
}

/// Applies `f` to every `[H, W]` plane; `f` returns the new plane and extent.
fn map_planes(
    image: &Tensor,
    mut f: impl FnMut(&[f64], usize, usize) -> (Vec<f64>, usize, usize),
) -> Tensor {
    let (h, w) = plane_dims(image);
    let mut out = Vec::with_capacity(image.len());
    let (mut oh, mut ow) = (h, w);
    for plane in image.data().chunks(h * w) {
        let (data, ph, pw) = f(plane, h, w);
        out.extend(data);
        (oh, ow) = (ph, pw);
    }
    let mut shape = image.shape().to_vec();
    let n = shape.len();
    shape[n - 2] = oh;
    shape[n - 1] = ow;
    Tensor::new(shape, out).expect("plane sizes are consistent")
}

/// Cubic convolution kernel with a = -0.5.
pub fn keys_cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Taps and weights along one axis at source coordinate `s`.
fn taps(s: f64, interp: Interpolation) -> ([isize; 4], [f64; 4], usize) {
    match interp {
        Interpolation::Nearest => ([(s + 0.5).floor() as isize, 0, 0, 0], [1.0, 0.0, 0.0, 0.0], 1),
        Interpolation::Bilinear => {
            let i0 = s.floor();
            let t = s - i0;
            let i0 = i0 as isize;
            ([i0, i0 + 1, 0, 0], [1.0 - t, t, 0.0, 0.0], 2)
        }
        Interpolation::Bicubic => {
            let i0 = s.floor();
            let t = s - i0;
            let i0 = i0 as isize;
            (
                [i0 - 1, i0, i0 + 1, i0 + 2],
                [keys_cubic(t + 1.0), keys_cubic(t), keys_cubic(1.0 - t), keys_cubic(2.0 - t)],
                4,
            )
        }
    }
}

/// Interpolated value at `(y, x)`. Out-of-bounds taps read zero.
fn sample_zero_fill(plane: &[f64], h: usize, w: usize, y: f64, x: f64, interp: Interpolation) -> f64 {
    let (ty, wy, ny) = taps(y, interp);
    let (tx, wx, nx) = taps(x, interp);
    let mut acc = 0.0;
    for i in 0..ny {
        let r = ty[i];
        if r < 0 || r >= h as isize {
            continue;
        }
        let row = &plane[r as usize * w..(r as usize + 1) * w];
        let mut racc = 0.0;
        for j in 0..nx {
            let c = tx[j];
            if c >= 0 && c < w as isize {
                racc += wx[j] * row[c as usize];
            }
        }
        acc += wy[i] * racc;
    }
    acc
}

fn value_range(plane: &[f64]) -> (f64, f64) {
    plane
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Multiplies the image by a factor drawn from `range` and clips to [0, 1].
pub fn jitter(image: &Tensor, range: [f64; 2], rng: &mut impl Rng) -> Tensor {
    let factor = if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    };
    jitter_by(image, factor)
}

pub fn jitter_by(image: &Tensor, factor: f64) -> Tensor {
    image.map(|v| (factor * v).clamp(0.0, 1.0))
}

/// Rotates by a uniform random angle in `[-max_degrees, max_degrees]`.
pub fn rotate(image: &Tensor, max_degrees: f64, interp: Interpolation, rng: &mut impl Rng) -> Tensor {
    let angle = if max_degrees == 0.0 {
        0.0
    } else {
        rng.random_range(-max_degrees..=max_degrees)
    };
    rotate_by(image, angle, interp)
}

/// Rotates counter-clockwise by `degrees` about the image center, filling
/// uncovered pixels with zero.
pub fn rotate_by(image: &Tensor, degrees: f64, interp: Interpolation) -> Tensor {
    let (sin, cos) = degrees.to_radians().sin_cos();
    map_planes(image, |plane, h, w| {
        let cy = (h as f64 - 1.0) / 2.0;
        let cx = (w as f64 - 1.0) / 2.0;
        let (lo, hi) = value_range(plane);
        let (lo, hi) = (lo.min(0.0), hi.max(0.0));
        let mut out = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let dy = r as f64 - cy;
                let dx = c as f64 - cx;
                // inverse map: rotate the output offset back (rows point down)
                let sy = cy + cos * dy + sin * dx;
                let sx = cx - sin * dy + cos * dx;
                let v = sample_zero_fill(plane, h, w, sy, sx, interp);
                out.push(if interp == Interpolation::Bicubic {
                    v.clamp(lo, hi)
                } else {
                    v
                });
            }
        }
        (out, h, w)
    })
}

/// Shifts by integer offsets drawn uniformly from `-max_shift..=max_shift`.
pub fn translate(image: &Tensor, max_shift: usize, rng: &mut impl Rng) -> Tensor {
    let m = max_shift as i64;
    let dr = rng.random_range(-m..=m) as isize;
    let dc = rng.random_range(-m..=m) as isize;
    translate_by(image, dr, dc)
}

/// Moves content down by `dr` rows and right by `dc` columns, zero fill.
pub fn translate_by(image: &Tensor, dr: isize, dc: isize) -> Tensor {
    map_planes(image, |plane, h, w| {
        let mut out = vec![0.0; h * w];
        for r in 0..h as isize {
            let sr = r - dr;
            if sr < 0 || sr >= h as isize {
                continue;
            }
            for c in 0..w as isize {
                let sc = c - dc;
                if sc >= 0 && sc < w as isize {
                    out[(r * w as isize + c) as usize] = plane[(sr * w as isize + sc) as usize];
                }
            }
        }
        (out, h, w)
    })
}

/// Source coordinate of output index `i` under the half-pixel convention.
fn half_pixel(i: usize, src: usize, dst: usize) -> f64 {
    (i as f64 + 0.5) * (src as f64 / dst as f64) - 0.5
}

/// Per-axis taps with edge-replicated indices.
fn axis_weights(src: usize, dst: usize, interp: Interpolation) -> Vec<(Vec<usize>, Vec<f64>)> {
    let last = src as isize - 1;
    (0..dst)
        .map(|i| {
            let s = half_pixel(i, src, dst);
            let (idx, wts, n) = match interp {
                Interpolation::Nearest => {
                    let k = ((i as f64 + 0.5) * (src as f64 / dst as f64)).floor() as isize;
                    ([k, 0, 0, 0], [1.0, 0.0, 0.0, 0.0], 1)
                }
                Interpolation::Bilinear => taps(s.clamp(0.0, last as f64), interp),
                Interpolation::Bicubic => taps(s, interp),
            };
            (
                idx[..n].iter().map(|&k| k.clamp(0, last) as usize).collect(),
                wts[..n].to_vec(),
            )
        })
        .collect()
}

/// Resamples each plane to `height × width` (pixel centers at (i + 0.5) / N,
/// edge replication). Bicubic output is clipped to the input's value range.
pub fn resize(image: &Tensor, height: usize, width: usize, interp: Interpolation) -> Tensor {
    assert!(height > 0 && width > 0, "resize target must be non-empty");
    map_planes(image, |plane, h, w| {
        let ys = axis_weights(h, height, interp);
        let xs = axis_weights(w, width, interp);
        let (lo, hi) = value_range(plane);
        let mut out = Vec::with_capacity(height * width);
        for (yi, yw) in &ys {
            for (xi, xw) in &xs {
                let mut acc = 0.0;
                for (&r, &wr) in yi.iter().zip(yw) {
                    let row = &plane[r * w..(r + 1) * w];
                    let mut racc = 0.0;
                    for (&c, &wc) in xi.iter().zip(xw) {
                        racc += wc * row[c];
                    }
                    acc += wr * racc;
                }
                out.push(if interp == Interpolation::Bicubic {
                    acc.clamp(lo, hi)
                } else {
                    acc
                });
            }
        }
        (out, height, width)
    })
}

/// Crops `[top, top + height) × [left, left + width)` from every plane.
pub fn crop(image: &Tensor, window: &CropWindow) -> Tensor {
    map_planes(image, |plane, h, w| {
        assert!(window.top + window.height <= h && window.left + window.width <= w);
        let mut out = Vec::with_capacity(window.height * window.width);
        for r in window.top..window.top + window.height {
            out.extend_from_slice(&plane[r * w + window.left..r * w + window.left + window.width]);
        }
        (out, window.height, window.width)
    })
}

/// Center-crops or zero-pads every plane to `height × width`.
pub fn fit_center(image: &Tensor, height: usize, width: usize) -> Tensor {
    map_planes(image, |plane, h, w| {
        let mut out = vec![0.0; height * width];
        // offset of the source origin within the destination (may be negative)
        let oy = (height as isize - h as isize) / 2;
        let ox = (width as isize - w as isize) / 2;
        for r in 0..height as isize {
            let sr = r - oy;
            if sr < 0 || sr >= h as isize {
                continue;
            }
            for c in 0..width as isize {
                let sc = c - ox;
                if sc >= 0 && sc < w as isize {
                    out[(r * width as isize + c) as usize] = plane[(sr * w as isize + sc) as usize];
                }
            }
        }
        (out, height, width)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    /// True when no random window fit and the center crop was used.
    pub fallback: bool,
}

pub const CROP_ATTEMPTS: usize = 10;

/// Samples a crop window with area fraction from `scale` and aspect ratio
/// (width / height) from `ratio`. After ten misses, falls back to a center
/// crop at the mean scale.
pub fn sample_crop_window(
    h: usize,
    w: usize,
    scale: [f64; 2],
    ratio: [f64; 2],
    rng: &mut impl Rng,
) -> CropWindow {
    let draw = |rng: &mut dyn rand::RngCore, r: [f64; 2]| {
        if r[0] == r[1] {
            r[0]
        } else {
            rng.random_range(r[0]..=r[1])
        }
    };
    let area = (h * w) as f64;
    for _ in 0..CROP_ATTEMPTS {
        let target = area * draw(rng, scale);
        let aspect = draw(rng, ratio);
        let cw = (target * aspect).sqrt().round() as usize;
        let ch = (target / aspect).sqrt().round() as usize;
        if cw >= 1 && ch >= 1 && cw <= w && ch <= h {
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            return CropWindow {
                top,
                left,
                height: ch,
                width: cw,
                fallback: false,
            };
        }
    }
    let s = ((scale[0] + scale[1]) / 2.0).sqrt();
    let ch = ((h as f64 * s).round() as usize).clamp(1, h);
    let cw = ((w as f64 * s).round() as usize).clamp(1, w);
    CropWindow {
        top: (h - ch) / 2,
        left: (w - cw) / 2,
        height: ch,
        width: cw,
        fallback: true,
    }
}

/// Crops a random window and resizes it back to the original extent.
pub fn random_resized_crop(
    image: &Tensor,
    scale: [f64; 2],
    ratio: [f64; 2],
    interp: Interpolation,
    rng: &mut impl Rng,
) -> Tensor {
    let (h, w) = plane_dims(image);
    let window = sample_crop_window(h, w, scale, ratio, rng);
    resize(&crop(image, &window), h, w, interp)
}
