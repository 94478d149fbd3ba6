//! Switching bilateral filter: pixels far from the median of their
//! neighbourhood are treated as impulses and replaced by a bilateral average
//! whose range kernel is centred on that median. All other pixels pass
//! through untouched.

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbfParams {
    /// Odd window side, at least 3.
    pub window: usize,
    pub sigma_s: f64,
    pub sigma_r: f64,
    pub threshold: f64,
}

impl Default for SbfParams {
    fn default() -> Self {
        Self {
            window: 5,
            sigma_s: 1.5,
            sigma_r: 0.15,
            threshold: 0.25,
        }
    }
}

impl SbfParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(format!("window must be odd and >= 3, got {}", self.window));
        }
        if !(self.sigma_s > 0.0) || !(self.sigma_r > 0.0) {
            return Err("sigma_s and sigma_r must be > 0".into());
        }
        if !(self.threshold >= 0.0) {
            return Err("threshold must be >= 0".into());
        }
        Ok(())
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// In-bounds neighbours of `(r, c)` within the window, excluding the centre,
/// as `(row offset, col offset, value)`.
fn neighbours(
    plane: &[f64],
    h: usize,
    w: usize,
    r: usize,
    c: usize,
    half: isize,
    out: &mut Vec<(isize, isize, f64)>,
) {
    out.clear();
    for dr in -half..=half {
        let rr = r as isize + dr;
        if rr < 0 || rr >= h as isize {
            continue;
        }
        for dc in -half..=half {
            let cc = c as isize + dc;
            if (dr == 0 && dc == 0) || cc < 0 || cc >= w as isize {
                continue;
            }
            out.push((dr, dc, plane[rr as usize * w + cc as usize]));
        }
    }
}

/// Reference median of each pixel's neighbourhood, centre excluded.
pub fn reference_medians(image: &Tensor, window: usize) -> Tensor {
    let (h, w) = plane_dims(image);
    let half = (window / 2) as isize;
    let mut nb = Vec::new();
    let mut vals = Vec::new();
    let mut out = Vec::with_capacity(image.len());
    for plane in image.data().chunks(h * w) {
        for r in 0..h {
            for c in 0..w {
                neighbours(plane, h, w, r, c, half, &mut nb);
                vals.clear();
                vals.extend(nb.iter().map(|t| t.2));
                out.push(median(&mut vals));
            }
        }
    }
    Tensor::new(image.shape().to_vec(), out).expect("shape unchanged")
}

fn plane_dims(image: &Tensor) -> (usize, usize) {
    let s = image.shape();
    assert!(s.len() >= 2, "image must have at least two dimensions, got {s:?}");
    (s[s.len() - 2], s[s.len() - 1])
}

/// Filters every plane. Panics on invalid parameters; see [`SbfParams::validate`].
pub fn switching_bilateral_filter(image: &Tensor, params: &SbfParams) -> Tensor {
    if let Err(e) = params.validate() {
        panic!("invalid switching bilateral filter parameters: {e}");
    }
    let (h, w) = plane_dims(image);
    let half = (params.window / 2) as isize;
    let two_ss = 2.0 * params.sigma_s * params.sigma_s;
    let two_sr = 2.0 * params.sigma_r * params.sigma_r;
    let mut nb = Vec::new();
    let mut vals = Vec::new();
    let mut out = image.data().to_vec();
    for (p, plane) in image.data().chunks(h * w).enumerate() {
        for r in 0..h {
            for c in 0..w {
                let x = plane[r * w + c];
                neighbours(plane, h, w, r, c, half, &mut nb);
                vals.clear();
                vals.extend(nb.iter().map(|t| t.2));
                let m = median(&mut vals);
                if (x - m).abs() <= params.threshold {
                    continue;
                }
                let (mut num, mut den) = (0.0, 0.0);
                for &(dr, dc, v) in &nb {
                    let d2 = (dr * dr + dc * dc) as f64;
                    let wt = (-d2 / two_ss - (v - m) * (v - m) / two_sr).exp();
                    num += wt * v;
                    den += wt;
                }
                // den > 0 unless every weight underflows; fall back to the median
                out[p * h * w + r * w + c] = if den > 0.0 { num / den } else { m };
            }
        }
    }
    Tensor::new(image.shape().to_vec(), out).expect("shape unchanged")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn constant_image_unchanged() {
        let x = Tensor::full(&[1, 8, 8], 0.4);
        assert_eq!(switching_bilateral_filter(&x, &SbfParams::default()), x);
    }

    #[test]
    fn impulse_is_replaced_others_untouched() {
        let mut x = Tensor::full(&[1, 9, 9], 0.2);
        x.data_mut()[4 * 9 + 4] = 1.0;
        let p = SbfParams {
            threshold: 0.3,
            ..SbfParams::default()
        };
        let y = switching_bilateral_filter(&x, &p);
        assert!((y.data()[40] - 0.2).abs() < 0.05);
        for i in (0..81).filter(|&i| i != 40) {
            assert_eq!(y.data()[i].to_bits(), x.data()[i].to_bits());
        }
    }

    #[test]
    fn clean_step_edge_unchanged() {
        let x = Tensor::from_fn(&[1, 10, 12], |i| if i % 12 < 6 { 0.2 } else { 0.8 });
        let p = SbfParams {
            threshold: 0.3,
            ..SbfParams::default()
        };
        assert_eq!(switching_bilateral_filter(&x, &p), x);
    }

    #[test]
    fn validation() {
        for window in [1, 2, 4] {
            let p = SbfParams {
                window,
                ..SbfParams::default()
            };
            assert!(p.validate().is_err());
        }
        assert!(SbfParams::default().validate().is_ok());
    }
}
