//! Total-variation denoising by explicit gradient descent on
//! `E(u) = ½‖u − x‖² + weight · Σ √(Δh u² + Δv u² + ε²)`.
//!
//! Differences are forward differences with a zero difference past the last
//! row and column.

use crate::tensor::Tensor;

pub const TV_EPSILON: f64 = 1e-3;

/// Halvings tried before a step is abandoned as already converged.
const MAX_BACKTRACKS: usize = 30;

fn plane_dims(image: &Tensor) -> (usize, usize) {
    let s = image.shape();
    assert!(s.len() >= 2, "image must have at least two dimensions, got {s:?}");
    (s[s.len() - 2], s[s.len() - 1])
}

fn grad_at(u: &[f64], w: usize, h: usize, r: usize, c: usize) -> (f64, f64) {
    let i = r * w + c;
    let dx = if c + 1 < w { u[i + 1] - u[i] } else { 0.0 };
    let dy = if r + 1 < h { u[i + w] - u[i] } else { 0.0 };
    (dx, dy)
}

fn tv_sum(u: &[f64], h: usize, w: usize, eps: f64) -> f64 {
    let mut total = 0.0;
    for r in 0..h {
        for c in 0..w {
            let (dx, dy) = grad_at(u, w, h, r, c);
            total += (dx * dx + dy * dy + eps * eps).sqrt();
        }
    }
    total
}

/// Isotropic total variation (ε = 0), summed over every plane.
pub fn total_variation(image: &Tensor) -> f64 {
    let (h, w) = plane_dims(image);
    image.data().chunks(h * w).map(|p| tv_sum(p, h, w, 0.0)).sum()
}

/// Smoothed TV of every plane.
pub fn smoothed_total_variation(image: &Tensor) -> f64 {
    let (h, w) = plane_dims(image);
    image.data().chunks(h * w).map(|p| tv_sum(p, h, w, TV_EPSILON)).sum()
}

fn energy(u: &[f64], x: &[f64], h: usize, w: usize, weight: f64) -> f64 {
    let fidelity: f64 = u.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 2.0;
    fidelity + weight * tv_sum(u, h, w, TV_EPSILON)
}

/// Denoising energy of `u` relative to the noisy image `x`.
pub fn tv_energy(u: &Tensor, x: &Tensor, weight: f64) -> f64 {
    assert_eq!(u.shape(), x.shape());
    let (h, w) = plane_dims(u);
    u.data()
        .chunks(h * w)
        .zip(x.data().chunks(h * w))
        .map(|(a, b)| energy(a, b, h, w, weight))
        .sum()
}

fn energy_gradient(u: &[f64], x: &[f64], h: usize, w: usize, weight: f64) -> Vec<f64> {
    let mut g: Vec<f64> = u.iter().zip(x).map(|(a, b)| a - b).collect();
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let (dx, dy) = grad_at(u, w, h, r, c);
            let norm = (dx * dx + dy * dy + TV_EPSILON * TV_EPSILON).sqrt();
            let (px, py) = (weight * dx / norm, weight * dy / norm);
            if c + 1 < w {
                g[i] -= px;
                g[i + 1] += px;
            }
            if r + 1 < h {
                g[i] -= py;
                g[i + w] += py;
            }
        }
    }
    g
}

/// Nominal step size `0.2 / (1 + 4·weight)`.
pub fn tv_step_size(weight: f64) -> f64 {
    0.2 / (1.0 + 4.0 * weight)
}

fn denoise_plane(x: &[f64], h: usize, w: usize, weight: f64, steps: usize, energies: &mut Vec<f64>) -> Vec<f64> {
    let tau = tv_step_size(weight);
    let mut u = x.to_vec();
    let mut e = energy(&u, x, h, w, weight);
    energies.push(e);
    let mut candidate = vec![0.0; u.len()];
    for _ in 0..steps {
        let g = energy_gradient(&u, x, h, w, weight);
        let mut step = tau;
        // if no tried step descends, u is stationary to working precision
        for _ in 0..=MAX_BACKTRACKS {
            for ((cand, &ui), &gi) in candidate.iter_mut().zip(&u).zip(&g) {
                *cand = ui - step * gi;
            }
            let ec = energy(&candidate, x, h, w, weight);
            if ec <= e {
                std::mem::swap(&mut u, &mut candidate);
                e = ec;
                break;
            }
            step /= 2.0;
        }
        energies.push(e);
    }
    u
}

/// Denoises each plane with `steps` descent steps and clips to [0, 1].
///
/// Each step starts at the nominal step size and halves it while the energy
/// would increase, so `E` never rises between steps.
pub fn tv_denoise(image: &Tensor, weight: f64, steps: usize) -> Tensor {
    tv_denoise_traced(image, weight, steps).0
}

/// As [`tv_denoise`], also returning the energy before the first step and
/// after each step (summed over planes, before clipping).
pub fn tv_denoise_traced(image: &Tensor, weight: f64, steps: usize) -> (Tensor, Vec<f64>) {
    assert!(weight > 0.0 && weight.is_finite(), "tv weight must be > 0");
    assert!(steps >= 1, "tv steps must be >= 1");
    let (h, w) = plane_dims(image);
    let mut out = Vec::with_capacity(image.len());
    let mut energies = vec![0.0; steps + 1];
    for plane in image.data().chunks(h * w) {
        let mut e = Vec::with_capacity(steps + 1);
        out.extend(denoise_plane(plane, h, w, weight, steps, &mut e));
        for (acc, v) in energies.iter_mut().zip(e) {
            *acc += v;
        }
    }
    let t = Tensor::new(image.shape().to_vec(), out)
        .expect("shape unchanged")
        .map(|v| v.clamp(0.0, 1.0));
    (t, energies)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_grad;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[1, h, w], |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let x = Tensor::full(&[1, 6, 7], 0.37);
        assert_eq!(tv_denoise(&x, 0.5, 20), x);
    }

    #[test]
    fn impulse_peak_is_reduced() {
        let mut x = Tensor::zeros(&[1, 9, 9]);
        x.data_mut()[40] = 1.0;
        let y = tv_denoise(&x, 0.1, 50);
        assert!(y.data()[40] < 1.0);
        assert!(y.data()[40] > 0.0);
    }

    #[test]
    fn energy_gradient_matches_finite_differences() {
        let x = noise(5, 6, 1);
        let u = noise(5, 6, 2);
        let (h, w) = (5, 6);
        let g = Tensor::new(vec![1, h, w], energy_gradient(u.data(), x.data(), h, w, 0.3)).unwrap();
        let fd = finite_diff_grad(|v| tv_energy(v, &x, 0.3), &u, 1e-6);
        for (a, b) in g.data().iter().zip(fd.data()) {
            assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn energy_never_increases_and_tv_drops() {
        for seed in 0..10 {
            let x = noise(12, 10, seed);
            let (y, e) = tv_denoise_traced(&x, 0.1, 50);
            assert_eq!(e.len(), 51);
            assert!(e.windows(2).all(|p| p[1] <= p[0]));
            assert!(total_variation(&y) <= total_variation(&x));
        }
    }

    #[test]
    fn tv_of_ramp() {
        let x = Tensor::from_fn(&[1, 2, 3], |i| (i % 3) as f64);
        // two rows of horizontal differences 1, 1 then 0 at the edge
        assert_eq!(total_variation(&x), 4.0);
    }
}
