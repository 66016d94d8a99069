//! Reference implementations shared by the integration tests. Everything
//! here is written the slow, obvious way on purpose.
#![allow(dead_code)]

use lfa_core::latent::{LatentTensor, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian tensor with a random per-channel offset.
pub fn random_tensor(r: &mut ChaCha8Rng, shape: Shape, scale: f64) -> LatentTensor {
    let offsets: Vec<f64> = (0..shape.channels).map(|_| r.random_range(-2.0..2.0)).collect();
    LatentTensor::from_fn(shape, |c, _, _| {
        let n: f64 = StandardNormal.sample(r);
        (offsets[c] + scale * n) as f32
    })
    .unwrap()
}

pub fn random_shape(r: &mut ChaCha8Rng, max_c: usize, max_hw: usize) -> Shape {
    Shape::new(
        r.random_range(1..=max_c),
        r.random_range(1..=max_hw),
        r.random_range(1..=max_hw),
    )
    .unwrap()
}

/// Per-channel mean and population std with plain loops.
pub fn brute_stats(z: &LatentTensor) -> (Vec<f64>, Vec<f64>) {
    let s = z.shape();
    let mut means = Vec::new();
    let mut stds = Vec::new();
    for c in 0..s.channels {
        let mut sum = 0.0;
        for i in 0..s.height {
            for j in 0..s.width {
                sum += z.get(c, i, j) as f64;
            }
        }
        let mean = sum / s.plane() as f64;
        let mut var = 0.0;
        for i in 0..s.height {
            for j in 0..s.width {
                var += (z.get(c, i, j) as f64 - mean).powi(2);
            }
        }
        means.push(mean);
        stds.push((var / s.plane() as f64).sqrt());
    }
    (means, stds)
}

/// Mean over the ρ×ρ window with indices clamped to the image.
pub fn naive_pool(z: &LatentTensor, window: usize) -> Vec<f64> {
    let s = z.shape();
    let half = (window / 2) as isize;
    let mut out = Vec::with_capacity(s.len());
    for c in 0..s.channels {
        for i in 0..s.height as isize {
            for j in 0..s.width as isize {
                let mut acc = 0.0;
                for di in -half..=half {
                    for dj in -half..=half {
                        let ii = (i + di).clamp(0, s.height as isize - 1) as usize;
                        let jj = (j + dj).clamp(0, s.width as isize - 1) as usize;
                        acc += z.get(c, ii, jj) as f64;
                    }
                }
                out.push(acc / (window * window) as f64);
            }
        }
    }
    out
}

/// |X[u,v]|² / (H·W) from the O(N²) DFT definition.
pub fn direct_dft_power(plane: &[f32], h: usize, w: usize, remove_dc: bool) -> Vec<f64> {
    let mean = plane.iter().map(|v| *v as f64).sum::<f64>() / (h * w) as f64;
    let shift = if remove_dc { mean } else { 0.0 };
    let tau = 2.0 * std::f64::consts::PI;
    let mut out = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..h {
                for j in 0..w {
                    let x = plane[i * w + j] as f64 - shift;
                    let phase = -tau * ((u * i) as f64 / h as f64 + (v * j) as f64 / w as f64);
                    re += x * phase.cos();
                    im += x * phase.sin();
                }
            }
            out[u * w + v] = (re * re + im * im) / (h * w) as f64;
        }
    }
    out
}

pub fn rel_l2(a: &[f32], b: &[f32]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum();
    let den: f64 = b.iter().map(|y| (*y as f64).powi(2)).sum();
    (num / den.max(1e-30)).sqrt()
}
