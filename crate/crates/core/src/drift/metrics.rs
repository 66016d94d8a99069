use rand::Rng;

use super::operator::rng_for;
use crate::error::{LfaError, Result};
use crate::latent::LatentTensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentMetrics {
    /// Mean absolute difference.
    pub l1: f64,
    /// Root mean squared difference.
    pub l2: f64,
    /// Global SSIM averaged over channels (computed in latent space).
    pub ssim: f64,
}

pub fn latent_metrics(a: &LatentTensor, b: &LatentTensor) -> Result<LatentMetrics> {
    a.ensure_same_shape(b.shape())?;
    let n = a.data().len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x as f64 - y as f64;
        abs += d.abs();
        sq += d * d;
    }
    let ssim = a
        .channels()
        .zip(b.channels())
        .map(|(pa, pb)| global_ssim(pa, pb))
        .sum::<f64>()
        / a.shape().channels as f64;
    Ok(LatentMetrics {
        l1: abs / n,
        l2: (sq / n).sqrt(),
        ssim,
    })
}

/// Single-window SSIM over two whole maps. The dynamic range L is the joint
/// max minus the joint min of the pair; stabilizers are (0.01 L)² and
/// (0.03 L)².
pub fn global_ssim(a: &[f32], b: &[f32]) -> f64 {
    let (lo, hi) = a
        .iter()
        .chain(b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v as f64), hi.max(v as f64))
        });
    let range = hi - lo;
    if range == 0.0 {
        // both maps hold the same constant
        return 1.0;
    }
    let n = a.len() as f64;
    let mean = |s: &[f32]| s.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (ma, mb) = (mean(a), mean(b));
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        va += dx * dx;
        vb += dy * dy;
        cov += dx * dy;
    }
    let (va, vb, cov) = (va / n, vb / n, cov / n);
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// Mean paired difference `baseline - treated` with a percentile bootstrap
/// interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairedSummary {
    pub n: usize,
    pub mean_baseline: f64,
    pub mean_treated: f64,
    pub mean_diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence: f64,
}

impl PairedSummary {
    /// Mean difference as a fraction of the baseline mean.
    pub fn relative_reduction(&self) -> f64 {
        if self.mean_baseline == 0.0 {
            0.0
        } else {
            self.mean_diff / self.mean_baseline
        }
    }
}

pub fn paired_bootstrap(
    baseline: &[f64],
    treated: &[f64],
    resamples: usize,
    confidence: f64,
    seed: u64,
) -> Result<PairedSummary> {
    if baseline.len() != treated.len() || baseline.is_empty() {
        return Err(LfaError::InvalidArgument(format!(
            "paired bootstrap needs equal non-empty samples, got {} and {}",
            baseline.len(),
            treated.len()
        )));
    }
    if resamples == 0 || !(confidence > 0.0 && confidence < 1.0) {
        return Err(LfaError::InvalidArgument(
            "bootstrap needs resamples > 0 and confidence in (0, 1)".into(),
        ));
    }
    let n = baseline.len();
    let diffs: Vec<f64> = baseline.iter().zip(treated).map(|(b, t)| b - t).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;

    let mut rng = rng_for(seed, 0, 0xB007);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| diffs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - confidence) / 2.0;
    let lo = ((tail * resamples as f64).floor() as usize).min(resamples - 1);
    let hi = (((1.0 - tail) * resamples as f64).ceil() as usize)
        .saturating_sub(1)
        .min(resamples - 1);

    Ok(PairedSummary {
        n,
        mean_baseline: mean(baseline),
        mean_treated: mean(treated),
        mean_diff: mean(&diffs),
        ci_low: means[lo],
        ci_high: means[hi],
        confidence,
    })
}
