//! Per-channel 2-D Fourier analysis: power grids, radial spectra and the
//! relative spectrum difference used for drift attribution.
//!
//! Transforms use the unitary normalization (`1/sqrt(H·W)`), so the summed
//! power of a channel equals its summed squared values.

use std::io::Write;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{LfaError, Result};
use crate::latent::{channel_mean_std, Element, Tensor};

pub const DEFAULT_BINS: usize = 50;
pub const DEFAULT_R_SPLIT: f64 = 0.2;
pub const DEFAULT_POWER_FLOOR: f64 = 1e-12;

/// Power grids for every channel, each H×W in row-major order with the
/// zero frequency at index (0, 0).
#[derive(Clone, Debug, PartialEq)]
pub struct PowerGrid {
    pub height: usize,
    pub width: usize,
    pub channels: Vec<Vec<f64>>,
}

impl PowerGrid {
    /// Channel-averaged grid.
    pub fn mean_over_channels(&self) -> Vec<f64> {
        let n = self.channels.len() as f64;
        let mut acc = vec![0.0; self.height * self.width];
        for grid in &self.channels {
            for (a, p) in acc.iter_mut().zip(grid) {
                *a += p;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

struct Fft2d {
    rows: Arc<dyn Fft<f64>>,
    cols: Arc<dyn Fft<f64>>,
}

impl Fft2d {
    fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2d {
            rows: planner.plan_fft_forward(width),
            cols: planner.plan_fft_forward(height),
        }
    }

    fn power(&self, plane: &[f64], height: usize, width: usize) -> Vec<f64> {
        let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.rows.process(&mut buf);
        let mut col = vec![Complex64::new(0.0, 0.0); height];
        for j in 0..width {
            for i in 0..height {
                col[i] = buf[i * width + j];
            }
            self.cols.process(&mut col);
            for i in 0..height {
                buf[i * width + j] = col[i];
            }
        }
        let norm = (height * width) as f64;
        buf.iter().map(|c| c.norm_sqr() / norm).collect()
    }
}

/// Squared magnitudes of the unitary 2-D DFT of each channel, optionally
/// after subtracting the channel mean.
pub fn power_spectrum_2d<T: Element>(z: &Tensor<T>, remove_dc: bool) -> PowerGrid {
    let shape = z.shape();
    let fft = Fft2d::new(shape.height, shape.width);
    let stats = channel_mean_std(z);
    let channels = z
        .channels()
        .enumerate()
        .map(|(c, plane)| {
            let offset = if remove_dc { stats.means[c] } else { 0.0 };
            let centered: Vec<f64> = plane.iter().map(|v| v.to_f64() - offset).collect();
            fft.power(&centered, shape.height, shape.width)
        })
        .collect();
    PowerGrid {
        height: shape.height,
        width: shape.width,
        channels,
    }
}

/// Signed frequency index of DFT bin `i` on an axis of length `n`, in
/// `[-n/2, n/2)`.
fn signed_frequency(i: usize, n: usize) -> f64 {
    if i < n - n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Normalized radius of every cell of an H×W frequency grid. The grid
/// corner `(-H/2, -W/2)` maps to 1.
pub fn radius_grid(height: usize, width: usize) -> Vec<f64> {
    let (hh, hw) = (height as f64 / 2.0, width as f64 / 2.0);
    let mut out = Vec::with_capacity(height * width);
    for i in 0..height {
        let u = signed_frequency(i, height) / hh;
        for j in 0..width {
            let v = signed_frequency(j, width) / hw;
            out.push((u * u + v * v).sqrt() / std::f64::consts::SQRT_2);
        }
    }
    out
}

fn bin_index(r: f64, bins: usize) -> usize {
    ((r * bins as f64).floor() as usize).min(bins - 1)
}

/// Mean spectral power in equal-width bins of normalized radius.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialSpectrum {
    pub bin_edges: Vec<f64>,
    pub power: Vec<f64>,
    pub counts: Vec<usize>,
}

impl RadialSpectrum {
    pub fn bins(&self) -> usize {
        self.power.len()
    }

    pub fn bin_mid(&self, b: usize) -> f64 {
        0.5 * (self.bin_edges[b] + self.bin_edges[b + 1])
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["r_mid", "power", "count"]).map_err(csv_err)?;
        for b in 0..self.bins() {
            wr.write_record([
                self.bin_mid(b).to_string(),
                self.power[b].to_string(),
                self.counts[b].to_string(),
            ])
            .map_err(csv_err)?;
        }
        wr.flush().map_err(|e| LfaError::io("writing spectrum csv", e))
    }
}

pub(crate) fn csv_err(e: csv::Error) -> LfaError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => LfaError::io("writing csv", io),
        other => LfaError::Format(format!("csv: {other:?}")),
    }
}

fn bin_edges(bins: usize) -> Vec<f64> {
    (0..=bins).map(|b| b as f64 / bins as f64).collect()
}

/// Radial spectrum of the channel-averaged power grid.
pub fn radial_spectrum<T: Element>(
    z: &Tensor<T>,
    bins: usize,
    remove_dc: bool,
) -> Result<RadialSpectrum> {
    if bins < 2 {
        return Err(LfaError::InvalidArgument(format!(
            "radial spectrum needs at least 2 bins, got {bins}"
        )));
    }
    let grid = power_spectrum_2d(z, remove_dc);
    let mean = grid.mean_over_channels();
    let radii = radius_grid(grid.height, grid.width);

    let mut power = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for (p, r) in mean.iter().zip(&radii) {
        let b = bin_index(*r, bins);
        power[b] += p;
        counts[b] += 1;
    }
    for (p, &n) in power.iter_mut().zip(&counts) {
        if n > 0 {
            *p /= n as f64;
        }
    }
    Ok(RadialSpectrum {
        bin_edges: bin_edges(bins),
        power,
        counts,
    })
}

/// Relative difference `100 · (a - b) / b` per bin; `None` where the
/// reference power `b` is below the floor.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumDiff {
    pub bin_edges: Vec<f64>,
    pub delta_percent: Vec<Option<f64>>,
}

impl SpectrumDiff {
    pub fn bin_mid(&self, b: usize) -> f64 {
        0.5 * (self.bin_edges[b] + self.bin_edges[b + 1])
    }

    /// Defined deltas of bins lying entirely inside `[lo, hi]`.
    pub fn defined_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        self.delta_percent
            .iter()
            .enumerate()
            .filter(|(b, _)| self.bin_edges[*b] >= lo - 1e-12 && self.bin_edges[b + 1] <= hi + 1e-12)
            .filter_map(|(_, d)| *d)
            .collect()
    }

    /// Empty field for undefined bins.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["r_mid", "delta_percent"]).map_err(csv_err)?;
        for (b, d) in self.delta_percent.iter().enumerate() {
            let d = d.map(|v| v.to_string()).unwrap_or_default();
            wr.write_record([self.bin_mid(b).to_string(), d])
                .map_err(csv_err)?;
        }
        wr.flush().map_err(|e| LfaError::io("writing spectrum csv", e))
    }
}

pub fn relative_spectrum_diff(
    a: &RadialSpectrum,
    b: &RadialSpectrum,
    floor: f64,
) -> Result<SpectrumDiff> {
    if a.bin_edges != b.bin_edges {
        return Err(LfaError::InvalidArgument(
            "spectra use different radial binning".into(),
        ));
    }
    let delta_percent = a
        .power
        .iter()
        .zip(&b.power)
        .map(|(&pa, &pb)| (pb >= floor && pb > 0.0).then(|| 100.0 * (pa - pb) / pb))
        .collect();
    Ok(SpectrumDiff {
        bin_edges: a.bin_edges.clone(),
        delta_percent,
    })
}

/// DC-removed spectral energy below and at-or-above `r_split`, summed over
/// frequency cells and averaged over channels.
pub fn band_energy<T: Element>(z: &Tensor<T>, r_split: f64) -> Result<(f64, f64)> {
    if !(r_split > 0.0 && r_split < 1.0) {
        return Err(LfaError::InvalidArgument(format!(
            "r_split must lie in (0, 1), got {r_split}"
        )));
    }
    let grid = power_spectrum_2d(z, true);
    let radii = radius_grid(grid.height, grid.width);
    let (mut low, mut high) = (0.0, 0.0);
    for (p, r) in grid.mean_over_channels().iter().zip(&radii) {
        if *r < r_split {
            low += p;
        } else {
            high += p;
        }
    }
    Ok((low, high))
}

/// Per-channel relative gap between `H·W·σ²` and the DC-removed spectral
/// energy; zero when both sides vanish.
pub fn parseval_check<T: Element>(z: &Tensor<T>) -> Vec<f64> {
    const TINY: f64 = 1e-300;
    let n = z.shape().plane() as f64;
    let stats = channel_mean_std(z);
    let grid = power_spectrum_2d(z, true);
    grid.channels
        .iter()
        .zip(&stats.stds)
        .map(|(power, sigma)| {
            let lhs = n * sigma * sigma;
            let rhs: f64 = power.iter().sum();
            let diff = (lhs - rhs).abs();
            if diff == 0.0 {
                0.0
            } else {
                diff / lhs.max(TINY)
            }
        })
        .collect()
}
