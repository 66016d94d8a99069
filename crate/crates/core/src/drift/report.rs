use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use super::metrics::latent_metrics;
use crate::error::{LfaError, Result};
use crate::latent::{channel_mean_std, low_pass, ChannelStats, LatentTensor, PoolingFilterSpec};
use crate::spectral::{band_energy, csv_err, radial_spectrum, RadialSpectrum};

/// Drift of one turn measured against the round-0 latent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftRecord {
    pub turn: u64,
    pub l1: f64,
    pub l2: f64,
    /// Latent-space SSIM.
    pub ssim: f64,
    pub low_band_energy: f64,
    pub high_band_energy: f64,
    /// Mean over channels of |μ_k − μ_0| of the low band.
    pub mu_disp: f64,
    /// Mean over channels of |σ_k − σ_0| of the low band.
    pub sigma_disp: f64,
}

pub const REPORT_COLUMNS: [&str; 8] = [
    "turn",
    "l1",
    "l2",
    "ssim",
    "low_band_energy",
    "high_band_energy",
    "mu_disp",
    "sigma_disp",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DriftReport {
    /// Echoed into the CSV as `# key=value` lines.
    pub header: Vec<(String, String)>,
    pub records: Vec<DriftRecord>,
    /// Radial spectrum of `z_k − z_0` for the requested turns.
    pub spectra: Vec<(u64, RadialSpectrum)>,
}

impl DriftReport {
    pub fn last(&self) -> Option<&DriftRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut head = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(head, "# {k}={v}");
        }
        w.write_all(head.as_bytes())
            .map_err(|e| LfaError::io("writing report", e))?;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(REPORT_COLUMNS).map_err(csv_err)?;
        for r in &self.records {
            wr.write_record([
                r.turn.to_string(),
                r.l1.to_string(),
                r.l2.to_string(),
                r.ssim.to_string(),
                r.low_band_energy.to_string(),
                r.high_band_energy.to_string(),
                r.mu_disp.to_string(),
                r.sigma_disp.to_string(),
            ])
            .map_err(csv_err)?;
        }
        wr.flush().map_err(|e| LfaError::io("writing report", e))
    }

    /// Writes `<stem>.csv` plus `<stem>_spectrum_turn<k>.csv` per stored
    /// spectrum and returns the written paths.
    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<Vec<std::path::PathBuf>> {
        let mut paths = Vec::new();
        let path = dir.join(format!("{stem}.csv"));
        let file = std::fs::File::create(&path).map_err(|e| LfaError::io_at(&path, e))?;
        self.write_csv(std::io::BufWriter::new(file))?;
        paths.push(path);
        for (turn, spec) in &self.spectra {
            let path = dir.join(format!("{stem}_spectrum_turn{turn}.csv"));
            let file = std::fs::File::create(&path).map_err(|e| LfaError::io_at(&path, e))?;
            spec.write_csv(std::io::BufWriter::new(file))?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// Measurement settings shared by every record of a report.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeterConfig {
    pub pool: PoolingFilterSpec,
    pub r_split: f64,
    pub bins: usize,
}

impl Default for MeterConfig {
    fn default() -> Self {
        MeterConfig {
            pool: PoolingFilterSpec::default(),
            r_split: crate::spectral::DEFAULT_R_SPLIT,
            bins: crate::spectral::DEFAULT_BINS,
        }
    }
}

/// Measures drift of later latents against a fixed round-0 latent.
#[derive(Clone, Debug)]
pub struct DriftMeter {
    z0: LatentTensor,
    low0: ChannelStats,
    cfg: MeterConfig,
}

impl DriftMeter {
    pub fn new(z0: &LatentTensor, cfg: MeterConfig) -> Self {
        DriftMeter {
            low0: channel_mean_std(&low_pass(z0, cfg.pool)),
            z0: z0.clone(),
            cfg,
        }
    }

    pub fn z0(&self) -> &LatentTensor {
        &self.z0
    }

    pub fn config(&self) -> MeterConfig {
        self.cfg
    }

    pub fn record(&self, turn: u64, z: &LatentTensor) -> Result<DriftRecord> {
        let m = latent_metrics(z, &self.z0)?;
        let diff = z.zip_with::<f32, f64>(&self.z0, |a, b| a - b)?;
        let (low_e, high_e) = band_energy(&diff, self.cfg.r_split)?;
        let low = channel_mean_std(&low_pass(z, self.cfg.pool));
        let c = low.channels() as f64;
        let mu_disp = low
            .means
            .iter()
            .zip(&self.low0.means)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / c;
        let sigma_disp = low
            .stds
            .iter()
            .zip(&self.low0.stds)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / c;
        Ok(DriftRecord {
            turn,
            l1: m.l1,
            l2: m.l2,
            ssim: m.ssim,
            low_band_energy: low_e,
            high_band_energy: high_e,
            mu_disp,
            sigma_disp,
        })
    }

    /// DC-removed radial spectrum of `z − z0`.
    pub fn spectrum(&self, z: &LatentTensor) -> Result<RadialSpectrum> {
        let diff = z.zip_with::<f32, f64>(&self.z0, |a, b| a - b)?;
        radial_spectrum(&diff, self.cfg.bins, true)
    }
}
