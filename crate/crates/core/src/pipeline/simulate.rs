//! Config-driven drift experiments: no-op, cycle and attribution runs over
//! a range of seeds, optionally paired with and without alignment.
//!
//! Config keys (all optional):
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `experiment` | `no_op` | `no_op`, `cycle` or `attribution` |
//! | `seeds` / `seed_base` | `20` / `0` | runs use seeds `seed_base .. seed_base + seeds` |
//! | `turns` | `10` | turns per no-op run and for attribution |
//! | `pairs` | `5` | forward/backward pairs per cycle run |
//! | `shape` | `4x32x32` | synthetic z0 shape |
//! | `z0` | none | NPY file used as z0 for every seed instead |
//! | `paired` | `true` | run each seed with and without alignment |
//! | `lfa` | `true` | unpaired runs: align or not |
//! | `op` | `synthetic_dit` | `identity`, `synthetic_dit`, `synthetic_vae`, `composed` |
//! | `dit.*` | | `low_bias_scale`, `low_gain`, `high_noise_scale`, `bias_seed` (defaults to the run seed), `window` |
//! | `vae.*` | | `flat_noise_scale`, `low_regularize`, `reference` (`input` or `z0`), `window` |
//! | `lfa.*` | | `window`, `alpha_mu`, `alpha_sigma`, `epsilon`, `anchor_mode`, `scope`, `allow_zero_sigma` |
//! | `bins`, `r_split`, `floor` | `50`, `0.2`, `1e-12` | spectral settings |
//! | `spectrum_turns` | empty | comma list of turns (pairs for cycles) with spectrum CSVs |
//! | `bootstrap.resamples` / `.confidence` / `.seed` | `2000` / `0.95` / `0` | paired summary |
//! | `cycle.backward_scale` | `0.9` | bias scale of the backward op relative to the forward op |
//!
//! Attribution runs compare the `dit.*` model against the `vae.*` model and
//! ignore `op`, `paired` and `lfa`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{
    alignment_from_kv, alignment_to_kv, format_shape, parse_shape, KeyValues,
};
use crate::alignment::AlignmentConfig;
use crate::drift::{
    paired_bootstrap, run_attribution, run_cycle_trajectory, run_no_op_trajectory,
    synthetic_latent, DriftRecord, DriftReport, MeterConfig, PairedSummary, SyntheticDitParams,
    SyntheticVaeParams, TrajectoryOptions, TransitionOperator,
};
use crate::error::{LfaError, Result};
use crate::latent::{load_latent, LatentTensor, PoolingFilterSpec, Shape};
use crate::spectral::{csv_err, SpectrumDiff, DEFAULT_BINS, DEFAULT_POWER_FLOOR, DEFAULT_R_SPLIT};

const KNOWN_KEYS: &[&str] = &[
    "experiment",
    "seeds",
    "seed_base",
    "turns",
    "pairs",
    "shape",
    "z0",
    "paired",
    "lfa",
    "op",
    "dit.low_bias_scale",
    "dit.low_gain",
    "dit.high_noise_scale",
    "dit.bias_seed",
    "dit.window",
    "vae.flat_noise_scale",
    "vae.low_regularize",
    "vae.reference",
    "vae.window",
    "lfa.window",
    "lfa.alpha_mu",
    "lfa.alpha_sigma",
    "lfa.epsilon",
    "lfa.anchor_mode",
    "lfa.scope",
    "lfa.allow_zero_sigma",
    "bins",
    "r_split",
    "floor",
    "spectrum_turns",
    "bootstrap.resamples",
    "bootstrap.confidence",
    "bootstrap.seed",
    "cycle.backward_scale",
];

/// Low band below this normalized radius, high band above the other.
pub const ATTRIBUTION_LOW_MAX: f64 = 0.2;
pub const ATTRIBUTION_HIGH_MIN: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    NoOp,
    Cycle,
    Attribution,
}

impl Experiment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::NoOp => "no_op",
            Experiment::Cycle => "cycle",
            Experiment::Attribution => "attribution",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Identity,
    SyntheticDit,
    SyntheticVae,
    Composed,
}

impl OpKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OpKind::Identity => "identity",
            OpKind::SyntheticDit => "synthetic_dit",
            OpKind::SyntheticVae => "synthetic_vae",
            OpKind::Composed => "composed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VaeReference {
    /// Pull toward the incoming latent's own low-band statistics.
    Input,
    /// Pull toward the low band of z0.
    Z0,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub experiment: Experiment,
    pub seeds: u64,
    pub seed_base: u64,
    pub turns: u64,
    pub pairs: u64,
    pub shape: Shape,
    pub z0: Option<PathBuf>,
    pub paired: bool,
    pub lfa: bool,
    pub op: OpKind,
    /// `bias_seed` is replaced by the run seed unless `dit_bias_seed` is set.
    pub dit: SyntheticDitParams,
    pub dit_bias_seed: Option<u64>,
    pub vae: SyntheticVaeParams,
    pub vae_reference: VaeReference,
    pub align: AlignmentConfig,
    pub bins: usize,
    pub r_split: f64,
    pub floor: f64,
    pub spectrum_turns: Vec<u64>,
    pub bootstrap_resamples: usize,
    pub bootstrap_confidence: f64,
    pub bootstrap_seed: u64,
    pub backward_scale: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            experiment: Experiment::NoOp,
            seeds: 20,
            seed_base: 0,
            turns: 10,
            pairs: 5,
            shape: Shape::new(4, 32, 32).expect("valid default shape"),
            z0: None,
            paired: true,
            lfa: true,
            op: OpKind::SyntheticDit,
            dit: SyntheticDitParams::default(),
            dit_bias_seed: None,
            vae: SyntheticVaeParams::default(),
            vae_reference: VaeReference::Input,
            align: AlignmentConfig::default(),
            bins: DEFAULT_BINS,
            r_split: DEFAULT_R_SPLIT,
            floor: DEFAULT_POWER_FLOOR,
            spectrum_turns: Vec::new(),
            bootstrap_resamples: 2000,
            bootstrap_confidence: 0.95,
            bootstrap_seed: 0,
            backward_scale: 0.9,
        }
    }
}

fn config_err(msg: impl Into<String>) -> LfaError {
    LfaError::Config(msg.into())
}

fn window(kv: &KeyValues, key: &str) -> Result<PoolingFilterSpec> {
    let w = kv.parsed_or(key, PoolingFilterSpec::DEFAULT_WINDOW)?;
    PoolingFilterSpec::new(w).map_err(|e| config_err(format!("{key}: {e}")))
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.reject_unknown(KNOWN_KEYS)?;
        let d = SimConfig::default();

        let experiment = match kv.get("experiment").unwrap_or("no_op") {
            "no_op" => Experiment::NoOp,
            "cycle" => Experiment::Cycle,
            "attribution" => Experiment::Attribution,
            other => return Err(config_err(format!("unknown experiment '{other}'"))),
        };
        let op = match kv.get("op").unwrap_or("synthetic_dit") {
            "identity" => OpKind::Identity,
            "synthetic_dit" => OpKind::SyntheticDit,
            "synthetic_vae" => OpKind::SyntheticVae,
            "composed" => OpKind::Composed,
            other => return Err(config_err(format!("unknown op '{other}'"))),
        };
        let vae_reference = match kv.get("vae.reference").unwrap_or("input") {
            "input" => VaeReference::Input,
            "z0" => VaeReference::Z0,
            other => return Err(config_err(format!("vae.reference must be input or z0, got '{other}'"))),
        };
        let dd = SyntheticDitParams::default();
        let dit = SyntheticDitParams {
            low_bias_scale: kv.parsed_or("dit.low_bias_scale", dd.low_bias_scale)?,
            low_gain: kv.parsed_or("dit.low_gain", dd.low_gain)?,
            high_noise_scale: kv.parsed_or("dit.high_noise_scale", dd.high_noise_scale)?,
            bias_seed: 0,
            pool: window(&kv, "dit.window")?,
            inverse: false,
        };
        let vd = SyntheticVaeParams::default();
        let vae = SyntheticVaeParams {
            flat_noise_scale: kv.parsed_or("vae.flat_noise_scale", vd.flat_noise_scale)?,
            low_regularize: kv.parsed_or("vae.low_regularize", vd.low_regularize)?,
            reference: None,
            pool: window(&kv, "vae.window")?,
        };
        let spectrum_turns = match kv.get("spectrum_turns") {
            None | Some("") => Vec::new(),
            Some(list) => list
                .split(',')
                .map(|t| t.trim().parse::<u64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| config_err(format!("spectrum_turns must be a comma list of turns, got {list:?}")))?,
        };

        let cfg = SimConfig {
            experiment,
            seeds: kv.parsed_or("seeds", d.seeds)?,
            seed_base: kv.parsed_or("seed_base", d.seed_base)?,
            turns: kv.parsed_or("turns", d.turns)?,
            pairs: kv.parsed_or("pairs", d.pairs)?,
            shape: kv.get("shape").map(parse_shape).transpose()?.unwrap_or(d.shape),
            z0: kv.get("z0").map(PathBuf::from),
            paired: kv.parsed_or("paired", d.paired)?,
            lfa: kv.parsed_or("lfa", d.lfa)?,
            op,
            dit,
            dit_bias_seed: kv.parsed("dit.bias_seed")?,
            vae,
            vae_reference,
            align: alignment_from_kv(&kv, "lfa.")?,
            bins: kv.parsed_or("bins", d.bins)?,
            r_split: kv.parsed_or("r_split", d.r_split)?,
            floor: kv.parsed_or("floor", d.floor)?,
            spectrum_turns,
            bootstrap_resamples: kv.parsed_or("bootstrap.resamples", d.bootstrap_resamples)?,
            bootstrap_confidence: kv.parsed_or("bootstrap.confidence", d.bootstrap_confidence)?,
            bootstrap_seed: kv.parsed_or("bootstrap.seed", d.bootstrap_seed)?,
            backward_scale: kv.parsed_or("cycle.backward_scale", d.backward_scale)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(config_err("seeds must be at least 1"));
        }
        if self.turns == 0 || self.pairs == 0 {
            return Err(config_err("turns and pairs must be at least 1"));
        }
        if self.bins < 2 {
            return Err(config_err("bins must be at least 2"));
        }
        if !(self.r_split > 0.0 && self.r_split < 1.0) {
            return Err(config_err("r_split must lie in (0, 1)"));
        }
        if self.floor.is_nan() || self.floor < 0.0 {
            return Err(config_err("floor must be non-negative"));
        }
        if self.bootstrap_resamples == 0 || !(self.bootstrap_confidence > 0.0 && self.bootstrap_confidence < 1.0) {
            return Err(config_err("bootstrap needs resamples > 0 and confidence in (0, 1)"));
        }
        if self.backward_scale.is_nan() || self.backward_scale < 0.0 {
            return Err(config_err("cycle.backward_scale must be non-negative"));
        }
        if self.experiment == Experiment::Cycle && self.op != OpKind::SyntheticDit {
            return Err(config_err("cycle experiments need op = synthetic_dit"));
        }
        self.dit.validate().map_err(|e| config_err(e.to_string()))?;
        self.vae.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(())
    }

    /// Every setting as `key=value`, in a fixed order.
    pub fn describe(&self) -> Vec<(String, String)> {
        let s = |v: &dyn ToString| v.to_string();
        let mut out: Vec<(String, String)> = vec![
            ("experiment".into(), self.experiment.as_str().into()),
            ("seeds".into(), s(&self.seeds)),
            ("seed_base".into(), s(&self.seed_base)),
            ("turns".into(), s(&self.turns)),
            ("pairs".into(), s(&self.pairs)),
            ("shape".into(), format_shape(self.shape)),
            (
                "z0".into(),
                self.z0.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "synthetic".into()),
            ),
            ("paired".into(), s(&self.paired)),
            ("lfa".into(), s(&self.lfa)),
            ("op".into(), self.op.as_str().into()),
            ("dit.low_bias_scale".into(), s(&self.dit.low_bias_scale)),
            ("dit.low_gain".into(), s(&self.dit.low_gain)),
            ("dit.high_noise_scale".into(), s(&self.dit.high_noise_scale)),
            (
                "dit.bias_seed".into(),
                self.dit_bias_seed.map(|v| v.to_string()).unwrap_or_else(|| "seed".into()),
            ),
            ("dit.window".into(), s(&self.dit.pool.window())),
            ("vae.flat_noise_scale".into(), s(&self.vae.flat_noise_scale)),
            ("vae.low_regularize".into(), s(&self.vae.low_regularize)),
            (
                "vae.reference".into(),
                match self.vae_reference {
                    VaeReference::Input => "input".into(),
                    VaeReference::Z0 => "z0".into(),
                },
            ),
            ("vae.window".into(), s(&self.vae.pool.window())),
        ];
        out.extend(alignment_to_kv(&self.align, "lfa."));
        out.extend([
            ("bins".into(), s(&self.bins)),
            ("r_split".into(), s(&self.r_split)),
            ("floor".into(), s(&self.floor)),
            (
                "spectrum_turns".into(),
                self.spectrum_turns.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
            ),
            ("bootstrap.resamples".into(), s(&self.bootstrap_resamples)),
            ("bootstrap.confidence".into(), s(&self.bootstrap_confidence)),
            ("bootstrap.seed".into(), s(&self.bootstrap_seed)),
            ("cycle.backward_scale".into(), s(&self.backward_scale)),
        ]);
        out
    }

    pub fn meter(&self) -> MeterConfig {
        MeterConfig {
            pool: self.align.pool,
            r_split: self.r_split,
            bins: self.bins,
        }
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds).map(|i| self.seed_base + i).collect()
    }

    pub fn z0_for(&self, seed: u64) -> Result<LatentTensor> {
        match &self.z0 {
            Some(path) => load_latent(path, None),
            None => Ok(synthetic_latent(self.shape, seed)),
        }
    }

    pub fn dit_op(&self, seed: u64) -> TransitionOperator {
        let params = SyntheticDitParams {
            bias_seed: self.dit_bias_seed.unwrap_or(seed),
            ..self.dit.clone()
        };
        TransitionOperator::synthetic_dit(params, seed)
    }

    pub fn vae_op(&self, seed: u64, z0: &LatentTensor) -> TransitionOperator {
        let op = TransitionOperator::synthetic_vae(self.vae.clone(), seed);
        match self.vae_reference {
            VaeReference::Input => op,
            VaeReference::Z0 => op.with_reference_from(z0),
        }
    }

    /// The transition of no-op and cycle runs for `seed`.
    pub fn operator(&self, seed: u64, z0: &LatentTensor) -> TransitionOperator {
        match self.op {
            OpKind::Identity => TransitionOperator::identity(),
            OpKind::SyntheticDit => self.dit_op(seed),
            OpKind::SyntheticVae => self.vae_op(seed, z0),
            OpKind::Composed => TransitionOperator::composed(self.dit_op(seed), self.vae_op(seed, z0)),
        }
    }

    /// Backward op of a cycle: the inverse DiT model with the bias scaled by
    /// `backward_scale`.
    pub fn backward_operator(&self, seed: u64) -> TransitionOperator {
        let params = SyntheticDitParams {
            bias_seed: self.dit_bias_seed.unwrap_or(seed),
            low_bias_scale: self.dit.low_bias_scale * self.backward_scale,
            inverse: true,
            ..self.dit.clone()
        };
        TransitionOperator::synthetic_dit(params, seed)
    }

    fn arms(&self) -> Vec<Arm> {
        match (self.paired, self.lfa) {
            (true, _) => vec![Arm::Baseline, Arm::Lfa],
            (false, true) => vec![Arm::Lfa],
            (false, false) => vec![Arm::Baseline],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arm {
    Baseline,
    Lfa,
}

impl Arm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Lfa => "lfa",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub reports: Vec<(Arm, DriftReport)>,
}

impl SeedRun {
    pub fn last(&self, arm: Arm) -> Option<&DriftRecord> {
        self.reports
            .iter()
            .find(|(a, _)| *a == arm)
            .and_then(|(_, r)| r.last())
    }
}

/// Pooled sign counts of per-seed attribution spectra.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SignTally {
    pub low_positive: usize,
    pub low_defined: usize,
    pub high_negative: usize,
    pub high_defined: usize,
}

impl SignTally {
    pub fn of(diff: &SpectrumDiff) -> Self {
        let low = diff.defined_in(0.0, ATTRIBUTION_LOW_MAX);
        let high = diff.defined_in(ATTRIBUTION_HIGH_MIN, 1.0);
        SignTally {
            low_positive: low.iter().filter(|d| **d > 0.0).count(),
            low_defined: low.len(),
            high_negative: high.iter().filter(|d| **d < 0.0).count(),
            high_defined: high.len(),
        }
    }

    pub fn add(&mut self, o: &SignTally) {
        self.low_positive += o.low_positive;
        self.low_defined += o.low_defined;
        self.high_negative += o.high_negative;
        self.high_defined += o.high_defined;
    }

    pub fn low_fraction(&self) -> f64 {
        frac(self.low_positive, self.low_defined)
    }

    pub fn high_fraction(&self) -> f64 {
        frac(self.high_negative, self.high_defined)
    }
}

fn frac(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Debug)]
pub struct SimOutcome {
    pub files: Vec<PathBuf>,
    /// One-line human summary.
    pub summary: String,
    pub runs: Vec<SeedRun>,
    /// Paired final-turn L2 and low-band μ displacement, baseline vs LFA.
    pub paired_l2: Option<PairedSummary>,
    pub paired_mu: Option<PairedSummary>,
    pub attribution: Option<(SignTally, Vec<(u64, SpectrumDiff)>)>,
}

fn run_seed(cfg: &SimConfig, seed: u64) -> Result<SeedRun> {
    let z0 = cfg.z0_for(seed)?;
    let op = cfg.operator(seed, &z0);
    let mut reports = Vec::new();
    for arm in cfg.arms() {
        let opts = TrajectoryOptions {
            turns: cfg.turns,
            lfa: (arm == Arm::Lfa).then_some(cfg.align),
            meter: cfg.meter(),
            spectrum_turns: cfg.spectrum_turns.clone(),
            keep_latents: false,
        };
        let mut traj = match cfg.experiment {
            Experiment::NoOp => run_no_op_trajectory(&op, &z0, &opts)?,
            Experiment::Cycle => run_cycle_trajectory(&op, &cfg.backward_operator(seed), &z0, cfg.pairs, &opts)?,
            Experiment::Attribution => unreachable!("attribution has no arms"),
        };
        traj.report.header = cfg.describe();
        traj.report.header.extend([
            ("seed".into(), seed.to_string()),
            ("arm".into(), arm.as_str().into()),
            ("ssim_domain".into(), "latent".into()),
        ]);
        reports.push((arm, traj.report));
    }
    Ok(SeedRun { seed, reports })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| LfaError::io_at(path, e))
}

pub fn run_simulation(cfg: &SimConfig, out_dir: &Path) -> Result<SimOutcome> {
    fs::create_dir_all(out_dir).map_err(|e| LfaError::io_at(out_dir, e))?;
    let seeds = cfg.seed_list();
    let header: String = cfg.describe().iter().map(|(k, v)| format!("# {k}={v}\n")).collect();
    let mut files = Vec::new();

    if cfg.experiment == Experiment::Attribution {
        let diffs: Vec<(u64, SpectrumDiff)> = seeds
            .par_iter()
            .map(|&seed| {
                let z0 = cfg.z0_for(seed)?;
                let a = run_attribution(&z0, &cfg.dit_op(seed), &cfg.vae_op(seed, &z0), cfg.turns, cfg.bins, cfg.floor)?;
                Ok((seed, a.diff))
            })
            .collect::<Result<_>>()?;
        let mut total = SignTally::default();
        let mut rows = csv::Writer::from_writer(Vec::new());
        rows.write_record(["seed", "low_positive", "low_defined", "high_negative", "high_defined"])
            .map_err(csv_err)?;
        for (seed, diff) in &diffs {
            let path = out_dir.join(format!("seed{seed}_attribution.csv"));
            let file = fs::File::create(&path).map_err(|e| LfaError::io_at(&path, e))?;
            diff.write_csv(std::io::BufWriter::new(file))?;
            files.push(path);
            let t = SignTally::of(diff);
            total.add(&t);
            rows.write_record([seed.to_string(), t.low_positive.to_string(), t.low_defined.to_string(),
                t.high_negative.to_string(), t.high_defined.to_string()])
                .map_err(csv_err)?;
        }
        let path = out_dir.join("attribution_summary.csv");
        let body = String::from_utf8(rows.into_inner().map_err(|e| LfaError::io("csv", e.into_error()))?)
            .expect("csv output is utf-8");
        write_text(&path, &(header + &body))?;
        files.push(path);
        let summary = format!(
            "attribution over {} seeds at turn {}: low band (r<{}) positive in {}/{} bins ({:.1}%), high band (r>{}) negative in {}/{} bins ({:.1}%)",
            seeds.len(), cfg.turns, ATTRIBUTION_LOW_MAX, total.low_positive, total.low_defined,
            100.0 * total.low_fraction(), ATTRIBUTION_HIGH_MIN, total.high_negative, total.high_defined,
            100.0 * total.high_fraction()
        );
        return Ok(SimOutcome {
            files,
            summary,
            runs: Vec::new(),
            paired_l2: None,
            paired_mu: None,
            attribution: Some((total, diffs)),
        });
    }

    let runs: Vec<SeedRun> = seeds.par_iter().map(|&s| run_seed(cfg, s)).collect::<Result<_>>()?;
    let mut rows = csv::Writer::from_writer(Vec::new());
    rows.write_record(["seed", "arm", "turn", "l2", "mu_disp", "sigma_disp"]).map_err(csv_err)?;
    for run in &runs {
        for (arm, report) in &run.reports {
            let stem = format!("seed{}_{}", run.seed, arm.as_str());
            files.extend(report.write_files(out_dir, &stem)?);
            let last = report.last().expect("at least one turn");
            rows.write_record([run.seed.to_string(), arm.as_str().into(), last.turn.to_string(),
                last.l2.to_string(), last.mu_disp.to_string(), last.sigma_disp.to_string()])
                .map_err(csv_err)?;
        }
    }
    let path = out_dir.join("summary.csv");
    let body = String::from_utf8(rows.into_inner().map_err(|e| LfaError::io("csv", e.into_error()))?)
        .expect("csv output is utf-8");
    write_text(&path, &(header + &body))?;
    files.push(path);

    let final_turn = runs[0].reports[0].1.last().expect("at least one turn").turn;
    let (mut paired_l2, mut paired_mu) = (None, None);
    let summary = if cfg.paired {
        let column = |arm: Arm, f: fn(&DriftRecord) -> f64| -> Vec<f64> {
            runs.iter().map(|r| f(r.last(arm).expect("paired arm"))).collect()
        };
        let boot = |a: &[f64], b: &[f64]| {
            paired_bootstrap(a, b, cfg.bootstrap_resamples, cfg.bootstrap_confidence, cfg.bootstrap_seed)
        };
        let l2 = boot(&column(Arm::Baseline, |r| r.l2), &column(Arm::Lfa, |r| r.l2))?;
        let mu = boot(&column(Arm::Baseline, |r| r.mu_disp), &column(Arm::Lfa, |r| r.mu_disp))?;
        paired_l2 = Some(l2);
        paired_mu = Some(mu);
        format!(
            "paired {} over {} seeds at turn {}: l2 {:.6} -> {:.6}, improvement {:.6} ({:.1}%) {:.0}% CI [{:.6}, {:.6}]; low-band mu_disp {:.6} -> {:.6}, improvement {:.6} CI [{:.6}, {:.6}]",
            cfg.experiment.as_str(), l2.n, final_turn, l2.mean_baseline, l2.mean_treated, l2.mean_diff,
            100.0 * l2.relative_reduction(), 100.0 * l2.confidence, l2.ci_low, l2.ci_high,
            mu.mean_baseline, mu.mean_treated, mu.mean_diff, mu.ci_low, mu.ci_high
        )
    } else {
        let arm = cfg.arms()[0];
        let mean = runs.iter().map(|r| r.last(arm).expect("arm").l2).sum::<f64>() / runs.len() as f64;
        format!(
            "{} ({}) over {} seeds at turn {}: mean l2 {:.6}",
            cfg.experiment.as_str(), arm.as_str(), runs.len(), final_turn, mean
        )
    };
    Ok(SimOutcome {
        files,
        summary,
        runs,
        paired_l2,
        paired_mu,
        attribution: None,
    })
}
