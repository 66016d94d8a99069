use super::operator::{apply_transition, TransitionOperator};
use super::report::{DriftMeter, DriftReport, MeterConfig};
use crate::alignment::{lfa_init, lfa_step, AlignmentConfig, AnchorSet};
use crate::error::{LfaError, Result};
use crate::latent::LatentTensor;
use crate::spectral::{radial_spectrum, relative_spectrum_diff, RadialSpectrum, SpectrumDiff};

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryOptions {
    pub turns: u64,
    /// Interpose `lfa_step` after every transition.
    pub lfa: Option<AlignmentConfig>,
    pub meter: MeterConfig,
    /// Turns whose cumulative-difference spectrum goes into the report.
    pub spectrum_turns: Vec<u64>,
    pub keep_latents: bool,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        TrajectoryOptions {
            turns: 10,
            lfa: None,
            meter: MeterConfig::default(),
            spectrum_turns: Vec::new(),
            keep_latents: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub report: DriftReport,
    /// `z_1..z_K` when `keep_latents` is set.
    pub latents: Vec<LatentTensor>,
    pub final_latent: LatentTensor,
    pub anchors: Option<AnchorSet>,
}

/// Transition plus optional alignment, one turn at a time.
struct Stepper<'a> {
    lfa: Option<(&'a AlignmentConfig, AnchorSet)>,
}

impl<'a> Stepper<'a> {
    fn new(z0: &LatentTensor, lfa: Option<&'a AlignmentConfig>) -> Result<Self> {
        let lfa = match lfa {
            Some(cfg) => Some((cfg, lfa_init(z0, cfg)?)),
            None => None,
        };
        Ok(Stepper { lfa })
    }

    fn advance(&mut self, op: &TransitionOperator, z: &LatentTensor, turn: u64) -> Result<LatentTensor> {
        let z_tilde = apply_transition(op, z, turn)?;
        match &mut self.lfa {
            Some((cfg, anchors)) => {
                let step = lfa_step(&z_tilde, anchors, cfg)?;
                *anchors = step.anchors;
                Ok(step.z_hat)
            }
            None => Ok(z_tilde),
        }
    }

    fn anchors(self) -> Option<AnchorSet> {
        self.lfa.map(|(_, a)| a)
    }
}

pub fn run_no_op_trajectory(
    op: &TransitionOperator,
    z0: &LatentTensor,
    opts: &TrajectoryOptions,
) -> Result<Trajectory> {
    if opts.turns == 0 {
        return Err(LfaError::InvalidArgument("trajectory needs at least one turn".into()));
    }
    let meter = DriftMeter::new(z0, opts.meter);
    let mut stepper = Stepper::new(z0, opts.lfa.as_ref())?;
    let mut report = DriftReport::default();
    let mut latents = Vec::new();
    let mut z = z0.clone();
    for k in 1..=opts.turns {
        z = stepper.advance(op, &z, k)?;
        report.records.push(meter.record(k, &z)?);
        if opts.spectrum_turns.contains(&k) {
            report.spectra.push((k, meter.spectrum(&z)?));
        }
        if opts.keep_latents {
            latents.push(z.clone());
        }
    }
    Ok(Trajectory {
        report,
        latents,
        final_latent: z,
        anchors: stepper.anchors(),
    })
}

/// Alternates `forward` and `backward` for `2·pairs` turns. Records and
/// spectrum turns are indexed by pair.
pub fn run_cycle_trajectory(
    forward: &TransitionOperator,
    backward: &TransitionOperator,
    z0: &LatentTensor,
    pairs: u64,
    opts: &TrajectoryOptions,
) -> Result<Trajectory> {
    if pairs == 0 {
        return Err(LfaError::InvalidArgument("cycle needs at least one pair".into()));
    }
    let meter = DriftMeter::new(z0, opts.meter);
    let mut stepper = Stepper::new(z0, opts.lfa.as_ref())?;
    let mut report = DriftReport::default();
    let mut latents = Vec::new();
    let mut z = z0.clone();
    for n in 1..=pairs {
        z = stepper.advance(forward, &z, 2 * n - 1)?;
        if opts.keep_latents {
            latents.push(z.clone());
        }
        z = stepper.advance(backward, &z, 2 * n)?;
        if opts.keep_latents {
            latents.push(z.clone());
        }
        report.records.push(meter.record(n, &z)?);
        if opts.spectrum_turns.contains(&n) {
            report.spectra.push((n, meter.spectrum(&z)?));
        }
    }
    Ok(Trajectory {
        report,
        latents,
        final_latent: z,
        anchors: stepper.anchors(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attribution {
    /// Spectrum of `z_K − z_0` along the DiT-only trajectory.
    pub dit: RadialSpectrum,
    pub vae: RadialSpectrum,
    /// `ΔP = 100 · (P_dit − P_vae) / P_vae`.
    pub diff: SpectrumDiff,
}

/// DiT-only and VAE-only trajectories from the same `z0`, compared by the
/// DC-removed spectrum of their round-K cumulative difference.
pub fn run_attribution(
    z0: &LatentTensor,
    dit: &TransitionOperator,
    vae: &TransitionOperator,
    turns: u64,
    bins: usize,
    floor: f64,
) -> Result<Attribution> {
    let opts = TrajectoryOptions {
        turns,
        ..TrajectoryOptions::default()
    };
    let spectrum_of = |op: &TransitionOperator| -> Result<RadialSpectrum> {
        let traj = run_no_op_trajectory(op, z0, &opts)?;
        let diff = traj.final_latent.zip_with::<f32, f64>(z0, |a, b| a - b)?;
        radial_spectrum(&diff, bins, true)
    };
    let p_dit = spectrum_of(dit)?;
    let p_vae = spectrum_of(vae)?;
    let diff = relative_spectrum_diff(&p_dit, &p_vae, floor)?;
    Ok(Attribution {
        dit: p_dit,
        vae: p_vae,
        diff,
    })
}
