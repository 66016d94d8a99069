//! Low-frequency latent alignment.
//!
//! Each turn the incoming latent is split into a pooled low band and a
//! residual high band. The low band is moved channel-wise onto the anchor's
//! mean and standard deviation, the residual is added back unchanged, and
//! the anchor then absorbs the pre-alignment statistics of the band.
//!
//! Within a turn the order is fixed: alignment reads the anchor from turn
//! `k - 1`, and only afterwards is the anchor advanced to turn `k`.

mod anchor;

use std::fmt;
use std::str::FromStr;

pub use anchor::{
    anchor_init, anchor_update, deserialize_anchor, serialize_anchor, AnchorMode, AnchorState,
};

use crate::error::{LfaError, Result};
use crate::latent::{
    add_bands, channel_mean_std, decompose, Element, FrequencyDecomposition, LatentTensor,
    PoolingFilterSpec, Tensor, WideTensor,
};

/// Which frequency band(s) get aligned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum AlignScope {
    #[default]
    LowOnly,
    HighOnly,
    Both,
}

impl AlignScope {
    pub fn as_str(&self) -> &'static str {
        match self {
            AlignScope::LowOnly => "low_only",
            AlignScope::HighOnly => "high_only",
            AlignScope::Both => "both",
        }
    }

    pub fn aligns_low(&self) -> bool {
        matches!(self, AlignScope::LowOnly | AlignScope::Both)
    }

    pub fn aligns_high(&self) -> bool {
        matches!(self, AlignScope::HighOnly | AlignScope::Both)
    }
}

impl fmt::Display for AlignScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlignScope {
    type Err = LfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low_only" => Ok(AlignScope::LowOnly),
            "high_only" => Ok(AlignScope::HighOnly),
            "both" => Ok(AlignScope::Both),
            other => Err(LfaError::InvalidArgument(format!(
                "unknown alignment scope '{other}' (expected low_only, high_only or both)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignmentConfig {
    pub pool: PoolingFilterSpec,
    pub alpha_mu: f64,
    pub alpha_sigma: f64,
    pub epsilon: f64,
    pub anchor_mode: AnchorMode,
    pub scope: AlignScope,
    /// Substitute `epsilon` for a zero channel std instead of failing.
    pub allow_zero_sigma: bool,
}

impl AlignmentConfig {
    pub const DEFAULT_ALPHA_MU: f64 = 0.95;
    pub const DEFAULT_ALPHA_SIGMA: f64 = 0.85;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn validate(&self) -> Result<()> {
        if self.anchor_mode == AnchorMode::Ema {
            for (name, a) in [("alpha_mu", self.alpha_mu), ("alpha_sigma", self.alpha_sigma)] {
                if !(a > 0.0 && a < 1.0) {
                    return Err(LfaError::InvalidArgument(format!(
                        "{name} must lie in (0, 1) for ema anchors, got {a}"
                    )));
                }
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(LfaError::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            pool: PoolingFilterSpec::default(),
            alpha_mu: Self::DEFAULT_ALPHA_MU,
            alpha_sigma: Self::DEFAULT_ALPHA_SIGMA,
            epsilon: Self::DEFAULT_EPSILON,
            anchor_mode: AnchorMode::Ema,
            scope: AlignScope::LowOnly,
            allow_zero_sigma: false,
        }
    }
}

/// Channel-wise moment matching of a band against an anchor, with the
/// given epsilon added to the band's std in the denominator.
pub fn align_band_with_epsilon<T: Element>(
    band: &Tensor<T>,
    state: &AnchorState,
    epsilon: f64,
) -> Result<Tensor<T>> {
    let shape = band.shape();
    if shape.channels != state.channels() {
        return Err(LfaError::InvalidArgument(format!(
            "anchor has {} channels, band has {}",
            state.channels(),
            shape.channels
        )));
    }
    let stats = channel_mean_std(band);
    let mut out = Vec::with_capacity(shape.len());
    for (c, plane) in band.channels().enumerate() {
        let gain = state.m_log_sigma[c].exp() / (stats.stds[c] + epsilon);
        let (mu, target) = (stats.means[c], state.m_mu[c]);
        out.extend(
            plane
                .iter()
                .map(|v| T::from_f64(target + gain * (v.to_f64() - mu))),
        );
    }
    Tensor::new(shape, out).map_err(|_| LfaError::NonFinite("band alignment".into()))
}

/// Aligns a low-frequency component to the anchor statistics.
pub fn align_low<T: Element>(
    l_k: &Tensor<T>,
    state: &AnchorState,
    cfg: &AlignmentConfig,
) -> Result<Tensor<T>> {
    align_band_with_epsilon(l_k, state, cfg.epsilon)
}

/// The anchors a session carries: one per aligned band.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    pub low: Option<AnchorState>,
    pub high: Option<AnchorState>,
}

impl AnchorSet {
    pub fn turn(&self) -> u64 {
        self.low
            .as_ref()
            .or(self.high.as_ref())
            .map(|a| a.turn)
            .unwrap_or(0)
    }
}

/// Anchors for turn 0 from the initial latent, one per band in `cfg.scope`.
pub fn lfa_init(z0: &LatentTensor, cfg: &AlignmentConfig) -> Result<AnchorSet> {
    cfg.validate()?;
    let parts = decompose(z0, cfg.pool);
    Ok(AnchorSet {
        low: cfg
            .scope
            .aligns_low()
            .then(|| anchor_init(&parts.low, cfg))
            .transpose()?,
        high: cfg
            .scope
            .aligns_high()
            .then(|| anchor_init(&parts.high, cfg))
            .transpose()?,
    })
}

/// Result of one alignment turn.
#[derive(Clone, Debug)]
pub struct LfaStep {
    pub z_hat: LatentTensor,
    /// Pre-alignment bands of the incoming latent.
    pub parts: FrequencyDecomposition,
    pub aligned_low: LatentTensor,
    pub aligned_high: WideTensor,
    pub anchors: AnchorSet,
}

impl LfaStep {
    /// `aligned_low + aligned_high` before rounding to f32.
    pub fn z_hat_wide(&self) -> WideTensor {
        add_bands(&self.aligned_low, &self.aligned_high)
    }
}

/// One full turn: decompose, align per scope, recombine, advance anchors.
pub fn lfa_step(
    z_tilde: &LatentTensor,
    anchors: &AnchorSet,
    cfg: &AlignmentConfig,
) -> Result<LfaStep> {
    cfg.validate()?;
    let parts = decompose(z_tilde, cfg.pool);

    let (aligned_low, next_low) = match (&anchors.low, cfg.scope.aligns_low()) {
        (Some(state), true) => (
            align_low(&parts.low, state, cfg)?,
            Some(anchor_update(state, &parts.low, cfg)?),
        ),
        (None, false) => (parts.low.clone(), None),
        _ => return Err(scope_mismatch(cfg.scope, "low")),
    };
    let (aligned_high, next_high) = match (&anchors.high, cfg.scope.aligns_high()) {
        (Some(state), true) => (
            align_band_with_epsilon(&parts.high, state, cfg.epsilon)?,
            Some(anchor_update(state, &parts.high, cfg)?),
        ),
        (None, false) => (parts.high.clone(), None),
        _ => return Err(scope_mismatch(cfg.scope, "high")),
    };

    let z_hat = add_bands(&aligned_low, &aligned_high)
        .to_latent()
        .map_err(|_| LfaError::NonFinite("recombination".into()))?;
    Ok(LfaStep {
        z_hat,
        parts,
        aligned_low,
        aligned_high,
        anchors: AnchorSet {
            low: next_low,
            high: next_high,
        },
    })
}

fn scope_mismatch(scope: AlignScope, band: &str) -> LfaError {
    LfaError::InvalidArgument(format!(
        "anchor set does not match scope {scope} for the {band} band"
    ))
}
