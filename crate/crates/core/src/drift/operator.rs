use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{LfaError, Result};
use crate::latent::{
    channel_mean_std, low_pass, ChannelStats, LatentTensor, PoolingFilterSpec, Shape,
    Tensor, WideTensor,
};
use crate::pipeline::adapter::AdapterSpec;

// rng stream ids, one per noise source
const STREAM_BIAS: u64 = 1;
const STREAM_DIT_HIGH: u64 = 2;
const STREAM_VAE_FLAT: u64 = 3;
const STREAM_LATENT: u64 = 4;

/// Deterministic generator for a `(seed, turn, stream)` triple.
pub(crate) fn rng_for(seed: u64, turn: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&turn.to_le_bytes());
    key[16..24].copy_from_slice(&stream.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn normal_field(shape: Shape, rng: &mut ChaCha8Rng) -> WideTensor {
    let data: Vec<f64> = (0..shape.len()).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape, data).expect("standard normal samples are finite")
}

/// Parameters of the DiT-like model: a persistent low-frequency bias, a
/// low-band gain and a small fresh high-band perturbation per turn.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDitParams {
    pub low_bias_scale: f64,
    pub low_gain: f64,
    pub high_noise_scale: f64,
    /// Fixes the spatial pattern and per-channel offsets of the bias field.
    pub bias_seed: u64,
    /// Box window used to shape the bias and split the bands.
    pub pool: PoolingFilterSpec,
    /// Apply the negated bias and reciprocal gain (the inverse instruction
    /// of a cycle pair).
    pub inverse: bool,
}

impl Default for SyntheticDitParams {
    fn default() -> Self {
        SyntheticDitParams {
            low_bias_scale: 0.05,
            low_gain: 1.01,
            high_noise_scale: 0.005,
            bias_seed: 0,
            pool: PoolingFilterSpec::default(),
            inverse: false,
        }
    }
}

impl SyntheticDitParams {
    /// Zero bias, unit gain, no noise.
    pub fn identity() -> Self {
        SyntheticDitParams {
            low_bias_scale: 0.0,
            low_gain: 1.0,
            high_noise_scale: 0.0,
            ..Default::default()
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.low_bias_scale >= 0.0 && self.high_noise_scale >= 0.0) {
            return Err(LfaError::InvalidArgument(
                "synthetic DiT scales must be non-negative".into(),
            ));
        }
        if !(self.low_gain > 0.0 && self.low_gain.is_finite()) {
            return Err(LfaError::InvalidArgument(format!(
                "low_gain must be positive, got {}",
                self.low_gain
            )));
        }
        Ok(())
    }

    /// The unscaled bias direction: per-channel N(0, 1) offsets plus white
    /// N(0, 1) noise, box-filtered three times. A single box pass leaks
    /// through its sidelobes into the high band.
    pub fn bias_field(&self, shape: Shape) -> WideTensor {
        let mut rng = rng_for(self.bias_seed, 0, STREAM_BIAS);
        let offsets: Vec<f64> = (0..shape.channels)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let white = normal_field(shape, &mut rng);
        let plane = shape.plane();
        let data = white
            .data()
            .iter()
            .enumerate()
            .map(|(idx, v)| v + offsets[idx / plane])
            .collect();
        let field = Tensor::new(shape, data).expect("finite");
        low_pass(&low_pass(&low_pass(&field, self.pool), self.pool), self.pool)
    }
}

/// Parameters of the VAE-like model: spectrally flat noise followed by a
/// partial pull of the low-band statistics toward a reference.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticVaeParams {
    pub flat_noise_scale: f64,
    /// Fraction in [0, 1] of the way the low-band mean/std move toward the
    /// reference each turn.
    pub low_regularize: f64,
    /// Low-band statistics the round trip pulls toward; `None` uses the
    /// input latent's own low band.
    pub reference: Option<ChannelStats>,
    pub pool: PoolingFilterSpec,
}

impl Default for SyntheticVaeParams {
    fn default() -> Self {
        SyntheticVaeParams {
            flat_noise_scale: 0.01,
            low_regularize: 0.1,
            reference: None,
            pool: PoolingFilterSpec::default(),
        }
    }
}

impl SyntheticVaeParams {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.flat_noise_scale.is_nan() || self.flat_noise_scale < 0.0 {
            return Err(LfaError::InvalidArgument(
                "flat_noise_scale must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.low_regularize) {
            return Err(LfaError::InvalidArgument(format!(
                "low_regularize must lie in [0, 1], got {}",
                self.low_regularize
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TransitionKind {
    SyntheticDit(SyntheticDitParams),
    SyntheticVae(SyntheticVaeParams),
    /// `vae ∘ dit`: the DiT transition followed by a VAE round trip.
    Composed {
        dit: Box<TransitionOperator>,
        vae: Box<TransitionOperator>,
    },
    /// Decode then encode through the external adapter commands.
    ExternalAdapter(AdapterSpec),
}

/// A latent-to-latent map applied once per turn. Output depends only on the
/// input, the seed and the turn index.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionOperator {
    pub kind: TransitionKind,
    pub seed: u64,
}

impl TransitionOperator {
    pub fn synthetic_dit(params: SyntheticDitParams, seed: u64) -> Self {
        TransitionOperator {
            kind: TransitionKind::SyntheticDit(params),
            seed,
        }
    }

    pub fn synthetic_vae(params: SyntheticVaeParams, seed: u64) -> Self {
        TransitionOperator {
            kind: TransitionKind::SyntheticVae(params),
            seed,
        }
    }

    pub fn composed(dit: TransitionOperator, vae: TransitionOperator) -> Self {
        let seed = dit.seed;
        TransitionOperator {
            kind: TransitionKind::Composed {
                dit: Box::new(dit),
                vae: Box::new(vae),
            },
            seed,
        }
    }

    pub fn external(adapter: AdapterSpec) -> Self {
        TransitionOperator {
            kind: TransitionKind::ExternalAdapter(adapter),
            seed: 0,
        }
    }

    pub fn identity() -> Self {
        TransitionOperator::synthetic_dit(SyntheticDitParams::identity(), 0)
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            TransitionKind::SyntheticDit(_) => "synthetic_dit",
            TransitionKind::SyntheticVae(_) => "synthetic_vae",
            TransitionKind::Composed { .. } => "composed",
            TransitionKind::ExternalAdapter(_) => "external_adapter",
        }
    }

    /// Key/value pairs for report headers.
    pub fn describe(&self, prefix: &str) -> Vec<(String, String)> {
        let key = |k: &str| format!("{prefix}{k}");
        let mut out = vec![
            (key("kind"), self.kind_name().to_string()),
            (key("seed"), self.seed.to_string()),
        ];
        match &self.kind {
            TransitionKind::SyntheticDit(p) => out.extend([
                (key("low_bias_scale"), p.low_bias_scale.to_string()),
                (key("low_gain"), p.low_gain.to_string()),
                (key("high_noise_scale"), p.high_noise_scale.to_string()),
                (key("bias_seed"), p.bias_seed.to_string()),
                (key("window"), p.pool.window().to_string()),
                (key("inverse"), p.inverse.to_string()),
            ]),
            TransitionKind::SyntheticVae(p) => out.extend([
                (key("flat_noise_scale"), p.flat_noise_scale.to_string()),
                (key("low_regularize"), p.low_regularize.to_string()),
                (
                    key("reference"),
                    if p.reference.is_some() { "fixed" } else { "input" }.to_string(),
                ),
                (key("window"), p.pool.window().to_string()),
            ]),
            TransitionKind::Composed { dit, vae } => {
                out.extend(dit.describe(&key("dit.")));
                out.extend(vae.describe(&key("vae.")));
            }
            TransitionKind::ExternalAdapter(a) => out.extend([
                (key("encode_cmd"), a.encode_cmd().to_string()),
                (key("decode_cmd"), a.decode_cmd().to_string()),
            ]),
        }
        out
    }

    /// Same operator with the VAE reference statistics pinned to the low
    /// band of `z0` (recursing into composed operators).
    pub fn with_reference_from(&self, z0: &LatentTensor) -> Self {
        let mut op = self.clone();
        match &mut op.kind {
            TransitionKind::SyntheticVae(p) => {
                p.reference = Some(channel_mean_std(&low_pass(z0, p.pool)));
            }
            TransitionKind::Composed { dit, vae } => {
                **dit = dit.with_reference_from(z0);
                **vae = vae.with_reference_from(z0);
            }
            _ => {}
        }
        op
    }
}

pub fn apply_transition(
    op: &TransitionOperator,
    z: &LatentTensor,
    turn: u64,
) -> Result<LatentTensor> {
    match &op.kind {
        TransitionKind::SyntheticDit(p) => apply_dit(p, op.seed, z, turn),
        TransitionKind::SyntheticVae(p) => apply_vae(p, op.seed, z, turn),
        TransitionKind::Composed { dit, vae } => {
            let mid = apply_transition(dit, z, turn)?;
            apply_transition(vae, &mid, turn)
        }
        TransitionKind::ExternalAdapter(adapter) => adapter.round_trip(z),
    }
}

fn narrow(wide: WideTensor, what: &str) -> Result<LatentTensor> {
    wide.to_latent()
        .map_err(|_| LfaError::NonFinite(format!("{what} transition")))
}

fn apply_dit(p: &SyntheticDitParams, seed: u64, z: &LatentTensor, turn: u64) -> Result<LatentTensor> {
    p.validate()?;
    let shape = z.shape();
    let mut out: Vec<f64> = z.data().iter().map(|&v| v as f64).collect();

    if p.low_bias_scale > 0.0 {
        let sign = if p.inverse { -1.0 } else { 1.0 };
        let field = p.bias_field(shape);
        for (o, b) in out.iter_mut().zip(field.data()) {
            *o += sign * p.low_bias_scale * b;
        }
    }
    let gain = if p.inverse { 1.0 / p.low_gain } else { p.low_gain };
    if gain != 1.0 {
        let low = low_pass(z, p.pool);
        for (o, l) in out.iter_mut().zip(low.data()) {
            *o += (gain - 1.0) * *l as f64;
        }
    }
    if p.high_noise_scale > 0.0 {
        let noise = normal_field(shape, &mut rng_for(seed, turn, STREAM_DIT_HIGH));
        let smooth = low_pass(&noise, p.pool);
        for ((o, n), s) in out.iter_mut().zip(noise.data()).zip(smooth.data()) {
            *o += p.high_noise_scale * (n - s);
        }
    }
    narrow(Tensor::from_parts(shape, out), "synthetic DiT")
}

fn apply_vae(p: &SyntheticVaeParams, seed: u64, z: &LatentTensor, turn: u64) -> Result<LatentTensor> {
    p.validate()?;
    let shape = z.shape();
    let mut noisy: Vec<f64> = z.data().iter().map(|&v| v as f64).collect();
    if p.flat_noise_scale > 0.0 {
        let noise = normal_field(shape, &mut rng_for(seed, turn, STREAM_VAE_FLAT));
        for (o, n) in noisy.iter_mut().zip(noise.data()) {
            *o += p.flat_noise_scale * n;
        }
    }
    let noisy = Tensor::from_parts(shape, noisy);
    if p.low_regularize == 0.0 {
        return narrow(noisy, "synthetic VAE");
    }

    let reference = match &p.reference {
        Some(r) if r.channels() == shape.channels => r.clone(),
        Some(r) => {
            return Err(LfaError::InvalidArgument(format!(
                "VAE reference has {} channels, latent has {}",
                r.channels(),
                shape.channels
            )));
        }
        None => channel_mean_std(&low_pass(z, p.pool)),
    };
    let low = low_pass(&noisy, p.pool);
    let stats = channel_mean_std(&low);
    let lambda = p.low_regularize;
    let plane = shape.plane();
    let mut out = Vec::with_capacity(shape.len());
    for c in 0..shape.channels {
        let (mu, sigma) = (stats.means[c], stats.stds[c]);
        let target_mu = (1.0 - lambda) * mu + lambda * reference.means[c];
        let target_sigma = (1.0 - lambda) * sigma + lambda * reference.stds[c];
        let gain = if sigma > 0.0 { target_sigma / sigma } else { 1.0 };
        let range = c * plane..(c + 1) * plane;
        for (v, l) in noisy.data()[range.clone()].iter().zip(&low.data()[range]) {
            let aligned = target_mu + gain * (l - mu);
            out.push(aligned + (v - l));
        }
    }
    narrow(Tensor::from_parts(shape, out), "synthetic VAE")
}

/// The per-turn bias `Φ(z) - z` and, for composed operators, its split into
/// the DiT term `G(z) - z` and the round-trip term `Φ(z) - G(z)`.
#[derive(Clone, Debug)]
pub struct NoOpBias {
    pub total: WideTensor,
    pub split: Option<(WideTensor, WideTensor)>,
}

fn difference(a: &LatentTensor, b: &LatentTensor) -> Result<WideTensor> {
    a.zip_with::<f32, f64>(b, |x, y| x - y)
}

pub fn no_op_bias(op: &TransitionOperator, z: &LatentTensor, turn: u64) -> Result<NoOpBias> {
    match &op.kind {
        TransitionKind::Composed { dit, vae } => {
            let mid = apply_transition(dit, z, turn)?;
            let out = apply_transition(vae, &mid, turn)?;
            Ok(NoOpBias {
                total: difference(&out, z)?,
                split: Some((difference(&mid, z)?, difference(&out, &mid)?)),
            })
        }
        _ => {
            let out = apply_transition(op, z, turn)?;
            Ok(NoOpBias {
                total: difference(&out, z)?,
                split: None,
            })
        }
    }
}

/// A latent-like test input: per-channel offset and scale over a mix of
/// smooth structure and fine detail.
pub fn synthetic_latent(shape: Shape, seed: u64) -> LatentTensor {
    let mut rng = rng_for(seed, 0, STREAM_LATENT);
    let pool = PoolingFilterSpec::default();
    let coarse = normal_field(shape, &mut rng);
    let smooth = low_pass(&low_pass(&coarse, pool), pool);
    let smooth_stats = channel_mean_std(&smooth);
    let detail = normal_field(shape, &mut rng);
    let plane = shape.plane();

    let mut data = Vec::with_capacity(shape.len());
    for c in 0..shape.channels {
        let unit: f64 = StandardNormal.sample(&mut rng);
        let offset = 0.5 * unit;
        let scale = 0.5 + rand::Rng::random::<f64>(&mut rng);
        let (mu, sd) = (smooth_stats.means[c], smooth_stats.stds[c].max(1e-12));
        for idx in c * plane..(c + 1) * plane {
            let s = (smooth.data()[idx] - mu) / sd;
            let v = offset + scale * (0.8 * s + 0.6 * detail.data()[idx]);
            data.push(v as f32);
        }
    }
    Tensor::new(shape, data).expect("finite synthetic latent")
}
