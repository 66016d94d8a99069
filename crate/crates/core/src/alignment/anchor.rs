use std::fmt::{self, Write as _};
use std::str::FromStr;

use super::AlignmentConfig;
use crate::error::{LfaError, Result};
use crate::latent::{channel_mean_std, ChannelStats, Element, Tensor};

/// How the anchor statistics evolve after each turn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum AnchorMode {
    /// Exponential moving average of pre-alignment statistics.
    #[default]
    Ema,
    /// Statistics frozen at initialization.
    Fixed,
    /// Statistics of the previous turn's pre-alignment band.
    Prev,
}

impl AnchorMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AnchorMode::Ema => "ema",
            AnchorMode::Fixed => "fixed",
            AnchorMode::Prev => "prev",
        }
    }
}

impl fmt::Display for AnchorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnchorMode {
    type Err = LfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ema" => Ok(AnchorMode::Ema),
            "fixed" => Ok(AnchorMode::Fixed),
            "prev" => Ok(AnchorMode::Prev),
            other => Err(LfaError::InvalidArgument(format!(
                "unknown anchor mode '{other}' (expected ema, fixed or prev)"
            ))),
        }
    }
}

/// Per-channel target mean and log-std plus the turn they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorState {
    pub m_mu: Vec<f64>,
    pub m_log_sigma: Vec<f64>,
    pub turn: u64,
    pub mode: AnchorMode,
}

impl AnchorState {
    pub fn channels(&self) -> usize {
        self.m_mu.len()
    }

    /// exp(m_log_sigma) per channel.
    pub fn target_stds(&self) -> Vec<f64> {
        self.m_log_sigma.iter().map(|l| l.exp()).collect()
    }
}

/// Channel statistics with log-std, failing on zero-variance channels unless
/// the config substitutes epsilon for them.
fn log_stats<T: Element>(band: &Tensor<T>, cfg: &AlignmentConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let ChannelStats { means, stds } = channel_mean_std(band);
    let zero: Vec<usize> = stds
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= 0.0)
        .map(|(c, _)| c)
        .collect();
    if !zero.is_empty() && !cfg.allow_zero_sigma {
        return Err(LfaError::ZeroSigma { channels: zero });
    }
    let log_sigma = stds
        .iter()
        .map(|&s| if s > 0.0 { s.ln() } else { cfg.epsilon.ln() })
        .collect();
    Ok((means, log_sigma))
}

/// Anchor at turn 0 from the band of the initial latent.
pub fn anchor_init<T: Element>(l0: &Tensor<T>, cfg: &AlignmentConfig) -> Result<AnchorState> {
    cfg.validate()?;
    let (m_mu, m_log_sigma) = log_stats(l0, cfg)?;
    Ok(AnchorState {
        m_mu,
        m_log_sigma,
        turn: 0,
        mode: cfg.anchor_mode,
    })
}

/// Advances the anchor by one turn using the pre-alignment band `l_k`.
pub fn anchor_update<T: Element>(
    state: &AnchorState,
    l_k: &Tensor<T>,
    cfg: &AlignmentConfig,
) -> Result<AnchorState> {
    if l_k.shape().channels != state.channels() {
        return Err(LfaError::InvalidArgument(format!(
            "anchor has {} channels, band has {}",
            state.channels(),
            l_k.shape().channels
        )));
    }
    let turn = state.turn + 1;
    let next = match state.mode {
        AnchorMode::Fixed => AnchorState {
            turn,
            ..state.clone()
        },
        AnchorMode::Prev => {
            let (m_mu, m_log_sigma) = log_stats(l_k, cfg)?;
            AnchorState {
                m_mu,
                m_log_sigma,
                turn,
                mode: state.mode,
            }
        }
        AnchorMode::Ema => {
            let (mu, log_sigma) = log_stats(l_k, cfg)?;
            let ema = |prev: &[f64], cur: &[f64], alpha: f64| -> Vec<f64> {
                prev.iter()
                    .zip(cur)
                    .map(|(&m, &x)| alpha * m + (1.0 - alpha) * x)
                    .collect()
            };
            AnchorState {
                m_mu: ema(&state.m_mu, &mu, cfg.alpha_mu),
                m_log_sigma: ema(&state.m_log_sigma, &log_sigma, cfg.alpha_sigma),
                turn,
                mode: state.mode,
            }
        }
    };
    Ok(next)
}

const RECORD_VERSION: &str = "lfa-anchor v1";

/// Line-oriented text record. Floats use the shortest representation that
/// parses back to the same bits.
pub fn serialize_anchor(state: &AnchorState) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{RECORD_VERSION}");
    let _ = writeln!(out, "mode {}", state.mode);
    let _ = writeln!(out, "turn {}", state.turn);
    for (c, (mu, ls)) in state.m_mu.iter().zip(&state.m_log_sigma).enumerate() {
        let _ = writeln!(out, "{c} {mu:?} {ls:?}");
    }
    out.push_str("end\n");
    out
}

pub fn deserialize_anchor(text: &str, expected_channels: Option<usize>) -> Result<AnchorState> {
    let bad = |msg: String| LfaError::AnchorRecord(msg);
    let mut lines = text.lines();

    match lines.next() {
        Some(RECORD_VERSION) => {}
        Some(other) => return Err(bad(format!("unsupported version line '{other}'"))),
        None => return Err(bad("empty record".into())),
    }
    let mode = lines
        .next()
        .and_then(|l| l.strip_prefix("mode "))
        .ok_or_else(|| bad("missing mode line".into()))?
        .parse::<AnchorMode>()
        .map_err(|e| bad(e.to_string()))?;
    let turn = lines
        .next()
        .and_then(|l| l.strip_prefix("turn "))
        .ok_or_else(|| bad("missing turn line".into()))?
        .parse::<u64>()
        .map_err(|e| bad(format!("bad turn: {e}")))?;

    let mut m_mu = Vec::new();
    let mut m_log_sigma = Vec::new();
    let mut terminated = false;
    for line in lines.by_ref() {
        if line == "end" {
            terminated = true;
            break;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        let [idx, mu, ls] = fields[..] else {
            return Err(bad(format!("bad channel line '{line}'")));
        };
        let idx: usize = idx
            .parse()
            .map_err(|_| bad(format!("bad channel index in '{line}'")))?;
        if idx != m_mu.len() {
            return Err(bad(format!("channel {idx} out of order")));
        }
        let parse = |s: &str| -> Result<f64> {
            let v: f64 = s
                .parse()
                .map_err(|_| bad(format!("bad number '{s}' in '{line}'")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(format!("non-finite value in '{line}'")))
            }
        };
        m_mu.push(parse(mu)?);
        m_log_sigma.push(parse(ls)?);
    }
    if !terminated {
        return Err(bad("record is truncated (no end line)".into()));
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(bad("trailing content after end line".into()));
    }
    if m_mu.is_empty() {
        return Err(bad("record has no channels".into()));
    }
    if let Some(expected) = expected_channels {
        if expected != m_mu.len() {
            return Err(bad(format!(
                "record has {} channels, session expects {expected}",
                m_mu.len()
            )));
        }
    }
    Ok(AnchorState {
        m_mu,
        m_log_sigma,
        turn,
        mode,
    })
}
