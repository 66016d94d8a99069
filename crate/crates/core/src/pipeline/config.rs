//! Flat `key = value` text files. Blank lines and lines starting with `#`
//! are ignored; keys may appear once.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::alignment::{AlignScope, AlignmentConfig, AnchorMode};
use crate::error::{LfaError, Result};
use crate::latent::{PoolingFilterSpec, Shape};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                LfaError::Config(format!("line {}: expected key = value, got {line:?}", n + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(LfaError::Config(format!("line {}: empty key", n + 1)));
            }
            if entries.insert(k.to_string(), (n + 1, v.to_string())).is_some() {
                return Err(LfaError::Config(format!("line {}: duplicate key '{k}'", n + 1)));
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    /// Parses `key` if present.
    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| {
                LfaError::Config(format!("line {line}: invalid value {v:?} for '{key}'"))
            }),
        }
    }

    pub fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    /// Fails on the first key not in `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.entries.iter().find(|(k, _)| !known.contains(&k.as_str())) {
            Some((k, (line, _))) => Err(LfaError::Config(format!("line {line}: unknown key '{k}'"))),
            None => Ok(()),
        }
    }
}

pub fn render(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// `CxHxW`, e.g. `4x32x32`.
pub fn parse_shape(s: &str) -> Result<Shape> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| LfaError::Config(format!("shape must look like CxHxW, got {s:?}")))?;
    match dims.as_slice() {
        [c, h, w] => Shape::new(*c, *h, *w).map_err(|e| LfaError::Config(e.to_string())),
        _ => Err(LfaError::Config(format!("shape must look like CxHxW, got {s:?}"))),
    }
}

pub fn format_shape(s: Shape) -> String {
    format!("{}x{}x{}", s.channels, s.height, s.width)
}

pub const ALIGNMENT_KEYS: [&str; 7] = [
    "window",
    "alpha_mu",
    "alpha_sigma",
    "epsilon",
    "anchor_mode",
    "scope",
    "allow_zero_sigma",
];

/// Reads `<prefix>window`, `<prefix>alpha_mu`, ... over the defaults.
pub fn alignment_from_kv(kv: &KeyValues, prefix: &str) -> Result<AlignmentConfig> {
    let d = AlignmentConfig::default();
    let key = |k: &str| format!("{prefix}{k}");
    let window = kv.parsed_or(&key("window"), d.pool.window())?;
    let mode = kv
        .get(&key("anchor_mode"))
        .map(AnchorMode::from_str)
        .transpose()
        .map_err(|e| LfaError::Config(e.to_string()))?
        .unwrap_or(d.anchor_mode);
    let scope = kv
        .get(&key("scope"))
        .map(AlignScope::from_str)
        .transpose()
        .map_err(|e| LfaError::Config(e.to_string()))?
        .unwrap_or(d.scope);
    let cfg = AlignmentConfig {
        pool: PoolingFilterSpec::new(window).map_err(|e| LfaError::Config(e.to_string()))?,
        alpha_mu: kv.parsed_or(&key("alpha_mu"), d.alpha_mu)?,
        alpha_sigma: kv.parsed_or(&key("alpha_sigma"), d.alpha_sigma)?,
        epsilon: kv.parsed_or(&key("epsilon"), d.epsilon)?,
        anchor_mode: mode,
        scope,
        allow_zero_sigma: kv.parsed_or(&key("allow_zero_sigma"), d.allow_zero_sigma)?,
    };
    cfg.validate().map_err(|e| LfaError::Config(e.to_string()))?;
    Ok(cfg)
}

pub fn alignment_to_kv(cfg: &AlignmentConfig, prefix: &str) -> Vec<(String, String)> {
    let key = |k: &str| format!("{prefix}{k}");
    vec![
        (key("window"), cfg.pool.window().to_string()),
        (key("alpha_mu"), cfg.alpha_mu.to_string()),
        (key("alpha_sigma"), cfg.alpha_sigma.to_string()),
        (key("epsilon"), cfg.epsilon.to_string()),
        (key("anchor_mode"), cfg.anchor_mode.to_string()),
        (key("scope"), cfg.scope.to_string()),
        (key("allow_zero_sigma"), cfg.allow_zero_sigma.to_string()),
    ]
}
