//! On-disk alignment sessions.
//!
//! Layout of a session directory:
//!
//! ```text
//! session.conf            alignment and adapter settings, key=value
//! manifest.txt            one "k kind path sha256" line per artifact
//! latents/z_0000.npy      z_0, then the aligned latent of every turn
//! latents/in_0001.npy     pre-alignment latent of a turn
//! anchors/low_0000.txt    anchor records after each turn
//! images/x_0001.png       decoded image of a black-box turn
//! .lock                   held while a process owns the session
//! ```
//!
//! The manifest is the commit point: a turn exists once its lines are in
//! the manifest, and the manifest is replaced atomically. Every listed file
//! is checksummed when the session is opened.

use std::fs::{self, File, TryLockError};
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::adapter::{timeout_from_env, AdapterSpec, TIMEOUT_ENV};
use super::config::{alignment_from_kv, alignment_to_kv, render, KeyValues, ALIGNMENT_KEYS};
use crate::alignment::{
    deserialize_anchor, lfa_init, lfa_step, serialize_anchor, AlignmentConfig, AnchorSet,
    AnchorState,
};
use crate::drift::{DriftMeter, DriftReport, MeterConfig};
use crate::error::{LfaError, Result};
use crate::latent::{load_latent, write_latent, LatentTensor, PoolingFilterSpec};
use crate::spectral::{DEFAULT_BINS, DEFAULT_R_SPLIT};

pub const CONF_FILE: &str = "session.conf";
pub const MANIFEST_FILE: &str = "manifest.txt";
const LOCK_FILE: &str = ".lock";

#[derive(Clone, Debug, PartialEq)]
pub struct SessionConfig {
    pub id: String,
    pub align: AlignmentConfig,
    pub meter: MeterConfig,
    pub adapter: Option<AdapterSpec>,
}

impl SessionConfig {
    pub fn new(id: impl Into<String>, align: AlignmentConfig) -> Self {
        SessionConfig {
            id: id.into(),
            meter: MeterConfig {
                pool: align.pool,
                ..MeterConfig::default()
            },
            align,
            adapter: None,
        }
    }

    pub fn describe(&self) -> Vec<(String, String)> {
        let mut out = vec![("id".to_string(), self.id.clone())];
        out.extend(alignment_to_kv(&self.align, ""));
        out.push(("r_split".into(), self.meter.r_split.to_string()));
        out.push(("bins".into(), self.meter.bins.to_string()));
        out.push(("meter_window".into(), self.meter.pool.window().to_string()));
        if let Some(a) = &self.adapter {
            out.push(("encode_cmd".into(), a.encode_cmd().to_string()));
            out.push(("decode_cmd".into(), a.decode_cmd().to_string()));
            out.push(("adapter_timeout".into(), a.timeout.as_secs_f64().to_string()));
            if let Some(w) = &a.workdir {
                out.push(("adapter_workdir".into(), w.display().to_string()));
            }
        }
        out
    }

    fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        let mut known: Vec<&str> = ALIGNMENT_KEYS.to_vec();
        known.extend([
            "id",
            "r_split",
            "bins",
            "meter_window",
            "encode_cmd",
            "decode_cmd",
            "adapter_timeout",
            "adapter_workdir",
        ]);
        kv.reject_unknown(&known)?;
        let align = alignment_from_kv(&kv, "")?;
        let meter_window = kv.parsed_or("meter_window", align.pool.window())?;
        let meter = MeterConfig {
            pool: PoolingFilterSpec::new(meter_window).map_err(|e| LfaError::Config(e.to_string()))?,
            r_split: kv.parsed_or("r_split", DEFAULT_R_SPLIT)?,
            bins: kv.parsed_or("bins", DEFAULT_BINS)?,
        };
        let adapter = match (kv.get("encode_cmd"), kv.get("decode_cmd")) {
            (Some(enc), Some(dec)) => {
                // the environment overrides the recorded timeout
                let timeout = if std::env::var_os(TIMEOUT_ENV).is_some() {
                    timeout_from_env()?
                } else {
                    match kv.parsed::<f64>("adapter_timeout")? {
                        Some(s) => super::adapter::parse_timeout(&s.to_string())?,
                        None => timeout_from_env()?,
                    }
                };
                Some(AdapterSpec::new(enc, dec, timeout, kv.get("adapter_workdir").map(PathBuf::from))?)
            }
            (None, None) => None,
            _ => {
                return Err(LfaError::Config(
                    "session.conf must give both encode_cmd and decode_cmd or neither".into(),
                ))
            }
        };
        Ok(SessionConfig {
            id: kv.get("id").unwrap_or_default().to_string(),
            align,
            meter,
            adapter,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub turn: u64,
    pub kind: String,
    /// Relative to the session directory.
    pub path: String,
    pub sha256: String,
}

impl ManifestEntry {
    fn line(&self) -> String {
        format!("{} {} {} {}\n", self.turn, self.kind, self.path, self.sha256)
    }
}

fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let parts: Vec<&str> = line.split(' ').collect();
            let bad = || LfaError::Integrity(format!("manifest line {}: {line:?}", n + 1));
            match parts.as_slice() {
                [k, kind, path, sha] if sha.len() == 64 => Ok(ManifestEntry {
                    turn: k.parse().map_err(|_| bad())?,
                    kind: kind.to_string(),
                    path: path.to_string(),
                    sha256: sha.to_string(),
                }),
                _ => Err(bad()),
            }
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// What a turn is fed with.
#[derive(Clone, Debug)]
pub enum StepInput {
    /// The editor's output latent (white-box shape).
    Latent(LatentTensor),
    /// An edited image, encoded and decoded through the adapter (black-box
    /// shape).
    Image(PathBuf),
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub turn: u64,
    pub z_hat: LatentTensor,
    pub latent_path: PathBuf,
    pub image_path: Option<PathBuf>,
}

/// An open session; holds the directory lock until dropped.
#[derive(Debug)]
pub struct Session {
    dir: PathBuf,
    config: SessionConfig,
    manifest: Vec<ManifestEntry>,
    anchors: AnchorSet,
    turn: u64,
    _lock: File,
}

fn acquire_lock(dir: &Path) -> Result<File> {
    let path = dir.join(LOCK_FILE);
    let file = File::options()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&path)
        .map_err(|e| LfaError::io_at(&path, e))?;
    match file.try_lock() {
        Ok(()) => Ok(file),
        Err(TryLockError::WouldBlock) => Err(LfaError::Locked(dir.display().to_string())),
        Err(TryLockError::Error(e)) => Err(LfaError::io_at(&path, e)),
    }
}

/// Writes through a temporary sibling and renames into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(|e| LfaError::io_at(&tmp, e))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| LfaError::io_at(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| LfaError::io_at(path, e))
}

fn latent_bytes(z: &LatentTensor) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_latent(z, &mut buf).map_err(|e| LfaError::io("serializing latent", e))?;
    Ok(buf)
}

/// Files of one turn, written only when the whole turn has been computed.
struct Pending {
    files: Vec<(ManifestEntry, Vec<u8>)>,
}

impl Pending {
    fn new() -> Self {
        Pending { files: Vec::new() }
    }

    fn add(&mut self, turn: u64, kind: &str, path: String, bytes: Vec<u8>) {
        let entry = ManifestEntry {
            turn,
            kind: kind.into(),
            path,
            sha256: sha256_hex(&bytes),
        };
        self.files.push((entry, bytes));
    }

    fn add_anchors(&mut self, turn: u64, anchors: &AnchorSet) {
        for (band, state) in [("low", &anchors.low), ("high", &anchors.high)] {
            if let Some(state) = state {
                self.add(
                    turn,
                    &format!("anchor_{band}"),
                    format!("anchors/{band}_{turn:04}.txt"),
                    serialize_anchor(state).into_bytes(),
                );
            }
        }
    }
}

impl Session {
    /// Creates a session in `dir` (created if missing, must not already hold
    /// a session) from an initial latent or image.
    pub fn init(dir: &Path, config: SessionConfig, input: StepInput) -> Result<Session> {
        fs::create_dir_all(dir).map_err(|e| LfaError::io_at(dir, e))?;
        let lock = acquire_lock(dir)?;
        if dir.join(CONF_FILE).exists() || dir.join(MANIFEST_FILE).exists() {
            return Err(LfaError::InvalidArgument(format!(
                "{} already holds a session",
                dir.display()
            )));
        }
        config.align.validate()?;
        let mut pending = Pending::new();
        let z0 = match input {
            StepInput::Latent(z) => z,
            StepInput::Image(path) => {
                let adapter = config.adapter.as_ref().ok_or_else(no_adapter)?;
                let png = fs::read(&path).map_err(|e| LfaError::io_at(&path, e))?;
                let z = adapter.encode_bytes(&png)?;
                pending.add(0, "image", "images/x_0000.png".into(), png);
                z
            }
        };
        let anchors = lfa_init(&z0, &config.align)?;
        pending.add(0, "latent", "latents/z_0000.npy".into(), latent_bytes(&z0)?);
        pending.add_anchors(0, &anchors);

        let conf_bytes = render(&config.describe()).into_bytes();
        write_atomic(&dir.join(CONF_FILE), &conf_bytes)?;
        let mut session = Session {
            dir: dir.to_path_buf(),
            config,
            manifest: vec![ManifestEntry {
                turn: 0,
                kind: "config".into(),
                path: CONF_FILE.into(),
                sha256: sha256_hex(&conf_bytes),
            }],
            anchors: anchors.clone(),
            turn: 0,
            _lock: lock,
        };
        session.commit(pending, 0, anchors)?;
        Ok(session)
    }

    /// Opens an existing session, verifying every manifest checksum.
    pub fn open(dir: &Path) -> Result<Session> {
        if !dir.join(MANIFEST_FILE).exists() {
            return Err(LfaError::InvalidArgument(format!(
                "{} holds no session",
                dir.display()
            )));
        }
        let lock = acquire_lock(dir)?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| LfaError::io_at(&manifest_path, e))?;
        let manifest = parse_manifest(&text)?;
        for entry in &manifest {
            let path = dir.join(&entry.path);
            let bytes = fs::read(&path)
                .map_err(|e| LfaError::Integrity(format!("{}: {e}", entry.path)))?;
            if sha256_hex(&bytes) != entry.sha256 {
                return Err(LfaError::Integrity(format!("checksum mismatch for {}", entry.path)));
            }
        }
        let conf = manifest
            .iter()
            .find(|e| e.kind == "config")
            .ok_or_else(|| LfaError::Integrity("manifest has no config entry".into()))?;
        let conf_text = fs::read_to_string(dir.join(&conf.path))
            .map_err(|e| LfaError::io_at(&dir.join(&conf.path), e))?;
        let config = SessionConfig::parse(&conf_text)?;

        let turn = manifest
            .iter()
            .filter(|e| e.kind == "latent")
            .map(|e| e.turn)
            .max()
            .ok_or_else(|| LfaError::Integrity("manifest lists no latents".into()))?;
        let channels = load_latent(&dir.join(&Self::latent_entry(&manifest, turn)?.path), None)?
            .shape()
            .channels;
        let load_anchor = |band: &str| -> Result<Option<AnchorState>> {
            let kind = format!("anchor_{band}");
            match manifest.iter().find(|e| e.turn == turn && e.kind == kind) {
                None => Ok(None),
                Some(e) => {
                    let text = fs::read_to_string(dir.join(&e.path))
                        .map_err(|err| LfaError::io_at(&dir.join(&e.path), err))?;
                    let state = deserialize_anchor(&text, Some(channels))?;
                    if state.turn != turn {
                        return Err(LfaError::Integrity(format!(
                            "{} is at turn {} but the session is at turn {turn}",
                            e.path, state.turn
                        )));
                    }
                    Ok(Some(state))
                }
            }
        };
        let anchors = AnchorSet {
            low: load_anchor("low")?,
            high: load_anchor("high")?,
        };
        if anchors.low.is_some() != config.align.scope.aligns_low()
            || anchors.high.is_some() != config.align.scope.aligns_high()
        {
            return Err(LfaError::Integrity(format!(
                "anchors at turn {turn} do not match scope {}",
                config.align.scope
            )));
        }
        Ok(Session {
            dir: dir.to_path_buf(),
            config,
            manifest,
            anchors,
            turn,
            _lock: lock,
        })
    }

    fn latent_entry(manifest: &[ManifestEntry], turn: u64) -> Result<&ManifestEntry> {
        manifest
            .iter()
            .find(|e| e.turn == turn && e.kind == "latent")
            .ok_or_else(|| LfaError::Integrity(format!("manifest has no latent for turn {turn}")))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn turn(&self) -> u64 {
        self.turn
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    pub fn manifest(&self) -> &[ManifestEntry] {
        &self.manifest
    }

    /// Aligned latent of `turn` (z_0 for turn 0).
    pub fn latent(&self, turn: u64) -> Result<LatentTensor> {
        let entry = Self::latent_entry(&self.manifest, turn)?;
        load_latent(&self.dir.join(&entry.path), None)
    }

    /// One turn. Nothing is written unless every stage succeeds.
    pub fn step(&mut self, input: StepInput) -> Result<StepOutcome> {
        let turn = self.turn + 1;
        let z0_shape = self.latent(0)?.shape();
        let mut pending = Pending::new();
        let (z_tilde, black_box) = match input {
            StepInput::Latent(z) => (z, false),
            StepInput::Image(path) => {
                let adapter = self.config.adapter.as_ref().ok_or_else(no_adapter)?;
                let png = fs::read(&path).map_err(|e| LfaError::io_at(&path, e))?;
                (adapter.encode_bytes(&png)?, true)
            }
        };
        if z_tilde.shape() != z0_shape {
            return Err(LfaError::ShapeMismatch {
                expected: z0_shape,
                found: z_tilde.shape(),
            });
        }
        let step = lfa_step(&z_tilde, &self.anchors, &self.config.align)?;
        let image = if black_box {
            let adapter = self.config.adapter.as_ref().ok_or_else(no_adapter)?;
            Some(adapter.decode(&step.z_hat)?)
        } else {
            None
        };

        pending.add(turn, "input", format!("latents/in_{turn:04}.npy"), latent_bytes(&z_tilde)?);
        let latent_rel = format!("latents/z_{turn:04}.npy");
        pending.add(turn, "latent", latent_rel.clone(), latent_bytes(&step.z_hat)?);
        let image_rel = format!("images/x_{turn:04}.png");
        if let Some(png) = image {
            pending.add(turn, "image", image_rel.clone(), png);
        }
        pending.add_anchors(turn, &step.anchors);
        self.commit(pending, turn, step.anchors)?;
        Ok(StepOutcome {
            turn,
            z_hat: step.z_hat,
            latent_path: self.dir.join(latent_rel),
            image_path: black_box.then(|| self.dir.join(image_rel)),
        })
    }

    fn commit(&mut self, pending: Pending, turn: u64, anchors: AnchorSet) -> Result<()> {
        let mut manifest = self.manifest.clone();
        for (entry, bytes) in pending.files {
            let path = self.dir.join(&entry.path);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| LfaError::io_at(parent, e))?;
            }
            write_atomic(&path, &bytes)?;
            manifest.push(entry);
        }
        let text: String = manifest.iter().map(ManifestEntry::line).collect();
        write_atomic(&self.dir.join(MANIFEST_FILE), text.as_bytes())?;
        self.manifest = manifest;
        self.anchors = anchors;
        self.turn = turn;
        Ok(())
    }

    /// SHA-256 over the serialized anchors of the current turn.
    pub fn anchor_digest(&self) -> String {
        sha256_hex(self.anchor_records().as_bytes())
    }

    pub fn anchor_records(&self) -> String {
        [&self.anchors.low, &self.anchors.high]
            .into_iter()
            .flatten()
            .map(serialize_anchor)
            .collect()
    }

    pub fn status(&self) -> String {
        format!(
            "session {}\nturn {}\nanchor_sha256 {}\n{}",
            self.config.id,
            self.turn,
            self.anchor_digest(),
            self.anchor_records()
        )
    }

    /// Drift of every aligned latent against z_0.
    pub fn report(&self) -> Result<DriftReport> {
        let z0 = self.latent(0)?;
        let meter = DriftMeter::new(&z0, self.config.meter);
        let mut report = DriftReport {
            header: self.config.describe(),
            ..DriftReport::default()
        };
        report.header.push(("ssim_domain".into(), "latent".into()));
        for k in 1..=self.turn {
            report.records.push(meter.record(k, &self.latent(k)?)?);
        }
        Ok(report)
    }
}

fn no_adapter() -> LfaError {
    LfaError::Adapter {
        message: "image input needs an adapter (encode_cmd and decode_cmd)".into(),
        stderr: String::new(),
    }
}
