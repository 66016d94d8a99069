use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lfa_core::alignment::{
    anchor_init, deserialize_anchor, lfa_step, serialize_anchor, AlignScope, AlignmentConfig,
    AnchorMode, AnchorSet,
};
use lfa_core::drift::latent_metrics;
use lfa_core::latent::{
    channel_mean_std, decompose, load_latent, low_pass, save_latent, PoolingFilterSpec,
};
use lfa_core::pipeline::adapter::{parse_timeout, timeout_from_env};
use lfa_core::pipeline::{
    run_simulation, AdapterSpec, Session, SessionConfig, SimConfig, StepInput,
};
use lfa_core::spectral::{
    band_energy, radial_spectrum, relative_spectrum_diff, DEFAULT_BINS, DEFAULT_POWER_FLOOR,
    DEFAULT_R_SPLIT,
};
use lfa_core::{LfaError, Result};

/// Low-frequency latent alignment and spectral drift diagnostics.
///
/// Latents are NPY v1.0 files holding a little-endian float32 (C, H, W)
/// array. Environment: LFA_TMPDIR sets the adapter scratch directory and
/// LFA_ADAPTER_TIMEOUT the adapter timeout in seconds.
#[derive(Parser)]
#[command(name = "lfa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-channel spatial mean and std as CSV.
    Stats {
        input: PathBuf,
        /// Measure the low band, the high residual or the whole latent.
        #[arg(long, value_enum, default_value_t = Band::Full)]
        band: Band,
        #[arg(long, default_value_t = PoolingFilterSpec::DEFAULT_WINDOW)]
        window: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split a latent into its low band and high residual.
    Decompose {
        input: PathBuf,
        #[arg(long)]
        low: PathBuf,
        #[arg(long)]
        high: PathBuf,
        #[arg(long, default_value_t = PoolingFilterSpec::DEFAULT_WINDOW)]
        window: usize,
    },
    /// Radial power spectrum as CSV; band energies go to stdout.
    Spectrum {
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        /// Keep the DC component in the spectrum.
        #[arg(long)]
        keep_dc: bool,
        #[arg(long, default_value_t = DEFAULT_R_SPLIT)]
        r_split: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One alignment turn of a latent against stored anchors.
    Align {
        input: PathBuf,
        /// Low-band anchor record (needed unless scope is high_only).
        #[arg(long)]
        anchor: Option<PathBuf>,
        /// High-band anchor record (needed for scope high_only or both).
        #[arg(long)]
        anchor_high: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the aligned low band.
        #[arg(long)]
        low_out: Option<PathBuf>,
        /// Write the advanced low-band anchor.
        #[arg(long)]
        anchor_out: Option<PathBuf>,
        #[arg(long)]
        anchor_high_out: Option<PathBuf>,
        #[command(flatten)]
        align: AlignFlags,
    },
    /// Initial anchor record from a round-0 latent.
    Anchor {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = AnchorBand::Low)]
        band: AnchorBand,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        align: AlignFlags,
    },
    /// Relative radial-spectrum difference 100·(P_a − P_b)/P_b and latent
    /// metrics of a against b.
    Diff {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        #[arg(long, default_value_t = DEFAULT_POWER_FLOOR)]
        floor: f64,
        #[arg(long)]
        keep_dc: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Persistent multi-turn alignment sessions.
    #[command(subcommand)]
    Session(SessionCommand),
    /// Run a drift experiment described by a key=value config file.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum SessionCommand {
    /// Create a session from an initial latent or image.
    Init {
        dir: PathBuf,
        #[command(flatten)]
        input: InputFlags,
        #[arg(long)]
        id: Option<String>,
        #[command(flatten)]
        align: AlignFlags,
        #[command(flatten)]
        adapter: AdapterFlags,
        #[arg(long, default_value_t = DEFAULT_R_SPLIT)]
        r_split: f64,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
    },
    /// Align one more turn.
    Step {
        dir: PathBuf,
        #[command(flatten)]
        input: InputFlags,
    },
    /// Print the turn, anchor digest and anchor records.
    Status { dir: PathBuf },
    /// Drift report of the session as CSV.
    Export {
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct InputFlags {
    /// Latent input (white-box shape).
    #[arg(long)]
    latent: Option<PathBuf>,
    /// Image input routed through the adapter (black-box shape).
    #[arg(long)]
    image: Option<PathBuf>,
}

impl InputFlags {
    fn resolve(&self) -> Result<StepInput> {
        match (&self.latent, &self.image) {
            (Some(p), None) => Ok(StepInput::Latent(load_latent(p, None)?)),
            (None, Some(p)) => Ok(StepInput::Image(p.clone())),
            _ => Err(LfaError::InvalidArgument("give exactly one of --latent and --image".into())),
        }
    }
}

#[derive(Args)]
struct AlignFlags {
    /// Box filter window ρ (odd).
    #[arg(long, default_value_t = PoolingFilterSpec::DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = AlignmentConfig::DEFAULT_ALPHA_MU)]
    alpha_mu: f64,
    #[arg(long, default_value_t = AlignmentConfig::DEFAULT_ALPHA_SIGMA)]
    alpha_sigma: f64,
    #[arg(long, default_value_t = AlignmentConfig::DEFAULT_EPSILON)]
    epsilon: f64,
    /// ema, fixed or prev.
    #[arg(long, default_value = "ema")]
    anchor_mode: AnchorMode,
    /// low_only, high_only or both.
    #[arg(long, default_value = "low_only")]
    scope: AlignScope,
    /// Use ln ε for channels with zero std instead of failing.
    #[arg(long)]
    allow_zero_sigma: bool,
}

impl AlignFlags {
    fn config(&self) -> Result<AlignmentConfig> {
        let cfg = AlignmentConfig {
            pool: PoolingFilterSpec::new(self.window)?,
            alpha_mu: self.alpha_mu,
            alpha_sigma: self.alpha_sigma,
            epsilon: self.epsilon,
            anchor_mode: self.anchor_mode,
            scope: self.scope,
            allow_zero_sigma: self.allow_zero_sigma,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct AdapterFlags {
    /// Encoder command template with {input} (PNG) and {output} (NPY).
    #[arg(long, requires = "decode_cmd")]
    encode_cmd: Option<String>,
    /// Decoder command template with {input} (NPY) and {output} (PNG).
    #[arg(long, requires = "encode_cmd")]
    decode_cmd: Option<String>,
    /// Seconds; defaults to LFA_ADAPTER_TIMEOUT or 300.
    #[arg(long)]
    adapter_timeout: Option<String>,
    /// Working directory of the adapter commands.
    #[arg(long)]
    adapter_workdir: Option<PathBuf>,
}

impl AdapterFlags {
    fn spec(&self) -> Result<Option<AdapterSpec>> {
        let (Some(enc), Some(dec)) = (&self.encode_cmd, &self.decode_cmd) else {
            return Ok(None);
        };
        let timeout: Duration = match &self.adapter_timeout {
            Some(t) => parse_timeout(t)?,
            None => timeout_from_env()?,
        };
        AdapterSpec::new(enc.clone(), dec.clone(), timeout, self.adapter_workdir.clone()).map(Some)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Band {
    Full,
    Low,
    High,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnchorBand {
    Low,
    High,
}

fn csv_error(e: csv::Error) -> LfaError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => LfaError::io("writing csv", io),
        other => LfaError::Format(format!("csv: {other:?}")),
    }
}

/// Opens `path`, or stdout when absent.
fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p).map_err(|e| LfaError::io_at(p, e))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    let mut w = output(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| LfaError::io("writing output", e))
}

fn read_anchor(path: &Path, channels: usize) -> Result<lfa_core::alignment::AnchorState> {
    let text = fs::read_to_string(path).map_err(|e| LfaError::io_at(path, e))?;
    deserialize_anchor(&text, Some(channels))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats { input, band, window, out } => {
            let z = load_latent(&input, None)?;
            let spec = PoolingFilterSpec::new(window)?;
            let stats = match band {
                Band::Full => channel_mean_std(&z),
                Band::Low => channel_mean_std(&low_pass(&z, spec)),
                Band::High => channel_mean_std(&decompose(&z, spec).high),
            };
            let mut wr = csv::Writer::from_writer(output(out.as_deref())?);
            wr.write_record(["channel", "mean", "std"]).map_err(csv_error)?;
            for (c, (m, s)) in stats.means.iter().zip(&stats.stds).enumerate() {
                wr.write_record([c.to_string(), m.to_string(), s.to_string()])
                    .map_err(csv_error)?;
            }
            wr.flush().map_err(|e| LfaError::io("writing csv", e))
        }
        Command::Decompose { input, low, high, window } => {
            let z = load_latent(&input, None)?;
            let parts = decompose(&z, PoolingFilterSpec::new(window)?);
            save_latent(&parts.low, &low)?;
            save_latent(&parts.high.to_latent()?, &high)
        }
        Command::Spectrum { input, bins, keep_dc, r_split, out } => {
            let z = load_latent(&input, None)?;
            let spectrum = radial_spectrum(&z, bins, !keep_dc)?;
            let (low, high) = band_energy(&z, r_split)?;
            match out {
                Some(path) => {
                    spectrum.write_csv(output(Some(&path))?)?;
                    println!("low_band_energy={low} high_band_energy={high}");
                    Ok(())
                }
                None => spectrum.write_csv(output(None)?),
            }
        }
        Command::Align {
            input,
            anchor,
            anchor_high,
            out,
            low_out,
            anchor_out,
            anchor_high_out,
            align,
        } => {
            let cfg = align.config()?;
            let z = load_latent(&input, None)?;
            let channels = z.shape().channels;
            let need = |p: &Option<PathBuf>, flag: &str, wanted: bool| -> Result<Option<_>> {
                match (p, wanted) {
                    (Some(p), true) => read_anchor(p, channels).map(Some),
                    (None, true) => Err(LfaError::InvalidArgument(format!(
                        "scope {} needs {flag}",
                        cfg.scope
                    ))),
                    (_, false) => Ok(None),
                }
            };
            let anchors = AnchorSet {
                low: need(&anchor, "--anchor", cfg.scope.aligns_low())?,
                high: need(&anchor_high, "--anchor-high", cfg.scope.aligns_high())?,
            };
            let step = lfa_step(&z, &anchors, &cfg)?;
            save_latent(&step.z_hat, &out)?;
            if let Some(p) = low_out {
                save_latent(&step.aligned_low, &p)?;
            }
            for (path, state) in [(anchor_out, &step.anchors.low), (anchor_high_out, &step.anchors.high)] {
                if let (Some(path), Some(state)) = (path, state) {
                    write_text(Some(&path), &serialize_anchor(state))?;
                }
            }
            Ok(())
        }
        Command::Anchor { input, band, out, align } => {
            let cfg = align.config()?;
            let z = load_latent(&input, None)?;
            let parts = decompose(&z, cfg.pool);
            let state = match band {
                AnchorBand::Low => anchor_init(&parts.low, &cfg)?,
                AnchorBand::High => anchor_init(&parts.high, &cfg)?,
            };
            write_text(out.as_deref(), &serialize_anchor(&state))
        }
        Command::Diff { a, b, bins, floor, keep_dc, out } => {
            let za = load_latent(&a, None)?;
            let zb = load_latent(&b, Some(za.shape()))?;
            let diff = relative_spectrum_diff(
                &radial_spectrum(&za, bins, !keep_dc)?,
                &radial_spectrum(&zb, bins, !keep_dc)?,
                floor,
            )?;
            let m = latent_metrics(&za, &zb)?;
            match out {
                Some(path) => {
                    diff.write_csv(output(Some(&path))?)?;
                    println!("l1={} l2={} ssim_latent={}", m.l1, m.l2, m.ssim);
                    Ok(())
                }
                None => diff.write_csv(output(None)?),
            }
        }
        Command::Session(cmd) => run_session(cmd),
        Command::Simulate { config, out } => {
            let text = fs::read_to_string(&config).map_err(|e| LfaError::io_at(&config, e))?;
            let cfg = SimConfig::parse(&text)?;
            let outcome = run_simulation(&cfg, &out)?;
            println!("{}", outcome.summary);
            Ok(())
        }
    }
}

fn run_session(cmd: SessionCommand) -> Result<()> {
    match cmd {
        SessionCommand::Init { dir, input, id, align, adapter, r_split, bins } => {
            let id = id.unwrap_or_else(|| {
                dir.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "session".into())
            });
            let mut cfg = SessionConfig::new(id, align.config()?);
            cfg.meter.r_split = r_split;
            cfg.meter.bins = bins;
            cfg.adapter = adapter.spec()?;
            if !(r_split > 0.0 && r_split < 1.0) || bins < 2 {
                return Err(LfaError::InvalidArgument("need r_split in (0, 1) and bins >= 2".into()));
            }
            let session = Session::init(&dir, cfg, input.resolve()?)?;
            print!("{}", session.status());
            Ok(())
        }
        SessionCommand::Step { dir, input } => {
            let mut session = Session::open(&dir)?;
            let outcome = session.step(input.resolve()?)?;
            print!("turn {} latent {}", outcome.turn, outcome.latent_path.display());
            if let Some(p) = outcome.image_path {
                print!(" image {}", p.display());
            }
            println!();
            Ok(())
        }
        SessionCommand::Status { dir } => {
            print!("{}", Session::open(&dir)?.status());
            Ok(())
        }
        SessionCommand::Export { dir, out } => {
            let report = Session::open(&dir)?.report()?;
            report.write_csv(output(out.as_deref())?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
