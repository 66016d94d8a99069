use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use crate::error::{LfaError, Result};
use crate::latent::{read_latent, write_latent, LatentTensor};

pub const INPUT_PLACEHOLDER: &str = "{input}";
pub const OUTPUT_PLACEHOLDER: &str = "{output}";
pub const TMPDIR_ENV: &str = "LFA_TMPDIR";
pub const TIMEOUT_ENV: &str = "LFA_ADAPTER_TIMEOUT";
pub const DEFAULT_TIMEOUT_SECS: f64 = 300.0;

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];
const STDERR_DIGEST_BYTES: usize = 400;

/// External encoder and decoder run as shell command templates.
///
/// `encode_cmd` maps a PNG to an NPY latent and `decode_cmd` maps an NPY
/// latent to a PNG. Each template names `{input}` and `{output}` exactly
/// once; both are replaced by single-quoted temp paths.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterSpec {
    encode_cmd: String,
    decode_cmd: String,
    pub timeout: Duration,
    /// Working directory of the commands (the caller's by default).
    pub workdir: Option<PathBuf>,
}

fn check_template(name: &str, template: &str) -> Result<()> {
    for ph in [INPUT_PLACEHOLDER, OUTPUT_PLACEHOLDER] {
        let n = template.matches(ph).count();
        if n != 1 {
            return Err(LfaError::InvalidArgument(format!(
                "{name} must contain {ph} exactly once, found {n}"
            )));
        }
    }
    Ok(())
}

/// Timeout from `LFA_ADAPTER_TIMEOUT` (seconds) or the default.
pub fn timeout_from_env() -> Result<Duration> {
    match std::env::var(TIMEOUT_ENV) {
        Ok(v) => parse_timeout(&v),
        Err(_) => Ok(Duration::from_secs_f64(DEFAULT_TIMEOUT_SECS)),
    }
}

pub fn parse_timeout(v: &str) -> Result<Duration> {
    match v.trim().parse::<f64>() {
        Ok(s) if s > 0.0 && s.is_finite() => Ok(Duration::from_secs_f64(s)),
        _ => Err(LfaError::InvalidArgument(format!(
            "adapter timeout must be a positive number of seconds, got {v:?}"
        ))),
    }
}

fn shell_quote(path: &Path) -> String {
    format!("'{}'", path.display().to_string().replace('\'', r"'\''"))
}

fn stderr_digest(raw: &[u8]) -> String {
    let text = String::from_utf8_lossy(raw);
    let text = text.trim();
    if text.len() <= STDERR_DIGEST_BYTES {
        return text.to_string();
    }
    let mut start = text.len() - STDERR_DIGEST_BYTES;
    while !text.is_char_boundary(start) {
        start += 1;
    }
    format!("...{}", &text[start..])
}

fn adapter_err(message: impl Into<String>, stderr: &[u8]) -> LfaError {
    LfaError::Adapter {
        message: message.into(),
        stderr: stderr_digest(stderr),
    }
}

impl AdapterSpec {
    pub fn new(
        encode_cmd: impl Into<String>,
        decode_cmd: impl Into<String>,
        timeout: Duration,
        workdir: Option<PathBuf>,
    ) -> Result<Self> {
        let (encode_cmd, decode_cmd) = (encode_cmd.into(), decode_cmd.into());
        check_template("encode_cmd", &encode_cmd)?;
        check_template("decode_cmd", &decode_cmd)?;
        if timeout.is_zero() {
            return Err(LfaError::InvalidArgument("adapter timeout must be positive".into()));
        }
        Ok(AdapterSpec {
            encode_cmd,
            decode_cmd,
            timeout,
            workdir,
        })
    }

    pub fn encode_cmd(&self) -> &str {
        &self.encode_cmd
    }

    pub fn decode_cmd(&self) -> &str {
        &self.decode_cmd
    }

    /// PNG bytes to latent.
    pub fn encode_bytes(&self, png: &[u8]) -> Result<LatentTensor> {
        let out = self.invoke("encode", &self.encode_cmd, png, "input.png", "output.npy")?;
        read_latent(&mut out.as_slice(), None).map_err(|e| {
            adapter_err(format!("encode output is not a valid latent file: {e}"), b"")
        })
    }

    pub fn encode(&self, image: &Path) -> Result<LatentTensor> {
        let png = fs::read(image).map_err(|e| LfaError::io_at(image, e))?;
        self.encode_bytes(&png)
    }

    /// Latent to PNG bytes.
    pub fn decode(&self, z: &LatentTensor) -> Result<Vec<u8>> {
        let mut npy = Vec::new();
        write_latent(z, &mut npy).map_err(|e| LfaError::io("serializing latent", e))?;
        let out = self.invoke("decode", &self.decode_cmd, &npy, "input.npy", "output.png")?;
        if !out.starts_with(&PNG_SIGNATURE) {
            return Err(adapter_err("decode output is not a PNG file", b""));
        }
        Ok(out)
    }

    /// Decode then encode; the latent shape must survive the trip.
    pub fn round_trip(&self, z: &LatentTensor) -> Result<LatentTensor> {
        let png = self.decode(z)?;
        let back = self.encode_bytes(&png)?;
        if back.shape() != z.shape() {
            return Err(adapter_err(
                format!("round trip changed latent shape {} to {}", z.shape(), back.shape()),
                b"",
            ));
        }
        Ok(back)
    }

    fn invoke(
        &self,
        what: &str,
        template: &str,
        input: &[u8],
        in_name: &str,
        out_name: &str,
    ) -> Result<Vec<u8>> {
        let mut builder = tempfile::Builder::new();
        builder.prefix("lfa-adapter-");
        let tmp = match std::env::var_os(TMPDIR_ENV) {
            Some(dir) => builder.tempdir_in(dir),
            None => builder.tempdir(),
        }
        .map_err(|e| LfaError::io("creating adapter temp dir", e))?;
        let in_path = tmp.path().join(in_name);
        let out_dir = tmp.path().join("out");
        let out_path = out_dir.join(out_name);
        fs::write(&in_path, input).map_err(|e| LfaError::io_at(&in_path, e))?;
        fs::create_dir(&out_dir).map_err(|e| LfaError::io_at(&out_dir, e))?;
        let stderr_path = tmp.path().join("stderr.log");
        let stderr_file = fs::File::create(&stderr_path).map_err(|e| LfaError::io_at(&stderr_path, e))?;

        let cmd = template
            .replace(INPUT_PLACEHOLDER, &shell_quote(&in_path))
            .replace(OUTPUT_PLACEHOLDER, &shell_quote(&out_path));
        let mut command = Command::new("sh");
        command
            .arg("-c")
            .arg(&cmd)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(stderr_file);
        if let Some(dir) = &self.workdir {
            command.current_dir(dir);
        }
        #[cfg(unix)]
        std::os::unix::process::CommandExt::process_group(&mut command, 0);

        let mut child = command
            .spawn()
            .map_err(|e| adapter_err(format!("{what}: cannot start shell: {e}"), b""))?;
        let started = Instant::now();
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if started.elapsed() >= self.timeout => {
                    kill_tree(&mut child);
                    let stderr = fs::read(&stderr_path).unwrap_or_default();
                    return Err(adapter_err(
                        format!("{what} timed out after {:.1}s", self.timeout.as_secs_f64()),
                        &stderr,
                    ));
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(5)),
                Err(e) => return Err(LfaError::io(format!("waiting for {what} command"), e)),
            }
        };
        let stderr = fs::read(&stderr_path).unwrap_or_default();
        if !status.success() {
            return Err(adapter_err(format!("{what} exited with {status}"), &stderr));
        }

        let entries: Vec<_> = fs::read_dir(&out_dir)
            .map_err(|e| LfaError::io_at(&out_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.file_name()))
            .collect();
        match entries.as_slice() {
            [name] if name == out_name => {}
            [] => return Err(adapter_err(format!("{what} wrote no output file"), &stderr)),
            _ => {
                return Err(adapter_err(
                    format!("{what} must write exactly one file {out_name}, found {entries:?}"),
                    &stderr,
                ))
            }
        }
        fs::read(&out_path).map_err(|e| LfaError::io_at(&out_path, e))
    }
}

fn kill_tree(child: &mut std::process::Child) {
    #[cfg(unix)]
    {
        let _ = Command::new("kill")
            .args(["-KILL", "--", &format!("-{}", child.id())])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status();
    }
    let _ = child.kill();
    let _ = child.wait();
}
