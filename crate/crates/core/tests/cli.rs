//! The `lfa` binary against the library, plus sessions and the adapter
//! protocol end to end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lfa_core::alignment::{
    anchor_init, deserialize_anchor, lfa_init, lfa_step, AlignmentConfig, AnchorSet,
};
use lfa_core::drift::{
    apply_transition, run_no_op_trajectory, synthetic_latent, SyntheticDitParams,
    TransitionOperator, TrajectoryOptions,
};
use lfa_core::latent::{
    channel_mean_std, decompose, load_latent, save_latent, LatentTensor, PoolingFilterSpec, Shape,
};
use lfa_core::pipeline::adapter::TIMEOUT_ENV;
use lfa_core::pipeline::{Session, StepInput};
use tempfile::TempDir;

/// Writes a PNG signature followed by the NPY bytes; the encoder strips it.
const FAKE_DECODE: &str = r"{ printf '\211PNG\r\n\032\n'; cat {input}; } > {output}";
const FAKE_ENCODE: &str = "tail -c +9 {input} > {output}";

fn lfa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfa"))
        .args(args)
        .env_remove(TIMEOUT_ENV)
        .output()
        .expect("spawn lfa")
}

fn ok(args: &[&str]) -> String {
    let out = lfa(args);
    assert!(
        out.status.success(),
        "lfa {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    lfa(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn shape() -> Shape {
    Shape::new(4, 16, 16).unwrap()
}

fn write_latent(dir: &Path, name: &str, z: &LatentTensor) -> PathBuf {
    let path = dir.join(name);
    save_latent(z, &path).unwrap();
    path
}

fn dit() -> TransitionOperator {
    TransitionOperator::synthetic_dit(SyntheticDitParams::default(), 7)
}

/// PNG as the fake adapter would produce it for `z`.
fn fake_png(dir: &Path, name: &str, z: &LatentTensor) -> PathBuf {
    let mut bytes = b"\x89PNG\r\n\x1a\n".to_vec();
    lfa_core::latent::write_latent(z, &mut bytes).unwrap();
    let path = dir.join(name);
    fs::write(&path, bytes).unwrap();
    path
}

#[test]
fn stats_of_a_constant() {
    let dir = TempDir::new().unwrap();
    let z = LatentTensor::filled(Shape::new(3, 4, 4).unwrap(), 3.5).unwrap();
    let input = write_latent(dir.path(), "c.npy", &z);
    let out = ok(&["stats", p(&input)]);
    assert_eq!(out, "channel,mean,std\n0,3.5,0\n1,3.5,0\n2,3.5,0\n");
}

#[test]
fn stats_bands_match_library() {
    let dir = TempDir::new().unwrap();
    let z = synthetic_latent(shape(), 1);
    let input = write_latent(dir.path(), "z.npy", &z);
    let parts = decompose(&z, PoolingFilterSpec::default());
    for (band, stats) in [
        ("full", channel_mean_std(&z)),
        ("low", channel_mean_std(&parts.low)),
        ("high", channel_mean_std(&parts.high)),
    ] {
        let out = ok(&["stats", p(&input), "--band", band]);
        for (line, c) in out.lines().skip(1).zip(0..) {
            let fields: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
            assert_eq!(fields, vec![c as f64, stats.means[c], stats.stds[c]]);
        }
    }
}

#[test]
fn decompose_writes_both_bands() {
    let dir = TempDir::new().unwrap();
    let z = synthetic_latent(shape(), 2);
    let input = write_latent(dir.path(), "z.npy", &z);
    let (low, high) = (dir.path().join("low.npy"), dir.path().join("high.npy"));
    ok(&["decompose", p(&input), "--low", p(&low), "--high", p(&high)]);
    let parts = decompose(&z, PoolingFilterSpec::default());
    assert!(load_latent(&low, None).unwrap().bitwise_eq(&parts.low));
    let high = load_latent(&high, None).unwrap();
    assert!(high.bitwise_eq(&parts.high.to_latent().unwrap()));
    let sum = parts.low.zip_with::<f32, f64>(&high, |a, b| a + b).unwrap();
    assert!(sum.max_abs_diff(&z).unwrap() < 1e-6);
}

#[test]
fn spectrum_and_diff_run() {
    let dir = TempDir::new().unwrap();
    let a = write_latent(dir.path(), "a.npy", &synthetic_latent(shape(), 3));
    let b = write_latent(dir.path(), "b.npy", &synthetic_latent(shape(), 4));
    let csv = ok(&["spectrum", p(&a), "--bins", "10"]);
    assert_eq!(csv.lines().count(), 11);
    let out = dir.path().join("d.csv");
    let line = ok(&["diff", p(&a), p(&a), "--out", p(&out)]);
    assert!(line.starts_with("l1=0 l2=0 ssim_latent=1"), "{line}");
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",0") || l.ends_with(',')));
    ok(&["diff", p(&a), p(&b)]);
}

#[test]
fn align_matches_library_bitwise() {
    let dir = TempDir::new().unwrap();
    let cfg = AlignmentConfig::default();
    let z0 = synthetic_latent(shape(), 5);
    let z1 = apply_transition(&dit(), &z0, 1).unwrap();
    let z0_path = write_latent(dir.path(), "z0.npy", &z0);
    let z1_path = write_latent(dir.path(), "z1.npy", &z1);
    let anchor = dir.path().join("a0.txt");
    let next = dir.path().join("a1.txt");
    let (out, low_out) = (dir.path().join("zh.npy"), dir.path().join("low.npy"));
    ok(&["anchor", p(&z0_path), "--out", p(&anchor)]);
    ok(&[
        "align", p(&z1_path), "--anchor", p(&anchor), "--out", p(&out),
        "--low-out", p(&low_out), "--anchor-out", p(&next),
    ]);

    let anchors = lfa_init(&z0, &cfg).unwrap();
    let text = fs::read_to_string(&anchor).unwrap();
    assert_eq!(deserialize_anchor(&text, Some(4)).unwrap(), *anchors.low.as_ref().unwrap());
    let step = lfa_step(&z1, &anchors, &cfg).unwrap();
    assert!(load_latent(&out, None).unwrap().bitwise_eq(&step.z_hat));
    let next = deserialize_anchor(&fs::read_to_string(&next).unwrap(), Some(4)).unwrap();
    assert_eq!(next, *step.anchors.low.as_ref().unwrap());

    // stats of the aligned low band against the anchor it was aligned to
    let stats = channel_mean_std(&load_latent(&low_out, None).unwrap());
    let a0 = anchors.low.unwrap();
    for c in 0..4 {
        assert!((stats.means[c] - a0.m_mu[c]).abs() < 1e-5);
    }
}

#[test]
fn align_high_only_with_high_anchor() {
    let dir = TempDir::new().unwrap();
    let cfg = AlignmentConfig {
        scope: lfa_core::alignment::AlignScope::HighOnly,
        ..Default::default()
    };
    let z0 = synthetic_latent(shape(), 6);
    let z1 = apply_transition(&dit(), &z0, 1).unwrap();
    let z0_path = write_latent(dir.path(), "z0.npy", &z0);
    let z1_path = write_latent(dir.path(), "z1.npy", &z1);
    let anchor = dir.path().join("h0.txt");
    let out = dir.path().join("zh.npy");
    ok(&["anchor", p(&z0_path), "--band", "high", "--out", p(&anchor)]);
    assert_eq!(
        code(&["align", p(&z1_path), "--out", p(&out), "--scope", "high_only"]),
        2
    );
    ok(&["align", p(&z1_path), "--anchor-high", p(&anchor), "--out", p(&out), "--scope", "high_only"]);
    let parts = decompose(&z0, cfg.pool);
    let anchors = AnchorSet {
        low: None,
        high: Some(anchor_init(&parts.high, &cfg).unwrap()),
    };
    let step = lfa_step(&z1, &anchors, &cfg).unwrap();
    assert!(load_latent(&out, None).unwrap().bitwise_eq(&step.z_hat));
}

#[test]
fn exit_codes_by_category() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.npy");
    fs::write(&bad, b"not an npy file").unwrap();
    let missing = dir.path().join("missing.npy");
    let constant = write_latent(
        dir.path(),
        "c.npy",
        &LatentTensor::filled(shape(), 1.0).unwrap(),
    );
    let z = write_latent(dir.path(), "z.npy", &synthetic_latent(shape(), 1));

    assert_eq!(code(&["stats", p(&bad)]), 2);
    assert_eq!(code(&["stats", p(&z), "--band", "low", "--window", "4"]), 2);
    assert_eq!(code(&["anchor", p(&constant)]), 3);
    assert_eq!(code(&["stats", p(&missing)]), 4);
    let err = lfa(&["stats", p(&missing)]);
    assert!(String::from_utf8_lossy(&err.stderr).starts_with("error[io]: "));

    let session = dir.path().join("s");
    ok(&["session", "init", p(&session), "--latent", p(&z)]);
    let mut bytes = fs::read(session.join("latents/z_0000.npy")).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(session.join("latents/z_0000.npy"), bytes).unwrap();
    assert_eq!(code(&["session", "status", p(&session)]), 5);

    let image = fake_png(dir.path(), "x.png", &synthetic_latent(shape(), 1));
    let s2 = dir.path().join("s2");
    assert_eq!(
        code(&[
            "session", "init", p(&s2), "--image", p(&image),
            "--encode-cmd", "exit 1 # {input} {output}", "--decode-cmd", FAKE_DECODE,
        ]),
        6
    );
}

/// White-box session fed `apply_transition(op, z_{k-1}, k)` reproduces the
/// in-library aligned trajectory.
#[test]
fn session_reproduces_library_trajectory() {
    let dir = TempDir::new().unwrap();
    let z0 = synthetic_latent(shape(), 8);
    let op = dit();
    let opts = TrajectoryOptions {
        turns: 10,
        lfa: Some(AlignmentConfig::default()),
        keep_latents: true,
        ..Default::default()
    };
    let traj = run_no_op_trajectory(&op, &z0, &opts).unwrap();

    let session = dir.path().join("s");
    let z0_path = write_latent(dir.path(), "z0.npy", &z0);
    let status = ok(&["session", "init", p(&session), "--latent", p(&z0_path)]);
    assert!(status.contains("turn 0\n"));

    let mut z = z0.clone();
    for k in 1..=10u64 {
        let z_tilde = apply_transition(&op, &z, k).unwrap();
        let input = write_latent(dir.path(), &format!("in{k}.npy"), &z_tilde);
        let line = ok(&["session", "step", p(&session), "--latent", p(&input)]);
        assert!(line.starts_with(&format!("turn {k} latent ")));
        z = load_latent(&session.join(format!("latents/z_{k:04}.npy")), None).unwrap();
        assert!(z.bitwise_eq(&traj.latents[k as usize - 1]), "turn {k}");
    }
    let status = ok(&["session", "status", p(&session)]);
    assert!(status.contains("turn 10\n"));
    let report = dir.path().join("report.csv");
    ok(&["session", "export", p(&session), "--out", p(&report)]);
    let text = fs::read_to_string(&report).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 11);
    let l2: f64 = rows[10].split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(l2, traj.report.last().unwrap().l2);
}

/// Every CLI step is a fresh process that reopens the session from disk, so
/// a run stepped through the binary must match one held open in-process.
#[test]
fn resumed_session_matches_uninterrupted_run() {
    let dir = TempDir::new().unwrap();
    let z0 = synthetic_latent(shape(), 9);
    let op = dit();
    let cfg = AlignmentConfig::default();
    let mut anchors = lfa_init(&z0, &cfg).unwrap();
    let mut z = z0.clone();
    let mut inputs = Vec::new();
    for k in 1..=4u64 {
        let z_tilde = apply_transition(&op, &z, k).unwrap();
        let step = lfa_step(&z_tilde, &anchors, &cfg).unwrap();
        anchors = step.anchors;
        z = step.z_hat;
        inputs.push(write_latent(dir.path(), &format!("in{k}.npy"), &z_tilde));
    }
    let z0_path = write_latent(dir.path(), "z0.npy", &z0);

    let straight = dir.path().join("straight");
    ok(&["session", "init", p(&straight), "--latent", p(&z0_path)]);
    let mut s = Session::open(&straight).unwrap();
    for input in &inputs {
        s.step(StepInput::Latent(load_latent(input, None).unwrap())).unwrap();
    }
    let want_status = s.status();
    assert_eq!(s.anchors(), &anchors);
    drop(s);

    let resumed = dir.path().join("resumed");
    ok(&["session", "init", p(&resumed), "--id", "straight", "--latent", p(&z0_path)]);
    for input in &inputs {
        ok(&["session", "step", p(&resumed), "--latent", p(input)]);
    }
    assert_eq!(ok(&["session", "status", p(&resumed)]), want_status);
    for k in 0..=4 {
        let rel = format!("latents/z_{k:04}.npy");
        assert_eq!(fs::read(straight.join(&rel)).unwrap(), fs::read(resumed.join(&rel)).unwrap());
    }
    assert!(load_latent(&resumed.join("latents/z_0004.npy"), None).unwrap().bitwise_eq(&z));
}

#[test]
fn black_box_session_through_fake_adapter() {
    let dir = TempDir::new().unwrap();
    let cfg = AlignmentConfig::default();
    let z0 = synthetic_latent(shape(), 10);
    let image0 = fake_png(dir.path(), "x0.png", &z0);
    let session = dir.path().join("s");
    ok(&[
        "session", "init", p(&session), "--image", p(&image0),
        "--encode-cmd", FAKE_ENCODE, "--decode-cmd", FAKE_DECODE, "--adapter-timeout", "30",
    ]);
    let mut anchors = lfa_init(&z0, &cfg).unwrap();
    let mut z = z0.clone();
    for k in 1..=3u64 {
        let edited = apply_transition(&dit(), &z, k).unwrap();
        let image = fake_png(dir.path(), &format!("e{k}.png"), &edited);
        let line = ok(&["session", "step", p(&session), "--image", p(&image)]);
        assert!(line.trim_end().ends_with(&format!("images/x_{k:04}.png")), "{line}");

        let step = lfa_step(&edited, &anchors, &cfg).unwrap();
        let png = fs::read(session.join(format!("images/x_{k:04}.png"))).unwrap();
        assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
        let decoded = lfa_core::latent::read_latent(&mut &png[8..], None).unwrap();
        assert!(decoded.bitwise_eq(&step.z_hat));

        // the aligned low band carries the anchor moments
        let a = anchors.low.as_ref().unwrap();
        let stats = channel_mean_std(&step.aligned_low);
        for c in 0..4 {
            assert!((stats.means[c] - a.m_mu[c]).abs() < 1e-5);
        }
        anchors = step.anchors;
        z = decoded;
    }
    let status = ok(&["session", "status", p(&session)]);
    assert!(status.contains("turn 3\n"));
}

#[test]
fn failing_adapters_leave_the_session_untouched() {
    let dir = TempDir::new().unwrap();
    let z0 = synthetic_latent(shape(), 11);
    let z0_path = write_latent(dir.path(), "z0.npy", &z0);
    let image = fake_png(dir.path(), "x.png", &z0);
    let cases = [
        ("timeout", "sleep 20; tail -c +9 {input} > {output}", FAKE_DECODE),
        ("extra", "o={output}; tail -c +9 {input} > \"$o\"; touch \"$o.extra\"", FAKE_DECODE),
        ("exit", "echo boom >&2; exit 3 # {input} {output}", FAKE_DECODE),
        ("missing", "true {input} {output}", FAKE_DECODE),
        ("decode", FAKE_ENCODE, "echo not-png > {output} # {input}"),
    ];
    for (name, enc, dec) in cases {
        let session = dir.path().join(name);
        ok(&[
            "session", "init", p(&session), "--latent", p(&z0_path),
            "--encode-cmd", enc, "--decode-cmd", dec, "--adapter-timeout", "1",
        ]);
        let manifest = fs::read(session.join("manifest.txt")).unwrap();
        let started = std::time::Instant::now();
        let out = lfa(&["session", "step", p(&session), "--image", p(&image)]);
        assert_eq!(out.status.code(), Some(6), "{name}");
        assert!(started.elapsed().as_secs() < 15, "{name} took too long");
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.starts_with("error[adapter]: "), "{stderr}");
        if name == "exit" {
            assert!(stderr.contains("boom"), "{stderr}");
        }
        assert_eq!(fs::read(session.join("manifest.txt")).unwrap(), manifest, "{name}");
        assert!(!session.join("latents/z_0001.npy").exists());
        assert!(ok(&["session", "status", p(&session)]).contains("turn 0\n"));
    }
}

#[test]
fn timeout_env_overrides_the_session_setting() {
    let dir = TempDir::new().unwrap();
    let z0 = synthetic_latent(shape(), 12);
    let z0_path = write_latent(dir.path(), "z0.npy", &z0);
    let image = fake_png(dir.path(), "x.png", &z0);
    let session = dir.path().join("s");
    ok(&[
        "session", "init", p(&session), "--latent", p(&z0_path),
        "--encode-cmd", "sleep 20; tail -c +9 {input} > {output}", "--decode-cmd", FAKE_DECODE,
        "--adapter-timeout", "300",
    ]);
    let out = Command::new(env!("CARGO_BIN_EXE_lfa"))
        .args(["session", "step", p(&session), "--image", p(&image)])
        .env(TIMEOUT_ENV, "1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(6));
}

fn simulate(dir: &Path, name: &str, config: &str) -> (PathBuf, String) {
    let conf = dir.join(format!("{name}.conf"));
    fs::write(&conf, config).unwrap();
    let out = dir.join(name);
    let line = ok(&["simulate", p(&conf), "--out", p(&out)]);
    (out, line)
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let config = "seeds = 3\nturns = 4\nshape = 2x16x16\nspectrum_turns = 2,4\nbootstrap.resamples = 200\n";
    let (a, line_a) = simulate(dir.path(), "a", config);
    let (b, line_b) = simulate(dir.path(), "b", config);
    assert_eq!(line_a, line_b);
    let (fa, fb) = (dir_contents(&a), dir_contents(&b));
    assert!(fa.iter().any(|(n, _)| n == "summary.csv"));
    assert!(fa.iter().any(|(n, _)| n == "seed0_lfa_spectrum_turn4.csv"), "{:?}", fa.iter().map(|f| &f.0).collect::<Vec<_>>());
    assert_eq!(fa, fb);
}

#[test]
fn identity_attribution_is_undefined_everywhere() {
    let dir = TempDir::new().unwrap();
    let config = "experiment = attribution\nseeds = 2\nturns = 3\nshape = 2x16x16\nbins = 10\n\
        dit.low_bias_scale = 0\ndit.low_gain = 1\ndit.high_noise_scale = 0\n\
        vae.flat_noise_scale = 0\nvae.low_regularize = 0\n";
    let (out, _) = simulate(dir.path(), "att", config);
    let text = fs::read_to_string(out.join("seed0_attribution.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.ends_with(',')), "{text}");
}

#[test]
fn simulate_rejects_unknown_keys() {
    let dir = TempDir::new().unwrap();
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "turnz = 3\n").unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&["simulate", p(&conf), "--out", p(&out)]), 2);
}
