//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{brute_stats, naive_pool, random_shape, random_tensor, rng};
use lfa_core::alignment::{
    align_low, anchor_update, lfa_init, lfa_step, AlignScope, AlignmentConfig, AnchorMode,
    AnchorState,
};
use lfa_core::drift::{
    apply_transition, run_no_op_trajectory, synthetic_latent, SyntheticDitParams,
    TransitionOperator, TrajectoryOptions,
};
use lfa_core::latent::{
    channel_mean_std, decompose, load_latent, low_pass, save_latent, LatentTensor,
    PoolingFilterSpec, Shape,
};
use lfa_core::pipeline::simulate::Arm;
use lfa_core::pipeline::{run_simulation, SimConfig, SimOutcome};
use lfa_core::spectral::parseval_check;
use rand::Rng;

type Verdict = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Verdict);

fn recombination() -> Verdict {
    let started = Instant::now();
    let mut r = rng(100);
    let mut worst = 0.0f64;
    let mut elements = 0usize;
    for _ in 0..1000 {
        let shape = random_shape(&mut r, 32, 64);
        let scale = r.random_range(0.01..100.0);
        let z = random_tensor(&mut r, shape, scale);
        let parts = decompose(&z, PoolingFilterSpec::default());
        let back = parts.recombine().map_err(|e| e.to_string())?;
        worst = worst.max(back.max_abs_diff(&z).map_err(|e| e.to_string())?);
        elements += shape.len();
    }
    let elapsed = started.elapsed();
    Ok((
        worst == 0.0 && elapsed < Duration::from_secs(30),
        format!("1000 tensors ({elements} values), max |z - (low + high)| = {worst:e}, {elapsed:.1?} (limit 30s)"),
    ))
}

fn statistics_oracle() -> Verdict {
    let mut r = rng(101);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let shape = random_shape(&mut r, 16, 48);
        let scale = r.random_range(0.01..10.0);
        let z = random_tensor(&mut r, shape, scale);
        let got = channel_mean_std(&z);
        let (means, stds) = brute_stats(&z);
        for c in 0..shape.channels {
            worst = worst.max((got.means[c] - means[c]).abs()).max((got.stds[c] - stds[c]).abs());
        }
    }
    Ok((worst <= 1e-6, format!("200 tensors, max deviation {worst:e} (tol 1e-6)")))
}

fn pooling_oracle() -> Verdict {
    let mut r = rng(102);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let shape = random_shape(&mut r, 4, 40);
        let scale = r.random_range(0.1..10.0);
        let z = random_tensor(&mut r, shape, scale);
        for window in [3, 5, 9] {
            let got = low_pass(&z, PoolingFilterSpec::new(window).map_err(|e| e.to_string())?);
            for (g, w) in got.data().iter().zip(naive_pool(&z, window)) {
                worst = worst.max((*g as f64 - w).abs());
            }
        }
    }
    Ok((worst <= 1e-5, format!("100 tensors x window {{3,5,9}}, max deviation {worst:e} (tol 1e-5)")))
}

fn parseval() -> Verdict {
    let mut r = rng(103);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let shape = random_shape(&mut r, 8, 64);
        let scale = r.random_range(0.01..10.0);
        let z = random_tensor(&mut r, shape, scale);
        worst = parseval_check(&z).into_iter().fold(worst, f64::max);
    }
    Ok((worst < 1e-5, format!("200 tensors, max relative gap {worst:e} (tol 1e-5)")))
}

fn alignment_post_statistics() -> Verdict {
    let mut r = rng(104);
    let cfg = AlignmentConfig::default();
    let (mut worst_mu, mut worst_sigma) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let shape = random_shape(&mut r, 16, 48);
        let scale = r.random_range(0.01..10.0);
        let band = low_pass(&random_tensor(&mut r, shape, scale), cfg.pool);
        let anchor = AnchorState {
            m_mu: (0..shape.channels).map(|_| r.random_range(-3.0..3.0)).collect(),
            m_log_sigma: (0..shape.channels).map(|_| r.random_range(-2.0..1.0)).collect(),
            turn: 0,
            mode: AnchorMode::Ema,
        };
        let out = align_low(&band, &anchor, &cfg).map_err(|e| e.to_string())?;
        let (_, sigma) = brute_stats(&band);
        let (means, stds) = brute_stats(&out);
        for c in 0..shape.channels {
            let want = anchor.m_log_sigma[c].exp() * sigma[c] / (sigma[c] + cfg.epsilon);
            worst_mu = worst_mu.max((means[c] - anchor.m_mu[c]).abs());
            worst_sigma = worst_sigma.max((stds[c] - want).abs());
        }
    }
    Ok((
        worst_mu <= 1e-5 && worst_sigma <= 1e-5,
        format!("200 pairs, max mean error {worst_mu:e}, max std error {worst_sigma:e} (tol 1e-5)"),
    ))
}

fn ema_algebra() -> Verdict {
    let cfg = AlignmentConfig::default();
    let mut r = rng(105);
    let shape = Shape::new(4, 16, 16).map_err(|e| e.to_string())?;
    let input = random_tensor(&mut r, shape, 1.5);
    let (means, stds) = brute_stats(&input);
    let start = AnchorState {
        m_mu: vec![1.0, -0.5, 0.0, 2.0],
        m_log_sigma: vec![0.3, -0.7, 0.0, 1.2],
        turn: 0,
        mode: AnchorMode::Ema,
    };
    let mut state = start.clone();
    let mut worst = 0.0f64;
    for k in 1..=50 {
        state = anchor_update(&state, &input, &cfg).map_err(|e| e.to_string())?;
        for c in 0..4 {
            let mu = means[c] + cfg.alpha_mu.powi(k) * (start.m_mu[c] - means[c]);
            let ls = stds[c].ln() + cfg.alpha_sigma.powi(k) * (start.m_log_sigma[c] - stds[c].ln());
            worst = worst.max((state.m_mu[c] - mu).abs()).max((state.m_log_sigma[c] - ls).abs());
        }
    }
    Ok((
        worst <= 1e-6,
        format!("alpha_mu {} alpha_sigma {}, 50 turns, max deviation {worst:e} (tol 1e-6)", cfg.alpha_mu, cfg.alpha_sigma),
    ))
}

fn turn_one_modes() -> Verdict {
    let shape = Shape::new(4, 32, 32).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for seed in 0..20 {
        let z0 = synthetic_latent(shape, seed);
        let z1 = apply_transition(&dit(seed), &z0, 1).map_err(|e| e.to_string())?;
        let outputs: Vec<LatentTensor> = [AnchorMode::Fixed, AnchorMode::Prev, AnchorMode::Ema]
            .into_iter()
            .map(|mode| {
                let cfg = AlignmentConfig {
                    anchor_mode: mode,
                    ..AlignmentConfig::default()
                };
                lfa_step(&z1, &lfa_init(&z0, &cfg)?, &cfg).map(|s| s.z_hat)
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        if !(outputs[0].bitwise_eq(&outputs[1]) && outputs[0].bitwise_eq(&outputs[2])) {
            return Ok((false, format!("seed {seed}: z_hat differs between modes")));
        }
        compared += 1;
    }
    Ok((true, format!("{compared} seeds, fixed/prev/ema z_hat bitwise identical at k=1")))
}

fn dit(seed: u64) -> TransitionOperator {
    TransitionOperator::synthetic_dit(
        SyntheticDitParams {
            bias_seed: seed,
            ..Default::default()
        },
        seed,
    )
}

fn simulate(config: &str, out: &Path) -> Result<SimOutcome, String> {
    let cfg = SimConfig::parse(config).map_err(|e| e.to_string())?;
    run_simulation(&cfg, out).map_err(|e| e.to_string())
}

fn attribution() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let started = Instant::now();
    let outcome = simulate("experiment = attribution\nseeds = 20\nturns = 10\n", dir.path())?;
    let elapsed = started.elapsed();
    let (tally, _) = outcome.attribution.ok_or("no attribution outcome")?;
    let (low, high) = (tally.low_fraction(), tally.high_fraction());
    Ok((
        low >= 0.9 && high >= 0.9 && elapsed < Duration::from_secs(120),
        format!(
            "20 seeds, K=10: r<0.2 positive {}/{} ({:.1}%), r>0.5 negative {}/{} ({:.1}%), {elapsed:.1?} (need >= 90% each, < 2 min)",
            tally.low_positive,
            tally.low_defined,
            100.0 * low,
            tally.high_negative,
            tally.high_defined,
            100.0 * high
        ),
    ))
}

/// Per-seed final-turn L2 of both arms.
fn l2_pairs(outcome: &SimOutcome) -> Vec<(f64, f64)> {
    outcome
        .runs
        .iter()
        .map(|run| (run.last(Arm::Baseline).unwrap().l2, run.last(Arm::Lfa).unwrap().l2))
        .collect()
}

fn mean_reduction(pairs: &[(f64, f64)]) -> f64 {
    let base: f64 = pairs.iter().map(|p| p.0).sum();
    let lfa: f64 = pairs.iter().map(|p| p.1).sum();
    1.0 - lfa / base
}

const NO_OP_SUITE: &str = "experiment = no_op\nseeds = 20\nturns = 10\nop = synthetic_dit\npaired = true\nbootstrap.resamples = 500\n";

fn suppression() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let outcome = simulate(NO_OP_SUITE, dir.path())?;
    let wins = outcome
        .runs
        .iter()
        .filter(|run| {
            let (b, l) = (run.last(Arm::Baseline).unwrap(), run.last(Arm::Lfa).unwrap());
            l.l2 < b.l2 && l.mu_disp < b.mu_disp && l.sigma_disp < b.sigma_disp
        })
        .count();
    let reduction = mean_reduction(&l2_pairs(&outcome));
    let ci = outcome.paired_l2.as_ref().map(|s| format!(", L2 diff CI [{:.4}, {:.4}]", s.ci_low, s.ci_high)).unwrap_or_default();
    Ok((
        wins >= 19 && reduction >= 0.30,
        format!(
            "{wins}/20 seeds smaller in L2, low-band mu and sigma displacement; mean L2 reduction {:.1}%{ci} (need >= 19/20, >= 30%)",
            100.0 * reduction
        ),
    ))
}

fn scope_ablation() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut reductions = Vec::new();
    for scope in [AlignScope::LowOnly, AlignScope::HighOnly] {
        let out = dir.path().join(scope.as_str());
        let outcome = simulate(&format!("{NO_OP_SUITE}lfa.scope = {}\n", scope.as_str()), &out)?;
        reductions.push(mean_reduction(&l2_pairs(&outcome)));
    }
    Ok((
        reductions[0] >= reductions[1],
        format!(
            "mean L2 reduction low_only {:.1}% vs high_only {:.1}%",
            100.0 * reductions[0],
            100.0 * reductions[1]
        ),
    ))
}

fn dir_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let bytes = fs::read(entry.path()).map_err(|e| e.to_string())?;
        files.push((entry.file_name().to_string_lossy().into_owned(), bytes));
    }
    files.sort();
    Ok(files)
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let configs = [
        "experiment = no_op\nseeds = 4\nop = composed\nspectrum_turns = 5,10\n",
        "experiment = cycle\nseeds = 4\npairs = 5\nspectrum_turns = 5\n",
        "experiment = attribution\nseeds = 4\n",
        "experiment = no_op\nseeds = 3\npaired = false\nlfa.anchor_mode = prev\nlfa.scope = both\n",
    ];
    let mut files = 0;
    for (i, config) in configs.iter().enumerate() {
        let (a, b) = (dir.path().join(format!("{i}a")), dir.path().join(format!("{i}b")));
        simulate(config, &a)?;
        simulate(config, &b)?;
        let (fa, fb) = (dir_bytes(&a)?, dir_bytes(&b)?);
        if fa != fb {
            return Ok((false, format!("config {i}: report files differ between runs")));
        }
        files += fa.len();
    }
    Ok((true, format!("{} configs run twice, {files} report files byte-identical", configs.len())))
}

fn lfa_bin(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lfa"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("lfa {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn cli_and_resume() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let path = |name: &str| d.join(name).to_string_lossy().into_owned();
    let shape = Shape::new(4, 32, 32).map_err(|e| e.to_string())?;
    let cfg = AlignmentConfig::default();
    let op = dit(3);
    let z0 = synthetic_latent(shape, 3);
    save_latent(&z0, &d.join("z0.npy")).map_err(|e| e.to_string())?;

    let opts = TrajectoryOptions {
        turns: 10,
        lfa: Some(cfg),
        keep_latents: true,
        ..Default::default()
    };
    let traj = run_no_op_trajectory(&op, &z0, &opts).map_err(|e| e.to_string())?;

    // file-level align chain: anchor from z0, then align + advance each turn
    lfa_bin(&["anchor", &path("z0.npy"), "--out", &path("a0.txt")])?;
    let mut align_mismatch = None;
    let mut z = z0.clone();
    for k in 1..=10u64 {
        let z_tilde = apply_transition(&op, &z, k).map_err(|e| e.to_string())?;
        let input = format!("in{k}.npy");
        save_latent(&z_tilde, &d.join(&input)).map_err(|e| e.to_string())?;
        lfa_bin(&[
            "align", &path(&input),
            "--anchor", &path(&format!("a{}.txt", k - 1)),
            "--anchor-out", &path(&format!("a{k}.txt")),
            "--out", &path(&format!("cli{k}.npy")),
        ])?;
        z = load_latent(&d.join(format!("cli{k}.npy")), None).map_err(|e| e.to_string())?;
        if align_mismatch.is_none() && !z.bitwise_eq(&traj.latents[k as usize - 1]) {
            align_mismatch = Some(k);
        }
    }

    // session driven one process per turn, i.e. reopened from disk each time
    lfa_bin(&["session", "init", &path("s"), "--latent", &path("z0.npy")])?;
    let mut session_mismatch = None;
    for k in 1..=10u64 {
        lfa_bin(&["session", "step", &path("s"), "--latent", &path(&format!("in{k}.npy"))])?;
        let zk = load_latent(&d.join(format!("s/latents/z_{k:04}.npy")), None).map_err(|e| e.to_string())?;
        if session_mismatch.is_none() && !zk.bitwise_eq(&traj.latents[k as usize - 1]) {
            session_mismatch = Some(k);
        }
    }
    let anchors_match = {
        let s = lfa_core::pipeline::Session::open(&d.join("s")).map_err(|e| e.to_string())?;
        Some(s.anchors()) == traj.anchors.as_ref()
    };
    let detail = match (align_mismatch, session_mismatch) {
        (None, None) if anchors_match => "10-turn CLI align chain and resumed CLI session equal the library trajectory bitwise, anchors equal".to_string(),
        _ => format!("first align mismatch {align_mismatch:?}, first session mismatch {session_mismatch:?}, anchors equal {anchors_match}"),
    };
    Ok((align_mismatch.is_none() && session_mismatch.is_none() && anchors_match, detail))
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("recombination identity", recombination),
        ("statistics oracle", statistics_oracle),
        ("pooling oracle", pooling_oracle),
        ("parseval", parseval),
        ("alignment post-statistics", alignment_post_statistics),
        ("ema algebra", ema_algebra),
        ("turn-1 mode equivalence", turn_one_modes),
        ("attribution asymmetry", attribution),
        ("lfa suppression", suppression),
        ("scope ablation", scope_ablation),
        ("determinism", determinism),
        ("cli/library equivalence and session resume", cli_and_resume),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let (pass, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        failed += usize::from(!pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
