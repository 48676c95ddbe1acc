//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion (outside
//! the test harness's output capture) and fails if any criterion fails.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use schedlab::config::{parse_config, SweepSpec};
use schedlab::data::ar1_covariance;
use schedlab::denoiser::{
    mlp_backward, mlp_forward_cached, mse_loss, oracle_denoise_mse, DenoiserParams, GaussianOracle,
    MlpArch,
};
use schedlab::forward::{diffuse, CompoundSchedule, Normalization};
use schedlab::metrics::covariance_error;
use schedlab::numeric::{gaussian, mean_std, Rng, Tensor};
use schedlab::output::write_samples_csv;
use schedlab::sampler::{generate, SamplerConfig};
use schedlab::schedule::{gamma, log_snr, ScheduleSpec, REFERENCE_SCHEDULES};
use schedlab::sweep::{best_scale, run_cell, run_sweep, score, SweepContext};
use schedlab::training::{
    adam_step, ema_update, lamb_layer_update, lamb_step, trust_ratio, OptimizerHyper,
    OptimizerState,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Runs one criterion, checks its time budget and prints its line.
fn criterion(id: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = f();
    let took = start.elapsed();
    let pass = o.pass && took <= budget;
    let line = format!(
        "criterion {id:>2} [{}] {name}: {} ({:.2}s of {}s budget)\n",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        took.as_secs_f64(),
        budget.as_secs()
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    pass
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn schedules() -> Vec<ScheduleSpec> {
    REFERENCE_SCHEDULES.iter().map(|s| s.parse().unwrap()).collect()
}

fn c1_schedules() -> Outcome {
    let mut worst_cos = 0.0f64;
    let mut problems = Vec::new();
    for s in schedules() {
        if gamma(&s, 0.0).unwrap() != 1.0 || gamma(&s, 1.0).unwrap() != s.clip_min {
            problems.push(format!("{s}: endpoints"));
        }
        let mut prev = f64::INFINITY;
        for k in 0..1000 {
            let g = gamma(&s, k as f64 / 999.0).unwrap();
            if g > prev {
                problems.push(format!("{s}: rises at k={k}"));
                break;
            }
            prev = g;
        }
    }
    let cos = ScheduleSpec::cosine(0.0, 1.0, 1.0).unwrap();
    for k in 0..1000 {
        let t = k as f64 / 999.0;
        let exact = (t * std::f64::consts::FRAC_PI_2).cos().powi(2).max(cos.clip_min);
        worst_cos = worst_cos.max((gamma(&cos, t).unwrap() - exact).abs());
    }
    let pass = problems.is_empty() && worst_cos < 1e-12;
    outcome(
        pass,
        format!(
            "{} schedules, cosine max deviation {worst_cos:.1e}{}",
            REFERENCE_SCHEDULES.len(),
            if problems.is_empty() { String::new() } else { format!(", problems: {problems:?}") }
        ),
    )
}

fn c2_logsnr_shift() -> Outcome {
    let mut worst = 0.0f64;
    for s in schedules() {
        for k in 1..1000 {
            let t = k as f64 / 1000.0;
            let g = gamma(&s, t).unwrap();
            if g <= s.clip_min || g >= 1.0 {
                continue;
            }
            let base = log_snr(&s, t, 1.0).unwrap();
            for j in 1..=10 {
                let b = j as f64 / 10.0;
                let d = log_snr(&s, t, b).unwrap() - base - 2.0 * b.ln();
                worst = worst.max(d.abs());
            }
        }
    }
    outcome(worst < 1e-9, format!("max deviation {worst:.2e} (< 1e-9)"))
}

fn c3_variance_law() -> Outcome {
    let n = 100_000;
    let x0 = gaussian(&mut Rng::seed(30), &[n, 1]).unwrap();
    let mut worst = 0.0f64;
    for (i, g) in [0.1, 0.3, 0.5, 0.7, 0.9].into_iter().enumerate() {
        for (j, b) in [0.2, 0.4, 0.6, 0.8, 1.0].into_iter().enumerate() {
            let cs = CompoundSchedule::new(ScheduleSpec::linear(), b, Normalization::Off).unwrap();
            let t = vec![1.0 - g; n];
            let mut rng = Rng::seed(1000 + (i * 5 + j) as u64);
            let s = diffuse(&x0, &t, &mut rng, &cs).unwrap();
            let (_, sd) = mean_std(&s.x_t, false).unwrap();
            let expected = (b * b - 1.0) * s.gamma_t[0] + 1.0;
            worst = worst.max((sd.data()[0].powi(2) / expected - 1.0).abs());
        }
    }
    outcome(worst < 0.02, format!("max relative deviation {:.3}% (< 2%)", worst * 100.0))
}

fn c4_gradient_check() -> Outcome {
    let archs = [
        MlpArch::new(2, vec![8], 4).unwrap(),
        MlpArch {
            cond_classes: Some(3),
            ..MlpArch::new(3, vec![6, 5], 4).unwrap()
        },
        MlpArch {
            cond_classes: Some(2),
            self_cond: true,
            ..MlpArch::new(4, vec![5, 4, 3], 6).unwrap()
        },
    ];
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (a, arch) in archs.iter().enumerate() {
        for batch in 0..5 {
            let mut rng = Rng::seed(400 + (a * 5 + batch) as u64);
            let p = DenoiserParams::init_random(arch, &mut rng, 1.0);
            let bs = 3 + batch;
            let x = gaussian(&mut rng, &[bs, arch.in_dim]).unwrap();
            let target = gaussian(&mut rng, &[bs, arch.in_dim]).unwrap();
            let t: Vec<f64> = (0..bs).map(|_| rng.uniform()).collect();
            let labels: Option<Vec<usize>> = arch
                .cond_classes
                .map(|k| (0..bs).map(|_| rng.below(k + 1)).collect());
            let sc = arch.self_cond.then(|| gaussian(&mut rng, &[bs, arch.in_dim]).unwrap());
            let loss = |q: &DenoiserParams| {
                let (out, _) = mlp_forward_cached(q, &x, &t, labels.as_deref(), sc.as_ref()).unwrap();
                mse_loss(&out, &target).unwrap().0
            };
            let (out, cache) = mlp_forward_cached(&p, &x, &t, labels.as_deref(), sc.as_ref()).unwrap();
            let (_, dl) = mse_loss(&out, &target).unwrap();
            let grads = mlp_backward(&p, &cache, &dl).unwrap();
            let analytic = grads.flatten();
            let mut q = p.clone();
            let mut idx = 0;
            for ti in 0..q.tensors().len() {
                for e in 0..q.tensors()[ti].len() {
                    let orig = q.tensors()[ti].data()[e];
                    q.tensors_mut()[ti].data_mut()[e] = orig + h;
                    let up = loss(&q);
                    q.tensors_mut()[ti].data_mut()[e] = orig - h;
                    let down = loss(&q);
                    q.tensors_mut()[ti].data_mut()[e] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let a = analytic[idx];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                    worst = worst.max(rel);
                    idx += 1;
                }
            }
        }
    }
    outcome(worst < 1e-4, format!("3 archs x 5 batches, max relative error {worst:.2e} (< 1e-4)"))
}

fn c5_redundancy() -> Outcome {
    let rhos = [0.0, 0.25, 0.5, 0.75, 0.9, 0.99];
    let oracles: Vec<GaussianOracle> = rhos
        .iter()
        .map(|&r| GaussianOracle::new(ar1_covariance(32, r).unwrap()).unwrap())
        .collect();
    let mut violations = Vec::new();
    for g in [0.3, 0.5, 0.7, 0.9] {
        let mses: Vec<f64> = oracles.iter().map(|o| oracle_denoise_mse(o, g, 1.0).unwrap()).collect();
        for k in 1..mses.len() {
            if !(mses[k] < mses[k - 1]) {
                violations.push(format!("gamma={g}: rho {} -> {}", rhos[k - 1], rhos[k]));
            }
        }
    }
    outcome(
        violations.is_empty(),
        if violations.is_empty() {
            "Bayes MSE strictly decreasing in rho at all 4 noise levels".into()
        } else {
            format!("not decreasing: {violations:?}")
        },
    )
}

/// Oracle-sampled AR(1) data at scale `b`; returns samples and their error.
fn oracle_closure(b: f64) -> (Tensor, f64) {
    let sigma = ar1_covariance(16, 0.9).unwrap();
    let oracle = GaussianOracle::new(sigma.clone()).unwrap();
    let cs = CompoundSchedule::new(ScheduleSpec::linear(), b, Normalization::Off).unwrap();
    let sc = SamplerConfig {
        steps: 100,
        seed: 60,
        ..Default::default()
    };
    let x = generate(&oracle, &cs, &sc, 10_000, 16, None).unwrap();
    let err = covariance_error(&x, &sigma).unwrap();
    (x, err)
}

fn c6_oracle_closure(files: &mut Vec<(String, PathBuf)>, dir: &Path) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for b in [1.0, 0.5] {
        let (x, err) = oracle_closure(b);
        pass &= err < 0.10;
        parts.push(format!("b={b}: {err:.4}"));
        let path = dir.join(format!("oracle_b{b}.csv"));
        write_samples_csv(&path, &x).unwrap();
        files.push((format!("oracle b={b}"), path));
    }
    outcome(pass, format!("covariance error {} (< 0.10)", parts.join(", ")))
}

fn c7_table4_trend() -> Outcome {
    let mut best = Vec::new();
    for rho in [0.0, 0.5, 0.9] {
        let text = format!(
            r#"
[sweep]
mode = "oracle"
schedules = ["linear"]
scales = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
seed = 7

[dataset]
kind = "ar1:16,{rho}"

[sampler]
steps = 25
inference_schedule = "training"

[eval]
n_samples = 20000
"#
        );
        let spec = SweepSpec::from_toml(&text, "criterion-7").unwrap();
        let result = run_sweep(&spec).unwrap();
        best.push((rho, best_scale(&result).unwrap()));
    }
    let pass = best[2].1 <= best[1].1 && best[1].1 <= best[0].1;
    let shown: Vec<String> = best.iter().map(|(r, b)| format!("b*(rho={r})={b}")).collect();
    outcome(pass, format!("{} (must be non-increasing)", shown.join(", ")))
}

struct ToyRun {
    samples: Tensor,
    sw_model: f64,
    sw_normal: f64,
}

fn toy_run() -> ToyRun {
    let spec = parse_config(fixture("toy_mixture.toml")).unwrap();
    let ctx = SweepContext::new(&spec).unwrap();
    let cell = run_cell(&spec, &ctx, 0, 0).unwrap();
    let z = gaussian(&mut Rng::seed(0x4e4f524d), &[spec.eval.n_samples, 2]).unwrap();
    let metric = spec.metric();
    ToyRun {
        sw_model: cell.report.value,
        sw_normal: score(&spec, &ctx, metric, &z, 0).unwrap().value,
        samples: cell.samples,
    }
}

/// `key,value` pairs from the committed reference run.
fn reference_values() -> Vec<(String, f64)> {
    let text = std::fs::read_to_string(fixture("toy_mixture_reference.csv")).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let (k, v) = l.split_once(',').unwrap();
            (k.to_string(), v.parse().unwrap())
        })
        .collect()
}

fn c8_toy_training(files: &mut Vec<(String, PathBuf)>, dir: &Path) -> Outcome {
    let run = toy_run();
    let ratio = run.sw_model / run.sw_normal;
    let path = dir.join("toy_samples.csv");
    write_samples_csv(&path, &run.samples).unwrap();
    files.push(("toy mixture".into(), path));
    let reference = reference_values();
    let ref_ratio = reference
        .iter()
        .find(|(k, _)| k == "ratio")
        .map(|(_, v)| *v)
        .unwrap();
    outcome(
        ratio < 0.3 && ref_ratio < 0.3,
        format!(
            "SW(samples)={:.4}, SW(normal)={:.4}, ratio {ratio:.3} (< 0.3; reference run {ref_ratio:.3})",
            run.sw_model, run.sw_normal
        ),
    )
}

fn c9_determinism(files: &[(String, PathBuf)], dir: &Path) -> Outcome {
    let mut reruns = Vec::new();
    for b in [1.0, 0.5] {
        let (x, _) = oracle_closure(b);
        let path = dir.join(format!("rerun_oracle_b{b}.csv"));
        write_samples_csv(&path, &x).unwrap();
        reruns.push(path);
    }
    let toy = toy_run();
    let path = dir.join("rerun_toy_samples.csv");
    write_samples_csv(&path, &toy.samples).unwrap();
    reruns.push(path);

    if files.len() != reruns.len() {
        return outcome(false, format!("expected {} first-run files, have {}", reruns.len(), files.len()));
    }
    let mismatched: Vec<&str> = files
        .iter()
        .zip(&reruns)
        .filter(|((_, a), b)| std::fs::read(a).unwrap() != std::fs::read(b).unwrap())
        .map(|((name, _), _)| name.as_str())
        .collect();
    outcome(
        mismatched.is_empty(),
        if mismatched.is_empty() {
            format!("{} sample files bit-identical on rerun", files.len())
        } else {
            format!("differ on rerun: {mismatched:?}")
        },
    )
}

fn c10_optimizers() -> Outcome {
    let arch = MlpArch::new(2, vec![3], 2).unwrap();
    let p0 = DenoiserParams::init_random(&arch, &mut Rng::seed(100), 1.0);
    let zero = p0.zeros_like();
    let h = OptimizerHyper {
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut checks = Vec::new();

    let mut p = p0.clone();
    adam_step(&mut p, &zero, &mut OptimizerState::new(&p0), 0.1, &h).unwrap();
    checks.push(("adam zero-grad fixed point", p == p0));

    let mut p = p0.clone();
    lamb_step(&mut p, &zero, &mut OptimizerState::new(&p0), 0.1, &h).unwrap();
    checks.push(("lamb zero-grad fixed point", p == p0));

    let theta = [0.5, -1.5, 2.0, 0.1];
    let dir = [0.2, 0.4, -0.1, 1.0];
    let c = 4.0;
    let scaled = theta.map(|v| v * c);
    let base = lamb_layer_update(&theta, &dir, 0.0, 0.01);
    let up = lamb_layer_update(&scaled, &dir, 0.0, 0.01);
    let homogeneous = trust_ratio(&scaled, &dir) == c * trust_ratio(&theta, &dir)
        && up.iter().zip(&base).all(|(u, b)| *u == c * b);
    checks.push(("trust ratio homogeneity", homogeneous));

    let unit = MlpArch::new(1, vec![1], 0).unwrap();
    let mut ones = DenoiserParams::zeros(&unit);
    ones.tensors_mut().into_iter().for_each(|t| t.data_mut().fill(1.0));
    let mut ema = DenoiserParams::zeros(&unit);
    let decay: f64 = 0.5;
    for _ in 0..10 {
        ema_update(&mut ema, &ones, decay).unwrap();
    }
    let geometric = ema.flatten().iter().all(|&v| v == 1.0 - decay.powi(10));
    checks.push(("EMA geometric series", geometric));

    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} exact checks", checks.len())
        } else {
            format!("failed: {failed:?}")
        },
    )
}

#[test]
fn acceptance_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    let secs = Duration::from_secs;
    let results = [
        criterion(1, "schedule correctness", secs(1), c1_schedules),
        criterion(2, "logSNR shift by 2 ln b", secs(1), c2_logsnr_shift),
        criterion(3, "forward variance law", secs(10), c3_variance_law),
        criterion(4, "MLP gradient check", secs(30), c4_gradient_check),
        criterion(5, "redundancy lowers Bayes MSE", secs(5), c5_redundancy),
        criterion(6, "oracle closure and unscaling", secs(120), || {
            c6_oracle_closure(&mut files, dir.path())
        }),
        criterion(7, "optimal scale shrinks with redundancy", secs(600), c7_table4_trend),
        criterion(8, "end-to-end toy training", secs(900), || {
            c8_toy_training(&mut files, dir.path())
        }),
        criterion(9, "rerun determinism", secs(900), || c9_determinism(&files, dir.path())),
        criterion(10, "optimizer unit suite", secs(1), c10_optimizers),
    ];
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
