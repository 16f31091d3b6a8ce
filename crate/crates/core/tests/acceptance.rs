//! End-to-end acceptance checks. Each criterion prints one `PASS` or `FAIL`
//! line with the measured values; the process exits non-zero if any fails.
//! Runs the full synthetic benchmark, so expect hours on a single core.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::{dense, dense_inverse, dense_log_det, random_pd, rel_err, rel_err_mat};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempcov::config::{FitConfig, NoiseMode, Penalty};
use tempcov::corex::CorexWeights;
use tempcov::eval::{ari, changepoint_scores, cluster, nll, nll_per_period};
use tempcov::grid::{grid_search, select_best, GridSpec};
use tempcov::rng::standard_normal;
use tempcov::synthetic::{generate, ScenarioDataset, ScenarioKind, ScenarioParams};
use tempcov::tcorex::{fit, fit_with_log, tcorex_objective, tcorex_objective_and_gradient, TemporalDataset};
use tempcov::Execution;

const SEEDS: u64 = 10;
const P: usize = 128;
const M: usize = 8;
const T: usize = 10;

// Criterion 1
const SUDDEN_TCOREX: (f64, f64) = (220.0, 236.0);
const SUDDEN_TRUTH: (f64, f64) = (188.0, 204.0);
const MAX_SECONDS_PER_SEED: f64 = 20.0 * 60.0;
// Criterion 3
const SMOOTH_TCOREX: (f64, f64) = (236.0, 251.0);
const SMOOTH_TRUTH: (f64, f64) = (222.0, 238.0);
// Criterion 4
const ARI_DIMS: [usize; 3] = [32, 128, 256];
const ARI_MIN_GAIN: f64 = 0.1;
const ARI_LAMBDA: f64 = 0.3;
const ARI_BETA: f64 = 0.5;
// Criterion 5
const SCALING_DIMS: [usize; 4] = [512, 1024, 2048, 4096];
const SCALING_M: usize = 64;
const SCALING_S: usize = 16;
const SCALING_STEPS: usize = 20;
const SLOPE_RANGE: (f64, f64) = (0.8, 1.3);
// Criterion 6
const ORACLE_INSTANCES: u64 = 100;
const ORACLE_REL_TOL: f64 = 1e-8;
const TIMING_MAX_RATIO: f64 = 3.0;
// Criterion 7
const FD_INSTANCES: u64 = 20;
const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
// Criterion 8
const CHANGEPOINT_S: usize = 16;
const CHANGEPOINT_MIN_HITS: usize = 9;

type Outcome = (bool, String);

fn in_range(v: f64, (lo, hi): (f64, f64)) -> bool {
    (lo..=hi).contains(&v)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2}")).collect();
    format!("[{}]", parts.join(", "))
}

fn base_config() -> FitConfig {
    FitConfig { m: M, ..FitConfig::default() }
}

fn truth_nll(d: &ScenarioDataset) -> f64 {
    let per = nll_per_period(&d.truth, d.truth_means().view(), &d.test_set().unwrap(), Execution::Parallel).unwrap();
    mean(&per)
}

/// Per-period linear CorEx: each period fitted alone on its own samples.
fn linear_corex_nll(d: &ScenarioDataset) -> f64 {
    let per: Vec<f64> = (0..d.n_periods())
        .map(|t| {
            let train = TemporalDataset::new(vec![d.train[t].clone()]).unwrap();
            let test = TemporalDataset::new(vec![d.test[t].clone()]).unwrap();
            nll(&fit(&train, &base_config()).unwrap(), &test).unwrap().nll
        })
        .collect();
    mean(&per)
}

/// Test NLLs of the validation-selected T-CorEx model and of its two
/// ablations, chosen from the same grid.
struct SeedResult {
    tcorex: f64,
    no_reg: f64,
    simple: f64,
    linear: f64,
    truth: f64,
    seconds: f64,
    changepoint_argmax: usize,
}

fn run_seed(kind: ScenarioKind, s: usize, seed: u64, spec: &GridSpec) -> SeedResult {
    let started = Instant::now();
    let d = generate(ScenarioParams::new(kind, P, M, s, T, seed)).unwrap();
    let (train, val, test) = (d.train_set().unwrap(), d.val_set().unwrap(), d.test_set().unwrap());
    let results = grid_search(&train, &val, spec, &base_config(), Execution::Parallel).unwrap();
    let seconds = started.elapsed().as_secs_f64();
    let test_nll = |keep: &dyn Fn(&tempcov::grid::GridCell) -> bool| {
        let k = select_best(&results, keep).expect("some cell fits");
        let model = results[k].model.as_ref().unwrap();
        (nll(model, &test).unwrap().nll, k)
    };
    let (tcorex, best) = test_nll(&|_| true);
    let scores = changepoint_scores(results[best].model.as_ref().unwrap()).unwrap();
    let changepoint_argmax = (0..scores.len()).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
    SeedResult {
        tcorex,
        no_reg: test_nll(&|c| c.lambda == 0.0).0,
        simple: test_nll(&|c| c.beta <= 1e-9).0,
        linear: linear_corex_nll(&d),
        truth: truth_nll(&d),
        seconds,
        changepoint_argmax,
    }
}

fn run_seeds(kind: ScenarioKind, s: usize, spec: GridSpec, label: &str) -> Vec<SeedResult> {
    (1..=SEEDS)
        .map(|seed| {
            let r = run_seed(kind, s, seed, &spec);
            println!(
                "  {label} seed {seed}: tcorex {:.2} no-reg {:.2} simple {:.2} linear {:.2} truth {:.2} changepoint argmax {} ({:.0} s)",
                r.tcorex, r.no_reg, r.simple, r.linear, r.truth, r.changepoint_argmax, r.seconds
            );
            r
        })
        .collect()
}

fn column(rs: &[SeedResult], f: impl Fn(&SeedResult) -> f64) -> Vec<f64> {
    rs.iter().map(f).collect()
}

fn criterion_1(sudden: &[SeedResult]) -> Outcome {
    let tc = mean(&column(sudden, |r| r.tcorex));
    let truth = mean(&column(sudden, |r| r.truth));
    let slowest = column(sudden, |r| r.seconds).into_iter().fold(0.0, f64::max);
    let ok = in_range(tc, SUDDEN_TCOREX) && in_range(truth, SUDDEN_TRUTH) && slowest < MAX_SECONDS_PER_SEED;
    (
        ok,
        format!(
            "sudden s=8: T-CorEx mean NLL {tc:.2} (want {SUDDEN_TCOREX:?}), truth {truth:.2} (want {SUDDEN_TRUTH:?}), slowest seed {slowest:.0} s (limit {MAX_SECONDS_PER_SEED})"
        ),
    )
}

fn criterion_2(sudden: &[SeedResult]) -> Outcome {
    let tc = mean(&column(sudden, |r| r.tcorex));
    let no_reg = mean(&column(sudden, |r| r.no_reg));
    let simple = mean(&column(sudden, |r| r.simple));
    let linear = mean(&column(sudden, |r| r.linear));
    (
        tc < no_reg && no_reg < simple && tc < linear,
        format!("sudden s=8: T-CorEx {tc:.2} < no-reg {no_reg:.2} < simple {simple:.2}; T-CorEx < linear CorEx {linear:.2}"),
    )
}

fn criterion_3(smooth: &[SeedResult]) -> Outcome {
    let tc = mean(&column(smooth, |r| r.tcorex));
    let linear = mean(&column(smooth, |r| r.linear));
    let truth = mean(&column(smooth, |r| r.truth));
    (
        in_range(tc, SMOOTH_TCOREX) && tc < linear && in_range(truth, SMOOTH_TRUTH),
        format!(
            "smooth s=16: T-CorEx mean NLL {tc:.2} (want {SMOOTH_TCOREX:?}), linear CorEx {linear:.2}, truth {truth:.2} (want {SMOOTH_TRUTH:?})"
        ),
    )
}

fn criterion_4() -> Outcome {
    let config = FitConfig { lambda: ARI_LAMBDA, beta: ARI_BETA, ..base_config() };
    let means: Vec<f64> = ARI_DIMS
        .iter()
        .map(|&p| {
            let per_seed: Vec<f64> = (1..=SEEDS)
                .map(|seed| {
                    let d = generate(ScenarioParams::new(ScenarioKind::Sudden, p, M, 8, T, seed)).unwrap();
                    let model = fit(&d.train_set().unwrap(), &config).unwrap();
                    let per: Vec<f64> = (0..T).map(|t| ari(&cluster(&model, t), &d.labels[t]).unwrap()).collect();
                    mean(&per)
                })
                .collect();
            let m = mean(&per_seed);
            println!("  ARI p={p}: mean {m:.4} per seed {}", fmt(&per_seed));
            m
        })
        .collect();
    let increasing = means.windows(2).all(|w| w[0] < w[1]);
    let gain = means[2] - means[0];
    (
        increasing && gain >= ARI_MIN_GAIN,
        format!(
            "ARI at p={ARI_DIMS:?}: {} (λ={ARI_LAMBDA}, β={ARI_BETA}); gain {gain:.4} (want ≥ {ARI_MIN_GAIN})",
            fmt(&means)
        ),
    )
}

fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn criterion_5() -> Outcome {
    let per_step: Vec<f64> = SCALING_DIMS
        .iter()
        .map(|&p| {
            let params = ScenarioParams {
                val_size: 1,
                test_size: 1,
                ..ScenarioParams::new(ScenarioKind::Sudden, p, SCALING_M, SCALING_S, T, 0)
            };
            let data = generate(params).unwrap().train_set().unwrap();
            let config = FitConfig {
                m: SCALING_M,
                lambda: 0.1,
                anneal_schedule: vec![0.0],
                steps_per_round: SCALING_STEPS,
                init_steps_per_round: Some(1),
                convergence_tol: 0.0,
                ..FitConfig::default()
            };
            let (_, log) = fit_with_log(&data, &config).unwrap();
            let round = &log.rounds[0];
            round.seconds / round.objectives.len() as f64
        })
        .collect();
    let ps: Vec<f64> = SCALING_DIMS.iter().map(|&p| p as f64).collect();
    let slope = log_log_slope(&ps, &per_step);
    (
        in_range(slope, SLOPE_RANGE),
        format!("per-step seconds {per_step:.4?} at p={SCALING_DIMS:?}: log-log slope {slope:.3} (want {SLOPE_RANGE:?})"),
    )
}

fn best_of<F: FnMut()>(reps: usize, mut f: F) -> f64 {
    (0..reps)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = [0.0f64; 4];
    for _ in 0..ORACLE_INSTANCES {
        let p = rng.random_range(2..=512);
        let m = rng.random_range(1..=64);
        let m_b = rng.random_range(1..=64);
        let (a, b) = (random_pd(&mut rng, p, m), random_pd(&mut rng, p, m_b));
        let (da, db) = (dense(&a), dense(&b));
        worst[0] = worst[0].max(rel_err(a.log_det().unwrap(), dense_log_det(&da)));
        worst[1] = worst[1].max(rel_err_mat(&dense(&a.invert().unwrap()), &dense_inverse(&da)));
        let diff: DMatrix<f64> = &da - &db;
        worst[2] = worst[2].max(rel_err(a.frobenius_diff_sq(&b).unwrap(), diff.norm_squared()));
        let rows = a.per_variable_change(&b).unwrap();
        let row_err = (0..p)
            .map(|i| (rows[i] - diff.row(i).norm_squared()).abs())
            .fold(0.0, f64::max)
            / diff.norm_squared();
        worst[3] = worst[3].max(row_err);
    }
    let accurate = worst.iter().all(|&e| e < ORACLE_REL_TOL);

    // Doubling p at fixed m should roughly double the cost.
    let timing = |p: usize, rng: &mut ChaCha8Rng| {
        let (a, b) = (random_pd(rng, p, 64), random_pd(rng, p, 64));
        best_of(7, || {
            let inv = a.invert().unwrap();
            std::hint::black_box(a.log_det().unwrap());
            std::hint::black_box(inv.frobenius_diff_sq(&b).unwrap());
            std::hint::black_box(inv.per_variable_change(&b).unwrap());
        })
    };
    let ratios: Vec<f64> = [256usize, 512, 1024]
        .iter()
        .map(|&p| timing(2 * p, &mut rng) / timing(p, &mut rng))
        .collect();
    let fast = ratios.iter().all(|&r| r < TIMING_MAX_RATIO);
    (
        accurate && fast,
        format!(
            "{ORACLE_INSTANCES} instances: worst rel err log_det {:.1e}, invert {:.1e}, frobenius {:.1e}, per-variable {:.1e} (tol {ORACLE_REL_TOL:.0e}); time ratios for doubling p from 256/512/1024 at m=64: {} (limit {TIMING_MAX_RATIO})",
            worst[0], worst[1], worst[2], worst[3], fmt(&ratios)
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for seed in 0..FD_INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
        let p = rng.random_range(2..=8);
        let m = rng.random_range(1..=3);
        let big_t = rng.random_range(1..=3);
        let periods = (0..big_t)
            .map(|_| {
                let n = rng.random_range(6..=20);
                standard_normal(&mut rng, n, p)
            })
            .collect();
        let data = TemporalDataset::new(periods).unwrap();
        let weights: Vec<CorexWeights> = (0..big_t)
            .map(|_| CorexWeights::new(standard_normal(&mut rng, m, p) * 0.5).unwrap())
            .collect();
        let config = FitConfig {
            m,
            lambda: rng.random_range(0.0..1.0),
            beta: [1e-9, 0.3, 0.7][seed as usize % 3],
            phi: if seed % 2 == 0 { Penalty::L1 } else { Penalty::L2 },
            noise: if seed % 4 == 3 { NoiseMode::Analytic } else { NoiseMode::Sampled },
            ..FitConfig::default()
        };
        let eps = if seed % 2 == 0 { 0.0 } else { 0.36 };
        let noise_seed = 100 + seed;
        let (_, grads) = tcorex_objective_and_gradient(&weights, &data, &config, eps, noise_seed).unwrap();
        for t in 0..big_t {
            for j in 0..m {
                for i in 0..p {
                    let w0 = weights[t].as_array()[[j, i]];
                    let h = FD_STEP * (w0.abs() + 1.0);
                    let at = |delta: f64| {
                        let mut ws = weights.clone();
                        ws[t].as_array_mut()[[j, i]] = w0 + delta;
                        tcorex_objective(&ws, &data, &config, eps, noise_seed).unwrap()
                    };
                    let fd = (at(h) - at(-h)) / (2.0 * h);
                    let a = grads[t][[j, i]];
                    worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1.0));
                    entries += 1;
                }
            }
        }
    }
    (
        worst < FD_REL_TOL,
        format!("{FD_INSTANCES} instances, {entries} gradient entries: worst rel err {worst:.2e} vs central differences (tol {FD_REL_TOL:.0e})"),
    )
}

fn criterion_8(results: &[SeedResult]) -> Outcome {
    let boundary = T / 2 - 1;
    let argmax: Vec<usize> = results.iter().map(|r| r.changepoint_argmax).collect();
    let hits = argmax.iter().filter(|&&k| k == boundary).count();
    (
        hits >= CHANGEPOINT_MIN_HITS,
        format!(
            "sudden s={CHANGEPOINT_S}: argmax at boundary index {boundary} in {hits}/{SEEDS} seeds (want ≥ {CHANGEPOINT_MIN_HITS}); argmax per seed {argmax:?}"
        ),
    )
}

fn report(id: usize, f: impl FnOnce() -> Outcome) -> bool {
    let started = Instant::now();
    let (ok, detail) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(outcome) => outcome,
        Err(_) => (false, "panicked".to_string()),
    };
    println!(
        "criterion {id}: {} {detail} [{:.0} s]",
        if ok { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    ok
}

fn main() -> ExitCode {
    let mut passed = Vec::new();
    passed.push(report(6, criterion_6));
    passed.push(report(7, criterion_7));
    passed.push(report(5, criterion_5));
    passed.push(report(4, criterion_4));

    let sudden = run_seeds(ScenarioKind::Sudden, 8, GridSpec::sudden(M), "sudden");
    passed.push(report(1, || criterion_1(&sudden)));
    passed.push(report(2, || criterion_2(&sudden)));
    let smooth = run_seeds(ScenarioKind::Smooth, 16, GridSpec::smooth(M), "smooth");
    passed.push(report(3, || criterion_3(&smooth)));
    let changepoint = run_seeds(ScenarioKind::Sudden, CHANGEPOINT_S, GridSpec::sudden(M), "changepoint");
    passed.push(report(8, || criterion_8(&changepoint)));

    let n_pass = passed.iter().filter(|&&ok| ok).count();
    println!("acceptance: {n_pass}/{} criteria passed", passed.len());
    if n_pass == passed.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
