use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use tempcov::config::{AdamConfig, FitConfig};
use tempcov::eval::{self, EvalReport};
use tempcov::grid::{grid_search, select_best, GridCell, GridSpec};
use tempcov::parallel::Execution;
use tempcov::synthetic::{generate, read_csv, ScenarioDataset, ScenarioKind, ScenarioParams};
use tempcov::tcorex::{fit_with_log, load_model, save_model, save_model_with_sidecar, TemporalDataset};
use tempcov::{DiagLowRank, FitLog, TCorexModel};

use crate::{BenchArgs, EvalArgs, FitArgs, GridArgs, SynthArgs, TrainArgs};

const OUTPUT_VERSION: u32 = 1;

/// Invalid flag combinations that clap cannot express.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn synth(a: SynthArgs) -> Result<()> {
    let params = ScenarioParams::new(a.kind, a.p, a.m, a.s, a.n_periods, a.seed);
    let ds = generate(params)?;
    ds.export(&a.out)
        .with_context(|| format!("writing scenario to {}", a.out.display()))?;
    println!(
        "wrote {} periods ({} train / {} val / {} test samples each) to {}",
        ds.n_periods(),
        ds.params.s,
        ds.params.val_size,
        ds.params.test_size,
        a.out.display()
    );
    Ok(())
}

fn is_scenario(path: &Path) -> bool {
    path.is_dir()
}

fn load_scenario(path: &Path) -> Result<ScenarioDataset> {
    ScenarioDataset::load(path).with_context(|| format!("reading scenario {}", path.display()))
}

fn load_series(path: &Path, window: Option<usize>) -> Result<TemporalDataset> {
    let Some(w) = window else {
        return Err(Usage("--window is required when --data is a CSV file".into()).into());
    };
    let series = read_csv(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(TemporalDataset::window(series.view(), w)?)
}

fn base_config(t: &TrainArgs) -> FitConfig {
    FitConfig {
        steps_per_round: t.steps,
        adam: AdamConfig {
            lr: t.lr,
            ..AdamConfig::default()
        },
        seed: t.seed,
        ..FitConfig::default()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

#[derive(Serialize)]
struct FitLogFile<'a> {
    version: u32,
    config: &'a FitConfig,
    #[serde(rename = "T")]
    n_periods: usize,
    p: usize,
    /// Largest relative rise of the 10-step moving average per round.
    trend_violation: Vec<f64>,
    #[serde(flatten)]
    log: &'a FitLog,
}

pub fn fit(a: FitArgs) -> Result<()> {
    let data = if is_scenario(&a.data) {
        load_scenario(&a.data)?.train_set()?
    } else {
        load_series(&a.data, a.window)?
    };
    let config = FitConfig {
        m: a.m,
        lambda: a.lambda,
        beta: a.beta,
        phi: a.phi.into(),
        ..base_config(&a.train)
    };
    let (model, log) = fit_with_log(&data, &config)?;
    if a.sidecar {
        save_model_with_sidecar(&model, &a.out)?;
    } else {
        save_model(&model, &a.out)?;
    }
    let log_path = a.log.unwrap_or_else(|| with_suffix(&a.out, ".log.json"));
    write_json(
        &log_path,
        &FitLogFile {
            version: OUTPUT_VERSION,
            config: &config,
            n_periods: data.n_periods(),
            p: data.p(),
            trend_violation: log.rounds.iter().map(|r| r.trend_violation(10)).collect(),
            log: &log,
        },
    )?;
    println!(
        "fitted T={} p={} m={} in {:.2}s, final objective {:.6}",
        data.n_periods(),
        data.p(),
        a.m,
        log.total_seconds,
        log.final_objective().unwrap_or(f64::NAN)
    );
    Ok(())
}

#[derive(Serialize)]
struct CellRow {
    #[serde(flatten)]
    cell: GridCell,
    val_nll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct Best {
    #[serde(flatten)]
    cell: GridCell,
    val_nll: f64,
    test_nll: f64,
    per_period_test_nll: Vec<f64>,
}

#[derive(Serialize)]
struct Leaderboard {
    version: u32,
    grid: GridSpec,
    cells: Vec<CellRow>,
    best: Best,
}

pub fn grid(a: GridArgs) -> Result<()> {
    let ds = load_scenario(&a.data)?;
    let m = a.m.unwrap_or(ds.params.m);
    let spec = match &a.grid {
        Some(path) => {
            let text = fs::read(path).with_context(|| format!("reading grid {}", path.display()))?;
            serde_json::from_slice::<GridSpec>(&text).with_context(|| format!("parsing grid {}", path.display()))?
        }
        None => match ds.params.kind {
            ScenarioKind::Sudden => GridSpec::sudden(m),
            ScenarioKind::Smooth => GridSpec::smooth(m),
        },
    };
    let results = grid_search(&ds.train_set()?, &ds.val_set()?, &spec, &base_config(&a.train), Execution::Parallel)?;
    let Some(best) = select_best(&results, |_| true) else {
        bail!(
            "every grid cell failed; first error: {}",
            results.iter().find_map(|r| r.error.clone()).unwrap_or_default()
        );
    };
    let winner = results[best].model.as_ref().expect("selected cells have models");
    let test = eval::nll(winner, &ds.test_set()?)?;
    if let Some(path) = &a.model {
        save_model(winner, path)?;
    }
    let board = Leaderboard {
        version: OUTPUT_VERSION,
        grid: spec,
        cells: results
            .iter()
            .map(|r| CellRow {
                cell: r.cell,
                val_nll: r.val_nll.is_finite().then_some(r.val_nll),
                error: r.error.clone(),
            })
            .collect(),
        best: Best {
            cell: results[best].cell,
            val_nll: results[best].val_nll,
            test_nll: test.nll,
            per_period_test_nll: test.per_period_nll,
        },
    };
    write_json(&a.out, &board)?;
    let c = results[best].cell;
    println!(
        "best of {} cells: lambda={} beta={} m={} phi={:?}; validation NLL {:.3}, test NLL {:.3}",
        results.len(),
        c.lambda,
        c.beta,
        c.m,
        c.phi,
        results[best].val_nll,
        test.nll
    );
    Ok(())
}

/// Rescales covariances to unit diagonal.
fn correlation(c: &DiagLowRank) -> Result<DiagLowRank> {
    let scale = c.dense_diagonal().mapv(|v| 1.0 / v.sqrt());
    Ok(c.scale_symmetric(&scale)?)
}

fn write_precisions(covs: &[DiagLowRank], threshold: f64, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (t, c) in covs.iter().enumerate() {
        let dense = eval::thresholded_precision(c, threshold)?;
        let path = dir.join(format!("precision_period_{}.csv", t + 1));
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record((1..=dense.ncols()).map(|i| format!("x{i}")))?;
        for row in dense.rows() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
    }
    Ok(())
}

fn check_periods(model: &TCorexModel, test: &TemporalDataset) -> Result<()> {
    if model.n_periods() != test.n_periods() {
        return Err(tempcov::Error::DimensionMismatch(format!(
            "model has {} periods, data has {}",
            model.n_periods(),
            test.n_periods()
        ))
        .into());
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let scenario = if is_scenario(&a.data) {
        Some(load_scenario(&a.data)?)
    } else {
        None
    };
    let test = match &scenario {
        Some(ds) => ds.test_set()?,
        None => load_series(&a.data, a.window)?,
    };
    let labels = scenario.as_ref().map(|ds| ds.labels.clone());

    // Standardized-space estimates for clustering and change points.
    let (report, standardized, clusters) = if a.truth {
        let Some(ds) = &scenario else {
            return Err(Usage("--truth needs a scenario directory".into()).into());
        };
        let per = eval::nll_per_period(&ds.truth, ds.truth_means().view(), &test, Execution::Parallel)?;
        let corr = ds.truth.iter().map(correlation).collect::<Result<Vec<_>>>()?;
        let clusters: Vec<_> = ds
            .truth
            .iter()
            .map(|c| eval::cluster_from_loadings(c.factors().view()))
            .collect();
        (EvalReport::from_nll(per), corr, clusters)
    } else {
        let path = a.model.as_ref().expect("clap requires --model without --truth");
        let model = load_model(path).with_context(|| format!("loading model {}", path.display()))?;
        check_periods(&model, &test)?;
        let report = eval::nll(&model, &test)?;
        let clusters = (0..model.n_periods()).map(|t| eval::cluster(&model, t)).collect();
        (report, model.covariances.clone(), clusters)
    };

    let mut report = report;
    if let Some(labels) = labels {
        let per = clusters
            .iter()
            .zip(&labels)
            .map(|(c, l)| eval::ari(c, l))
            .collect::<tempcov::Result<Vec<_>>>()?;
        report = report.with_ari(per);
    }
    if a.changepoints {
        report = report.with_changepoints(eval::changepoint_scores_of(&standardized)?);
    }
    if let (Some(threshold), Some(dir)) = (a.threshold, &a.precision_out) {
        write_precisions(&standardized, threshold, dir)?;
    }

    let json = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(path) => {
            fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
            if let Some(scores) = &report.changepoint_scores {
                let mut text = String::from("# boundary score\n");
                for (t, s) in scores.iter().enumerate() {
                    text += &format!("{} {}\n", t + 1, s);
                }
                fs::write(with_suffix(path, ".changepoints.txt"), text)?;
            }
            println!("time-averaged NLL {:.4}", report.nll);
        }
        None => println!("{json}"),
    }
    Ok(())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub fn bench(a: BenchArgs) -> Result<()> {
    if a.p.len() < 2 {
        return Err(Usage("--p needs at least two dimensions to fit a slope".into()).into());
    }
    println!("# p m T s steps seconds_per_step total_seconds");
    let mut per_step = Vec::new();
    for &p in &a.p {
        let params = ScenarioParams {
            val_size: 1,
            test_size: 1,
            ..ScenarioParams::new(ScenarioKind::Sudden, p, a.m.min(p), a.s, a.n_periods, a.seed)
        };
        let data = generate(params)?.train_set()?;
        let config = FitConfig {
            m: a.m,
            lambda: 0.1,
            anneal_schedule: vec![0.0],
            steps_per_round: a.steps,
            init_steps_per_round: Some(1),
            convergence_tol: 0.0,
            seed: a.seed,
            ..FitConfig::default()
        };
        let (_, log) = fit_with_log(&data, &config)?;
        let round = &log.rounds[0];
        let step = round.seconds / round.objectives.len() as f64;
        per_step.push(step);
        println!("{p} {} {} {} {} {step:.6} {:.6}", a.m, a.n_periods, a.s, round.objectives.len(), round.seconds);
    }
    let ps: Vec<f64> = a.p.iter().map(|&p| p as f64).collect();
    println!("# slope {:.4}", log_log_slope(&ps, &per_step));
    Ok(())
}
