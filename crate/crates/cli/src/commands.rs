use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::Args;
use serde_json::json;

use evotask::datagen::{gen_hyperplane_with, ingest_csv, write_csv, CsvTaskSpec, TaskSequence};
use evotask::ess::{ess_report, EssInputs, Regime};
use evotask::exec::{map_reps, rep_rng};
use evotask::features::{FeatureMap, InstanceEmbedding};
use evotask::scenarios::{run_cl, run_mda, run_mtl, run_scd, run_single, Scenario, ScenarioResult};
use evotask::snapshot::{ModelSnapshot, Snapshot};
use evotask::task_stats::{moments, pacf};
use evotask::tracker::Horizon;
use evotask::ExecMode;

use crate::config::{DataSource, EmbeddingChoice, RunConfig};
use crate::CliError;

/// Bumped whenever the column layout of `results.csv` changes.
pub const RESULTS_SCHEMA: u32 = 1;
const RESULTS_HEADER: [&str; 9] = ["rep", "j", "k", "horizon", "n_train", "error", "prob_error", "risk", "ess"];

fn csv_err(e: csv::Error) -> CliError {
    CliError::Output(e.to_string())
}

fn load(cfg: &RunConfig, rep: usize) -> Result<TaskSequence, CliError> {
    match cfg.data {
        DataSource::Hyperplane => Ok(gen_hyperplane_with(&cfg.stream()?, &mut rep_rng(cfg.seed, rep as u64))?.0),
        DataSource::Csv => {
            let mut spec = cfg.csv.clone();
            spec.seed = cfg.seed.wrapping_add(rep as u64);
            Ok(ingest_csv(&spec)?)
        }
    }
}

fn feature_map(cfg: &RunConfig, seq: &TaskSequence) -> Result<FeatureMap, CliError> {
    let rff = match cfg.embedding {
        EmbeddingChoice::Auto => cfg.data == DataSource::Csv,
        EmbeddingChoice::Identity => false,
        EmbeddingChoice::Rff => true,
    };
    let emb = if rff {
        InstanceEmbedding::rff(seq.dim, cfg.rff_q, cfg.rff_sigma2, cfg.seed)?
    } else {
        InstanceEmbedding::identity(seq.dim)?
    };
    Ok(FeatureMap::new(emb, seq.n_labels)?)
}

struct RepOutcome {
    result: ScenarioResult,
    fmap: FeatureMap,
    elapsed: Duration,
}

fn run_rep(cfg: &RunConfig, rep: usize) -> Result<RepOutcome, CliError> {
    let start = Instant::now();
    let seq = load(cfg, rep)?;
    let fmap = feature_map(cfg, &seq)?;
    let sc = cfg.scenario_config(seq.dim);
    let result = match cfg.scenario {
        Scenario::Single => run_single(&seq, &fmap, &sc),
        Scenario::Mda => run_mda(&seq, &fmap, &sc),
        Scenario::Mtl => run_mtl(&seq, &fmap, &sc),
        Scenario::Scd => run_scd(&seq, &fmap, &sc),
        Scenario::Cl => run_cl(&seq, &fmap, &sc),
    }?;
    Ok(RepOutcome { result, fmap, elapsed: start.elapsed() })
}

fn horizon_name(h: Horizon) -> &'static str {
    match h {
        Horizon::Single => "single",
        Horizon::Forward => "forward",
        Horizon::Smoothed(_) => "smoothed",
        Horizon::Predicted => "predicted",
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

pub struct RunSummary {
    scenario: Scenario,
    reps: usize,
    mean_error: Option<f64>,
    results: PathBuf,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} rep(s)", self.scenario.name(), self.reps)?;
        if let Some(e) = self.mean_error {
            write!(f, ", mean error {e:.4}")?;
        }
        write!(f, "; wrote {}", self.results.display())
    }
}

pub fn cmd_run(cfg: &RunConfig, workers: Option<usize>) -> Result<RunSummary, CliError> {
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let mode = if workers == Some(1) { ExecMode::Sequential } else { ExecMode::Parallel };
    let outcomes: Vec<RepOutcome> =
        pool.install(|| map_reps(mode, cfg.reps, |rep| run_rep(cfg, rep))).into_iter().collect::<Result<_, _>>()?;

    std::fs::create_dir_all(&cfg.out)?;
    let results = cfg.out.join("results.csv");
    let mut w = csv::Writer::from_path(&results).map_err(csv_err)?;
    w.write_record(RESULTS_HEADER).map_err(csv_err)?;
    for (rep, o) in outcomes.iter().enumerate() {
        for t in &o.result.tasks {
            w.write_record([
                rep.to_string(),
                t.task.to_string(),
                o.result.k.to_string(),
                horizon_name(t.horizon).to_string(),
                t.n_train.to_string(),
                opt(t.test_error),
                opt(t.prob_error),
                format!("{:?}", t.model.risk),
                opt(t.ess),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;

    if cfg.snapshots {
        let dir = cfg.out.join("snapshots");
        std::fs::create_dir_all(&dir)?;
        for (rep, o) in outcomes.iter().enumerate() {
            for t in &o.result.tasks {
                let snap = ModelSnapshot { model: t.model.clone(), fmap: o.fmap.clone() };
                std::fs::write(dir.join(format!("rep{rep}_task{}.snap", t.task)), snap.to_snapshot())?;
            }
        }
    }

    let errors: Vec<f64> = outcomes.iter().filter_map(|o| o.result.mean_error()).collect();
    let mean_error = (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64);
    let config: serde_json::Map<String, serde_json::Value> =
        cfg.entries().into_iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    let manifest = json!({
        "tool": "evotask",
        "version": env!("CARGO_PKG_VERSION"),
        "results_schema": RESULTS_SCHEMA,
        "results_columns": RESULTS_HEADER,
        "config": config,
        "seed": cfg.seed,
        "reps": cfg.reps,
        "workers": workers,
        "mean_error": mean_error,
        "timings": {
            "total_s": start.elapsed().as_secs_f64(),
            "per_rep_s": outcomes.iter().map(|o| o.elapsed.as_secs_f64()).collect::<Vec<_>>(),
        },
        "warnings": outcomes.iter().flat_map(|o| o.result.warnings.clone()).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Output(e.to_string()))?;
    std::fs::write(cfg.out.join("manifest.json"), text)?;
    log::info!("run finished in {:.2}s", start.elapsed().as_secs_f64());
    Ok(RunSummary { scenario: cfg.scenario, reps: cfg.reps, mean_error, results })
}

#[derive(Args, Debug)]
pub struct EssArgs {
    /// Sample sizes per task, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<f64>,
    /// Expected quadratic changes: a comma list, or `lo:hi:count` for a
    /// log-spaced grid.
    #[arg(long, required = true)]
    d: String,
    /// Task indices, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    j: Vec<usize>,
    /// Number of tasks.
    #[arg(long)]
    k: usize,
    /// Sliding windows `W` (trailing) or `W/H` (reaching `H` tasks back).
    #[arg(long, value_delimiter = ',')]
    window: Vec<String>,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_d(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("invalid --d '{s}'"));
    if let Some((lo, rest)) = s.split_once(':') {
        let (hi, count) = rest.split_once(':').ok_or_else(bad)?;
        let lo: f64 = lo.parse().map_err(|_| bad())?;
        let hi: f64 = hi.parse().map_err(|_| bad())?;
        let count: usize = count.parse().map_err(|_| bad())?;
        if !(lo > 0.0 && hi >= lo) || count == 0 {
            return Err(bad());
        }
        if count == 1 {
            return Ok(vec![lo]);
        }
        let (a, b) = (lo.log10(), hi.log10());
        Ok((0..count).map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64)).collect())
    } else {
        s.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect()
    }
}

fn parse_window(s: &str) -> Result<(usize, Option<usize>), CliError> {
    let bad = || CliError::Config(format!("invalid window '{s}' (expected W or W/H)"));
    match s.split_once('/') {
        Some((w, h)) => Ok((w.parse().map_err(|_| bad())?, Some(h.parse().map_err(|_| bad())?))),
        None => Ok((s.parse().map_err(|_| bad())?, None)),
    }
}

fn sink(output: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match output {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(std::io::stdout()),
    })
}

fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::NdSmall => "nd<1/j^2",
        Regime::NdMid => "1/j^2<=nd<1",
        Regime::NdLarge => "nd>=1",
    }
}

pub fn cmd_ess(a: &EssArgs) -> Result<(), CliError> {
    let ds = parse_d(&a.d)?;
    let windows: Vec<(usize, Option<usize>)> = a.window.iter().map(|w| parse_window(w)).collect::<Result<_, _>>()?;
    for &(w, _) in &windows {
        if w == 0 {
            return Err(CliError::Config("window length must be positive".into()));
        }
    }
    let mut w = csv::Writer::from_writer(sink(a.output.as_deref())?);
    let mut header: Vec<String> = [
        "n",
        "d",
        "j",
        "k",
        "ess_forward",
        "ess_combined",
        "ess_backward_aux",
        "bound_forward",
        "bound_combined",
        "regime",
        "regime_forward",
        "regime_combined",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(a.window.iter().map(|s| format!("window_{s}")));
    w.write_record(&header).map_err(csv_err)?;
    for &n in &a.n {
        for &d in &ds {
            for &j in &a.j {
                let inp = EssInputs { n, d, j, k: a.k };
                let r = ess_report(inp, &windows).map_err(|e| CliError::Config(e.to_string()))?;
                let mut row = vec![
                    format!("{n:?}"),
                    format!("{d:?}"),
                    j.to_string(),
                    a.k.to_string(),
                    format!("{:?}", r.forward),
                    format!("{:?}", r.combined),
                    format!("{:?}", r.backward_aux),
                    format!("{:?}", r.bounds.forward),
                    format!("{:?}", r.bounds.combined),
                    regime_name(r.bounds.regime).to_string(),
                    format!("{:?}", r.bounds.forward_regime),
                    opt(r.bounds.combined_regime),
                ];
                row.extend(r.windows.iter().map(|(_, _, v)| format!("{v:?}")));
                w.write_record(&row).map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_diag(cfg: &RunConfig, max_lag: usize, output: Option<&Path>) -> Result<(), CliError> {
    if max_lag == 0 {
        return Err(CliError::Config("max_lag must be positive".into()));
    }
    let seq = load(cfg, 0)?;
    let fmap = feature_map(cfg, &seq)?;
    let means: Vec<Vec<f64>> = seq
        .tasks
        .iter()
        .enumerate()
        .map(|(j, t)| moments(&t.train, &fmap, j + 1).map(|m| m.tau))
        .collect::<Result<_, _>>()?;
    let per_comp: Vec<Vec<f64>> = (0..fmap.m)
        .map(|i| {
            let series: Vec<f64> = means.iter().map(|m| m[i]).collect();
            pacf(&series, max_lag)
        })
        .collect::<Result<_, _>>()?;
    let mut w = csv::Writer::from_writer(sink(output)?);
    w.write_record(["lag", "mean", "std", "components", "band"]).map_err(csv_err)?;
    let band = 2.0 / (seq.k() as f64).sqrt();
    let c = per_comp.len() as f64;
    for lag in 0..max_lag {
        let vals: Vec<f64> = per_comp.iter().map(|p| p[lag]).collect();
        let mean = vals.iter().sum::<f64>() / c;
        let std = if vals.len() > 1 {
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (c - 1.0)).sqrt()
        } else {
            0.0
        };
        w.write_record([(lag + 1).to_string(), format!("{mean:?}"), format!("{std:?}"), vals.len().to_string(), format!("{band:?}")])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 300)]
    segment_size: usize,
    #[arg(long)]
    task_column: Option<String>,
    #[arg(long, default_value = "label")]
    label_column: String,
    #[arg(long, value_delimiter = ',')]
    feature_columns: Option<Vec<String>>,
    #[arg(long, default_value_t = 100)]
    test_per_task: usize,
    #[arg(long)]
    split_column: Option<String>,
    #[arg(long)]
    time_column: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn cmd_convert(a: &ConvertArgs) -> Result<(), CliError> {
    if a.segment_size == 0 {
        return Err(CliError::Config("segment size must be positive".into()));
    }
    let spec = CsvTaskSpec {
        path: a.input.clone(),
        task_column: a.task_column.clone(),
        segment_size: a.segment_size,
        label_column: a.label_column.clone(),
        feature_columns: a.feature_columns.clone(),
        test_per_task: a.test_per_task,
        split_column: a.split_column.clone(),
        time_column: a.time_column.clone(),
        seed: a.seed,
    };
    let seq = ingest_csv(&spec)?;
    write_csv(&seq, File::create(&a.output)?)?;
    eprintln!("converted {} tasks to {}", seq.k(), a.output.display());
    Ok(())
}
