//! Flat `key = value` run configuration.
//!
//! ```text
//! # rotating hyperplane, forward+backward
//! scenario = mtl
//! data = hyperplane
//! k = 50
//! n = 10
//! reps = 20
//! ```
//!
//! Later assignments win, so file values can be overridden with
//! `--set key=value` flags.

use std::path::{Path, PathBuf};

use evotask::datagen::{CsvTaskSpec, HyperplaneMode, HyperplaneStream};
use evotask::scenarios::{AnchorPolicy, Scenario, ScenarioConfig};
use evotask::task_stats::WindowPolicy;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataSource {
    Hyperplane,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingChoice {
    Auto,
    Identity,
    Rff,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub data: DataSource,
    pub dim: usize,
    pub mode: String,
    pub angle: f64,
    pub sigma_w: f64,
    pub multi: bool,
    pub k: usize,
    pub n: usize,
    pub n_test: usize,
    pub csv: CsvTaskSpec,
    pub embedding: EmbeddingChoice,
    pub rff_q: usize,
    pub rff_sigma2: f64,
    pub lambda0: f64,
    pub window: usize,
    pub window_policy: Option<WindowPolicy>,
    pub b: usize,
    pub order: usize,
    pub beta: f64,
    pub d_init: f64,
    pub k_cold: usize,
    pub k_warm: usize,
    pub warm_start: bool,
    pub anchors: AnchorPolicy,
    pub corner_anchors: bool,
    pub reps: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub snapshots: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sc = ScenarioConfig::default();
        Self {
            scenario: Scenario::Mtl,
            data: DataSource::Hyperplane,
            dim: 2,
            mode: "rotate".into(),
            angle: 5.0,
            sigma_w: 0.1,
            multi: true,
            k: 100,
            n: 10,
            n_test: 100,
            csv: CsvTaskSpec::default(),
            embedding: EmbeddingChoice::Auto,
            rff_q: 400,
            rff_sigma2: 10.0,
            lambda0: sc.lambda0,
            window: sc.window,
            window_policy: None,
            b: sc.backward_steps,
            order: sc.order,
            beta: sc.beta,
            d_init: sc.d_init,
            k_cold: sc.k_cold,
            k_warm: sc.k_warm,
            warm_start: sc.warm_start,
            anchors: sc.anchors,
            corner_anchors: false,
            reps: 1,
            seed: 0,
            out: PathBuf::from("results"),
            snapshots: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| CliError::Config(format!("invalid value '{v}' for '{key}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Config(format!("invalid boolean '{v}' for '{key}'"))),
    }
}

fn opt_string(v: &str) -> Option<String> {
    (!v.is_empty()).then(|| v.to_string())
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        match key {
            "scenario" => self.scenario = v.parse().map_err(|e: evotask::Error| CliError::Config(e.to_string()))?,
            "data" => {
                self.data = match v {
                    "hyperplane" => DataSource::Hyperplane,
                    "csv" => DataSource::Csv,
                    _ => return Err(CliError::Config(format!("unknown data source '{v}' (valid: hyperplane, csv)"))),
                }
            }
            "dim" => self.dim = parse(key, v)?,
            "mode" => {
                if v != "rotate" && v != "random_walk" {
                    return Err(CliError::Config(format!("unknown mode '{v}' (valid: rotate, random_walk)")));
                }
                self.mode = v.into()
            }
            "angle" => self.angle = parse(key, v)?,
            "sigma_w" => self.sigma_w = parse(key, v)?,
            "multi" => self.multi = parse_bool(key, v)?,
            "k" => self.k = parse(key, v)?,
            "n" => self.n = parse(key, v)?,
            "n_test" => self.n_test = parse(key, v)?,
            "csv_path" => self.csv.path = PathBuf::from(v),
            "task_column" => self.csv.task_column = opt_string(v),
            "segment_size" => self.csv.segment_size = parse(key, v)?,
            "label_column" => self.csv.label_column = v.into(),
            "feature_columns" => {
                self.csv.feature_columns =
                    opt_string(v).map(|s| s.split(',').map(|c| c.trim().to_string()).collect())
            }
            "test_per_task" => self.csv.test_per_task = parse(key, v)?,
            "split_column" => self.csv.split_column = opt_string(v),
            "time_column" => self.csv.time_column = opt_string(v),
            "embedding" => {
                self.embedding = match v {
                    "auto" => EmbeddingChoice::Auto,
                    "identity" => EmbeddingChoice::Identity,
                    "rff" => EmbeddingChoice::Rff,
                    _ => return Err(CliError::Config(format!("unknown embedding '{v}' (valid: auto, identity, rff)"))),
                }
            }
            "rff_q" => self.rff_q = parse(key, v)?,
            "rff_sigma2" => self.rff_sigma2 = parse(key, v)?,
            "lambda0" => self.lambda0 = parse(key, v)?,
            "window" => self.window = parse(key, v)?,
            "window_policy" => {
                self.window_policy = match v {
                    "auto" => None,
                    "trailing" => Some(WindowPolicy::Trailing),
                    "centered" => Some(WindowPolicy::Centered),
                    _ => {
                        return Err(CliError::Config(format!(
                            "unknown window_policy '{v}' (valid: auto, trailing, centered)"
                        )))
                    }
                }
            }
            "b" => self.b = parse(key, v)?,
            "order" => self.order = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "d_init" => self.d_init = parse(key, v)?,
            "k_cold" => self.k_cold = parse(key, v)?,
            "k_warm" => self.k_warm = parse(key, v)?,
            "warm_start" => self.warm_start = parse_bool(key, v)?,
            "anchors" => {
                self.anchors = match v {
                    "train" => AnchorPolicy::TrainInstances,
                    "train+eval" => AnchorPolicy::TrainPlusEval,
                    _ => return Err(CliError::Config(format!("unknown anchors '{v}' (valid: train, train+eval)"))),
                }
            }
            "corner_anchors" => self.corner_anchors = parse_bool(key, v)?,
            "reps" => self.reps = parse(key, v)?,
            "seed" => {
                self.seed = parse(key, v)?;
                self.csv.seed = self.seed;
            }
            "out" => self.out = PathBuf::from(v),
            "snapshots" => self.snapshots = parse_bool(key, v)?,
            _ => return Err(CliError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| CliError::Config(format!("{origin}:{}: {}", i + 1, e.message())))?;
        }
        Ok(())
    }

    /// Load a config file, or the `config` block of a run manifest when
    /// the path ends in `.json`.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let obj = v
                .get("config")
                .and_then(|c| c.as_object())
                .ok_or_else(|| CliError::Config(format!("{}: no config object", path.display())))?;
            for (k, v) in obj {
                let s = v.as_str().ok_or_else(|| CliError::Config(format!("config value for '{k}' is not a string")))?;
                self.set(k, s)?;
            }
            Ok(())
        } else {
            self.apply_text(&text, &path.display().to_string())
        }
    }

    pub fn apply_override(&mut self, kv: &str) -> Result<(), CliError> {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects key=value, got '{kv}'")))?;
        self.set(k.trim(), v.trim())
    }

    /// Resolved configuration as `(key, value)` pairs that `set` accepts.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let opt = |o: &Option<String>| o.clone().unwrap_or_default();
        vec![
            ("scenario", self.scenario.name().into()),
            ("data", match self.data {
                DataSource::Hyperplane => "hyperplane".into(),
                DataSource::Csv => "csv".into(),
            }),
            ("dim", self.dim.to_string()),
            ("mode", self.mode.clone()),
            ("angle", format!("{:?}", self.angle)),
            ("sigma_w", format!("{:?}", self.sigma_w)),
            ("multi", self.multi.to_string()),
            ("k", self.k.to_string()),
            ("n", self.n.to_string()),
            ("n_test", self.n_test.to_string()),
            ("csv_path", self.csv.path.display().to_string()),
            ("task_column", opt(&self.csv.task_column)),
            ("segment_size", self.csv.segment_size.to_string()),
            ("label_column", self.csv.label_column.clone()),
            ("feature_columns", self.csv.feature_columns.as_ref().map(|v| v.join(",")).unwrap_or_default()),
            ("test_per_task", self.csv.test_per_task.to_string()),
            ("split_column", opt(&self.csv.split_column)),
            ("time_column", opt(&self.csv.time_column)),
            ("embedding", match self.embedding {
                EmbeddingChoice::Auto => "auto".into(),
                EmbeddingChoice::Identity => "identity".into(),
                EmbeddingChoice::Rff => "rff".into(),
            }),
            ("rff_q", self.rff_q.to_string()),
            ("rff_sigma2", format!("{:?}", self.rff_sigma2)),
            ("lambda0", format!("{:?}", self.lambda0)),
            ("window", self.window.to_string()),
            ("window_policy", match self.window_policy {
                None => "auto".into(),
                Some(WindowPolicy::Trailing) => "trailing".into(),
                Some(WindowPolicy::Centered) => "centered".into(),
            }),
            ("b", self.b.to_string()),
            ("order", self.order.to_string()),
            ("beta", format!("{:?}", self.beta)),
            ("d_init", format!("{:?}", self.d_init)),
            ("k_cold", self.k_cold.to_string()),
            ("k_warm", self.k_warm.to_string()),
            ("warm_start", self.warm_start.to_string()),
            ("anchors", match self.anchors {
                AnchorPolicy::TrainInstances => "train".into(),
                AnchorPolicy::TrainPlusEval => "train+eval".into(),
            }),
            ("corner_anchors", self.corner_anchors.to_string()),
            ("reps", self.reps.to_string()),
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("snapshots", self.snapshots.to_string()),
        ]
    }

    pub fn stream(&self) -> Result<HyperplaneStream, CliError> {
        let mode = match self.mode.as_str() {
            "rotate" => HyperplaneMode::Rotate { angle_deg: self.angle },
            _ => HyperplaneMode::RandomWalk { sigma_w: self.sigma_w, multi: self.multi },
        };
        Ok(HyperplaneStream { dim: self.dim, mode, k: self.k, n_per_task: self.n, n_test: self.n_test, seed: self.seed })
    }

    pub fn scenario_config(&self, dim: usize) -> ScenarioConfig {
        let extra_anchors = if self.corner_anchors && dim <= 16 {
            (0..1usize << dim)
                .map(|mask| (0..dim).map(|i| if mask & (1 << i) != 0 { 1.0 } else { -1.0 }).collect())
                .collect()
        } else {
            Vec::new()
        };
        ScenarioConfig {
            lambda0: self.lambda0,
            window: self.window,
            window_policy: self.window_policy,
            backward_steps: self.b,
            order: self.order,
            beta: self.beta,
            d_init: self.d_init,
            k_cold: self.k_cold,
            k_warm: self.k_warm,
            warm_start: self.warm_start,
            anchors: self.anchors,
            extra_anchors,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.reps == 0 {
            return Err(CliError::Config("reps must be at least 1".into()));
        }
        if self.data == DataSource::Csv && self.csv.path.as_os_str().is_empty() {
            return Err(CliError::Config("data = csv requires csv_path".into()));
        }
        if self.corner_anchors && self.dim > 16 {
            return Err(CliError::Config("corner_anchors supports dim ≤ 16".into()));
        }
        Ok(())
    }
}
