//! Task sequences: synthetic hyperplane streams and CSV ingestion.

mod csvio;

pub use self::csvio::{ingest_csv, ingest_reader, write_csv, CsvTaskSpec};

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{input, Result};
use crate::exec::rep_rng;
use crate::features::FeatureMap;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    /// 0-based label.
    pub y: usize,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TaskData {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSequence {
    pub tasks: Vec<TaskData>,
    pub n_labels: usize,
    pub dim: usize,
}

impl TaskSequence {
    pub fn new(tasks: Vec<TaskData>, n_labels: usize, dim: usize) -> Result<Self> {
        let seq = Self { tasks, n_labels, dim };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return input("task sequence is empty");
        }
        if self.n_labels < 2 {
            return input("need at least 2 labels");
        }
        for (j, t) in self.tasks.iter().enumerate() {
            for s in t.train.iter().chain(&t.test) {
                if s.x.len() != self.dim {
                    return input(format!("task {}: instance dim {} != {}", j + 1, s.x.len(), self.dim));
                }
                if s.y >= self.n_labels {
                    return input(format!("task {}: label {} out of range", j + 1, s.y + 1));
                }
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.tasks.len()
    }

    /// Time increments `Δ_j` (`Δ_1` is unused and set to 1). Missing
    /// timestamps give unit spacing.
    pub fn deltas(&self) -> Vec<f64> {
        let mut out = vec![1.0; self.k()];
        for j in 1..self.k() {
            if let (Some(a), Some(b)) = (self.tasks[j - 1].time, self.tasks[j].time) {
                if b > a {
                    out[j] = b - a;
                }
            }
        }
        out
    }

    /// Copy of the sequence truncated to the first `k` tasks.
    pub fn prefix(&self, k: usize) -> Self {
        Self { tasks: self.tasks[..k].to_vec(), n_labels: self.n_labels, dim: self.dim }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HyperplaneMode {
    Rotate { angle_deg: f64 },
    RandomWalk { sigma_w: f64, multi: bool },
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperplaneStream {
    pub dim: usize,
    pub mode: HyperplaneMode,
    pub k: usize,
    pub n_per_task: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl HyperplaneStream {
    pub fn rotating(k: usize, n_per_task: usize, seed: u64) -> Self {
        Self {
            dim: 2,
            mode: HyperplaneMode::Rotate { angle_deg: 5.0 },
            k,
            n_per_task,
            n_test: 100,
            seed,
        }
    }
}

/// Ground truth for a generated stream.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperplaneOracle {
    pub w: Vec<Vec<f64>>,
}

impl HyperplaneOracle {
    /// Label of `x` under task `j` (0-based task index).
    pub fn label(&self, j: usize, x: &[f64]) -> usize {
        hyperplane_label(&self.w[j], x)
    }

    /// Monte Carlo estimate of `E[Φ(x, y)]` for task `j` (0-based).
    pub fn tau_inf(&self, j: usize, fmap: &FeatureMap, samples: usize, rng: &mut ChaCha20Rng) -> Result<Vec<f64>> {
        let dim = self.w[j].len();
        let q = fmap.q();
        let mut acc = vec![0.0; fmap.m];
        let mut x = vec![0.0; dim];
        let mut e = vec![0.0; q];
        for _ in 0..samples {
            for v in x.iter_mut() {
                *v = rng.random_range(-1.0..=1.0);
            }
            let y = self.label(j, &x);
            fmap.embedding.embed_into(&x, &mut e)?;
            for (a, b) in acc[y * q..(y + 1) * q].iter_mut().zip(&e) {
                *a += b;
            }
        }
        let inv = 1.0 / samples as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Ok(acc)
    }
}

fn hyperplane_label(w: &[f64], x: &[f64]) -> usize {
    let s: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
    if s >= 0.0 {
        0
    } else {
        1
    }
}

/// Generate a stream using the repetition-0 RNG of `spec.seed`.
pub fn gen_hyperplane(spec: &HyperplaneStream) -> Result<(TaskSequence, HyperplaneOracle)> {
    gen_hyperplane_with(spec, &mut rep_rng(spec.seed, 0))
}

pub fn gen_hyperplane_with(spec: &HyperplaneStream, rng: &mut ChaCha20Rng) -> Result<(TaskSequence, HyperplaneOracle)> {
    if spec.k == 0 || spec.dim == 0 {
        return input("hyperplane stream needs k ≥ 1 and dim ≥ 1");
    }
    let mut w: Vec<Vec<f64>> = Vec::with_capacity(spec.k);
    match spec.mode {
        HyperplaneMode::Rotate { angle_deg } => {
            if spec.dim < 2 {
                return input("rotate mode needs dim ≥ 2");
            }
            for j in 0..spec.k {
                let th = (angle_deg * j as f64).to_radians();
                let mut v = vec![0.0; spec.dim];
                v[0] = th.cos();
                v[1] = th.sin();
                w.push(v);
            }
        }
        HyperplaneMode::RandomWalk { sigma_w, multi } => {
            if !(sigma_w >= 0.0 && sigma_w.is_finite()) {
                return input("sigma_w must be finite and nonnegative");
            }
            let step = Normal::new(0.0, sigma_w).map_err(|e| crate::Error::Input(e.to_string()))?;
            let first: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(rng)).collect();
            w.push(first);
            for j in 1..spec.k {
                let prev = &w[j - 1];
                let next = if multi {
                    prev.iter().map(|p| p + step.sample(rng)).collect()
                } else {
                    let z = step.sample(rng);
                    prev.iter().map(|p| p + z).collect()
                };
                w.push(next);
            }
        }
    }
    let draw = |wj: &[f64], n: usize, rng: &mut ChaCha20Rng| -> Vec<Sample> {
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..spec.dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let y = hyperplane_label(wj, &x);
                Sample { x, y }
            })
            .collect()
    };
    let tasks = w
        .iter()
        .enumerate()
        .map(|(j, wj)| {
            let train = draw(wj, spec.n_per_task, rng);
            let test = draw(wj, spec.n_test, rng);
            TaskData { train, test, time: Some(j as f64) }
        })
        .collect();
    Ok((TaskSequence::new(tasks, 2, spec.dim)?, HyperplaneOracle { w }))
}
