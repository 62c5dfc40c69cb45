//! Per-task moments, expected-quadratic-change estimates and PACF
//! diagnostics.

use crate::datagen::Sample;
use crate::error::{input, Result};
use crate::features::FeatureMap;

/// Floor applied to variance estimates.
pub const VAR_FLOOR: f64 = 1e-8;
/// Change estimate used when fewer than two means are available.
pub const D_INIT: f64 = 1e-3;
pub const DEFAULT_WINDOW: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct TaskMoments {
    /// 1-based task index.
    pub task: usize,
    pub n: usize,
    pub tau: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub s: Vec<f64>,
    /// Unfloored sum of squared deviations, kept for exact merging.
    pub m2: Vec<f64>,
}

impl TaskMoments {
    fn from_parts(task: usize, n: usize, tau: Vec<f64>, m2: Vec<f64>) -> Self {
        let sigma2: Vec<f64> = m2
            .iter()
            .map(|&v| if n > 1 { (v / (n - 1) as f64).max(VAR_FLOOR) } else { VAR_FLOOR })
            .collect();
        let s = sigma2.iter().map(|v| v / n as f64).collect();
        Self { task, n, tau, sigma2, s, m2 }
    }

    /// Pool two sample sets of the same task (parallel-variance update).
    pub fn merge(&self, other: &TaskMoments) -> TaskMoments {
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let mut tau = Vec::with_capacity(self.tau.len());
        let mut m2 = Vec::with_capacity(self.tau.len());
        for i in 0..self.tau.len() {
            let delta = other.tau[i] - self.tau[i];
            tau.push(self.tau[i] + delta * nb / n);
            m2.push(self.m2[i] + other.m2[i] + delta * delta * na * nb / n);
        }
        Self::from_parts(self.task, self.n + other.n, tau, m2)
    }
}

/// Sample mean and unbiased (floored) variance of `Φ(x_i, y_i)`.
pub fn moments(samples: &[Sample], fmap: &FeatureMap, task: usize) -> Result<TaskMoments> {
    if samples.is_empty() {
        return input(format!("task {task}: empty sample set"));
    }
    let q = fmap.q();
    let m = fmap.m;
    let n = samples.len();
    let emb = samples
        .iter()
        .map(|s| {
            if s.y >= fmap.n_labels {
                return input(format!("label {} out of range", s.y + 1));
            }
            fmap.embed(&s.x)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tau = vec![0.0; m];
    for (s, e) in samples.iter().zip(&emb) {
        for (t, v) in tau[s.y * q..(s.y + 1) * q].iter_mut().zip(e) {
            *t += v;
        }
    }
    let inv = 1.0 / n as f64;
    tau.iter_mut().for_each(|t| *t *= inv);
    let mut m2 = vec![0.0; m];
    for (s, e) in samples.iter().zip(&emb) {
        for b in 0..fmap.n_labels {
            let blk = b * q..(b + 1) * q;
            for ((acc, t), r) in m2[blk.clone()].iter_mut().zip(&tau[blk]).zip(0..q) {
                let v = if b == s.y { e[r] } else { 0.0 };
                *acc += (v - t) * (v - t);
            }
        }
    }
    Ok(TaskMoments::from_parts(task, n, tau, m2))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChangeEstimate {
    pub task: usize,
    pub d: Vec<f64>,
    pub window: usize,
}

/// Average squared difference of consecutive means. Falls back to
/// `d_init` when fewer than two means are given.
pub fn estimate_change(task: usize, means: &[&[f64]], m: usize, d_init: f64) -> ChangeEstimate {
    if means.len() < 2 {
        return ChangeEstimate { task, d: vec![d_init; m], window: 0 };
    }
    let w = means.len() - 1;
    let mut d = vec![0.0; m];
    for pair in means.windows(2) {
        for (acc, (a, b)) in d.iter_mut().zip(pair[0].iter().zip(pair[1])) {
            *acc += (b - a) * (b - a);
        }
    }
    let inv = 1.0 / w as f64;
    d.iter_mut().for_each(|v| *v *= inv);
    ChangeEstimate { task, d, window: w }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowPolicy {
    /// The `W+1` most recent indices up to `j`.
    Trailing,
    /// The `W+1` indices closest to `j`, ties toward the smaller index.
    Centered,
}

/// 1-based indices used to estimate the change at task `j` among `k` tasks.
pub fn window_indices(j: usize, k: usize, w: usize, policy: WindowPolicy) -> Vec<usize> {
    match policy {
        WindowPolicy::Trailing => (j.saturating_sub(w).max(1)..=j).collect(),
        WindowPolicy::Centered => {
            let mut idx: Vec<usize> = (1..=k).collect();
            idx.sort_by_key(|&i| (i.abs_diff(j), i));
            idx.truncate(w + 1);
            idx.sort_unstable();
            idx
        }
    }
}

/// Change estimates `d_1..d_k` for a sequence of sample means.
pub fn change_sequence(means: &[&[f64]], m: usize, w: usize, policy: WindowPolicy, d_init: f64) -> Vec<ChangeEstimate> {
    let k = means.len();
    (1..=k)
        .map(|j| {
            let idx = window_indices(j, k, w, policy);
            let sel: Vec<&[f64]> = idx.iter().map(|&i| means[i - 1]).collect();
            estimate_change(j, &sel, m, d_init)
        })
        .collect()
}

/// Partial autocorrelation at lags `1..=max_lag` (Durbin–Levinson on the
/// biased sample autocovariance). A constant series yields zeros.
pub fn pacf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let t = series.len();
    if t <= max_lag + 1 {
        return input(format!("series of length {t} too short for {max_lag} lags"));
    }
    let mean = series.iter().sum::<f64>() / t as f64;
    let acov: Vec<f64> = (0..=max_lag)
        .map(|h| (0..t - h).map(|i| (series[i] - mean) * (series[i + h] - mean)).sum::<f64>() / t as f64)
        .collect();
    if acov[0] <= f64::MIN_POSITIVE {
        return Ok(vec![0.0; max_lag]);
    }
    let rho: Vec<f64> = acov.iter().map(|c| c / acov[0]).collect();
    let mut out = Vec::with_capacity(max_lag);
    let mut phi: Vec<f64> = Vec::new();
    for k in 1..=max_lag {
        let num = rho[k] - (1..k).map(|j| phi[j - 1] * rho[k - j]).sum::<f64>();
        let den = 1.0 - (1..k).map(|j| phi[j - 1] * rho[j]).sum::<f64>();
        let pkk = if den.abs() < 1e-300 { 0.0 } else { num / den };
        let mut next = vec![0.0; k];
        for j in 1..k {
            next[j - 1] = phi[j - 1] - pkk * phi[k - j - 1];
        }
        next[k - 1] = pkk;
        phi = next;
        out.push(pkk);
    }
    Ok(out)
}
