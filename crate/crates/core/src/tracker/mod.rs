//! Componentwise forward (Kalman) and backward (RTS) tracking of mean
//! vectors, plus prediction without target samples.

mod kinematic;

pub use kinematic::{
    adapt_dbar, kin_backward_step, kin_forward_sequence, kin_forward_step, kin_forward_step_innov, kin_init, kin_predict_step,
    kin_smooth_sequence, noise_gain, transition, Innovation, KinematicState, DEFAULT_BETA,
};

use crate::error::{contract, Result};
use crate::task_stats::TaskMoments;

pub const DEFAULT_BACKWARD_STEPS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Horizon {
    /// Raw single-task moments.
    Single,
    /// Uses tasks `1..=j`.
    Forward,
    /// Uses tasks `1..=k`.
    Smoothed(usize),
    /// Uses tasks `1..j` only.
    Predicted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackedEstimate {
    pub task: usize,
    pub horizon: Horizon,
    pub tau_hat: Vec<f64>,
    pub s_hat: Vec<f64>,
}

impl TrackedEstimate {
    /// Forward estimate at the first task: the raw moments.
    pub fn initial(mo: &TaskMoments) -> Self {
        Self { task: mo.task, horizon: Horizon::Forward, tau_hat: mo.tau.clone(), s_hat: mo.s.clone() }
    }

    pub fn single(mo: &TaskMoments) -> Self {
        Self { task: mo.task, horizon: Horizon::Single, tau_hat: mo.tau.clone(), s_hat: mo.s.clone() }
    }
}

fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        contract(format!("{name} has non-finite entries"))
    }
}

pub fn forward_step(prev: &TrackedEstimate, cur: &TaskMoments, d: &[f64]) -> Result<TrackedEstimate> {
    if prev.horizon != Horizon::Forward || prev.task + 1 != cur.task {
        return contract(format!("forward step from task {} ({:?}) to {}", prev.task, prev.horizon, cur.task));
    }
    check_finite("d", d)?;
    check_finite("s", &cur.s)?;
    let m = cur.tau.len();
    let mut tau_hat = Vec::with_capacity(m);
    let mut s_hat = Vec::with_capacity(m);
    for i in 0..m {
        let p = prev.s_hat[i] + d[i];
        let eta = p / (cur.s[i] + p);
        tau_hat.push(prev.tau_hat[i] + eta * (cur.tau[i] - prev.tau_hat[i]));
        s_hat.push(eta * cur.s[i]);
    }
    Ok(TrackedEstimate { task: cur.task, horizon: Horizon::Forward, tau_hat, s_hat })
}

/// Estimate for task `prev.task + 1` before any of its samples are seen.
pub fn predict_step(prev: &TrackedEstimate, d: &[f64]) -> Result<TrackedEstimate> {
    if prev.horizon != Horizon::Forward {
        return contract("prediction requires a forward estimate");
    }
    check_finite("d", d)?;
    Ok(TrackedEstimate {
        task: prev.task + 1,
        horizon: Horizon::Predicted,
        tau_hat: prev.tau_hat.clone(),
        s_hat: prev.s_hat.iter().zip(d).map(|(s, d)| s + d).collect(),
    })
}

/// One RTS step: combine the smoothed estimate of task `j+1` with the
/// forward estimate of task `j`. `d_next` is the change into task `j+1`.
pub fn backward_step(next: &TrackedEstimate, cur: &TrackedEstimate, d_next: &[f64]) -> Result<TrackedEstimate> {
    let k = match next.horizon {
        Horizon::Smoothed(k) => k,
        _ => return contract("backward step requires a smoothed successor"),
    };
    if cur.horizon != Horizon::Forward || cur.task + 1 != next.task {
        return contract(format!("backward step from task {} to {}", next.task, cur.task));
    }
    check_finite("d", d_next)?;
    let m = cur.tau_hat.len();
    let mut tau_hat = Vec::with_capacity(m);
    let mut s_hat = Vec::with_capacity(m);
    for i in 0..m {
        let denom = cur.s_hat[i] + d_next[i];
        let eta = if denom > 0.0 { d_next[i] / denom } else { 0.0 };
        let (tn, sn) = (next.tau_hat[i], next.s_hat[i]);
        tau_hat.push(tn + eta * (cur.tau_hat[i] - tn));
        s_hat.push(sn + eta * (cur.s_hat[i] - 2.0 * sn + eta * sn));
    }
    Ok(TrackedEstimate { task: cur.task, horizon: Horizon::Smoothed(k), tau_hat, s_hat })
}

/// Forward estimates for tasks `1..=k`. `changes[j-1]` is `d_j`.
pub fn forward_sequence(moments: &[TaskMoments], changes: &[Vec<f64>]) -> Result<Vec<TrackedEstimate>> {
    let mut out: Vec<TrackedEstimate> = Vec::with_capacity(moments.len());
    for (j, mo) in moments.iter().enumerate() {
        let est = match out.last() {
            None => TrackedEstimate::initial(mo),
            Some(prev) => forward_step(prev, mo, &changes[j])?,
        };
        out.push(est);
    }
    Ok(out)
}

/// Smoothed estimates for tasks `k-b..=k` in ascending order. `None`
/// smooths the whole sequence; `b > k-1` is clamped (second value true).
pub fn smooth_sequence(
    forwards: &[TrackedEstimate],
    changes: &[Vec<f64>],
    b: Option<usize>,
) -> Result<(Vec<TrackedEstimate>, bool)> {
    let k = forwards.len();
    if k == 0 {
        return contract("no forward estimates to smooth");
    }
    let want = b.unwrap_or(k - 1);
    let clamped = want > k - 1;
    if clamped {
        log::warn!("backward steps {want} clamped to {}", k - 1);
    }
    let b = want.min(k - 1);
    let mut last = forwards[k - 1].clone();
    last.horizon = Horizon::Smoothed(k);
    let mut rev = vec![last];
    for j in (k - b..k).rev() {
        let next = rev.last().expect("nonempty");
        rev.push(backward_step(next, &forwards[j - 1], &changes[j])?);
    }
    rev.reverse();
    Ok((rev, clamped))
}
