//! Order-`p` kinematic state tracking: each mean component carries its
//! first `p` time derivatives, propagated by a truncated Taylor model.

use nalgebra::{DMatrix, DVector};

use super::{Horizon, TrackedEstimate};
use crate::error::{contract, Result};
use crate::task_stats::TaskMoments;

pub const DEFAULT_BETA: f64 = 0.3;
const PINV_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct KinematicState {
    pub task: usize,
    pub horizon: Horizon,
    pub order: usize,
    /// Per component state `[value, first derivative, ...]`.
    pub gamma: Vec<DVector<f64>>,
    pub sigma: Vec<DMatrix<f64>>,
    pub delta: f64,
}

impl KinematicState {
    pub fn estimate(&self) -> TrackedEstimate {
        TrackedEstimate {
            task: self.task,
            horizon: self.horizon,
            tau_hat: self.gamma.iter().map(|g| g[0]).collect(),
            s_hat: self.sigma.iter().map(|s| s[(0, 0)]).collect(),
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// `T = I + Σ_s Δ^s U_s / s!` with `U_s` the `s`-th superdiagonal shift.
pub fn transition(p: usize, delta: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p + 1, p + 1, |r, c| if c >= r { delta.powi((c - r) as i32) / factorial(c - r) } else { 0.0 })
}

/// `g = [Δ^{p+1}/(p+1)!, ..., Δ²/2, Δ]`.
pub fn noise_gain(p: usize, delta: f64) -> DVector<f64> {
    DVector::from_fn(p + 1, |r, _| {
        let e = p + 1 - r;
        delta.powi(e as i32) / factorial(e)
    })
}

pub fn kin_init(mo: &TaskMoments, p: usize) -> KinematicState {
    let gamma = mo
        .tau
        .iter()
        .map(|&t| {
            let mut g = DVector::zeros(p + 1);
            g[0] = t;
            g
        })
        .collect();
    let sigma = mo
        .s
        .iter()
        .map(|&s| {
            let mut m = DMatrix::zeros(p + 1, p + 1);
            m[(0, 0)] = s;
            m
        })
        .collect();
    KinematicState { task: mo.task, horizon: Horizon::Forward, order: p, gamma, sigma, delta: 1.0 }
}

/// Per-component innovation statistics from a forward step, scaled by the
/// first entry of `g` so they estimate `d̄` directly.
#[derive(Clone, Debug, PartialEq)]
pub struct Innovation {
    pub innovation: Vec<f64>,
    pub predicted_var: Vec<f64>,
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        contract(format!("time increment must be positive, got {delta}"))
    }
}

pub fn kin_forward_step(prev: &KinematicState, cur: &TaskMoments, dbar: &[f64], delta: f64) -> Result<KinematicState> {
    Ok(kin_forward_step_innov(prev, cur, dbar, delta)?.0)
}

/// Forward step that also reports the innovation statistics used by
/// [`adapt_dbar`].
pub fn kin_forward_step_innov(
    prev: &KinematicState,
    cur: &TaskMoments,
    dbar: &[f64],
    delta: f64,
) -> Result<(KinematicState, Innovation)> {
    check_delta(delta)?;
    if prev.horizon != Horizon::Forward || prev.task + 1 != cur.task {
        return contract(format!("kinematic forward step from task {} to {}", prev.task, cur.task));
    }
    let p = prev.order;
    let t = transition(p, delta);
    let g = noise_gain(p, delta);
    let ggt = &g * g.transpose();
    let g1 = g[0];
    let m = cur.tau.len();
    let mut gamma = Vec::with_capacity(m);
    let mut sigma = Vec::with_capacity(m);
    let mut innov = Innovation { innovation: Vec::with_capacity(m), predicted_var: Vec::with_capacity(m) };
    for i in 0..m {
        let gp = &t * &prev.gamma[i];
        let tst = &t * &prev.sigma[i] * t.transpose();
        let pp = &tst + &ggt * dbar[i];
        let denom = pp[(0, 0)] + cur.s[i];
        if !(denom > 0.0) {
            return contract(format!("component {i}: singular innovation variance"));
        }
        let eta: DVector<f64> = pp.column(0) / denom;
        let r = cur.tau[i] - gp[0];
        gamma.push(&gp + &eta * r);
        let mut a = DMatrix::identity(p + 1, p + 1);
        for row in 0..=p {
            a[(row, 0)] -= eta[row];
        }
        let s = &a * &pp;
        sigma.push((&s + s.transpose()) * 0.5);
        innov.innovation.push(r / g1);
        innov.predicted_var.push((tst[(0, 0)] + cur.s[i]) / (g1 * g1));
    }
    Ok((KinematicState { task: cur.task, horizon: Horizon::Forward, order: p, gamma, sigma, delta }, innov))
}

pub fn kin_predict_step(prev: &KinematicState, dbar: &[f64], delta: f64) -> Result<KinematicState> {
    check_delta(delta)?;
    if prev.horizon != Horizon::Forward {
        return contract("prediction requires a forward state");
    }
    let p = prev.order;
    let t = transition(p, delta);
    let g = noise_gain(p, delta);
    let ggt = &g * g.transpose();
    let gamma = prev.gamma.iter().map(|v| &t * v).collect();
    let sigma = prev.sigma.iter().zip(dbar).map(|(s, &d)| &t * s * t.transpose() + &ggt * d).collect();
    Ok(KinematicState { task: prev.task + 1, horizon: Horizon::Predicted, order: p, gamma, sigma, delta })
}

fn robust_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = PINV_TOL * smax.max(f64::MIN_POSITIVE);
    if svd.singular_values.iter().any(|&v| v <= tol) {
        log::warn!("near-singular innovation matrix; using pseudo-inverse");
    }
    match m.clone().try_inverse() {
        Some(inv) if svd.singular_values.min() > tol => inv,
        _ => svd.pseudo_inverse(tol).unwrap_or_else(|_| DMatrix::zeros(m.nrows(), m.ncols())),
    }
}

/// RTS step for the kinematic model. `dbar_next`/`delta_next` are the
/// change parameters of the transition into task `j+1`.
pub fn kin_backward_step(
    next: &KinematicState,
    cur: &KinematicState,
    dbar_next: &[f64],
    delta_next: f64,
) -> Result<KinematicState> {
    check_delta(delta_next)?;
    let k = match next.horizon {
        Horizon::Smoothed(k) => k,
        _ => return contract("backward step requires a smoothed successor"),
    };
    if cur.horizon != Horizon::Forward || cur.task + 1 != next.task {
        return contract(format!("kinematic backward step from task {} to {}", next.task, cur.task));
    }
    let p = cur.order;
    let t = transition(p, delta_next);
    let g = noise_gain(p, delta_next);
    let ggt = &g * g.transpose();
    let m = cur.gamma.len();
    let mut gamma = Vec::with_capacity(m);
    let mut sigma = Vec::with_capacity(m);
    for i in 0..m {
        let pp = &t * &cur.sigma[i] * t.transpose() + &ggt * dbar_next[i];
        let h = &cur.sigma[i] * t.transpose() * robust_inverse(&pp);
        gamma.push(&cur.gamma[i] + &h * (&next.gamma[i] - &t * &cur.gamma[i]));
        let s = &cur.sigma[i] + &h * (&next.sigma[i] - &pp) * h.transpose();
        sigma.push((&s + s.transpose()) * 0.5);
    }
    Ok(KinematicState { task: cur.task, horizon: Horizon::Smoothed(k), order: p, gamma, sigma, delta: cur.delta })
}

/// Innovation-matching update of the change variance.
pub fn adapt_dbar(prev: &[f64], innovation: &[f64], predicted_var: &[f64], beta: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&beta) {
        return contract(format!("forgetting factor must lie in [0, 1], got {beta}"));
    }
    Ok(prev
        .iter()
        .zip(innovation.iter().zip(predicted_var))
        .map(|(&d, (&r, &v))| (1.0 - beta) * d + beta * (r * r - v).max(0.0))
        .collect())
}

/// Forward states for `1..=k` with adaptive `d̄`. Returns the states and
/// the `d̄_j` used for the transition into each task (`d̄_1` unused).
pub fn kin_forward_sequence(
    moments: &[TaskMoments],
    p: usize,
    deltas: &[f64],
    dbar_init: f64,
    beta: f64,
) -> Result<(Vec<KinematicState>, Vec<Vec<f64>>)> {
    let m = moments.first().map(|mo| mo.tau.len()).unwrap_or(0);
    let mut states: Vec<KinematicState> = Vec::with_capacity(moments.len());
    let mut used = Vec::with_capacity(moments.len());
    let mut dbar = vec![dbar_init; m];
    for (j, mo) in moments.iter().enumerate() {
        match states.last() {
            None => {
                states.push(kin_init(mo, p));
                used.push(dbar.clone());
            }
            Some(prev) => {
                let (st, inn) = kin_forward_step_innov(prev, mo, &dbar, deltas[j])?;
                used.push(dbar.clone());
                dbar = adapt_dbar(&dbar, &inn.innovation, &inn.predicted_var, beta)?;
                states.push(st);
            }
        }
    }
    used.push(dbar);
    Ok((states, used))
}

/// Kinematic analogue of `smooth_sequence`. `dbars[j]`/`deltas[j]` belong
/// to the transition into task `j+1` (0-based arrays).
pub fn kin_smooth_sequence(
    forwards: &[KinematicState],
    dbars: &[Vec<f64>],
    deltas: &[f64],
    b: Option<usize>,
) -> Result<Vec<KinematicState>> {
    let k = forwards.len();
    if k == 0 {
        return contract("no forward states to smooth");
    }
    let b = b.unwrap_or(k - 1).min(k - 1);
    let mut last = forwards[k - 1].clone();
    last.horizon = Horizon::Smoothed(k);
    let mut rev = vec![last];
    for j in (k - b..k).rev() {
        let next = rev.last().expect("nonempty");
        rev.push(kin_backward_step(next, &forwards[j - 1], &dbars[j], deltas[j])?);
    }
    rev.reverse();
    Ok(rev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracker::{backward_step, forward_step};

    fn mo(task: usize, tau: f64, s: f64) -> TaskMoments {
        TaskMoments { task, n: 1, tau: vec![tau], sigma2: vec![s], s: vec![s], m2: vec![0.0] }
    }

    #[test]
    fn transition_p1() {
        assert_eq!(transition(1, 1.0), DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]));
        assert_eq!(noise_gain(1, 1.0), DVector::from_vec(vec![0.5, 1.0]));
        let t2 = transition(2, 2.0);
        assert_eq!(t2[(0, 2)], 2.0);
        assert_eq!(noise_gain(0, 3.0), DVector::from_vec(vec![3.0]));
    }

    #[test]
    fn p0_reduces() {
        let a = kin_init(&mo(1, 0.3, 0.5), 0);
        let delta = 1.5;
        let dbar = 0.2;
        let b = kin_forward_step(&a, &mo(2, 1.1, 0.4), &[dbar], delta).unwrap();
        let base = forward_step(&a.estimate(), &mo(2, 1.1, 0.4), &[delta * delta * dbar]).unwrap();
        assert!((b.estimate().tau_hat[0] - base.tau_hat[0]).abs() < 1e-12);
        assert!((b.estimate().s_hat[0] - base.s_hat[0]).abs() < 1e-12);
        let mut nk = b.clone();
        nk.horizon = Horizon::Smoothed(2);
        let sm = kin_backward_step(&nk, &a, &[dbar], delta).unwrap();
        let bs = backward_step(&nk.estimate(), &a.estimate(), &[delta * delta * dbar]).unwrap();
        assert!((sm.estimate().tau_hat[0] - bs.tau_hat[0]).abs() < 1e-12);
        assert!((sm.estimate().s_hat[0] - bs.s_hat[0]).abs() < 1e-12);
    }

    #[test]
    fn adapt_examples() {
        assert_eq!(adapt_dbar(&[0.7], &[2.0], &[4.0], 1.0).unwrap(), vec![0.0]);
        assert_eq!(adapt_dbar(&[0.7], &[2.0], &[1.0], 0.0).unwrap(), vec![0.7]);
        let v = adapt_dbar(&[0.2], &[1.0], &[0.4], 0.5).unwrap();
        assert!((v[0] - 0.4).abs() < 1e-15);
        assert!(adapt_dbar(&[0.2], &[1.0], &[0.4], 1.5).is_err());
    }

    #[test]
    fn smoothed_at_k_is_forward() {
        let moms = [mo(1, 0.0, 0.3), mo(2, 1.0, 0.3)];
        let (f, d) = kin_forward_sequence(&moms, 1, &[1.0, 1.0], 0.1, DEFAULT_BETA).unwrap();
        let s = kin_smooth_sequence(&f, &d, &[1.0, 1.0], None).unwrap();
        assert_eq!(s[1].gamma, f[1].gamma);
        assert_eq!(s[1].sigma, f[1].sigma);
    }
}
