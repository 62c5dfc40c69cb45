//! Effective sample size of forward and forward–backward learning, its
//! closed-form lower bounds, and sliding-window baselines.

use crate::error::{input, Result};

/// Forward ESS `n_j^j` for `j = 1..k`. `sigma2[j]` and `d[j]` are the sup
/// norms of task `j+1`'s variance and of the change into it (`d[0]` unused).
pub fn ess_forward(n: &[f64], sigma2: &[f64], d: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(n.len());
    for j in 0..n.len() {
        let v = match out.last() {
            None => n[0],
            Some(&prev) => n[j] + prev * sigma2[j] / (sigma2[j] + d[j] * prev),
        };
        out.push(v);
    }
    out
}

/// Backward auxiliary ESS `n_j^{-k}` for every `j`.
pub fn ess_backward_aux(n: &[f64], sigma2: &[f64], d: &[f64]) -> Vec<f64> {
    let k = n.len();
    let mut out = vec![0.0; k];
    if k == 0 {
        return out;
    }
    out[k - 1] = n[k - 1];
    for j in (0..k - 1).rev() {
        let nx = out[j + 1];
        out[j] = n[j] + nx * sigma2[j] / (sigma2[j] + nx * d[j + 1]);
    }
    out
}

/// `(n_j^{-k}, n_j^k)` for the 1-based task `j`.
pub fn ess_combined(n: &[f64], sigma2: &[f64], d: &[f64], j: usize) -> Result<(f64, f64)> {
    let k = n.len();
    if j == 0 || j > k {
        return input(format!("task index {j} outside 1..={k}"));
    }
    let fwd = ess_forward(&n[..j], &sigma2[..j], &d[..j]);
    let aux = ess_backward_aux(n, sigma2, d);
    let nj = fwd[j - 1];
    let comb = if j == k {
        nj
    } else {
        let nx = aux[j];
        nj + nx * sigma2[j - 1] / (sigma2[j - 1] + nx * d[j])
    };
    Ok((aux[j - 1], comb))
}

/// `n_j^k` for every task.
pub fn ess_combined_all(n: &[f64], sigma2: &[f64], d: &[f64]) -> Vec<f64> {
    let fwd = ess_forward(n, sigma2, d);
    let aux = ess_backward_aux(n, sigma2, d);
    let k = n.len();
    (0..k)
        .map(|j| if j + 1 == k { fwd[j] } else { fwd[j] + aux[j + 1] * sigma2[j] / (sigma2[j] + aux[j + 1] * d[j + 1]) })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EssInputs {
    pub n: f64,
    pub d: f64,
    pub j: usize,
    pub k: usize,
}

impl EssInputs {
    fn check(&self) -> Result<()> {
        if !(self.n >= 1.0 && self.d >= 0.0 && self.j >= 1 && self.j <= self.k) {
            return input(format!("invalid ESS inputs {self:?}"));
        }
        Ok(())
    }

    /// Uniform per-task vectors (σ² = 1) for the recursions.
    pub fn uniform(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (vec![self.n; self.k], vec![1.0; self.k], vec![self.d; self.k])
    }
}

/// `α = 2/(√(1+4/(nd)) − 1)`, in a form that is stable for small `nd`.
pub fn alpha(nd: f64) -> f64 {
    nd / 2.0 * ((1.0 + 4.0 / nd).sqrt() + 1.0)
}

/// `((1+α)/α)·((1+α)^e − 1)/((1+α)^{e+1} + 1)`, with the `α → 0` limit `e/2`.
fn growth(a: f64, e: f64) -> f64 {
    if e == 0.0 {
        return 0.0;
    }
    if a == 0.0 {
        return e / 2.0;
    }
    let l = e * a.ln_1p();
    let one_minus_inv = -(-l).exp_m1();
    let inv = (-l).exp();
    (1.0 + a) / a * one_minus_inv / ((1.0 + a) + inv)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    NdSmall,
    NdMid,
    NdLarge,
}

pub fn regime(nd: f64, j: usize) -> Regime {
    let jj = (j * j) as f64;
    if nd * jj < 1.0 {
        Regime::NdSmall
    } else if nd < 1.0 {
        Regime::NdMid
    } else {
        Regime::NdLarge
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LowerBounds {
    pub forward: f64,
    pub combined: f64,
    pub regime: Regime,
    /// Regime case for forward learning (`n` when `j = 1`).
    pub forward_regime: f64,
    /// Regime case for forward–backward learning, defined for `1 < j < k`.
    pub combined_regime: Option<f64>,
}

pub fn ess_lower_bounds(inp: EssInputs) -> Result<LowerBounds> {
    inp.check()?;
    let EssInputs { n, d, j, k } = inp;
    let nd = n * d;
    let a = if nd > 0.0 { alpha(nd) } else { 0.0 };
    let fgrow = growth(a, (2 * j - 2) as f64);
    let bgrow = growth(a, (2 * (k - j)) as f64);
    let forward = n * (1.0 + fgrow);
    let combined = n * (1.0 + fgrow + bgrow);
    let reg = regime(nd, j);
    let jf = j as f64;
    let kj = (k - j) as f64;
    let forward_regime = if j == 1 {
        n
    } else {
        match reg {
            Regime::NdSmall => n * (1.0 + (jf - 1.0) / 3.0),
            Regime::NdMid => n * (1.0 + 1.0 / (5.0 * nd.sqrt())),
            Regime::NdLarge => n * (1.0 + 1.0 / (3.0 * nd)),
        }
    };
    let combined_regime = (j > 1 && j < k).then(|| match reg {
        Regime::NdSmall => n * (1.0 + (jf - 1.0) / 3.0 + jf * kj / (jf + 2.0 * kj)),
        Regime::NdMid => n * (1.0 + 2.0 / (5.0 * nd.sqrt())),
        Regime::NdLarge => n * (1.0 + 2.0 / (3.0 * nd)),
    });
    Ok(LowerBounds { forward, combined, regime: reg, forward_regime, combined_regime })
}

/// Sliding-window ESS: trailing window of `w_bar` tasks, or a window
/// extending `w_hat` tasks back when `w_hat` is given.
pub fn ess_window(n: f64, d: f64, w_bar: usize, w_hat: Option<usize>) -> f64 {
    let wb = w_bar as f64;
    let nd = n * d;
    let coef = match w_hat {
        None => (wb + 1.0) * (2.0 * wb + 1.0),
        Some(h) => {
            let wh = h as f64;
            6.0 * wh * wh + 2.0 * wb * wb + 3.0 * wb + 1.0 - 6.0 * wh * wb - 6.0 * wh
        }
    };
    n * 6.0 * wb / (coef * nd + 6.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EssReport {
    pub inputs: EssInputs,
    pub forward: f64,
    pub backward_aux: f64,
    pub combined: f64,
    pub bounds: LowerBounds,
    pub windows: Vec<(usize, Option<usize>, f64)>,
}

/// Recursions, bounds and window baselines for uniform inputs with σ² = 1.
pub fn ess_report(inp: EssInputs, windows: &[(usize, Option<usize>)]) -> Result<EssReport> {
    let bounds = ess_lower_bounds(inp)?;
    let (n, s, d) = inp.uniform();
    let forward = ess_forward(&n[..inp.j], &s[..inp.j], &d[..inp.j])[inp.j - 1];
    let (backward_aux, combined) = ess_combined(&n, &s, &d, inp.j)?;
    Ok(EssReport {
        inputs: inp,
        forward,
        backward_aux,
        combined,
        bounds,
        windows: windows.iter().map(|&(w, h)| (w, h, ess_window(inp.n, inp.d, w, h))).collect(),
    })
}

/// Scale of the generalization term: `M(κ√(2 log(2m/δ)) + λ0)/√ESS`.
pub fn bound_scale(m: usize, bound_m: f64, kappa: f64, delta: f64, lambda0: f64, ess: f64) -> f64 {
    bound_m * (kappa * (2.0 * (2.0 * m as f64 / delta).ln()).sqrt() + lambda0) / ess.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn forward_examples() {
        assert_eq!(ess_forward(&[7.0], &[1.0], &[0.0]), vec![7.0]);
        let v = ess_forward(&[10.0, 10.0], &[1.0, 1.0], &[0.0, 0.01]);
        assert!((v[1] - (10.0 + 10.0 / 1.1)).abs() < 1e-12);
        let v = ess_forward(&[10.0, 10.0], &[1.0, 1.0], &[0.0, 1e15]);
        assert!((v[1] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn combined_examples() {
        let n = vec![5.0; 7];
        let s = vec![1.0; 7];
        let d = vec![0.02; 7];
        let (_, last) = ess_combined(&n, &s, &d, 7).unwrap();
        assert_eq!(last, ess_forward(&n, &s, &d)[6]);
        // Symmetric chain: the middle task gains equally from both sides.
        let f = ess_forward(&n, &s, &d);
        let aux = ess_backward_aux(&n, &s, &d);
        assert!((f[3] - aux[3]).abs() < 1e-12);
        let zero = vec![0.0; 7];
        for j in 1..=7 {
            let (_, c) = ess_combined(&n, &s, &zero, j).unwrap();
            assert!((c - 35.0).abs() < 1e-9);
        }
        assert!(ess_combined(&n, &s, &d, 0).is_err());
    }

    #[test]
    fn bound_examples() {
        let b = ess_lower_bounds(EssInputs { n: 10.0, d: 1e-4, j: 5, k: 5 }).unwrap();
        assert_eq!(b.regime, Regime::NdSmall);
        assert!((b.forward_regime - 10.0 * (1.0 + 4.0 / 3.0)).abs() < 1e-12);
        let b = ess_lower_bounds(EssInputs { n: 10.0, d: 1.0, j: 3, k: 3 }).unwrap();
        assert_eq!(b.regime, Regime::NdLarge);
        assert!((b.forward_regime - 10.0 * (1.0 + 1.0 / 30.0)).abs() < 1e-12);
        let b = ess_lower_bounds(EssInputs { n: 10.0, d: 0.3, j: 1, k: 4 }).unwrap();
        assert_eq!(b.forward, 10.0);
        assert_eq!(b.forward_regime, 10.0);
        let b = ess_lower_bounds(EssInputs { n: 4.0, d: 0.0, j: 3, k: 6 }).unwrap();
        assert!((b.forward - 12.0).abs() < 1e-12);
        assert!((b.combined - 24.0).abs() < 1e-12);
    }

    #[test]
    fn window_examples() {
        assert!((ess_window(8.0, 0.05, 1, None) - 8.0 / 1.4).abs() < 1e-12);
        assert!((ess_window(8.0, 0.0, 6, None) - 48.0).abs() < 1e-12);
        let grid: Vec<f64> = (1..30).map(|w| ess_window(10.0, 1.0, w, None)).collect();
        assert!(grid.windows(2).all(|p| p[1] < p[0]));
    }

    proptest! {
        #[test]
        fn ordering(n in 1.0..200.0f64, d in 1e-6..10.0f64, k in 1usize..40, jf in 0.0..1.0f64) {
            let j = 1 + ((k - 1) as f64 * jf) as usize;
            let inp = EssInputs { n, d, j, k };
            let r = ess_report(inp, &[]).unwrap();
            prop_assert!(r.forward >= n * (1.0 - 1e-12));
            prop_assert!(r.combined >= r.forward * (1.0 - 1e-12));
            prop_assert!(r.forward >= r.bounds.forward * (1.0 - 1e-12));
            prop_assert!(r.combined >= r.bounds.combined * (1.0 - 1e-12));
        }

        #[test]
        fn monotone(n in 1.0..200.0f64, d in 1e-6..10.0f64, k in 2usize..30) {
            let f = ess_forward(&vec![n; k], &vec![1.0; k], &vec![d; k]);
            prop_assert!(f.windows(2).all(|p| p[1] >= p[0] * (1.0 - 1e-12)));
            let c1 = ess_combined(&vec![n; k], &vec![1.0; k], &vec![d; k], 1).unwrap().1;
            let c2 = ess_combined(&vec![n; k + 1], &vec![1.0; k + 1], &vec![d; k + 1], 1).unwrap().1;
            prop_assert!(c2 >= c1 * (1.0 - 1e-12), "{} < {}", c2, c1);
        }
    }
}
