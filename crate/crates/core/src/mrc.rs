//! Minimax risk classifiers: the dual objective, an accelerated subgradient
//! solver, classification rules and error bounds.

use std::collections::HashSet;

use crate::error::{input, Error, Result};
use crate::features::FeatureMap;
use crate::tracker::TrackedEstimate;

pub const DEFAULT_LAMBDA0: f64 = 0.7;
pub const DEFAULT_K_COLD: usize = 2000;
pub const DEFAULT_K_WARM: usize = 300;
pub const MAX_LABELS: usize = 12;
const C_X_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintySpec {
    pub tau: Vec<f64>,
    pub lambda: Vec<f64>,
    pub lambda0: f64,
}

impl UncertaintySpec {
    /// `λ = λ0·√ŝ` around the tracked mean.
    pub fn from_estimate(est: &TrackedEstimate, lambda0: f64) -> Self {
        Self {
            tau: est.tau_hat.clone(),
            lambda: est.s_hat.iter().map(|s| lambda0 * s.max(0.0).sqrt()).collect(),
            lambda0,
        }
    }
}

/// Constraint rows `(Σ_{y∈C} Φ(x,y)/|C|, 1/|C|)` over anchors `x` and
/// nonempty `C ⊆ Y`. Rows are stored implicitly: anchor-major, subsets in
/// bitmask order `1..2^|Y|`.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraints {
    pub m: usize,
    pub q: usize,
    pub n_labels: usize,
    /// Row-major `anchors × q` embeddings.
    pub embeddings: Vec<f64>,
    pub n_anchors: usize,
}

impl Constraints {
    pub fn subsets(&self) -> usize {
        (1usize << self.n_labels) - 1
    }

    pub fn rows(&self) -> usize {
        self.n_anchors * self.subsets()
    }

    fn split(&self, row: usize) -> (usize, usize) {
        (row / self.subsets(), row % self.subsets() + 1)
    }

    pub fn h(&self, row: usize) -> f64 {
        let (_, mask) = self.split(row);
        1.0 / mask.count_ones() as f64
    }

    /// Dense row `f_i`.
    pub fn row(&self, row: usize) -> Vec<f64> {
        let mut f = vec![0.0; self.m];
        self.add_row(row, 1.0, &mut f);
        f
    }

    fn add_row(&self, row: usize, scale: f64, out: &mut [f64]) {
        let (a, mask) = self.split(row);
        let e = &self.embeddings[a * self.q..(a + 1) * self.q];
        let c = scale / mask.count_ones() as f64;
        for y in 0..self.n_labels {
            if mask & (1 << y) != 0 {
                for (o, v) in out[y * self.q..(y + 1) * self.q].iter_mut().zip(e) {
                    *o += c * v;
                }
            }
        }
    }

    /// Append anchors, skipping bitwise duplicates of existing ones.
    pub fn extend(&mut self, instances: &[&[f64]], fmap: &FeatureMap) -> Result<()> {
        let mut seen: HashSet<Vec<u64>> = HashSet::new();
        let mut e = vec![0.0; self.q];
        for a in 0..self.n_anchors {
            seen.insert(self.embeddings[a * self.q..(a + 1) * self.q].iter().map(|v| v.to_bits()).collect());
        }
        for x in instances {
            fmap.embedding.embed_into(x, &mut e)?;
            if seen.insert(e.iter().map(|v| v.to_bits()).collect()) {
                self.embeddings.extend_from_slice(&e);
                self.n_anchors += 1;
            }
        }
        Ok(())
    }
}

pub fn build_constraints(instances: &[&[f64]], fmap: &FeatureMap) -> Result<Constraints> {
    if instances.is_empty() {
        return input("no anchor instances");
    }
    if fmap.n_labels > MAX_LABELS {
        return Err(Error::Config(format!(
            "{} labels exceed the limit of {MAX_LABELS}: constraint rows grow as n·2^|Y| and the solver costs O(n·2^|Y|·K·m)",
            fmap.n_labels
        )));
    }
    let mut c = Constraints { m: fmap.m, q: fmap.q(), n_labels: fmap.n_labels, embeddings: Vec::new(), n_anchors: 0 };
    c.extend(instances, fmap)?;
    Ok(c)
}

/// `max_i f_iᵀμ − h_i` and the first maximizing row.
pub fn phi_of_mu(c: &Constraints, mu: &[f64]) -> (f64, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    let subsets = c.subsets();
    let mut scores = vec![0.0; c.n_labels];
    for a in 0..c.n_anchors {
        let e = &c.embeddings[a * c.q..(a + 1) * c.q];
        for (y, s) in scores.iter_mut().enumerate() {
            *s = mu[y * c.q..(y + 1) * c.q].iter().zip(e).map(|(m, v)| m * v).sum();
        }
        for mask in 1..=subsets {
            let mut sum = 0.0;
            for (y, s) in scores.iter().enumerate() {
                if mask & (1 << y) != 0 {
                    sum += s;
                }
            }
            let card = mask.count_ones() as f64;
            let v = (sum - 1.0) / card;
            if v > best {
                best = v;
                arg = a * subsets + mask - 1;
            }
        }
    }
    (best, arg)
}

/// Dual objective `1 − τᵀμ + φ(μ) + λᵀ|μ|`.
pub fn objective(spec: &UncertaintySpec, c: &Constraints, mu: &[f64]) -> f64 {
    objective_with_phi(spec, mu, phi_of_mu(c, mu).0)
}

fn objective_with_phi(spec: &UncertaintySpec, mu: &[f64], phi: f64) -> f64 {
    let mut v = 1.0 + phi;
    for i in 0..mu.len() {
        v += -spec.tau[i] * mu[i] + spec.lambda[i] * mu[i].abs();
    }
    v
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub iterations: usize,
    pub warm_start: Option<Vec<f64>>,
}

impl SolverConfig {
    pub fn cold(iterations: usize) -> Self {
        Self { iterations, warm_start: None }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::cold(DEFAULT_K_COLD)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MrcModel {
    pub mu: Vec<f64>,
    pub phi_mu: f64,
    pub risk: f64,
    pub lambda0: f64,
    pub n_labels: usize,
    /// Iteration at which the reported iterate was found (0 = start).
    pub best_iter: usize,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Accelerated subgradient iterations with Nesterov extrapolation; reports
/// the best iterate seen.
pub fn solve(spec: &UncertaintySpec, c: &Constraints, cfg: &SolverConfig) -> Result<MrcModel> {
    let m = c.m;
    if spec.tau.len() != m || spec.lambda.len() != m {
        return input(format!("uncertainty spec has dim {} but features have {m}", spec.tau.len()));
    }
    if cfg.iterations == 0 {
        return Err(Error::Config("solver needs at least one iteration".into()));
    }
    let mut mu = match &cfg.warm_start {
        Some(w) if w.len() == m => w.clone(),
        Some(w) => return input(format!("warm start has dim {}, expected {m}", w.len())),
        None => vec![0.0; m],
    };
    let mut mubar = mu.clone();
    let mut next_bar = vec![0.0; m];
    let mut best_mu = mu.clone();
    let mut best_val = f64::INFINITY;
    let mut best_phi = 0.0;
    let mut best_iter = 0;
    for l in 1..=cfg.iterations + 1 {
        let (phi, row) = phi_of_mu(c, &mu);
        let val = objective_with_phi(spec, &mu, phi);
        if !val.is_finite() {
            return Err(Error::Numerical { iter: l, msg: format!("objective is {val}") });
        }
        if val < best_val {
            best_val = val;
            best_phi = phi;
            best_mu.copy_from_slice(&mu);
            best_iter = l - 1;
        }
        if l > cfg.iterations {
            break;
        }
        let lf = l as f64;
        let a = 1.0 / (lf + 1.0).powf(1.5);
        let theta = 2.0 / (lf + 1.0);
        let theta_next = 2.0 / (lf + 2.0);
        for i in 0..m {
            next_bar[i] = mu[i] + a * (spec.tau[i] - spec.lambda[i] * sign(mu[i]));
        }
        c.add_row(row, -a, &mut next_bar);
        let mom = theta_next * (1.0 / theta - 1.0);
        for i in 0..m {
            mu[i] = next_bar[i] + mom * (next_bar[i] - mubar[i]);
        }
        std::mem::swap(&mut mubar, &mut next_bar);
    }
    Ok(MrcModel { mu: best_mu, phi_mu: best_phi, risk: best_val, lambda0: spec.lambda0, n_labels: c.n_labels, best_iter })
}

impl MrcModel {
    /// The uniform rule (`μ = 0`).
    pub fn uniform(m: usize, n_labels: usize, lambda0: f64) -> Self {
        Self {
            mu: vec![0.0; m],
            phi_mu: -1.0 / n_labels as f64,
            risk: 1.0 - 1.0 / n_labels as f64,
            lambda0,
            n_labels,
            best_iter: 0,
        }
    }

    pub fn scores(&self, x: &[f64], fmap: &FeatureMap) -> Result<Vec<f64>> {
        let e = fmap.embed(x)?;
        Ok(fmap.scores_from_embedding(&e, &self.mu))
    }

    pub fn classify_prob(&self, x: &[f64], fmap: &FeatureMap) -> Result<Vec<f64>> {
        Ok(prob_from_scores(&self.scores(x, fmap)?, self.phi_mu))
    }

    pub fn classify_det(&self, x: &[f64], fmap: &FeatureMap) -> Result<usize> {
        Ok(argmax(&self.scores(x, fmap)?))
    }
}

/// `h(y|x) = (s_y − φ)_+ / c_x`, uniform when `c_x` vanishes.
pub fn prob_from_scores(scores: &[f64], phi: f64) -> Vec<f64> {
    let pos: Vec<f64> = scores.iter().map(|s| (s - phi).max(0.0)).collect();
    let c: f64 = pos.iter().sum();
    if c <= C_X_TOL {
        return vec![1.0 / scores.len() as f64; scores.len()];
    }
    pos.iter().map(|p| p / c).collect()
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorBound {
    pub risk: f64,
    /// `(|τ∞ − τ| − λ)₊ᵀ|μ|` when the true mean is known.
    pub correction: Option<f64>,
}

impl ErrorBound {
    pub fn certified(&self) -> f64 {
        self.risk + self.correction.unwrap_or(0.0)
    }
}

pub fn error_bound(model: &MrcModel, spec: &UncertaintySpec, tau_inf: Option<&[f64]>) -> ErrorBound {
    let correction = tau_inf.map(|ti| {
        (0..model.mu.len())
            .map(|i| ((ti[i] - spec.tau[i]).abs() - spec.lambda[i]).max(0.0) * model.mu[i].abs())
            .sum()
    });
    ErrorBound { risk: model.risk, correction }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::InstanceEmbedding;
    use proptest::prelude::*;

    fn fmap(q: usize, labels: usize) -> FeatureMap {
        FeatureMap::new(InstanceEmbedding::identity(q).unwrap(), labels).unwrap()
    }

    #[test]
    fn rows_for_one_instance() {
        let f = fmap(2, 2);
        let c = build_constraints(&[&[1.0, 2.0]], &f).unwrap();
        assert_eq!(c.rows(), 3);
        assert_eq!((0..3).map(|r| c.h(r)).collect::<Vec<_>>(), vec![1.0, 1.0, 0.5]);
        assert_eq!(c.row(0), vec![1.0, 2.0, 0.0, 0.0]);
        assert_eq!(c.row(1), vec![0.0, 0.0, 1.0, 2.0]);
        assert_eq!(c.row(2), vec![0.5, 1.0, 0.5, 1.0]);
        let d = build_constraints(&[&[1.0, 2.0], &[1.0, 2.0]], &f).unwrap();
        assert_eq!(d.rows(), 3);
        let z = build_constraints(&[&[0.0, 0.0]], &f).unwrap();
        assert!((0..3).all(|r| z.row(r).iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn label_guard() {
        let f = fmap(1, 13);
        assert!(matches!(build_constraints(&[&[1.0]], &f), Err(Error::Config(_))));
    }

    #[test]
    fn phi_examples() {
        let f = fmap(1, 2);
        let c = build_constraints(&[&[1.0]], &f).unwrap();
        assert_eq!(phi_of_mu(&c, &[0.0, 0.0]), (-0.5, 2));
        // Single-label map emulation: the {1} row with μ = [2, -10].
        let (v, r) = phi_of_mu(&c, &[2.0, -10.0]);
        assert_eq!((v, r), (1.0, 0));
    }

    #[test]
    fn huge_lambda_gives_zero() {
        let f = fmap(2, 2);
        let c = build_constraints(&[&[0.3, -0.5], &[0.9, 0.1]], &f).unwrap();
        let spec = UncertaintySpec { tau: vec![0.2, -0.1, 0.3, 0.0], lambda: vec![1e6; 4], lambda0: 1.0 };
        let m = solve(&spec, &c, &SolverConfig::cold(200)).unwrap();
        assert!(m.mu.iter().all(|v| v.abs() < 1e-9));
        assert!((m.risk - 0.5).abs() < 1e-9);
    }

    #[test]
    fn prob_examples() {
        assert_eq!(prob_from_scores(&[0.0, 0.0], -0.5), vec![0.5, 0.5]);
        let p = prob_from_scores(&[2.0, 1.0], 0.0);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(prob_from_scores(&[1.0, -1.0], 0.0), vec![1.0, 0.0]);
        assert_eq!(prob_from_scores(&[-1.0, -1.0], 0.0), vec![0.5, 0.5]);
    }

    #[test]
    fn det_examples() {
        let f = fmap(1, 2);
        let m = MrcModel::uniform(2, 2, 0.7);
        assert_eq!(m.classify_det(&[1.0], &f).unwrap(), 0);
        let m = MrcModel { mu: vec![0.1, 0.9], ..m };
        assert_eq!(m.classify_det(&[1.0], &f).unwrap(), 1);
    }

    #[test]
    fn bound_examples() {
        let model = MrcModel { mu: vec![1.0, -2.0], phi_mu: 0.0, risk: 0.3, lambda0: 0.7, n_labels: 2, best_iter: 0 };
        let spec = UncertaintySpec { tau: vec![0.5, 0.5], lambda: vec![0.1, 0.1], lambda0: 0.7 };
        let b = error_bound(&model, &spec, Some(&[0.55, 0.45]));
        assert_eq!(b.correction, Some(0.0));
        assert_eq!(b.certified(), 0.3);
        let b = error_bound(&model, &spec, Some(&[0.8, 0.5]));
        assert!((b.correction.unwrap() - 0.2).abs() < 1e-15);
        let zero = MrcModel { mu: vec![0.0, 0.0], ..model };
        assert_eq!(error_bound(&zero, &spec, Some(&[9.0, -9.0])).certified(), 0.3);
    }

    #[test]
    fn two_point_bound_covers_error() {
        // Support {x=1 → y=0 w.p. 0.8, y=1 w.p. 0.2} ∪ {x=-1 → y=1}. Equal weights.
        let f = fmap(1, 2);
        let pts: [(f64, usize, f64); 3] = [(1.0, 0, 0.4), (1.0, 1, 0.1), (-1.0, 1, 0.5)];
        let mut tau_inf = vec![0.0; 2];
        for &(x, y, p) in &pts {
            tau_inf[y] += p * x;
        }
        let c = build_constraints(&[&[1.0], &[-1.0]], &f).unwrap();
        let spec = UncertaintySpec { tau: vec![tau_inf[0] + 0.05, tau_inf[1] - 0.02], lambda: vec![0.01, 0.01], lambda0: 0.7 };
        let model = solve(&spec, &c, &SolverConfig::cold(3000)).unwrap();
        let err: f64 = pts
            .iter()
            .map(|&(x, y, p)| p * (1.0 - model.classify_prob(&[x], &f).unwrap()[y]))
            .sum();
        let b = error_bound(&model, &spec, Some(&tau_inf));
        assert!(b.certified() + 1e-12 >= err, "bound {} < error {err}", b.certified());
    }

    #[test]
    fn warm_start_at_optimum_does_not_increase() {
        let f = fmap(2, 2);
        let c = build_constraints(&[&[0.3, -0.5], &[0.9, 0.1], &[-0.2, 0.7]], &f).unwrap();
        let spec = UncertaintySpec { tau: vec![0.2, -0.1, -0.1, 0.15], lambda: vec![0.02; 4], lambda0: 0.7 };
        let cold = solve(&spec, &c, &SolverConfig::cold(4000)).unwrap();
        let warm = solve(&spec, &c, &SolverConfig { iterations: 300, warm_start: Some(cold.mu.clone()) }).unwrap();
        assert!(warm.risk <= cold.risk + 1e-9);
    }

    proptest! {
        #[test]
        fn phi_matches_bruteforce(
            xs in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 2), 1..4),
            mu in prop::collection::vec(-3.0..3.0f64, 6),
        ) {
            let f = fmap(2, 3);
            let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
            let c = build_constraints(&refs, &f).unwrap();
            let brute = (0..c.rows())
                .map(|r| c.row(r).iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>() - c.h(r))
                .fold(f64::NEG_INFINITY, f64::max);
            let (v, r) = phi_of_mu(&c, &mu);
            prop_assert!((v - brute).abs() < 1e-12);
            let at_r = c.row(r).iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>() - c.h(r);
            prop_assert!((at_r - v).abs() < 1e-12);
        }

        #[test]
        fn prob_normalized_and_det_agrees(scores in prop::collection::vec(-3.0..3.0f64, 2..6), phi in -3.0..3.0f64) {
            let p = prob_from_scores(&scores, phi);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|v| *v >= 0.0));
            let a = argmax(&scores);
            let unique = scores.iter().filter(|s| **s == scores[a]).count() == 1;
            if unique && scores[a] > phi {
                prop_assert_eq!(argmax(&p), a);
            }
        }

        #[test]
        fn shift_invariance(scores in prop::collection::vec(-3.0..3.0f64, 2..6), c in -2.0..2.0f64) {
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            let a = argmax(&scores);
            let b = argmax(&shifted);
            prop_assert!(a == b || (scores[a] - scores[b]).abs() < 1e-12);
        }

        #[test]
        fn best_iterate_monotone_in_k(seed in 0u64..50) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let f = fmap(2, 2);
            let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
            let c = build_constraints(&refs, &f).unwrap();
            let spec = UncertaintySpec {
                tau: (0..4).map(|_| rng.random_range(-0.3..0.3)).collect(),
                lambda: vec![0.05; 4],
                lambda0: 0.7,
            };
            let a = solve(&spec, &c, &SolverConfig::cold(50)).unwrap();
            let b = solve(&spec, &c, &SolverConfig::cold(400)).unwrap();
            prop_assert!(b.risk <= a.risk);
        }
    }
}
