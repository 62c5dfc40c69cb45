//! Scenario drivers: single-task baseline, multi-source domain adaptation
//! (MDA), multi-task learning (MTL), supervised classification under
//! concept drift (SCD) and continual learning (CL).

mod cl;

pub use cl::{revisit_task, run_cl, ClState};

use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::datagen::{Sample, TaskSequence};
use crate::error::{input, Error, Result};
use crate::ess::{ess_combined_all, ess_forward};
use crate::features::FeatureMap;
use crate::mrc::{
    build_constraints, solve, MrcModel, SolverConfig, UncertaintySpec, DEFAULT_K_COLD, DEFAULT_K_WARM, DEFAULT_LAMBDA0,
};
use crate::task_stats::{change_sequence, moments, TaskMoments, WindowPolicy, DEFAULT_WINDOW, D_INIT};
use crate::tracker::{
    forward_sequence, kin_forward_sequence, kin_predict_step, kin_smooth_sequence, predict_step, smooth_sequence,
    Horizon, KinematicState, TrackedEstimate, DEFAULT_BACKWARD_STEPS, DEFAULT_BETA,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    Single,
    Mda,
    Mtl,
    Scd,
    Cl,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [Scenario::Single, Scenario::Mda, Scenario::Mtl, Scenario::Scd, Scenario::Cl];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Single => "single",
            Scenario::Mda => "mda",
            Scenario::Mtl => "mtl",
            Scenario::Scd => "scd",
            Scenario::Cl => "cl",
        }
    }

    /// Window direction used when the configuration leaves it open.
    pub fn default_policy(self) -> WindowPolicy {
        match self {
            Scenario::Mda | Scenario::Mtl | Scenario::Single => WindowPolicy::Centered,
            Scenario::Scd | Scenario::Cl => WindowPolicy::Trailing,
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL.into_iter().find(|sc| sc.name() == s).ok_or_else(|| {
            Error::Config(format!("unknown scenario '{s}' (valid: single, mda, mtl, scd, cl)"))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorPolicy {
    TrainInstances,
    TrainPlusEval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub lambda0: f64,
    pub window: usize,
    pub window_policy: Option<WindowPolicy>,
    pub backward_steps: usize,
    pub order: usize,
    pub beta: f64,
    pub d_init: f64,
    pub k_cold: usize,
    pub k_warm: usize,
    pub warm_start: bool,
    pub anchors: AnchorPolicy,
    /// Anchors added to every constraint set (e.g. the vertices of a
    /// bounded instance domain).
    pub extra_anchors: Vec<Vec<f64>>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            lambda0: DEFAULT_LAMBDA0,
            window: DEFAULT_WINDOW,
            window_policy: None,
            backward_steps: DEFAULT_BACKWARD_STEPS,
            order: 0,
            beta: DEFAULT_BETA,
            d_init: D_INIT,
            k_cold: DEFAULT_K_COLD,
            k_warm: DEFAULT_K_WARM,
            warm_start: true,
            anchors: AnchorPolicy::TrainInstances,
            extra_anchors: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn policy(&self, sc: Scenario) -> WindowPolicy {
        self.window_policy.unwrap_or(sc.default_policy())
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda0 >= 0.0) || self.window == 0 || self.k_cold == 0 || self.k_warm == 0 {
            return Err(Error::Config("lambda0 ≥ 0, window ≥ 1 and iteration counts ≥ 1 are required".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) || !(self.d_init >= 0.0) {
            return Err(Error::Config("beta must lie in [0, 1] and d_init must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskOutcome {
    pub task: usize,
    pub horizon: Horizon,
    pub estimate: TrackedEstimate,
    pub spec: UncertaintySpec,
    pub model: MrcModel,
    pub n_train: usize,
    /// 0-1 error of the deterministic rule on the evaluation set.
    pub test_error: Option<f64>,
    /// Expected 0-1 loss of the probabilistic rule on the evaluation set.
    pub prob_error: Option<f64>,
    pub ess: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub k: usize,
    pub tasks: Vec<TaskOutcome>,
    pub runtime: Duration,
    pub warnings: Vec<String>,
}

impl ScenarioResult {
    pub fn mean_error(&self) -> Option<f64> {
        let errs: Vec<f64> = self.tasks.iter().filter_map(|t| t.test_error).collect();
        (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
    }

    pub fn task(&self, j: usize) -> Option<&TaskOutcome> {
        self.tasks.iter().find(|t| t.task == j)
    }
}

pub(crate) fn evaluate(model: &MrcModel, fmap: &FeatureMap, set: &[Sample]) -> Result<(Option<f64>, Option<f64>)> {
    if set.is_empty() {
        return Ok((None, None));
    }
    let mut det = 0.0;
    let mut prob = 0.0;
    for s in set {
        let e = fmap.embed(&s.x)?;
        let scores = fmap.scores_from_embedding(&e, &model.mu);
        if crate::mrc::argmax(&scores) != s.y {
            det += 1.0;
        }
        prob += 1.0 - crate::mrc::prob_from_scores(&scores, model.phi_mu)[s.y];
    }
    let n = set.len() as f64;
    Ok((Some(det / n), Some(prob / n)))
}

pub(crate) fn anchor_set<'a>(
    train: &'a [Sample],
    eval: &'a [Sample],
    cfg: &'a ScenarioConfig,
) -> Vec<&'a [f64]> {
    let mut out: Vec<&[f64]> = train.iter().map(|s| s.x.as_slice()).collect();
    if cfg.anchors == AnchorPolicy::TrainPlusEval {
        out.extend(eval.iter().map(|s| s.x.as_slice()));
    }
    out.extend(cfg.extra_anchors.iter().map(|v| v.as_slice()));
    out
}

pub(crate) fn solve_estimate(
    est: &TrackedEstimate,
    anchors: &[&[f64]],
    fmap: &FeatureMap,
    cfg: &ScenarioConfig,
    warm: Option<&[f64]>,
) -> Result<(UncertaintySpec, MrcModel)> {
    let spec = UncertaintySpec::from_estimate(est, cfg.lambda0);
    let c = build_constraints(anchors, fmap)?;
    let solver = match warm.filter(|_| cfg.warm_start) {
        Some(w) => SolverConfig { iterations: cfg.k_warm, warm_start: Some(w.to_vec()) },
        None => SolverConfig::cold(cfg.k_cold),
    };
    let model = solve(&spec, &c, &solver)?;
    Ok((spec, model))
}

pub(crate) fn all_moments(seq: &TaskSequence, fmap: &FeatureMap, upto: usize) -> Result<Vec<TaskMoments>> {
    (0..upto).map(|j| moments(&seq.tasks[j].train, fmap, j + 1)).collect()
}

pub(crate) fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

/// Per-task ESS inputs `(n_j, ‖σ_j²‖∞, ‖d_j‖∞)`.
pub(crate) fn ess_inputs(moms: &[TaskMoments], changes: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    (
        moms.iter().map(|m| m.n as f64).collect(),
        moms.iter().map(|m| sup(&m.sigma2)).collect(),
        changes.iter().map(|d| sup(d)).collect(),
    )
}

/// Forward/smoothed/predicted estimates, either from the componentwise
/// tracker or the kinematic extension.
pub(crate) enum Tracks {
    Base { forwards: Vec<TrackedEstimate>, changes: Vec<Vec<f64>> },
    Kin { states: Vec<KinematicState>, dbars: Vec<Vec<f64>>, deltas: Vec<f64> },
}

impl Tracks {
    pub(crate) fn build(moms: &[TaskMoments], policy: WindowPolicy, deltas: &[f64], cfg: &ScenarioConfig) -> Result<Self> {
        if cfg.order == 0 {
            let changes = changes_for(moms, policy, cfg);
            Ok(Tracks::Base { forwards: forward_sequence(moms, &changes)?, changes })
        } else {
            let (states, dbars) = kin_forward_sequence(moms, cfg.order, deltas, cfg.d_init, cfg.beta)?;
            Ok(Tracks::Kin { states, dbars, deltas: deltas.to_vec() })
        }
    }

    pub(crate) fn forward(&self, j: usize) -> TrackedEstimate {
        match self {
            Tracks::Base { forwards, .. } => forwards[j - 1].clone(),
            Tracks::Kin { states, .. } => states[j - 1].estimate(),
        }
    }

    pub(crate) fn changes(&self) -> &[Vec<f64>] {
        match self {
            Tracks::Base { changes, .. } => changes,
            Tracks::Kin { dbars, .. } => &dbars[..dbars.len() - 1],
        }
    }

    pub(crate) fn smooth(&self, b: Option<usize>) -> Result<Vec<TrackedEstimate>> {
        match self {
            Tracks::Base { forwards, changes } => Ok(smooth_sequence(forwards, changes, b)?.0),
            Tracks::Kin { states, dbars, deltas } => {
                Ok(kin_smooth_sequence(states, dbars, deltas, b)?.iter().map(|s| s.estimate()).collect())
            }
        }
    }

    /// Prediction for the task after the last tracked one. `d_pred` is the
    /// change used by the componentwise tracker.
    pub(crate) fn predict(&self, d_pred: &[f64], delta_next: f64) -> Result<TrackedEstimate> {
        match self {
            Tracks::Base { forwards, .. } => predict_step(forwards.last().expect("nonempty"), d_pred),
            Tracks::Kin { states, dbars, .. } => {
                Ok(kin_predict_step(states.last().expect("nonempty"), dbars.last().expect("nonempty"), delta_next)?.estimate())
            }
        }
    }
}

pub(crate) fn changes_for(moms: &[TaskMoments], policy: WindowPolicy, cfg: &ScenarioConfig) -> Vec<Vec<f64>> {
    let m = moms.first().map(|mo| mo.tau.len()).unwrap_or(0);
    let means: Vec<&[f64]> = moms.iter().map(|mo| mo.tau.as_slice()).collect();
    change_sequence(&means, m, cfg.window, policy, cfg.d_init).into_iter().map(|c| c.d).collect()
}

fn eval_set(t: &crate::datagen::TaskData) -> &[Sample] {
    if t.test.is_empty() {
        &t.train
    } else {
        &t.test
    }
}

fn outcome(
    est: TrackedEstimate,
    spec: UncertaintySpec,
    model: MrcModel,
    n_train: usize,
    errs: (Option<f64>, Option<f64>),
    ess: Option<f64>,
) -> TaskOutcome {
    TaskOutcome {
        task: est.task,
        horizon: est.horizon,
        estimate: est,
        spec,
        model,
        n_train,
        test_error: errs.0,
        prob_error: errs.1,
        ess,
    }
}

/// Each task learned from its own samples only.
pub fn run_single(seq: &TaskSequence, fmap: &FeatureMap, cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    cfg.validate()?;
    seq.validate()?;
    let start = Instant::now();
    let mut tasks = Vec::with_capacity(seq.k());
    for (j, t) in seq.tasks.iter().enumerate() {
        let mo = moments(&t.train, fmap, j + 1)?;
        let est = TrackedEstimate::single(&mo);
        let anchors = anchor_set(&t.train, &t.test, cfg);
        let (spec, model) = solve_estimate(&est, &anchors, fmap, cfg, None)?;
        let errs = evaluate(&model, fmap, &t.test)?;
        tasks.push(outcome(est, spec, model, mo.n, errs, Some(mo.n as f64)));
    }
    Ok(ScenarioResult { scenario: Scenario::Single, k: seq.k(), tasks, runtime: start.elapsed(), warnings: vec![] })
}

/// Learn the last task from all preceding ones, with or without its own
/// samples.
pub fn run_mda(seq: &TaskSequence, fmap: &FeatureMap, cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    cfg.validate()?;
    seq.validate()?;
    let start = Instant::now();
    let k = seq.k();
    let policy = cfg.policy(Scenario::Mda);
    let deltas = seq.deltas();
    let target = &seq.tasks[k - 1];
    let (est, anchors_from, n_train, ess) = if !target.train.is_empty() {
        let moms = all_moments(seq, fmap, k)?;
        let tracks = Tracks::build(&moms, policy, &deltas, cfg)?;
        let (n, s, d) = ess_inputs(&moms, tracks.changes());
        (tracks.forward(k), &target.train, moms[k - 1].n, Some(ess_forward(&n, &s, &d)[k - 1]))
    } else {
        if k == 1 {
            return input("target task has no samples and no source tasks exist");
        }
        let moms = all_moments(seq, fmap, k - 1)?;
        let tracks = Tracks::build(&moms, policy, &deltas, cfg)?;
        let d_pred = tracks.changes()[k - 2].clone();
        (tracks.predict(&d_pred, deltas[k - 1])?, &seq.tasks[k - 2].train, 0, None)
    };
    let anchors = anchor_set(anchors_from, &target.test, cfg);
    let (spec, model) = solve_estimate(&est, &anchors, fmap, cfg, None)?;
    let errs = evaluate(&model, fmap, &target.test)?;
    let tasks = vec![outcome(est, spec, model, n_train, errs, ess)];
    Ok(ScenarioResult { scenario: Scenario::Mda, k, tasks, runtime: start.elapsed(), warnings: vec![] })
}

/// Learn every task from all tasks: forward sweep, full backward sweep,
/// then one solve per task warm-started from its successor.
pub fn run_mtl(seq: &TaskSequence, fmap: &FeatureMap, cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    cfg.validate()?;
    seq.validate()?;
    let start = Instant::now();
    let k = seq.k();
    let moms = all_moments(seq, fmap, k)?;
    let tracks = Tracks::build(&moms, cfg.policy(Scenario::Mtl), &seq.deltas(), cfg)?;
    let smoothed = tracks.smooth(None)?;
    let (n, s, d) = ess_inputs(&moms, tracks.changes());
    let ess = ess_combined_all(&n, &s, &d);
    let mut tasks: Vec<Option<TaskOutcome>> = vec![None; k];
    let mut warm: Option<Vec<f64>> = None;
    for j in (1..=k).rev() {
        let t = &seq.tasks[j - 1];
        let anchors = anchor_set(&t.train, &t.test, cfg);
        let est = smoothed[j - 1].clone();
        let (spec, model) = solve_estimate(&est, &anchors, fmap, cfg, warm.as_deref())?;
        warm = Some(model.mu.clone());
        let errs = evaluate(&model, fmap, &t.test)?;
        tasks[j - 1] = Some(outcome(est, spec, model, moms[j - 1].n, errs, Some(ess[j - 1])));
    }
    Ok(ScenarioResult {
        scenario: Scenario::Mtl,
        k,
        tasks: tasks.into_iter().map(|t| t.expect("every task solved")).collect(),
        runtime: start.elapsed(),
        warnings: vec![],
    })
}

/// Prequential concept-drift learning: the rule for task `k` is fitted on
/// tasks `1..k` and scored on task `k` as it arrives.
pub fn run_scd(seq: &TaskSequence, fmap: &FeatureMap, cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    cfg.validate()?;
    seq.validate()?;
    let start = Instant::now();
    let k = seq.k();
    let deltas = seq.deltas();
    let moms = all_moments(seq, fmap, k - 1)?;
    let tracks = if k > 1 { Some(Tracks::build(&moms, cfg.policy(Scenario::Scd), &deltas, cfg)?) } else { None };
    let mut tasks = Vec::with_capacity(k);
    let mut warm: Option<Vec<f64>> = None;
    for step in 1..=k {
        let target = &seq.tasks[step - 1];
        let eval = eval_set(target);
        if step == 1 {
            let model = MrcModel::uniform(fmap.m, fmap.n_labels, cfg.lambda0);
            let est = TrackedEstimate {
                task: 1,
                horizon: Horizon::Predicted,
                tau_hat: vec![0.0; fmap.m],
                s_hat: vec![f64::INFINITY; fmap.m],
            };
            let spec = UncertaintySpec::from_estimate(&est, cfg.lambda0);
            let errs = evaluate(&model, fmap, eval)?;
            tasks.push(outcome(est, spec, model, 0, errs, None));
            continue;
        }
        let tracks = tracks.as_ref().expect("k > 1");
        let est = predict_prefix(tracks, step, &deltas)?;
        let prev = &seq.tasks[step - 2];
        let anchors = anchor_set(&prev.train, eval, cfg);
        let (spec, model) = solve_estimate(&est, &anchors, fmap, cfg, warm.as_deref())?;
        warm = Some(model.mu.clone());
        let errs = evaluate(&model, fmap, eval)?;
        tasks.push(outcome(est, spec, model, 0, errs, None));
    }
    Ok(ScenarioResult { scenario: Scenario::Scd, k, tasks, runtime: start.elapsed(), warnings: vec![] })
}

/// Predicted estimate for task `step` using tasks `1..step` only.
fn predict_prefix(tracks: &Tracks, step: usize, deltas: &[f64]) -> Result<TrackedEstimate> {
    match tracks {
        Tracks::Base { forwards, changes } => predict_step(&forwards[step - 2], &changes[step - 2]),
        Tracks::Kin { states, dbars, .. } => {
            Ok(kin_predict_step(&states[step - 2], &dbars[step - 1], deltas[step - 1])?.estimate())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_hyperplane, HyperplaneStream};
    use crate::features::InstanceEmbedding;

    fn setup(k: usize, n: usize) -> (TaskSequence, FeatureMap, ScenarioConfig) {
        let (seq, _) = gen_hyperplane(&HyperplaneStream { n_test: 20, ..HyperplaneStream::rotating(k, n, 17) }).unwrap();
        let fmap = FeatureMap::new(InstanceEmbedding::identity(2).unwrap(), 2).unwrap();
        let cfg = ScenarioConfig { k_cold: 300, k_warm: 100, ..Default::default() };
        (seq, fmap, cfg)
    }

    #[test]
    fn parse_scenario() {
        assert_eq!("cl".parse::<Scenario>().unwrap(), Scenario::Cl);
        let err = "xyz".parse::<Scenario>().unwrap_err().to_string();
        assert!(err.contains("mda") && err.contains("scd"));
    }

    #[test]
    fn k1_equals_single() {
        let (seq, fmap, cfg) = setup(1, 15);
        let a = run_single(&seq, &fmap, &cfg).unwrap();
        let b = run_mtl(&seq, &fmap, &cfg).unwrap();
        let c = run_mda(&seq, &fmap, &cfg).unwrap();
        assert_eq!(a.tasks[0].model, b.tasks[0].model);
        assert_eq!(a.tasks[0].model, c.tasks[0].model);
    }

    #[test]
    fn mda_without_target_samples_inflates_lambda() {
        let (mut seq, fmap, cfg) = setup(4, 15);
        let with = run_mda(&seq, &fmap, &cfg).unwrap();
        seq.tasks[3].train.clear();
        let without = run_mda(&seq, &fmap, &cfg).unwrap();
        assert_eq!(without.tasks[0].horizon, Horizon::Predicted);
        for (a, b) in without.tasks[0].spec.lambda.iter().zip(&with.tasks[0].spec.lambda) {
            assert!(a > b);
        }
    }

    #[test]
    fn mda_matches_scd_step() {
        let (seq, fmap, mut cfg) = setup(5, 12);
        cfg.window_policy = Some(WindowPolicy::Trailing);
        cfg.warm_start = false;
        let scd = run_scd(&seq, &fmap, &cfg).unwrap();
        let mut trunc = seq.clone();
        trunc.tasks[4].train.clear();
        let mda = run_mda(&trunc, &fmap, &cfg).unwrap();
        assert_eq!(mda.tasks[0].estimate, scd.tasks[4].estimate);
        assert_eq!(mda.tasks[0].model, scd.tasks[4].model);
    }

    #[test]
    fn scd_no_lookahead() {
        let (seq, fmap, cfg) = setup(4, 12);
        let a = run_scd(&seq, &fmap, &cfg).unwrap();
        let mut mutated = seq.clone();
        for s in mutated.tasks[3].train.iter_mut() {
            s.y = 1 - s.y;
        }
        let b = run_scd(&mutated, &fmap, &cfg).unwrap();
        assert_eq!(a.tasks[3].model, b.tasks[3].model);
        assert_eq!(a.tasks[0].model.mu, vec![0.0; 4]);
    }

    #[test]
    fn mtl_huge_change_decouples() {
        let (seq, fmap, mut cfg) = setup(3, 15);
        cfg.order = 0;
        let single = run_single(&seq, &fmap, &cfg).unwrap();
        let moms = all_moments(&seq, &fmap, 3).unwrap();
        let changes = vec![vec![1e15; 4]; 3];
        let f = forward_sequence(&moms, &changes).unwrap();
        let (s, _) = smooth_sequence(&f, &changes, None).unwrap();
        for j in 0..3 {
            for i in 0..4 {
                assert!((s[j].tau_hat[i] - single.tasks[j].estimate.tau_hat[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn determinism_and_kinematic() {
        let (seq, fmap, mut cfg) = setup(5, 12);
        assert_eq!(run_mtl(&seq, &fmap, &cfg).unwrap().tasks, run_mtl(&seq, &fmap, &cfg).unwrap().tasks);
        cfg.order = 1;
        for r in [run_mtl(&seq, &fmap, &cfg), run_scd(&seq, &fmap, &cfg), run_mda(&seq, &fmap, &cfg)] {
            let r = r.unwrap();
            assert!(r.tasks.iter().all(|t| t.model.risk.is_finite()));
        }
    }

    #[test]
    fn stationary_stream_shrinks_lambda() {
        let (seq, _) = gen_hyperplane(&HyperplaneStream {
            mode: crate::datagen::HyperplaneMode::Rotate { angle_deg: 0.0 },
            ..HyperplaneStream::rotating(12, 20, 2)
        })
        .unwrap();
        let fmap = FeatureMap::new(InstanceEmbedding::identity(2).unwrap(), 2).unwrap();
        let cfg = ScenarioConfig { k_cold: 200, k_warm: 100, ..Default::default() };
        let r = run_scd(&seq, &fmap, &cfg).unwrap();
        let l = |j: usize| r.tasks[j].spec.lambda.iter().sum::<f64>();
        assert!(l(11) < l(2));
    }

    #[test]
    fn empty_sequence_rejected() {
        let fmap = FeatureMap::new(InstanceEmbedding::identity(2).unwrap(), 2).unwrap();
        let seq = TaskSequence { tasks: vec![], n_labels: 2, dim: 2 };
        assert!(run_mtl(&seq, &fmap, &ScenarioConfig::default()).is_err());
    }
}
