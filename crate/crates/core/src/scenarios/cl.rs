use std::time::Instant;

use super::{
    anchor_set, ess_inputs, evaluate, solve_estimate, Scenario, ScenarioConfig, ScenarioResult, TaskOutcome,
    Tracks,
};
use crate::datagen::{Sample, TaskData, TaskSequence};
use crate::error::{input, Result};
use crate::ess::ess_combined_all;
use crate::features::FeatureMap;
use crate::task_stats::{moments, TaskMoments};
use crate::tracker::TrackedEstimate;

/// Online continual learner. Tasks arrive one at a time; after each arrival
/// the newest task is solved and the last `b` tasks are refreshed by
/// backward smoothing.
pub struct ClState<'a> {
    fmap: &'a FeatureMap,
    cfg: ScenarioConfig,
    seq: TaskSequence,
    moms: Vec<TaskMoments>,
    outcomes: Vec<Option<TaskOutcome>>,
    warnings: Vec<String>,
    elapsed: std::time::Duration,
}

impl<'a> ClState<'a> {
    pub fn new(fmap: &'a FeatureMap, cfg: ScenarioConfig, n_labels: usize, dim: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            fmap,
            cfg,
            seq: TaskSequence { tasks: Vec::new(), n_labels, dim },
            moms: Vec::new(),
            outcomes: Vec::new(),
            warnings: Vec::new(),
            elapsed: Default::default(),
        })
    }

    pub fn k(&self) -> usize {
        self.seq.k()
    }

    fn tracks(&self) -> Result<Tracks> {
        Tracks::build(&self.moms, self.cfg.policy(Scenario::Cl), &self.seq.deltas(), &self.cfg)
    }

    /// Solve the given smoothed estimates from the newest task downwards,
    /// each warm-started from its successor.
    fn resolve(&mut self, tracks: &Tracks, smoothed: Vec<TrackedEstimate>) -> Result<()> {
        let (n, s, d) = ess_inputs(&self.moms, tracks.changes());
        let ess = ess_combined_all(&n, &s, &d);
        let mut warm: Option<Vec<f64>> = None;
        for est in smoothed.into_iter().rev() {
            let j = est.task;
            let t = &self.seq.tasks[j - 1];
            let anchors = anchor_set(&t.train, &t.test, &self.cfg);
            let (spec, model) = solve_estimate(&est, &anchors, self.fmap, &self.cfg, warm.as_deref())?;
            warm = Some(model.mu.clone());
            let errs = evaluate(&model, self.fmap, &t.test)?;
            self.outcomes[j - 1] = Some(TaskOutcome {
                task: j,
                horizon: est.horizon,
                estimate: est,
                spec,
                model,
                n_train: self.moms[j - 1].n,
                test_error: errs.0,
                prob_error: errs.1,
                ess: Some(ess[j - 1]),
            });
        }
        Ok(())
    }

    /// Ingest the next task.
    pub fn step(&mut self, task: TaskData) -> Result<()> {
        let start = Instant::now();
        let j = self.k() + 1;
        let mo = moments(&task.train, self.fmap, j)?;
        self.seq.tasks.push(task);
        if let Err(e) = self.seq.validate() {
            self.seq.tasks.pop();
            return Err(e);
        }
        self.moms.push(mo);
        self.outcomes.push(None);
        let tracks = self.tracks()?;
        let b = self.cfg.backward_steps;
        if b > j - 1 && j > 1 {
            self.warnings.push(format!("task {j}: backward steps {b} clamped to {}", j - 1));
        }
        let smoothed = tracks.smooth(Some(b.min(j - 1)))?;
        self.resolve(&tracks, smoothed)?;
        self.elapsed += start.elapsed();
        Ok(())
    }

    /// Add samples to an already seen task and refresh every task.
    pub fn revisit(&mut self, task: usize, samples: Vec<Sample>) -> Result<()> {
        let start = Instant::now();
        if task == 0 || task > self.k() {
            return input(format!("cannot revisit task {task}: only {} tasks seen", self.k()));
        }
        if samples.is_empty() {
            return Ok(());
        }
        let extra = moments(&samples, self.fmap, task)?;
        let before = self.seq.tasks[task - 1].train.len();
        self.seq.tasks[task - 1].train.extend(samples);
        if let Err(e) = self.seq.validate() {
            self.seq.tasks[task - 1].train.truncate(before);
            return Err(e);
        }
        self.moms[task - 1] = self.moms[task - 1].merge(&extra);
        let tracks = self.tracks()?;
        let smoothed = tracks.smooth(None)?;
        self.resolve(&tracks, smoothed)?;
        self.elapsed += start.elapsed();
        Ok(())
    }

    pub fn moments(&self) -> &[TaskMoments] {
        &self.moms
    }

    pub fn sequence(&self) -> &TaskSequence {
        &self.seq
    }

    pub fn result(&self) -> ScenarioResult {
        ScenarioResult {
            scenario: Scenario::Cl,
            k: self.k(),
            tasks: self.outcomes.iter().flatten().cloned().collect(),
            runtime: self.elapsed,
            warnings: self.warnings.clone(),
        }
    }
}

pub fn run_cl(seq: &TaskSequence, fmap: &FeatureMap, cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    seq.validate()?;
    let mut st = ClState::new(fmap, cfg.clone(), seq.n_labels, seq.dim)?;
    for t in &seq.tasks {
        st.step(t.clone())?;
    }
    Ok(st.result())
}

pub fn revisit_task(state: &mut ClState<'_>, task: usize, samples: Vec<Sample>) -> Result<ScenarioResult> {
    state.revisit(task, samples)?;
    Ok(state.result())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_hyperplane, HyperplaneStream};
    use crate::features::InstanceEmbedding;
    use crate::scenarios::run_mtl;
    use crate::task_stats::WindowPolicy;

    fn setup(k: usize) -> (TaskSequence, FeatureMap, ScenarioConfig) {
        let (seq, _) = gen_hyperplane(&HyperplaneStream { n_test: 10, ..HyperplaneStream::rotating(k, 12, 5) }).unwrap();
        let fmap = FeatureMap::new(InstanceEmbedding::identity(2).unwrap(), 2).unwrap();
        let cfg = ScenarioConfig {
            k_cold: 200,
            k_warm: 80,
            window_policy: Some(WindowPolicy::Trailing),
            backward_steps: 10,
            ..Default::default()
        };
        (seq, fmap, cfg)
    }

    #[test]
    fn full_backward_equals_mtl() {
        let (seq, fmap, cfg) = setup(4);
        let cl = run_cl(&seq, &fmap, &cfg).unwrap();
        let mtl = run_mtl(&seq, &fmap, &cfg).unwrap();
        assert_eq!(cl.tasks.len(), 4);
        for (a, b) in cl.tasks.iter().zip(&mtl.tasks) {
            assert_eq!(a.estimate, b.estimate);
            assert_eq!(a.model, b.model);
        }
        assert!(!cl.warnings.is_empty());
    }

    #[test]
    fn b_zero_keeps_forward_models() {
        let (seq, fmap, mut cfg) = setup(4);
        cfg.backward_steps = 0;
        let cl = run_cl(&seq, &fmap, &cfg).unwrap();
        let mut st = ClState::new(&fmap, cfg.clone(), 2, 2).unwrap();
        st.step(seq.tasks[0].clone()).unwrap();
        st.step(seq.tasks[1].clone()).unwrap();
        let early = st.result().tasks[0].clone();
        assert_eq!(cl.tasks[0], early);
    }

    #[test]
    fn revisit_matches_pooled() {
        let (seq, fmap, cfg) = setup(4);
        let (more, _) = gen_hyperplane(&HyperplaneStream { n_test: 0, ..HyperplaneStream::rotating(4, 7, 99) }).unwrap();
        let mut st = ClState::new(&fmap, cfg.clone(), 2, 2).unwrap();
        for t in &seq.tasks {
            st.step(t.clone()).unwrap();
        }
        let r = revisit_task(&mut st, 2, more.tasks[1].train.clone()).unwrap();
        let mut pooled = seq.clone();
        pooled.tasks[1].train.extend(more.tasks[1].train.iter().cloned());
        let mtl = run_mtl(&pooled, &fmap, &cfg).unwrap();
        for (a, b) in r.tasks.iter().zip(&mtl.tasks) {
            for (x, y) in a.estimate.tau_hat.iter().zip(&b.estimate.tau_hat) {
                assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in a.estimate.s_hat.iter().zip(&b.estimate.s_hat) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert!(st.revisit(9, more.tasks[0].train.clone()).is_err());
        let before = st.result();
        st.revisit(1, vec![]).unwrap();
        assert_eq!(st.result().tasks, before.tasks);
    }
}
