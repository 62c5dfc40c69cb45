//! Versioned line-oriented text snapshots.
//!
//! ```text
//! evotask-snapshot 1
//! kind tracked
//! task 3
//! horizon smoothed 5
//! tau_hat 1e0 2.5e-1
//! s_hat 1e-2 1e-2
//! ```
//!
//! Each line is a key followed by space-separated values. Floats use the
//! shortest round-trip exponent form, so snapshots reload bit-exactly.
//! Matrices are stored row-major.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::{EmbeddingKind, FeatureMap, InstanceEmbedding};
use crate::mrc::MrcModel;
use crate::tracker::{Horizon, KinematicState, TrackedEstimate};

pub const MAGIC: &str = "evotask-snapshot";
pub const VERSION: u32 = 1;

pub trait Snapshot: Sized {
    fn to_snapshot(&self) -> String;
    fn from_snapshot(text: &str) -> Result<Self>;
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ")
}

fn horizon_str(h: Horizon) -> String {
    match h {
        Horizon::Single => "single".into(),
        Horizon::Forward => "forward".into(),
        Horizon::Predicted => "predicted".into(),
        Horizon::Smoothed(k) => format!("smoothed {k}"),
    }
}

struct Reader<'a> {
    lines: Vec<(usize, &'a str, Vec<&'a str>)>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str, kind: &str) -> Result<Self> {
        let lines: Vec<(usize, &str, Vec<&str>)> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let mut it = l.split_whitespace();
                let key = it.next().unwrap_or("");
                (i + 1, key, it.collect())
            })
            .collect();
        let mut r = Self { lines, pos: 0 };
        let (line, vals) = r.expect(MAGIC)?;
        let v: u32 = parse(line, vals.first().copied().unwrap_or(""))?;
        if v != VERSION {
            return Err(Error::Snapshot { line, msg: format!("unsupported version {v}") });
        }
        let (line, vals) = r.expect("kind")?;
        if vals.first().copied() != Some(kind) {
            return Err(Error::Snapshot { line, msg: format!("expected kind {kind}") });
        }
        Ok(r)
    }

    fn expect(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let Some((line, k, vals)) = self.lines.get(self.pos).cloned() else {
            return Err(Error::Snapshot { line: 0, msg: format!("missing '{key}'") });
        };
        if k != key {
            return Err(Error::Snapshot { line, msg: format!("expected '{key}', found '{k}'") });
        }
        self.pos += 1;
        Ok((line, vals))
    }

    fn scalar<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (line, vals) = self.expect(key)?;
        if vals.len() != 1 {
            return Err(Error::Snapshot { line, msg: format!("'{key}' takes one value") });
        }
        parse(line, vals[0])
    }

    fn floats(&mut self, key: &str, len: usize) -> Result<Vec<f64>> {
        let (line, vals) = self.expect(key)?;
        if vals.len() != len {
            return Err(Error::Snapshot { line, msg: format!("'{key}' expects {len} values, got {}", vals.len()) });
        }
        vals.iter().map(|v| parse(line, v)).collect()
    }

    fn horizon(&mut self) -> Result<Horizon> {
        let (line, vals) = self.expect("horizon")?;
        match vals.as_slice() {
            ["single"] => Ok(Horizon::Single),
            ["forward"] => Ok(Horizon::Forward),
            ["predicted"] => Ok(Horizon::Predicted),
            ["smoothed", k] => Ok(Horizon::Smoothed(parse(line, k)?)),
            _ => Err(Error::Snapshot { line, msg: "bad horizon".into() }),
        }
    }
}

fn parse<T: std::str::FromStr>(line: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Snapshot { line, msg: format!("cannot parse '{s}'") })
}

fn header(kind: &str) -> String {
    format!("{MAGIC} {VERSION}\nkind {kind}\n")
}

impl Snapshot for TrackedEstimate {
    fn to_snapshot(&self) -> String {
        format!(
            "{}task {}\nhorizon {}\nm {}\ntau_hat {}\ns_hat {}\n",
            header("tracked"),
            self.task,
            horizon_str(self.horizon),
            self.tau_hat.len(),
            fmt_vec(&self.tau_hat),
            fmt_vec(&self.s_hat)
        )
    }

    fn from_snapshot(text: &str) -> Result<Self> {
        let mut r = Reader::new(text, "tracked")?;
        let task = r.scalar("task")?;
        let horizon = r.horizon()?;
        let m: usize = r.scalar("m")?;
        Ok(Self { task, horizon, tau_hat: r.floats("tau_hat", m)?, s_hat: r.floats("s_hat", m)? })
    }
}

impl Snapshot for KinematicState {
    fn to_snapshot(&self) -> String {
        let mut s = format!(
            "{}task {}\nhorizon {}\norder {}\ndelta {:e}\nm {}\n",
            header("kinematic"),
            self.task,
            horizon_str(self.horizon),
            self.order,
            self.delta,
            self.gamma.len()
        );
        for (g, sig) in self.gamma.iter().zip(&self.sigma) {
            s.push_str(&format!("gamma {}\n", fmt_vec(g.as_slice())));
            let rm: Vec<f64> = (0..sig.nrows()).flat_map(|r| (0..sig.ncols()).map(move |c| sig[(r, c)])).collect();
            s.push_str(&format!("sigma {}\n", fmt_vec(&rm)));
        }
        s
    }

    fn from_snapshot(text: &str) -> Result<Self> {
        let mut r = Reader::new(text, "kinematic")?;
        let task = r.scalar("task")?;
        let horizon = r.horizon()?;
        let order: usize = r.scalar("order")?;
        let delta = r.scalar("delta")?;
        let m: usize = r.scalar("m")?;
        let d = order + 1;
        let mut gamma = Vec::with_capacity(m);
        let mut sigma = Vec::with_capacity(m);
        for _ in 0..m {
            gamma.push(DVector::from_vec(r.floats("gamma", d)?));
            sigma.push(DMatrix::from_row_slice(d, d, &r.floats("sigma", d * d)?));
        }
        Ok(Self { task, horizon, order, gamma, sigma, delta })
    }
}

/// A solved model together with the feature map it was trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSnapshot {
    pub model: MrcModel,
    pub fmap: FeatureMap,
}

impl Snapshot for ModelSnapshot {
    fn to_snapshot(&self) -> String {
        let e = &self.fmap.embedding;
        let emb = match e.kind {
            EmbeddingKind::Identity => format!("embedding identity {}", e.input_dim),
            EmbeddingKind::Rff => format!("embedding rff {} {} {:e} {}", e.input_dim, e.output_dim, e.rff_scale, e.seed),
        };
        format!(
            "{}{emb}\nn_labels {}\nbound {:e}\nlambda0 {:e}\nphi_mu {:e}\nrisk {:e}\nbest_iter {}\nmu {}\n",
            header("model"),
            self.fmap.n_labels,
            self.fmap.bound,
            self.model.lambda0,
            self.model.phi_mu,
            self.model.risk,
            self.model.best_iter,
            fmt_vec(&self.model.mu)
        )
    }

    fn from_snapshot(text: &str) -> Result<Self> {
        let mut r = Reader::new(text, "model")?;
        let (line, vals) = r.expect("embedding")?;
        let embedding = match vals.as_slice() {
            ["identity", d] => InstanceEmbedding::identity(parse(line, d)?)?,
            ["rff", d, q, s2, seed] => {
                InstanceEmbedding::rff(parse(line, d)?, parse(line, q)?, parse(line, s2)?, parse(line, seed)?)?
            }
            _ => return Err(Error::Snapshot { line, msg: "bad embedding descriptor".into() }),
        };
        let n_labels: usize = r.scalar("n_labels")?;
        let mut fmap = FeatureMap::new(embedding, n_labels)?;
        fmap.bound = r.scalar("bound")?;
        let lambda0 = r.scalar("lambda0")?;
        let phi_mu = r.scalar("phi_mu")?;
        let risk = r.scalar("risk")?;
        let best_iter = r.scalar("best_iter")?;
        let mu = r.floats("mu", fmap.m)?;
        Ok(Self { model: MrcModel { mu, phi_mu, risk, lambda0, n_labels, best_iter }, fmap })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracked_round_trip() {
        let t = TrackedEstimate {
            task: 3,
            horizon: Horizon::Smoothed(5),
            tau_hat: vec![0.1, -1.0 / 3.0, 1e-300],
            s_hat: vec![2.0, 5e-9, std::f64::consts::PI],
        };
        let back = TrackedEstimate::from_snapshot(&t.to_snapshot()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn kinematic_round_trip() {
        let k = KinematicState {
            task: 2,
            horizon: Horizon::Forward,
            order: 1,
            gamma: vec![DVector::from_vec(vec![0.3, -0.1])],
            sigma: vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.7])],
            delta: 1.5,
        };
        assert_eq!(KinematicState::from_snapshot(&k.to_snapshot()).unwrap(), k);
    }

    #[test]
    fn model_round_trip() {
        let fmap = FeatureMap::new(InstanceEmbedding::rff(3, 4, 10.0, 8).unwrap(), 2).unwrap();
        let s = ModelSnapshot {
            model: MrcModel { mu: (0..8).map(|i| i as f64 / 7.0).collect(), phi_mu: -0.4, risk: 0.31, lambda0: 0.7, n_labels: 2, best_iter: 12 },
            fmap,
        };
        assert_eq!(ModelSnapshot::from_snapshot(&s.to_snapshot()).unwrap(), s);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrackedEstimate::from_snapshot("evotask-snapshot 2\nkind tracked\n").is_err());
        assert!(TrackedEstimate::from_snapshot("evotask-snapshot 1\nkind model\n").is_err());
        let bad = "evotask-snapshot 1\nkind tracked\ntask 1\nhorizon forward\nm 2\ntau_hat 1 2\ns_hat 1\n";
        match TrackedEstimate::from_snapshot(bad) {
            Err(Error::Snapshot { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }
    }
}
