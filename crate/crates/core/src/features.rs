//! Feature mappings over instance/label pairs.
//!
//! `Φ(x, y)` places an instance embedding `Ψ(x)` in the `y`-th block of an
//! `|Y|·q` vector. Labels are 0-based throughout the crate.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{input, Result};

/// Stream id used for RFF weight generation.
pub const RFF_STREAM: u64 = 0x5246_4600;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingKind {
    Identity,
    Rff,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceEmbedding {
    pub kind: EmbeddingKind,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Row-major `(q/2) × input_dim`; empty for identity.
    pub rff_weights: Vec<f64>,
    pub rff_scale: f64,
    pub seed: u64,
}

impl InstanceEmbedding {
    pub fn identity(input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return input("input_dim must be positive");
        }
        Ok(Self {
            kind: EmbeddingKind::Identity,
            input_dim,
            output_dim: input_dim,
            rff_weights: Vec::new(),
            rff_scale: 1.0,
            seed: 0,
        })
    }

    /// Random Fourier features with `q/2` standard Gaussian weight rows drawn
    /// from a ChaCha20 stream keyed by `seed`. Inputs are scaled by `1/√σ²`.
    pub fn rff(input_dim: usize, q: usize, sigma2: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 || q == 0 || !q.is_multiple_of(2) {
            return input(format!("rff needs input_dim > 0 and even q > 0, got {input_dim}, {q}"));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return input(format!("rff scale must be positive, got {sigma2}"));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(RFF_STREAM);
        let rff_weights = (0..q / 2 * input_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Ok(Self {
            kind: EmbeddingKind::Rff,
            input_dim,
            output_dim: q,
            rff_weights,
            rff_scale: sigma2,
            seed,
        })
    }

    /// RFF embedding with explicit weights (used for testing).
    pub fn rff_with_weights(input_dim: usize, weights: Vec<f64>, sigma2: f64) -> Result<Self> {
        if input_dim == 0 || weights.is_empty() || !weights.len().is_multiple_of(input_dim) {
            return input("weight matrix does not match input_dim");
        }
        Ok(Self {
            kind: EmbeddingKind::Rff,
            input_dim,
            output_dim: 2 * weights.len() / input_dim,
            rff_weights: weights,
            rff_scale: sigma2,
            seed: 0,
        })
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim];
        self.embed_into(x, &mut out)?;
        Ok(out)
    }

    pub fn embed_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return input(format!("expected instance of dim {}, got {}", self.input_dim, x.len()));
        }
        match self.kind {
            EmbeddingKind::Identity => out.copy_from_slice(x),
            EmbeddingKind::Rff => {
                let half = self.output_dim / 2;
                let inv = 1.0 / self.rff_scale.sqrt();
                let amp = (2.0 / self.output_dim as f64).sqrt();
                for (r, w) in self.rff_weights.chunks_exact(self.input_dim).enumerate() {
                    let z = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() * inv;
                    out[r] = z.cos() * amp;
                    out[half + r] = z.sin() * amp;
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub embedding: InstanceEmbedding,
    pub n_labels: usize,
    pub m: usize,
    /// Sup-norm bound `M` on `Φ`.
    pub bound: f64,
}

impl FeatureMap {
    pub fn new(embedding: InstanceEmbedding, n_labels: usize) -> Result<Self> {
        if n_labels < 2 {
            return input(format!("need at least 2 labels, got {n_labels}"));
        }
        let bound = match embedding.kind {
            EmbeddingKind::Rff => (2.0 / embedding.output_dim as f64).sqrt(),
            EmbeddingKind::Identity => 0.0,
        };
        Ok(Self { m: n_labels * embedding.output_dim, embedding, n_labels, bound })
    }

    pub fn q(&self) -> usize {
        self.embedding.output_dim
    }

    /// Grow `M` to cover the given instances (identity embeddings only;
    /// RFF maps are bounded a priori).
    pub fn observe<'a>(&mut self, xs: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
        if self.embedding.kind == EmbeddingKind::Rff {
            return Ok(());
        }
        for x in xs {
            if x.len() != self.embedding.input_dim {
                return input("instance dimension mismatch");
            }
            for v in x {
                self.bound = self.bound.max(v.abs());
            }
        }
        Ok(())
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.embedding.embed(x)
    }

    pub fn phi(&self, x: &[f64], y: usize) -> Result<Vec<f64>> {
        if y >= self.n_labels {
            return input(format!("label {y} out of range for {} labels", self.n_labels));
        }
        let q = self.q();
        let mut out = vec![0.0; self.m];
        self.embedding.embed_into(x, &mut out[y * q..(y + 1) * q])?;
        Ok(out)
    }

    /// Scores `Φ(x, y)ᵀμ` for every label given a precomputed embedding.
    pub fn scores_from_embedding(&self, e: &[f64], mu: &[f64]) -> Vec<f64> {
        mu.chunks_exact(self.q())
            .map(|b| b.iter().zip(e).map(|(a, c)| a * c).sum())
            .collect()
    }
}
