//! Contrastive Koopman embedding: query/key encoders, a bilinear similarity
//! matrix, noise augmentation and the InfoNCE objective.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ndmath::{Mat, Tape, Var};
use crate::nn::Mlp;
use crate::registry::Registry;

pub const HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Query,
    Key,
}

/// A lifting `ψ: observation → latent`. The query side is what the rest of
/// the system calls "the" embedding; the key side only feeds the
/// contrastive loss and is never on a tape.
pub trait Embedding: Send + Sync + fmt::Debug {
    fn kind(&self) -> &'static str;
    fn obs_dim(&self) -> usize;
    fn latent_dim(&self) -> usize;

    /// False for fixed liftings with nothing to learn.
    fn is_trainable(&self) -> bool;

    fn encode(&self, x: &Mat, which: Which) -> Result<Mat>;

    /// Query weights as tape leaves, in [`Embedding::query_params`] order.
    fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var>;

    /// Query forward pass using weights from [`Embedding::bind`].
    fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var) -> Result<Var>;

    fn query_params(&self) -> Vec<&Mat>;
    fn query_params_mut(&mut self) -> Vec<&mut Mat>;

    fn similarity(&self) -> &Mat;
    fn similarity_mut(&mut self) -> &mut Mat;

    /// Query weights followed by `W`, as one mutable list.
    fn contrastive_params_mut(&mut self) -> Vec<&mut Mat>;

    /// `key ← τ·key + (1 − τ)·query`.
    fn momentum_update(&mut self, tau: f64);

    /// Every stored tensor (query, key, similarity) with a stable name.
    fn named_tensors(&self) -> Vec<(String, &Mat)>;
    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Mat)>;

    fn clone_box(&self) -> Box<dyn Embedding>;
}

impl Clone for Box<dyn Embedding> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

pub type EmbeddingConstructor =
    fn(obs_dim: usize, latent_dim: usize, rng: &mut crate::rng::Rng) -> Result<Box<dyn Embedding>>;

pub fn registry() -> Registry<EmbeddingConstructor> {
    Registry::<EmbeddingConstructor>::new("embedding")
        .register("mlp", |n, d, rng| {
            Ok(Box::new(EncoderParams::new(n, d, rng)))
        })
        .register("identity", |n, d, _| {
            Ok(Box::new(IdentityEmbedding::new(n, d)?))
        })
}

fn check_input(op: &'static str, x: &Mat, n: usize) -> Result<()> {
    if x.ncols() != n {
        return Err(Error::Dimension {
            op,
            left: x.shape(),
            right: (x.nrows(), n),
        });
    }
    Ok(())
}

/// Query and key encoders (`n → 64 → 64 → d`, tanh hidden) plus the
/// similarity matrix `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub query: Mlp,
    pub key: Mlp,
    pub similarity: Mat,
}

impl EncoderParams {
    /// Key starts as an exact copy of the query; `W` starts at the identity.
    pub fn new<R: Rng>(obs_dim: usize, latent_dim: usize, rng: &mut R) -> Self {
        let query = Mlp::new(&[obs_dim, HIDDEN, HIDDEN, latent_dim], rng);
        Self {
            key: query.clone(),
            query,
            similarity: Mat::identity(latent_dim, latent_dim),
        }
    }

    pub fn from_parts(query: Mlp, key: Mlp, similarity: Mat) -> Result<Self> {
        let same = query.layers.len() == key.layers.len()
            && query
                .layers
                .iter()
                .zip(&key.layers)
                .all(|(a, b)| a.w.shape() == b.w.shape() && a.b.shape() == b.b.shape());
        if !same {
            return Err(Error::usage("query and key encoders must share layer shapes"));
        }
        let d = query.output_dim();
        if similarity.shape() != (d, d) {
            return Err(Error::Dimension {
                op: "similarity",
                left: similarity.shape(),
                right: (d, d),
            });
        }
        Ok(Self {
            query,
            key,
            similarity,
        })
    }
}

impl Embedding for EncoderParams {
    fn kind(&self) -> &'static str {
        "mlp"
    }

    fn obs_dim(&self) -> usize {
        self.query.input_dim()
    }

    fn latent_dim(&self) -> usize {
        self.query.output_dim()
    }

    fn is_trainable(&self) -> bool {
        true
    }

    fn encode(&self, x: &Mat, which: Which) -> Result<Mat> {
        check_input("encode", x, self.obs_dim())?;
        Ok(match which {
            Which::Query => self.query.forward(x),
            Which::Key => self.key.forward(x),
        })
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.query.bind(tape, trainable).vars
    }

    fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var) -> Result<Var> {
        check_input("encode", tape.value(x), self.obs_dim())?;
        crate::nn::BoundMlp {
            vars: bound.to_vec(),
        }
        .forward(tape, x)
    }

    fn query_params(&self) -> Vec<&Mat> {
        self.query.params()
    }

    fn query_params_mut(&mut self) -> Vec<&mut Mat> {
        self.query.params_mut()
    }

    fn similarity(&self) -> &Mat {
        &self.similarity
    }

    fn similarity_mut(&mut self) -> &mut Mat {
        &mut self.similarity
    }

    fn contrastive_params_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = self.query.params_mut();
        out.push(&mut self.similarity);
        out
    }

    fn momentum_update(&mut self, tau: f64) {
        self.key.blend_from(&self.query, tau);
    }

    fn named_tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = Vec::new();
        for (side, net) in [("query", &self.query), ("key", &self.key)] {
            for (i, l) in net.layers.iter().enumerate() {
                out.push((format!("encoder.{side}.{i}.w"), &l.w));
                out.push((format!("encoder.{side}.{i}.b"), &l.b));
            }
        }
        out.push(("encoder.similarity".into(), &self.similarity));
        out
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut out = Vec::new();
        for (side, net) in [("query", &mut self.query), ("key", &mut self.key)] {
            for (i, l) in net.layers.iter_mut().enumerate() {
                out.push((format!("encoder.{side}.{i}.w"), &mut l.w));
                out.push((format!("encoder.{side}.{i}.b"), &mut l.b));
            }
        }
        out.push(("encoder.similarity".into(), &mut self.similarity));
        out
    }

    fn clone_box(&self) -> Box<dyn Embedding> {
        Box::new(self.clone())
    }
}

/// `ψ(x) = x`. Used for exactly linear plants where the state already is
/// a Koopman coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityEmbedding {
    dim: usize,
    similarity: Mat,
}

impl IdentityEmbedding {
    pub fn new(obs_dim: usize, latent_dim: usize) -> Result<Self> {
        if obs_dim != latent_dim {
            return Err(Error::Config {
                field: "latent_dim".into(),
                reason: format!(
                    "identity embedding needs latent_dim == observation size {obs_dim}"
                ),
            });
        }
        Ok(Self {
            dim: obs_dim,
            similarity: Mat::identity(obs_dim, obs_dim),
        })
    }
}

impl Embedding for IdentityEmbedding {
    fn kind(&self) -> &'static str {
        "identity"
    }

    fn obs_dim(&self) -> usize {
        self.dim
    }

    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn is_trainable(&self) -> bool {
        false
    }

    fn encode(&self, x: &Mat, _which: Which) -> Result<Mat> {
        check_input("encode", x, self.dim)?;
        Ok(x.clone())
    }

    fn bind(&self, _tape: &mut Tape, _trainable: bool) -> Vec<Var> {
        Vec::new()
    }

    fn forward(&self, tape: &mut Tape, _bound: &[Var], x: Var) -> Result<Var> {
        check_input("encode", tape.value(x), self.dim)?;
        Ok(x)
    }

    fn query_params(&self) -> Vec<&Mat> {
        Vec::new()
    }

    fn query_params_mut(&mut self) -> Vec<&mut Mat> {
        Vec::new()
    }

    fn similarity(&self) -> &Mat {
        &self.similarity
    }

    fn similarity_mut(&mut self) -> &mut Mat {
        &mut self.similarity
    }

    fn contrastive_params_mut(&mut self) -> Vec<&mut Mat> {
        vec![&mut self.similarity]
    }

    fn momentum_update(&mut self, _tau: f64) {}

    fn named_tensors(&self) -> Vec<(String, &Mat)> {
        vec![("encoder.similarity".into(), &self.similarity)]
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        vec![("encoder.similarity".into(), &mut self.similarity)]
    }

    fn clone_box(&self) -> Box<dyn Embedding> {
        Box::new(self.clone())
    }
}

/// `x + Δx` with `Δx_ij ~ U(−η|x_ij|, η|x_ij|)`. Zero entries stay zero.
pub fn augment<R: Rng>(x: &Mat, eta: f64, rng: &mut R) -> Mat {
    x.map(|v| {
        let half = eta * v.abs();
        if half > 0.0 {
            v + rng.gen_range(-half..=half)
        } else {
            v
        }
    })
}

/// InfoNCE with in-batch negatives under the bilinear score
/// `logits_ij = z_q,iᵀ · W · z⁺_j`. Returns the mean cross-entropy of each
/// row against its own positive (the diagonal).
pub fn contrastive_loss(tape: &mut Tape, z_q: Var, z_plus: Var, w: Var) -> Result<Var> {
    let batch = tape.value(z_q).nrows();
    if batch < 2 {
        return Err(Error::usage(format!(
            "contrastive loss needs a batch of at least 2, got {batch}"
        )));
    }
    if tape.value(z_plus).shape() != tape.value(z_q).shape() {
        return Err(Error::Dimension {
            op: "contrastive_loss",
            left: tape.value(z_q).shape(),
            right: tape.value(z_plus).shape(),
        });
    }
    let qw = tape.matmul(z_q, w)?;
    let kt = tape.transpose(z_plus);
    let logits = tape.matmul(qw, kt)?;
    let lse = tape.logsumexp_rows(logits);
    let pos = tape.diag_part(logits)?;
    let per_row = tape.sub(lse, pos)?;
    Ok(tape.mean(per_row))
}
