//! Small fully connected networks and the Adam optimiser.

use rand::Rng;

use crate::error::Result;
use crate::ndmath::{tanh, Mat, Tape, Var};

/// Dense layer in row-vector convention: `y = x·W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// in × out
    pub w: Mat,
    /// 1 × out
    pub b: Mat,
}

/// Tanh between layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// Uniform(−1/√fan_in, 1/√fan_in) weights and biases.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Linear {
                    w: Mat::from_fn(w[0], w[1], |_, _| rng.gen_range(-bound..bound)),
                    b: Mat::from_fn(1, w[1], |_, _| rng.gen_range(-bound..bound)),
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Linear {
                w: Mat::zeros(w[0], w[1]),
                b: Mat::zeros(1, w[1]),
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.w.ncols()).unwrap_or(0)
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = &h * &layer.w;
            for mut row in y.row_iter_mut() {
                row += &layer.b;
            }
            if i < last {
                y.apply(|v| *v = tanh(*v));
            }
            h = y;
        }
        h
    }

    /// Puts every weight on the tape, trainable or not.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let vars = self
            .params()
            .into_iter()
            .map(|p| tape.leaf(p.clone(), trainable))
            .collect();
        BoundMlp { vars }
    }

    pub fn params(&self) -> Vec<&Mat> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Mat> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    /// `self ← τ·self + (1 − τ)·source`, elementwise.
    pub fn blend_from(&mut self, source: &Mlp, tau: f64) {
        for (dst, src) in self.params_mut().into_iter().zip(source.params()) {
            dst.zip_apply(src, |d, s| *d = tau * *d + (1.0 - tau) * s);
        }
    }
}

/// An [`Mlp`]'s weights as tape variables, in [`Mlp::params`] order.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    pub vars: Vec<Var>,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let n_layers = self.vars.len() / 2;
        let mut h = x;
        for i in 0..n_layers {
            let xw = tape.matmul(h, self.vars[2 * i])?;
            h = tape.add_row(xw, self.vars[2 * i + 1])?;
            if i + 1 < n_layers {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    pub fn grads(&self, tape: &Tape) -> Vec<Mat> {
        self.vars.iter().map(|&v| tape.grad_or_zeros(v)).collect()
    }
}

/// Adam with bias correction. Moments are per parameter, in the order the
/// parameters are passed to [`Adam::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
        }
    }

    pub fn for_params(lr: f64, params: &[&Mat]) -> Self {
        let shapes: Vec<_> = params.iter().map(|p| p.shape()).collect();
        Self::new(lr, &shapes)
    }

    pub fn step(&mut self, params: Vec<&mut Mat>, grads: &[Mat]) {
        assert_eq!(params.len(), grads.len(), "adam: params/grads length");
        assert_eq!(params.len(), self.m.len(), "adam: optimiser built for another group");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            m.zip_apply(g, |m, g| *m = b1 * *m + (1.0 - b1) * g);
            v.zip_apply(g, |v, g| *v = b2 * *v + (1.0 - b2) * g * g);
            for ((p, m), v) in p.iter_mut().zip(m.iter()).zip(v.iter()) {
                *p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            }
        }
    }

    /// Moment tensors, for checkpointing.
    pub fn state(&self) -> Vec<&Mat> {
        self.m.iter().chain(self.v.iter()).collect()
    }

    pub fn state_mut(&mut self) -> Vec<&mut Mat> {
        self.m.iter_mut().chain(self.v.iter_mut()).collect()
    }
}
