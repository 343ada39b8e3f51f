//! Linear latent dynamics `z' = A z + B u`, its one-step loss and a
//! closed-form ridge fitter.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::ndmath::{self, Mat, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    /// d × d
    pub a: Mat,
    /// d × m
    pub b: Mat,
}

impl KoopmanModel {
    pub fn new(a: Mat, b: Mat) -> Result<Self> {
        if a.nrows() != a.ncols() || b.nrows() != a.nrows() {
            return Err(Error::Dimension {
                op: "koopman",
                left: a.shape(),
                right: b.shape(),
            });
        }
        Ok(Self { a, b })
    }

    /// `A = I + N(0, 0.01²)`, `B = N(0, 0.01²)`.
    pub fn init<R: Rng>(latent_dim: usize, control_dim: usize, rng: &mut R) -> Self {
        let noise = Normal::new(0.0, 0.01).expect("valid normal");
        let a = Mat::from_fn(latent_dim, latent_dim, |i, j| {
            noise.sample(rng) + if i == j { 1.0 } else { 0.0 }
        });
        let b = Mat::from_fn(latent_dim, control_dim, |_, _| noise.sample(rng));
        Self { a, b }
    }

    pub fn latent_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    fn check_batch(&self, z: &Mat, u: &Mat) -> Result<()> {
        if z.ncols() != self.latent_dim()
            || u.ncols() != self.control_dim()
            || z.nrows() != u.nrows()
        {
            return Err(Error::Dimension {
                op: "predict",
                left: z.shape(),
                right: u.shape(),
            });
        }
        Ok(())
    }

    /// Rows of `z`, `u` are samples: returns `z·Aᵀ + u·Bᵀ`.
    pub fn predict(&self, z: &Mat, u: &Mat) -> Result<Mat> {
        self.check_batch(z, u)?;
        Ok(z * self.a.transpose() + u * self.b.transpose())
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundKoopman {
        BoundKoopman {
            a: tape.leaf(self.a.clone(), trainable),
            b: tape.leaf(self.b.clone(), trainable),
        }
    }

    /// Copy with Gaussian noise of Frobenius norm exactly `scale` added to
    /// `[A B]` jointly.
    pub fn perturbed<R: Rng>(&self, scale: f64, rng: &mut R) -> Self {
        if scale == 0.0 {
            return self.clone();
        }
        let mut ea: Mat = Mat::from_fn(self.a.nrows(), self.a.ncols(), |_, _| {
            StandardNormal.sample(rng)
        });
        let mut eb: Mat = Mat::from_fn(self.b.nrows(), self.b.ncols(), |_, _| {
            StandardNormal.sample(rng)
        });
        let norm = (ea.norm_squared() + eb.norm_squared()).sqrt();
        ea *= scale / norm;
        eb *= scale / norm;
        Self {
            a: &self.a + ea,
            b: &self.b + eb,
        }
    }
}

/// `A`, `B` as tape variables.
#[derive(Debug, Clone, Copy)]
pub struct BoundKoopman {
    pub a: Var,
    pub b: Var,
}

impl BoundKoopman {
    pub fn predict(&self, tape: &mut Tape, z: Var, u: Var) -> Result<Var> {
        let at = tape.transpose(self.a);
        let bt = tape.transpose(self.b);
        let za = tape.matmul(z, at)?;
        let ub = tape.matmul(u, bt)?;
        tape.add(za, ub)
    }

    /// Batch mean of `‖ẑ' − A z − B u‖²`. The target enters as a constant,
    /// so nothing upstream of it receives gradient from this loss.
    pub fn model_loss(&self, tape: &mut Tape, z: Var, u: Var, z_next_hat: &Mat) -> Result<Var> {
        let pred = self.predict(tape, z, u)?;
        if tape.value(pred).shape() != z_next_hat.shape() {
            return Err(Error::Dimension {
                op: "model_loss",
                left: tape.value(pred).shape(),
                right: z_next_hat.shape(),
            });
        }
        let target = tape.constant(z_next_hat.clone());
        let resid = tape.sub(target, pred)?;
        let sq = tape.square(resid);
        let total = tape.sum(sq);
        let batch = z_next_hat.nrows().max(1) as f64;
        Ok(tape.scale(total, 1.0 / batch))
    }

    pub fn grads(&self, tape: &Tape) -> [Mat; 2] {
        [tape.grad_or_zeros(self.a), tape.grad_or_zeros(self.b)]
    }
}

/// Off-tape value of the model loss; same reduction as
/// [`BoundKoopman::model_loss`].
pub fn model_loss_value(model: &KoopmanModel, z: &Mat, u: &Mat, z_next_hat: &Mat) -> Result<f64> {
    let pred = model.predict(z, u)?;
    if pred.shape() != z_next_hat.shape() {
        return Err(Error::Dimension {
            op: "model_loss",
            left: pred.shape(),
            right: z_next_hat.shape(),
        });
    }
    Ok((z_next_hat - pred).norm_squared() / z_next_hat.nrows().max(1) as f64)
}

/// Ridge regression of `z_next` on the stacked regressor `[z u]`:
/// `[A B] = argmin Σ‖z' − A z − B u‖² + ridge·‖[A B]‖²_F`.
pub fn fit_least_squares(z: &Mat, u: &Mat, z_next: &Mat, ridge: f64) -> Result<KoopmanModel> {
    let (n, d, m) = (z.nrows(), z.ncols(), u.ncols());
    if u.nrows() != n || z_next.shape() != (n, d) {
        return Err(Error::Dimension {
            op: "fit_least_squares",
            left: z.shape(),
            right: z_next.shape(),
        });
    }
    if n < d + m {
        return Err(Error::usage(format!(
            "least-squares fit needs at least {} samples, got {n}",
            d + m
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::usage("ridge must be non-negative"));
    }
    let mut phi = Mat::zeros(n, d + m);
    phi.columns_mut(0, d).copy_from(z);
    phi.columns_mut(d, m).copy_from(u);
    let phi_t = phi.transpose();
    let mut gram = &phi_t * &phi;
    for i in 0..d + m {
        gram[(i, i)] += ridge;
    }
    let rhs = &phi_t * z_next;
    let theta = ndmath::solve(&gram, &rhs)?;
    let a = theta.rows(0, d).transpose();
    let b = theta.rows(d, m).transpose();
    Ok(KoopmanModel { a, b })
}
