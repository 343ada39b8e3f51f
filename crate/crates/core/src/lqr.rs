//! Differentiable infinite-horizon LQR in the latent space.
//!
//! The Riccati recursion is unrolled a fixed number of times on the tape,
//! starting from `P = Q`:
//!
//! ```text
//! P ← AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA + Q,   P ← (P + Pᵀ)/2
//! G = (R + BᵀPB)⁻¹ BᵀPA
//! ```
//!
//! so the gain is a differentiable function of `A`, `B`, `Q` and `R`. `Q` and
//! `R` are diagonal with entries `softplus(raw) + 1e-6`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::koopman::KoopmanModel;
use crate::ndmath::{softplus, tanh, Mat, Tape, Var};

/// Floor added to every diagonal cost entry.
pub const DIAG_FLOOR: f64 = 1e-6;
pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Inside `log(1 − tanh² + ε)` of the squashing correction.
pub const SQUASH_EPS: f64 = 1e-6;

/// `softplus⁻¹(1)`: raw value whose effective weight is ≈ 1.
pub fn unit_raw() -> f64 {
    (1f64.exp() - 1.0).ln()
}

/// Learnable cost weights and the unroll depth.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrParams {
    /// d × 1, unconstrained.
    pub q_raw: Mat,
    /// m × 1, unconstrained.
    pub r_raw: Mat,
    pub iterations: usize,
}

impl LqrParams {
    /// `Q ≈ I`, `R ≈ I`.
    pub fn new(latent_dim: usize, control_dim: usize, iterations: usize) -> Self {
        Self {
            q_raw: Mat::from_element(latent_dim, 1, unit_raw()),
            r_raw: Mat::from_element(control_dim, 1, unit_raw()),
            iterations,
        }
    }

    pub fn q_diagonal(&self) -> Vec<f64> {
        self.q_raw.iter().map(|&v| softplus(v) + DIAG_FLOOR).collect()
    }

    pub fn r_diagonal(&self) -> Vec<f64> {
        self.r_raw.iter().map(|&v| softplus(v) + DIAG_FLOOR).collect()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundLqr {
        BoundLqr {
            q_raw: tape.leaf(self.q_raw.clone(), trainable),
            r_raw: tape.leaf(self.r_raw.clone(), trainable),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLqr {
    pub q_raw: Var,
    pub r_raw: Var,
}

impl BoundLqr {
    /// Effective diagonals as `n×1` tape variables.
    pub fn diagonals(&self, tape: &mut Tape) -> (Var, Var) {
        let q = tape.softplus(self.q_raw);
        let q = tape.add_scalar(q, DIAG_FLOOR);
        let r = tape.softplus(self.r_raw);
        let r = tape.add_scalar(r, DIAG_FLOOR);
        (q, r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution {
    /// d × d cost-to-go after the last iteration.
    pub p: Mat,
    /// m × d feedback gain.
    pub g: Mat,
}

/// Tape handles of an unrolled solve.
#[derive(Debug, Clone, Copy)]
pub struct DareVars {
    pub p: Var,
    pub g: Var,
}

/// Unrolls `iterations` Riccati steps on the tape. `q_diag` is `d×1`,
/// `r_diag` is `m×1`; gradients reach whatever those and `a`, `b` depend on.
pub fn dare_on_tape(
    tape: &mut Tape,
    a: Var,
    b: Var,
    q_diag: Var,
    r_diag: Var,
    iterations: usize,
) -> Result<DareVars> {
    if iterations == 0 {
        return Err(Error::usage("DARE needs at least one iteration"));
    }
    let (d, m) = (tape.value(a).nrows(), tape.value(b).ncols());
    if tape.value(a).ncols() != d || tape.value(b).nrows() != d {
        return Err(Error::Dimension {
            op: "solve_dare",
            left: tape.value(a).shape(),
            right: tape.value(b).shape(),
        });
    }
    if tape.value(q_diag).shape() != (d, 1) || tape.value(r_diag).shape() != (m, 1) {
        return Err(Error::Dimension {
            op: "solve_dare",
            left: tape.value(q_diag).shape(),
            right: tape.value(r_diag).shape(),
        });
    }
    let q = tape.diag(q_diag)?;
    let r = tape.diag(r_diag)?;
    let at = tape.transpose(a);
    let bt = tape.transpose(b);

    let riccati = |tape: &mut Tape, p: Var| -> Result<Var> {
        let pa = tape.matmul(p, a)?;
        let pb = tape.matmul(p, b)?;
        let btpb = tape.matmul(bt, pb)?;
        let s = tape.add(r, btpb)?;
        let btpa = tape.matmul(bt, pa)?;
        let k = tape.solve(s, btpa)?;
        let atpa = tape.matmul(at, pa)?;
        let atpb = tape.matmul(at, pb)?;
        let corr = tape.matmul(atpb, k)?;
        let next = tape.sub(atpa, corr)?;
        let next = tape.add(next, q)?;
        let nt = tape.transpose(next);
        let sym = tape.add(next, nt)?;
        Ok(tape.scale(sym, 0.5))
    };

    let mut p = q;
    for it in 0..iterations {
        let solved = riccati(tape, p).map_err(|e| match e {
            Error::Singular { .. } => Error::RiccatiDiverged { iteration: it + 1 },
            other => other,
        })?;
        p = solved;
        if tape.value(p).iter().any(|v| !v.is_finite()) {
            return Err(Error::RiccatiDiverged { iteration: it + 1 });
        }
    }
    let pb = tape.matmul(p, b)?;
    let btpb = tape.matmul(bt, pb)?;
    let s = tape.add(r, btpb)?;
    let pa = tape.matmul(p, a)?;
    let btpa = tape.matmul(bt, pa)?;
    let g = tape.solve(s, btpa).map_err(|e| match e {
        Error::Singular { .. } => Error::RiccatiDiverged {
            iteration: iterations,
        },
        other => other,
    })?;
    if tape.value(g).iter().any(|v| !v.is_finite()) {
        return Err(Error::RiccatiDiverged {
            iteration: iterations,
        });
    }
    Ok(DareVars { p, g })
}

/// Off-tape solve with explicit diagonal weights.
pub fn solve_dare_with(
    model: &KoopmanModel,
    q_diag: &[f64],
    r_diag: &[f64],
    iterations: usize,
) -> Result<LqrSolution> {
    let mut tape = Tape::new();
    let a = tape.constant(model.a.clone());
    let b = tape.constant(model.b.clone());
    let q = tape.constant(Mat::from_column_slice(q_diag.len(), 1, q_diag));
    let r = tape.constant(Mat::from_column_slice(r_diag.len(), 1, r_diag));
    let vars = dare_on_tape(&mut tape, a, b, q, r, iterations)?;
    Ok(LqrSolution {
        p: tape.value(vars.p).clone(),
        g: tape.value(vars.g).clone(),
    })
}

/// Off-tape solve with the learnable weights.
pub fn solve_dare(model: &KoopmanModel, params: &LqrParams) -> Result<LqrSolution> {
    solve_dare_with(
        model,
        &params.q_diagonal(),
        &params.r_diagonal(),
        params.iterations,
    )
}

/// `u* = −G(z − z_ref)` for a single latent column `z` (d×1).
pub fn lqr_action_mean(sol: &LqrSolution, z: &Mat, z_ref: &Mat) -> Result<Mat> {
    if z.shape() != (sol.g.ncols(), 1) || z_ref.shape() != z.shape() {
        return Err(Error::Dimension {
            op: "lqr_action_mean",
            left: z.shape(),
            right: z_ref.shape(),
        });
    }
    Ok(-(&sol.g * (z - z_ref)))
}

/// Batched mean on the tape: rows of `z` are latents, `z_ref` is `1×d`,
/// result is `batch×m` = `−(z − z_ref)·Gᵀ`.
pub fn action_mean_on_tape(tape: &mut Tape, g: Var, z: Var, z_ref: Var) -> Result<Var> {
    let neg_ref = tape.neg(z_ref);
    let diff = tape.add_row(z, neg_ref)?;
    let gt = tape.transpose(g);
    let mg = tape.matmul(diff, gt)?;
    Ok(tape.neg(mg))
}

/// Reparameterised tanh-Gaussian sample around `mean` (`batch×m`) with
/// state-independent `log_std` (`1×m`) and standard-normal draws `eps`.
/// Returns `(u, log_prob)` with `log_prob` `batch×1`.
pub fn policy_sample_on_tape(
    tape: &mut Tape,
    mean: Var,
    log_std: Var,
    eps: &Mat,
) -> Result<(Var, Var)> {
    let (batch, m) = tape.value(mean).shape();
    if eps.shape() != (batch, m) {
        return Err(Error::Dimension {
            op: "policy_sample",
            left: (batch, m),
            right: eps.shape(),
        });
    }
    let ls = tape.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX);
    let std = tape.exp(ls);
    let eps_v = tape.constant(eps.clone());
    let noise = tape.mul_row(eps_v, std)?;
    let pre = tape.add(mean, noise)?;
    let u = tape.tanh(pre);

    // Gaussian log-density of the pre-squash sample: Σ_j −½ε² − log σ_j − ½log 2π
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let const_part = Mat::from_fn(batch, 1, |i, _| {
        eps.row(i).iter().map(|e| -0.5 * e * e - half_log_2pi).sum::<f64>()
    });
    let const_v = tape.constant(const_part);
    let ls_sum = tape.sum(ls);
    let ones = tape.constant(Mat::from_element(batch, 1, 1.0));
    let ls_col = tape.matmul(ones, ls_sum)?;
    let gauss = tape.sub(const_v, ls_col)?;

    let u2 = tape.square(u);
    let one_minus = tape.neg(u2);
    let one_minus = tape.add_scalar(one_minus, 1.0 + SQUASH_EPS);
    let log_jac = tape.log(one_minus);
    let log_jac = tape.sum_cols(log_jac);
    let log_prob = tape.sub(gauss, log_jac)?;
    Ok((u, log_prob))
}

/// Single-sample convenience wrapper returning plain values.
pub fn policy_sample<R: Rng>(
    sol: &LqrSolution,
    z: &Mat,
    z_ref: &Mat,
    log_std: &Mat,
    rng: &mut R,
) -> Result<(Mat, f64)> {
    let mean = lqr_action_mean(sol, z, z_ref)?;
    let m = mean.nrows();
    let eps = Mat::from_fn(1, m, |_, _| rng.sample(StandardNormal));
    let mut tape = Tape::new();
    let mean_v = tape.constant(mean.transpose());
    let ls = tape.constant(log_std.clone());
    let (u, lp) = policy_sample_on_tape(&mut tape, mean_v, ls, &eps)?;
    Ok((tape.value(u).transpose(), tape.scalar(lp)))
}

/// `A − B·G`.
pub fn closed_loop_matrix(model: &KoopmanModel, sol: &LqrSolution) -> Result<Mat> {
    if sol.g.shape() != (model.control_dim(), model.latent_dim()) {
        return Err(Error::Dimension {
            op: "closed_loop_matrix",
            left: model.b.shape(),
            right: sol.g.shape(),
        });
    }
    Ok(&model.a - &model.b * &sol.g)
}

/// Frozen controller used for environment rollouts: mean `−(z − z_ref)·Gᵀ`,
/// optional tanh-Gaussian exploration.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPolicy {
    /// m × d
    pub gain: Mat,
    /// 1 × d
    pub z_ref: Mat,
    /// 1 × m
    pub log_std: Mat,
    /// Squash the mean through tanh. The learned controller always does;
    /// the two-stage baseline emits the raw LQR action.
    pub squash: bool,
}

impl LatentPolicy {
    /// `z` is `1×d`; returns `1×m`.
    pub fn mean(&self, z: &Mat) -> Mat {
        let diff = z - &self.z_ref;
        -(diff * self.gain.transpose())
    }

    pub fn act_deterministic(&self, z: &Mat) -> Vec<f64> {
        let mean = self.mean(z);
        if self.squash {
            mean.iter().map(|&v| tanh(v)).collect()
        } else {
            mean.iter().cloned().collect()
        }
    }

    pub fn act_stochastic<R: Rng>(&self, z: &Mat, rng: &mut R) -> Vec<f64> {
        let mean = self.mean(z);
        mean.iter()
            .zip(self.log_std.iter())
            .map(|(&mu, &ls)| {
                let eps: f64 = rng.sample(StandardNormal);
                let a = mu + ls.clamp(LOG_STD_MIN, LOG_STD_MAX).exp() * eps;
                if self.squash {
                    tanh(a)
                } else {
                    a
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::{eigvals, spectral_radius};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_model(a: f64, b: f64) -> KoopmanModel {
        KoopmanModel::new(Mat::from_element(1, 1, a), Mat::from_element(1, 1, b)).unwrap()
    }

    fn phi() -> f64 {
        (1.0 + 5f64.sqrt()) / 2.0
    }

    #[test]
    fn scalar_golden_ratio() {
        let sol = solve_dare_with(&scalar_model(1.0, 1.0), &[1.0], &[1.0], 100).unwrap();
        assert!((sol.p[(0, 0)] - phi()).abs() < 1e-9);
        assert!((sol.g[(0, 0)] - 1.0 / phi()).abs() < 1e-9);
        let u = lqr_action_mean(&sol, &Mat::from_element(1, 1, 1.0), &Mat::zeros(1, 1)).unwrap();
        assert!((u[(0, 0)] + 0.618_034_0).abs() < 1e-7);
        let cl = closed_loop_matrix(&scalar_model(1.0, 1.0), &sol).unwrap();
        assert!((cl[(0, 0)] - 0.381_966_0).abs() < 1e-7);
    }

    #[test]
    fn scalar_half() {
        // P² − 0.25P − 1 = 0
        let p = (0.25 + (0.0625f64 + 4.0).sqrt()) / 2.0;
        let sol = solve_dare_with(&scalar_model(0.5, 1.0), &[1.0], &[1.0], 100).unwrap();
        assert!((sol.p[(0, 0)] - p).abs() < 1e-12);
        assert!((sol.g[(0, 0)] - 0.5 * p / (1.0 + p)).abs() < 1e-12);
        assert!((sol.p[(0, 0)] - 1.132_782_2).abs() < 1e-7);
        assert!((sol.g[(0, 0)] - 0.265_564_4).abs() < 1e-7);
    }

    #[test]
    fn zero_dynamics_collapse() {
        let model = KoopmanModel::new(Mat::zeros(3, 3), Mat::from_element(3, 1, 0.7)).unwrap();
        let q = [1.0, 2.0, 3.0];
        let sol = solve_dare_with(&model, &q, &[0.5], 1).unwrap();
        assert_eq!(sol.p, Mat::from_diagonal(&nalgebra::DVector::from_vec(q.to_vec())));
        assert!(sol.g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_iterations_rejected() {
        assert!(matches!(
            solve_dare_with(&scalar_model(1.0, 1.0), &[1.0], &[1.0], 0),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn wildly_unstable_diverges_with_iteration() {
        // B = 0 leaves the recursion as P ← a²P + 1, which overflows.
        let model = scalar_model(1e80, 0.0);
        match solve_dare_with(&model, &[1.0], &[1.0], 10) {
            Err(Error::RiccatiDiverged { iteration }) => assert!(iteration >= 1 && iteration <= 10),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn action_mean_cases() {
        let sol = LqrSolution {
            p: Mat::identity(2, 2),
            g: Mat::zeros(1, 2),
        };
        let z = Mat::from_column_slice(2, 1, &[3.0, -1.0]);
        assert_eq!(lqr_action_mean(&sol, &z, &Mat::zeros(2, 1)).unwrap(), Mat::zeros(1, 1));
        let sol = LqrSolution {
            p: Mat::identity(2, 2),
            g: Mat::from_row_slice(1, 2, &[0.4, -2.0]),
        };
        assert_eq!(lqr_action_mean(&sol, &z, &z).unwrap(), Mat::zeros(1, 1));
        assert!(lqr_action_mean(&sol, &Mat::zeros(3, 1), &Mat::zeros(3, 1)).is_err());
    }

    #[test]
    fn closed_loop_cases() {
        let model = KoopmanModel::new(Mat::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 1.2]), Mat::zeros(2, 1)).unwrap();
        let sol = LqrSolution {
            p: Mat::identity(2, 2),
            g: Mat::from_row_slice(1, 2, &[3.0, 4.0]),
        };
        assert_eq!(closed_loop_matrix(&model, &sol).unwrap(), model.a);
        let zero_g = LqrSolution {
            p: Mat::identity(2, 2),
            g: Mat::zeros(1, 2),
        };
        let model2 = KoopmanModel::new(model.a.clone(), Mat::from_element(2, 1, 1.0)).unwrap();
        assert_eq!(closed_loop_matrix(&model2, &zero_g).unwrap(), model.a);
    }

    #[test]
    fn sample_at_zero_noise() {
        let mut tape = Tape::new();
        let mean = tape.constant(Mat::zeros(1, 1));
        let ls = tape.constant(Mat::zeros(1, 1));
        let (u, lp) = policy_sample_on_tape(&mut tape, mean, ls, &Mat::zeros(1, 1)).unwrap();
        assert_eq!(tape.scalar(u), 0.0);
        let expect = -0.5 * (2.0 * std::f64::consts::PI).ln() - (1.0 + SQUASH_EPS).ln();
        assert!((tape.scalar(lp) - expect).abs() < 1e-15);
        assert!((tape.scalar(lp) + 0.918_939).abs() < 2e-6);
    }

    #[test]
    fn sample_deterministic_limit() {
        let sol = solve_dare_with(&scalar_model(1.0, 1.0), &[1.0], &[1.0], 50).unwrap();
        let z = Mat::from_element(1, 1, 0.8);
        let zr = Mat::zeros(1, 1);
        let mu = lqr_action_mean(&sol, &z, &zr).unwrap()[(0, 0)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // below the clamp, so σ = e^−10
        let ls = Mat::from_element(1, 1, -30.0);
        let draws: Vec<f64> = (0..20)
            .map(|_| policy_sample(&sol, &z, &zr, &ls, &mut rng).unwrap().0[(0, 0)])
            .collect();
        for u in &draws {
            assert!((u - mu.tanh()).abs() < 1e-4);
            assert!((u - draws[0]).abs() < 1e-4);
        }
    }

    /// E[tanh(μ + σε)] by Simpson's rule over ε ∈ [−10, 10].
    fn tanh_gaussian_mean(mu: f64, sigma: f64) -> f64 {
        let n = 20_000;
        let (lo, hi) = (-10.0, 10.0);
        let h = (hi - lo) / n as f64;
        let f = |e: f64| (mu + sigma * e).tanh() * (-0.5 * e * e).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = f(lo) + f(hi);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(lo + k as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn sample_mean_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mu, log_sigma) = (0.4, 0.2f64);
        let policy = LatentPolicy {
            gain: Mat::from_element(1, 1, -mu),
            z_ref: Mat::zeros(1, 1),
            log_std: Mat::from_element(1, 1, log_sigma),
            squash: true,
        };
        let z = Mat::from_element(1, 1, 1.0);
        let n = 100_000;
        let mean = (0..n).map(|_| policy.act_stochastic(&z, &mut rng)[0]).sum::<f64>() / n as f64;
        let expect = tanh_gaussian_mean(mu, log_sigma.exp());
        assert!((mean - expect).abs() < 1e-2, "{mean} vs {expect}");
    }

    #[test]
    fn scaling_q_and_r_leaves_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let model = KoopmanModel::new(
                Mat::from_fn(4, 4, |_, _| rng.gen_range(-0.8..0.8)),
                Mat::from_fn(4, 2, |_, _| rng.gen_range(-1.0..1.0)),
            )
            .unwrap();
            let q: Vec<f64> = (0..4).map(|_| rng.gen_range(0.1..2.0)).collect();
            let r: Vec<f64> = (0..2).map(|_| rng.gen_range(0.1..2.0)).collect();
            let c = rng.gen_range(0.1..10.0);
            let qc: Vec<f64> = q.iter().map(|v| v * c).collect();
            let rc: Vec<f64> = r.iter().map(|v| v * c).collect();
            let g1 = solve_dare_with(&model, &q, &r, 50).unwrap().g;
            let g2 = solve_dare_with(&model, &qc, &rc, 50).unwrap().g;
            assert!((g1 - g2).amax() < 1e-10);
        }
    }

    #[test]
    fn converged_solution_is_psd_and_stabilising() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let d = rng.gen_range(1..=5);
            let model = KoopmanModel::new(
                Mat::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0)),
                Mat::from_fn(d, 1, |_, _| rng.gen_range(-1.0..1.0)),
            )
            .unwrap();
            let sol = solve_dare_with(&model, &vec![1.0; d], &[1.0], 200).unwrap();
            assert!((&sol.p - sol.p.transpose()).amax() < 1e-8);
            let ev = sol.p.clone().symmetric_eigenvalues();
            assert!(ev.iter().all(|&e| e >= -1e-10));
            let cl = closed_loop_matrix(&model, &sol).unwrap();
            assert!(spectral_radius(&eigvals(&cl).unwrap()) < 1.0);
        }
    }

    #[test]
    fn gain_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (d, m) = (3, 2);
        let model = KoopmanModel::new(
            Mat::from_fn(d, d, |_, _| rng.gen_range(-0.9..0.9)),
            Mat::from_fn(d, m, |_, _| rng.gen_range(-1.0..1.0)),
        )
        .unwrap();
        let mut params = LqrParams::new(d, m, 10);
        params.q_raw = Mat::from_fn(d, 1, |_, _| rng.gen_range(-1.0..1.0));
        params.r_raw = Mat::from_fn(m, 1, |_, _| rng.gen_range(-1.0..1.0));

        let mut tape = Tape::new();
        let kb = model.bind(&mut tape, true);
        let lb = params.bind(&mut tape, true);
        let (q, r) = lb.diagonals(&mut tape);
        let vars = dare_on_tape(&mut tape, kb.a, kb.b, q, r, 10).unwrap();
        let s = tape.sum(vars.g);
        tape.backward(s).unwrap();

        let f = |mo: &KoopmanModel, pa: &LqrParams| solve_dare(mo, pa).unwrap().g.sum();
        let h = 1e-5;
        let check = |analytic: &Mat, perturb: &dyn Fn(usize, f64) -> f64| {
            let fd = Mat::from_fn(analytic.nrows(), analytic.ncols(), |i, j| {
                let k = i + j * analytic.nrows();
                (perturb(k, h) - perturb(k, -h)) / (2.0 * h)
            });
            let err = (&fd - analytic).norm() / fd.norm().max(1e-12);
            assert!(err < 1e-4, "relative error {err:e}");
        };
        check(&tape.grad_or_zeros(kb.a), &|k, h| {
            let mut mo = model.clone();
            mo.a[k] += h;
            f(&mo, &params)
        });
        check(&tape.grad_or_zeros(kb.b), &|k, h| {
            let mut mo = model.clone();
            mo.b[k] += h;
            f(&mo, &params)
        });
        check(&tape.grad_or_zeros(lb.q_raw), &|k, h| {
            let mut pa = params.clone();
            pa.q_raw[k] += h;
            f(&model, &pa)
        });
        check(&tape.grad_or_zeros(lb.r_raw), &|k, h| {
            let mut pa = params.clone();
            pa.r_raw[k] += h;
            f(&model, &pa)
        });
    }

    #[test]
    fn params_start_near_identity() {
        let p = LqrParams::new(3, 1, 5);
        assert!(p.q_diagonal().iter().all(|&v| (v - 1.0).abs() < 1e-5));
        assert!(p.r_diagonal().iter().all(|&v| (v - 1.0).abs() < 1e-5));
    }
}
