//! Control-theoretic and predictive diagnostics of a learned latent system.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::embedding::{Embedding, Which};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::koopman::KoopmanModel;
use crate::lqr::{closed_loop_matrix, LqrParams, LqrSolution};
use crate::ndmath::{eigvals, spectral_radius, svd_rank, Mat, DEFAULT_RANK_TOL};
use crate::rl::eval::{eval_seeds, rollout, Controller, EvalEpisode};
use crate::rl::train::fmt_f64;

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `[B, AB, …, A^{d−1}B]`.
pub fn controllability_matrix(model: &KoopmanModel) -> Mat {
    let (d, m) = (model.latent_dim(), model.control_dim());
    let mut out = Mat::zeros(d, d * m);
    let mut block = model.b.clone();
    for k in 0..d {
        out.columns_mut(k * m, m).copy_from(&block);
        block = &model.a * block;
    }
    out
}

pub fn controllability_rank(model: &KoopmanModel) -> usize {
    svd_rank(&controllability_matrix(model), DEFAULT_RANK_TOL)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub open_poles: Vec<Complex64>,
    pub closed_poles: Vec<Complex64>,
    pub open_radius: f64,
    pub closed_radius: f64,
}

pub fn stability_report(model: &KoopmanModel, sol: &LqrSolution) -> Result<StabilityReport> {
    let open_poles = eigvals(&model.a)?;
    let closed_poles = eigvals(&closed_loop_matrix(model, sol)?)?;
    Ok(StabilityReport {
        open_radius: spectral_radius(&open_poles),
        closed_radius: spectral_radius(&closed_poles),
        open_poles,
        closed_poles,
    })
}

/// `kind,re,im,abs` with `kind ∈ {open, closed}`.
pub fn write_poles_csv(report: &StabilityReport, path: &Path) -> Result<()> {
    let mut s = String::from("kind,re,im,abs\n");
    for (kind, poles) in [("open", &report.open_poles), ("closed", &report.closed_poles)] {
        for p in poles {
            let _ = writeln!(s, "{kind},{},{},{}", fmt_f64(p.re), fmt_f64(p.im), fmt_f64(p.norm()));
        }
    }
    write(path, &s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelError {
    pub mean: f64,
    pub per_step: Vec<f64>,
}

/// One-step latent prediction error `‖ψ(x_{k+1}) − Aψ(x_k) − Bu_k‖²` along
/// a trajectory of `T` observations (rows of `obs`) and `T − 1` controls.
pub fn eval_model_error(
    model: &KoopmanModel,
    encoder: &dyn Embedding,
    obs: &Mat,
    u: &Mat,
) -> Result<ModelError> {
    let t = obs.nrows();
    if t < 2 {
        return Err(Error::usage(format!(
            "model error needs a trajectory of at least 2 states, got {t}"
        )));
    }
    if u.nrows() != t - 1 {
        return Err(Error::Dimension {
            op: "eval_model_error",
            left: obs.shape(),
            right: u.shape(),
        });
    }
    let z = encoder.encode(&obs.rows(0, t - 1).into_owned(), Which::Query)?;
    let z_next = encoder.encode(&obs.rows(1, t - 1).into_owned(), Which::Query)?;
    let pred = model.predict(&z, u)?;
    let per_step: Vec<f64> = (0..t - 1)
        .map(|k| (z_next.row(k) - pred.row(k)).norm_squared())
        .collect();
    Ok(ModelError {
        mean: per_step.iter().sum::<f64>() / (t - 1) as f64,
        per_step,
    })
}

/// Observation and control matrices of an episode.
pub fn episode_matrices(ep: &EvalEpisode) -> (Mat, Mat) {
    let n = ep.observations[0].len();
    let m = ep.controls.first().map_or(0, |c| c.len());
    let obs = Mat::from_fn(ep.observations.len(), n, |i, j| ep.observations[i][j]);
    let u = Mat::from_fn(ep.controls.len(), m, |i, j| ep.controls[i][j]);
    (obs, u)
}

pub fn write_model_error_csv(err: &ModelError, path: &Path) -> Result<()> {
    let mut s = String::from("step,error\n");
    for (k, e) in err.per_step.iter().enumerate() {
        let _ = writeln!(s, "{k},{}", fmt_f64(*e));
    }
    write(path, &s)
}

/// For each episode, `step,kind,z_0,…` rows: `true` is `ψ(x_{k+1})`, `pred`
/// is `Aψ(x_k) + Bu_k`. Episodes are stacked in order.
pub fn export_latent_trajectories(
    model: &KoopmanModel,
    encoder: &dyn Embedding,
    env: &dyn Environment,
    ctrl: &dyn Controller,
    episodes: usize,
    seed: u64,
    path: &Path,
) -> Result<()> {
    let d = model.latent_dim();
    let mut s = String::from("step,kind");
    for j in 0..d {
        let _ = write!(s, ",z_{j}");
    }
    s.push('\n');
    for reset in eval_seeds(seed, episodes) {
        let ep = rollout(env, ctrl, reset)?;
        let (obs, u) = episode_matrices(&ep);
        let t = obs.nrows();
        let z = encoder.encode(&obs.rows(0, t - 1).into_owned(), Which::Query)?;
        let z_next = encoder.encode(&obs.rows(1, t - 1).into_owned(), Which::Query)?;
        let pred = model.predict(&z, &u)?;
        for k in 0..t - 1 {
            for (kind, m) in [("true", &z_next), ("pred", &pred)] {
                let _ = write!(s, "{k},{kind}");
                for v in m.row(k).iter() {
                    let _ = write!(s, ",{}", fmt_f64(*v));
                }
                s.push('\n');
            }
        }
    }
    write(path, &s)
}

/// Effective diagonals as `kind,index,value` with `kind ∈ {q, r}`.
pub fn export_learned_q(params: &LqrParams, path: &Path) -> Result<()> {
    let mut s = String::from("kind,index,value\n");
    for (kind, diag) in [("q", params.q_diagonal()), ("r", params.r_diagonal())] {
        for (i, v) in diag.iter().enumerate() {
            let _ = writeln!(s, "{kind},{i},{}", fmt_f64(*v));
        }
    }
    write(path, &s)
}

/// Inverse of [`export_learned_q`].
pub fn read_learned_q(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (mut q, mut r) = (Vec::new(), Vec::new());
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::usage(format!("malformed line `{line}` in {}", path.display()));
        if f.len() != 3 {
            return Err(bad());
        }
        let v: f64 = f[2].parse().map_err(|_| bad())?;
        match f[0] {
            "q" => q.push(v),
            "r" => r.push(v),
            _ => return Err(bad()),
        }
    }
    Ok((q, r))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub poles: Vec<Complex64>,
    pub spectral_radius: f64,
    pub closed_loop_spectral_radius: f64,
    pub controllability_rank: usize,
    pub latent_dim: usize,
    pub mean_model_error: f64,
    pub q_diagonal: Vec<f64>,
    pub total_eval_cost: f64,
}

impl AnalysisReport {
    pub fn to_text(&self) -> String {
        let list = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(";");
        let mut s = String::new();
        let poles = list(&mut self.poles.iter().map(|p| format!("{}:{}", fmt_f64(p.re), fmt_f64(p.im))));
        let _ = writeln!(s, "poles = {poles}");
        let _ = writeln!(s, "spectral_radius = {}", fmt_f64(self.spectral_radius));
        let _ = writeln!(s, "closed_loop_spectral_radius = {}", fmt_f64(self.closed_loop_spectral_radius));
        let _ = writeln!(s, "controllability_rank = {}", self.controllability_rank);
        let _ = writeln!(s, "latent_dim = {}", self.latent_dim);
        let _ = writeln!(s, "mean_model_error = {}", fmt_f64(self.mean_model_error));
        let q = list(&mut self.q_diagonal.iter().map(|v| fmt_f64(*v)));
        let _ = writeln!(s, "q_diagonal = {q}");
        let _ = writeln!(s, "total_eval_cost = {}", fmt_f64(self.total_eval_cost));
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write(path, &self.to_text())
    }
}

/// Parses the `key = value` report back into its raw fields.
pub fn read_report(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::IdentityEmbedding;
    use crate::lqr::solve_dare_with;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn km(a: Mat, b: Mat) -> KoopmanModel {
        KoopmanModel::new(a, b).unwrap()
    }

    #[test]
    fn rank_cases() {
        assert_eq!(controllability_rank(&km(Mat::identity(2, 2), Mat::from_column_slice(2, 1, &[1.0, 0.0]))), 1);
        assert_eq!(
            controllability_rank(&km(
                Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
                Mat::from_column_slice(2, 1, &[0.0, 1.0])
            )),
            2
        );
    }

    #[test]
    fn canonical_form_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = 6;
        let mut a = Mat::zeros(d, d);
        for i in 0..d - 1 {
            a[(i, i + 1)] = 1.0;
        }
        for j in 0..d {
            a[(d - 1, j)] = rng.gen_range(-1.0..1.0);
        }
        let mut b = Mat::zeros(d, 1);
        b[(d - 1, 0)] = 1.0;
        assert_eq!(controllability_rank(&km(a, b)), d);
    }

    #[test]
    fn stability_cases() {
        let model = km(Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 1.2])), Mat::zeros(2, 1));
        let sol = LqrSolution {
            p: Mat::identity(2, 2),
            g: Mat::zeros(1, 2),
        };
        let rep = stability_report(&model, &sol).unwrap();
        let mut open: Vec<f64> = rep.open_poles.iter().map(|p| p.re).collect();
        open.sort_by(f64::total_cmp);
        assert!((open[0] - 0.5).abs() < 1e-12 && (open[1] - 1.2).abs() < 1e-12);
        assert_eq!(rep.open_poles.len(), rep.closed_poles.len());
        assert!(rep.open_radius > 1.0);

        let model = km(Mat::from_element(1, 1, 1.0), Mat::from_element(1, 1, 1.0));
        let sol = solve_dare_with(&model, &[1.0], &[1.0], 200).unwrap();
        let rep = stability_report(&model, &sol).unwrap();
        assert!((rep.closed_poles[0].re - 0.381_966_0).abs() < 1e-7);
    }

    #[test]
    fn model_error_cases() {
        let enc = IdentityEmbedding::new(2, 2).unwrap();
        let a = Mat::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]);
        let b = Mat::from_column_slice(2, 1, &[0.0, 1.0]);
        let model = km(a.clone(), b.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = 50;
        let u = Mat::from_fn(t - 1, 1, |_, _| rng.gen_range(-1.0..1.0));
        let mut obs = Mat::zeros(t, 2);
        obs[(0, 0)] = 1.0;
        for k in 0..t - 1 {
            let next = &a * obs.row(k).transpose() + &b * u[(k, 0)];
            obs.row_mut(k + 1).copy_from(&next.transpose());
        }
        assert!(eval_model_error(&model, &enc, &obs, &u).unwrap().mean < 1e-10);

        let zero = km(Mat::zeros(2, 2), Mat::zeros(2, 1));
        let e = eval_model_error(&zero, &enc, &obs, &u).unwrap();
        let expect = obs.rows(1, t - 1).norm_squared() / (t - 1) as f64;
        assert!((e.mean - expect).abs() < 1e-12);
        assert_eq!(e.per_step.len(), t - 1);

        let short = Mat::zeros(1, 2);
        assert!(matches!(
            eval_model_error(&model, &enc, &short, &Mat::zeros(0, 1)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn learned_q_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.csv");
        let mut p = LqrParams::new(3, 1, 200);
        p.q_raw[1] = -30.0;
        export_learned_q(&p, &path).unwrap();
        let (q, r) = read_learned_q(&path).unwrap();
        assert_eq!(q, p.q_diagonal());
        assert_eq!(r, p.r_diagonal());
        assert!(q.iter().all(|&v| v > 0.0));
        assert!((q[0] - 1.0).abs() < 1e-5);
    }
}
