//! Model-oriented two-stage Koopman control: identify the latent model from
//! random-action data, then design a converged LQR with fixed weights.

use rand::Rng as _;

use crate::cli::checkpoint::Checkpoint;
use crate::cli::config::{Config, ZRef};
use crate::embedding::{self, augment, contrastive_loss, Embedding, Which};
use crate::envs::{self, Environment};
use crate::error::{Error, Result};
use crate::koopman::{fit_least_squares, model_loss_value, KoopmanModel};
use crate::lqr::{self, LatentPolicy, LqrSolution};
use crate::ndmath::{Mat, Tape};
use crate::nn::Adam;
use crate::rl::buffer::{ReplayBuffer, Transition};
use crate::rl::eval::{evaluate, EvalEpisode, LatentController};
use crate::rl::train::{
    write_metrics, DirLock, MetricRow, TrainingRun, CHECKPOINT_FILE, METRICS_FILE,
};
use crate::rng;

/// Ridge added to the least-squares refit of `A, B`.
pub const REFIT_RIDGE: f64 = 1e-6;

/// Result of stage 1 plus the fixed stage-2 weights.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub encoder: Box<dyn Embedding>,
    pub model: KoopmanModel,
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    pub z_ref_mode: ZRef,
    /// 1 × n
    pub goal: Mat,
    pub dare_iters: usize,
    /// Mean stage-1 losses over the last 1000 updates.
    pub loss_cst: f64,
    pub loss_m: f64,
    /// One-step latent error of the refitted model on the stage-1 data.
    pub data_model_error: f64,
}

impl BaselineModel {
    pub fn z_ref(&self) -> Result<Mat> {
        match self.z_ref_mode {
            ZRef::Goal => self.encoder.encode(&self.goal, Which::Query),
            ZRef::Zero => Ok(Mat::zeros(1, self.model.latent_dim())),
        }
    }

    /// Converged LQR on `model` with the fixed weights.
    pub fn solve(&self, model: &KoopmanModel) -> Result<LqrSolution> {
        lqr::solve_dare_with(model, &self.q_diag, &self.r_diag, self.dare_iters)
    }

    /// Stage-2 controller on a (possibly perturbed) copy of the model. The
    /// raw LQR action is emitted; the environment clips it.
    pub fn controller(&self, model: &KoopmanModel) -> Result<LatentController<'_>> {
        let sol = self.solve(model)?;
        Ok(LatentController {
            encoder: self.encoder.as_ref(),
            policy: LatentPolicy {
                gain: sol.g,
                z_ref: self.z_ref()?,
                log_std: Mat::from_element(1, self.model.control_dim(), lqr::LOG_STD_MIN),
                squash: false,
            },
        })
    }

    pub fn save_into(&self, ck: &mut Checkpoint) {
        ck.put_meta("kind", "baseline");
        ck.put_meta("baseline.loss_cst", self.loss_cst);
        ck.put_meta("baseline.loss_m", self.loss_m);
        ck.put_meta("baseline.data_model_error", self.data_model_error);
        for (name, m) in self.encoder.named_tensors() {
            ck.put(&name, m);
        }
        ck.put("model.a", &self.model.a);
        ck.put("model.b", &self.model.b);
        ck.put("baseline.q", &Mat::from_column_slice(self.q_diag.len(), 1, &self.q_diag));
        ck.put("baseline.r", &Mat::from_column_slice(self.r_diag.len(), 1, &self.r_diag));
    }

    pub fn load(cfg: &Config, ck: &Checkpoint) -> Result<Self> {
        if ck.meta("kind")? != "baseline" {
            return Err(Error::Checkpoint("not a baseline checkpoint".into()));
        }
        let env = envs::make(&cfg.env)?;
        let mut b = Self::untrained(cfg, env.as_ref())?;
        for (name, m) in b.encoder.named_tensors_mut() {
            ck.restore(&name, m)?;
        }
        ck.restore("model.a", &mut b.model.a)?;
        ck.restore("model.b", &mut b.model.b)?;
        b.q_diag = ck.tensor("baseline.q")?.iter().cloned().collect();
        b.r_diag = ck.tensor("baseline.r")?.iter().cloned().collect();
        b.loss_cst = ck.meta_parse("baseline.loss_cst")?;
        b.loss_m = ck.meta_parse("baseline.loss_m")?;
        b.data_model_error = ck.meta_parse("baseline.data_model_error")?;
        Ok(b)
    }

    fn untrained(cfg: &Config, env: &dyn Environment) -> Result<Self> {
        let mut init = rng::stream(cfg.seed, rng::INIT);
        let encoder = embedding::registry().get(&cfg.embedding)?(env.obs_dim(), cfg.latent_dim, &mut init)?;
        let model = KoopmanModel::init(cfg.latent_dim, env.control_dim(), &mut init);
        let (q_diag, r_diag) = cfg.baseline_diagonals(env.control_dim());
        let goal = env.goal_observation();
        Ok(Self {
            encoder,
            model,
            q_diag,
            r_diag,
            z_ref_mode: cfg.z_ref,
            goal: Mat::from_row_slice(1, goal.len(), &goal),
            dare_iters: cfg.dare_iters_eval,
            loss_cst: f64::NAN,
            loss_m: f64::NAN,
            data_model_error: f64::NAN,
        })
    }
}

/// Uniform random actions, episodes reset as in training.
pub fn collect_random_data(cfg: &Config, env: &dyn Environment, steps: usize) -> Result<ReplayBuffer> {
    let mut env_rng = rng::stream(cfg.seed, rng::ENV);
    let mut act_rng = rng::stream(cfg.seed, rng::ACTOR_NOISE);
    let mut buf = ReplayBuffer::new(env.obs_dim(), env.control_dim(), steps.max(1));
    let mut s = env.reset(env_rng.gen());
    for _ in 0..steps {
        let obs = env.observe(&s);
        let u: Vec<f64> = (0..env.control_dim()).map(|_| act_rng.gen_range(-1.0..=1.0)).collect();
        let res = env.step(&s, &u)?;
        buf.push(Transition {
            x: obs,
            u,
            x_next: env.observe(&res.next_state),
            r: res.reward,
            d: res.terminal,
        })?;
        s = if res.done {
            env.reset(env_rng.gen())
        } else {
            res.next_state
        };
    }
    Ok(buf)
}

/// Stage 1. A trainable encoder is fitted with `ℒ_m` (gradient into the
/// encoder through `ψ(x)`) and optionally `ℒ_cst`; `A, B` are then refitted
/// by least squares on the encoded data.
pub fn fit_baseline(cfg: &Config) -> Result<BaselineModel> {
    cfg.validate()?;
    let env = envs::make(&cfg.env)?;
    let mut b = BaselineModel::untrained(cfg, env.as_ref())?;
    let data = collect_random_data(cfg, env.as_ref(), cfg.baseline_data_steps)?;
    if data.len() < cfg.batch_size {
        return Err(Error::usage(format!(
            "baseline needs at least batch_size = {} samples, got {}",
            cfg.batch_size,
            data.len()
        )));
    }

    if b.encoder.is_trainable() {
        let mut sampler = rng::stream(cfg.seed, rng::SAMPLER);
        let mut aug = rng::stream(cfg.seed, rng::AUGMENT);
        let enc_shapes: Vec<_> = b.encoder.query_params().iter().map(|p| p.shape()).collect();
        let mut cst_shapes = enc_shapes.clone();
        cst_shapes.push(b.encoder.similarity().shape());
        let mut opt_cst = Adam::new(cfg.lr_encoder, &cst_shapes);
        let mut opt_enc = Adam::new(cfg.lr_encoder, &enc_shapes);
        let mut opt_model = Adam::new(cfg.lr_model, &[b.model.a.shape(), b.model.b.shape()]);
        let window = 1000.min(cfg.baseline_train_steps).max(1);
        let (mut sum_cst, mut sum_m) = (0.0, 0.0);

        for it in 0..cfg.baseline_train_steps {
            let batch = data.sample(cfg.batch_size, &mut sampler)?;
            if cfg.baseline_cst {
                let x_q = augment(&batch.x, cfg.eta, &mut aug);
                let x_k = augment(&batch.x, cfg.eta, &mut aug);
                let mut tape = Tape::new();
                let enc = b.encoder.bind(&mut tape, true);
                let w = tape.param(b.encoder.similarity());
                let xv = tape.constant(x_q);
                let z_q = b.encoder.forward(&mut tape, &enc, xv)?;
                let z_k = tape.constant(b.encoder.encode(&x_k, Which::Key)?);
                let loss = contrastive_loss(&mut tape, z_q, z_k, w)?;
                let v = tape.scalar(loss);
                if !v.is_finite() {
                    return Err(Error::Divergence { loss: "loss_cst" });
                }
                tape.backward(loss)?;
                let mut g: Vec<Mat> = enc.iter().map(|&v| tape.grad_or_zeros(v)).collect();
                g.push(tape.grad_or_zeros(w));
                opt_cst.step(b.encoder.contrastive_params_mut(), &g);
                if it + window >= cfg.baseline_train_steps {
                    sum_cst += v;
                }
            }

            let mut tape = Tape::new();
            let enc = b.encoder.bind(&mut tape, true);
            let km = b.model.bind(&mut tape, true);
            let xv = tape.constant(batch.x.clone());
            let z = b.encoder.forward(&mut tape, &enc, xv)?;
            let u = tape.constant(batch.u.clone());
            let z_next = b.encoder.encode(&batch.x_next, Which::Query)?;
            let loss = km.model_loss(&mut tape, z, u, &z_next)?;
            let v = tape.scalar(loss);
            if !v.is_finite() {
                return Err(Error::Divergence { loss: "loss_m" });
            }
            tape.backward(loss)?;
            let g: Vec<Mat> = enc.iter().map(|&v| tape.grad_or_zeros(v)).collect();
            opt_enc.step(b.encoder.query_params_mut(), &g);
            let g = km.grads(&tape);
            opt_model.step(vec![&mut b.model.a, &mut b.model.b], &g);
            b.encoder.momentum_update(cfg.tau_ema);
            if it + window >= cfg.baseline_train_steps {
                sum_m += v;
            }
        }
        if cfg.baseline_train_steps > 0 {
            b.loss_cst = if cfg.baseline_cst { sum_cst / window as f64 } else { f64::NAN };
            b.loss_m = sum_m / window as f64;
        }
    }

    let all = data.all();
    let z = b.encoder.encode(&all.x, Which::Query)?;
    let z_next = b.encoder.encode(&all.x_next, Which::Query)?;
    b.model = fit_least_squares(&z, &all.u, &z_next, REFIT_RIDGE)?;
    b.data_model_error = model_loss_value(&b.model, &z, &all.u, &z_next)?;
    Ok(b)
}

/// Mean one-step latent error along an evaluation episode.
pub fn episode_model_error(encoder: &dyn Embedding, model: &KoopmanModel, ep: &EvalEpisode) -> Result<f64> {
    let n = ep.len();
    let obs_dim = encoder.obs_dim();
    let x = Mat::from_fn(n, obs_dim, |i, j| ep.observations[i][j]);
    let x_next = Mat::from_fn(n, obs_dim, |i, j| ep.observations[i + 1][j]);
    let m = model.control_dim();
    let u = Mat::from_fn(n, m, |i, j| ep.controls[i][j]);
    let z = encoder.encode(&x, Which::Query)?;
    let z_next = encoder.encode(&x_next, Which::Query)?;
    model_loss_value(model, &z, &u, &z_next)
}

/// Both stages plus evaluation. The stage-2 model is perturbed at
/// `perturb_scale` when that is positive.
pub fn train_two_stage_baseline(cfg: &Config) -> Result<TrainingRun> {
    let out = cfg.out_dir();
    let _lock = DirLock::acquire(&out)?;
    let b = fit_baseline(cfg)?;
    let env = envs::make(&cfg.env)?;
    let mut prng = rng::stream(cfg.seed, rng::PERTURB);
    let model = b.model.perturbed(cfg.perturb_scale, &mut prng);
    let ctrl = b.controller(&model)?;
    let episodes = evaluate(env.as_ref(), &ctrl, cfg.seed, cfg.eval_episodes)?;
    let mut rows = Vec::with_capacity(episodes.len());
    for (k, ep) in episodes.iter().enumerate() {
        rows.push(MetricRow {
            step: cfg.baseline_train_steps,
            episode: k,
            ret: ep.ret,
            loss_sac: f64::NAN,
            loss_cst: b.loss_cst,
            loss_m: b.loss_m,
            model_error: episode_model_error(b.encoder.as_ref(), &b.model, ep)?,
            wall_ms: 0.0,
        });
    }
    write_metrics(&out.join(METRICS_FILE), &rows)?;
    std::fs::write(out.join("config.txt"), cfg.to_text())
        .map_err(|e| Error::io(out.join("config.txt"), e))?;

    let mut ck = Checkpoint::new();
    for line in cfg.to_text().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            ck.put_meta(&format!("config.{k}"), v);
        }
    }
    b.save_into(&mut ck);
    let ck_path = out.join(CHECKPOINT_FILE);
    ck.save(&ck_path)?;
    Ok(TrainingRun {
        out,
        rows,
        checkpoint: ck_path,
    })
}
