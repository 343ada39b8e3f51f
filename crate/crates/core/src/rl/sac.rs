//! The task-oriented Koopman agent: contrastive encoder, latent model,
//! differentiable LQR actor and soft actor-critic machinery.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::cli::checkpoint::Checkpoint;
use crate::cli::config::{Config, ZRef};
use crate::embedding::{self, augment, contrastive_loss, Embedding, Which};
use crate::error::{Error, Result};
use crate::koopman::{BoundKoopman, KoopmanModel};
use crate::lqr::{self, BoundLqr, LatentPolicy, LqrParams};
use crate::ndmath::{Mat, Tape, Var};
use crate::nn::{Adam, BoundMlp, Mlp};
use crate::rl::buffer::Batch;

pub const CRITIC_HIDDEN: usize = 64;

/// Scalars that shape an update, taken from the run config.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    pub gamma: f64,
    pub tau_ema: f64,
    pub tau_critic: f64,
    pub eta: f64,
    pub batch_size: usize,
    pub dare_iters: usize,
    pub z_ref: ZRef,
    pub target_entropy: f64,
}

/// One Adam per parameter group. The encoder appears in several groups;
/// each keeps its own moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    /// Both critics, first critic's layers then the second's.
    pub critic: Adam,
    /// Query encoder, driven by the critic loss.
    pub critic_encoder: Adam,
    /// `q_raw, r_raw, log_std, A, B`, then the query encoder.
    pub actor: Adam,
    /// Query encoder, then `W`.
    pub contrastive: Adam,
    /// `A, B`.
    pub model: Adam,
    pub alpha: Adam,
}

impl Optimizers {
    fn groups(&self) -> [(&'static str, &Adam); 6] {
        [
            ("critic", &self.critic),
            ("critic_encoder", &self.critic_encoder),
            ("actor", &self.actor),
            ("contrastive", &self.contrastive),
            ("model", &self.model),
            ("alpha", &self.alpha),
        ]
    }

    fn groups_mut(&mut self) -> [(&'static str, &mut Adam); 6] {
        [
            ("critic", &mut self.critic),
            ("critic_encoder", &mut self.critic_encoder),
            ("actor", &mut self.actor),
            ("contrastive", &mut self.contrastive),
            ("model", &mut self.model),
            ("alpha", &mut self.alpha),
        ]
    }
}

/// Scalar losses of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub critic: f64,
    pub actor: f64,
    pub cst: f64,
    pub model: f64,
    pub alpha: f64,
}

impl LossReport {
    /// `ℒ_sac` as logged: critic regression plus actor objective.
    pub fn sac(&self) -> f64 {
        self.critic + self.actor
    }
}

/// Every trainable tensor of the agent as a tape leaf.
#[derive(Debug, Clone)]
pub struct BoundAgent {
    pub encoder: Vec<Var>,
    pub similarity: Var,
    pub model: BoundKoopman,
    pub lqr: BoundLqr,
    pub log_std: Var,
    pub critics: [BoundMlp; 2],
    pub log_alpha: Var,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub encoder: Box<dyn Embedding>,
    pub model: KoopmanModel,
    pub lqr: LqrParams,
    /// 1 × m
    pub log_std: Mat,
    pub critics: [Mlp; 2],
    pub targets: [Mlp; 2],
    /// 1 × 1, `α = exp(log_alpha)`.
    pub log_alpha: Mat,
    /// 1 × n goal observation.
    pub goal: Mat,
    pub opt: Optimizers,
    pub hp: Hyper,
}

fn critic_sizes(d: usize, m: usize) -> [usize; 4] {
    [d + m, CRITIC_HIDDEN, CRITIC_HIDDEN, 1]
}

impl Agent {
    pub fn new(
        cfg: &Config,
        obs_dim: usize,
        control_dim: usize,
        goal: &[f64],
        rng: &mut crate::rng::Rng,
    ) -> Result<Self> {
        let (d, m) = (cfg.latent_dim, control_dim);
        let encoder = embedding::registry().get(&cfg.embedding)?(obs_dim, d, rng)?;
        let model = KoopmanModel::init(d, m, rng);
        let critics = [
            Mlp::new(&critic_sizes(d, m), rng),
            Mlp::new(&critic_sizes(d, m), rng),
        ];
        let lqr = LqrParams::new(d, m, cfg.dare_iters);
        let log_std = Mat::zeros(1, m);
        let log_alpha = Mat::from_element(1, 1, cfg.init_alpha.ln());

        let enc_params = encoder.query_params();
        let critic_params: Vec<&Mat> = critics.iter().flat_map(|c| c.params()).collect();
        let mut actor_params = vec![&lqr.q_raw, &lqr.r_raw, &log_std, &model.a, &model.b];
        actor_params.extend(enc_params.iter().copied());
        let mut cst_params = enc_params.clone();
        cst_params.push(encoder.similarity());
        let opt = Optimizers {
            critic: Adam::for_params(cfg.lr_critic, &critic_params),
            critic_encoder: Adam::for_params(cfg.lr_encoder, &enc_params),
            actor: Adam::for_params(cfg.lr_actor, &actor_params),
            contrastive: Adam::for_params(cfg.lr_encoder, &cst_params),
            model: Adam::for_params(cfg.lr_model, &[&model.a, &model.b]),
            alpha: Adam::for_params(cfg.lr_alpha, &[&log_alpha]),
        };
        drop(enc_params);
        Ok(Self {
            targets: critics.clone(),
            critics,
            encoder,
            model,
            lqr,
            log_std,
            log_alpha,
            goal: Mat::from_row_slice(1, goal.len(), goal),
            opt,
            hp: Hyper {
                gamma: cfg.gamma,
                tau_ema: cfg.tau_ema,
                tau_critic: cfg.tau_critic,
                eta: cfg.eta,
                batch_size: cfg.batch_size,
                dare_iters: cfg.dare_iters,
                z_ref: cfg.z_ref,
                target_entropy: -(m as f64),
            },
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.model.latent_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.model.control_dim()
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha[(0, 0)].exp()
    }

    /// `1 × d` latent reference.
    pub fn z_ref(&self) -> Result<Mat> {
        match self.hp.z_ref {
            ZRef::Goal => self.encoder.encode(&self.goal, Which::Query),
            ZRef::Zero => Ok(Mat::zeros(1, self.latent_dim())),
        }
    }

    pub fn encode(&self, x: &Mat) -> Result<Mat> {
        self.encoder.encode(x, Which::Query)
    }

    /// Frozen controller for rollouts under the current parameters, using
    /// the training unroll depth.
    pub fn policy(&self) -> Result<LatentPolicy> {
        self.policy_for(&self.model)
    }

    /// Same controller built on a substitute latent model.
    pub fn policy_for(&self, model: &KoopmanModel) -> Result<LatentPolicy> {
        let sol = lqr::solve_dare(model, &self.lqr)?;
        Ok(LatentPolicy {
            gain: sol.g,
            z_ref: self.z_ref()?,
            log_std: self.log_std.clone(),
            squash: true,
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundAgent {
        BoundAgent {
            encoder: self.encoder.bind(tape, true),
            similarity: tape.leaf(self.encoder.similarity().clone(), true),
            model: self.model.bind(tape, true),
            lqr: self.lqr.bind(tape, true),
            log_std: tape.leaf(self.log_std.clone(), true),
            critics: [
                self.critics[0].bind(tape, true),
                self.critics[1].bind(tape, true),
            ],
            log_alpha: tape.leaf(self.log_alpha.clone(), true),
        }
    }

    /// Soft Bellman targets `r + γ(1 − d)(min Q̄(z', u') − α log π(u'|z'))`,
    /// computed entirely off the tape with the target critics.
    pub fn critic_targets<R: Rng>(&self, batch: &Batch, rng: &mut R) -> Result<Mat> {
        let z_next = self.encode(&batch.x_next)?;
        let sol = lqr::solve_dare(&self.model, &self.lqr)?;
        let z_ref = self.z_ref()?;
        let n = batch.len();
        let m = self.control_dim();
        let eps = Mat::from_fn(n, m, |_, _| rng.sample(StandardNormal));
        let mut tape = Tape::new();
        let g = tape.constant(sol.g);
        let zv = tape.constant(z_next.clone());
        let zr = tape.constant(z_ref);
        let mean = lqr::action_mean_on_tape(&mut tape, g, zv, zr)?;
        let ls = tape.constant(self.log_std.clone());
        let (u, logp) = lqr::policy_sample_on_tape(&mut tape, mean, ls, &eps)?;
        let input = concat(&z_next, tape.value(u));
        let q1 = self.targets[0].forward(&input);
        let q2 = self.targets[1].forward(&input);
        let alpha = self.alpha();
        let logp = tape.value(logp);
        Ok(Mat::from_fn(n, 1, |i, _| {
            let soft = q1[(i, 0)].min(q2[(i, 0)]) - alpha * logp[(i, 0)];
            critic_target(batch.r[(i, 0)], batch.d[(i, 0)] != 0.0, soft, self.hp.gamma)
        }))
    }

    /// `Σ_i mean((Q_i(ψ(x), u) − y)²)`, encoder on the tape.
    pub fn critic_loss(&self, tape: &mut Tape, bound: &BoundAgent, batch: &Batch, y: &Mat) -> Result<Var> {
        let x = tape.constant(batch.x.clone());
        let z = self.encoder.forward(tape, &bound.encoder, x)?;
        let u = tape.constant(batch.u.clone());
        let input = tape.concat_cols(z, u)?;
        let yv = tape.constant(y.clone());
        let mut total = None;
        for c in &bound.critics {
            let q = c.forward(tape, input)?;
            let diff = tape.sub(q, yv)?;
            let sq = tape.square(diff);
            let l = tape.mean(sq);
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
        Ok(total.expect("two critics"))
    }

    /// `mean(α log π(u|z) − min_i Q_i(z, u))` with `u` drawn by
    /// reparameterisation from the LQR policy. The encoder is reached only
    /// through the policy; the critics see `z` as a constant. Returns the loss and the
    /// per-sample log-probabilities.
    pub fn actor_loss(&self, tape: &mut Tape, bound: &BoundAgent, batch: &Batch, eps: &Mat) -> Result<(Var, Var)> {
        let x = tape.constant(batch.x.clone());
        let z = self.encoder.forward(tape, &bound.encoder, x)?;
        let (q_diag, r_diag) = bound.lqr.diagonals(tape);
        let sol = lqr::dare_on_tape(tape, bound.model.a, bound.model.b, q_diag, r_diag, self.hp.dare_iters)?;
        let z_ref = tape.constant(self.z_ref()?);
        let mean = lqr::action_mean_on_tape(tape, sol.g, z, z_ref)?;
        let (u, logp) = lqr::policy_sample_on_tape(tape, mean, bound.log_std, eps)?;
        let state = tape.detach(z);
        let input = tape.concat_cols(state, u)?;
        let q1 = bound.critics[0].forward(tape, input)?;
        let q2 = bound.critics[1].forward(tape, input)?;
        let q = tape.minimum(q1, q2)?;
        let scaled = tape.scale(logp, self.alpha());
        let obj = tape.sub(scaled, q)?;
        Ok((tape.mean(obj), logp))
    }

    /// InfoNCE between the query encoding of one augmentation of `x` and
    /// the key encoding of another.
    pub fn contrastive_term(&self, tape: &mut Tape, bound: &BoundAgent, x_q: &Mat, x_k: &Mat) -> Result<Var> {
        let xv = tape.constant(x_q.clone());
        let z_q = self.encoder.forward(tape, &bound.encoder, xv)?;
        let z_k = tape.constant(self.encoder.encode(x_k, Which::Key)?);
        contrastive_loss(tape, z_q, z_k, bound.similarity)
    }

    /// `mean ‖ψ(x') − Aψ(x) − Bu‖²` with both encodings as constants.
    pub fn model_term(&self, tape: &mut Tape, bound: &BoundAgent, batch: &Batch) -> Result<Var> {
        let z = tape.constant(self.encode(&batch.x)?);
        let z_next = self.encode(&batch.x_next)?;
        let u = tape.constant(batch.u.clone());
        bound.model.model_loss(tape, z, u, &z_next)
    }

    /// One pass of critic, actor, contrastive and model updates followed by
    /// the key-encoder and critic-target averages and the temperature step.
    pub fn update<R1: Rng, R2: Rng>(
        &mut self,
        batch: &Batch,
        actor_rng: &mut R1,
        augment_rng: &mut R2,
    ) -> Result<LossReport> {
        let mut report = LossReport::default();
        let check = |v: f64, name: &'static str| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Divergence { loss: name })
            }
        };
        let diverged = |e: Error| match e {
            Error::RiccatiDiverged { .. } | Error::Singular { .. } => Error::Divergence { loss: "loss_sac" },
            other => other,
        };

        // critics, and the encoder through them
        let y = self.critic_targets(batch, actor_rng).map_err(diverged)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let loss = self.critic_loss(&mut tape, &bound, batch, &y)?;
        report.critic = check(tape.scalar(loss), "loss_sac")?;
        tape.backward(loss)?;
        let g_critic: Vec<Mat> = bound.critics.iter().flat_map(|c| c.grads(&tape)).collect();
        let g_enc = grads(&tape, &bound.encoder);
        self.opt.critic.step(
            self.critics.iter_mut().flat_map(|c| c.params_mut()).collect(),
            &g_critic,
        );
        self.opt.critic_encoder.step(self.encoder.query_params_mut(), &g_enc);

        // actor group Ω
        let eps = Mat::from_fn(batch.len(), self.control_dim(), |_, _| actor_rng.sample(StandardNormal));
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let (loss, logp) = self.actor_loss(&mut tape, &bound, batch, &eps).map_err(diverged)?;
        report.actor = check(tape.scalar(loss), "loss_sac")?;
        let log_probs = tape.value(logp).clone();
        tape.backward(loss)?;
        let mut g = vec![
            tape.grad_or_zeros(bound.lqr.q_raw),
            tape.grad_or_zeros(bound.lqr.r_raw),
            tape.grad_or_zeros(bound.log_std),
            tape.grad_or_zeros(bound.model.a),
            tape.grad_or_zeros(bound.model.b),
        ];
        g.extend(grads(&tape, &bound.encoder));
        {
            let mut params = vec![
                &mut self.lqr.q_raw,
                &mut self.lqr.r_raw,
                &mut self.log_std,
                &mut self.model.a,
                &mut self.model.b,
            ];
            params.extend(self.encoder.query_params_mut());
            self.opt.actor.step(params, &g);
        }

        // contrastive: query encoder and W
        let x_q = augment(&batch.x, self.hp.eta, augment_rng);
        let x_k = augment(&batch.x, self.hp.eta, augment_rng);
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let loss = self.contrastive_term(&mut tape, &bound, &x_q, &x_k)?;
        report.cst = check(tape.scalar(loss), "loss_cst")?;
        tape.backward(loss)?;
        let mut g = grads(&tape, &bound.encoder);
        g.push(tape.grad_or_zeros(bound.similarity));
        self.opt
            .contrastive
            .step(self.encoder.contrastive_params_mut(), &g);

        // latent model: A, B only
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let loss = self.model_term(&mut tape, &bound, batch)?;
        report.model = check(tape.scalar(loss), "loss_m")?;
        tape.backward(loss)?;
        let g = [tape.grad_or_zeros(bound.model.a), tape.grad_or_zeros(bound.model.b)];
        self.opt.model.step(vec![&mut self.model.a, &mut self.model.b], &g);

        self.encoder.momentum_update(self.hp.tau_ema);
        for (t, c) in self.targets.iter_mut().zip(&self.critics) {
            t.blend_from(c, self.hp.tau_critic);
        }
        report.alpha = update_temperature(
            &mut self.log_alpha,
            &mut self.opt.alpha,
            &log_probs,
            self.hp.target_entropy,
        );
        if !self.model.is_finite() {
            return Err(Error::Divergence { loss: "loss_m" });
        }
        Ok(report)
    }

    /// Named tensors in a fixed order: parameters, targets, then optimiser
    /// moments.
    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = self.encoder.named_tensors();
        out.push(("model.a".into(), &self.model.a));
        out.push(("model.b".into(), &self.model.b));
        out.push(("lqr.q_raw".into(), &self.lqr.q_raw));
        out.push(("lqr.r_raw".into(), &self.lqr.r_raw));
        out.push(("actor.log_std".into(), &self.log_std));
        out.push(("alpha.log".into(), &self.log_alpha));
        for (tag, nets) in [("critic", &self.critics), ("target", &self.targets)] {
            for (i, net) in nets.iter().enumerate() {
                for (k, p) in net.params().into_iter().enumerate() {
                    out.push((format!("{tag}{i}.{k}"), p));
                }
            }
        }
        for (group, adam) in self.opt.groups() {
            for (k, s) in adam.state().into_iter().enumerate() {
                out.push((format!("opt.{group}.{k}"), s));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut out = self.encoder.named_tensors_mut();
        out.push(("model.a".into(), &mut self.model.a));
        out.push(("model.b".into(), &mut self.model.b));
        out.push(("lqr.q_raw".into(), &mut self.lqr.q_raw));
        out.push(("lqr.r_raw".into(), &mut self.lqr.r_raw));
        out.push(("actor.log_std".into(), &mut self.log_std));
        out.push(("alpha.log".into(), &mut self.log_alpha));
        for (tag, nets) in [("critic", &mut self.critics), ("target", &mut self.targets)] {
            for (i, net) in nets.iter_mut().enumerate() {
                for (k, p) in net.params_mut().into_iter().enumerate() {
                    out.push((format!("{tag}{i}.{k}"), p));
                }
            }
        }
        for (group, adam) in self.opt.groups_mut() {
            for (k, s) in adam.state_mut().into_iter().enumerate() {
                out.push((format!("opt.{group}.{k}"), s));
            }
        }
        out
    }

    pub fn save_into(&self, ck: &mut Checkpoint) {
        for (group, adam) in self.opt.groups() {
            ck.put_meta(&format!("opt.{group}.t"), adam.t);
        }
        for (name, m) in self.tensors() {
            ck.put(&name, m);
        }
    }

    /// Restores every tensor and optimiser step count. The agent must have
    /// been built from the same config.
    pub fn load_from(&mut self, ck: &Checkpoint) -> Result<()> {
        for (group, adam) in self.opt.groups_mut() {
            adam.t = ck.meta_parse(&format!("opt.{group}.t"))?;
        }
        for (name, m) in self.tensors_mut() {
            ck.restore(&name, m)?;
        }
        Ok(())
    }
}

fn grads(tape: &Tape, vars: &[Var]) -> Vec<Mat> {
    vars.iter().map(|&v| tape.grad_or_zeros(v)).collect()
}

fn concat(a: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// `r + γ(1 − d)·soft_value`; `soft_value` is `min Q̄ − α log π` at the next
/// state.
pub fn critic_target(r: f64, done: bool, soft_value: f64, gamma: f64) -> f64 {
    if done {
        r
    } else {
        r + gamma * soft_value
    }
}

/// Gradient of `exp(log_alpha)·mean(−log π − H)` with respect to `log_alpha`.
pub fn temperature_grad(log_alpha: f64, log_probs: &Mat, target_entropy: f64) -> f64 {
    let n = log_probs.len().max(1) as f64;
    let gap = log_probs.iter().map(|lp| -lp - target_entropy).sum::<f64>() / n;
    log_alpha.exp() * gap
}

/// One Adam step on the temperature. Returns the loss value.
pub fn update_temperature(log_alpha: &mut Mat, opt: &mut Adam, log_probs: &Mat, target_entropy: f64) -> f64 {
    let g = temperature_grad(log_alpha[(0, 0)], log_probs, target_entropy);
    let n = log_probs.len().max(1) as f64;
    let loss = log_alpha[(0, 0)].exp() * log_probs.iter().map(|lp| -lp - target_entropy).sum::<f64>() / n;
    opt.step(vec![log_alpha], &[Mat::from_element(1, 1, g)]);
    loss
}
