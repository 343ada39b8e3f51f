use rand::Rng as _;

use crate::embedding::{Embedding, Which};
use crate::envs::{EnvState, Environment};
use crate::error::Result;
use crate::lqr::LatentPolicy;
use crate::ndmath::Mat;
use crate::rng;

/// A deterministic feedback law on observations.
pub trait Controller {
    fn act(&self, obs: &[f64]) -> Result<Vec<f64>>;
}

/// Encoder followed by the latent linear feedback.
pub struct LatentController<'a> {
    pub encoder: &'a dyn Embedding,
    pub policy: LatentPolicy,
}

impl Controller for LatentController<'_> {
    fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let z = self
            .encoder
            .encode(&Mat::from_row_slice(1, obs.len(), obs), Which::Query)?;
        Ok(self.policy.act_deterministic(&z))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalEpisode {
    pub ret: f64,
    /// States visited, starting with the reset state.
    pub states: Vec<EnvState>,
    pub controls: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
}

impl EvalEpisode {
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }
}

/// Reset seeds for evaluation episodes, drawn from the `eval` stream.
pub fn eval_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    let mut r = rng::stream(seed, rng::EVAL);
    (0..episodes).map(|_| r.gen()).collect()
}

/// One full episode under `ctrl` from `reset(seed)`.
pub fn rollout(env: &dyn Environment, ctrl: &dyn Controller, seed: u64) -> Result<EvalEpisode> {
    let mut s = env.reset(seed);
    let mut ep = EvalEpisode {
        ret: 0.0,
        states: vec![s.clone()],
        controls: Vec::new(),
        observations: vec![env.observe(&s)],
    };
    loop {
        let u = ctrl.act(ep.observations.last().expect("non-empty"))?;
        let res = env.step(&s, &u)?;
        ep.ret += res.reward;
        ep.controls.push(u);
        s = res.next_state;
        ep.observations.push(env.observe(&s));
        ep.states.push(s.clone());
        if res.done {
            return Ok(ep);
        }
    }
}

/// Deterministic evaluation over `episodes` seeded resets.
pub fn evaluate(
    env: &dyn Environment,
    ctrl: &dyn Controller,
    seed: u64,
    episodes: usize,
) -> Result<Vec<EvalEpisode>> {
    eval_seeds(seed, episodes)
        .into_iter()
        .map(|s| rollout(env, ctrl, s))
        .collect()
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
