//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Where the latent reference `z_ref` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZRef {
    /// Encoder output at the environment's goal observation.
    Goal,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub env: String,
    pub seed: u64,
    pub embedding: String,
    pub latent_dim: usize,
    /// Must match the environment when set.
    pub control_dim: Option<usize>,
    pub steps: usize,
    pub dare_iters: usize,
    pub dare_iters_eval: usize,
    pub eta: f64,
    pub tau_ema: f64,
    pub tau_critic: f64,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub lr_encoder: f64,
    pub lr_model: f64,
    pub lr_alpha: f64,
    pub init_alpha: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub warmup: usize,
    pub z_ref: ZRef,
    pub baseline: bool,
    pub baseline_q: Vec<f64>,
    pub baseline_r: Vec<f64>,
    pub baseline_cst: bool,
    pub baseline_data_steps: usize,
    pub baseline_train_steps: usize,
    pub perturb_scale: f64,
    pub checkpoint_every: usize,
    pub eval_episodes: usize,
    pub out: Option<PathBuf>,
    /// Record real elapsed milliseconds in the metrics file. Off by default
    /// so metrics stay byte-identical across runs.
    pub wall_clock: bool,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            env: "pendulum".into(),
            seed: 0,
            embedding: "mlp".into(),
            latent_dim: 50,
            control_dim: None,
            steps: 100_000,
            dare_iters: 5,
            dare_iters_eval: 200,
            eta: 0.1,
            tau_ema: 0.95,
            tau_critic: 0.99,
            lr_critic: 1e-3,
            lr_actor: 3e-4,
            lr_encoder: 3e-4,
            lr_model: 3e-4,
            lr_alpha: 1e-3,
            init_alpha: 0.1,
            batch_size: 128,
            gamma: 0.99,
            buffer_capacity: 1_000_000,
            warmup: 1000,
            z_ref: ZRef::Goal,
            baseline: false,
            baseline_q: vec![1.0],
            baseline_r: vec![1.0],
            baseline_cst: true,
            baseline_data_steps: 50_000,
            baseline_train_steps: 20_000,
            perturb_scale: 0.0,
            checkpoint_every: 10_000,
            eval_episodes: 10,
            out: None,
            wall_clock: false,
        }
    }
}

fn bad(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn parse<T: std::str::FromStr>(field: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| bad(field, format!("cannot parse `{v}`")))
}

fn parse_bool(field: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(field, format!("expected true/false, got `{v}`"))),
    }
}

fn parse_list(field: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|s| parse(field, s.trim())).collect()
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub const KEYS: &[&str] = &[
    "env",
    "seed",
    "embedding",
    "latent_dim",
    "control_dim",
    "steps",
    "dare_iters",
    "dare_iters_eval",
    "eta",
    "tau_ema",
    "tau_critic",
    "lr_critic",
    "lr_actor",
    "lr_encoder",
    "lr_model",
    "lr_alpha",
    "init_alpha",
    "batch_size",
    "gamma",
    "buffer_capacity",
    "warmup",
    "z_ref",
    "baseline",
    "baseline_q",
    "baseline_r",
    "baseline_cst",
    "baseline_data_steps",
    "baseline_train_steps",
    "perturb_scale",
    "checkpoint_every",
    "eval_episodes",
    "out",
    "wall_clock",
];

impl Config {
    /// Sets one field from its text form. Unknown keys are errors.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "env" => self.env = v.to_string(),
            "seed" => self.seed = parse(key, v)?,
            "embedding" => self.embedding = v.to_string(),
            "latent_dim" => self.latent_dim = parse(key, v)?,
            "control_dim" => {
                self.control_dim = if v == "auto" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "steps" => self.steps = parse(key, v)?,
            "dare_iters" => self.dare_iters = parse(key, v)?,
            "dare_iters_eval" => self.dare_iters_eval = parse(key, v)?,
            "eta" => self.eta = parse(key, v)?,
            "tau_ema" => self.tau_ema = parse(key, v)?,
            "tau_critic" => self.tau_critic = parse(key, v)?,
            "lr_critic" => self.lr_critic = parse(key, v)?,
            "lr_actor" => self.lr_actor = parse(key, v)?,
            "lr_encoder" => self.lr_encoder = parse(key, v)?,
            "lr_model" => self.lr_model = parse(key, v)?,
            "lr_alpha" => self.lr_alpha = parse(key, v)?,
            "init_alpha" => self.init_alpha = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "buffer_capacity" => self.buffer_capacity = parse(key, v)?,
            "warmup" => self.warmup = parse(key, v)?,
            "z_ref" => {
                self.z_ref = match v {
                    "goal" | "goal-encode" => ZRef::Goal,
                    "zero" => ZRef::Zero,
                    _ => return Err(bad(key, format!("expected goal or zero, got `{v}`"))),
                }
            }
            "baseline" => self.baseline = parse_bool(key, v)?,
            "baseline_q" => self.baseline_q = parse_list(key, v)?,
            "baseline_r" => self.baseline_r = parse_list(key, v)?,
            "baseline_cst" => self.baseline_cst = parse_bool(key, v)?,
            "baseline_data_steps" => self.baseline_data_steps = parse(key, v)?,
            "baseline_train_steps" => self.baseline_train_steps = parse(key, v)?,
            "perturb_scale" => self.perturb_scale = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "eval_episodes" => self.eval_episodes = parse(key, v)?,
            "out" => self.out = Some(PathBuf::from(v)),
            "wall_clock" => self.wall_clock = parse_bool(key, v)?,
            _ => return Err(bad(key, "unknown key")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "env" => self.env.clone(),
            "seed" => self.seed.to_string(),
            "embedding" => self.embedding.clone(),
            "latent_dim" => self.latent_dim.to_string(),
            "control_dim" => self
                .control_dim
                .map_or("auto".to_string(), |m| m.to_string()),
            "steps" => self.steps.to_string(),
            "dare_iters" => self.dare_iters.to_string(),
            "dare_iters_eval" => self.dare_iters_eval.to_string(),
            "eta" => self.eta.to_string(),
            "tau_ema" => self.tau_ema.to_string(),
            "tau_critic" => self.tau_critic.to_string(),
            "lr_critic" => self.lr_critic.to_string(),
            "lr_actor" => self.lr_actor.to_string(),
            "lr_encoder" => self.lr_encoder.to_string(),
            "lr_model" => self.lr_model.to_string(),
            "lr_alpha" => self.lr_alpha.to_string(),
            "init_alpha" => self.init_alpha.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "gamma" => self.gamma.to_string(),
            "buffer_capacity" => self.buffer_capacity.to_string(),
            "warmup" => self.warmup.to_string(),
            "z_ref" => match self.z_ref {
                ZRef::Goal => "goal".into(),
                ZRef::Zero => "zero".into(),
            },
            "baseline" => self.baseline.to_string(),
            "baseline_q" => list(&self.baseline_q),
            "baseline_r" => list(&self.baseline_r),
            "baseline_cst" => self.baseline_cst.to_string(),
            "baseline_data_steps" => self.baseline_data_steps.to_string(),
            "baseline_train_steps" => self.baseline_train_steps.to_string(),
            "perturb_scale" => self.perturb_scale.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "eval_episodes" => self.eval_episodes.to_string(),
            "out" => self
                .out
                .as_ref()
                .map_or(String::new(), |p| p.display().to_string()),
            "wall_clock" => self.wall_clock.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                bad(
                    &format!("line {}", lineno + 1),
                    format!("expected `key = value`, got `{line}`"),
                )
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            bad("config", format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_text(&text)
    }

    /// Every key in a fixed order; parses back to an identical config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let v = self.get(k).unwrap_or_default();
            if *k == "out" && v.is_empty() {
                continue;
            }
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if !crate::envs::registry().contains(&self.env) {
            return Err(bad("env", format!("unknown environment `{}`", self.env)));
        }
        if !crate::embedding::registry().contains(&self.embedding) {
            return Err(bad(
                "embedding",
                format!("unknown embedding `{}`", self.embedding),
            ));
        }
        let env = crate::envs::make(&self.env)?;
        if let Some(m) = self.control_dim {
            if m != env.control_dim() {
                return Err(bad(
                    "control_dim",
                    format!("{} has {} controls", self.env, env.control_dim()),
                ));
            }
        }
        let positive = [
            ("latent_dim", self.latent_dim),
            ("dare_iters", self.dare_iters),
            ("dare_iters_eval", self.dare_iters_eval),
            ("buffer_capacity", self.buffer_capacity),
        ];
        for (f, v) in positive {
            if v == 0 {
                return Err(bad(f, "must be at least 1"));
            }
        }
        if self.batch_size < 2 {
            return Err(bad("batch_size", "must be at least 2"));
        }
        let unit = [("tau_ema", self.tau_ema), ("tau_critic", self.tau_critic)];
        for (f, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(f, "must lie in [0, 1]"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(bad("gamma", "must lie in (0, 1)"));
        }
        let nonneg = [
            ("eta", self.eta),
            ("lr_critic", self.lr_critic),
            ("lr_actor", self.lr_actor),
            ("lr_encoder", self.lr_encoder),
            ("lr_model", self.lr_model),
            ("lr_alpha", self.lr_alpha),
            ("perturb_scale", self.perturb_scale),
        ];
        for (f, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(f, "must be finite and non-negative"));
            }
        }
        if !(self.init_alpha > 0.0 && self.init_alpha.is_finite()) {
            return Err(bad("init_alpha", "must be positive"));
        }
        for (f, v) in [("baseline_q", &self.baseline_q), ("baseline_r", &self.baseline_r)] {
            if v.is_empty() || v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(bad(f, "entries must be positive"));
            }
        }
        let expect = |f: &str, v: &[f64], n: usize| {
            if v.len() != 1 && v.len() != n {
                Err(bad(f, format!("expected 1 or {n} entries, got {}", v.len())))
            } else {
                Ok(())
            }
        };
        expect("baseline_q", &self.baseline_q, self.latent_dim)?;
        expect("baseline_r", &self.baseline_r, env.control_dim())?;
        if self.embedding == "identity" && self.latent_dim != env.obs_dim() {
            return Err(bad(
                "latent_dim",
                format!("identity embedding needs latent_dim = {}", env.obs_dim()),
            ));
        }
        Ok(())
    }

    /// Baseline diagonals broadcast to full length.
    pub fn baseline_diagonals(&self, control_dim: usize) -> (Vec<f64>, Vec<f64>) {
        let widen = |v: &[f64], n: usize| {
            if v.len() == 1 {
                vec![v[0]; n]
            } else {
                v.to_vec()
            }
        };
        (
            widen(&self.baseline_q, self.latent_dim),
            widen(&self.baseline_r, control_dim),
        )
    }

    /// `out`, else `$KOOPCTL_OUT/<env>-seed<seed>`, else `runs/<env>-seed<seed>`.
    pub fn out_dir(&self) -> PathBuf {
        if let Some(p) = &self.out {
            return p.clone();
        }
        let root = std::env::var_os("KOOPCTL_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        let tag = if self.baseline { "-baseline" } else { "" };
        root.join(format!("{}{tag}-seed{}", self.env, self.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = Config::default();
        c.set("eta", "0.25").unwrap();
        c.set("baseline_q", "1,2.5").unwrap();
        c.set("latent_dim", "2").unwrap();
        c.set("out", "/tmp/x").unwrap();
        let back = Config::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_rejected() {
        match Config::from_text("learning_rate = 3") {
            Err(Error::Config { field, .. }) => assert_eq!(field, "learning_rate"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = Config::from_text("# run\n\nseed = 7 # trailing\nenv = cartpole\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.env, "cartpole");
    }

    #[test]
    fn validation_names_field() {
        for (text, field) in [
            ("gamma = 1.0", "gamma"),
            ("env = cheetah", "env"),
            ("batch_size = 1", "batch_size"),
            ("control_dim = 3", "control_dim"),
            ("z_ref = far", "z_ref"),
            ("embedding = identity", "latent_dim"),
            ("seed = -1", "seed"),
        ] {
            match Config::from_text(text) {
                Err(Error::Config { field: f, .. }) => assert_eq!(f, field, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn missing_file_is_config_error() {
        assert!(matches!(
            Config::load(Path::new("/nonexistent/koopctl.cfg")),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn baseline_broadcast() {
        let mut c = Config::default();
        c.latent_dim = 3;
        assert_eq!(c.baseline_diagonals(1), (vec![1.0; 3], vec![1.0]));
    }
}
