//! The end-to-end loop: act with the current LQR policy, store the
//! transition, run one update per step after warmup, log per episode.

use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;

use crate::cli::checkpoint::Checkpoint;
use crate::cli::config::Config;
use crate::envs::{self, EnvState, Environment};
use crate::error::{Error, Result};
use crate::koopman::model_loss_value;
use crate::ndmath::Mat;
use crate::rl::buffer::{ReplayBuffer, Transition};
use crate::rl::sac::Agent;
use crate::rng::{self, Rng};

pub const METRICS_HEADER: &str = "step,episode,return,loss_sac,loss_cst,loss_m,model_error,wall_ms";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint";
pub const CRASH_FILE: &str = "crash";
pub const LOCK_FILE: &str = ".lock";

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub episode: usize,
    pub ret: f64,
    pub loss_sac: f64,
    pub loss_cst: f64,
    pub loss_m: f64,
    pub model_error: f64,
    pub wall_ms: f64,
}

impl MetricRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.episode,
            fmt_f64(self.ret),
            fmt_f64(self.loss_sac),
            fmt_f64(self.loss_cst),
            fmt_f64(self.loss_m),
            fmt_f64(self.model_error),
            self.wall_ms as u64
        )
    }

    fn to_array(self) -> [f64; 8] {
        [
            self.step as f64,
            self.episode as f64,
            self.ret,
            self.loss_sac,
            self.loss_cst,
            self.loss_m,
            self.model_error,
            self.wall_ms,
        ]
    }

    fn from_slice(v: &[f64]) -> Self {
        Self {
            step: v[0] as usize,
            episode: v[1] as usize,
            ret: v[2],
            loss_sac: v[3],
            loss_cst: v[4],
            loss_m: v[5],
            model_error: v[6],
            wall_ms: v[7],
        }
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Per-component generators that advance during training.
#[derive(Debug, Clone, PartialEq)]
pub struct Rngs {
    pub env: Rng,
    pub actor: Rng,
    pub sampler: Rng,
    pub augment: Rng,
}

impl Rngs {
    pub fn new(seed: u64) -> Self {
        Self {
            env: rng::stream(seed, rng::ENV),
            actor: rng::stream(seed, rng::ACTOR_NOISE),
            sampler: rng::stream(seed, rng::SAMPLER),
            augment: rng::stream(seed, rng::AUGMENT),
        }
    }

    fn named(&self) -> [(&'static str, &Rng); 4] {
        [
            ("rng.env", &self.env),
            ("rng.actor", &self.actor),
            ("rng.sampler", &self.sampler),
            ("rng.augment", &self.augment),
        ]
    }
}

/// Running sums for the episode in progress.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct EpisodeAcc {
    ret: f64,
    len: usize,
    sac: f64,
    cst: f64,
    m: f64,
    updates: usize,
}

impl EpisodeAcc {
    fn to_mat(self) -> Mat {
        Mat::from_row_slice(
            1,
            6,
            &[self.ret, self.len as f64, self.sac, self.cst, self.m, self.updates as f64],
        )
    }

    fn from_mat(m: &Mat) -> Self {
        Self {
            ret: m[0],
            len: m[1] as usize,
            sac: m[2],
            cst: m[3],
            m: m[4],
            updates: m[5] as usize,
        }
    }
}

pub struct Trainer {
    pub cfg: Config,
    pub env: Box<dyn Environment>,
    pub agent: Agent,
    pub buffer: ReplayBuffer,
    pub rngs: Rngs,
    pub state: EnvState,
    /// Environment steps taken so far.
    pub step: usize,
    /// Completed episodes.
    pub episode: usize,
    pub rows: Vec<MetricRow>,
    acc: EpisodeAcc,
    clock: Instant,
    wall_offset_ms: f64,
}

impl Trainer {
    pub fn new(cfg: &Config) -> Result<Self> {
        cfg.validate()?;
        let env = envs::make(&cfg.env)?;
        let mut init = rng::stream(cfg.seed, rng::INIT);
        let agent = Agent::new(
            cfg,
            env.obs_dim(),
            env.control_dim(),
            &env.goal_observation(),
            &mut init,
        )?;
        let mut rngs = Rngs::new(cfg.seed);
        let state = env.reset(rngs.env.gen());
        Ok(Self {
            buffer: ReplayBuffer::new(env.obs_dim(), env.control_dim(), cfg.buffer_capacity),
            cfg: cfg.clone(),
            env,
            agent,
            rngs,
            state,
            step: 0,
            episode: 0,
            rows: Vec::new(),
            acc: EpisodeAcc::default(),
            clock: Instant::now(),
            wall_offset_ms: 0.0,
        })
    }

    fn wall_ms(&self) -> f64 {
        if self.cfg.wall_clock {
            (self.wall_offset_ms + self.clock.elapsed().as_secs_f64() * 1e3).floor()
        } else {
            0.0
        }
    }

    /// One environment step plus, after warmup, one update. Returns the
    /// metric row when an episode finished.
    pub fn step_once(&mut self) -> Result<Option<MetricRow>> {
        let obs = self.env.observe(&self.state);
        let m = self.env.control_dim();
        let u: Vec<f64> = if self.step < self.cfg.warmup {
            (0..m).map(|_| self.rngs.actor.gen_range(-1.0..=1.0)).collect()
        } else {
            let policy = self.agent.policy().map_err(|e| match e {
                Error::RiccatiDiverged { .. } | Error::Singular { .. } => {
                    Error::Divergence { loss: "loss_sac" }
                }
                other => other,
            })?;
            let z = self.agent.encode(&Mat::from_row_slice(1, obs.len(), &obs))?;
            policy.act_stochastic(&z, &mut self.rngs.actor)
        };
        let res = self.env.step(&self.state, &u)?;
        let next_obs = self.env.observe(&res.next_state);
        self.buffer.push(Transition {
            x: obs,
            u,
            x_next: next_obs,
            r: res.reward,
            d: res.terminal,
        })?;
        self.step += 1;
        self.acc.ret += res.reward;
        self.acc.len += 1;

        if self.step > self.cfg.warmup && self.buffer.len() >= self.cfg.batch_size {
            let batch = self.buffer.sample(self.cfg.batch_size, &mut self.rngs.sampler)?;
            let rep = self
                .agent
                .update(&batch, &mut self.rngs.actor, &mut self.rngs.augment)?;
            self.acc.sac += rep.sac();
            self.acc.cst += rep.cst;
            self.acc.m += rep.model;
            self.acc.updates += 1;
        }

        if res.done {
            let row = self.finish_episode()?;
            self.state = self.env.reset(self.rngs.env.gen());
            Ok(Some(row))
        } else {
            self.state = res.next_state;
            Ok(None)
        }
    }

    fn finish_episode(&mut self) -> Result<MetricRow> {
        let traj = self.buffer.latest(self.acc.len);
        let z = self.agent.encode(&traj.x)?;
        let z_next = self.agent.encode(&traj.x_next)?;
        let model_error = model_loss_value(&self.agent.model, &z, &traj.u, &z_next)?;
        let per = |s: f64| {
            if self.acc.updates == 0 {
                f64::NAN
            } else {
                s / self.acc.updates as f64
            }
        };
        let row = MetricRow {
            step: self.step,
            episode: self.episode,
            ret: self.acc.ret,
            loss_sac: per(self.acc.sac),
            loss_cst: per(self.acc.cst),
            loss_m: per(self.acc.m),
            model_error,
            wall_ms: self.wall_ms(),
        };
        self.rows.push(row);
        self.episode += 1;
        self.acc = EpisodeAcc::default();
        Ok(row)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.put_meta("kind", "task");
        for line in self.cfg.to_text().lines() {
            if let Some((k, v)) = line.split_once(" = ") {
                ck.put_meta(&format!("config.{k}"), v);
            }
        }
        ck.put_meta("step", self.step);
        ck.put_meta("episode", self.episode);
        ck.put_meta("env.t", self.state.t);
        ck.put_meta("buffer.cursor", self.buffer.to_tensors().1);
        ck.put_meta("wall_ms", self.wall_ms());
        for (name, r) in self.rngs.named() {
            ck.put_meta(name, rng::encode_state(r));
        }
        self.agent.save_into(&mut ck);
        ck.put("env.x", &Mat::from_row_slice(1, self.state.x.len(), &self.state.x));
        ck.put("episode.acc", &self.acc.to_mat());
        let (bt, _) = self.buffer.to_tensors();
        for (name, t) in ["buffer.x", "buffer.u", "buffer.x_next", "buffer.rd"].iter().zip(&bt) {
            ck.put(name, t);
        }
        let flat: Vec<f64> = self.rows.iter().flat_map(|r| r.to_array()).collect();
        ck.put("metrics", &Mat::from_row_slice(self.rows.len(), 8, &flat));
        ck
    }

    /// Rebuilds a trainer from a checkpoint. `steps`, `out`, `wall_clock`,
    /// `checkpoint_every` and `eval_episodes` come from `overrides` when
    /// given; everything else from the stored config.
    pub fn from_checkpoint(ck: &Checkpoint, overrides: Option<&Config>) -> Result<Self> {
        let mut cfg = config_from_checkpoint(ck)?;
        if let Some(o) = overrides {
            cfg.steps = o.steps;
            cfg.out = o.out.clone();
            cfg.wall_clock = o.wall_clock;
            cfg.checkpoint_every = o.checkpoint_every;
            cfg.eval_episodes = o.eval_episodes;
        }
        if ck.meta("kind")? != "task" {
            return Err(Error::Checkpoint("not a task-oriented training checkpoint".into()));
        }
        let mut t = Trainer::new(&cfg)?;
        t.agent.load_from(ck)?;
        t.step = ck.meta_parse("step")?;
        t.episode = ck.meta_parse("episode")?;
        t.wall_offset_ms = ck.meta_parse("wall_ms")?;
        t.rngs = Rngs {
            env: rng::decode_state(ck.meta("rng.env")?)?,
            actor: rng::decode_state(ck.meta("rng.actor")?)?,
            sampler: rng::decode_state(ck.meta("rng.sampler")?)?,
            augment: rng::decode_state(ck.meta("rng.augment")?)?,
        };
        t.state = EnvState {
            x: ck.tensor("env.x")?.iter().cloned().collect(),
            t: ck.meta_parse("env.t")?,
        };
        if t.state.x.len() != t.env.state_dim() {
            return Err(Error::Checkpoint("environment state has the wrong size".into()));
        }
        let acc = ck.tensor("episode.acc")?;
        if acc.len() != 6 {
            return Err(Error::Checkpoint("episode accumulator has the wrong size".into()));
        }
        t.acc = EpisodeAcc::from_mat(acc);
        t.buffer = ReplayBuffer::from_tensors(
            t.env.obs_dim(),
            t.env.control_dim(),
            cfg.buffer_capacity,
            [
                ck.tensor("buffer.x")?,
                ck.tensor("buffer.u")?,
                ck.tensor("buffer.x_next")?,
                ck.tensor("buffer.rd")?,
            ],
            ck.meta_parse("buffer.cursor")?,
        )?;
        let metrics = ck.tensor("metrics")?;
        if metrics.ncols() != 8 && metrics.nrows() > 0 {
            return Err(Error::Checkpoint("metrics table has the wrong width".into()));
        }
        t.rows = (0..metrics.nrows())
            .map(|i| {
                let row: Vec<f64> = metrics.row(i).iter().cloned().collect();
                MetricRow::from_slice(&row)
            })
            .collect();
        Ok(t)
    }
}

/// The config snapshot stored in a checkpoint.
pub fn config_from_checkpoint(ck: &Checkpoint) -> Result<Config> {
    let mut cfg = Config::default();
    for (k, v) in &ck.meta {
        if let Some(key) = k.strip_prefix("config.") {
            cfg.set(key, v)
                .map_err(|e| Error::Checkpoint(format!("stored config: {e}")))?;
        }
    }
    Ok(cfg)
}

/// Exclusive ownership of an output directory for the life of the guard.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::usage(format!(
                "{} is locked by another run (remove {} if that run is gone)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug)]
pub struct TrainingRun {
    pub out: PathBuf,
    pub rows: Vec<MetricRow>,
    pub checkpoint: PathBuf,
}

/// Runs (or, with `resume`, continues) a task-oriented training run into
/// the configured output directory.
pub fn train(cfg: &Config, resume: bool) -> Result<TrainingRun> {
    let out = cfg.out_dir();
    let _lock = DirLock::acquire(&out)?;
    let ck_path = out.join(CHECKPOINT_FILE);
    let metrics_path = out.join(METRICS_FILE);

    let mut trainer = if resume && ck_path.exists() {
        let ck = Checkpoint::load(&ck_path)?;
        Trainer::from_checkpoint(&ck, Some(cfg))?
    } else {
        Trainer::new(cfg)?
    };
    fs::write(out.join("config.txt"), trainer.cfg.to_text())
        .map_err(|e| Error::io(out.join("config.txt"), e))?;
    write_metrics(&metrics_path, &trainer.rows)?;
    let mut metrics = OpenOptions::new()
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;

    let total = trainer.cfg.steps;
    let every = trainer.cfg.checkpoint_every;
    while trainer.step < total {
        match trainer.step_once() {
            Ok(Some(row)) => append_row(&mut metrics, &metrics_path, &row)?,
            Ok(None) => {}
            Err(e) => {
                let crash = out.join(CRASH_FILE);
                trainer.to_checkpoint().save(&crash)?;
                return Err(e);
            }
        }
        if every > 0 && trainer.step % every == 0 && trainer.step < total {
            trainer.to_checkpoint().save(&ck_path)?;
        }
    }
    trainer.to_checkpoint().save(&ck_path)?;
    Ok(TrainingRun {
        out,
        rows: trainer.rows,
        checkpoint: ck_path,
    })
}

fn append_row(f: &mut File, path: &Path, row: &MetricRow) -> Result<()> {
    writeln!(f, "{}", row.to_csv()).map_err(|e| Error::io(path, e))
}
