//! `koopctl` subcommands: train, eval, analyze, export-latents.

pub mod checkpoint;
pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use checkpoint::Checkpoint;
pub use config::{Config, ZRef};

use crate::analysis::{self, AnalysisReport};
use crate::embedding::Embedding;
use crate::envs;
use crate::error::{Error, Result};
use crate::koopman::KoopmanModel;
use crate::lqr::{self, LqrParams, LqrSolution};
use crate::rl::baseline::{episode_model_error, BaselineModel};
use crate::rl::eval::{evaluate, mean_std, LatentController};
use crate::rl::train::{self, fmt_f64, CHECKPOINT_FILE, CRASH_FILE};
use crate::rl::{self as rlmod, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_CHECKPOINT: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "koopctl", version, about = "Task-oriented Koopman control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a controller (or the two-stage baseline with --baseline).
    Train(TrainArgs),
    /// Deterministic evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Poles, controllability, model error and learned weights.
    Analyze(EvalArgs),
    /// True and predicted latent trajectories as CSV.
    ExportLatents(EvalArgs),
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub baseline: bool,
    #[arg(long)]
    pub perturb_scale: Option<f64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub dare_iters: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Continue from the output directory's checkpoint if present.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint manifest; defaults to `<out>/checkpoint`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Output file (export-latents) or directory (eval, analyze).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(a: &CommonArgs) -> Result<Config> {
    let mut cfg = Config::default();
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            field: "config".into(),
            reason: format!("cannot read {}: {e}", path.display()),
        })?;
        cfg.apply_text(&text)?;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = &a.out {
        cfg.out = Some(v.clone());
    }
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = &a.env {
        cfg.env = v.clone();
    }
    if a.baseline {
        cfg.baseline = true;
    }
    if let Some(v) = a.perturb_scale {
        cfg.perturb_scale = v;
    }
    if let Some(v) = a.latent_dim {
        cfg.latent_dim = v;
    }
    if let Some(v) = a.dare_iters {
        cfg.dare_iters = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        Error::Checkpoint(_) => EXIT_CHECKPOINT,
        e if e.is_divergence() => EXIT_DIVERGED,
        _ => EXIT_FAILURE,
    }
}

/// A trained controller of either kind, with what analysis needs.
pub enum Loaded {
    Task { cfg: Config, trainer: Box<Trainer> },
    Baseline { cfg: Config, model: Box<BaselineModel> },
}

/// Any failure to read a checkpoint is reported as a checkpoint error.
pub fn load_checkpoint(path: &Path) -> Result<Loaded> {
    let wrap = |e: Error| match e {
        Error::Checkpoint(_) => e,
        other => Error::Checkpoint(format!("{}: {other}", path.display())),
    };
    let ck = Checkpoint::load(path).map_err(wrap)?;
    let cfg = train::config_from_checkpoint(&ck)?;
    match ck.meta("kind")? {
        "task" => Ok(Loaded::Task {
            trainer: Box::new(Trainer::from_checkpoint(&ck, None).map_err(wrap)?),
            cfg,
        }),
        "baseline" => Ok(Loaded::Baseline {
            model: Box::new(BaselineModel::load(&cfg, &ck).map_err(wrap)?),
            cfg,
        }),
        other => Err(Error::Checkpoint(format!("unknown checkpoint kind `{other}`"))),
    }
}

impl Loaded {
    pub fn config(&self) -> &Config {
        match self {
            Loaded::Task { cfg, .. } | Loaded::Baseline { cfg, .. } => cfg,
        }
    }

    pub fn encoder(&self) -> &dyn Embedding {
        match self {
            Loaded::Task { trainer, .. } => trainer.agent.encoder.as_ref(),
            Loaded::Baseline { model, .. } => model.encoder.as_ref(),
        }
    }

    pub fn model(&self) -> &KoopmanModel {
        match self {
            Loaded::Task { trainer, .. } => &trainer.agent.model,
            Loaded::Baseline { model, .. } => &model.model,
        }
    }

    /// Deterministic evaluation controller on `model`.
    pub fn controller_for(&self, model: &KoopmanModel) -> Result<LatentController<'_>> {
        match self {
            Loaded::Task { trainer, .. } => Ok(LatentController {
                encoder: trainer.agent.encoder.as_ref(),
                policy: trainer.agent.policy_for(model)?,
            }),
            Loaded::Baseline { model: b, .. } => b.controller(model),
        }
    }

    pub fn controller(&self) -> Result<LatentController<'_>> {
        self.controller_for(self.model())
    }

    /// Effective cost weights; the baseline's are fixed.
    pub fn lqr_params(&self) -> LqrParams {
        match self {
            Loaded::Task { trainer, cfg } => {
                let mut p = trainer.agent.lqr.clone();
                p.iterations = cfg.dare_iters_eval;
                p
            }
            Loaded::Baseline { model, cfg } => {
                let raw = |v: &[f64]| {
                    let inv: Vec<f64> = v.iter().map(|x| (x - lqr::DIAG_FLOOR).exp_m1().ln()).collect();
                    crate::ndmath::Mat::from_column_slice(inv.len(), 1, &inv)
                };
                LqrParams {
                    q_raw: raw(&model.q_diag),
                    r_raw: raw(&model.r_diag),
                    iterations: cfg.dare_iters_eval,
                }
            }
        }
    }

    /// Converged solve at the analysis depth.
    pub fn converged_solution(&self) -> Result<LqrSolution> {
        match self {
            Loaded::Task { .. } => lqr::solve_dare(self.model(), &self.lqr_params()),
            Loaded::Baseline { model, .. } => model.solve(&model.model),
        }
    }

    pub fn q_diagonal(&self) -> Vec<f64> {
        match self {
            Loaded::Task { trainer, .. } => trainer.agent.lqr.q_diagonal(),
            Loaded::Baseline { model, .. } => model.q_diag.clone(),
        }
    }
}

fn checkpoint_path(a: &EvalArgs, cfg: &Config) -> PathBuf {
    a.checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out_dir().join(CHECKPOINT_FILE))
}

/// Config for eval-like commands: flags are optional and a missing file is
/// not required when a checkpoint path is given.
fn eval_config(a: &EvalArgs) -> Result<Config> {
    resolve_config(&a.common)
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_config(&a.common)?;
    let name = rlmod::trainer_name(&cfg);
    let run = rlmod::trainers().get(name)?(&cfg, a.resume).map_err(|e| {
        if e.is_divergence() {
            eprintln!(
                "training diverged; crash checkpoint at {}",
                cfg.out_dir().join(CRASH_FILE).display()
            );
        }
        e
    })?;
    let rets: Vec<f64> = run.rows.iter().map(|r| r.ret).collect();
    let tail = &rets[rets.len().saturating_sub(10)..];
    let (m, s) = mean_std(tail);
    println!(
        "{name}: {} episodes, last-10 return {m:.2} ± {s:.2}; metrics in {}",
        run.rows.len(),
        run.out.display()
    );
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let cfg = eval_config(a)?;
    let loaded = load_checkpoint(&checkpoint_path(a, &cfg))?;
    let lcfg = loaded.config();
    let env = envs::make(&lcfg.env)?;
    let episodes = a.episodes.unwrap_or(lcfg.eval_episodes);
    let ctrl = loaded.controller()?;
    let eps = evaluate(env.as_ref(), &ctrl, cfg.seed, episodes)?;
    let mut csv = String::from("episode,return,model_error\n");
    for (k, ep) in eps.iter().enumerate() {
        let err = episode_model_error(loaded.encoder(), loaded.model(), ep)?;
        let _ = writeln!(csv, "{k},{},{}", fmt_f64(ep.ret), fmt_f64(err));
    }
    let out = a.output.clone().unwrap_or_else(|| lcfg.out_dir());
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let path = out.join("eval.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    let rets: Vec<f64> = eps.iter().map(|e| e.ret).collect();
    let (m, s) = mean_std(&rets);
    println!("return {m:.4} ± {s:.4} over {episodes} episodes");
    Ok(())
}

/// Everything `analyze` writes, computed in memory.
pub fn analyze(loaded: &Loaded, seed: u64, episodes: usize, out: &Path) -> Result<AnalysisReport> {
    let cfg = loaded.config();
    let env = envs::make(&cfg.env)?;
    let model = loaded.model();
    let sol = loaded.converged_solution()?;
    let stab = analysis::stability_report(model, &sol)?;
    analysis::write_poles_csv(&stab, &out.join("poles.csv"))?;
    analysis::export_learned_q(&loaded.lqr_params(), &out.join("learned_q.csv"))?;

    let ctrl = loaded.controller()?;
    let eps = evaluate(env.as_ref(), &ctrl, seed, episodes.max(1))?;
    let (obs, u) = analysis::episode_matrices(&eps[0]);
    let err = analysis::eval_model_error(model, loaded.encoder(), &obs, &u)?;
    analysis::write_model_error_csv(&err, &out.join("model_error.csv"))?;
    let rets: Vec<f64> = eps.iter().map(|e| e.ret).collect();

    let report = AnalysisReport {
        spectral_radius: stab.open_radius,
        closed_loop_spectral_radius: stab.closed_radius,
        poles: stab.open_poles,
        controllability_rank: analysis::controllability_rank(model),
        latent_dim: model.latent_dim(),
        mean_model_error: err.mean,
        q_diagonal: loaded.q_diagonal(),
        total_eval_cost: -mean_std(&rets).0,
    };
    report.write(&out.join("report.txt"))?;
    Ok(report)
}

pub fn cmd_analyze(a: &EvalArgs) -> Result<()> {
    let cfg = eval_config(a)?;
    let loaded = load_checkpoint(&checkpoint_path(a, &cfg))?;
    let out = a
        .output
        .clone()
        .unwrap_or_else(|| loaded.config().out_dir().join("analysis"));
    let episodes = a.episodes.unwrap_or(1);
    let report = analyze(&loaded, cfg.seed, episodes, &out)?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn cmd_export_latents(a: &EvalArgs) -> Result<()> {
    let cfg = eval_config(a)?;
    let loaded = load_checkpoint(&checkpoint_path(a, &cfg))?;
    let lcfg = loaded.config();
    let env = envs::make(&lcfg.env)?;
    let path = a
        .output
        .clone()
        .unwrap_or_else(|| lcfg.out_dir().join("latents.csv"));
    let ctrl = loaded.controller()?;
    analysis::export_latent_trajectories(
        loaded.model(),
        loaded.encoder(),
        env.as_ref(),
        &ctrl,
        a.episodes.unwrap_or(1),
        cfg.seed,
        &path,
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Runs a parsed command and maps the outcome to a process exit code.
pub fn run(cli: Cli) -> i32 {
    let res = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::ExportLatents(a) => cmd_export_latents(a),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("koopctl: {e}");
            exit_code(&e)
        }
    }
}
