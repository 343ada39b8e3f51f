//! One line per acceptance criterion. Criteria 6 to 9 need long training
//! runs; their `#[ignore]`d tests train into a cache under the target
//! directory, and `long_criteria_from_cache` reports on whatever is cached.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use koopctl::analysis::controllability_rank;
use koopctl::cli::{load_checkpoint, Config, Loaded};
use koopctl::embedding::contrastive_loss;
use koopctl::envs;
use koopctl::koopman::{fit_least_squares, KoopmanModel};
use koopctl::lqr::{closed_loop_matrix, dare_on_tape, solve_dare_with, LqrParams};
use koopctl::ndmath::{eigvals, spectral_radius, Mat, Tape};
use koopctl::nn::Adam;
use koopctl::rl::baseline::train_two_stage_baseline;
use koopctl::rl::eval::{evaluate, mean_std, EvalEpisode};
use koopctl::rl::{train, Batch, Trainer};
use koopctl::rng;

fn emit(text: &str) {
    let _ = writeln!(std::io::stderr().lock(), "{text}");
}

fn line(n: u32, pass: bool, what: &str, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    emit(&format!("criterion {n:>2} {tag} {what}: {detail}"));
}

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn rel(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

#[test]
fn criterion_01_dare_correctness() {
    let t0 = Instant::now();
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let scalar = KoopmanModel::new(Mat::identity(1, 1), Mat::identity(1, 1)).unwrap();
    let sol = solve_dare_with(&scalar, &[1.0], &[1.0], 100).unwrap();
    let p_err = (sol.p[(0, 0)] - phi).abs();
    let g_err = (sol.g[(0, 0)] - 1.0 / phi).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_gap, mut worst_radius) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let d = rng.gen_range(1..=5);
        let m = rng.gen_range(1..=d);
        let model = KoopmanModel::new(
            randn(&mut rng, d, d, 1.2 / (d as f64).sqrt()),
            randn(&mut rng, d, m, 1.0),
        )
        .unwrap();
        let q: Vec<f64> = (0..d).map(|_| rng.gen_range(0.1..2.0)).collect();
        let r: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..2.0)).collect();
        let s200 = solve_dare_with(&model, &q, &r, 200).unwrap();
        let s400 = solve_dare_with(&model, &q, &r, 400).unwrap();
        worst_gap = worst_gap.max(rel(&s200.p, &s400.p));
        let cl = closed_loop_matrix(&model, &s200).unwrap();
        worst_radius = worst_radius.max(spectral_radius(&eigvals(&cl).unwrap()));
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = p_err < 1e-9 && g_err < 1e-9 && worst_gap < 1e-6 && worst_radius < 1.0 && secs < 10.0;
    line(
        1,
        pass,
        "DARE correctness",
        &format!(
            "|P-phi| {p_err:.1e}, |G-1/phi| {g_err:.1e}, worst P200/P400 gap {worst_gap:.1e}, worst closed-loop radius {worst_radius:.4}, {secs:.2}s"
        ),
    );
    assert!(pass);
}

fn sum_g(a: &Mat, b: &Mat, q_raw: &Mat, r_raw: &Mat, iters: usize) -> f64 {
    let mut tape = Tape::new();
    let av = tape.constant(a.clone());
    let bv = tape.constant(b.clone());
    let params = LqrParams {
        q_raw: q_raw.clone(),
        r_raw: r_raw.clone(),
        iterations: iters,
    };
    let bound = params.bind(&mut tape, false);
    let (q, r) = bound.diagonals(&mut tape);
    let sol = dare_on_tape(&mut tape, av, bv, q, r, iters).unwrap();
    tape.value(sol.g).sum()
}

#[test]
fn criterion_02_lqr_gradients() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let d = rng.gen_range(2..=4);
        let m = rng.gen_range(1..=2);
        let a = randn(&mut rng, d, d, 0.9 / (d as f64).sqrt());
        let b = randn(&mut rng, d, m, 1.0);
        let q_raw = randn(&mut rng, d, 1, 0.5);
        let r_raw = randn(&mut rng, m, 1, 0.5);

        let mut tape = Tape::new();
        let av = tape.param(&a);
        let bv = tape.param(&b);
        let params = LqrParams {
            q_raw: q_raw.clone(),
            r_raw: r_raw.clone(),
            iterations: 10,
        };
        let bound = params.bind(&mut tape, true);
        let (q, r) = bound.diagonals(&mut tape);
        let sol = dare_on_tape(&mut tape, av, bv, q, r, 10).unwrap();
        let total = tape.sum(sol.g);
        tape.backward(total).unwrap();
        let analytic = [
            tape.grad_or_zeros(av),
            tape.grad_or_zeros(bv),
            tape.grad_or_zeros(bound.q_raw),
            tape.grad_or_zeros(bound.r_raw),
        ];

        let h = 1e-6;
        let base = [a, b, q_raw, r_raw];
        for (which, grad) in analytic.iter().enumerate() {
            let fd = Mat::from_fn(grad.nrows(), grad.ncols(), |i, j| {
                let eval = |delta: f64| {
                    let mut p = base.clone();
                    p[which][(i, j)] += delta;
                    sum_g(&p[0], &p[1], &p[2], &p[3], 10)
                };
                (eval(h) - eval(-h)) / (2.0 * h)
            });
            worst = worst.max((grad - &fd).norm() / fd.norm().max(1e-8));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst < 1e-4 && secs < 30.0;
    line(
        2,
        pass,
        "LQR gain differentiability",
        &format!("worst relative error {worst:.2e} over A, B, q_raw, r_raw on 10 systems, {secs:.2}s"),
    );
    assert!(pass);
}

fn brute_infonce(zq: &Mat, zk: &Mat, w: &Mat) -> f64 {
    let n = zq.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let logits: Vec<f64> = (0..n)
            .map(|j| (zq.row(i) * w * zk.row(j).transpose())[(0, 0)])
            .collect();
        let denom: f64 = logits.iter().map(|l| l.exp()).sum();
        total += -(logits[i].exp() / denom).ln();
    }
    total / n as f64
}

#[test]
fn criterion_03_infonce_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..=16);
        let d = rng.gen_range(1..=8);
        let zq = randn(&mut rng, n, d, 1.0);
        let zk = randn(&mut rng, n, d, 1.0);
        let w = randn(&mut rng, d, d, 0.5);
        let mut tape = Tape::new();
        let (a, b, c) = (tape.constant(zq.clone()), tape.constant(zk.clone()), tape.constant(w.clone()));
        let loss = contrastive_loss(&mut tape, a, b, c).unwrap();
        worst = worst.max((tape.scalar(loss) - brute_infonce(&zq, &zk, &w)).abs());
    }
    let mut exact = true;
    for n in [2usize, 7, 128] {
        let z = Mat::from_fn(n, 4, |_, j| j as f64 * 0.3 - 0.2);
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(z.clone()), tape.constant(z));
        let c = tape.constant(randn(&mut rng, 4, 4, 1.0));
        let loss = contrastive_loss(&mut tape, a, b, c).unwrap();
        exact &= tape.scalar(loss) == (n as f64).ln();
    }
    let pass = worst < 1e-10 && exact;
    line(
        3,
        pass,
        "InfoNCE oracle equivalence",
        &format!("worst |loss - brute force| {worst:.1e} on 100 batches, identical batches give log(batch) exactly: {exact}"),
    );
    assert!(pass);
}

#[test]
fn criterion_04_linear_recovery() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a_star = randn(&mut rng, 3, 3, 0.5);
    let b_star = randn(&mut rng, 3, 1, 1.0);
    let z = randn(&mut rng, 200, 3, 1.0);
    let u = randn(&mut rng, 200, 1, 1.0);
    let z_next = &z * a_star.transpose() + &u * b_star.transpose();
    let fit = fit_least_squares(&z, &u, &z_next, 0.0).unwrap();
    let ls_err = (&fit.a - &a_star).norm().max((&fit.b - &b_star).norm());

    let mut model = KoopmanModel::init(3, 1, &mut rng::stream(4, rng::INIT));
    let mut opt = Adam::new(1e-2, &[(3, 3), (3, 1)]);
    let mut loss = f64::INFINITY;
    let mut steps = 0;
    while steps < 5000 && loss >= 1e-6 {
        let mut tape = Tape::new();
        let km = model.bind(&mut tape, true);
        let (zv, uv) = (tape.constant(z.clone()), tape.constant(u.clone()));
        let l = km.model_loss(&mut tape, zv, uv, &z_next).unwrap();
        loss = tape.scalar(l);
        if loss < 1e-6 {
            break;
        }
        tape.backward(l).unwrap();
        let g = km.grads(&tape);
        opt.step(vec![&mut model.a, &mut model.b], &g);
        steps += 1;
    }
    let pass = ls_err < 1e-8 && loss < 1e-6;
    line(
        4,
        pass,
        "linear-system recovery",
        &format!("least-squares Frobenius error {ls_err:.1e}; gradient training reached L_m {loss:.1e} after {steps} steps"),
    );
    assert!(pass);
}

fn routing_agent() -> (Trainer, Batch) {
    let cfg = Config {
        latent_dim: 6,
        batch_size: 16,
        ..Config::default()
    };
    let t = Trainer::new(&cfg).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let n = 16;
    let batch = Batch {
        x: randn(&mut r, n, 3, 1.0),
        u: Mat::from_fn(n, 1, |_, _| r.gen_range(-1.0..1.0)),
        x_next: randn(&mut r, n, 3, 1.0),
        r: Mat::from_fn(n, 1, |_, _| r.gen_range(0.0..1.0)),
        d: Mat::zeros(n, 1),
    };
    (t, batch)
}

fn all_zero(tape: &Tape, vars: &[koopctl::ndmath::Var]) -> bool {
    vars.iter().all(|&v| tape.grad_or_zeros(v).iter().all(|g| *g == 0.0))
}

fn any_nonzero(tape: &Tape, vars: &[koopctl::ndmath::Var]) -> bool {
    !all_zero(tape, vars)
}

#[test]
fn criterion_05_gradient_routing() {
    let t0 = Instant::now();
    let (mut t, batch) = routing_agent();
    let agent = &t.agent;
    let mut checks = Vec::new();

    let mut tape = Tape::new();
    let bound = agent.bind(&mut tape);
    let loss = agent.model_term(&mut tape, &bound, &batch).unwrap();
    tape.backward(loss).unwrap();
    let critic_vars: Vec<_> = bound.critics.iter().flat_map(|c| c.vars.iter().copied()).collect();
    checks.push(("L_m: encoder", all_zero(&tape, &bound.encoder)));
    checks.push(("L_m: q_raw, r_raw", all_zero(&tape, &[bound.lqr.q_raw, bound.lqr.r_raw])));
    checks.push(("L_m: critics", all_zero(&tape, &critic_vars)));
    checks.push(("L_m: reaches A, B", any_nonzero(&tape, &[bound.model.a, bound.model.b])));

    let mut tape = Tape::new();
    let bound = agent.bind(&mut tape);
    let x_k = batch.x.map(|v| v * 1.05);
    let loss = agent.contrastive_term(&mut tape, &bound, &batch.x, &x_k).unwrap();
    tape.backward(loss).unwrap();
    let critic_vars: Vec<_> = bound.critics.iter().flat_map(|c| c.vars.iter().copied()).collect();
    checks.push(("L_cst: A, B", all_zero(&tape, &[bound.model.a, bound.model.b])));
    checks.push(("L_cst: critics", all_zero(&tape, &critic_vars)));
    checks.push(("L_cst: reaches encoder and W", any_nonzero(&tape, &bound.encoder) && any_nonzero(&tape, &[bound.similarity])));

    let mut tape = Tape::new();
    let bound = agent.bind(&mut tape);
    let eps = Mat::from_element(batch.len(), 1, 0.3);
    let (loss, _) = agent.actor_loss(&mut tape, &bound, &batch, &eps).unwrap();
    tape.backward(loss).unwrap();
    checks.push(("actor: W", all_zero(&tape, &[bound.similarity])));
    checks.push((
        "actor: reaches Q, R, A, B",
        any_nonzero(&tape, &[bound.lqr.q_raw])
            && any_nonzero(&tape, &[bound.lqr.r_raw])
            && any_nonzero(&tape, &[bound.model.a, bound.model.b]),
    ));

    let before_targets = t.agent.targets.clone();
    let before_key: Vec<Mat> = t
        .agent
        .encoder
        .named_tensors()
        .into_iter()
        .filter(|(n, _)| n.contains("key"))
        .map(|(_, m)| m.clone())
        .collect();
    t.agent.hp.tau_ema = 1.0;
    t.agent.hp.tau_critic = 1.0;
    let (mut r1, mut r2) = (ChaCha8Rng::seed_from_u64(1), ChaCha8Rng::seed_from_u64(2));
    for _ in 0..3 {
        t.agent.update(&batch, &mut r1, &mut r2).unwrap();
    }
    let after_key: Vec<Mat> = t
        .agent
        .encoder
        .named_tensors()
        .into_iter()
        .filter(|(n, _)| n.contains("key"))
        .map(|(_, m)| m.clone())
        .collect();
    checks.push(("key encoder untouched by gradients", !before_key.is_empty() && before_key == after_key));
    checks.push(("critic targets untouched by gradients", before_targets == t.agent.targets));

    let secs = t0.elapsed().as_secs_f64();
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let pass = failed.is_empty() && secs < 5.0;
    line(
        5,
        pass,
        "gradient routing",
        &format!("{} exact checks, failed {failed:?}, {secs:.2}s", checks.len()),
    );
    assert!(pass);
}

fn small_run_config(out: PathBuf, steps: usize) -> Config {
    Config {
        latent_dim: 4,
        warmup: 200,
        batch_size: 16,
        checkpoint_every: 500,
        steps,
        out: Some(out),
        ..Config::default()
    }
}

#[test]
fn criterion_10_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let read = |p: &Path| std::fs::read(p.join("metrics.csv")).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    train(&small_run_config(a.clone(), 2500), false).unwrap();
    train(&small_run_config(b.clone(), 2500), false).unwrap();
    let same_seed = read(&a) == read(&b);

    let c = dir.path().join("c");
    train(&small_run_config(c.clone(), 1300), false).unwrap();
    train(&small_run_config(c.clone(), 2500), true).unwrap();
    let resumed = read(&a) == read(&c)
        && std::fs::read(a.join("checkpoint.bin")).unwrap() == std::fs::read(c.join("checkpoint.bin")).unwrap();
    let rows = String::from_utf8(read(&a)).unwrap().lines().count() - 1;
    let pass = same_seed && resumed && rows == 2;
    line(
        10,
        pass,
        "reproducibility",
        &format!("same seed bitwise: {same_seed}, resume at step 1300 bitwise: {resumed}, {rows} episodes compared"),
    );
    assert!(pass);
}

// Long criteria.

const PENDULUM_STEPS: usize = 100_000;
const CARTPOLE_STEPS: usize = 300_000;
const EVAL_EPISODES: usize = 10;
const SCALES: [f64; 3] = [1e-4, 1e-3, 1e-2];

fn runs_root() -> PathBuf {
    std::env::var_os("KOOPCTL_ACCEPTANCE_RUNS")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-runs"))
}

fn task_config(env: &str, seed: u64, steps: usize, latent_dim: usize) -> Config {
    let dim = if latent_dim == Config::default().latent_dim {
        String::new()
    } else {
        format!("-d{latent_dim}")
    };
    Config {
        env: env.into(),
        seed,
        steps,
        latent_dim,
        out: Some(runs_root().join(format!("{env}{dim}-seed{seed}"))),
        ..Config::default()
    }
}

/// The finished run for `cfg`, training (or resuming) it first when allowed.
fn task_run(cfg: &Config, allow_training: bool) -> Option<Loaded> {
    let ck = cfg.out_dir().join("checkpoint");
    let finished = |ck: &Path| match load_checkpoint(ck) {
        Ok(l @ Loaded::Task { .. }) => match &l {
            Loaded::Task { trainer, .. } if trainer.step >= cfg.steps => Some(l),
            _ => None,
        },
        _ => None,
    };
    if let Some(l) = finished(&ck) {
        return Some(l);
    }
    if !allow_training {
        return None;
    }
    eprintln!("training {}", cfg.out_dir().display());
    train(cfg, true).unwrap();
    finished(&ck)
}

fn baseline_run(env: &str, seed: u64, allow_training: bool) -> Option<Loaded> {
    let cfg = Config {
        env: env.into(),
        seed,
        baseline: true,
        out: Some(runs_root().join(format!("{env}-baseline-seed{seed}"))),
        ..Config::default()
    };
    let ck = cfg.out_dir().join("checkpoint");
    if !ck.exists() {
        if !allow_training {
            return None;
        }
        eprintln!("training {}", cfg.out_dir().display());
        train_two_stage_baseline(&cfg).unwrap();
    }
    load_checkpoint(&ck).ok()
}

fn eval_loaded(l: &Loaded, model: &KoopmanModel) -> Vec<EvalEpisode> {
    let cfg = l.config();
    let env = envs::make(&cfg.env).unwrap();
    let ctrl = l.controller_for(model).unwrap();
    evaluate(env.as_ref(), &ctrl, cfg.seed, EVAL_EPISODES).unwrap()
}

fn mean_return(eps: &[EvalEpisode]) -> f64 {
    mean_std(&eps.iter().map(|e| e.ret).collect::<Vec<_>>()).0
}

fn balanced(ep: &EvalEpisode) -> bool {
    ep.states[ep.states.len() - 100..]
        .iter()
        .all(|s| envs::wrap_angle(s.x[0]).abs() < 0.2)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn criterion_6(allow_training: bool) -> Option<Outcome> {
    let mut counts = Vec::new();
    for seed in 0..3 {
        let l = task_run(&task_config("pendulum", seed, PENDULUM_STEPS, 50), allow_training)?;
        let eps = eval_loaded(&l, l.model());
        counts.push(eps.iter().filter(|e| balanced(e)).count());
    }
    let good = counts.iter().filter(|&&c| c >= 8).count();
    Some(Outcome {
        pass: good >= 2,
        detail: format!("balanced episodes per seed {counts:?} of {EVAL_EPISODES}; {good}/3 seeds with at least 8"),
    })
}

fn cartpole_returns(seeds: std::ops::Range<u64>, allow_training: bool) -> Option<Vec<f64>> {
    seeds
        .map(|seed| {
            let l = task_run(&task_config("cartpole", seed, CARTPOLE_STEPS, 50), allow_training)?;
            Some(mean_return(&eval_loaded(&l, l.model())))
        })
        .collect()
}

fn criterion_7(allow_training: bool) -> Option<Outcome> {
    let rets = cartpole_returns(0..3, allow_training)?;
    let best = rets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = rets.iter().sum::<f64>() / rets.len() as f64;
    Some(Outcome {
        pass: best >= 700.0 && mean >= 600.0,
        detail: format!("mean eval return per seed {rets:.1?}; best {best:.1}, average {mean:.1}"),
    })
}

/// Relative return loss at each perturbation scale against the unperturbed
/// controller, pooled over seeds.
fn degradation(runs: &[Loaded]) -> Vec<f64> {
    let mut base = 0.0;
    let mut perturbed = vec![0.0; SCALES.len()];
    for l in runs {
        base += mean_return(&eval_loaded(l, l.model()));
        let mut prng = rng::stream(l.config().seed, rng::PERTURB);
        for (k, &s) in SCALES.iter().enumerate() {
            let model = l.model().perturbed(s, &mut prng);
            perturbed[k] += mean_return(&eval_loaded(l, &model));
        }
    }
    perturbed.iter().map(|p| (base - p) / base.abs().max(1e-12)).collect()
}

fn criterion_8(allow_training: bool) -> Option<Outcome> {
    let mut task = Vec::new();
    let mut base = Vec::new();
    for seed in 0..5 {
        task.push(task_run(&task_config("cartpole", seed, CARTPOLE_STEPS, 50), allow_training)?);
        base.push(baseline_run("cartpole", seed, allow_training)?);
    }
    let dt = degradation(&task);
    let db = degradation(&base);
    let pass = dt[1] < 0.15 && dt.iter().zip(&db).all(|(t, b)| b > t);
    let pct = |v: &[f64]| v.iter().map(|x| format!("{:.2}%", 100.0 * x)).collect::<Vec<_>>().join(", ");
    Some(Outcome {
        pass,
        detail: format!(
            "return loss at scales {SCALES:?}: task-oriented [{}], two-stage [{}]",
            pct(&dt),
            pct(&db)
        ),
    })
}

fn similarity_invariance() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ok = true;
    let mut ranks = Vec::new();
    for k in 0..20 {
        let d = rng.gen_range(2..=7);
        let m = rng.gen_range(1..=2);
        let mut a = randn(&mut rng, d, d, 1.0 / (d as f64).sqrt());
        let mut b = randn(&mut rng, d, m, 1.0);
        if k % 2 == 0 {
            // An unreachable lower block, so ranks below d occur.
            let cut = d / 2;
            for i in cut..d {
                a.row_mut(i).columns_mut(0, cut).fill(0.0);
                b.row_mut(i).fill(0.0);
            }
        }
        let t = randn(&mut rng, d, d, 1.0) + Mat::identity(d, d) * 2.0;
        let ti = t.clone().try_inverse().unwrap();
        let r0 = controllability_rank(&KoopmanModel::new(a.clone(), b.clone()).unwrap());
        let r1 = controllability_rank(&KoopmanModel::new(&t * &a * &ti, &t * &b).unwrap());
        ok &= r0 == r1;
        ranks.push(r0);
    }
    (ok, format!("similarity-invariant on 20 systems (ranks {ranks:?}): {ok}"))
}

fn criterion_9(allow_training: bool) -> Option<Outcome> {
    let (invariant, inv_detail) = similarity_invariance();
    let mut best: Option<(u64, f64)> = None;
    for seed in 0..3 {
        let l = task_run(&task_config("cartpole", seed, CARTPOLE_STEPS, 50), allow_training)?;
        let r = mean_return(&eval_loaded(&l, l.model()));
        if best.map_or(true, |(_, b)| r > b) {
            best = Some((seed, r));
        }
    }
    let (seed, _) = best?;
    let full = task_run(&task_config("cartpole", seed, CARTPOLE_STEPS, 50), false)?;
    let rank = controllability_rank(full.model());
    let at = |d: usize| -> Option<f64> {
        let l = task_run(&task_config("cartpole", seed, CARTPOLE_STEPS, d), allow_training)?;
        Some(mean_return(&eval_loaded(&l, l.model())))
    };
    let r_rank = at(rank)?;
    let r_small = at(rank.saturating_sub(2).max(1))?;
    let loss = (r_rank - r_small) / r_rank.abs().max(1e-12);
    Some(Outcome {
        pass: invariant && loss >= 0.2,
        detail: format!(
            "{inv_detail}; seed {seed} d=50 model has rank {rank}; retrained return at d={rank}: {r_rank:.1}, at d={}: {r_small:.1}, loss {:.1}%",
            rank.saturating_sub(2).max(1),
            100.0 * loss
        ),
    })
}

const LONG: [(u32, &str, fn(bool) -> Option<Outcome>); 4] = [
    (6, "pendulum swing-up", criterion_6),
    (7, "cart-pole swing-up", criterion_7),
    (8, "robustness to model perturbation", criterion_8),
    (9, "controllability-rank workflow", criterion_9),
];

fn run_long(n: u32) {
    let (_, what, f) = LONG.iter().find(|(k, _, _)| *k == n).unwrap();
    let o = f(true).expect("runs available after training");
    line(n, o.pass, what, &o.detail);
    assert!(o.pass, "{}", o.detail);
}

/// Reports criteria 6 to 9 from cached runs without training or asserting.
#[test]
fn long_criteria_from_cache() {
    for (n, what, f) in LONG {
        match f(false) {
            Some(o) => line(n, o.pass, what, &o.detail),
            None => emit(&format!(
                "criterion {n:>2} NOT RUN {what}: no cached runs under {}; run `cargo test --release --test acceptance -- --ignored`",
                runs_root().display()
            )),
        }
    }
}

#[test]
#[ignore]
fn criterion_06_pendulum_swing_up() {
    run_long(6);
}

#[test]
#[ignore]
fn criterion_07_cartpole_swing_up() {
    run_long(7);
}

#[test]
#[ignore]
fn criterion_08_robustness() {
    run_long(8);
}

#[test]
#[ignore]
fn criterion_09_rank_workflow() {
    run_long(9);
}
