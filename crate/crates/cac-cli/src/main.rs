//! Pipeline CLI: data collection, dynamics pretraining, contraction
//! actor-critic or baseline PPO training, evaluation, and standalone theory
//! checks. Every stage writes its artifacts plus a manifest carrying the
//! config hash and seed into `<out>/<stage>/`.

mod config;

use cac_core::cac::{self, ActorCritic};
use cac_core::envs::{self, EnvSpec};
use cac_core::numerics::Vector;
use cac_core::report::{self, Manifest, RunReport};
use cac_core::rng::Rng;
use cac_core::sysid::{self, DynModel};
use clap::{Parser, Subcommand};
use config::RunConfig;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_TRAINING: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "cac", about = "Contraction actor-critic training pipeline", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// JSON run configuration (defaults used when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Roll out noisy reference controls and record a dynamics dataset.
    Collect,
    /// Fit the control-affine dynamics model on a collected dataset.
    Pretrain,
    /// Train the contraction actor-critic (needs a pretrained model).
    TrainCac,
    /// Train the metric-free PPO baseline.
    TrainPpo,
    /// Evaluate a policy checkpoint on a trials x trajectories grid.
    Eval {
        /// Directory holding actor.ckpt/critic.ckpt (default: the train-cac
        /// stage directory, falling back to train-ppo).
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Run the lemma and convergence checks standalone.
    Theory,
}

/// A stage failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn training(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_TRAINING,
            message: message.into(),
        }
    }
}

impl From<cac_core::CoreError> for Failure {
    fn from(e: cac_core::CoreError) -> Self {
        Failure::training(e.to_string())
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("CAC_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(Failure::config)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out = out.display().to_string();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let spec = envs::make_env_with(&cfg.env, cfg.dt, cfg.horizon).map_err(|_| {
        Failure::config(format!(
            "unknown env '{}'; valid envs are: car, turtlebot",
            cfg.env
        ))
    })?;

    match cli.cmd {
        Cmd::Collect => cmd_collect(&cfg, &spec),
        Cmd::Pretrain => cmd_pretrain(&cfg, &spec),
        Cmd::TrainCac => cmd_train(&cfg, &spec, true),
        Cmd::TrainPpo => cmd_train(&cfg, &spec, false),
        Cmd::Eval { policy } => cmd_eval(&cfg, &spec, policy.as_deref()),
        Cmd::Theory => cmd_theory(&cfg),
    }
}

fn stage_dir(cfg: &RunConfig, stage: &str) -> PathBuf {
    Path::new(&cfg.out).join(stage)
}

fn write_stage_manifest(
    dir: &Path,
    cfg: &RunConfig,
    stage: &str,
    inputs: &[String],
    outputs: &[String],
) -> Result<(), Failure> {
    report::write_manifest(
        dir,
        &Manifest {
            stage: stage.into(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            version: format!("cac-v{}", env!("CARGO_PKG_VERSION")),
            inputs: inputs.to_vec(),
            outputs: outputs.to_vec(),
        },
    )?;
    Ok(())
}

fn require_input(path: &Path, hint: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::config(format!(
            "missing input {}; {hint}",
            path.display()
        )))
    }
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

fn cmd_collect(cfg: &RunConfig, spec: &EnvSpec) -> Result<(), Failure> {
    let dir = stage_dir(cfg, "collect");
    std::fs::create_dir_all(&dir).map_err(|e| Failure::training(e.to_string()))?;
    let mut rng = Rng::new(cfg.seed).split("collect");
    let noise = Vector::from_element(spec.m, cfg.dynamics.noise_std);
    let data = sysid::collect_data(spec, &mut rng, cfg.dynamics.episodes, &noise)?;
    sysid::write_dataset(
        &dir.join("dataset.csv"),
        &dir.join("dataset.json"),
        spec,
        &data,
        &noise,
        cfg.seed,
    )?;
    write_stage_manifest(
        &dir,
        cfg,
        "collect",
        &[],
        &["dataset.csv".into(), "dataset.json".into()],
    )?;
    println!(
        "collected {} samples from {} episodes on {}",
        data.len(),
        cfg.dynamics.episodes,
        spec.name
    );
    Ok(())
}

fn cmd_pretrain(cfg: &RunConfig, spec: &EnvSpec) -> Result<(), Failure> {
    let dataset = stage_dir(cfg, "collect").join("dataset.csv");
    require_input(&dataset, "run `cac collect` first")?;
    let data = sysid::read_dataset(&dataset, spec.n, spec.m)?;
    let mut rng = Rng::new(cfg.seed).split("pretrain");
    let mut model = DynModel::new(spec.n, spec.m, &cfg.dynamics.hidden, &mut rng);
    let rep = sysid::pretrain(
        &mut model,
        &data,
        cfg.dynamics.batch,
        cfg.dynamics.epochs,
        cfg.dynamics.lr,
        &mut rng,
    )?;
    let dir = stage_dir(cfg, "pretrain");
    model.save(&dir, cfg.seed, rep.epochs_run as u64)?;
    let report_json = serde_json::json!({
        "train_loss": rep.train_loss,
        "heldout_loss": rep.heldout_loss,
        "epochs_run": rep.epochs_run,
        "samples": data.len(),
    });
    std::fs::write(
        dir.join("pretrain_report.json"),
        serde_json::to_string_pretty(&report_json).unwrap() + "\n",
    )
    .map_err(|e| Failure::training(e.to_string()))?;
    write_stage_manifest(
        &dir,
        cfg,
        "pretrain",
        &["collect/dataset.csv".into()],
        &[
            "dynamics_f.ckpt".into(),
            "dynamics_b.ckpt".into(),
            "pretrain_report.json".into(),
        ],
    )?;
    println!(
        "pretrained dynamics: final train loss {:.6} after {} epochs",
        rep.train_loss.last().copied().unwrap_or(f64::NAN),
        rep.epochs_run
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, spec: &EnvSpec, with_cmg: bool) -> Result<(), Failure> {
    let stage = if with_cmg { "train-cac" } else { "train-ppo" };
    let dir = stage_dir(cfg, stage);
    let tc = cfg.train_config(false);
    let mut rng = Rng::new(cfg.seed).split(stage);
    let mut inputs = Vec::new();
    let result = if with_cmg {
        let model_dir = stage_dir(cfg, "pretrain");
        require_input(&model_dir.join("dynamics_f.ckpt"), "run `cac pretrain` first")?;
        let model = DynModel::load(&model_dir)?;
        inputs.push("pretrain/dynamics_f.ckpt".into());
        inputs.push("pretrain/dynamics_b.ckpt".into());
        cac::train_cac(spec, &model, &tc, &mut rng, Some(&dir))?
    } else {
        cac::train_ppo_baseline(spec, &tc, &mut rng, Some(&dir))?
    };

    // the stage directory holds the best-by-MAUC policy; final weights go
    // under final/
    result.best.save(&dir, cfg.seed, result.steps as u64)?;
    result
        .ac
        .save(&dir.join("final"), cfg.seed, result.steps as u64)?;
    let mut outputs = vec![
        "actor.ckpt".into(),
        "critic.ckpt".into(),
        "final/actor.ckpt".into(),
        "final/critic.ckpt".into(),
        "train_log.jsonl".into(),
    ];
    if let Some(cmg) = &result.cmg {
        cmg.save(&dir.join("cmg.ckpt"), cfg.seed, result.steps as u64)?;
        outputs.push("cmg.ckpt".into());
    }
    write_stage_manifest(&dir, cfg, stage, &inputs, &outputs)?;
    println!(
        "{stage}: {} steps, best eval MAUC {:.4}",
        result.steps, result.best_mauc
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, spec: &EnvSpec, policy: Option<&Path>) -> Result<(), Failure> {
    let policy_dir = match policy {
        Some(p) => p.to_path_buf(),
        None => {
            let cac_dir = stage_dir(cfg, "train-cac");
            let ppo_dir = stage_dir(cfg, "train-ppo");
            if cac_dir.join("actor.ckpt").exists() {
                cac_dir
            } else if ppo_dir.join("actor.ckpt").exists() {
                ppo_dir
            } else {
                return Err(Failure::config(format!(
                    "no policy checkpoint found at {} or {}; train first or pass --policy",
                    cac_dir.display(),
                    ppo_dir.display()
                )));
            }
        }
    };
    require_input(&policy_dir.join("actor.ckpt"), "pass --policy <dir>")?;
    let ac = ActorCritic::load(&policy_dir)?;
    if ac.n != spec.n || ac.m != spec.m {
        return Err(Failure::config(format!(
            "policy at {} has dimensions ({}, {}) but env {} needs ({}, {})",
            policy_dir.display(),
            ac.n,
            ac.m,
            spec.name,
            spec.n,
            spec.m
        )));
    }

    let base = Rng::new(cfg.seed).split("eval");
    let grid: Vec<(u64, u64)> = (0..cfg.eval.trajectories as u64)
        .flat_map(|t| (0..cfg.eval.episodes as u64).map(move |i| (t, i)))
        .collect();
    use rayon::prelude::*;
    let rollouts: Vec<cac_core::Result<Option<(Vec<f64>, f64)>>> = grid
        .par_iter()
        .map(|&(traj, trial)| eval_rollout(spec, &ac, &base, traj, trial))
        .collect();

    let mut curves = Vec::new();
    let mut maucs = Vec::new();
    let mut excluded = 0usize;
    for r in rollouts {
        match r? {
            Some((curve, m)) => {
                curves.push(curve);
                maucs.push(m);
            }
            None => excluded += 1,
        }
    }
    if maucs.len() < 2 {
        return Err(Failure::training(
            "too few evaluable episodes (initial error was zero almost everywhere)",
        ));
    }
    let summary = report::aggregate(&maucs, cfg.eval.confidence)?;
    let trend = report::convergence_trend(&curves).ok();
    let run_report = RunReport {
        env: spec.name.to_string(),
        seed: cfg.seed,
        episodes: maucs.len(),
        excluded_episodes: excluded,
        mauc: summary.clone(),
        trend,
        theory: None,
    };
    let dir = stage_dir(cfg, "eval");
    report::write_report(&dir, &run_report, &curves, &maucs)?;
    write_stage_manifest(
        &dir,
        cfg,
        "eval",
        &[format!("{}/actor.ckpt", policy_dir.display())],
        &["report.json".into(), "curves.csv".into(), "mauc.csv".into()],
    )?;
    println!(
        "eval: {} episodes, MAUC {:.4} +- {:.4} ({} excluded)",
        maucs.len(),
        summary.mean,
        summary.ci_half_width,
        excluded
    );
    Ok(())
}

/// One deterministic tracking rollout on trajectory `traj`, trial `trial`.
fn eval_rollout(
    spec: &EnvSpec,
    ac: &ActorCritic,
    base: &Rng,
    traj: u64,
    trial: u64,
) -> cac_core::Result<Option<(Vec<f64>, f64)>> {
    let mut traj_rng = base.split_indexed("trajectory", traj);
    let reference = envs::generate_reference(
        spec,
        &mut traj_rng,
        envs::DEFAULT_FREQS.len(),
        &envs::DEFAULT_FREQS,
        spec.horizon,
    )?;
    let mut trial_rng = traj_rng.split_indexed("trial", trial);
    let mut x = envs::reset(spec, &reference, &mut trial_rng);
    let mut states = vec![x.clone()];
    let mut refs = vec![reference.states[0].clone()];
    for k in 0..spec.horizon {
        let obs = cac::observation(spec, &reference, k, &x);
        let action = ac.actor.forward(&obs)?;
        let tr = envs::step(spec, &reference, k, &x, &action)?;
        x = tr.x_next;
        if tr.done && !tr.truncated {
            break;
        }
        if k + 1 < spec.horizon {
            states.push(x.clone());
            refs.push(reference.states[k + 1].clone());
        }
    }
    Ok(match report::normalized_curve_with(&states, &refs, |x, xd| spec.state_diff(x, xd)) {
        Some(curve) => {
            let m = report::mauc(&curve, spec.horizon)?;
            Some((curve, m))
        }
        None => None,
    })
}

fn cmd_theory(cfg: &RunConfig) -> Result<(), Failure> {
    let mut rng = Rng::new(cfg.seed).split("theory");
    let theory = report::theory_report(&mut rng, 100, 20);
    // self-check of the trend fitter on a known synthetic decay
    let synthetic: Vec<Vec<f64>> = (0..10)
        .map(|_| (0..200).map(|k| (-0.3 * k as f64).exp()).collect())
        .collect();
    let trend = report::convergence_trend(&synthetic)?;
    let dir = stage_dir(cfg, "theory");
    std::fs::create_dir_all(&dir).map_err(|e| Failure::training(e.to_string()))?;
    let out = serde_json::json!({
        "theory": theory,
        "trend_selfcheck": {
            "true_rate": 0.3,
            "fitted": trend,
        },
    });
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&out).unwrap() + "\n",
    )
    .map_err(|e| Failure::training(e.to_string()))?;
    write_stage_manifest(&dir, cfg, "theory", &[], &["report.json".into()])?;
    println!(
        "lemma1: {} ({} triples, min margin {:.3e})",
        if theory.lemma1_pass { "pass" } else { "FAIL" },
        theory.lemma1_triples,
        theory.lemma1_min_margin
    );
    println!(
        "lemma2: {} ({} MDPs, {} mismatches)",
        if theory.lemma2.pass { "pass" } else { "FAIL" },
        theory.lemma2.mdps,
        theory.lemma2.mismatches
    );
    println!(
        "trend self-check: fitted rate {:.4} (true 0.3)",
        trend.fitted_rate
    );
    if theory.lemma1_pass && theory.lemma2.pass {
        Ok(())
    } else {
        Err(Failure::training("theory checks failed"))
    }
}
