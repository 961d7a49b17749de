use cac_core::cac::{
    evaluate_policy, observation, train_cac, train_ppo_baseline, ActorCritic, TrainConfig,
};
use cac_core::envs::{self, make_env, EnvSpec};
use cac_core::sysid::{collect_data, pretrain, DynModel, DYN_WIDTHS};
use cac_core::{Rng, Vector};
use std::time::Instant;

fn coord_report(spec: &EnvSpec, ac: &ActorCritic, tag: &str) {
    let base = Rng::new(500);
    let mut raw = vec![0.0; spec.n];
    let mut wrapped = vec![0.0; spec.n];
    let mut count = 0usize;
    let mut init_norm = 0.0;
    for e in 0..20u64 {
        let mut erng = base.split_indexed("eval-episode", e);
        let reference = envs::generate_reference(
            spec,
            &mut erng,
            envs::DEFAULT_FREQS.len(),
            &envs::DEFAULT_FREQS,
            spec.horizon,
        )
        .unwrap();
        let mut x = envs::reset(spec, &reference, &mut erng);
        init_norm += (&x - &reference.states[0]).norm();
        let mut diffs: Vec<Vector> = vec![&x - &reference.states[0]];
        for k in 0..spec.horizon {
            let obs = observation(spec, &reference, k, &x);
            let action = ac.actor.forward(&obs).unwrap();
            let tr = envs::step(spec, &reference, k, &x, &action).unwrap();
            x = tr.x_next;
            if tr.done && !tr.truncated {
                break;
            }
            if k + 1 < spec.horizon {
                diffs.push(&x - &reference.states[k + 1]);
            }
        }
        let start = diffs.len() - (diffs.len() / 10).max(1);
        for d in &diffs[start..] {
            for i in 0..spec.n {
                raw[i] += d[i].abs();
                let w = if let Some((ai, lo, hi)) = spec.angle {
                    if i == ai {
                        let span = hi - lo;
                        let mut v = d[i].rem_euclid(span);
                        if v > span / 2.0 {
                            v -= span;
                        }
                        v.abs()
                    } else {
                        d[i].abs()
                    }
                } else {
                    d[i].abs()
                };
                wrapped[i] += w;
            }
            count += 1;
        }
    }
    let raw: Vec<f64> = raw.iter().map(|v| v / count as f64).collect();
    let wrapped: Vec<f64> = wrapped.iter().map(|v| v / count as f64).collect();
    println!(
        "[{tag}] mean init err norm {:.3}; final-10% per-coord raw {:?} wrapped {:?}",
        init_norm / 20.0,
        raw.iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>(),
        wrapped.iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>(),
    );
}

fn main() {
    let spec = make_env("car").unwrap();
    let mut rng = Rng::new(0);
    let noise = Vector::from_element(spec.m, 0.1);
    let data = collect_data(&spec, &mut rng.split("collect"), 200, &noise).unwrap();
    let mut model = DynModel::new(spec.n, spec.m, &DYN_WIDTHS, &mut rng.split("model"));
    pretrain(&mut model, &data, 1024, 40, 1e-3, &mut rng.split("train")).unwrap();

    let mut trng = Rng::new(1);
    let ac0 = ActorCritic::new(&spec, &mut trng.split("init"));
    let base = evaluate_policy(&spec, &ac0, 20, &Rng::new(500)).unwrap();
    println!("untrained MAUC: {:.3}", base.mean_mauc);
    coord_report(&spec, &ac0, "untrained");

    let getu = |k: &str, d: usize| -> usize {
        std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
    };
    let getf = |k: &str, d: f64| -> f64 {
        std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
    };
    let cfg = TrainConfig {
        total_steps: 300_000,
        buffer_size: getu("BUF", 1024),
        minibatch: getu("MB", 64),
        cmg_every: getu("CMG_EVERY", 10),
        eval_every: getu("EVAL_EVERY", 20),
        eval_episodes: getu("EVAL_EP", 20),
        gamma: getf("GAMMA", 0.99),
        lambda: getf("LAMBDA", 0.5),
        ..TrainConfig::default()
    };
    let seed = getu("SEED", 1) as u64;
    println!(
        "[cfg] buf {} mb {} cmg_every {} eval_every {} eval_ep {} lambda {} seed {seed}",
        cfg.buffer_size, cfg.minibatch, cfg.cmg_every, cfg.eval_every, cfg.eval_episodes, cfg.lambda
    );

    let mode = std::env::args().nth(1).unwrap_or_else(|| "cac".into());
    let t0 = Instant::now();
    let res = if mode == "ppo" {
        train_ppo_baseline(&spec, &cfg, &mut Rng::new(seed), None).unwrap()
    } else {
        train_cac(&spec, &model, &cfg, &mut Rng::new(seed), None).unwrap()
    };
    println!("[{mode}] trained {} steps in {:?}", res.steps, t0.elapsed());
    for l in &res.logs {
        if l.eval_mauc.is_some() {
            println!(
                "[cac] iter {:3} steps {:6} kl {:.4} ep {} rew {:.3} metric {:.3} H {:.2} eval {:?}",
                l.iter,
                l.steps,
                l.kl,
                l.epochs,
                l.mean_reward,
                l.mean_metric_term,
                l.entropy,
                l.eval_mauc.map(|v| (v * 1e2).round() / 1e2)
            );
        }
    }
    println!("[cac] best mauc {:.3}", res.best_mauc);
    let fin = evaluate_policy(&spec, &res.best, 20, &Rng::new(500)).unwrap();
    let mut ep_tails = Vec::new();
    for curve in &fin.curves {
        let start = curve.len() - (curve.len() / 10).max(1);
        let t: f64 = curve[start..].iter().sum::<f64>() / (curve.len() - start) as f64;
        ep_tails.push((t * 1e2).round() / 1e2);
    }
    let tail: f64 = ep_tails.iter().sum::<f64>() / ep_tails.len() as f64;
    println!("[{mode}/best] per-episode tails {:?}", ep_tails);
    let lens: Vec<usize> = fin.curves.iter().map(|c| c.len()).collect();
    println!(
        "[{mode}/best] MAUC on baseline refs: {:.3}, final-10% err {:.3}, ep lengths {:?}",
        fin.mean_mauc, tail, lens
    );
    coord_report(&spec, &res.best, "best");
    if std::env::var("PROBE").is_ok() {
        // feedback gain at a representative mid-episode observation
        let base = Rng::new(500);
        let mut erng = base.split_indexed("eval-episode", 5);
        let reference = envs::generate_reference(
            &spec, &mut erng, envs::DEFAULT_FREQS.len(), &envs::DEFAULT_FREQS, spec.horizon,
        )
        .unwrap();
        let mut x = envs::reset(&spec, &reference, &mut erng);
        let mut worst: Vec<Vec<f64>> = Vec::new();
        for k in 0..spec.horizon {
            let obs = observation(&spec, &reference, k, &x);
            if k == 100 {
                let kmat = res.best.feedback_gain(&spec, &obs).unwrap();
                println!("[probe] K at k=100:");
                for r in 0..spec.m {
                    println!(
                        "[probe]   {:?}",
                        (0..spec.n).map(|c| (kmat[(r, c)] * 1e2).round() / 1e2).collect::<Vec<_>>()
                    );
                }
            }
            let action = res.best.actor.forward(&obs).unwrap();
            let tr = envs::step(&spec, &reference, k, &x, &action).unwrap();
            x = tr.x_next;
            if k % 20 == 0 || k == spec.horizon - 1 {
                let d = spec.state_diff(&x, &reference.states[(k + 1).min(spec.horizon - 1)]);
                worst.push(
                    (0..spec.n).map(|i| (d[i] * 1e2).round() / 1e2).collect(),
                );
            }
            if tr.done && !tr.truncated {
                break;
            }
        }
        for (j, row) in worst.iter().enumerate() {
            println!("[probe] k={:3} err {:?}", j * 20, row);
        }
    }
    if let Some(cmg) = &res.cmg {
        let mut srng = Rng::new(77);
        let mut diag = vec![0.0; spec.n];
        for _ in 0..50 {
            let x = Vector::from_fn(spec.n, |i, _| {
                srng.uniform(spec.x_min[i], spec.x_max[i])
            });
            let m = cmg.sample_metric(&x, &mut srng).unwrap().m;
            for i in 0..spec.n {
                diag[i] += m[(i, i)] / 50.0;
            }
        }
        println!(
            "[cmg] mean M diagonal over random states: {:?}",
            diag.iter().map(|v| (v * 1e2).round() / 1e2).collect::<Vec<_>>()
        );
    }
}
