use cac_core::envs::{self, make_env};
use cac_core::{Rng, Vector};

fn main() {
    let spec = make_env("car").unwrap();
    let base = Rng::new(500);
    let mut maucs = Vec::new();
    let mut tails = Vec::new();
    for e in 0..20u64 {
        let mut erng = base.split_indexed("eval-episode", e);
        let reference = envs::generate_reference(
            &spec, &mut erng, envs::DEFAULT_FREQS.len(), &envs::DEFAULT_FREQS, spec.horizon,
        ).unwrap();
        let mut x = envs::reset(&spec, &reference, &mut erng);
        let e0 = spec.state_diff(&x, &reference.states[0]).norm();
        let mut curve = vec![1.0];
        for k in 0..spec.horizon {
    let look: usize = std::env::var("LOOK").ok().and_then(|v| v.parse().ok()).unwrap_or(8);
    let kth: f64 = std::env::var("KTH").ok().and_then(|v| v.parse().ok()).unwrap_or(4.0);
    let kv: f64 = std::env::var("KV").ok().and_then(|v| v.parse().ok()).unwrap_or(1.5);
            let xd = &reference.states[k];
            let xt = &reference.states[(k + look).min(spec.horizon - 1)];
            // pursuit toward a lookahead reference point, blended with the
            // reference heading as position error vanishes
            let dx = xt[0] - x[0];
            let dy = xt[1] - x[1];
            let (th, v) = (x[2], x[3]);
            let derr = ((xd[0] - x[0]).powi(2) + (xd[1] - x[1]).powi(2)).sqrt();
            let w = (derr / 0.2).min(1.0);
            let th_pursuit = dy.atan2(dx);
            let mut dth_p = th_pursuit - th;
            dth_p = dth_p.rem_euclid(2.0 * std::f64::consts::PI);
            if dth_p > std::f64::consts::PI { dth_p -= 2.0 * std::f64::consts::PI; }
            let mut dth_r = xd[2] - th;
            dth_r = dth_r.rem_euclid(2.0 * std::f64::consts::PI);
            if dth_r > std::f64::consts::PI { dth_r -= 2.0 * std::f64::consts::PI; }
            let dth = w * dth_p + (1.0 - w) * dth_r;
            let u1 = kth * dth;
            let gap = (dx * dx + dy * dy).sqrt() - v * (look as f64) * spec.dt;
            let v_des = (xd[3] + kv * gap).clamp(1.0, 2.0);
            let u2 = 4.0 * (v_des - v);
            let du = Vector::from_vec(vec![u1 - reference.controls[k][0], u2 - reference.controls[k][1]]);
            let tr = envs::step(&spec, &reference, k, &x, &du).unwrap();
            x = tr.x_next;
            if tr.done && !tr.truncated { break; }
            if k + 1 < spec.horizon {
                curve.push(spec.state_diff(&x, &reference.states[k + 1]).norm() / e0);
            }
        }
        let t = curve.len();
        maucs.push(spec.horizon as f64 / t as f64 * curve.iter().sum::<f64>());
        let start = t - (t / 10).max(1);
        tails.push(curve[start..].iter().sum::<f64>() / (t - start) as f64);
    }
    println!(
        "hand controller: mean MAUC {:.2}, mean tail {:.3}, maucs {:?}",
        maucs.iter().sum::<f64>() / 20.0,
        tails.iter().sum::<f64>() / 20.0,
        maucs.iter().map(|v| v.round()).collect::<Vec<_>>()
    );
}
