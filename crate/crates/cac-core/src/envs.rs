//! Control-affine simulation environments (4D Car, 3D TurtleBot), Euler
//! integration, reference-trajectory synthesis, and the MDP wrapper.

use crate::numerics::{Mat, Vector};
use crate::rng::Rng;
use crate::{CoreError, Result};
use std::io::Write;
use std::path::Path;

pub const DEFAULT_DT: f64 = 0.05;
pub const DEFAULT_HORIZON: usize = 200;
pub const REFERENCE_RETRIES: usize = 20;
/// Reference controls are clipped to this fraction of the control box.
pub const REF_CLIP: f64 = 0.75;
/// Default sinusoid frequencies, in cycles per horizon.
pub const DEFAULT_FREQS: [f64; 4] = [0.5, 1.0, 2.0, 3.0];

const TB_C1: f64 = 0.9061;
const TB_C2: f64 = 0.8831;
const TB_C3: f64 = 0.8548;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Car,
    TurtleBot,
}

/// A control-affine system with its state/control boxes and episode shape.
#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub name: &'static str,
    pub n: usize,
    pub m: usize,
    pub x_min: Vector,
    pub x_max: Vector,
    pub u_min: Vector,
    pub u_max: Vector,
    pub x0_min: Vector,
    pub x0_max: Vector,
    pub xe_min: Vector,
    pub xe_max: Vector,
    pub dt: f64,
    pub horizon: usize,
    /// Angular coordinate wrapped into `[lo, hi)`.
    pub angle: Option<(usize, f64, f64)>,
}

pub fn make_env(name: &str) -> Result<EnvSpec> {
    make_env_with(name, DEFAULT_DT, DEFAULT_HORIZON)
}

pub fn make_env_with(name: &str, dt: f64, horizon: usize) -> Result<EnvSpec> {
    use std::f64::consts::PI;
    match name {
        "car" => Ok(EnvSpec {
            kind: EnvKind::Car,
            name: "car",
            n: 4,
            m: 2,
            x_min: Vector::from_vec(vec![-5.0, -5.0, -PI, 1.0]),
            x_max: Vector::from_vec(vec![5.0, 5.0, PI, 2.0]),
            u_min: Vector::from_vec(vec![-3.0, -3.0]),
            u_max: Vector::from_vec(vec![3.0, 3.0]),
            x0_min: Vector::from_vec(vec![-2.0, -2.0, -1.0, 1.5]),
            x0_max: Vector::from_vec(vec![2.0, 2.0, 1.0, 1.5]),
            xe_min: Vector::from_vec(vec![-1.0, -1.0, -1.0, -1.0]),
            xe_max: Vector::from_vec(vec![1.0, 1.0, 1.0, 1.0]),
            dt,
            horizon,
            angle: Some((2, -PI, PI)),
        }),
        "turtlebot" => Ok(EnvSpec {
            kind: EnvKind::TurtleBot,
            name: "turtlebot",
            n: 3,
            m: 2,
            x_min: Vector::from_vec(vec![-5.0, -2.0, 0.0]),
            x_max: Vector::from_vec(vec![0.0, 2.0, 2.0 * PI]),
            u_min: Vector::from_vec(vec![0.0, -1.82]),
            u_max: Vector::from_vec(vec![0.22, 1.82]),
            x0_min: Vector::from_vec(vec![-1.7, 0.75, PI]),
            x0_max: Vector::from_vec(vec![-1.3, 1.15, 1.5 * PI]),
            xe_min: Vector::from_vec(vec![-0.1, -0.1, -0.25 * PI]),
            xe_max: Vector::from_vec(vec![0.1, 0.1, 0.25 * PI]),
            dt,
            horizon,
            angle: Some((2, 0.0, 2.0 * PI)),
        }),
        other => Err(CoreError::UnknownEnv(other.to_string())),
    }
}

fn wrap(v: f64, lo: f64, hi: f64) -> f64 {
    lo + (v - lo).rem_euclid(hi - lo)
}

impl EnvSpec {
    pub fn drift(&self, x: &Vector) -> Vector {
        match self.kind {
            EnvKind::Car => {
                let (theta, v) = (x[2], x[3]);
                Vector::from_vec(vec![v * theta.cos(), v * theta.sin(), 0.0, 0.0])
            }
            EnvKind::TurtleBot => Vector::zeros(3),
        }
    }

    pub fn actuation(&self, x: &Vector) -> Mat {
        match self.kind {
            EnvKind::Car => {
                Mat::from_row_slice(4, 2, &[0., 0., 0., 0., 1., 0., 0., 1.])
            }
            EnvKind::TurtleBot => {
                let theta = x[2];
                Mat::from_row_slice(
                    3,
                    2,
                    &[
                        0.0,
                        TB_C1 * theta.cos(),
                        0.0,
                        TB_C2 * theta.sin(),
                        TB_C3,
                        0.0,
                    ],
                )
            }
        }
    }

    pub fn wrap_angles(&self, x: &mut Vector) {
        if let Some((i, lo, hi)) = self.angle {
            x[i] = wrap(x[i], lo, hi);
        }
    }

    /// One explicit Euler step `x + dt * (f(x) + B(x) u)` with angle
    /// wrapping. `u` must already lie in the control box.
    pub fn euler_step(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        let mut next = x + (self.drift(x) + self.actuation(x) * u) * self.dt;
        if !crate::numerics::all_finite_vec(&next) {
            return Err(CoreError::NonFinite("euler_step".into()));
        }
        self.wrap_angles(&mut next);
        Ok(next)
    }

    /// Raw state derivative `f(x) + B(x) u`, the forward-difference target
    /// used for system identification (consistent with `euler_step` before
    /// angle wrapping).
    pub fn xdot(&self, x: &Vector, u: &Vector) -> Vector {
        self.drift(x) + self.actuation(x) * u
    }

    pub fn clip_control(&self, u: &Vector) -> Vector {
        Vector::from_fn(self.m, |i, _| u[i].clamp(self.u_min[i], self.u_max[i]))
    }

    pub fn clip_state(&self, x: &Vector) -> Vector {
        Vector::from_fn(self.n, |i, _| x[i].clamp(self.x_min[i], self.x_max[i]))
    }

    pub fn in_state_box(&self, x: &Vector) -> bool {
        (0..self.n).all(|i| x[i] >= self.x_min[i] && x[i] <= self.x_max[i])
    }

    /// State difference `x - y` with the angular coordinate taken along the
    /// shorter arc, so tracking errors never see a spurious full-turn jump.
    pub fn state_diff(&self, x: &Vector, y: &Vector) -> Vector {
        let mut d = x - y;
        if let Some((i, lo, hi)) = self.angle {
            let span = hi - lo;
            d[i] = d[i].rem_euclid(span);
            if d[i] > span / 2.0 {
                d[i] -= span;
            }
        }
        d
    }
}

// ---------------------------------------------------------------------------
// Reference trajectories
// ---------------------------------------------------------------------------

/// Reference generated by zero-disturbance forward simulation under stored
/// controls. `states` has `horizon + 1` entries, `controls` has `horizon`.
#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    pub states: Vec<Vector>,
    pub controls: Vec<Vector>,
    pub horizon: usize,
    pub dt: f64,
}

/// Randomized sinusoidal reference synthesis: per control channel,
/// `u*(t) = sum_i w_i sin(2 pi f_i t / T)` with weights drawn uniformly from
/// half the control range. Controls are clipped to `0.75 * [u_min, u_max]`
/// and the rollout must remain inside the state box, otherwise the draw is
/// retried (at most [`REFERENCE_RETRIES`] times).
///
/// When a step would push a directly-actuated coordinate out of the box, the
/// control is projected (least squares on that step's actuation rows) to
/// hold the coordinate on the boundary; the projected control is what gets
/// stored, so re-simulating the stored controls reproduces the states
/// bit-exactly.
pub fn generate_reference(
    spec: &EnvSpec,
    rng: &mut Rng,
    n_f: usize,
    freqs: &[f64],
    horizon: usize,
) -> Result<ReferenceTrajectory> {
    assert!(n_f <= freqs.len(), "need a frequency per sinusoid");
    let t_total = horizon as f64 * spec.dt;
    let wbar: Vec<f64> = (0..spec.m)
        .map(|j| 0.5 * (spec.u_max[j] - spec.u_min[j]))
        .collect();

    'attempt: for _attempt in 0..REFERENCE_RETRIES {
        let mut x0 = Vector::from_fn(spec.n, |i, _| rng.uniform(spec.x0_min[i], spec.x0_max[i]));
        spec.wrap_angles(&mut x0);
        // weights[i][j]: sinusoid i, channel j
        let weights: Vec<Vec<f64>> = (0..n_f)
            .map(|_| {
                (0..spec.m)
                    .map(|j| rng.uniform(-wbar[j], wbar[j]))
                    .collect()
            })
            .collect();

        let mut states = vec![x0.clone()];
        let mut controls = Vec::with_capacity(horizon);
        let mut x = x0;
        for k in 0..horizon {
            let t = k as f64 * spec.dt;
            let mut u = Vector::from_fn(spec.m, |j, _| {
                let mut s = 0.0;
                for i in 0..n_f {
                    s += weights[i][j] * (2.0 * std::f64::consts::PI * freqs[i] * t / t_total).sin();
                }
                s.clamp(REF_CLIP * spec.u_min[j], REF_CLIP * spec.u_max[j])
            });
            let mut next = spec.euler_step(&x, &u)?;
            if !spec.in_state_box(&next) {
                if let Some((fixed_u, fixed_next)) = project_control(spec, &x, &u, &next) {
                    u = fixed_u;
                    next = fixed_next;
                } else {
                    continue 'attempt;
                }
            }
            controls.push(u);
            states.push(next.clone());
            x = next;
        }
        return Ok(ReferenceTrajectory {
            states,
            controls,
            horizon,
            dt: spec.dt,
        });
    }
    Err(CoreError::ReferenceRetries {
        retries: REFERENCE_RETRIES,
        seed: rng.seed(),
    })
}

/// Least-squares control adjustment pulling out-of-box coordinates back onto
/// the boundary. Returns the adjusted (clipped) control and resulting state
/// when the fix succeeds.
fn project_control(
    spec: &EnvSpec,
    x: &Vector,
    u: &Vector,
    next: &Vector,
) -> Option<(Vector, Vector)> {
    let clipped = spec.clip_state(next);
    let violating: Vec<usize> = (0..spec.n).filter(|&i| next[i] != clipped[i]).collect();
    if violating.is_empty() {
        return None;
    }
    let b = spec.actuation(x);
    let mut rows = Mat::zeros(violating.len(), spec.m);
    let mut delta = Vector::zeros(violating.len());
    for (r, &i) in violating.iter().enumerate() {
        for j in 0..spec.m {
            rows[(r, j)] = spec.dt * b[(i, j)];
        }
        delta[r] = clipped[i] - next[i];
    }
    let svd = rows.svd(true, true);
    let du = svd.solve(&delta, 1e-12).ok()?;
    let fixed = Vector::from_fn(spec.m, |j, _| {
        (u[j] + du[j]).clamp(REF_CLIP * spec.u_min[j], REF_CLIP * spec.u_max[j])
    });
    let fixed_next = spec.euler_step(x, &fixed).ok()?;
    if spec.in_state_box(&fixed_next) {
        Some((fixed, fixed_next))
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// MDP wrapper
// ---------------------------------------------------------------------------

/// One environment step record. The reward field is filled by the training
/// loop; the environment itself leaves it at zero.
#[derive(Debug, Clone)]
pub struct Transition {
    pub k: usize,
    pub x: Vector,
    pub x_ref: Vector,
    pub u_ref: Vector,
    pub correction: Vector,
    pub applied: Vector,
    pub x_next: Vector,
    pub reward: f64,
    pub done: bool,
    pub truncated: bool,
}

/// Initial state `x_d(0) + x_e` with `x_e ~ Uniform(X_e)`, clipped into the
/// state box.
pub fn reset(spec: &EnvSpec, reference: &ReferenceTrajectory, rng: &mut Rng) -> Vector {
    let xe = Vector::from_fn(spec.n, |i, _| rng.uniform(spec.xe_min[i], spec.xe_max[i]));
    let mut x0 = &reference.states[0] + xe;
    x0 = spec.clip_state(&x0);
    spec.wrap_angles(&mut x0);
    x0
}

/// Apply the control correction: `u = clip(u_d(k) + du)`, integrate one
/// step, and flag termination (left the state box) or truncation (horizon).
pub fn step(
    spec: &EnvSpec,
    reference: &ReferenceTrajectory,
    k: usize,
    x: &Vector,
    correction: &Vector,
) -> Result<Transition> {
    assert!(k < reference.horizon, "step index past horizon");
    let u_ref = reference.controls[k].clone();
    let applied = spec.clip_control(&(&u_ref + correction));
    let x_next = spec.euler_step(x, &applied)?;
    let terminated = !spec.in_state_box(&x_next);
    let truncated = !terminated && k + 1 == reference.horizon;
    Ok(Transition {
        k,
        x: x.clone(),
        x_ref: reference.states[k].clone(),
        u_ref,
        correction: correction.clone(),
        applied,
        x_next,
        reward: 0.0,
        done: terminated || truncated,
        truncated,
    })
}

/// Episode trajectory dump: CSV `k,t,x...,xd...,ud...,u...,r,done`.
pub fn write_trajectory_csv(path: &Path, spec: &EnvSpec, transitions: &[Transition]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let mut header = String::from("k,t");
    for i in 0..spec.n {
        header.push_str(&format!(",x{i}"));
    }
    for i in 0..spec.n {
        header.push_str(&format!(",xd{i}"));
    }
    for j in 0..spec.m {
        header.push_str(&format!(",ud{j}"));
    }
    for j in 0..spec.m {
        header.push_str(&format!(",u{j}"));
    }
    header.push_str(",r,done");
    writeln!(f, "{header}")?;
    for tr in transitions {
        let mut line = format!("{},{}", tr.k, tr.k as f64 * spec.dt);
        for v in tr.x.iter() {
            line.push_str(&format!(",{v}"));
        }
        for v in tr.x_ref.iter() {
            line.push_str(&format!(",{v}"));
        }
        for v in tr.u_ref.iter() {
            line.push_str(&format!(",{v}"));
        }
        for v in tr.applied.iter() {
            line.push_str(&format!(",{v}"));
        }
        line.push_str(&format!(",{},{}", tr.reward, tr.done as u8));
        writeln!(f, "{line}")?;
    }
    Ok(())
}
