//! Offline dynamics pretraining: data collection under noisy reference
//! controls and joint regression of the drift and actuation networks.

use crate::envs::{self, EnvSpec};
use crate::net::{AdamState, Mlp};
use crate::numerics::{self, Mat, Vector};
use crate::rng::Rng;
use crate::{CoreError, Result};
use std::io::{BufRead, Write};
use std::path::Path;

pub const DYN_WIDTHS: [usize; 2] = [256, 256];
pub const DEFAULT_DYN_LR: f64 = 1e-3;
pub const DEFAULT_BATCH: usize = 1024;
pub const HELDOUT_FRACTION: f64 = 0.1;
pub const PLATEAU_PATIENCE: usize = 10;

/// One regression sample: state, applied control, and the simulator's raw
/// state derivative `(x' - x) / dt` (before angle wrapping).
#[derive(Debug, Clone)]
pub struct DynSample {
    pub x: Vector,
    pub u: Vector,
    pub xdot: Vector,
}

/// Learned control-affine dynamics: `xdot_hat = f(x) + reshape(B(x)) u`.
#[derive(Debug, Clone)]
pub struct DynModel {
    pub fnet: Mlp,          // n -> n
    pub bnet: Mlp,          // n -> n*m, reshaped row-major to n x m
    pub n: usize,
    pub m: usize,
}

impl DynModel {
    pub fn new(n: usize, m: usize, hidden: &[usize], rng: &mut Rng) -> Self {
        let mut fw = vec![n];
        fw.extend_from_slice(hidden);
        fw.push(n);
        let mut bw = vec![n];
        bw.extend_from_slice(hidden);
        bw.push(n * m);
        DynModel {
            fnet: Mlp::new(&fw, 1.0, &mut rng.split("dyn-f")),
            bnet: Mlp::new(&bw, 1.0, &mut rng.split("dyn-b")),
            n,
            m,
        }
    }

    /// Deterministic evaluation of the learned drift and actuation matrix.
    pub fn predict(&self, x: &Vector) -> Result<(Vector, Mat)> {
        let f = self.fnet.forward(x)?;
        let braw = self.bnet.forward(x)?;
        let b = Mat::from_row_slice(self.n, self.m, braw.as_slice());
        Ok((f, b))
    }

    pub fn predict_xdot(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        let (f, b) = self.predict(x)?;
        Ok(f + b * u)
    }

    /// Orthonormal null-space basis of the learned actuation transpose.
    pub fn b_perp(&self, x: &Vector) -> Result<Mat> {
        let (_, b) = self.predict(x)?;
        numerics::null_space(&b)
    }

    pub fn save(&self, dir: &Path, seed: u64, step: u64) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        crate::net::save_checkpoint(
            &dir.join("dynamics_f.ckpt"),
            &crate::net::CheckpointHeader {
                widths: self.fnet.widths.clone(),
                role: "dynamics-f".into(),
                seed,
                step,
                extra: 0,
            },
            &self.fnet,
            None,
        )?;
        crate::net::save_checkpoint(
            &dir.join("dynamics_b.ckpt"),
            &crate::net::CheckpointHeader {
                widths: self.bnet.widths.clone(),
                role: "dynamics-b".into(),
                seed,
                step,
                extra: 0,
            },
            &self.bnet,
            None,
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (fh, fnet, _) = crate::net::load_checkpoint(&dir.join("dynamics_f.ckpt"))?;
        let (_, bnet, _) = crate::net::load_checkpoint(&dir.join("dynamics_b.ckpt"))?;
        let n = fh.widths[0];
        let m = bnet.output_width() / n;
        Ok(DynModel { fnet, bnet, n, m })
    }
}

/// Roll out noisy reference controls and record `(x, u, xdot)` samples.
/// Each episode uses a fresh reference trajectory and stops at termination.
pub fn collect_data(
    spec: &EnvSpec,
    rng: &mut Rng,
    episodes: usize,
    noise_std: &Vector,
) -> Result<Vec<DynSample>> {
    assert!(noise_std.iter().all(|s| s.is_finite() && *s >= 0.0));
    let mut data = Vec::new();
    for ep in 0..episodes {
        let mut erng = rng.split_indexed("collect", ep as u64);
        let reference = envs::generate_reference(
            spec,
            &mut erng,
            4,
            &envs::DEFAULT_FREQS,
            spec.horizon,
        )?;
        let mut x = reference.states[0].clone();
        for k in 0..reference.horizon {
            let noise = Vector::from_fn(spec.m, |j, _| noise_std[j] * erng.normal());
            let u = spec.clip_control(&(&reference.controls[k] + noise));
            let xdot = spec.xdot(&x, &u);
            data.push(DynSample {
                x: x.clone(),
                u: u.clone(),
                xdot: xdot.clone(),
            });
            let mut next = &x + &xdot * spec.dt;
            spec.wrap_angles(&mut next);
            if !spec.in_state_box(&next) {
                break;
            }
            x = next;
        }
    }
    Ok(data)
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    /// Held-out loss per epoch.
    pub heldout_loss: Vec<f64>,
    pub epochs_run: usize,
}

/// Minibatch Adam on the mean squared one-step-derivative error, with a 10%
/// held-out split and plateau early stopping.
pub fn pretrain(
    model: &mut DynModel,
    data: &[DynSample],
    batch: usize,
    epochs: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<PretrainReport> {
    if batch == 0 {
        return Err(CoreError::Precondition("batch size must be positive".into()));
    }
    if data.len() < batch {
        return Err(CoreError::Precondition(format!(
            "need at least batch={batch} samples, have {}",
            data.len()
        )));
    }
    let n_held = ((data.len() as f64 * HELDOUT_FRACTION) as usize).max(1);
    let perm = rng.permutation(data.len());
    let held_idx = &perm[..n_held];
    let train_idx = &perm[n_held..];

    let mut f_params = model.fnet.flatten();
    let mut b_params = model.bnet.flatten();
    let mut f_adam = AdamState::new(f_params.len(), lr);
    let mut b_adam = AdamState::new(b_params.len(), lr);

    let mut report = PretrainReport {
        train_loss: Vec::new(),
        heldout_loss: Vec::new(),
        epochs_run: 0,
    };
    let mut best_held = f64::INFINITY;
    let mut since_best = 0usize;

    for _epoch in 0..epochs {
        let order = rng.permutation(train_idx.len());
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch) {
            if chunk.len() < 2 {
                continue;
            }
            let idx: Vec<usize> = chunk.iter().map(|&i| train_idx[i]).collect();
            let (loss, fg, bg) = batch_loss_and_grads(model, data, &idx)?;
            if !loss.is_finite() {
                return Err(CoreError::Diverged(format!(
                    "dynamics loss non-finite after {} epochs",
                    report.epochs_run
                )));
            }
            epoch_loss += loss;
            batches += 1;
            f_adam.step(&mut f_params, &fg);
            b_adam.step(&mut b_params, &bg);
            model.fnet.set_from_flat(&f_params)?;
            model.bnet.set_from_flat(&b_params)?;
        }
        report.train_loss.push(epoch_loss / batches.max(1) as f64);
        let held = eval_loss(model, data, held_idx)?;
        report.heldout_loss.push(held);
        report.epochs_run += 1;
        if held < best_held - 1e-6 {
            best_held = held;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= PLATEAU_PATIENCE {
                break;
            }
        }
    }
    Ok(report)
}

/// Mean over the index set of the squared prediction error norm, plus the
/// flattened parameter gradients of both networks.
fn batch_loss_and_grads(
    model: &DynModel,
    data: &[DynSample],
    idx: &[usize],
) -> Result<(f64, Vector, Vector)> {
    let bsz = idx.len();
    let n = model.n;
    let m = model.m;
    let xmat = Mat::from_columns(&idx.iter().map(|&i| data[i].x.clone()).collect::<Vec<_>>());
    let fpred = model.fnet.forward_batch(&xmat)?;
    let bpred = model.bnet.forward_batch(&xmat)?;

    let mut err = Mat::zeros(n, bsz);
    for (c, &i) in idx.iter().enumerate() {
        let braw = bpred.column(c);
        let mut pred = fpred.column(c).into_owned();
        for r in 0..n {
            for j in 0..m {
                pred[r] += braw[r * m + j] * data[i].u[j];
            }
        }
        for r in 0..n {
            err[(r, c)] = pred[r] - data[i].xdot[r];
        }
    }
    let loss = err.iter().map(|e| e * e).sum::<f64>() / bsz as f64;

    let scale = 2.0 / bsz as f64;
    let up_f = &err * scale;
    let mut up_b = Mat::zeros(n * m, bsz);
    for (c, &i) in idx.iter().enumerate() {
        for r in 0..n {
            for j in 0..m {
                up_b[(r * m + j, c)] = scale * err[(r, c)] * data[i].u[j];
            }
        }
    }
    let fg = model.fnet.backward_batch(&xmat, &up_f)?.flatten();
    let bg = model.bnet.backward_batch(&xmat, &up_b)?.flatten();
    Ok((loss, fg, bg))
}

pub fn eval_loss(model: &DynModel, data: &[DynSample], idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let xmat = Mat::from_columns(&idx.iter().map(|&i| data[i].x.clone()).collect::<Vec<_>>());
    let fpred = model.fnet.forward_batch(&xmat)?;
    let bpred = model.bnet.forward_batch(&xmat)?;
    let mut total = 0.0;
    for (c, &i) in idx.iter().enumerate() {
        let mut se = 0.0;
        for r in 0..model.n {
            let mut p = fpred[(r, c)];
            for j in 0..model.m {
                p += bpred[(r * model.m + j, c)] * data[i].u[j];
            }
            let e = p - data[i].xdot[r];
            se += e * e;
        }
        total += se;
    }
    Ok(total / idx.len() as f64)
}

// ---------------------------------------------------------------------------
// Dataset files: CSV `x...,u...,xdot...` + JSON sidecar
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DatasetSidecar {
    pub env: String,
    pub dt: f64,
    pub noise_std: Vec<f64>,
    pub seed: u64,
    pub samples: usize,
}

pub fn write_dataset(
    csv_path: &Path,
    sidecar_path: &Path,
    spec: &EnvSpec,
    data: &[DynSample],
    noise_std: &Vector,
    seed: u64,
) -> Result<()> {
    let mut f = std::fs::File::create(csv_path)?;
    let mut header = String::new();
    for i in 0..spec.n {
        header.push_str(&format!("x{i},"));
    }
    for j in 0..spec.m {
        header.push_str(&format!("u{j},"));
    }
    for i in 0..spec.n {
        header.push_str(&format!("xdot{i}"));
        if i + 1 < spec.n {
            header.push(',');
        }
    }
    writeln!(f, "{header}")?;
    for s in data {
        let fields: Vec<String> = s
            .x
            .iter()
            .chain(s.u.iter())
            .chain(s.xdot.iter())
            .map(|v| format!("{v}"))
            .collect();
        writeln!(f, "{}", fields.join(","))?;
    }
    let sidecar = DatasetSidecar {
        env: spec.name.to_string(),
        dt: spec.dt,
        noise_std: noise_std.iter().cloned().collect(),
        seed,
        samples: data.len(),
    };
    std::fs::write(sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn read_dataset(csv_path: &Path, n: usize, m: usize) -> Result<Vec<DynSample>> {
    let file = std::fs::File::open(csv_path)?;
    let reader = std::io::BufReader::new(file);
    let mut data = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|t| {
                t.parse::<f64>().map_err(|e| {
                    CoreError::Other(format!("dataset line {}: {e}", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        if vals.len() != 2 * n + m {
            return Err(CoreError::Other(format!(
                "dataset line {}: expected {} fields, found {}",
                lineno + 1,
                2 * n + m,
                vals.len()
            )));
        }
        data.push(DynSample {
            x: Vector::from_vec(vals[..n].to_vec()),
            u: Vector::from_vec(vals[n..n + m].to_vec()),
            xdot: Vector::from_vec(vals[n + m..].to_vec()),
        });
    }
    Ok(data)
}
