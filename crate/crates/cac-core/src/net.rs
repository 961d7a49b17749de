//! Minimal feed-forward network engine: tanh hidden layers, linear output,
//! exact reverse-mode parameter gradients, analytic input Jacobians, a
//! diagonal-Gaussian head, and Adam.

use crate::numerics::{Mat, Vector};
use crate::rng::Rng;
use crate::{CoreError, Result};
use std::io::{Read, Write};
use std::path::Path;

/// Feed-forward network. `widths = [in, h1, ..., out]`; hidden activations
/// are tanh, the output layer is linear.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub weights: Vec<Mat>,  // weights[l]: widths[l+1] x widths[l]
    pub biases: Vec<Vector>, // biases[l]: widths[l+1]
}

/// Parameter gradients with the same shapes as [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Mat>,
    pub biases: Vec<Vector>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            weights: net.weights.iter().map(|w| Mat::zeros(w.nrows(), w.ncols())).collect(),
            biases: net.biases.iter().map(|b| Vector::zeros(b.len())).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b * scale;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b * scale;
        }
    }

    pub fn flatten(&self) -> Vector {
        let mut out = Vec::new();
        for w in &self.weights {
            out.extend(w.iter().cloned());
        }
        for b in &self.biases {
            out.extend(b.iter().cloned());
        }
        Vector::from_vec(out)
    }
}

/// Orthogonal matrix via QR of a Gaussian draw, sign-fixed so the
/// factorization is unique, scaled by `gain`.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut Rng) -> Mat {
    let k = rows.max(cols);
    let g = Mat::from_fn(k, k, |_, _| rng.normal());
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            for i in 0..k {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q.view((0, 0), (rows, cols)).into_owned() * gain
}

impl Mlp {
    /// Network with orthogonal hidden layers (gain sqrt(2)) and a final
    /// layer scaled by `head_gain`. Biases start at zero.
    pub fn new(widths: &[usize], head_gain: f64, rng: &mut Rng) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let last = widths.len() - 2;
        for l in 0..widths.len() - 1 {
            let gain = if l == last { head_gain } else { std::f64::consts::SQRT_2 };
            weights.push(orthogonal(widths[l + 1], widths[l], gain, rng));
            biases.push(Vector::zeros(widths[l + 1]));
        }
        Mlp { widths: widths.to_vec(), weights, biases }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..widths.len() - 1 {
            weights.push(Mat::zeros(widths[l + 1], widths[l]));
            biases.push(Vector::zeros(widths[l + 1]));
        }
        Mlp { widths: widths.to_vec(), weights, biases }
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn check_input(&self, x: &Vector) -> Result<()> {
        if x.len() != self.input_width() {
            return Err(CoreError::DimensionMismatch {
                expected: self.input_width(),
                got: x.len(),
                context: "mlp input",
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Vector) -> Result<Vector> {
        self.check_input(x)?;
        let mut a = x.clone();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * a + b;
            if l != last {
                z.apply(|v| *v = v.tanh());
            }
            a = z;
        }
        Ok(a)
    }

    /// Forward pass keeping post-activation values per layer (input first).
    fn forward_trace(&self, x: &Vector) -> Result<Vec<Vector>> {
        self.check_input(x)?;
        let mut acts = vec![x.clone()];
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * acts.last().unwrap() + b;
            if l != last {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Gradient of `<upstream, forward(x)>` with respect to every parameter.
    pub fn backward(&self, x: &Vector, upstream: &Vector) -> Result<MlpGrads> {
        if upstream.len() != self.output_width() {
            return Err(CoreError::DimensionMismatch {
                expected: self.output_width(),
                got: upstream.len(),
                context: "mlp upstream",
            });
        }
        let acts = self.forward_trace(x)?;
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = upstream.clone();
        for l in (0..self.weights.len()).rev() {
            grads.weights[l] = &delta * acts[l].transpose();
            grads.biases[l] = delta.clone();
            if l > 0 {
                let mut back = self.weights[l].transpose() * &delta;
                // act[l] is tanh output for hidden layers
                for i in 0..back.len() {
                    back[i] *= 1.0 - acts[l][i] * acts[l][i];
                }
                delta = back;
            }
        }
        Ok(grads)
    }

    /// Batched forward: samples are columns of `x`.
    pub fn forward_batch(&self, x: &Mat) -> Result<Mat> {
        Ok(self.forward_trace_batch(x)?.pop().unwrap())
    }

    fn forward_trace_batch(&self, x: &Mat) -> Result<Vec<Mat>> {
        if x.nrows() != self.input_width() {
            return Err(CoreError::DimensionMismatch {
                expected: self.input_width(),
                got: x.nrows(),
                context: "mlp batch input",
            });
        }
        let mut acts = vec![x.clone()];
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if l != last {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Batched reverse pass: gradient of `sum_k <upstream_k, forward(x_k)>`,
    /// summed over the batch columns.
    pub fn backward_batch(&self, x: &Mat, upstream: &Mat) -> Result<MlpGrads> {
        let acts = self.forward_trace_batch(x)?;
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = upstream.clone();
        for l in (0..self.weights.len()).rev() {
            grads.weights[l] = &delta * acts[l].transpose();
            grads.biases[l] = Vector::from_fn(delta.nrows(), |i, _| delta.row(i).sum());
            if l > 0 {
                let mut back = self.weights[l].transpose() * &delta;
                for j in 0..back.ncols() {
                    for i in 0..back.nrows() {
                        let a = acts[l][(i, j)];
                        back[(i, j)] *= 1.0 - a * a;
                    }
                }
                delta = back;
            }
        }
        Ok(grads)
    }

    /// Exact Jacobian of the output with respect to the input, by the layer
    /// chain rule.
    pub fn input_jacobian(&self, x: &Vector) -> Result<Mat> {
        let acts = self.forward_trace(x)?;
        let last = self.weights.len() - 1;
        let mut j = self.weights[0].clone();
        if last > 0 {
            // scale rows by tanh'(z) = 1 - a^2 of the first hidden layer
            scale_rows(&mut j, &acts[1]);
        }
        for l in 1..self.weights.len() {
            j = &self.weights[l] * j;
            if l != last {
                scale_rows(&mut j, &acts[l + 1]);
            }
        }
        Ok(j)
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn flatten(&self) -> Vector {
        let mut out = Vec::with_capacity(self.param_count());
        for w in &self.weights {
            out.extend(w.iter().cloned());
        }
        for b in &self.biases {
            out.extend(b.iter().cloned());
        }
        Vector::from_vec(out)
    }

    pub fn set_from_flat(&mut self, flat: &Vector) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(CoreError::DimensionMismatch {
                expected: self.param_count(),
                got: flat.len(),
                context: "mlp flat parameters",
            });
        }
        let mut k = 0;
        for w in &mut self.weights {
            for v in w.iter_mut() {
                *v = flat[k];
                k += 1;
            }
        }
        for b in &mut self.biases {
            for v in b.iter_mut() {
                *v = flat[k];
                k += 1;
            }
        }
        Ok(())
    }
}

fn scale_rows(m: &mut Mat, act: &Vector) {
    for i in 0..m.nrows() {
        let s = 1.0 - act[i] * act[i];
        for j in 0..m.ncols() {
            m[(i, j)] *= s;
        }
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    m: Vector,
    v: Vector,
}

impl AdamState {
    pub fn new(dim: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: Vector::zeros(dim),
            v: Vector::zeros(dim),
        }
    }

    /// One update. Non-finite gradients skip the parameter change (the step
    /// count still advances) and return `false`.
    pub fn step(&mut self, params: &mut Vector, grads: &Vector) -> bool {
        assert_eq!(params.len(), grads.len(), "adam shape mismatch");
        self.step_count += 1;
        if !grads.iter().all(|g| g.is_finite()) {
            return false;
        }
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        true
    }
}

// ---------------------------------------------------------------------------
// Diagonal Gaussian
// ---------------------------------------------------------------------------

pub const STD_MIN: f64 = 1e-3;
pub const STD_MAX: f64 = 10.0;

pub const LN_2PI: f64 = 1.8378770664093453; // ln(2*pi)

/// Diagonal Gaussian with clamped standard deviations.
#[derive(Debug, Clone)]
pub struct DiagGaussian {
    pub mean: Vector,
    pub log_std: Vector,
}

impl DiagGaussian {
    pub fn new(mean: Vector, log_std: Vector) -> Self {
        assert_eq!(mean.len(), log_std.len());
        DiagGaussian { mean, log_std }
    }

    pub fn std(&self) -> Vector {
        self.log_std.map(|l| l.exp().clamp(STD_MIN, STD_MAX))
    }

    /// Reparameterized sample `mean + std * eps`, returning the noise too.
    pub fn sample(&self, rng: &mut Rng) -> (Vector, Vector) {
        let eps = Vector::from_vec(rng.normal_vec(self.mean.len()));
        let s = self.std();
        let x = &self.mean + s.component_mul(&eps);
        (x, eps)
    }

    pub fn log_prob(&self, x: &Vector) -> f64 {
        let s = self.std();
        let mut lp = 0.0;
        for i in 0..x.len() {
            let z = (x[i] - self.mean[i]) / s[i];
            lp += -0.5 * z * z - s[i].ln() - 0.5 * LN_2PI;
        }
        lp
    }

    /// Closed-form entropy `sum(log sigma) + d/2 * log(2*pi*e)`.
    pub fn entropy(&self) -> f64 {
        let d = self.mean.len() as f64;
        self.std().map(|s| s.ln()).sum() + 0.5 * d * (LN_2PI + 1.0)
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CheckpointHeader {
    pub widths: Vec<usize>,
    pub role: String,
    pub seed: u64,
    pub step: u64,
    /// Number of extra (non-network) parameters appended to the block,
    /// e.g. a state-independent log-std vector.
    pub extra: usize,
}

/// Write a checkpoint: one-line JSON header, newline, flat little-endian f64
/// parameter block (network parameters then extras).
pub fn save_checkpoint(
    path: &Path,
    header: &CheckpointHeader,
    net: &Mlp,
    extra: Option<&Vector>,
) -> Result<()> {
    let extra_len = extra.map_or(0, |e| e.len());
    if extra_len != header.extra {
        return Err(CoreError::Checkpoint(format!(
            "header extra {} != provided {}",
            header.extra, extra_len
        )));
    }
    let mut file = std::fs::File::create(path)?;
    let json = serde_json::to_string(header)?;
    file.write_all(json.as_bytes())?;
    file.write_all(b"\n")?;
    let flat = net.flatten();
    let mut bytes = Vec::with_capacity((flat.len() + extra_len) * 8);
    for v in flat.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(e) = extra {
        for v in e.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    file.write_all(&bytes)?;
    Ok(())
}

/// Read a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, Mlp, Option<Vector>)> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    let nl = raw
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CoreError::Checkpoint("missing header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&raw[..nl])?;
    let body = &raw[nl + 1..];
    if body.len() % 8 != 0 {
        return Err(CoreError::Checkpoint("parameter block not 8-byte aligned".into()));
    }
    let vals: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut net = Mlp::zeros(&header.widths);
    let expected = net.param_count() + header.extra;
    if vals.len() != expected {
        return Err(CoreError::Checkpoint(format!(
            "expected {expected} parameters, found {}",
            vals.len()
        )));
    }
    net.set_from_flat(&Vector::from_vec(vals[..net.param_count()].to_vec()))?;
    let extra = if header.extra > 0 {
        Some(Vector::from_vec(vals[net.param_count()..].to_vec()))
    } else {
        None
    };
    Ok((header, net, extra))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics;

    #[test]
    fn zero_net_forwards_zero() {
        let net = Mlp::zeros(&[3, 4, 2]);
        let y = net.forward(&Vector::from_vec(vec![1.0, -2.0, 0.5])).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_net_is_its_weight_matrix() {
        let mut net = Mlp::zeros(&[2, 1]);
        net.weights[0] = Mat::from_row_slice(1, 2, &[3.0, -1.0]);
        let x = Vector::from_vec(vec![2.0, 5.0]);
        let y = net.forward(&x).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-15); // 3*2 - 1*5
        let j = net.input_jacobian(&x).unwrap();
        assert!(numerics::frobenius(&(j - net.weights[0].clone())) < 1e-15);
    }

    #[test]
    fn forward_matches_hand_tanh_composition() {
        // 2-2-1 net evaluated by hand
        let mut net = Mlp::zeros(&[2, 2, 1]);
        net.weights[0] = Mat::from_row_slice(2, 2, &[0.5, -0.3, 0.2, 0.8]);
        net.biases[0] = Vector::from_vec(vec![0.1, -0.2]);
        net.weights[1] = Mat::from_row_slice(1, 2, &[1.5, -0.7]);
        net.biases[1] = Vector::from_vec(vec![0.05]);
        let x = Vector::from_vec(vec![0.4, -1.2]);
        let h1 = (0.5 * 0.4 + -0.3 * -1.2 + 0.1_f64).tanh();
        let h2 = (0.2 * 0.4 + 0.8 * -1.2 + -0.2_f64).tanh();
        let expect = 1.5 * h1 - 0.7 * h2 + 0.05;
        let y = net.forward(&x).unwrap();
        assert!((y[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn backward_zero_upstream_zero_grads() {
        let mut rng = Rng::new(1);
        let net = Mlp::new(&[3, 4, 2], 1.0, &mut rng);
        let g = net
            .backward(&Vector::from_vec(vec![0.3, -0.2, 0.9]), &Vector::zeros(2))
            .unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_linear_scalar_grad_is_input() {
        let mut net = Mlp::zeros(&[3, 1]);
        net.weights[0] = Mat::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let x = Vector::from_vec(vec![0.4, -0.5, 2.0]);
        let g = net.backward(&x, &Vector::from_vec(vec![1.0])).unwrap();
        let diff: Mat = g.weights[0].transpose() - Mat::from_columns(&[x]);
        assert!(numerics::frobenius(&diff) < 1e-15);
    }

    /// Central-difference oracle for the parameter gradient of
    /// `<upstream, forward(x)>`.
    fn fd_param_grad(net: &Mlp, x: &Vector, upstream: &Vector) -> Vector {
        let flat = net.flatten();
        let mut g = Vector::zeros(flat.len());
        let h = 1e-6;
        for k in 0..flat.len() {
            let mut p = flat.clone();
            p[k] += h;
            let mut np = net.clone();
            np.set_from_flat(&p).unwrap();
            let up = upstream.dot(&np.forward(x).unwrap());
            p[k] -= 2.0 * h;
            np.set_from_flat(&p).unwrap();
            let dn = upstream.dot(&np.forward(x).unwrap());
            g[k] = (up - dn) / (2.0 * h);
        }
        g
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(9);
        for trial in 0..50 {
            let net = Mlp::new(&[3, 4, 2], 1.0, &mut rng);
            let x = Vector::from_vec(rng.normal_vec(3));
            let upstream = Vector::from_vec(rng.normal_vec(2));
            let got = net.backward(&x, &upstream).unwrap().flatten();
            let expect = fd_param_grad(&net, &x, &upstream);
            let rel = (&got - &expect).norm() / expect.norm().max(1e-12);
            assert!(rel <= 1e-4, "trial {trial}: rel err {rel}");
        }
    }

    #[test]
    fn input_jacobian_matches_finite_differences() {
        let mut rng = Rng::new(13);
        for trial in 0..50 {
            let net = Mlp::new(&[4, 8, 3], 1.0, &mut rng);
            let x = Vector::from_vec(rng.normal_vec(4));
            let j = net.input_jacobian(&x).unwrap();
            let fd = numerics::fd_jacobian(|v| net.forward(v).unwrap(), &x).unwrap();
            let diff = (&j - &fd).iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-5, "trial {trial}: max diff {diff}");
        }
    }

    #[test]
    fn tanh_net_jacobian_at_zero_is_weight_product() {
        let mut rng = Rng::new(21);
        let net = Mlp::new(&[3, 5, 2], 1.0, &mut rng);
        let j = net.input_jacobian(&Vector::zeros(3)).unwrap();
        let prod = &net.weights[1] * &net.weights[0];
        assert!(numerics::frobenius(&(j - prod)) < 1e-12);
    }

    #[test]
    fn batch_matches_per_sample() {
        let mut rng = Rng::new(33);
        let net = Mlp::new(&[3, 6, 2], 1.0, &mut rng);
        let xs: Vec<Vector> = (0..5).map(|_| Vector::from_vec(rng.normal_vec(3))).collect();
        let ups: Vec<Vector> = (0..5).map(|_| Vector::from_vec(rng.normal_vec(2))).collect();
        let xmat = Mat::from_columns(&xs);
        let umat = Mat::from_columns(&ups);
        let yb = net.forward_batch(&xmat).unwrap();
        for (k, x) in xs.iter().enumerate() {
            let y = net.forward(x).unwrap();
            assert!((yb.column(k) - y).norm() < 1e-14);
        }
        let gb = net.backward_batch(&xmat, &umat).unwrap().flatten();
        let mut acc = MlpGrads::zeros_like(&net);
        for (x, u) in xs.iter().zip(&ups) {
            acc.add_scaled(&net.backward(x, u).unwrap(), 1.0);
        }
        assert!((gb - acc.flatten()).norm() < 1e-11);
    }

    #[test]
    fn adam_zero_grad_no_move() {
        let mut adam = AdamState::new(3, 1e-3);
        let mut p = Vector::from_vec(vec![1.0, 2.0, 3.0]);
        let before = p.clone();
        assert!(adam.step(&mut p, &Vector::zeros(3)));
        assert_eq!(adam.step_count, 1);
        assert!((p - before).norm() == 0.0);
    }

    #[test]
    fn adam_first_step_closed_form() {
        // from zero moments: delta = -lr * g / (|g| + eps)
        let lr = 1e-3;
        let mut adam = AdamState::new(2, lr);
        let mut p = Vector::zeros(2);
        let g = Vector::from_vec(vec![0.5, -2.0]);
        adam.step(&mut p, &g);
        for i in 0..2 {
            let expect = -lr * g[i] / (g[i].abs() + adam.eps);
            assert!((p[i] - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn adam_constant_grad_moves_against_sign() {
        let mut adam = AdamState::new(1, 1e-2);
        let mut p = Vector::from_vec(vec![0.0]);
        let g = Vector::from_vec(vec![3.0]);
        for _ in 0..50 {
            adam.step(&mut p, &g);
        }
        assert!(p[0] < -0.1);
    }

    #[test]
    fn adam_skips_nonfinite() {
        let mut adam = AdamState::new(1, 1e-2);
        let mut p = Vector::from_vec(vec![1.0]);
        assert!(!adam.step(&mut p, &Vector::from_vec(vec![f64::NAN])));
        assert_eq!(p[0], 1.0);
    }

    #[test]
    fn gaussian_entropy_and_logprob_closed_forms() {
        let d = DiagGaussian::new(Vector::zeros(1), Vector::zeros(1));
        assert!((d.entropy() - 1.4189385332046727).abs() < 1e-12);
        assert!((d.log_prob(&Vector::zeros(1)) + 0.9189385332046727).abs() < 1e-12);
    }

    #[test]
    fn gaussian_entropy_monotone_in_log_std() {
        let lo = DiagGaussian::new(Vector::zeros(2), Vector::from_element(2, -0.5));
        let hi = DiagGaussian::new(Vector::zeros(2), Vector::from_element(2, 0.5));
        assert!(hi.entropy() > lo.entropy());
    }

    #[test]
    fn gaussian_entropy_matches_monte_carlo() {
        let mut rng = Rng::new(77);
        let d = DiagGaussian::new(
            Vector::from_vec(vec![0.3, -1.0, 2.0]),
            Vector::from_vec(vec![0.1, -0.4, 0.7]),
        );
        let n = 10_000;
        let mut lps = Vec::with_capacity(n);
        for _ in 0..n {
            let (x, _) = d.sample(&mut rng);
            lps.push(d.log_prob(&x));
        }
        let mean = -lps.iter().sum::<f64>() / n as f64;
        let var = lps
            .iter()
            .map(|&l| (-l - mean) * (-l - mean))
            .sum::<f64>()
            / (n as f64 - 1.0);
        let band = 3.0 * (var / n as f64).sqrt();
        assert!(
            (mean - d.entropy()).abs() <= band,
            "mc {mean} vs analytic {} (band {band})",
            d.entropy()
        );
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = Rng::new(5);
        let net = Mlp::new(&[3, 8, 2], 1e-2, &mut rng);
        let extra = Vector::from_vec(vec![-0.7, 0.2]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("actor.ckpt");
        let header = CheckpointHeader {
            widths: net.widths.clone(),
            role: "actor".into(),
            seed: 5,
            step: 42,
            extra: 2,
        };
        save_checkpoint(&path, &header, &net, Some(&extra)).unwrap();
        let (h2, net2, extra2) = load_checkpoint(&path).unwrap();
        assert_eq!(h2.role, "actor");
        assert_eq!(h2.step, 42);
        assert_eq!(net2.flatten(), net.flatten());
        assert_eq!(extra2.unwrap(), extra);
    }
}
