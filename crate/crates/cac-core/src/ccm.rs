//! Contraction metric generator (CMG) and the contraction/CCM condition
//! matrices and losses.
//!
//! The CMG maps a state to a Gaussian distribution over lower-triangular
//! factors; a sampled factor L yields the dual metric
//! `W = s * L L^T + w_lb * I` with `s` chosen so the spectrum stays inside
//! `[w_lb, w_ub]`, and `M = W^{-1}`. Condition matrices:
//!
//! * `C_M   = Mdot + M S + S^T M + 2 lambda M`, `S = A + B K`
//! * `C_W1  = Bp^T (-d_f W + J_f W + W J_f^T + 2 lambda W) Bp`
//! * `C_W2j = Bp^T ( d_bj W - (J_bj W + W J_bj^T)) Bp`
//!
//! where `d_v W` is the Lie derivative of W along v and `Bp` spans the null
//! space of `B^T`. All directional derivatives of network-valued fields use
//! central differences, and the CMG loss gradient is propagated through
//! every finite-difference evaluation point.

use crate::net::{DiagGaussian, Mlp, MlpGrads};
use crate::numerics::{self, Mat, Vector};
use crate::rng::Rng;
use crate::sysid::DynModel;
use crate::{CoreError, Result};
use std::io::Write as _;
use std::path::Path;

pub const CMG_WIDTHS: [usize; 2] = [128, 128];
pub const DEFAULT_W_LB: f64 = 0.1;
pub const DEFAULT_W_UB: f64 = 10.0;
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_BETA_M: f64 = 1e-2;
pub const DEFAULT_N_Z: usize = 32;
const INIT_LOG_STD: f64 = -2.3; // std ~ 0.1 over factor entries

/// Entropy weight `alpha(r) = beta_m * exp(-r)`.
pub fn alpha(reward: f64, beta_m: f64) -> f64 {
    beta_m * (-reward).exp()
}

pub fn tril_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

fn tril_from_vec(n: usize, v: &Vector) -> Mat {
    let mut l = Mat::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in 0..=i {
            l[(i, j)] = v[k];
            k += 1;
        }
    }
    l
}

fn tril_to_vec(n: usize, m: &Mat) -> Vector {
    let mut v = Vector::zeros(tril_dim(n));
    let mut k = 0;
    for i in 0..n {
        for j in 0..=i {
            v[k] = m[(i, j)];
            k += 1;
        }
    }
    v
}

// ---------------------------------------------------------------------------
// Metric construction
// ---------------------------------------------------------------------------

/// Cached intermediates of the bounded-metric construction, kept for the
/// reverse pass.
#[derive(Debug, Clone)]
struct WBuild {
    l: Mat,
    p: Mat,       // L L^T
    scale: f64,   // min(1, (w_ub - w_lb) / lambda_max(P))
    lam_max: f64,
    vmax: Vector, // top eigenvector of P
}

fn build_w(n: usize, factor: &Vector, w_lb: f64, w_ub: f64) -> (Mat, WBuild) {
    let l = tril_from_vec(n, factor);
    let p = &l * l.transpose();
    let (lam_max, vmax) = numerics::max_eig_sym(&p);
    let cap = w_ub - w_lb;
    let scale = if lam_max > cap { cap / lam_max } else { 1.0 };
    let w = &p * scale + Mat::identity(n, n) * w_lb;
    (
        w,
        WBuild {
            l,
            p,
            scale,
            lam_max,
            vmax,
        },
    )
}

/// A metric drawn from the generator: dual metric W, metric M = W^{-1},
/// log-density and entropy of the underlying Gaussian over factors.
#[derive(Debug, Clone)]
pub struct MetricSample {
    pub w: Mat,
    pub m: Mat,
    pub log_prob: f64,
    pub entropy: f64,
}

/// Contraction metric generator: a trunk network emitting the mean factor
/// entries plus a state-independent log-std parameter vector.
#[derive(Debug, Clone)]
pub struct CmgNet {
    pub net: Mlp,
    pub log_std: Vector,
    pub w_lb: f64,
    pub w_ub: f64,
    pub n: usize,
}

impl CmgNet {
    pub fn new(n: usize, rng: &mut Rng) -> Self {
        let d = tril_dim(n);
        let widths = [n, CMG_WIDTHS[0], CMG_WIDTHS[1], d];
        let mut net = Mlp::new(&widths, 1e-2, rng);
        // bias the factor diagonal so the initial dual metric sits mid-range
        // (W ~ I) instead of at the w_lb floor, where M = W^{-1} saturates
        // the tracking reward
        let head = net.biases.len() - 1;
        let mut k = 0;
        for i in 0..n {
            for j in 0..=i {
                if i == j {
                    net.biases[head][k] = (1.0 - DEFAULT_W_LB).sqrt();
                }
                k += 1;
            }
        }
        CmgNet {
            net,
            log_std: Vector::from_element(
                d,
                std::env::var("CMG_LOG_STD")
                    .ok()
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(INIT_LOG_STD),
            ),
            w_lb: DEFAULT_W_LB,
            w_ub: DEFAULT_W_UB,
            n,
        }
    }

    fn dist_at(&self, x: &Vector) -> Result<DiagGaussian> {
        Ok(DiagGaussian::new(self.net.forward(x)?, self.log_std.clone()))
    }

    /// Deterministic dual metric from the head mean (used inside losses).
    pub fn mean_w(&self, x: &Vector) -> Result<Mat> {
        let o = self.net.forward(x)?;
        Ok(build_w(self.n, &o, self.w_lb, self.w_ub).0)
    }

    /// Reparameterized metric sample with log-density and entropy.
    pub fn sample_metric(&self, x: &Vector, rng: &mut Rng) -> Result<MetricSample> {
        let dist = self.dist_at(x)?;
        let (factor, _) = dist.sample(rng);
        let (w, _) = build_w(self.n, &factor, self.w_lb, self.w_ub);
        let m = invert_spd(&w)?;
        Ok(MetricSample {
            w,
            m,
            log_prob: dist.log_prob(&factor),
            entropy: dist.entropy(),
        })
    }

    pub fn entropy(&self) -> f64 {
        DiagGaussian::new(Vector::zeros(self.log_std.len()), self.log_std.clone()).entropy()
    }

    pub fn save(&self, path: &std::path::Path, seed: u64, step: u64) -> Result<()> {
        crate::net::save_checkpoint(
            path,
            &crate::net::CheckpointHeader {
                widths: self.net.widths.clone(),
                role: format!("cmg:{}:{}", self.w_lb, self.w_ub),
                seed,
                step,
                extra: self.log_std.len(),
            },
            &self.net,
            Some(&self.log_std),
        )
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (h, net, extra) = crate::net::load_checkpoint(path)?;
        let n = h.widths[0];
        let log_std =
            extra.ok_or_else(|| CoreError::Checkpoint("cmg checkpoint missing log-std".into()))?;
        let mut parts = h.role.split(':');
        let _ = parts.next();
        let w_lb = parts.next().and_then(|s| s.parse().ok()).unwrap_or(DEFAULT_W_LB);
        let w_ub = parts.next().and_then(|s| s.parse().ok()).unwrap_or(DEFAULT_W_UB);
        Ok(CmgNet {
            net,
            log_std,
            w_lb,
            w_ub,
            n,
        })
    }
}

fn invert_spd(w: &Mat) -> Result<Mat> {
    let m = w
        .clone()
        .try_inverse()
        .ok_or_else(|| CoreError::Other("metric inversion failed (bounds violated?)".into()))?;
    Ok(numerics::symmetrize(&m))
}

// ---------------------------------------------------------------------------
// Positive-definiteness penalty
// ---------------------------------------------------------------------------

/// Hinge penalty on non-positive-semidefiniteness:
/// `mean_z max(0, -z^T A z)` with `z ~ Uniform(-1, 1)^n`. Zero exactly when
/// A is PSD.
pub fn l_pd(a: &Mat, rng: &mut Rng, n_z: usize) -> f64 {
    let zs = draw_probes(a.nrows(), n_z, rng);
    l_pd_with(a, &zs).0
}

pub(crate) fn draw_probes(n: usize, n_z: usize, rng: &mut Rng) -> Vec<Vector> {
    (0..n_z)
        .map(|_| Vector::from_vec(rng.uniform_vec(-1.0, 1.0, n)))
        .collect()
}

/// Penalty value plus its gradient with respect to A, for fixed probes.
pub(crate) fn l_pd_with(a: &Mat, zs: &[Vector]) -> (f64, Mat) {
    let n = a.nrows();
    let mut val = 0.0;
    let mut grad = Mat::zeros(n, n);
    for z in zs {
        let q = -z.dot(&(a * z));
        if q > 0.0 {
            val += q;
            grad -= z * z.transpose();
        }
    }
    let scale = 1.0 / zs.len() as f64;
    (val * scale, grad * scale)
}

// ---------------------------------------------------------------------------
// Linearized dynamics at a point
// ---------------------------------------------------------------------------

/// Everything about the learned dynamics at `(x, u)` that the condition
/// matrices need and that does not depend on the CMG parameters.
#[derive(Debug, Clone)]
pub struct LinearizedDynamics {
    pub fhat: Vector,
    pub bhat: Mat,
    /// Closed-loop drift `fhat + bhat * u`.
    pub v: Vector,
    /// `J_f + sum_j u_j J_bj`.
    pub a: Mat,
    pub jf: Mat,
    pub jb: Vec<Mat>,
    pub bperp: Mat,
}

pub fn linearize(model: &DynModel, x: &Vector, u: &Vector) -> Result<LinearizedDynamics> {
    let (fhat, bhat) = model.predict(x)?;
    let jf = numerics::fd_jacobian(|y| model.fnet.forward(y).expect("fnet eval"), x)?;
    let jb_full = numerics::fd_jacobian(|y| model.bnet.forward(y).expect("bnet eval"), x)?;
    let n = model.n;
    let m = model.m;
    let mut jb = Vec::with_capacity(m);
    for j in 0..m {
        jb.push(Mat::from_fn(n, n, |r, c| jb_full[(r * m + j, c)]));
    }
    let mut a = jf.clone();
    for j in 0..m {
        a += &jb[j] * u[j];
    }
    let bperp = numerics::null_space(&bhat)?;
    let v = &fhat + &bhat * u;
    Ok(LinearizedDynamics {
        fhat,
        bhat,
        v,
        a,
        jf,
        jb,
        bperp,
    })
}

// ---------------------------------------------------------------------------
// Condition matrices from a metric field sampled on a finite-difference star
// ---------------------------------------------------------------------------

/// Dual metric (and its inverse) evaluated at the center point and at
/// `x +- h_i e_i`; index 0 is the center, `1 + 2i` / `2 + 2i` the +/-
/// perturbations of coordinate i.
struct MetricPoints {
    w: Vec<Mat>,
    m: Vec<Mat>,
    steps: Vec<f64>,
}

fn point_index(i: usize, positive: bool) -> usize {
    if positive {
        1 + 2 * i
    } else {
        2 + 2 * i
    }
}

fn fd_points(x: &Vector) -> (Vec<Vector>, Vec<f64>) {
    let steps = numerics::fd_steps(x);
    let mut pts = vec![x.clone()];
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp[i] += steps[i];
        pts.push(xp);
        let mut xm = x.clone();
        xm[i] -= steps[i];
        pts.push(xm);
    }
    (pts, steps)
}

fn metric_points<WF>(wfun: &WF, x: &Vector, need_m: bool) -> Result<MetricPoints>
where
    WF: Fn(&Vector) -> Mat,
{
    let (pts, steps) = fd_points(x);
    let w: Vec<Mat> = pts.iter().map(wfun).collect();
    let m = if need_m {
        w.iter().map(invert_spd).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(MetricPoints { w, m, steps })
}

/// Lie derivative along `v` from precomputed point evaluations.
fn lie_from_points(points: &[Mat], steps: &[f64], v: &Vector) -> Mat {
    let shape = points[0].shape();
    let mut out = Mat::zeros(shape.0, shape.1);
    for i in 0..v.len() {
        if v[i] == 0.0 {
            continue;
        }
        let c = v[i] / (2.0 * steps[i]);
        out += (&points[point_index(i, true)] - &points[point_index(i, false)]) * c;
    }
    out
}

fn cm_from_points(mp: &MetricPoints, s: &Mat, v: &Vector, lambda: f64) -> Mat {
    let mdot = lie_from_points(&mp.m, &mp.steps, v);
    let m0 = &mp.m[0];
    let raw = mdot + m0 * s + s.transpose() * m0 + m0 * (2.0 * lambda);
    numerics::symmetrize(&raw)
}

fn cw1_from_points(mp: &MetricPoints, lin: &LinearizedDynamics, lambda: f64) -> Mat {
    let dfw = lie_from_points(&mp.w, &mp.steps, &lin.fhat);
    let w0 = &mp.w[0];
    let inner = -dfw + &lin.jf * w0 + w0 * lin.jf.transpose() + w0 * (2.0 * lambda);
    numerics::symmetrize(&(lin.bperp.transpose() * inner * &lin.bperp))
}

fn cw2_from_points(mp: &MetricPoints, lin: &LinearizedDynamics, j: usize) -> Mat {
    let bj = lin.bhat.column(j).into_owned();
    let dbw = lie_from_points(&mp.w, &mp.steps, &bj);
    let w0 = &mp.w[0];
    let inner = dbw - (&lin.jb[j] * w0 + w0 * lin.jb[j].transpose());
    numerics::symmetrize(&(lin.bperp.transpose() * inner * &lin.bperp))
}

/// Contraction condition matrix `C_M` (Mdot + M S + S^T M + 2 lambda M)
/// for an arbitrary dual-metric field and feedback gain `k_gain`.
pub fn contraction_matrix<WF>(
    wfun: &WF,
    lin: &LinearizedDynamics,
    k_gain: &Mat,
    x: &Vector,
    lambda: f64,
) -> Result<Mat>
where
    WF: Fn(&Vector) -> Mat,
{
    let mp = metric_points(wfun, x, true)?;
    let s = &lin.a + &lin.bhat * k_gain;
    Ok(cm_from_points(&mp, &s, &lin.v, lambda))
}

/// CCM inequality-condition matrix `C_W1` on the unactuated subspace.
pub fn ccm_inequality<WF>(wfun: &WF, lin: &LinearizedDynamics, x: &Vector, lambda: f64) -> Result<Mat>
where
    WF: Fn(&Vector) -> Mat,
{
    let mp = metric_points(wfun, x, false)?;
    Ok(cw1_from_points(&mp, lin, lambda))
}

/// CCM equality-condition matrices `C_W2^j`, one per actuation column.
pub fn ccm_equalities<WF>(wfun: &WF, lin: &LinearizedDynamics, x: &Vector) -> Result<Vec<Mat>>
where
    WF: Fn(&Vector) -> Mat,
{
    let mp = metric_points(wfun, x, false)?;
    Ok((0..lin.bhat.ncols())
        .map(|j| cw2_from_points(&mp, lin, j))
        .collect())
}

// ---------------------------------------------------------------------------
// CMG loss
// ---------------------------------------------------------------------------

/// One on-policy sample feeding the CMG loss. `reward` excludes the policy
/// entropy bonus; `k_gain` is the actor's feedback gain at this sample.
#[derive(Debug, Clone)]
pub struct CmgBatchItem {
    pub x: Vector,
    pub u: Vector,
    pub reward: f64,
    pub k_gain: Mat,
}

#[derive(Debug, Clone)]
pub struct CmgGrads {
    pub net: MlpGrads,
    pub log_std: Vector,
}

#[derive(Debug, Clone, Copy)]
pub struct CcmConfig {
    pub lambda: f64,
    pub beta_m: f64,
    pub n_z: usize,
}

impl Default for CcmConfig {
    fn default() -> Self {
        CcmConfig {
            lambda: DEFAULT_LAMBDA,
            beta_m: DEFAULT_BETA_M,
            n_z: DEFAULT_N_Z,
        }
    }
}

/// CMG training loss over an on-policy batch:
/// `mean[L_PD(-C_M) + L_PD(-C_W1) + sum_j |C_W2^j|_F] - mean[alpha(r)] * H`,
/// together with its gradient with respect to the CMG parameters only
/// (dynamics model and actor are frozen). Condition matrices are evaluated
/// at the deterministic head mean; the entropy term is closed-form in the
/// log-std parameters.
pub fn cmg_loss(
    model: &DynModel,
    cmg: &CmgNet,
    batch: &[CmgBatchItem],
    cfg: &CcmConfig,
    rng: &mut Rng,
) -> Result<(f64, CmgGrads)> {
    if batch.is_empty() {
        return Err(CoreError::Precondition("cmg_loss on empty batch".into()));
    }
    let n = cmg.n;
    let inv_b = 1.0 / batch.len() as f64;
    let mut penalty_sum = 0.0;
    let mut alpha_sum = 0.0;

    // one backward pass over all (point, upstream) pairs at the end
    let mut xs: Vec<Vector> = Vec::with_capacity(batch.len() * (2 * n + 1));
    let mut ups: Vec<Vector> = Vec::with_capacity(xs.capacity());

    for item in batch {
        let lin = linearize(model, &item.x, &item.u)?;
        let (pts, steps) = fd_points(&item.x);

        // forward the CMG mean head at every star point
        let mut builds = Vec::with_capacity(pts.len());
        let mut w = Vec::with_capacity(pts.len());
        let mut m = Vec::with_capacity(pts.len());
        for p in &pts {
            let o = cmg.net.forward(p)?;
            let (wk, cache) = build_w(n, &o, cmg.w_lb, cmg.w_ub);
            m.push(invert_spd(&wk)?);
            w.push(wk);
            builds.push(cache);
        }
        let mp = MetricPoints {
            w,
            m,
            steps: steps.clone(),
        };

        let s = &lin.a + &lin.bhat * &item.k_gain;
        let c_m = cm_from_points(&mp, &s, &lin.v, cfg.lambda);
        let c_w1 = cw1_from_points(&mp, &lin, cfg.lambda);
        let c_w2: Vec<Mat> = (0..model.m).map(|j| cw2_from_points(&mp, &lin, j)).collect();

        let z_cm = draw_probes(n, cfg.n_z, rng);
        let z_cw1 = draw_probes(c_w1.nrows(), cfg.n_z, rng);
        let (p_cm, g_cm) = l_pd_with(&(-&c_m), &z_cm);
        let (p_cw1, g_cw1) = l_pd_with(&(-&c_w1), &z_cw1);
        // l_pd(-C) as a function of C: d/dC = -(d l_pd/dA at A=-C)
        let g_cm = -g_cm;
        let g_cw1 = -g_cw1;

        let mut pen = p_cm + p_cw1;
        let mut g_f2: Vec<Mat> = Vec::with_capacity(c_w2.len());
        for c in &c_w2 {
            let norm = numerics::frobenius(c);
            pen += norm;
            g_f2.push(if norm > 1e-12 {
                c / norm
            } else {
                Mat::zeros(c.nrows(), c.ncols())
            });
        }
        penalty_sum += pen;
        alpha_sum += alpha(item.reward, cfg.beta_m);

        // --- reverse pass: condition gradients -> per-point W gradients ---
        let npts = pts.len();
        let mut gw: Vec<Mat> = (0..npts).map(|_| Mat::zeros(n, n)).collect();
        let mut gm: Vec<Mat> = (0..npts).map(|_| Mat::zeros(n, n)).collect();

        // C_M: Mdot term spreads over the star, the rest hits the center M
        for i in 0..n {
            let c = lin.v[i] / (2.0 * steps[i]);
            if c != 0.0 {
                gm[point_index(i, true)] += &g_cm * c;
                gm[point_index(i, false)] -= &g_cm * c;
            }
        }
        gm[0] += &g_cm * s.transpose() + &s * &g_cm + &g_cm * (2.0 * cfg.lambda);

        // C_W1
        let gx1 = &lin.bperp * &g_cw1 * lin.bperp.transpose();
        for i in 0..n {
            let c = lin.fhat[i] / (2.0 * steps[i]);
            if c != 0.0 {
                gw[point_index(i, true)] -= &gx1 * c;
                gw[point_index(i, false)] += &gx1 * c;
            }
        }
        gw[0] += lin.jf.transpose() * &gx1 + &gx1 * &lin.jf + &gx1 * (2.0 * cfg.lambda);

        // C_W2
        for (j, g2) in g_f2.iter().enumerate() {
            let gx = &lin.bperp * g2 * lin.bperp.transpose();
            let bj = lin.bhat.column(j);
            for i in 0..n {
                let c = bj[i] / (2.0 * steps[i]);
                if c != 0.0 {
                    gw[point_index(i, true)] += &gx * c;
                    gw[point_index(i, false)] -= &gx * c;
                }
            }
            gw[0] -= lin.jb[j].transpose() * &gx + &gx * &lin.jb[j];
        }

        // M = W^{-1}: dM = -M dW M
        for k in 0..npts {
            if gm[k].iter().any(|v| *v != 0.0) {
                let sym = numerics::symmetrize(&gm[k]);
                gw[k] -= &mp.m[k] * sym * &mp.m[k];
            }
        }

        // W = s(P) P + w_lb I, P = L L^T: chain to the head output entries
        for k in 0..npts {
            let cache = &builds[k];
            let gwk = numerics::symmetrize(&gw[k]);
            let gp = if cache.scale < 1.0 {
                let t = (gwk.component_mul(&cache.p)).sum();
                &gwk * cache.scale
                    - &cache.vmax * cache.vmax.transpose() * (cache.scale / cache.lam_max * t)
            } else {
                gwk
            };
            let gl = (&gp + gp.transpose()) * &cache.l;
            xs.push(pts[k].clone());
            ups.push(tril_to_vec(n, &gl) * inv_b);
        }
    }

    let loss = penalty_sum * inv_b - alpha_sum * inv_b * cmg.entropy();
    if !loss.is_finite() {
        return Err(CoreError::Diverged("cmg loss non-finite".into()));
    }

    let xmat = Mat::from_columns(&xs);
    let umat = Mat::from_columns(&ups);
    let net_grads = cmg.net.backward_batch(&xmat, &umat)?;

    // entropy is sum(log sigma) + const; clamped entries get zero gradient
    let mean_alpha = alpha_sum * inv_b;
    let log_std_grad = Vector::from_fn(cmg.log_std.len(), |i, _| {
        let s = cmg.log_std[i].exp();
        if s <= crate::net::STD_MIN || s >= crate::net::STD_MAX {
            0.0
        } else {
            -mean_alpha
        }
    });

    Ok((
        loss,
        CmgGrads {
            net: net_grads,
            log_std: log_std_grad,
        },
    ))
}

// ---------------------------------------------------------------------------
// Certificate audit
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AuditRow {
    pub x: Vector,
    pub min_eig_cm: f64,
    pub min_eig_cw1: f64,
    pub cw2_frobenius: f64,
}

/// Evaluate the conditions at the CMG mean metric for one state.
pub fn audit_state(
    model: &DynModel,
    cmg: &CmgNet,
    x: &Vector,
    u: &Vector,
    k_gain: &Mat,
    lambda: f64,
) -> Result<AuditRow> {
    let lin = linearize(model, x, u)?;
    let wfun = |y: &Vector| cmg.mean_w(y).expect("cmg eval");
    let c_m = contraction_matrix(&wfun, &lin, k_gain, x, lambda)?;
    let c_w1 = ccm_inequality(&wfun, &lin, x, lambda)?;
    let c_w2 = ccm_equalities(&wfun, &lin, x)?;
    Ok(AuditRow {
        x: x.clone(),
        min_eig_cm: numerics::min_eig_sym(&c_m)?,
        min_eig_cw1: numerics::min_eig_sym(&c_w1)?,
        cw2_frobenius: c_w2.iter().map(numerics::frobenius).sum(),
    })
}

/// `ccm-audit` CSV: per sampled state, min_eig(C_M), min_eig(C_W1),
/// sum of Frobenius norms of C_W2.
pub fn write_ccm_audit(path: &Path, rows: &[AuditRow]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let n = rows.first().map_or(0, |r| r.x.len());
    let mut header = String::new();
    for i in 0..n {
        header.push_str(&format!("x{i},"));
    }
    header.push_str("min_eig_cm,min_eig_cw1,cw2_frobenius");
    writeln!(f, "{header}")?;
    for r in rows {
        let mut line = String::new();
        for v in r.x.iter() {
            line.push_str(&format!("{v},"));
        }
        line.push_str(&format!(
            "{},{},{}",
            r.min_eig_cm, r.min_eig_cw1, r.cw2_frobenius
        ));
        writeln!(f, "{line}")?;
    }
    Ok(())
}
