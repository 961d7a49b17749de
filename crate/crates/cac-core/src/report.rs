//! Evaluation metrics and theory checks: the modified AUC (MAUC) tracking
//! score, the geometric bound behind the contraction inequality, the
//! cost/reward equivalence on finite MDPs, convergence-trend fitting, and
//! report serialization.

use crate::numerics::Vector;
use crate::rng::Rng;
use crate::{CoreError, Result};
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;

// ---------------------------------------------------------------------------
// Tracking metrics
// ---------------------------------------------------------------------------

/// Normalized tracking-error curve `e_k = |x_k - xd_k| / |x_0 - xd_0|`.
/// Returns `None` when the initial error is zero (the episode is excluded
/// from MAUC and counted separately).
pub fn normalized_curve(states: &[Vector], refs: &[Vector]) -> Option<Vec<f64>> {
    normalized_curve_with(states, refs, |x, xd| x - xd)
}

/// `normalized_curve` with a caller-supplied displacement; environments with
/// an angular coordinate pass their shorter-arc difference so the error does
/// not jump by the angular span when the reference crosses the wrap boundary.
pub fn normalized_curve_with(
    states: &[Vector],
    refs: &[Vector],
    diff: impl Fn(&Vector, &Vector) -> Vector,
) -> Option<Vec<f64>> {
    let e0 = diff(&states[0], &refs[0]).norm();
    if e0 == 0.0 {
        return None;
    }
    Some(
        states
            .iter()
            .zip(refs)
            .map(|(x, xd)| diff(x, xd).norm() / e0)
            .collect(),
    )
}

/// Modified AUC: `(L / T) * sum_k e_k` where T is the executed length of the
/// curve and L the nominal horizon; early termination is penalized by L/T.
pub fn mauc(curve: &[f64], l: usize) -> Result<f64> {
    if curve.is_empty() {
        return Err(CoreError::Precondition("mauc of empty curve".into()));
    }
    let t = curve.len() as f64;
    Ok(l as f64 / t * curve.iter().sum::<f64>())
}

// ---------------------------------------------------------------------------
// Lemma checks
// ---------------------------------------------------------------------------

/// One geometric-bound check: partial sums of `C * exp(-2 lambda k dt)` stay
/// below `C / (1 - exp(-2 lambda dt))`. The bound printed with a positive
/// exponent in the source derivation is vacuous; this is the series-
/// consistent form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lemma1Record {
    pub lambda: f64,
    pub dt: f64,
    pub c: f64,
    pub steps: usize,
    pub partial_sum: f64,
    pub bound: f64,
    pub margin: f64,
    pub pass: bool,
}

pub fn lemma1_check(lambda: f64, dt: f64, c: f64, steps: usize) -> Lemma1Record {
    assert!(lambda > 0.0 && dt > 0.0, "contraction rate and step must be positive");
    let q = (-2.0 * lambda * dt).exp();
    let mut partial_sum = 0.0;
    for k in 0..=steps {
        partial_sum += c * q.powi(k as i32);
    }
    let bound = c / (1.0 - q);
    // slack absorbs summation round-off on fully converged series
    let margin = bound + 1e-9 - partial_sum;
    Lemma1Record {
        lambda,
        dt,
        c,
        steps,
        partial_sum,
        bound,
        margin,
        pass: margin >= 0.0,
    }
}

pub fn lemma1_sweep(rng: &mut Rng, n: usize) -> Vec<Lemma1Record> {
    (0..n)
        .map(|_| {
            let lambda = rng.uniform(0.01, 3.0);
            let dt = rng.uniform(0.001, 0.5);
            let c = rng.uniform(0.0, 100.0);
            let steps = rng.uniform(1.0, 2000.0) as usize;
            lemma1_check(lambda, dt, c, steps)
        })
        .collect()
}

/// Cost/reward equivalence on random finite MDPs: with rewards in [0, 1]
/// and costs 1 - reward, the set of deterministic policies maximizing
/// discounted reward equals the set minimizing discounted cost. Values are
/// computed by the exact linear solve `(I - gamma P_pi) v = r_pi` and all
/// policies are enumerated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lemma2Record {
    pub mdps: usize,
    pub states: usize,
    pub actions: usize,
    pub gamma: f64,
    pub mismatches: usize,
    pub pass: bool,
}

const LEMMA2_STATES: usize = 5;
const LEMMA2_ACTIONS: usize = 3;
const LEMMA2_GAMMA: f64 = 0.9;

struct Mdp {
    // transition[s][a] is a probability row over next states
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
}

fn random_mdp(ns: usize, na: usize, rng: &mut Rng) -> Mdp {
    let transition = (0..ns)
        .map(|_| {
            (0..na)
                .map(|_| {
                    let mut row: Vec<f64> = (0..ns).map(|_| rng.uniform(1e-3, 1.0)).collect();
                    let z: f64 = row.iter().sum();
                    row.iter_mut().for_each(|p| *p /= z);
                    row
                })
                .collect()
        })
        .collect();
    let reward = (0..ns)
        .map(|_| (0..na).map(|_| rng.uniform(0.0, 1.0)).collect())
        .collect();
    Mdp { transition, reward }
}

/// Discounted value of state 0 under a deterministic policy, by linear solve.
fn policy_value(mdp: &Mdp, policy: &[usize], gamma: f64, cost: bool) -> f64 {
    let ns = policy.len();
    let mut a = crate::numerics::Mat::identity(ns, ns);
    let mut r = Vector::zeros(ns);
    for s in 0..ns {
        let act = policy[s];
        for sp in 0..ns {
            a[(s, sp)] -= gamma * mdp.transition[s][act][sp];
        }
        r[s] = if cost {
            1.0 - mdp.reward[s][act]
        } else {
            mdp.reward[s][act]
        };
    }
    let v = a.lu().solve(&r).expect("value solve");
    v[0]
}

fn argopt_set(values: &[f64], maximize: bool, tol: f64) -> Vec<usize> {
    let best = values
        .iter()
        .cloned()
        .fold(if maximize { f64::MIN } else { f64::MAX }, |acc, v| {
            if maximize {
                acc.max(v)
            } else {
                acc.min(v)
            }
        });
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| (v - best).abs() <= tol)
        .map(|(i, _)| i)
        .collect()
}

fn lemma2_single(mdp: &Mdp, gamma: f64) -> bool {
    let ns = mdp.reward.len();
    let na = mdp.reward[0].len();
    let n_pol = na.pow(ns as u32);
    let mut rewards = Vec::with_capacity(n_pol);
    let mut costs = Vec::with_capacity(n_pol);
    for p in 0..n_pol {
        let mut code = p;
        let policy: Vec<usize> = (0..ns)
            .map(|_| {
                let a = code % na;
                code /= na;
                a
            })
            .collect();
        rewards.push(policy_value(mdp, &policy, gamma, false));
        costs.push(policy_value(mdp, &policy, gamma, true));
    }
    argopt_set(&rewards, true, 1e-9) == argopt_set(&costs, false, 1e-9)
}

pub fn lemma2_check(rng: &mut Rng, n_mdps: usize) -> Lemma2Record {
    let mut mismatches = 0;
    for _ in 0..n_mdps {
        let mdp = random_mdp(LEMMA2_STATES, LEMMA2_ACTIONS, rng);
        if !lemma2_single(&mdp, LEMMA2_GAMMA) {
            mismatches += 1;
        }
    }
    Lemma2Record {
        mdps: n_mdps,
        states: LEMMA2_STATES,
        actions: LEMMA2_ACTIONS,
        gamma: LEMMA2_GAMMA,
        mismatches,
        pass: mismatches == 0,
    }
}

// ---------------------------------------------------------------------------
// Convergence trend
// ---------------------------------------------------------------------------

/// Finite-horizon convergence summary: mean error over the final 10% of
/// steps and the exponential rate fitted to the log of each curve. True
/// asymptotics are not testable at finite horizon, so this reports trends
/// only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendRecord {
    pub final_tenth_mean: f64,
    pub fitted_rate: f64,
    pub episodes: usize,
}

pub fn convergence_trend(curves: &[Vec<f64>]) -> Result<TrendRecord> {
    if curves.len() < 10 {
        return Err(CoreError::Precondition(format!(
            "convergence trend needs >= 10 episodes, got {}",
            curves.len()
        )));
    }
    let mut tail_sum = 0.0;
    let mut tail_count = 0usize;
    let mut rates = Vec::with_capacity(curves.len());
    for curve in curves {
        let start = curve.len() - (curve.len() / 10).max(1);
        for &e in &curve[start..] {
            tail_sum += e;
            tail_count += 1;
        }
        if let Some(rate) = fit_log_rate(curve) {
            rates.push(rate);
        }
    }
    let fitted_rate = if rates.is_empty() {
        0.0
    } else {
        rates.iter().sum::<f64>() / rates.len() as f64
    };
    Ok(TrendRecord {
        final_tenth_mean: tail_sum / tail_count.max(1) as f64,
        fitted_rate,
        episodes: curves.len(),
    })
}

/// Least-squares slope of `ln e_k` against k; the decay rate is its
/// negation. Entries at or below zero are skipped.
fn fit_log_rate(curve: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 1e-12)
        .map(|(k, &e)| (k as f64, e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return None;
    }
    Some(-(n * sxy - sx * sy) / denom)
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub ci_half_width: f64,
    pub n: usize,
    pub confidence: f64,
}

/// Mean with a normal-approximation confidence interval
/// (half-width `z * s / sqrt(n)`).
pub fn aggregate(values: &[f64], confidence: f64) -> Result<Summary> {
    if values.len() < 2 {
        return Err(CoreError::Precondition(
            "aggregate needs at least two runs".into(),
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let z = probit(0.5 + confidence / 2.0);
    Ok(Summary {
        mean,
        ci_half_width: z * var.sqrt() / n.sqrt(),
        n: values.len(),
        confidence,
    })
}

/// Inverse standard-normal CDF (Acklam's rational approximation,
/// |error| < 1.2e-9 on (0, 1)).
fn probit(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probit domain");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -probit(1.0 - p)
    }
}

// ---------------------------------------------------------------------------
// Report bundle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoryReport {
    pub lemma1_pass: bool,
    pub lemma1_min_margin: f64,
    pub lemma1_triples: usize,
    pub lemma2: Lemma2Record,
}

pub fn theory_report(rng: &mut Rng, lemma1_triples: usize, lemma2_mdps: usize) -> TheoryReport {
    let l1 = lemma1_sweep(&mut rng.split("lemma1"), lemma1_triples);
    let lemma2 = lemma2_check(&mut rng.split("lemma2"), lemma2_mdps);
    TheoryReport {
        lemma1_pass: l1.iter().all(|r| r.pass),
        lemma1_min_margin: l1.iter().map(|r| r.margin).fold(f64::MAX, f64::min),
        lemma1_triples: l1.len(),
        lemma2,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub env: String,
    pub seed: u64,
    pub episodes: usize,
    pub excluded_episodes: usize,
    pub mauc: Summary,
    pub trend: Option<TrendRecord>,
    pub theory: Option<TheoryReport>,
}

/// Writes `report.json`, `curves.csv` (episode x step normalized errors) and
/// `mauc.csv` (per-episode MAUC) into `dir`.
pub fn write_report(
    dir: &Path,
    report: &RunReport,
    curves: &[Vec<f64>],
    maucs: &[f64],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(dir.join("report.json"), json + "\n")?;

    let mut f = std::fs::File::create(dir.join("curves.csv"))?;
    writeln!(f, "episode,step,normalized_error")?;
    for (ep, curve) in curves.iter().enumerate() {
        for (k, e) in curve.iter().enumerate() {
            writeln!(f, "{ep},{k},{e}")?;
        }
    }

    let mut f = std::fs::File::create(dir.join("mauc.csv"))?;
    writeln!(f, "episode,mauc")?;
    for (ep, m) in maucs.iter().enumerate() {
        writeln!(f, "{ep},{m}")?;
    }
    Ok(())
}

/// Stage manifest tying artifacts to the configuration that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(manifest)?;
    std::fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(())
}
