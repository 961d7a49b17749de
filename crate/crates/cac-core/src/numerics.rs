//! Dense linear algebra and differentiation utilities shared by all modules.

use crate::{CoreError, Result};
use nalgebra::{DMatrix, DVector};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative singular-value cutoff for numerical rank.
pub const RANK_CUTOFF: f64 = 1e-10;

/// Default relative finite-difference step.
pub const FD_STEP: f64 = 1e-4;

pub fn all_finite_mat(a: &Mat) -> bool {
    a.iter().all(|v| v.is_finite())
}

pub fn all_finite_vec(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Symmetric part `(A + A^T) / 2`.
pub fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

/// `A + A^T`, the (unhalved) symmetrization used by the contraction
/// condition matrices.
pub fn sym2(a: &Mat) -> Mat {
    a + a.transpose()
}

pub fn frobenius(a: &Mat) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Orthonormal basis of the null space of `B^T`, taken from the
/// left-singular vectors beyond the numerical rank of `B`.
///
/// Rank uses the cutoff `RANK_CUTOFF * sigma_max`. Errors when `B` has full
/// row rank (fully actuated case; no unactuated directions exist).
pub fn null_space(b: &Mat) -> Result<Mat> {
    let n = b.nrows();
    if n == 0 || b.ncols() == 0 {
        return Err(CoreError::Precondition("null_space on empty matrix".into()));
    }
    if !all_finite_mat(b) {
        return Err(CoreError::NonFinite("null_space input".into()));
    }
    let svd = b.clone().svd(true, false);
    let u = svd.u.as_ref().expect("svd with u requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = RANK_CUTOFF * sigma_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank >= n {
        return Err(CoreError::EmptyNullSpace { rank });
    }
    // `nalgebra` computes the thin SVD (U is n x min(n, m)); complete the
    // basis to all of R^n before selecting the trailing columns.
    let u_full = complete_orthonormal(u, n);
    Ok(u_full.columns(rank, n - rank).into_owned())
}

/// Extend the orthonormal columns of `u` to a full orthonormal basis of R^n
/// via Gram-Schmidt against the standard basis.
fn complete_orthonormal(u: &Mat, n: usize) -> Mat {
    let mut cols: Vec<Vector> = (0..u.ncols()).map(|j| u.column(j).into_owned()).collect();
    let mut e = 0usize;
    while cols.len() < n && e < n {
        let mut v = Vector::zeros(n);
        v[e] = 1.0;
        for c in &cols {
            let proj = c.dot(&v);
            v -= c * proj;
        }
        let norm = v.norm();
        if norm > 1e-8 {
            cols.push(v / norm);
        }
        e += 1;
    }
    Mat::from_columns(&cols)
}

/// Smallest eigenvalue of a symmetric matrix.
///
/// The input is symmetrized first; asymmetry beyond 1e-9 (relative to the
/// largest entry) is rejected.
pub fn min_eig_sym(a: &Mat) -> Result<f64> {
    if !all_finite_mat(a) {
        return Err(CoreError::NonFinite("min_eig_sym input".into()));
    }
    let scale = a.iter().map(|v| v.abs()).fold(1.0, f64::max);
    let asym = (a - a.transpose()).iter().map(|v| v.abs()).fold(0.0, f64::max);
    if asym > 1e-9 * scale.max(1.0) {
        return Err(CoreError::NotSymmetric(asym));
    }
    let s = symmetrize(a);
    let eig = s.symmetric_eigen();
    Ok(eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Largest eigenvalue (and its unit eigenvector) of a symmetric matrix.
pub fn max_eig_sym(a: &Mat) -> (f64, Vector) {
    let eig = symmetrize(a).symmetric_eigen();
    let mut best = 0usize;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    (eig.eigenvalues[best], eig.eigenvectors.column(best).into_owned())
}

/// Per-coordinate central-difference step `FD_STEP * max(1, |x_i|)`.
pub fn fd_steps(x: &Vector) -> Vec<f64> {
    x.iter().map(|&xi| FD_STEP * xi.abs().max(1.0)).collect()
}

/// Central-difference Jacobian of a vector function.
pub fn fd_jacobian<F>(g: F, x: &Vector) -> Result<Mat>
where
    F: Fn(&Vector) -> Vector,
{
    let steps = fd_steps(x);
    fd_jacobian_with_steps(g, x, &steps)
}

pub fn fd_jacobian_with_steps<F>(g: F, x: &Vector, steps: &[f64]) -> Result<Mat>
where
    F: Fn(&Vector) -> Vector,
{
    let n = x.len();
    let mut cols: Vec<Vector> = Vec::with_capacity(n);
    for i in 0..n {
        let h = steps[i];
        let mut xp = x.clone();
        xp[i] += h;
        let mut xm = x.clone();
        xm[i] -= h;
        let col = (g(&xp) - g(&xm)) / (2.0 * h);
        if !all_finite_vec(&col) {
            return Err(CoreError::NonFinite(format!(
                "fd_jacobian output at coordinate {i}"
            )));
        }
        cols.push(col);
    }
    Ok(Mat::from_columns(&cols))
}

/// Directional derivative of a matrix field along `v`:
/// `sum_i v_i (W(x + h e_i) - W(x - h e_i)) / (2 h)`.
pub fn lie_derivative_matrix<F>(wfun: F, x: &Vector, v: &Vector) -> Result<Mat>
where
    F: Fn(&Vector) -> Mat,
{
    let n = x.len();
    if v.len() != n {
        return Err(CoreError::DimensionMismatch {
            expected: n,
            got: v.len(),
            context: "lie_derivative_matrix direction",
        });
    }
    let steps = fd_steps(x);
    let probe = wfun(x);
    let mut out = Mat::zeros(probe.nrows(), probe.ncols());
    for i in 0..n {
        if v[i] == 0.0 {
            continue;
        }
        let h = steps[i];
        let mut xp = x.clone();
        xp[i] += h;
        let mut xm = x.clone();
        xm[i] -= h;
        out += (wfun(&xp) - wfun(&xm)) * (v[i] / (2.0 * h));
    }
    if !all_finite_mat(&out) {
        return Err(CoreError::NonFinite("lie_derivative_matrix output".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_mat(rng: &mut Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.normal())
    }

    #[test]
    fn null_space_car_b() {
        // rows [0,0],[0,0],[1,0],[0,1]: the null space of B^T is span{e1, e2}
        let b = Mat::from_row_slice(4, 2, &[0., 0., 0., 0., 1., 0., 0., 1.]);
        let bp = null_space(&b).unwrap();
        assert_eq!(bp.shape(), (4, 2));
        assert!(frobenius(&(b.transpose() * &bp)) <= 1e-10);
        // columns span {e1, e2}: last two coordinates of every column are 0
        for j in 0..2 {
            assert!(bp[(2, j)].abs() < 1e-12 && bp[(3, j)].abs() < 1e-12);
        }
    }

    #[test]
    fn null_space_turtlebot_b_at_zero_heading() {
        let b = Mat::from_row_slice(3, 2, &[0., 0.9061, 0., 0., 0.8548, 0.]);
        let bp = null_space(&b).unwrap();
        assert_eq!(bp.shape(), (3, 1));
        // solving B^T v = 0 by hand forces v proportional to e2
        assert!((bp[(1, 0)].abs() - 1.0).abs() < 1e-10);
        assert!(bp[(0, 0)].abs() < 1e-10 && bp[(2, 0)].abs() < 1e-10);
    }

    #[test]
    fn null_space_full_rank_errors() {
        let b = Mat::identity(3, 3);
        assert!(matches!(
            null_space(&b),
            Err(CoreError::EmptyNullSpace { rank: 3 })
        ));
    }

    #[test]
    fn null_space_random_orthonormality() {
        let mut rng = Rng::new(11);
        for trial in 0..200 {
            let n = 3 + (trial % 4);
            let m = 1 + (trial % (n - 1));
            let b = random_mat(&mut rng, n, m);
            let bp = null_space(&b).unwrap();
            assert_eq!(bp.ncols(), n - m, "generic matrices have rank m");
            assert!(frobenius(&(b.transpose() * &bp)) <= 1e-8);
            let gram = bp.transpose() * &bp;
            assert!(frobenius(&(gram - Mat::identity(n - m, n - m))) <= 1e-8);
        }
    }

    #[test]
    fn min_eig_sym_basics() {
        assert!((min_eig_sym(&Mat::identity(3, 3)).unwrap() - 1.0).abs() < 1e-12);
        let d = Mat::from_diagonal(&Vector::from_vec(vec![2.0, -3.0]));
        assert!((min_eig_sym(&d).unwrap() + 3.0).abs() < 1e-12);
    }

    #[test]
    fn min_eig_sym_rejects_nonfinite_and_asymmetric() {
        let mut a = Mat::identity(2, 2);
        a[(0, 1)] = f64::NAN;
        assert!(min_eig_sym(&a).is_err());
        let mut b = Mat::identity(2, 2);
        b[(0, 1)] = 1.0; // asymmetry far above 1e-9
        assert!(matches!(min_eig_sym(&b), Err(CoreError::NotSymmetric(_))));
    }

    /// Brute-force smallest eigenvalue by power iteration with deflation on
    /// the shifted matrix; independent of the symmetric-eigen path.
    fn min_eig_oracle(a: &Mat, rng: &mut Rng) -> f64 {
        let n = a.nrows();
        let shift = a.iter().map(|v| v.abs()).sum::<f64>() + 1.0;
        // B = shift*I - A is PSD with eigenvalues shift - lambda_i; its top
        // eigenvalue corresponds to lambda_min(A).
        let b = Mat::identity(n, n) * shift - symmetrize(a);
        let mut v = Vector::from_vec(rng.normal_vec(n));
        v /= v.norm();
        for _ in 0..20_000 {
            let w = &b * &v;
            v = &w / w.norm();
        }
        let top = v.dot(&(&b * &v));
        shift - top
    }

    #[test]
    fn min_eig_sym_matches_power_iteration_oracle() {
        let mut rng = Rng::new(5);
        let g = random_mat(&mut rng, 5, 5);
        let a = symmetrize(&g);
        let expect = min_eig_oracle(&a, &mut rng);
        let got = min_eig_sym(&a).unwrap();
        assert!(
            (got - expect).abs() <= 1e-8 * expect.abs().max(1.0),
            "got {got}, oracle {expect}"
        );
    }

    #[test]
    fn min_eig_rayleigh_bound() {
        let mut rng = Rng::new(17);
        let a = symmetrize(&random_mat(&mut rng, 6, 6));
        let lo = min_eig_sym(&a).unwrap();
        for _ in 0..100 {
            let z = Vector::from_vec(rng.normal_vec(6));
            let q = z.dot(&(&a * &z)) / z.dot(&z);
            assert!(lo <= q + 1e-10);
        }
    }

    #[test]
    fn fd_jacobian_quadratic_exact() {
        let g = |x: &Vector| Vector::from_vec(vec![x[0] * x[0]]);
        let x = Vector::from_vec(vec![1.0]);
        let j = fd_jacobian(g, &x).unwrap();
        assert!((j[(0, 0)] - 2.0).abs() <= 1e-7);
    }

    #[test]
    fn fd_jacobian_constant_is_zero() {
        let g = |_: &Vector| Vector::from_vec(vec![3.0, -1.0]);
        let x = Vector::from_vec(vec![0.5, -2.0, 4.0]);
        let j = fd_jacobian(g, &x).unwrap();
        assert!(frobenius(&j) == 0.0);
    }

    #[test]
    fn fd_jacobian_car_drift() {
        // f = (v cos th, v sin th, 0, 0) at (0, 0, 0, 1.5)
        let f = |x: &Vector| {
            Vector::from_vec(vec![x[3] * x[2].cos(), x[3] * x[2].sin(), 0.0, 0.0])
        };
        let x = Vector::from_vec(vec![0.0, 0.0, 0.0, 1.5]);
        let j = fd_jacobian(f, &x).unwrap();
        assert!((j[(0, 3)] - 1.0).abs() < 1e-8); // d xdot1 / d v = cos 0
        assert!(j[(0, 2)].abs() < 1e-8); // d xdot1 / d th = -1.5 sin 0
        assert!((j[(1, 2)] - 1.5).abs() < 1e-8);
    }

    #[test]
    fn fd_jacobian_cubic_polynomials_match_analytic() {
        let mut rng = Rng::new(23);
        for _ in 0..20 {
            let c: Vec<f64> = rng.normal_vec(4);
            let g = {
                let c = c.clone();
                move |x: &Vector| {
                    let t = x[0];
                    Vector::from_vec(vec![c[0] + c[1] * t + c[2] * t * t + c[3] * t * t * t])
                }
            };
            let x0 = rng.uniform(-2.0, 2.0);
            let x = Vector::from_vec(vec![x0]);
            let j = fd_jacobian(&g, &x).unwrap();
            let exact = c[1] + 2.0 * c[2] * x0 + 3.0 * c[3] * x0 * x0;
            assert!((j[(0, 0)] - exact).abs() <= 1e-5 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn lie_derivative_constant_zero_and_linear() {
        let x = Vector::from_vec(vec![1.0, 2.0]);
        let w_const = |_: &Vector| Mat::identity(2, 2);
        let z = lie_derivative_matrix(w_const, &x, &Vector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!(frobenius(&z) < 1e-12);

        let w_lin = |x: &Vector| Mat::identity(2, 2) * x[0];
        let l = lie_derivative_matrix(w_lin, &x, &Vector::from_vec(vec![3.0, 0.0])).unwrap();
        assert!(frobenius(&(l - Mat::identity(2, 2) * 3.0)) < 1e-9);
    }

    #[test]
    fn lie_derivative_hand_case() {
        // W = diag(x1^2, 1), v = (1, 0), x1 = 2 -> diag(4, 0)
        let w = |x: &Vector| Mat::from_diagonal(&Vector::from_vec(vec![x[0] * x[0], 1.0]));
        let x = Vector::from_vec(vec![2.0, 0.0]);
        let l = lie_derivative_matrix(w, &x, &Vector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!((l[(0, 0)] - 4.0).abs() <= 1e-6);
        assert!(l[(1, 1)].abs() <= 1e-9);
    }

    #[test]
    fn lie_derivative_linear_in_direction() {
        let mut rng = Rng::new(31);
        let w = |x: &Vector| {
            Mat::from_fn(3, 3, |i, j| ((i + j) as f64 + 1.0) * (x[i.min(2)] * 0.3).sin())
        };
        for _ in 0..10 {
            let x = Vector::from_vec(rng.normal_vec(3));
            let v = Vector::from_vec(rng.normal_vec(3));
            let u = Vector::from_vec(rng.normal_vec(3));
            let (a, b) = (rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
            let lhs = lie_derivative_matrix(&w, &x, &(&v * a + &u * b)).unwrap();
            let rhs = lie_derivative_matrix(&w, &x, &v).unwrap() * a
                + lie_derivative_matrix(&w, &x, &u).unwrap() * b;
            assert!(frobenius(&(lhs - rhs)) <= 1e-8);
        }
    }
}
