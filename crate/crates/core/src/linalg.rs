//! Small dense linear-algebra helpers shared across the crate.
//!
//! Everything here operates on `nalgebra` dynamic matrices. Problem sizes in
//! this crate are tiny (state dimensions in the single digits), so the
//! Kronecker-product Lyapunov solvers and full eigendecompositions are the
//! right tool.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalues of a symmetric matrix, ascending. The input is symmetrized
/// first so callers may pass forms assembled from slightly asymmetric
/// floating-point arithmetic.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).expect("eigenvalues are finite"));
    DVector::from_vec(ev)
}

pub fn max_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let ev = symmetric_eigenvalues(m);
    ev[ev.len() - 1]
}

pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m)[0]
}

/// Checks symmetry up to an absolute entrywise tolerance.
pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return false;
            }
        }
    }
    true
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Matrix exponential. nalgebra uses Pade approximation with scaling and
/// squaring, accurate to near machine precision for well-scaled inputs.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.exp()
}

/// True when every eigenvalue of `a` has a strictly negative real part.
pub fn is_hurwitz(a: &DMatrix<f64>, tol: f64) -> bool {
    a.complex_eigenvalues().iter().all(|l| l.re < -tol)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

/// Solves the continuous Lyapunov equation `a' p + p a = -q` for symmetric
/// `q` via the Kronecker linear system. Requires `a` of moderate size.
pub fn solve_lyapunov_continuous(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension(format!(
            "lyapunov: a is {}x{}, q is {}x{}",
            a.nrows(),
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    // vec(a' p + p a) = (I (x) a' + a' (x) I) vec(p)
    let k = kron(&eye, &at) + kron(&at, &eye);
    let rhs = -vec_of(q);
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidParam("lyapunov system is singular".into()))?;
    Ok(symmetrize(&unvec(&sol, n)))
}

/// Solves the discrete Lyapunov equation `a' p a - p = -q`.
pub fn solve_lyapunov_discrete(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension("discrete lyapunov: shape mismatch".into()));
    }
    let at = a.transpose();
    let eye_n2 = DMatrix::<f64>::identity(n * n, n * n);
    let k = kron(&at, &at) - eye_n2;
    let rhs = -vec_of(q);
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidParam("discrete lyapunov system is singular".into()))?;
    Ok(symmetrize(&unvec(&sol, n)))
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::<f64>::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let scale = a[(i, j)];
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = scale * b[(k, l)];
                }
            }
        }
    }
    out
}

fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn unvec(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, v.as_slice())
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest singular value of a complex matrix.
pub fn max_singular_value_complex(m: &DMatrix<Complex<f64>>) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Largest singular value of a real matrix.
pub fn max_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Moore-Penrose pseudoinverse with a singular-value cutoff relative to the
/// largest singular value.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eps = f64::EPSILON * m.nrows().max(m.ncols()) as f64;
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    svd.pseudo_inverse(eps * smax.max(1.0))
        .map_err(|e| Error::InvalidParam(format!("pseudoinverse failed: {e}")))
}

/// Logarithmically spaced grid of `points` values covering `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && points >= 2);
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (llo + (lhi - llo) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Golden-section maximization of a unimodal function on `[lo, hi]`.
/// Returns the abscissa of the maximum found.
pub fn golden_section_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, iters: usize) -> f64 {
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
        if (b - a).abs() <= 1e-15 * b.abs().max(1.0) {
            break;
        }
    }
    if fc > fd {
        c
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn expm_matches_scalar_exponential() {
        let a = DMatrix::from_element(1, 1, -0.7);
        assert_relative_eq!(expm(&a)[(0, 0)], (-0.7_f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn expm_nilpotent_exact() {
        // exp([[0,1],[0,0]]) = [[1,1],[0,1]]
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = expm(&a);
        assert_relative_eq!(e[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(e[(0, 1)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(e[(1, 0)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(e[(1, 1)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn lyapunov_continuous_scalar() {
        // 2 a p = -q  =>  p = -q / (2a)
        let a = DMatrix::from_element(1, 1, -1.0);
        let q = DMatrix::from_element(1, 1, 1.0);
        let p = solve_lyapunov_continuous(&a, &q).unwrap();
        assert_relative_eq!(p[(0, 0)], 0.5, max_relative = 1e-14);
    }

    #[test]
    fn lyapunov_continuous_residual_small() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 1.0, -2.0]);
        let q = DMatrix::identity(2, 2);
        let p = solve_lyapunov_continuous(&a, &q).unwrap();
        let resid = a.transpose() * &p + &p * &a + &q;
        assert!(resid.iter().all(|v| v.abs() < 1e-13));
        // closed form for this matrix: p = [[4/9, -1/18], [-1/18, 5/18]]
        assert_relative_eq!(p[(0, 0)], 4.0 / 9.0, max_relative = 1e-12);
        assert_relative_eq!(p[(0, 1)], -1.0 / 18.0, max_relative = 1e-12);
        assert_relative_eq!(p[(1, 1)], 5.0 / 18.0, max_relative = 1e-12);
    }

    #[test]
    fn lyapunov_discrete_scalar() {
        // a^2 p - p = -q  =>  p = q / (1 - a^2)
        let a = DMatrix::from_element(1, 1, 0.5);
        let q = DMatrix::from_element(1, 1, 1.0);
        let p = solve_lyapunov_discrete(&a, &q).unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0 / 0.75, max_relative = 1e-14);
    }

    #[test]
    fn hurwitz_and_radius() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 1.0, -2.0]);
        assert!(is_hurwitz(&a, 0.0));
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(!is_hurwitz(&rot, 0.0));
        assert_relative_eq!(spectral_radius(&rot), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let xm = golden_section_max(|x| -(x - 2.3) * (x - 2.3), 0.0, 10.0, 200);
        assert_relative_eq!(xm, 2.3, epsilon = 1e-9);
    }

    #[test]
    fn pseudo_inverse_projector_is_idempotent() {
        let t = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let tp = pseudo_inverse(&t).unwrap();
        let proj = DMatrix::<f64>::identity(3, 3) - &t * tp;
        let diff = &proj * &proj - &proj;
        assert!(diff.iter().all(|v| v.abs() < 1e-12));
    }
}
