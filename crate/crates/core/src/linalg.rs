//! Small dense linear algebra over `nalgebra`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Solves `a · x = b` by LU with partial pivoting.
pub fn solve(a: CMatrix, b: &CVector) -> Result<CVector> {
    let lu = a.lu();
    lu.solve(b).ok_or(Error::Singular)
}

/// Singular values of a complex matrix, descending.
pub fn singular_values(a: &CMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Singular values of a real matrix, descending.
pub fn singular_values_real(a: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// `σ_max / σ_min`, infinite when singular.
pub fn condition_number(a: &CMatrix) -> f64 {
    let s = singular_values(a);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

pub fn inf_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Roots of `Σ c_p x^p` (ascending coefficients, non-zero leading term) as
/// eigenvalues of the companion matrix.
pub fn companion_roots(coeffs: &[f64]) -> Result<Vec<Complex64>> {
    let deg = coeffs.len().saturating_sub(1);
    if deg == 0 {
        return Ok(Vec::new());
    }
    let lead = coeffs[deg];
    if lead == 0.0 {
        return Err(Error::DegreeDrop(lead));
    }
    let mut c = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        c[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        c[(i, deg - 1)] = -coeffs[i] / lead;
    }
    Ok(c.complex_eigenvalues().iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn companion_of_known_cubic() {
        // (x − 1)(x − 2)(x + 3) = x³ − 7x + 6
        let mut roots = companion_roots(&[6.0, -7.0, 0.0, 1.0]).unwrap();
        roots.sort_by(|a, b| a.re.total_cmp(&b.re));
        for (r, e) in roots.iter().zip([-3.0, 1.0, 2.0]) {
            assert!((r - Complex64::new(e, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn companion_complex_pair() {
        let roots = companion_roots(&[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(roots.len(), 2);
        for r in roots {
            assert!((r.norm() - 1.0).abs() < 1e-14);
            assert!(r.re.abs() < 1e-14);
        }
    }

    #[test]
    fn solve_small_complex_system() {
        let i = Complex64::new(0.0, 1.0);
        let one = Complex64::new(1.0, 0.0);
        let a = CMatrix::from_row_slice(2, 2, &[one, i, i, one * 2.0]);
        let x = CVector::from_vec(vec![one, -i]);
        let b = &a * &x;
        let got = solve(a, &b).unwrap();
        assert!((got - x).norm() < 1e-14);
    }

    #[test]
    fn singular_matrix_detected() {
        let a = CMatrix::from_element(2, 2, Complex64::new(1.0, 0.0));
        assert!(solve(
            a.clone(),
            &CVector::from_element(2, Complex64::new(1.0, 0.0))
        )
        .is_err());
        assert!(condition_number(&a) > 1e15);
    }
}
