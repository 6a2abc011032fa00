//! Square polynomial systems over ℂ stored as term lists.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::linalg::{CMatrix, CVector};
use crate::model::UtilityModel;
use crate::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coef: Complex64,
    pub exp: Vec<u32>,
}

/// A multivariate polynomial as a normalized list of terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoly", into = "RawPoly")]
pub struct MultiPoly {
    n_vars: usize,
    terms: Vec<Term>,
    degree: u32,
}

#[derive(Serialize, Deserialize)]
struct RawPoly {
    n_vars: usize,
    terms: Vec<Term>,
}

impl TryFrom<RawPoly> for MultiPoly {
    type Error = Error;
    fn try_from(raw: RawPoly) -> Result<Self> {
        MultiPoly::new(raw.n_vars, raw.terms.into_iter().map(|t| (t.coef, t.exp)))
    }
}

impl From<MultiPoly> for RawPoly {
    fn from(p: MultiPoly) -> Self {
        RawPoly {
            n_vars: p.n_vars,
            terms: p.terms,
        }
    }
}

impl MultiPoly {
    /// Builds a polynomial, merging repeated exponent vectors and dropping zero
    /// coefficients.
    pub fn new(
        n_vars: usize,
        terms: impl IntoIterator<Item = (Complex64, Vec<u32>)>,
    ) -> Result<Self> {
        let mut raw: Vec<Term> = Vec::new();
        for (coef, exp) in terms {
            if exp.len() != n_vars {
                return Err(Error::Dimension {
                    expected: n_vars,
                    got: exp.len(),
                });
            }
            if !coef.re.is_finite() || !coef.im.is_finite() {
                return Err(Error::NonFinite("polynomial coefficient".into()));
            }
            raw.push(Term { coef, exp });
        }
        raw.sort_by(|a, b| a.exp.cmp(&b.exp));
        let mut terms: Vec<Term> = Vec::with_capacity(raw.len());
        for t in raw {
            match terms.last_mut() {
                Some(last) if last.exp == t.exp => last.coef += t.coef,
                _ => terms.push(t),
            }
        }
        terms.retain(|t| t.coef != ZERO);
        let degree = terms
            .iter()
            .map(|t| t.exp.iter().sum::<u32>())
            .max()
            .unwrap_or(0);
        Ok(Self {
            n_vars,
            terms,
            degree,
        })
    }

    pub fn zero(n_vars: usize) -> Self {
        Self {
            n_vars,
            terms: Vec::new(),
            degree: 0,
        }
    }

    /// `Σ x_i − 1`.
    pub fn budget(n_vars: usize) -> Self {
        let mut terms: Vec<(Complex64, Vec<u32>)> = (0..n_vars)
            .map(|i| {
                let mut e = vec![0; n_vars];
                e[i] = 1;
                (Complex64::new(1.0, 0.0), e)
            })
            .collect();
        terms.push((Complex64::new(-1.0, 0.0), vec![0; n_vars]));
        Self::new(n_vars, terms).expect("well-formed budget polynomial")
    }

    /// `Σ_p c_p x_var^p` for ascending coefficients `c`.
    pub fn univariate(n_vars: usize, var: usize, coeffs: &[Complex64]) -> Result<Self> {
        if var >= n_vars {
            return Err(Error::Dimension {
                expected: n_vars,
                got: var + 1,
            });
        }
        Self::new(
            n_vars,
            coeffs.iter().enumerate().map(|(p, &c)| {
                let mut e = vec![0; n_vars];
                e[var] = p as u32;
                (c, e)
            }),
        )
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    fn max_exponent(&self) -> u32 {
        self.terms
            .iter()
            .flat_map(|t| t.exp.iter().copied())
            .max()
            .unwrap_or(0)
    }

    pub fn scale(&self, a: Complex64) -> Self {
        Self::new(
            self.n_vars,
            self.terms.iter().map(|t| (t.coef * a, t.exp.clone())),
        )
        .expect("scaling keeps shape")
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: Complex64, other: &Self, b: Complex64) -> Result<Self> {
        if other.n_vars != self.n_vars {
            return Err(Error::Dimension {
                expected: self.n_vars,
                got: other.n_vars,
            });
        }
        Self::new(
            self.n_vars,
            self.terms
                .iter()
                .map(|t| (t.coef * a, t.exp.clone()))
                .chain(other.terms.iter().map(|t| (t.coef * b, t.exp.clone()))),
        )
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(Complex64::new(1.0, 0.0), other, Complex64::new(-1.0, 0.0))
    }

    fn eval_with(&self, pows: &Powers) -> Complex64 {
        self.terms
            .iter()
            .map(|t| t.coef * pows.monomial(&t.exp))
            .sum()
    }

    fn magnitude_with(&self, abs_pows: &[Vec<f64>]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.coef.norm()
                    * t.exp
                        .iter()
                        .enumerate()
                        .map(|(v, &e)| abs_pows[v][e as usize])
                        .product::<f64>()
            })
            .sum()
    }

    fn gradient_into(&self, pows: &Powers, row: &mut [Complex64]) {
        for t in &self.terms {
            for (v, &e) in t.exp.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let mut m = t.coef * e as f64;
                for (u, &f) in t.exp.iter().enumerate() {
                    let p = if u == v { f - 1 } else { f };
                    if p > 0 {
                        m *= pows.get(u, p);
                    }
                }
                row[v] += m;
            }
        }
    }

    pub fn eval(&self, x: &[Complex64]) -> Result<Complex64> {
        check_dim(self.n_vars, x.len())?;
        Ok(self.eval_with(&Powers::new(x, self.max_exponent())))
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::Dimension { expected, got })
    } else {
        Ok(())
    }
}

/// Table of `x_v^e` for every variable `v` and `e ≤ max`.
struct Powers {
    table: Vec<Vec<Complex64>>,
}

impl Powers {
    fn new(x: &[Complex64], max: u32) -> Self {
        let table = x
            .iter()
            .map(|&xv| {
                let mut row = Vec::with_capacity(max as usize + 1);
                let mut p = Complex64::new(1.0, 0.0);
                row.push(p);
                for _ in 0..max {
                    p *= xv;
                    row.push(p);
                }
                row
            })
            .collect();
        Self { table }
    }

    fn get(&self, v: usize, e: u32) -> Complex64 {
        self.table[v][e as usize]
    }

    fn monomial(&self, exp: &[u32]) -> Complex64 {
        exp.iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(v, &e)| self.get(v, e))
            .product()
    }
}

/// A square system: as many equations as variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolySystem {
    n_vars: usize,
    equations: Vec<MultiPoly>,
}

impl PolySystem {
    pub fn new(equations: Vec<MultiPoly>) -> Result<Self> {
        let n_vars = equations.len();
        if n_vars == 0 {
            return Err(Error::Invalid("empty polynomial system".into()));
        }
        for eq in &equations {
            check_dim(n_vars, eq.n_vars)?;
        }
        Ok(Self { n_vars, equations })
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn equations(&self) -> &[MultiPoly] {
        &self.equations
    }

    pub fn degrees(&self) -> Vec<u32> {
        self.equations.iter().map(|e| e.degree()).collect()
    }

    /// Product of the equation degrees.
    pub fn bezout_number(&self) -> u64 {
        self.equations
            .iter()
            .map(|e| e.degree().max(1) as u64)
            .product()
    }

    fn max_exponent(&self) -> u32 {
        self.equations
            .iter()
            .map(|e| e.max_exponent())
            .max()
            .unwrap_or(0)
    }

    pub fn evaluate(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        check_dim(self.n_vars, x.len())?;
        let pows = Powers::new(x, self.max_exponent());
        Ok(self.equations.iter().map(|e| e.eval_with(&pows)).collect())
    }

    /// `J[r][c] = ∂eq_r/∂x_c`.
    pub fn jacobian(&self, x: &[Complex64]) -> Result<CMatrix> {
        check_dim(self.n_vars, x.len())?;
        let pows = Powers::new(x, self.max_exponent());
        Ok(self.jacobian_with(&pows))
    }

    fn jacobian_with(&self, pows: &Powers) -> CMatrix {
        let n = self.n_vars;
        let mut jac = CMatrix::zeros(n, n);
        let mut row = vec![ZERO; n];
        for (r, eq) in self.equations.iter().enumerate() {
            row.iter_mut().for_each(|v| *v = ZERO);
            eq.gradient_into(pows, &mut row);
            for (c, v) in row.iter().enumerate() {
                jac[(r, c)] = *v;
            }
        }
        jac
    }

    /// Values and Jacobian in one pass over the power table.
    pub fn eval_and_jacobian(&self, x: &[Complex64]) -> Result<(CVector, CMatrix)> {
        check_dim(self.n_vars, x.len())?;
        let pows = Powers::new(x, self.max_exponent());
        let f = CVector::from_iterator(
            self.n_vars,
            self.equations.iter().map(|e| e.eval_with(&pows)),
        );
        Ok((f, self.jacobian_with(&pows)))
    }

    /// Per-equation `Σ_terms |c|·|x^α|`, floored at 1.
    pub fn term_magnitudes(&self, x: &[Complex64]) -> Result<Vec<f64>> {
        check_dim(self.n_vars, x.len())?;
        let max = self.max_exponent() as usize;
        let abs_pows: Vec<Vec<f64>> = x
            .iter()
            .map(|z| {
                let r = z.norm();
                let mut row = vec![1.0; max + 1];
                for e in 1..=max {
                    row[e] = row[e - 1] * r;
                }
                row
            })
            .collect();
        Ok(self
            .equations
            .iter()
            .map(|e| e.magnitude_with(&abs_pows).max(1.0))
            .collect())
    }

    /// `max_r |F_r(x)| / max(1, Σ_terms |c||x^α|)`: residual relative to the
    /// size of the terms that cancel.
    pub fn scaled_residual(&self, x: &[Complex64]) -> Result<f64> {
        let f = self.evaluate(x)?;
        let mag = self.term_magnitudes(x)?;
        Ok(f.iter()
            .zip(&mag)
            .map(|(v, m)| v.norm() / m)
            .fold(0.0, f64::max))
    }

    /// `a·self + b·other`, equation by equation.
    pub fn combine(&self, a: Complex64, other: &Self, b: Complex64) -> Result<Self> {
        check_dim(self.n_vars, other.n_vars)?;
        let equations = self
            .equations
            .iter()
            .zip(&other.equations)
            .map(|(p, q)| p.combine(a, q, b))
            .collect::<Result<Vec<_>>>()?;
        Self::new(equations)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `H(x, t) = γ·t·start(x) + (1 − t)·target(x)`.
#[derive(Debug, Clone)]
pub struct ParamFamily {
    pub start: PolySystem,
    pub target: PolySystem,
    pub gamma: Complex64,
}

impl ParamFamily {
    pub fn new(start: PolySystem, target: PolySystem, gamma: Complex64) -> Result<Self> {
        check_dim(start.n_vars(), target.n_vars())?;
        if ((gamma.norm()) - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid("gamma must have unit modulus".into()));
        }
        Ok(Self {
            start,
            target,
            gamma,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.target.n_vars()
    }

    pub fn evaluate(&self, x: &[Complex64], t: f64) -> Result<CVector> {
        let s = self.start.evaluate(x)?;
        let g = self.target.evaluate(x)?;
        let a = self.gamma * t;
        let b = 1.0 - t;
        Ok(CVector::from_iterator(
            s.len(),
            s.iter().zip(&g).map(|(s, g)| a * s + b * g),
        ))
    }

    /// `(H, ∂H/∂x, ∂H/∂t)` at `(x, t)`.
    pub fn eval_full(&self, x: &[Complex64], t: f64) -> Result<(CVector, CMatrix, CVector)> {
        let (fs, js) = self.start.eval_and_jacobian(x)?;
        let (fg, jg) = self.target.eval_and_jacobian(x)?;
        let a = self.gamma * t;
        let b = Complex64::new(1.0 - t, 0.0);
        let h = &fs * a + &fg * b;
        let hx = js * a + jg * b;
        let ht = fs * self.gamma - fg;
        Ok((h, hx, ht))
    }
}

/// Whether the homogenized critical system can have roots with `y = 0`
/// other than the trivial one.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", content = "reasons", rename_all = "snake_case")]
pub enum InfinityReport {
    Clean,
    Dirty(Vec<String>),
}

impl InfinityReport {
    pub fn is_clean(&self) -> bool {
        matches!(self, InfinityReport::Clean)
    }
}

/// Checks the leading data of the critical system: `w_d ≠ 0` and every
/// `k_id ≠ 0`. Also reports balanced leading forms, where
/// `1 + Σ ζ_i (k_1d/k_id)^{1/(d−1)} = 0` for some tuple of roots of unity and
/// the eliminated system acquires a root at infinity.
pub fn solutions_at_infinity_check(m: &UtilityModel) -> InfinityReport {
    let d = m.d();
    let mut reasons = Vec::new();
    if m.w().top() == 0.0 {
        reasons.push(format!("w_{d} zero"));
    }
    for i in 1..=m.n() {
        if m.k().get(i, d) == 0.0 {
            reasons.push(format!("k_{i}{d} zero"));
        }
    }
    if reasons.is_empty() {
        let column: Vec<Complex64> = (1..=m.n())
            .map(|i| Complex64::new(m.k().get(i, d), 0.0))
            .collect();
        if let Some(tuple) = crate::critical::first_degenerate_tuple(&column, d - 1) {
            reasons.push(format!(
                "balanced leading form at root-of-unity tuple {tuple:?}"
            ));
        }
    }
    if reasons.is_empty() {
        InfinityReport::Clean
    } else {
        InfinityReport::Dirty(reasons)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn normalization_merges_and_drops() {
        let p = MultiPoly::new(
            2,
            vec![
                (c(1.0), vec![1, 0]),
                (c(2.0), vec![1, 0]),
                (c(3.0), vec![0, 2]),
                (c(-3.0), vec![0, 2]),
            ],
        )
        .unwrap();
        assert_eq!(p.terms().len(), 1);
        assert_eq!(p.terms()[0].coef, c(3.0));
        assert_eq!(p.degree(), 1);
    }

    #[test]
    fn zero_system_evaluates_to_zero() {
        let sys = PolySystem::new(vec![MultiPoly::zero(2), MultiPoly::zero(2)]).unwrap();
        let v = sys.evaluate(&[c(0.3), Complex64::new(1.0, 2.0)]).unwrap();
        assert!(v.iter().all(|z| *z == ZERO));
    }

    #[test]
    fn budget_vanishes_on_simplex() {
        let b = MultiPoly::budget(2);
        assert!(b.eval(&[c(0.3), c(0.7)]).unwrap().norm() < 1e-15);
    }

    #[test]
    fn linear_jacobian_is_constant() {
        let p = MultiPoly::new(
            2,
            vec![
                (c(2.0), vec![1, 0]),
                (c(-5.0), vec![0, 1]),
                (c(1.0), vec![0, 0]),
            ],
        )
        .unwrap();
        let sys = PolySystem::new(vec![p, MultiPoly::budget(2)]).unwrap();
        for x in [[c(0.0), c(0.0)], [c(3.0), Complex64::new(1.0, -1.0)]] {
            let j = sys.jacobian(&x).unwrap();
            assert_eq!(j[(0, 0)], c(2.0));
            assert_eq!(j[(0, 1)], c(-5.0));
            assert_eq!(j[(1, 0)], c(1.0));
            assert_eq!(j[(1, 1)], c(1.0));
        }
    }

    #[test]
    fn diagonal_power_jacobian() {
        let sys = PolySystem::new(vec![
            MultiPoly::new(2, vec![(c(1.0), vec![2, 0])]).unwrap(),
            MultiPoly::new(2, vec![(c(1.0), vec![0, 3])]).unwrap(),
        ])
        .unwrap();
        let j = sys.jacobian(&[c(1.0), c(1.0)]).unwrap();
        assert_eq!(j[(0, 0)], c(2.0));
        assert_eq!(j[(1, 1)], c(3.0));
        assert_eq!(j[(0, 1)], ZERO);
        assert_eq!(j[(1, 0)], ZERO);
    }

    #[test]
    fn dimension_errors() {
        let sys = PolySystem::new(vec![MultiPoly::budget(2), MultiPoly::budget(2)]).unwrap();
        assert!(sys.evaluate(&[c(1.0)]).is_err());
        assert!(sys.jacobian(&[c(1.0), c(1.0), c(1.0)]).is_err());
        assert!(MultiPoly::new(2, vec![(c(1.0), vec![1])]).is_err());
        assert!(PolySystem::new(vec![MultiPoly::budget(3)]).is_err());
    }

    #[test]
    fn family_endpoints() {
        let s = PolySystem::new(vec![MultiPoly::univariate(
            1,
            0,
            &[c(-1.0), c(0.0), c(1.0)],
        )
        .unwrap()])
        .unwrap();
        let t = PolySystem::new(vec![MultiPoly::univariate(
            1,
            0,
            &[c(-4.0), c(1.0), c(1.0)],
        )
        .unwrap()])
        .unwrap();
        let gamma = Complex64::from_polar(1.0, 0.7);
        let fam = ParamFamily::new(s.clone(), t.clone(), gamma).unwrap();
        let x = [Complex64::new(0.4, -1.1)];
        assert_eq!(
            fam.evaluate(&x, 1.0).unwrap()[0],
            gamma * s.evaluate(&x).unwrap()[0]
        );
        assert_eq!(
            fam.evaluate(&x, 0.0).unwrap()[0],
            t.evaluate(&x).unwrap()[0]
        );
        assert!(ParamFamily::new(s, t, c(2.0)).is_err());
    }

    #[test]
    fn infinity_check_reasons() {
        let ok = UtilityModel::from_rows(
            vec![vec![1.0, 2.0, 3.0], vec![1.0, 1.0, -1.5]],
            vec![1.0, 1.0, 1.0],
        )
        .unwrap();
        assert!(solutions_at_infinity_check(&ok).is_clean());
        let wd0 = ok
            .with_weights(crate::WeightVector::new(vec![1.0, 1.0, 0.0]).unwrap())
            .unwrap();
        assert_eq!(
            solutions_at_infinity_check(&wd0),
            InfinityReport::Dirty(vec!["w_3 zero".into()])
        );
        let k2d = UtilityModel::from_rows(
            vec![vec![1.0, 2.0, 3.0], vec![1.0, 1.0, 0.0]],
            vec![1.0, 1.0, 1.0],
        )
        .unwrap();
        assert_eq!(
            solutions_at_infinity_check(&k2d),
            InfinityReport::Dirty(vec!["k_23 zero".into()])
        );
        // x_1² = x_2² with x_1 + x_2 = 0 has the root (1, −1) at infinity
        let balanced = UtilityModel::from_rows(
            vec![vec![1.0, 2.0, 1.0], vec![3.0, 1.0, 1.0]],
            vec![1.0, 1.0, 1.0],
        )
        .unwrap();
        assert!(!solutions_at_infinity_check(&balanced).is_clean());
    }

    #[test]
    fn json_dump_has_terms() {
        let sys = PolySystem::new(vec![MultiPoly::budget(1)]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&sys.to_json().unwrap()).unwrap();
        assert_eq!(v["equations"][0]["terms"].as_array().unwrap().len(), 2);
    }
}
