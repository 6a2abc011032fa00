//! The cumulant utility `L(x) = Σ_j Σ_i w_j k_ij x_i^j` and its per-asset
//! marginal polynomials `P_i(x) = Σ_j j w_j k_ij x^{j−1}`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cumulants::CumulantMatrix;
use crate::{Error, Result};

/// Default relative tolerance on imaginary parts for calling a point real.
pub const TOL_REAL: f64 = 1e-8;
/// Default distance from the simplex boundary below which a weight counts as zero.
pub const TOL_FEASIBLE: f64 = 1e-10;

/// Preference weights `w_1..w_d`, one per cumulant order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;

    fn try_from(w: Vec<f64>) -> Result<Self> {
        Self::new(w)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Invalid("weight vector is empty".into()));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weights".into()));
        }
        Ok(Self(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn d(&self) -> usize {
        self.0.len()
    }

    /// `w_j`, 1-based.
    pub fn get(&self, order: usize) -> f64 {
        self.0[order - 1]
    }

    pub fn top(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn top_nonzero(&self) -> bool {
        self.top() != 0.0
    }

    pub fn scaled(&self, a: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * a).collect())
    }
}

/// A univariate polynomial with real coefficients in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetPolynomial {
    pub coeffs: Vec<f64>,
}

impl AssetPolynomial {
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn eval_c(&self, x: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> AssetPolynomial {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(p, &c)| p as f64 * c)
            .collect();
        AssetPolynomial { coeffs }
    }

    /// Index of the highest non-zero coefficient, `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.iter().rposition(|&c| c != 0.0)
    }

    /// `Σ |c_p| |x|^p`, the magnitude against which evaluation error is judged.
    pub fn term_magnitude(&self, x: Complex64) -> f64 {
        let r = x.norm();
        self.coeffs
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc * r + c.abs())
    }
}

/// Cumulant data plus weights: everything that defines `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct UtilityModel {
    k: CumulantMatrix,
    w: WeightVector,
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    k: CumulantMatrix,
    w: WeightVector,
}

impl TryFrom<RawModel> for UtilityModel {
    type Error = Error;
    fn try_from(raw: RawModel) -> Result<Self> {
        UtilityModel::new(raw.k, raw.w)
    }
}

impl From<UtilityModel> for RawModel {
    fn from(m: UtilityModel) -> Self {
        RawModel { k: m.k, w: m.w }
    }
}

/// Outcome of the global-maximum test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalMax {
    Exists,
    Absent,
    /// `w_d = 0`: the leading form vanishes and the test does not apply.
    LeadingFormVanishes,
}

impl GlobalMax {
    pub fn exists(self) -> bool {
        self == GlobalMax::Exists
    }
}

/// Where a candidate portfolio sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Complex,
    Real,
    RealFeasible,
    Degenerate,
}

/// A complex critical point `(x, λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioPoint {
    pub x: Vec<Complex64>,
    pub lambda: Complex64,
}

impl Serialize for PortfolioPoint {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = ser.serialize_struct("PortfolioPoint", 4)?;
        st.serialize_field("x_re", &self.x.iter().map(|z| z.re).collect::<Vec<_>>())?;
        st.serialize_field("x_im", &self.x.iter().map(|z| z.im).collect::<Vec<_>>())?;
        st.serialize_field("lambda_re", &self.lambda.re)?;
        st.serialize_field("lambda_im", &self.lambda.im)?;
        st.end()
    }
}

impl PortfolioPoint {
    pub fn real(x: &[f64], lambda: f64) -> Self {
        Self {
            x: x.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            lambda: Complex64::new(lambda, 0.0),
        }
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.x.iter().map(|z| z.re).collect()
    }
}

/// Classifies a point. Degenerate wins over every other verdict.
pub fn classify_point(p: &PortfolioPoint, tol_real: f64, tol_feasible: f64) -> Classification {
    if p.x.iter().any(|z| z.norm() < tol_feasible) {
        return Classification::Degenerate;
    }
    let max_im = p.x.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let max_re = p.x.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    if max_im >= tol_real * (1.0 + max_re) {
        return Classification::Complex;
    }
    let inside =
        p.x.iter()
            .all(|z| z.re > tol_feasible && z.re < 1.0 - tol_feasible);
    if inside {
        Classification::RealFeasible
    } else {
        Classification::Real
    }
}

impl UtilityModel {
    pub fn new(k: CumulantMatrix, w: WeightVector) -> Result<Self> {
        if k.d() != w.d() {
            return Err(Error::Dimension {
                expected: k.d(),
                got: w.d(),
            });
        }
        if k.d() < 2 {
            return Err(Error::Invalid("utility model needs order d ≥ 2".into()));
        }
        Ok(Self { k, w })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, w: Vec<f64>) -> Result<Self> {
        Self::new(CumulantMatrix::from_rows(rows)?, WeightVector::new(w)?)
    }

    pub fn k(&self) -> &CumulantMatrix {
        &self.k
    }

    pub fn w(&self) -> &WeightVector {
        &self.w
    }

    pub fn n(&self) -> usize {
        self.k.n()
    }

    pub fn d(&self) -> usize {
        self.k.d()
    }

    /// All `k_ij ≠ 0`.
    pub fn is_valid(&self) -> bool {
        self.k.is_valid()
    }

    pub fn with_weights(&self, w: WeightVector) -> Result<Self> {
        Self::new(self.k.clone(), w)
    }

    /// Restriction to orders `1..=order`.
    pub fn truncated(&self, order: usize) -> Result<Self> {
        Self::new(
            self.k.truncated(order)?,
            WeightVector::new(self.w.as_slice()[..order].to_vec())?,
        )
    }

    /// `P_i` for every asset; coefficient of degree `j−1` is `j·w_j·k_ij`.
    pub fn asset_polynomials(&self) -> Vec<AssetPolynomial> {
        (1..=self.n()).map(|i| self.asset_polynomial(i)).collect()
    }

    /// `P_i` for the 1-based asset index `i`.
    pub fn asset_polynomial(&self, asset: usize) -> AssetPolynomial {
        let coeffs = (1..=self.d())
            .map(|j| j as f64 * self.w.get(j) * self.k.get(asset, j))
            .collect();
        AssetPolynomial { coeffs }
    }

    /// `L(x) = Σ_j Σ_i w_j k_ij x_i^j`.
    pub fn evaluate_utility(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                got: x.len(),
            });
        }
        let mut total = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            let mut p = 1.0;
            for j in 1..=self.d() {
                p *= xi;
                total += self.w.get(j) * self.k.get(i + 1, j) * p;
            }
        }
        Ok(total)
    }

    /// Analytic gradient `(P_1(x_1), …, P_n(x_n))`.
    pub fn utility_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                got: x.len(),
            });
        }
        Ok(self
            .asset_polynomials()
            .iter()
            .zip(x)
            .map(|(p, &xi)| p.eval(xi))
            .collect())
    }

    /// `L` has a global maximum iff `d` is even, the order-`d` cumulants share
    /// a sign, and `w_d` has the opposite sign.
    pub fn has_global_max(&self) -> GlobalMax {
        let d = self.d();
        let wd = self.w.top();
        if wd == 0.0 {
            return GlobalMax::LeadingFormVanishes;
        }
        if d % 2 == 1 {
            return GlobalMax::Absent;
        }
        let column: Vec<f64> = (1..=self.n()).map(|i| self.k.get(i, d)).collect();
        let all_pos = column.iter().all(|&v| v > 0.0);
        let all_neg = column.iter().all(|&v| v < 0.0);
        let opposite = (all_pos && wd < 0.0) || (all_neg && wd > 0.0);
        if opposite {
            GlobalMax::Exists
        } else {
            GlobalMax::Absent
        }
    }

    /// Residual `max(|P_i(x_i) − λ|, |Σx_i − 1|)` of the Lagrange system.
    pub fn critical_residual(&self, p: &PortfolioPoint) -> f64 {
        let polys = self.asset_polynomials();
        let mut r = (p.x.iter().sum::<Complex64>() - 1.0).norm();
        for (poly, &xi) in polys.iter().zip(&p.x) {
            r = r.max((poly.eval_c(xi) - p.lambda).norm());
        }
        r
    }

    /// [`Self::critical_residual`] with each equation divided by its term size,
    /// `max(1, Σ_j |c_j| |x_i|^j + |λ|)` and `max(1, Σ |x_i|)`.
    pub fn critical_residual_scaled(&self, p: &PortfolioPoint) -> f64 {
        let polys = self.asset_polynomials();
        let size: f64 = p.x.iter().map(|z| z.norm()).sum();
        let mut r = (p.x.iter().sum::<Complex64>() - 1.0).norm() / size.max(1.0);
        for (poly, &xi) in polys.iter().zip(&p.x) {
            let mag = (poly.term_magnitude(xi) + p.lambda.norm()).max(1.0);
            r = r.max((poly.eval_c(xi) - p.lambda).norm() / mag);
        }
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(rows: Vec<Vec<f64>>, w: Vec<f64>) -> UtilityModel {
        UtilityModel::from_rows(rows, w).unwrap()
    }

    #[test]
    fn markowitz_asset_polynomial() {
        let (e, v) = (0.08, 0.04);
        let m = model(vec![vec![e, v]], vec![1.0, -0.5]);
        let p = m.asset_polynomial(1);
        assert_eq!(p.coeffs, vec![e, -v]);
    }

    #[test]
    fn zero_weights_give_zero_polynomials() {
        let m = model(vec![vec![1.0, 2.0, 3.0]; 2], vec![0.0; 3]);
        for p in m.asset_polynomials() {
            assert!(p.coeffs.iter().all(|&c| c == 0.0));
            assert_eq!(p.degree(), None);
        }
        assert_eq!(m.evaluate_utility(&[0.4, 0.6]).unwrap(), 0.0);
    }

    #[test]
    fn single_top_term() {
        let k4 = -1.5;
        let m = model(vec![vec![0.3, 0.2, 0.1, k4]], vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.asset_polynomial(1).coeffs, vec![0.0, 0.0, 0.0, 4.0 * k4]);
    }

    #[test]
    fn markowitz_maximizer_value() {
        let m = model(vec![vec![0.08, 0.04], vec![0.06, 0.02]], vec![1.0, -0.5]);
        let xs: f64 = (0.08 - 0.06 + 0.02) / (0.04 + 0.02);
        assert!((xs - 2.0 / 3.0).abs() < 1e-15);
        let l = m.evaluate_utility(&[xs, 1.0 - xs]).unwrap();
        let expected =
            xs * 0.08 + (1.0 - xs) * 0.06 - 0.5 * (xs * xs * 0.04 + (1.0 - xs).powi(2) * 0.02);
        assert!((l - expected).abs() < 1e-16);
        // constrained stationarity: both marginals equal
        let g = m.utility_gradient(&[xs, 1.0 - xs]).unwrap();
        assert!((g[0] - g[1]).abs() < 1e-15);
    }

    #[test]
    fn identical_assets_uniform_point() {
        let row = vec![0.05, 0.02, -0.01];
        let w = vec![1.0, -0.7, 0.4];
        let n = 4;
        let m = model(vec![row.clone(); n], w.clone());
        let x = vec![1.0 / n as f64; n];
        let expected: f64 = n as f64
            * (0..3)
                .map(|j| w[j] * row[j] * (n as f64).powi(-(j as i32 + 1)))
                .sum::<f64>();
        assert!((m.evaluate_utility(&x).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn utility_dimension_mismatch() {
        let m = model(vec![vec![1.0, 1.0]; 2], vec![1.0, 1.0]);
        assert!(m.evaluate_utility(&[1.0]).is_err());
    }

    #[test]
    fn global_max_cases() {
        let even = model(
            vec![vec![1.0, 1.0, 1.0, 2.0], vec![1.0, 1.0, 1.0, 0.5]],
            vec![1.0, 1.0, 1.0, -1.0],
        );
        assert_eq!(even.has_global_max(), GlobalMax::Exists);
        let odd = model(vec![vec![1.0, 1.0, 1.0]; 2], vec![1.0, 1.0, -1.0]);
        assert_eq!(odd.has_global_max(), GlobalMax::Absent);
        let mixed = model(
            vec![vec![1.0, 1.0, 1.0, 2.0], vec![1.0, 1.0, 1.0, -0.5]],
            vec![1.0, 1.0, 1.0, -1.0],
        );
        assert_eq!(mixed.has_global_max(), GlobalMax::Absent);
        let same_sign_w = model(vec![vec![1.0, 1.0, 1.0, 2.0]; 2], vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(same_sign_w.has_global_max(), GlobalMax::Absent);
        let top_zero = model(vec![vec![1.0, 1.0, 1.0, 2.0]; 2], vec![1.0, 1.0, 1.0, 0.0]);
        assert_eq!(top_zero.has_global_max(), GlobalMax::LeadingFormVanishes);
        assert!(!top_zero.has_global_max().exists());
    }

    #[test]
    fn classification_cases() {
        let p = PortfolioPoint::real(&[0.5, 0.5], 0.1);
        assert_eq!(
            classify_point(&p, TOL_REAL, TOL_FEASIBLE),
            Classification::RealFeasible
        );
        let p = PortfolioPoint::real(&[1.0, 0.0], 0.1);
        assert_eq!(
            classify_point(&p, TOL_REAL, TOL_FEASIBLE),
            Classification::Degenerate
        );
        let p = PortfolioPoint {
            x: vec![Complex64::new(0.5, 1e-3), Complex64::new(0.5, -1e-3)],
            lambda: Complex64::new(0.0, 0.0),
        };
        assert_eq!(
            classify_point(&p, 1e-8, TOL_FEASIBLE),
            Classification::Complex
        );
        let p = PortfolioPoint::real(&[1.5, -0.5], 0.0);
        assert_eq!(
            classify_point(&p, TOL_REAL, TOL_FEASIBLE),
            Classification::Real
        );
    }

    #[test]
    fn model_json_roundtrip_and_validation() {
        let m = model(vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![1.0, -0.5]);
        let back = UtilityModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let mismatch = r#"{"k": {"n":1,"d":2,"entries":[[1,2]]}, "w": [1,2,3]}"#;
        assert!(UtilityModel::from_json(mismatch).is_err());
    }
}
