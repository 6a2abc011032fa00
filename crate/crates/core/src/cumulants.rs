//! Per-asset cumulant estimation from return series.
//!
//! Cumulants come from raw sample moments through the moment–cumulant
//! recursion `κ_m = m′_m − Σ_{j<m} C(m−1, j−1) κ_j m′_{m−j}`. This is the
//! plain (biased) plug-in estimator; zero entries are flagged, never nudged.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Observed relative returns of a single asset, one value per period.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    pub asset_id: String,
    pub samples: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(asset_id: impl Into<String>, samples: Vec<f64>) -> Self {
        Self {
            asset_id: asset_id.into(),
            samples,
        }
    }
}

/// Reads a CSV with one column per asset and a header row of asset labels.
pub fn read_returns_csv<R: Read>(reader: R) -> Result<Vec<ReturnSeries>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Ingest("CSV has no asset columns".into()));
    }
    let mut series: Vec<ReturnSeries> = headers
        .iter()
        .map(|h| ReturnSeries::new(h, Vec::new()))
        .collect();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != series.len() {
            return Err(Error::Ingest(format!(
                "row {} has {} fields, expected {}",
                row + 1,
                record.len(),
                series.len()
            )));
        }
        for (s, field) in series.iter_mut().zip(record.iter()) {
            if field.is_empty() {
                return Err(Error::Ingest(format!(
                    "missing value for `{}` in row {}",
                    s.asset_id,
                    row + 1
                )));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Ingest(format!("cannot parse `{field}` in row {}", row + 1)))?;
            s.samples.push(v);
        }
    }
    Ok(series)
}

pub fn read_returns_path(path: impl AsRef<Path>) -> Result<Vec<ReturnSeries>> {
    let file = std::fs::File::open(path)?;
    read_returns_csv(file)
}

/// Sample raw moments `m′_1..m′_d`.
pub fn raw_moments(series: &ReturnSeries, d: usize) -> Result<Vec<f64>> {
    if series.samples.is_empty() {
        return Err(Error::Ingest(format!(
            "series `{}` is empty",
            series.asset_id
        )));
    }
    if let Some(bad) = series.samples.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "series `{}` ({bad})",
            series.asset_id
        )));
    }
    let count = series.samples.len() as f64;
    let mut sums = vec![0.0; d];
    for &s in &series.samples {
        let mut p = 1.0;
        for acc in sums.iter_mut() {
            p *= s;
            *acc += p;
        }
    }
    Ok(sums.into_iter().map(|v| v / count).collect())
}

fn binomial_row(m: usize) -> Vec<f64> {
    let mut row = vec![1.0; m + 1];
    for k in 1..m {
        row[k] = row[k - 1] * (m - k + 1) as f64 / k as f64;
    }
    row
}

/// Converts raw moments `m′_1..m′_d` into cumulants `κ_1..κ_d`.
pub fn moments_to_cumulants(moments: &[f64]) -> Result<Vec<f64>> {
    if moments.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("moments".into()));
    }
    // with m′_0 = 1 implicit; moments[j-1] = m′_j
    let mut kappa: Vec<f64> = Vec::with_capacity(moments.len());
    for m in 1..=moments.len() {
        let binom = binomial_row(m - 1);
        let mut acc = moments[m - 1];
        for j in 1..m {
            acc -= binom[j - 1] * kappa[j - 1] * moments[m - j - 1];
        }
        kappa.push(acc);
    }
    Ok(kappa)
}

/// Inverse of [`moments_to_cumulants`]: `m′_m = Σ_{j=1}^{m} C(m−1, j−1) κ_j m′_{m−j}`.
pub fn cumulants_to_moments(kappa: &[f64]) -> Vec<f64> {
    let mut moments: Vec<f64> = Vec::with_capacity(kappa.len());
    for m in 1..=kappa.len() {
        let binom = binomial_row(m - 1);
        let mut acc = 0.0;
        for j in 1..=m {
            let lower = if m == j { 1.0 } else { moments[m - j - 1] };
            acc += binom[j - 1] * kappa[j - 1] * lower;
        }
        moments.push(acc);
    }
    moments
}

/// The fixed data matrix `K = (k_ij)`: row `i` holds the first `d` cumulants
/// of asset `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct CumulantMatrix {
    n: usize,
    d: usize,
    entries: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    n: usize,
    d: usize,
    entries: Vec<Vec<f64>>,
}

impl TryFrom<RawMatrix> for CumulantMatrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        let m = CumulantMatrix::from_rows(raw.entries)?;
        if m.n != raw.n {
            return Err(Error::Dimension {
                expected: raw.n,
                got: m.n,
            });
        }
        if m.d != raw.d {
            return Err(Error::Dimension {
                expected: raw.d,
                got: m.d,
            });
        }
        Ok(m)
    }
}

impl From<CumulantMatrix> for RawMatrix {
    fn from(m: CumulantMatrix) -> Self {
        RawMatrix {
            n: m.n,
            d: m.d,
            entries: m.entries,
        }
    }
}

impl CumulantMatrix {
    /// Builds a matrix from per-asset rows. Requires `n ≥ 1`, `d ≥ 1`,
    /// rectangular shape and finite entries. Order `d ≥ 2` is enforced where a
    /// utility model is built, not here, since the variety map is also
    /// meaningful for `d = 1`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Invalid(
                "cumulant matrix needs at least one asset".into(),
            ));
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(Error::Invalid(
                "cumulant matrix needs at least one order".into(),
            ));
        }
        for row in &rows {
            if row.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("cumulant matrix".into()));
            }
        }
        Ok(Self {
            n,
            d,
            entries: rows,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.entries
    }

    /// `k_ij` with 1-based asset index `i` and order `j`.
    pub fn get(&self, asset: usize, order: usize) -> f64 {
        self.entries[asset - 1][order - 1]
    }

    pub fn row(&self, asset: usize) -> &[f64] {
        &self.entries[asset - 1]
    }

    /// 1-based `(asset, order)` positions of every zero entry.
    pub fn zero_entries(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, row) in self.entries.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v == 0.0 {
                    out.push((i + 1, j + 1));
                }
            }
        }
        out
    }

    /// True when every `k_ij ≠ 0`, the hypothesis of the critical-point count.
    pub fn is_valid(&self) -> bool {
        self.entries.iter().flatten().all(|&v| v != 0.0)
    }

    /// Keeps only the first `order` columns.
    pub fn truncated(&self, order: usize) -> Result<Self> {
        if order == 0 || order > self.d {
            return Err(Error::Invalid(format!(
                "cannot truncate order {} matrix to {order}",
                self.d
            )));
        }
        Self::from_rows(self.entries.iter().map(|r| r[..order].to_vec()).collect())
    }

    /// Same matrix with asset rows reordered: row `i` of the result is row `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: perm.len(),
            });
        }
        Self::from_rows(perm.iter().map(|&p| self.entries[p].clone()).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Relative size below which an estimated cumulant is reported as zero:
/// `|κ_j| ≤ ZERO_CUMULANT_RTOL · max_t |x_t|^j`.
pub const ZERO_CUMULANT_RTOL: f64 = 1e-12;

/// Result of [`estimate_matrix`]: the matrix plus its zero-entry report.
#[derive(Debug, Clone, Serialize)]
pub struct Estimate {
    pub assets: Vec<String>,
    pub cumulants: CumulantMatrix,
    pub valid: bool,
    pub zero_entries: Vec<(usize, usize)>,
}

/// Estimates one cumulant row per series. Each series needs at least `d`
/// samples. Entries that vanish up to rounding are listed in `zero_entries`
/// and clear `valid`; their values are left as computed.
pub fn estimate_matrix(series_list: &[ReturnSeries], d: usize) -> Result<Estimate> {
    if d == 0 {
        return Err(Error::Invalid("order d must be positive".into()));
    }
    if series_list.is_empty() {
        return Err(Error::Ingest("no return series".into()));
    }
    let mut rows = Vec::with_capacity(series_list.len());
    let mut zero_entries = Vec::new();
    for (i, s) in series_list.iter().enumerate() {
        if s.samples.len() < d {
            return Err(Error::SeriesTooShort {
                asset: s.asset_id.clone(),
                len: s.samples.len(),
                required: d,
            });
        }
        let row = moments_to_cumulants(&raw_moments(s, d)?)?;
        let size = s.samples.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (j, &k) in row.iter().enumerate() {
            if k.abs() <= ZERO_CUMULANT_RTOL * size.powi(j as i32 + 1) {
                zero_entries.push((i + 1, j + 1));
            }
        }
        rows.push(row);
    }
    let cumulants = CumulantMatrix::from_rows(rows)?;
    Ok(Estimate {
        assets: series_list.iter().map(|s| s.asset_id.clone()).collect(),
        valid: zero_entries.is_empty(),
        zero_entries,
        cumulants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn raw_moments_constant_series() {
        let c = 1.7;
        let s = ReturnSeries::new("a", vec![c; 5]);
        let m = raw_moments(&s, 3).unwrap();
        assert!(close(m[0], c, 1e-15));
        assert!(close(m[1], c * c, 1e-15));
        assert!(close(m[2], c * c * c, 1e-15));
    }

    #[test]
    fn raw_moments_symmetric_pair() {
        let s = ReturnSeries::new("a", vec![1.0, -1.0]);
        assert_eq!(raw_moments(&s, 2).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn raw_moments_small_sample() {
        let s = ReturnSeries::new("a", vec![0.1, 0.2, 0.3]);
        let m = raw_moments(&s, 2).unwrap();
        assert!(close(m[0], 0.2, 1e-14));
        assert!(close(m[1], 0.14 / 3.0, 1e-14));
    }

    #[test]
    fn raw_moments_empty_is_error() {
        let s = ReturnSeries::new("a", vec![]);
        assert!(matches!(raw_moments(&s, 2), Err(Error::Ingest(_))));
    }

    #[test]
    fn constant_variable_has_no_higher_cumulants() {
        let c = 0.3;
        let k = moments_to_cumulants(&[c, c * c, c * c * c]).unwrap();
        assert!(close(k[0], c, 1e-15));
        assert!(k[1].abs() < 1e-15);
        assert!(k[2].abs() < 1e-15);
    }

    #[test]
    fn two_point_distribution_cumulants() {
        // log cosh t = t²/2 − t⁴/12 + …  ⇒ κ = (0, 1, 0, −2)
        let k = moments_to_cumulants(&[0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(k, vec![0.0, 1.0, 0.0, -2.0]);
    }

    #[test]
    fn variance_identity() {
        let m = [0.4, 0.9, 1.3];
        let k = moments_to_cumulants(&m).unwrap();
        assert!(close(k[1], m[1] - m[0] * m[0], 1e-15));
    }

    #[test]
    fn non_finite_moments_rejected() {
        assert!(moments_to_cumulants(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn constant_series_matrix_flags_zeros() {
        let series = vec![
            ReturnSeries::new("a", vec![0.1; 6]),
            ReturnSeries::new("b", vec![-0.2; 6]),
        ];
        let est = estimate_matrix(&series, 3).unwrap();
        assert!(!est.valid);
        assert_eq!(est.zero_entries, vec![(1, 2), (1, 3), (2, 2), (2, 3)]);
        for i in 1..=2 {
            for j in 2..=3 {
                assert!(est.cumulants.get(i, j).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn symmetric_pair_matrix() {
        let est = estimate_matrix(&[ReturnSeries::new("a", vec![1.0, -1.0])], 2).unwrap();
        assert_eq!(est.cumulants.rows(), &[vec![0.0, 1.0]]);
        assert!(!est.valid);
        assert_eq!(est.zero_entries, vec![(1, 1)]);
    }

    #[test]
    fn short_series_rejected() {
        let err = estimate_matrix(&[ReturnSeries::new("a", vec![1.0])], 3).unwrap_err();
        assert!(matches!(err, Error::SeriesTooShort { required: 3, .. }));
    }

    #[test]
    fn csv_ingestion() {
        let data = "A, B\n0.1, 0.2\n-0.1, 0.4\n0.3, 0.0\n";
        let s = read_returns_csv(data.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].asset_id, "A");
        assert_eq!(s[1].samples, vec![0.2, 0.4, 0.0]);
    }

    #[test]
    fn csv_missing_value_rejected() {
        let data = "A,B\n0.1,\n";
        assert!(matches!(
            read_returns_csv(data.as_bytes()),
            Err(Error::Ingest(_))
        ));
    }

    #[test]
    fn matrix_json_shape_checked() {
        let m = CumulantMatrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let json = serde_json::to_value(&m).unwrap();
        assert_eq!(json["n"], 2);
        assert_eq!(json["d"], 2);
        assert_eq!(json["entries"][1][0], 3.0);
        let bad = r#"{"n": 3, "d": 2, "entries": [[1,2],[3,4]]}"#;
        assert!(CumulantMatrix::from_json(bad).is_err());
        let ragged = r#"{"n": 2, "d": 2, "entries": [[1,2],[3]]}"#;
        assert!(CumulantMatrix::from_json(ragged).is_err());
    }
}
