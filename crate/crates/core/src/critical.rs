//! All complex critical points of `L` on the budget hyperplane.
//!
//! After eliminating the multiplier, the Lagrange conditions become
//! `P_1(x_1) − P_i(x_i) = 0` for `i = 2..n` together with `Σ x_i = 1`. With
//! only the top weight switched on this system decouples:
//! `k_1d x_1^{d−1} = k_id x_i^{d−1}` gives `x_i = ζ_i (k_1d/k_id)^{1/(d−1)} x_1`
//! for `(d−1)`-th roots of unity `ζ_i`, and the budget fixes `x_1`. Those
//! `(d−1)^{n−1}` closed-form points seed a homotopy in weight space towards the
//! requested weights.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::linalg;
use crate::model::{
    classify_point, AssetPolynomial, Classification, PortfolioPoint, UtilityModel, TOL_FEASIBLE,
    TOL_REAL,
};
use crate::polysys::{
    solutions_at_infinity_check, InfinityReport, MultiPoly, ParamFamily, PolySystem,
};
use crate::tracker::{self, BatchSummary, PathStatus, TrackedSolution, TrackerConfig};
use crate::{Error, Result};

/// Threshold on `|1 + Σ ζ_i r_i|` below which a start tuple has no finite point.
pub const DEGENERATE_TUPLE_TOL: f64 = 1e-12;

/// Branch convention used for `(k_1d/k_id)^{1/(d−1)}`.
pub const ROOT_CONVENTION: &str = "principal complex branch, arg in (-pi, pi]";

fn to_complex(coeffs: &[f64]) -> Vec<Complex64> {
    coeffs.iter().map(|&c| Complex64::new(c, 0.0)).collect()
}

/// The eliminated Lagrange system as a polynomial system in `x_1..x_n`.
#[derive(Debug, Clone)]
pub struct CriticalSystem {
    pub system: PolySystem,
    marginal: AssetPolynomial,
}

impl CriticalSystem {
    /// `λ = P_1(x_1)`.
    pub fn lambda(&self, x: &[Complex64]) -> Complex64 {
        self.marginal.eval_c(x[0])
    }
}

/// `P_1(x_1) − P_i(x_i)` for `i = 2..n` followed by `Σ x_i − 1`.
pub fn build_critical_system(m: &UtilityModel) -> Result<CriticalSystem> {
    if !m.w().top_nonzero() {
        return Err(Error::TopWeightZero(m.d()));
    }
    let n = m.n();
    let polys = m.asset_polynomials();
    let first = MultiPoly::univariate(n, 0, &to_complex(&polys[0].coeffs))?;
    let mut equations = Vec::with_capacity(n);
    for (i, p) in polys.iter().enumerate().skip(1) {
        let other = MultiPoly::univariate(n, i, &to_complex(&p.coeffs))?;
        equations.push(first.sub(&other)?);
    }
    equations.push(MultiPoly::budget(n));
    Ok(CriticalSystem {
        system: PolySystem::new(equations)?,
        marginal: polys[0].clone(),
    })
}

/// Mixed-radix enumeration of `count` indices in `0..base`.
fn tuples(base: usize, count: usize) -> Vec<Vec<usize>> {
    let total = base.pow(count as u32);
    (0..total)
        .map(|mut code| {
            (0..count)
                .map(|_| {
                    let digit = code % base;
                    code /= base;
                    digit
                })
                .collect()
        })
        .collect()
}

fn root_of_unity(k: usize, order: usize) -> Complex64 {
    Complex64::from_polar(1.0, std::f64::consts::TAU * k as f64 / order as f64)
}

/// Principal `(c_1/c_i)^{1/order}` for `i = 2..n`.
fn ratio_roots(column: &[Complex64], order: usize) -> Vec<Complex64> {
    column[1..]
        .iter()
        .map(|ci| {
            let ratio = column[0] / ci;
            // keep a signed-zero imaginary part from flipping the branch
            let ratio = if ratio.im == 0.0 {
                Complex64::new(ratio.re, 0.0)
            } else {
                ratio
            };
            ratio.powf(1.0 / order as f64)
        })
        .collect()
}

fn tuple_denominator(tuple: &[usize], roots: &[Complex64], order: usize) -> Complex64 {
    Complex64::new(1.0, 0.0)
        + tuple
            .iter()
            .zip(roots)
            .map(|(&k, r)| root_of_unity(k, order) * r)
            .sum::<Complex64>()
}

fn tuple_is_degenerate(den: Complex64, roots: &[Complex64]) -> bool {
    let scale = 1.0 + roots.iter().map(|r| r.norm()).sum::<f64>();
    den.norm() < DEGENERATE_TUPLE_TOL * scale
}

/// First root-of-unity tuple for which `1 + Σ ζ_i (c_1/c_i)^{1/order}` vanishes.
pub fn first_degenerate_tuple(column: &[Complex64], order: usize) -> Option<Vec<usize>> {
    if column.len() < 2 || order == 0 {
        return None;
    }
    let roots = ratio_roots(column, order);
    tuples(order, column.len() - 1)
        .into_iter()
        .find(|t| tuple_is_degenerate(tuple_denominator(t, &roots, order), &roots))
}

/// Closed-form start system and its solutions.
#[derive(Debug, Clone)]
pub struct StartSystem {
    pub system: PolySystem,
    pub starts: Vec<Vec<Complex64>>,
    /// Root-of-unity indices `(ζ_2, …, ζ_n)` of each start, `ζ = e^{2πik/(d−1)}`.
    pub tuples: Vec<Vec<usize>>,
    /// Tuples of the data-derived system with no finite point.
    pub degenerate_tuples: Vec<Vec<usize>>,
    /// True when random complex leading coefficients replaced the `k_id`.
    pub fallback: bool,
    pub leading: Vec<Complex64>,
}

fn start_from_column(
    column: &[Complex64],
    order: usize,
    scale: Complex64,
) -> Result<(StartSystem, Vec<Vec<usize>>)> {
    let n = column.len();
    let mut equations = Vec::with_capacity(n);
    let mut top = vec![Complex64::new(0.0, 0.0); order + 1];
    for (i, ci) in column.iter().enumerate().skip(1) {
        top[order] = column[0] * scale;
        let first = MultiPoly::univariate(n, 0, &top)?;
        top[order] = ci * scale;
        let other = MultiPoly::univariate(n, i, &top)?;
        equations.push(first.sub(&other)?);
    }
    equations.push(MultiPoly::budget(n));
    let system = PolySystem::new(equations)?;

    let roots = ratio_roots(column, order);
    let mut starts = Vec::new();
    let mut kept = Vec::new();
    let mut degenerate = Vec::new();
    for t in tuples(order, n - 1) {
        let den = tuple_denominator(&t, &roots, order);
        if tuple_is_degenerate(den, &roots) {
            degenerate.push(t);
            continue;
        }
        let x1 = Complex64::new(1.0, 0.0) / den;
        let mut x = Vec::with_capacity(n);
        x.push(x1);
        for (&k, r) in t.iter().zip(&roots) {
            x.push(root_of_unity(k, order) * r * x1);
        }
        starts.push(x);
        kept.push(t);
    }
    Ok((
        StartSystem {
            system,
            starts,
            tuples: kept,
            degenerate_tuples: Vec::new(),
            fallback: false,
            leading: column.to_vec(),
        },
        degenerate,
    ))
}

/// The top-weight-only critical system `d·w_d·(k_1d x_1^{d−1} − k_id x_i^{d−1})`
/// with its `(d−1)^{n−1}` solutions. Degenerate tuples switch to random complex
/// leading coefficients drawn from `rng`.
pub fn build_start_system(m: &UtilityModel, rng: &mut ChaCha8Rng) -> Result<StartSystem> {
    let d = m.d();
    let wd = m.w().top();
    if wd == 0.0 {
        return Err(Error::TopWeightZero(d));
    }
    for i in 1..=m.n() {
        if m.k().get(i, d) == 0.0 {
            return Err(Error::ZeroCumulant { asset: i, order: d });
        }
    }
    let order = d - 1;
    let scale = Complex64::new(d as f64 * wd, 0.0);
    let column: Vec<Complex64> = (1..=m.n())
        .map(|i| Complex64::new(m.k().get(i, d), 0.0))
        .collect();
    let (mut start, degenerate) = start_from_column(&column, order, scale)?;
    if degenerate.is_empty() {
        return Ok(start);
    }
    loop {
        let random: Vec<Complex64> = (0..m.n())
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let (mut fallback, bad) = start_from_column(&random, order, scale)?;
        if bad.is_empty() {
            fallback.degenerate_tuples = degenerate;
            fallback.fallback = true;
            start = fallback;
            return Ok(start);
        }
    }
}

/// A deduplicated critical point with diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct CriticalPoint {
    pub point: PortfolioPoint,
    pub multiplicity: usize,
    /// `max(|P_i(x_i) − λ|, |Σ x_i − 1|)`.
    pub residual: f64,
    /// Same, with each equation divided by the size of its terms.
    pub scaled_residual: f64,
    pub condition: f64,
    pub classification: Classification,
    pub status: PathStatus,
}

/// Extra evidence attached when the count differs from `(d−1)^{n−1}`.
#[derive(Debug, Clone, Serialize)]
pub struct MismatchDiagnostic {
    pub nearest_pair_distance: Option<f64>,
    pub min_jacobian_singular_value: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub points: Vec<CriticalPoint>,
    pub paths: Vec<TrackedSolution>,
    pub summary: BatchSummary,
    pub expected_count: usize,
    pub distinct_count: usize,
    pub count_matches: bool,
    pub gammas: Vec<Complex64>,
    pub retried: bool,
    pub fallback_start: bool,
    pub degenerate_tuples: Vec<Vec<usize>>,
    pub infinity: InfinityReport,
    pub diagnostic: Option<MismatchDiagnostic>,
    pub warnings: Vec<String>,
}

impl SolveReport {
    /// Points classified as real or real-feasible.
    pub fn real_points(&self) -> impl Iterator<Item = &CriticalPoint> {
        self.points.iter().filter(|p| {
            matches!(
                p.classification,
                Classification::Real | Classification::RealFeasible
            )
        })
    }
}

/// `(d−1)^{n−1}`.
pub fn expected_count(n: usize, d: usize) -> usize {
    (d - 1).pow(n as u32 - 1)
}

/// Finds every complex critical point of `L` for `w_d ≠ 0` and non-zero `k`.
pub fn solve_critical(m: &UtilityModel, cfg: &TrackerConfig) -> Result<SolveReport> {
    cfg.validate()?;
    if !m.w().top_nonzero() {
        return Err(Error::TopWeightZero(m.d()));
    }
    if let Some(&(asset, order)) = m.k().zero_entries().first() {
        return Err(Error::ZeroCumulant { asset, order });
    }
    let mut rng = cfg.rng();
    let target = build_critical_system(m)?;
    let start = build_start_system(m, &mut rng)?;
    let infinity = solutions_at_infinity_check(m);

    let run = tracker::track_with_retry(
        |gamma| ParamFamily::new(start.system.clone(), target.system.clone(), gamma),
        &start.starts,
        cfg,
        &mut rng,
        infinity.is_clean(),
    )?;

    let finite: Vec<&TrackedSolution> = run.solutions.iter().filter(|s| s.is_success()).collect();
    let endpoints: Vec<Vec<Complex64>> = finite.iter().map(|s| s.x.clone()).collect();
    let clusters = tracker::dedup(&endpoints, cfg.dedup_radius);
    let points: Vec<CriticalPoint> = clusters
        .iter()
        .map(|c| {
            let mut x = c.point.clone();
            if c.multiplicity == 1 {
                x = tracker::polish(&target.system, x, cfg).0;
            }
            let point = PortfolioPoint {
                lambda: target.lambda(&x),
                x,
            };
            let condition = c
                .members
                .iter()
                .map(|&i| finite[i].condition_estimate)
                .fold(0.0, f64::max);
            CriticalPoint {
                residual: m.critical_residual(&point),
                scaled_residual: m.critical_residual_scaled(&point),
                classification: classify_point(&point, TOL_REAL, TOL_FEASIBLE),
                multiplicity: c.multiplicity,
                condition,
                status: PathStatus::Success,
                point,
            }
        })
        .collect();

    let expected = expected_count(m.n(), m.d());
    let distinct = points.len();
    let count_matches = distinct == expected;
    let mut warnings = Vec::new();
    if start.fallback {
        warnings.push(format!(
            "{} root-of-unity start tuple(s) had no finite point; random complex start system used",
            start.degenerate_tuples.len()
        ));
    }
    if let InfinityReport::Dirty(reasons) = &infinity {
        warnings.push(format!(
            "roots at infinity possible: {}",
            reasons.join(", ")
        ));
    }
    if run.summary.failures() > 0 {
        warnings.push(format!(
            "{} of {} paths failed (diverged {}, stalled {}, truncated {})",
            run.summary.failures(),
            run.summary.total,
            run.summary.diverged,
            run.summary.stalled,
            run.summary.truncated
        ));
    }
    let diagnostic = if count_matches {
        None
    } else {
        warnings.push(format!(
            "found {distinct} distinct critical points, expected {expected}; data may be near the discriminant"
        ));
        let min_sv = endpoints
            .iter()
            .filter_map(|x| target.system.jacobian(x).ok())
            .filter_map(|j| linalg::singular_values(&j).last().copied())
            .fold(None, |acc: Option<f64>, v| {
                Some(acc.map_or(v, |a| a.min(v)))
            });
        Some(MismatchDiagnostic {
            nearest_pair_distance: tracker::nearest_pair(&endpoints).map(|(_, _, d)| d),
            min_jacobian_singular_value: min_sv,
        })
    };

    Ok(SolveReport {
        points,
        paths: run.solutions,
        summary: run.summary,
        expected_count: expected,
        distinct_count: distinct,
        count_matches,
        gammas: run.gammas,
        retried: run.retried,
        fallback_start: start.fallback,
        degenerate_tuples: start.degenerate_tuples,
        infinity,
        diagnostic,
        warnings,
    })
}

/// One truncation level of the strata solve.
#[derive(Debug, Clone, Serialize)]
pub struct Stratum {
    pub order: usize,
    pub expected_count: usize,
    /// `None` when `w_order = 0` and the stratum is empty.
    pub report: Option<SolveReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrataReport {
    pub strata: Vec<Stratum>,
    /// Sum of distinct counts over solved strata.
    pub total_distinct: usize,
    /// `Σ (d'−1)^{n−1}` over solved strata.
    pub total_expected: usize,
}

/// Solves the truncated models of order `d, d−1, …, 2`, skipping orders whose
/// top weight is zero.
pub fn solve_strata(m: &UtilityModel, cfg: &TrackerConfig) -> Result<StrataReport> {
    if let Some(&(asset, order)) = m.k().zero_entries().first() {
        return Err(Error::ZeroCumulant { asset, order });
    }
    let mut strata = Vec::new();
    let (mut total_distinct, mut total_expected) = (0, 0);
    for order in (2..=m.d()).rev() {
        let sub = m.truncated(order)?;
        let expected = expected_count(m.n(), order);
        if !sub.w().top_nonzero() {
            strata.push(Stratum {
                order,
                expected_count: expected,
                report: None,
            });
            continue;
        }
        let sub_cfg = TrackerConfig {
            seed: cfg.seed.wrapping_add(order as u64),
            ..cfg.clone()
        };
        let report = solve_critical(&sub, &sub_cfg)?;
        total_distinct += report.distinct_count;
        total_expected += expected;
        strata.push(Stratum {
            order,
            expected_count: expected,
            report: Some(report),
        });
    }
    Ok(StrataReport {
        strata,
        total_distinct,
        total_expected,
    })
}

/// Ascending coefficients of `P_1(x) − P_2(1 − x)`.
pub fn reduced_polynomial_n2(m: &UtilityModel) -> Result<Vec<f64>> {
    if m.n() != 2 {
        return Err(Error::Precondition(format!(
            "two assets required, got {}",
            m.n()
        )));
    }
    let p1 = m.asset_polynomial(1);
    let p2 = m.asset_polynomial(2);
    let deg = p1.coeffs.len();
    let mut q = p1.coeffs.clone();
    // (1 − x)^p = Σ_r C(p, r) (−x)^r
    for (p, &c) in p2.coeffs.iter().enumerate() {
        let mut binom = 1.0;
        for r in 0..=p {
            let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
            q[r] -= c * binom * sign;
            binom = binom * (p - r) as f64 / (r + 1) as f64;
        }
    }
    q.truncate(deg);
    Ok(q)
}

/// Companion-matrix solution of the two-asset case.
pub fn oracle_n2(m: &UtilityModel) -> Result<Vec<PortfolioPoint>> {
    let q = reduced_polynomial_n2(m)?;
    let lead = *q.last().expect("order d ≥ 2");
    let size = q.iter().map(|c| c.abs()).fold(0.0, f64::max).max(1.0);
    if lead.abs() < 1e-14 * size {
        return Err(Error::DegreeDrop(lead));
    }
    let poly = AssetPolynomial { coeffs: q.clone() };
    let deriv = poly.derivative();
    let p1 = m.asset_polynomial(1);
    let roots = linalg::companion_roots(&q)?;
    Ok(roots
        .into_iter()
        .map(|mut r| {
            for _ in 0..3 {
                let dp = deriv.eval_c(r);
                if dp.norm() == 0.0 {
                    break;
                }
                let step = poly.eval_c(r) / dp;
                if !(step.re.is_finite() && step.im.is_finite()) {
                    break;
                }
                r -= step;
            }
            PortfolioPoint {
                x: vec![r, Complex64::new(1.0, 0.0) - r],
                lambda: p1.eval_c(r),
            }
        })
        .collect())
}
