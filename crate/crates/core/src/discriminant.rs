//! Multiple critical points and the discriminant locus in weight space.
//!
//! In the variables `(λ, x_1..x_n)` the Lagrange system `P_i(x_i) = λ`,
//! `Σ x_i = 1` has the bordered Jacobian
//!
//! ```text
//! [ −1  P_1′   0   …   0  ]
//! [ −1   0   P_2′  …   0  ]
//! [  …                    ]
//! [  0   1     1   …   1  ]
//! ```
//!
//! whose determinant is `±Σ_i Π_{j≠i} P_j′(x_j)`. A critical point is multiple
//! exactly when that sum vanishes: either it vanishes with at most one zero
//! partial, or two or more partials vanish and every summand does.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::critical::{expected_count, solve_critical, SolveReport};
use crate::cumulants::CumulantMatrix;
use crate::linalg;
use crate::model::{
    classify_point, AssetPolynomial, Classification, PortfolioPoint, UtilityModel, WeightVector,
    TOL_FEASIBLE, TOL_REAL,
};
use crate::tracker::{self, TrackerConfig};
use crate::{Error, Result};

/// Largest critical residual accepted by [`disc_eval`].
pub const CRITICAL_TOL: f64 = 1e-8;
/// `|disc| / scale` below which a point is multiple.
pub const TOL_DISC: f64 = 1e-6;
/// Upper end of the borderline band.
pub const TOL_BORDERLINE: f64 = 1e-4;
/// `σ_min / σ_max` of the bordered Jacobian below which it is rank deficient.
pub const RANK_RTOL: f64 = 1e-8;
/// Relative size below which `P_i′(x_i)` counts as zero.
pub const ZERO_PARTIAL_RTOL: f64 = 1e-10;
/// Cap on refinement iterations in [`find_collision`].
pub const MAX_REFINE_ITERS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Simple,
    Multiple,
    Borderline,
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiplicityDiagnostic {
    #[serde(serialize_with = "ser_complex")]
    pub disc_value: Complex64,
    /// `max_i Π_{j≠i} max(1, |P_j′(x_j)|)`.
    pub scale: f64,
    /// Singular values of the equilibrated bordered Jacobian.
    pub min_singular_value: f64,
    pub max_singular_value: f64,
    pub n_zero_partials: usize,
    pub verdict: Verdict,
}

impl MultiplicityDiagnostic {
    pub fn disc_ratio(&self) -> f64 {
        self.disc_value.norm() / self.scale
    }

    /// Verdict of the bordered-Jacobian rank test alone.
    pub fn rank_deficient(&self) -> bool {
        self.min_singular_value < RANK_RTOL * self.max_singular_value
    }
}

fn ser_complex<S: serde::Serializer>(z: &Complex64, s: S) -> std::result::Result<S::Ok, S::Error> {
    [z.re, z.im].serialize(s)
}

/// The `(n+1)×(n+1)` Jacobian of `(P_i(x_i) − λ, Σx − 1)` in `(λ, x)`.
pub fn bordered_jacobian(partials: &[Complex64]) -> linalg::CMatrix {
    let n = partials.len();
    let mut j = linalg::CMatrix::zeros(n + 1, n + 1);
    for (i, &p) in partials.iter().enumerate() {
        j[(i, 0)] = Complex64::new(-1.0, 0.0);
        j[(i, i + 1)] = p;
    }
    for c in 1..=n {
        j[(n, c)] = Complex64::new(1.0, 0.0);
    }
    j
}

/// Row scaling by `max(1, |P_i′|)` followed by scaling of the `λ` column to
/// unit max-norm. Rank is unchanged and the determinant becomes `±disc/scale`.
fn equilibrated(mut j: linalg::CMatrix) -> linalg::CMatrix {
    let n = j.nrows() - 1;
    for i in 0..n {
        let r = j[(i, i + 1)].norm().max(1.0);
        for c in 0..=n {
            j[(i, c)] /= r;
        }
    }
    let col = (0..n).map(|i| j[(i, 0)].norm()).fold(0.0, f64::max);
    if col > 0.0 {
        for i in 0..n {
            j[(i, 0)] /= col;
        }
    }
    j
}

/// Evaluates the multiplicity condition at a critical point. The point must
/// satisfy the Lagrange system to [`CRITICAL_TOL`] relative to term sizes.
pub fn disc_eval(m: &UtilityModel, p: &PortfolioPoint) -> Result<MultiplicityDiagnostic> {
    if p.x.len() != m.n() {
        return Err(Error::Dimension {
            expected: m.n(),
            got: p.x.len(),
        });
    }
    let residual = m.critical_residual_scaled(p);
    if !(residual <= CRITICAL_TOL) {
        return Err(Error::NotCritical(residual));
    }
    let derivs: Vec<_> = m
        .asset_polynomials()
        .iter()
        .map(|q| q.derivative())
        .collect();
    let partials: Vec<Complex64> = derivs.iter().zip(&p.x).map(|(q, &x)| q.eval_c(x)).collect();
    let n_zero_partials = derivs
        .iter()
        .zip(&p.x)
        .zip(&partials)
        .filter(|((q, &x), v)| v.norm() <= ZERO_PARTIAL_RTOL * q.term_magnitude(x).max(1.0))
        .count();

    let n = partials.len();
    let mut disc_value = Complex64::new(0.0, 0.0);
    let mut scale = 0.0_f64;
    for i in 0..n {
        let mut prod = Complex64::new(1.0, 0.0);
        let mut size = 1.0;
        for (j, v) in partials.iter().enumerate() {
            if j != i {
                prod *= v;
                size *= v.norm().max(1.0);
            }
        }
        disc_value += prod;
        scale = scale.max(size);
    }

    let sv = linalg::singular_values(&equilibrated(bordered_jacobian(&partials)));
    let ratio = disc_value.norm() / scale;
    let verdict = if n_zero_partials >= 2 || ratio < TOL_DISC {
        Verdict::Multiple
    } else if ratio < TOL_BORDERLINE {
        Verdict::Borderline
    } else {
        Verdict::Simple
    };
    Ok(MultiplicityDiagnostic {
        disc_value,
        scale,
        min_singular_value: *sv.last().expect("non-empty matrix"),
        max_singular_value: sv[0],
        n_zero_partials,
        verdict,
    })
}

/// Settings for a weight-segment search.
#[derive(Debug, Clone, Serialize)]
pub struct SegmentSearch {
    /// Normalized to unit length before use.
    pub direction: Vec<f64>,
    pub s_min: f64,
    pub s_max: f64,
    /// Number of grid points, endpoints included.
    pub grid: usize,
    /// Relative endpoint distance that flags a near-collision on the grid.
    pub distance_threshold: f64,
}

impl SegmentSearch {
    pub fn new(direction: Vec<f64>, s_min: f64, s_max: f64) -> Self {
        Self {
            direction,
            s_min,
            s_max,
            grid: 21,
            distance_threshold: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSample {
    pub s: f64,
    pub distinct: usize,
    pub real_count: usize,
    pub min_distance: Option<f64>,
    pub gammas: Vec<Complex64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefineMethod {
    /// Bisection on a change in the number of real critical points.
    RealCountBisection,
    /// Golden-section minimization of the nearest endpoint distance.
    MinDistance,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossingReport {
    pub s_star: f64,
    pub pair: [PortfolioPoint; 2],
    pub disc_abs: f64,
    pub verdict: Verdict,
    pub merged: PortfolioPoint,
    pub diagnostic: MultiplicityDiagnostic,
    pub weights: Vec<f64>,
    pub method: RefineMethod,
    pub bracket: [f64; 2],
    pub iterations: usize,
    pub grid: Vec<GridSample>,
    /// γ constants of the probe the colliding pair was taken from.
    pub gammas: Vec<Complex64>,
}

struct Probe {
    s: f64,
    report: SolveReport,
}

impl Probe {
    /// Endpoints of successful paths, before clustering.
    fn endpoints(&self) -> Vec<PortfolioPoint> {
        self.report
            .paths
            .iter()
            .filter(|p| p.is_success())
            .map(|p| PortfolioPoint {
                x: p.x.clone(),
                lambda: Complex64::new(0.0, 0.0),
            })
            .collect()
    }

    fn real_endpoints(&self) -> Vec<PortfolioPoint> {
        self.endpoints()
            .into_iter()
            .filter(|p| {
                matches!(
                    classify_point(p, TOL_REAL, TOL_FEASIBLE),
                    Classification::Real | Classification::RealFeasible
                )
            })
            .collect()
    }

    fn real_count(&self) -> usize {
        self.real_endpoints().len()
    }

    /// Every path reached the target.
    fn complete(&self) -> bool {
        self.report.summary.failures() == 0
    }

    /// Relative nearest-pair distance between endpoints.
    fn min_distance(&self) -> Option<f64> {
        let pts: Vec<Vec<Complex64>> = self.endpoints().into_iter().map(|p| p.x).collect();
        let (_, _, d) = tracker::nearest_pair(&pts)?;
        let size = pts.iter().map(|p| linalg::inf_norm(p)).fold(1.0, f64::max);
        Some(d / size)
    }

    fn search_distance(&self) -> f64 {
        self.min_distance().unwrap_or(f64::INFINITY)
    }
}

fn nearest_of(points: &[PortfolioPoint]) -> Option<[PortfolioPoint; 2]> {
    let xs: Vec<Vec<Complex64>> = points.iter().map(|p| p.x.clone()).collect();
    tracker::nearest_pair(&xs).map(|(a, b, _)| [points[a].clone(), points[b].clone()])
}

struct Segment<'a> {
    m: &'a UtilityModel,
    dir: Vec<f64>,
    cfg: &'a TrackerConfig,
}

impl Segment<'_> {
    fn weights(&self, s: f64) -> Vec<f64> {
        self.m
            .w()
            .as_slice()
            .iter()
            .zip(&self.dir)
            .map(|(w, d)| w + s * d)
            .collect()
    }

    fn model(&self, s: f64) -> Result<UtilityModel> {
        self.m.with_weights(WeightVector::new(self.weights(s))?)
    }

    fn probe(&self, s: f64) -> Result<Probe> {
        self.probe_seeded(s, self.cfg.seed)
    }

    fn probe_seeded(&self, s: f64, seed: u64) -> Result<Probe> {
        let cfg = TrackerConfig {
            seed,
            ..self.cfg.clone()
        };
        let report = solve_critical(&self.model(s)?, &cfg)?;
        Ok(Probe { s, report })
    }

    /// A probe whose paths all finished, trying a few γ draws.
    fn complete_probe(&self, s: f64) -> Result<Option<Probe>> {
        for attempt in 0..3u64 {
            let p = self.probe_seeded(s, self.cfg.seed.wrapping_add(attempt * 7919))?;
            if p.complete() {
                return Ok(Some(p));
            }
        }
        Ok(None)
    }

    /// Marginal coefficient vectors `(A_i, B_i)` with `P_i(x; w + s·dir) = A_i(x) + s·B_i(x)`.
    fn marginals(&self) -> Vec<(AssetPolynomial, AssetPolynomial)> {
        let k = self.m.k();
        let base = self.m.w().as_slice();
        (1..=k.n())
            .map(|i| {
                let row = k.row(i);
                let coeffs = |v: &[f64]| AssetPolynomial {
                    coeffs: row
                        .iter()
                        .zip(v)
                        .enumerate()
                        .map(|(j, (kij, wj))| (j + 1) as f64 * wj * kij)
                        .collect(),
                };
                (coeffs(base), coeffs(&self.dir))
            })
            .collect()
    }

    /// Newton on the critical system augmented by the multiplicity condition,
    /// in the unknowns `(x, s)`. A fold of the solution set is a regular root
    /// of this square system, so convergence is quadratic from a nearby guess.
    fn refine(&self, x0: &[Complex64], s0: f64) -> Option<(Vec<Complex64>, f64)> {
        let polys = self.marginals();
        let derivs: Vec<_> = polys
            .iter()
            .map(|(a, b)| (a.derivative(), b.derivative()))
            .collect();
        let n = x0.len();
        let eval = |z: &[Complex64]| -> Vec<Complex64> {
            let s = z[n];
            let p: Vec<Complex64> = polys
                .iter()
                .zip(z)
                .map(|((a, b), &x)| a.eval_c(x) + s * b.eval_c(x))
                .collect();
            let dp: Vec<Complex64> = derivs
                .iter()
                .zip(z)
                .map(|((a, b), &x)| a.eval_c(x) + s * b.eval_c(x))
                .collect();
            let mut g: Vec<Complex64> = (1..n).map(|i| p[0] - p[i]).collect();
            g.push(z[..n].iter().sum::<Complex64>() - 1.0);
            let mut disc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                disc += (0..n)
                    .filter(|&j| j != i)
                    .map(|j| dp[j])
                    .product::<Complex64>();
            }
            g.push(disc);
            g
        };
        let mut z: Vec<Complex64> = x0.to_vec();
        z.push(Complex64::new(s0, 0.0));
        let start = z.clone();
        for _ in 0..30 {
            let g = eval(&z);
            let mut jac = linalg::CMatrix::zeros(n + 1, n + 1);
            for c in 0..=n {
                let h = 1e-7 * (1.0 + z[c].norm());
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[c] += h;
                zm[c] -= h;
                let (gp, gm) = (eval(&zp), eval(&zm));
                for r in 0..=n {
                    jac[(r, c)] = (gp[r] - gm[r]) / (2.0 * h);
                }
            }
            let rhs = -linalg::CVector::from_vec(g);
            let dz = linalg::solve(jac, &rhs).ok()?;
            let step = dz.iter().map(|v| v.norm()).fold(0.0, f64::max);
            for (zi, di) in z.iter_mut().zip(dz.iter()) {
                *zi += di;
            }
            if !step.is_finite() {
                return None;
            }
            if step <= 1e-15 * (1.0 + linalg::inf_norm(&z)) {
                break;
            }
        }
        let moved = z
            .iter()
            .zip(&start)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        let s = z[n];
        let ok = moved < 1e-2 * (1.0 + linalg::inf_norm(&start))
            && s.im.abs() < 1e-9 * (1.0 + s.re.abs());
        ok.then(|| (z[..n].to_vec(), s.re))
    }
}

/// Searches `w + s·direction` for a weight vector where two critical points merge.
pub fn find_collision(
    m: &UtilityModel,
    search: &SegmentSearch,
    cfg: &TrackerConfig,
) -> Result<Option<CrossingReport>> {
    if search.direction.len() != m.d() {
        return Err(Error::Dimension {
            expected: m.d(),
            got: search.direction.len(),
        });
    }
    let norm = search.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Invalid(
            "direction must be a non-zero finite vector".into(),
        ));
    }
    if !(search.s_min < search.s_max) || search.grid < 2 {
        return Err(Error::Invalid(
            "need s_min < s_max and at least two grid points".into(),
        ));
    }
    let seg = Segment {
        m,
        dir: search.direction.iter().map(|v| v / norm).collect(),
        cfg,
    };
    for s in [search.s_min, search.s_max] {
        let end = seg.model(s)?;
        if !end.w().top_nonzero() {
            return Err(Error::Precondition(format!(
                "top weight vanishes at s = {s}"
            )));
        }
    }

    let step = (search.s_max - search.s_min) / (search.grid - 1) as f64;
    let probes: Vec<Option<Probe>> = (0..search.grid)
        .into_par_iter()
        .map(|g| seg.probe(search.s_min + step * g as f64).ok())
        .collect();
    let grid: Vec<GridSample> = probes
        .iter()
        .flatten()
        .map(|p| GridSample {
            s: p.s,
            distinct: p.report.distinct_count,
            real_count: p.real_count(),
            min_distance: p.min_distance(),
            gammas: p.report.gammas.clone(),
        })
        .collect();

    let count_change = probes.windows(2).find_map(|w| match (&w[0], &w[1]) {
        (Some(a), Some(b)) if a.complete() && b.complete() && a.real_count() != b.real_count() => {
            Some((a.s, b.s))
        }
        _ => None,
    });

    let (method, lo, hi, iterations, probe, pair) = if let Some((lo, hi)) = count_change {
        let (lo, hi, iters, side) = bisect_count(&seg, lo, hi)?;
        // right at the fold the pair may sit on the real/complex threshold
        let Some(pair) =
            nearest_of(&side.real_endpoints()).or_else(|| nearest_of(&side.endpoints()))
        else {
            return Ok(None);
        };
        (RefineMethod::RealCountBisection, lo, hi, iters, side, pair)
    } else {
        let near = probes
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.as_ref().map(|p| (i, p.search_distance())))
            .filter(|&(_, d)| d < search.distance_threshold)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((idx, _)) = near else {
            return Ok(None);
        };
        let lo = search.s_min + step * idx.saturating_sub(1) as f64;
        let hi = search.s_min + step * (idx + 1).min(search.grid - 1) as f64;
        let (lo, hi, iters, best) = golden_min_distance(&seg, lo, hi)?;
        let Some(pair) = nearest_of(&best.endpoints()) else {
            return Ok(None);
        };
        (RefineMethod::MinDistance, lo, hi, iters, best, pair)
    };

    let mid: Vec<Complex64> = pair[0]
        .x
        .iter()
        .zip(&pair[1].x)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let (x, s_star) = seg.refine(&mid, probe.s).unwrap_or((mid, probe.s));
    let model = seg.model(s_star)?;
    let lambda_of = |x: &[Complex64]| model.asset_polynomial(1).eval_c(x[0]);
    let pair = pair.map(|p| PortfolioPoint {
        lambda: lambda_of(&p.x),
        x: p.x,
    });
    let merged = PortfolioPoint {
        lambda: lambda_of(&x),
        x,
    };
    let diagnostic = disc_eval(&model, &merged)?;
    Ok(Some(CrossingReport {
        s_star,
        disc_abs: diagnostic.disc_value.norm(),
        verdict: diagnostic.verdict,
        weights: seg.weights(s_star),
        pair,
        merged,
        diagnostic,
        method,
        bracket: [lo, hi],
        iterations,
        grid,
        gammas: probe.report.gammas.clone(),
    }))
}

/// Bisection on the real-solution count. Returns the final bracket and the
/// probe on the side holding more real points.
fn bisect_count(seg: &Segment, mut lo: f64, mut hi: f64) -> Result<(f64, f64, usize, Probe)> {
    let mut p_lo = seg.probe(lo)?;
    let mut p_hi = seg.probe(hi)?;
    let mut iters = 0;
    while iters < MAX_REFINE_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        iters += 1;
        // below the tracker's resolution the count is no longer trustworthy
        let Some(p_mid) = seg.complete_probe(mid)? else {
            break;
        };
        if p_mid.real_count() == p_lo.real_count() {
            lo = mid;
            p_lo = p_mid;
        } else {
            hi = mid;
            p_hi = p_mid;
        }
    }
    let side = if p_lo.real_count() >= p_hi.real_count() {
        p_lo
    } else {
        p_hi
    };
    Ok((lo, hi, iters, side))
}

/// Golden-section minimization of the nearest-pair distance on `[lo, hi]`.
fn golden_min_distance(
    seg: &Segment,
    mut lo: f64,
    mut hi: f64,
) -> Result<(f64, f64, usize, Probe)> {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = seg.probe(hi - ratio * (hi - lo))?;
    let mut b = seg.probe(lo + ratio * (hi - lo))?;
    let mut iters = 0;
    while iters < MAX_REFINE_ITERS && hi - lo > 1e-15 * hi.abs().max(lo.abs()).max(1.0) {
        iters += 1;
        if a.search_distance() <= b.search_distance() {
            hi = b.s;
            b = a;
            a = seg.probe(hi - ratio * (hi - lo))?;
        } else {
            lo = a.s;
            a = b;
            b = seg.probe(lo + ratio * (hi - lo))?;
        }
    }
    let best = if a.search_distance() <= b.search_distance() {
        a
    } else {
        b
    };
    Ok((lo, hi, iters, best))
}

/// One critical point and its multiplicity test.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosedPoint {
    pub point: PortfolioPoint,
    pub cluster_size: usize,
    pub classification: Classification,
    pub diagnostic: MultiplicityDiagnostic,
}

/// Whether endpoint clustering and the discriminant condition agree.
#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyReport {
    pub cluster_verdict: Verdict,
    pub disc_verdict: Verdict,
    pub agree: bool,
    pub distinct: usize,
    pub expected: usize,
    pub nearest_pair_distance: Option<f64>,
    pub points: Vec<DiagnosedPoint>,
}

/// Cross-checks clustering against the discriminant condition for two assets
/// and order four.
pub fn disc_poly_check_n2_d4(
    k: &CumulantMatrix,
    w: &WeightVector,
    cfg: &TrackerConfig,
) -> Result<ConsistencyReport> {
    if k.n() != 2 || k.d() != 4 || w.d() != 4 {
        return Err(Error::Precondition(format!(
            "two assets and order four required, got n = {}, d = {}",
            k.n(),
            k.d()
        )));
    }
    let m = UtilityModel::new(k.clone(), w.clone())?;
    let report = solve_critical(&m, cfg)?;
    let mut points = Vec::with_capacity(report.points.len());
    for c in &report.points {
        points.push(DiagnosedPoint {
            diagnostic: disc_eval(&m, &c.point)?,
            point: c.point.clone(),
            cluster_size: c.multiplicity,
            classification: c.classification,
        });
    }
    let collided =
        report.distinct_count < expected_count(2, 4) || points.iter().any(|p| p.cluster_size >= 2);
    let cluster_verdict = if collided {
        Verdict::Multiple
    } else {
        Verdict::Simple
    };
    let disc_verdict = if points
        .iter()
        .any(|p| p.diagnostic.verdict == Verdict::Multiple)
    {
        Verdict::Multiple
    } else if points
        .iter()
        .any(|p| p.diagnostic.verdict == Verdict::Borderline)
    {
        Verdict::Borderline
    } else {
        Verdict::Simple
    };
    let xs: Vec<Vec<Complex64>> = points.iter().map(|p| p.point.x.clone()).collect();
    Ok(ConsistencyReport {
        agree: cluster_verdict == disc_verdict,
        cluster_verdict,
        disc_verdict,
        distinct: report.distinct_count,
        expected: report.expected_count,
        nearest_pair_distance: tracker::nearest_pair(&xs).map(|(_, _, d)| d),
        points,
    })
}
