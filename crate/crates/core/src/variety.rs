//! The feasible portfolio variety: the closure of the image of `Σ x_i = 1`
//! under `φ(x) = (Σ_i k_ij x_i^j)_{j=1..d}`.
//!
//! Dimension comes from the numerical rank of `Jac φ′`. Degree comes from
//! cutting with `n − 1` generic affine hyperplanes in `y`-space and counting
//! the intersection points with a homotopy.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::cumulants::CumulantMatrix;
use crate::linalg;
use crate::polysys::{MultiPoly, ParamFamily, PolySystem};
use crate::tracker::{self, BatchSummary, TrackerConfig};
use crate::{Error, Result};

/// `σ_{r+1} < RANK_RTOL · σ_1` ends the numerical rank at `r`.
pub const RANK_RTOL: f64 = 1e-8;
/// Leading-block pivots below this trigger a fresh slice.
pub const PIVOT_TOL: f64 = 1e-12;
const MAX_REDRAWS: usize = 16;

/// `φ′` on the free coordinates `x_1..x_{n−1}`, with `x_n = 1 − Σ x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioMap {
    k: CumulantMatrix,
}

impl PortfolioMap {
    pub fn new(k: CumulantMatrix) -> Self {
        Self { k }
    }

    pub fn k(&self) -> &CumulantMatrix {
        &self.k
    }

    pub fn n(&self) -> usize {
        self.k.n()
    }

    pub fn d(&self) -> usize {
        self.k.d()
    }

    fn check_free(&self, x: &[f64]) -> Result<()> {
        if x.len() + 1 != self.n() {
            return Err(Error::Dimension {
                expected: self.n() - 1,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn full(x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        v.push(1.0 - x.iter().sum::<f64>());
        v
    }

    /// `φ′(x)_j = Σ_{i<n} k_ij x_i^j + k_nj (1 − Σ x_i)^j`.
    pub fn map_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_free(x)?;
        let full = Self::full(x);
        Ok((1..=self.d())
            .map(|j| {
                full.iter()
                    .enumerate()
                    .map(|(i, &xi)| self.k.get(i + 1, j) * xi.powi(j as i32))
                    .sum()
            })
            .collect())
    }

    /// `φ` at a complex point with all `n` coordinates.
    pub fn map_full_c(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                got: x.len(),
            });
        }
        Ok((1..=self.d())
            .map(|j| {
                x.iter()
                    .enumerate()
                    .map(|(i, &xi)| self.k.get(i + 1, j) * xi.powi(j as i32))
                    .sum()
            })
            .collect())
    }

    /// `(n−1)×d` matrix with entry `(i, j) = j (x_i^{j−1} k_ij − x_n^{j−1} k_nj)`.
    pub fn map_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_free(x)?;
        let n = self.n();
        let xn = 1.0 - x.iter().sum::<f64>();
        Ok(DMatrix::from_fn(n - 1, self.d(), |i, c| {
            let j = c + 1;
            let p = (j - 1) as i32;
            j as f64 * (x[i].powi(p) * self.k.get(i + 1, j) - xn.powi(p) * self.k.get(n, j))
        }))
    }
}

/// Numerical rank of a real matrix at relative threshold [`RANK_RTOL`].
pub fn numerical_rank(sv: &[f64]) -> usize {
    match sv.first() {
        Some(&top) if top > 0.0 => sv.iter().take_while(|&&s| s >= RANK_RTOL * top).count(),
        _ => 0,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RankSample {
    pub x: Vec<f64>,
    pub singular_values: Vec<f64>,
    pub rank: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DimensionReport {
    pub claimed_dimension: usize,
    pub expected_dimension: usize,
    pub seed: u64,
    pub samples: Vec<RankSample>,
}

impl DimensionReport {
    /// Every sample reached the claimed rank.
    pub fn uniform(&self) -> bool {
        self.samples
            .iter()
            .all(|s| s.rank == self.claimed_dimension)
    }
}

/// Numerical rank of `Jac φ′` at `n_samples` seeded normal points.
pub fn dimension_estimate(
    pm: &PortfolioMap,
    n_samples: usize,
    seed: u64,
) -> Result<DimensionReport> {
    let (n, d) = (pm.n(), pm.d());
    if n < 2 {
        return Err(Error::Precondition("at least two assets required".into()));
    }
    if d < n - 1 {
        return Err(Error::Precondition(format!(
            "order d = {d} is below n − 1 = {}",
            n - 1
        )));
    }
    if n_samples == 0 {
        return Err(Error::Invalid("need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let x: Vec<f64> = (0..n - 1)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let sv = linalg::singular_values_real(&pm.map_jacobian(&x)?);
        samples.push(RankSample {
            rank: numerical_rank(&sv),
            singular_values: sv,
            x,
        });
    }
    Ok(DimensionReport {
        claimed_dimension: samples.iter().map(|s| s.rank).max().unwrap_or(0),
        expected_dimension: n - 1,
        seed,
        samples,
    })
}

/// `d·(d−1)·…·(d−n+2)`.
pub fn expected_degree(n: usize, d: usize) -> usize {
    (0..n.saturating_sub(1)).map(|l| d - l).product()
}

/// The `n − 1` hyperplanes `Σ_j c_{l,j} y_j = c_{l,0}` and their reduced form.
#[derive(Debug, Clone, Serialize)]
pub struct SlicingSystem {
    /// Row `l` is `[c_{l,0}, c_{l,1}, …, c_{l,d}]`.
    pub c: Vec<Vec<f64>>,
    /// Row `l` is `[r_{l,0}, r_{l,1}, …, r_{l,d}]` after eliminating the leading
    /// block, so equation `l` reads `y_{d−l}(x) + Σ_{j≤d−n+1} r_{l,j} y_j(x) = r_{l,0}`
    /// (0-based `l`).
    pub reduced: Vec<Vec<f64>>,
    /// Top degrees `d, d−1, …, d−n+2` of the reduced equations.
    pub top_degrees: Vec<usize>,
}

impl SlicingSystem {
    /// `max_l |Σ_j c_{l,j} y_j(x) − c_{l,0}|` at `y = φ(x)`, each row relative
    /// to `|c_{l,0}| + Σ_j |c_{l,j}| Σ_i |k_ij| |x_i|^j`.
    pub fn residual(&self, pm: &PortfolioMap, x: &[Complex64]) -> Result<f64> {
        let y = pm.map_full_c(x)?;
        let mags: Vec<f64> = (1..=pm.d())
            .map(|j| {
                x.iter()
                    .enumerate()
                    .map(|(i, xi)| pm.k().get(i + 1, j).abs() * xi.norm().powi(j as i32))
                    .sum()
            })
            .collect();
        Ok(self
            .c
            .iter()
            .map(|row| {
                let mut acc = Complex64::new(-row[0], 0.0);
                let mut size = row[0].abs();
                for ((cj, yj), mj) in row[1..].iter().zip(&y).zip(&mags) {
                    acc += cj * yj;
                    size += cj.abs() * mj;
                }
                acc.norm() / size.max(1.0)
            })
            .fold(0.0, f64::max))
    }
}

/// Gauss–Jordan elimination on the leading columns `d, d−1, …, d−n+2`.
/// `None` when a pivot falls below [`PIVOT_TOL`] relative to the block.
fn reduce_slice(c: &[Vec<f64>], d: usize) -> Option<Vec<Vec<f64>>> {
    let rows = c.len();
    let mut a: Vec<Vec<f64>> = c.to_vec();
    let size = a.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    for p in 0..rows {
        let col = d - p;
        let piv = (p..rows).max_by(|&u, &v| a[u][col].abs().total_cmp(&a[v][col].abs()))?;
        if a[piv][col].abs() < PIVOT_TOL * size.max(1.0) {
            return None;
        }
        a.swap(p, piv);
        let lead = a[p][col];
        for v in a[p].iter_mut() {
            *v /= lead;
        }
        for r in 0..rows {
            if r != p {
                let f = a[r][col];
                if f != 0.0 {
                    for j in 0..=d {
                        a[r][j] -= f * a[p][j];
                    }
                }
            }
        }
    }
    Some(a)
}

fn draw_slice<R: rand::Rng>(rows: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..=d).map(|_| StandardNormal.sample(&mut *rng)).collect())
        .collect()
}

/// `y_j(x) = Σ_i k_ij x_i^j` as a polynomial in `n` variables.
fn coordinate_poly(k: &CumulantMatrix, j: usize) -> Result<MultiPoly> {
    let n = k.n();
    MultiPoly::new(
        n,
        (0..n).map(|i| {
            let mut exp = vec![0u32; n];
            exp[i] = j as u32;
            (Complex64::new(k.get(i + 1, j), 0.0), exp)
        }),
    )
}

/// Slice equations `Σ_j row_j y_j(x) = row_0` plus the budget.
fn slice_target(k: &CumulantMatrix, reduced: &[Vec<f64>]) -> Result<PolySystem> {
    let n = k.n();
    let d = k.d();
    let coords: Vec<MultiPoly> = (1..=d)
        .map(|j| coordinate_poly(k, j))
        .collect::<Result<_>>()?;
    let mut eqs = Vec::with_capacity(n);
    for row in reduced {
        let mut f = MultiPoly::new(n, [(Complex64::new(-row[0], 0.0), vec![0u32; n])])?;
        for j in 1..=d {
            if row[j] != 0.0 {
                f = f.combine(
                    Complex64::new(1.0, 0.0),
                    &coords[j - 1],
                    Complex64::new(row[j], 0.0),
                )?;
            }
        }
        eqs.push(f);
    }
    eqs.push(MultiPoly::budget(n));
    PolySystem::new(eqs)
}

/// `x_{l+1}^{d−l} = 1` for `l = 0..n−2` plus the budget, and its solutions.
fn kronecker_start(n: usize, d: usize) -> Result<(PolySystem, Vec<Vec<Complex64>>)> {
    let mut eqs = Vec::with_capacity(n);
    for l in 0..n - 1 {
        let mut exp = vec![0u32; n];
        exp[l] = (d - l) as u32;
        eqs.push(MultiPoly::new(
            n,
            [
                (Complex64::new(1.0, 0.0), exp),
                (Complex64::new(-1.0, 0.0), vec![0u32; n]),
            ],
        )?);
    }
    eqs.push(MultiPoly::budget(n));
    let mut starts = vec![Vec::new()];
    for l in 0..n - 1 {
        let order = d - l;
        starts = starts
            .into_iter()
            .flat_map(|prefix: Vec<Complex64>| {
                (0..order).map(move |a| {
                    let mut v = prefix.clone();
                    v.push(Complex64::from_polar(
                        1.0,
                        std::f64::consts::TAU * a as f64 / order as f64,
                    ));
                    v
                })
            })
            .collect();
    }
    for s in &mut starts {
        let last = Complex64::new(1.0, 0.0) - s.iter().sum::<Complex64>();
        s.push(last);
    }
    Ok((PolySystem::new(eqs)?, starts))
}

#[derive(Debug, Clone, Serialize)]
pub struct WitnessPoint {
    pub x_re: Vec<f64>,
    pub x_im: Vec<f64>,
    pub y_re: Vec<f64>,
    pub y_im: Vec<f64>,
    pub multiplicity: usize,
}

impl WitnessPoint {
    pub fn x(&self) -> Vec<Complex64> {
        self.x_re
            .iter()
            .zip(&self.x_im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect()
    }

    pub fn y(&self) -> Vec<Complex64> {
        self.y_re
            .iter()
            .zip(&self.y_im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DegreeReport {
    /// Present only when every path succeeded and no endpoints coincided.
    pub claimed_degree: Option<usize>,
    pub lower_bound: usize,
    pub expected_degree: usize,
    pub slice_seed: u64,
    pub redraws: usize,
    pub slice: SlicingSystem,
    pub start_count: usize,
    pub witness_points: Vec<WitnessPoint>,
    pub reslice_residual: f64,
    pub summary: BatchSummary,
    pub gammas: Vec<[f64; 2]>,
    pub warnings: Vec<String>,
}

/// Degree of the variety by slicing and homotopy continuation.
pub fn degree_compute(
    pm: &PortfolioMap,
    cfg: &TrackerConfig,
    slice_seed: u64,
) -> Result<DegreeReport> {
    cfg.validate()?;
    let (n, d) = (pm.n(), pm.d());
    if n < 2 {
        return Err(Error::Precondition("at least two assets required".into()));
    }
    if d < n - 1 {
        return Err(Error::Precondition(format!(
            "order d = {d} is below n − 1 = {}",
            n - 1
        )));
    }
    let mut slice_rng = ChaCha8Rng::seed_from_u64(slice_seed);
    let mut redraws = 0;
    let (c, reduced) = loop {
        let c = draw_slice(n - 1, d, &mut slice_rng);
        if let Some(r) = reduce_slice(&c, d) {
            break (c, r);
        }
        redraws += 1;
        if redraws > MAX_REDRAWS {
            return Err(Error::Singular);
        }
    };
    let slice = SlicingSystem {
        top_degrees: (0..n - 1).map(|l| d - l).collect(),
        c,
        reduced,
    };
    let target = slice_target(pm.k(), &slice.reduced)?;
    let original = slice_target(pm.k(), &slice.c)?;
    let (start, starts) = kronecker_start(n, d)?;

    let mut rng = cfg.rng();
    let run = tracker::track_with_retry(
        |g| ParamFamily::new(start.clone(), target.clone(), g),
        &starts,
        cfg,
        &mut rng,
        true,
    )?;
    let endpoints: Vec<Vec<Complex64>> = run
        .solutions
        .iter()
        .filter(|s| s.is_success())
        .map(|s| s.x.clone())
        .collect();
    let clusters = tracker::dedup(&endpoints, cfg.dedup_radius);
    let mut witness_points = Vec::with_capacity(clusters.len());
    let mut reslice_residual = 0.0_f64;
    for cl in &clusters {
        // same solutions, but residuals are then measured where they are reported
        let (x, _) = tracker::polish(&original, cl.point.clone(), cfg);
        let y = pm.map_full_c(&x)?;
        reslice_residual = reslice_residual.max(slice.residual(pm, &x)?);
        witness_points.push(WitnessPoint {
            x_re: x.iter().map(|z| z.re).collect(),
            x_im: x.iter().map(|z| z.im).collect(),
            y_re: y.iter().map(|z| z.re).collect(),
            y_im: y.iter().map(|z| z.im).collect(),
            multiplicity: cl.multiplicity,
        });
    }

    let expected = expected_degree(n, d);
    let clean = run.summary.failures() == 0 && clusters.iter().all(|c| c.multiplicity == 1);
    let mut warnings = Vec::new();
    if run.summary.failures() > 0 {
        warnings.push(format!(
            "{} of {} paths failed; degree is a lower bound",
            run.summary.failures(),
            run.summary.total
        ));
    }
    if clusters.iter().any(|c| c.multiplicity > 1) {
        warnings.push("coincident endpoints; slice may not be generic".into());
    }
    if clean && clusters.len() != expected {
        warnings.push(format!(
            "found degree {}, expected {expected}",
            clusters.len()
        ));
    }
    Ok(DegreeReport {
        claimed_degree: clean.then_some(clusters.len()),
        lower_bound: clusters.len(),
        expected_degree: expected,
        slice_seed,
        redraws,
        slice,
        start_count: starts.len(),
        witness_points,
        reslice_residual,
        summary: run.summary,
        gammas: run.gammas.iter().map(|g| [g.re, g.im]).collect(),
        warnings,
    })
}

/// Points `x` with `φ′(x) = y` for two assets, found by tracking a random
/// combination of the coordinate equations and keeping endpoints that satisfy
/// all of them.
pub fn fiber_n2(
    pm: &PortfolioMap,
    y: &[Complex64],
    cfg: &TrackerConfig,
) -> Result<Vec<Vec<Complex64>>> {
    if pm.n() != 2 {
        return Err(Error::Precondition("fiber check is for two assets".into()));
    }
    let d = pm.d();
    if y.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: y.len(),
        });
    }
    let mut rng = cfg.rng();
    let weights: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut f = MultiPoly::zero(2);
    for j in 1..=d {
        let yj = coordinate_poly(pm.k(), j)?.combine(
            Complex64::new(1.0, 0.0),
            &MultiPoly::new(2, [(y[j - 1], vec![0, 0])])?,
            Complex64::new(-1.0, 0.0),
        )?;
        f = f.combine(
            Complex64::new(1.0, 0.0),
            &yj,
            Complex64::new(weights[j - 1], 0.0),
        )?;
    }
    let degree = f.degree() as usize;
    if degree == 0 {
        return Ok(Vec::new());
    }
    let target = PolySystem::new(vec![f, MultiPoly::budget(2)])?;
    let (start, starts) = kronecker_start(2, degree)?;
    let run = tracker::track_with_retry(
        |g| ParamFamily::new(start.clone(), target.clone(), g),
        &starts,
        cfg,
        &mut rng,
        true,
    )?;
    let coords: Vec<MultiPoly> = (1..=d)
        .map(|j| coordinate_poly(pm.k(), j))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for sol in run.solutions.iter().filter(|s| s.is_success()) {
        let ok = coords.iter().zip(y).all(|(p, &yj)| {
            p.eval(&sol.x)
                .map(|v| (v - yj).norm() <= 1e-8 * (1.0 + yj.norm()))
                .unwrap_or(false)
        });
        if ok {
            out.push(sol.x.clone());
        }
    }
    Ok(out)
}

/// One sampled point of the variety.
#[derive(Debug, Clone, Serialize)]
pub struct SampleRow {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Evaluates `φ′` on the simplex grid `x_i = a_i / resolution`, `a_i ≥ 1`,
/// `Σ_{i≤n} a_i = resolution`. The free coordinates `x_1..x_{n−1}` are reported.
pub fn sample_variety(pm: &PortfolioMap, resolution: usize) -> Result<Vec<SampleRow>> {
    let n = pm.n();
    if n < 2 {
        return Err(Error::Precondition("at least two assets required".into()));
    }
    if resolution < n {
        return Err(Error::Invalid(format!(
            "resolution {resolution} leaves no interior point for {n} assets"
        )));
    }
    let mut grid: Vec<Vec<usize>> = Vec::new();
    compositions(resolution, n, &mut Vec::new(), &mut grid);
    grid.par_iter()
        .map(|a| {
            let x: Vec<f64> = a[..n - 1]
                .iter()
                .map(|&v| v as f64 / resolution as f64)
                .collect();
            let y = pm.map_point(&x)?;
            Ok(SampleRow { x, y })
        })
        .collect()
}

/// Compositions of `total` into `parts` positive integers, in lexicographic order.
fn compositions(total: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if parts == 1 {
        let mut v = prefix.clone();
        v.push(total);
        out.push(v);
        return;
    }
    for first in 1..=total - (parts - 1) {
        prefix.push(first);
        compositions(total - first, parts - 1, prefix, out);
        prefix.pop();
    }
}

/// CSV with header `x1..x_{n−1}, y1..y_d`.
pub fn write_samples_csv<W: Write>(writer: W, rows: &[SampleRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if let Some(first) = rows.first() {
        let header: Vec<String> = (1..=first.x.len())
            .map(|i| format!("x{i}"))
            .chain((1..=first.y.len()).map(|j| format!("y{j}")))
            .collect();
        w.write_record(&header)?;
    }
    for r in rows {
        w.write_record(r.x.iter().chain(&r.y).map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
