//! Predictor–corrector path tracking for [`ParamFamily`] homotopies.
//!
//! Paths run from `t = 1` (start system) to `t = 0` (target). The predictor
//! is an Euler step along the Davidenko tangent `dx/dt = −H_x⁻¹ H_t`; the
//! corrector is Newton on `H(·, t)`. Endpoints are polished on the target
//! system and clustered to expose multiple roots.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, CVector};
use crate::polysys::{ParamFamily, PolySystem};
use crate::{Error, Result};

/// Required ratio between successive corrector updates.
const CONTRACTION: f64 = 0.1;

/// Endpoints closer than the dedup radius but with a Jacobian condition
/// number below this are treated as crossed paths, not a multiple root.
const CROSSING_COND: f64 = 1e8;

/// Below this `t` a stalled path gets one direct Newton attempt on the target.
const ENDGAME_T: f64 = 1e-4;

/// `‖x‖∞` beyond which a path is considered to have escaped to infinity.
pub const DIVERGENCE_NORM: f64 = 1e10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Endpoint Newton tolerance; success needs a residual below ten times this.
    pub newton_tol: f64,
    /// Relative corrector tolerance while moving along the path.
    pub path_tol: f64,
    pub max_newton_iters: usize,
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub step_expand: f64,
    pub step_shrink: f64,
    pub max_steps: usize,
    pub endpoint_polish_iters: usize,
    pub dedup_radius: f64,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-12,
            path_tol: 1e-9,
            max_newton_iters: 8,
            initial_step: 0.05,
            min_step: 1e-7,
            max_step: 0.1,
            step_expand: 2.0,
            step_shrink: 0.5,
            max_steps: 10_000,
            endpoint_polish_iters: 20,
            dedup_radius: 1e-6,
            seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.newton_tol,
            self.path_tol,
            self.initial_step,
            self.min_step,
            self.max_step,
            self.step_expand,
            self.step_shrink,
            self.dedup_radius,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Invalid(
                "tracker tolerances and steps must be positive".into(),
            ));
        }
        if self.max_newton_iters == 0 || self.max_steps == 0 {
            return Err(Error::Invalid("iteration limits must be positive".into()));
        }
        if self.min_step >= self.initial_step {
            return Err(Error::Invalid("min_step must be below initial_step".into()));
        }
        if self.step_expand <= 1.0 || self.step_shrink >= 1.0 {
            return Err(Error::Invalid(
                "step_expand must exceed 1 and step_shrink be below 1".into(),
            ));
        }
        Ok(())
    }

    /// The generator from which γ constants are drawn.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// A random unit-modulus constant for the gamma trick.
pub fn draw_gamma<R: Rng>(rng: &mut R) -> Complex64 {
    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    Complex64::from_polar(1.0, theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathStatus {
    Success,
    Diverged,
    Stalled,
    Truncated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedSolution {
    pub path_id: usize,
    pub x: Vec<Complex64>,
    /// Scaled target residual, see [`PolySystem::scaled_residual`].
    pub residual: f64,
    pub status: PathStatus,
    pub condition_estimate: f64,
    /// Parameter value where tracking stopped; zero for completed paths.
    pub t: f64,
    pub steps: usize,
}

impl Serialize for TrackedSolution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("TrackedSolution", 8)?;
        st.serialize_field("path_id", &self.path_id)?;
        st.serialize_field("x_re", &self.x.iter().map(|z| z.re).collect::<Vec<_>>())?;
        st.serialize_field("x_im", &self.x.iter().map(|z| z.im).collect::<Vec<_>>())?;
        st.serialize_field("residual", &self.residual)?;
        st.serialize_field("status", &self.status)?;
        st.serialize_field("condition", &self.condition_estimate)?;
        st.serialize_field("t", &self.t)?;
        st.serialize_field("steps", &self.steps)?;
        st.end()
    }
}

impl TrackedSolution {
    pub fn is_success(&self) -> bool {
        self.status == PathStatus::Success
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BatchSummary {
    pub total: usize,
    pub success: usize,
    pub diverged: usize,
    pub stalled: usize,
    pub truncated: usize,
}

impl BatchSummary {
    pub fn of(solutions: &[TrackedSolution]) -> Self {
        let mut s = BatchSummary {
            total: solutions.len(),
            ..Default::default()
        };
        for sol in solutions {
            match sol.status {
                PathStatus::Success => s.success += 1,
                PathStatus::Diverged => s.diverged += 1,
                PathStatus::Stalled => s.stalled += 1,
                PathStatus::Truncated => s.truncated += 1,
            }
        }
        s
    }

    pub fn failures(&self) -> usize {
        self.total - self.success
    }
}

enum Correction {
    Converged(Vec<Complex64>),
    Failed,
}

fn norm_inf(x: &[Complex64]) -> f64 {
    linalg::inf_norm(x)
}

fn newton_at(fam: &ParamFamily, x0: &[Complex64], t: f64, cfg: &TrackerConfig) -> Correction {
    let mut x = x0.to_vec();
    let mut prev = f64::INFINITY;
    for _ in 0..cfg.max_newton_iters {
        let Ok((h, hx, _)) = fam.eval_full(&x, t) else {
            return Correction::Failed;
        };
        let Ok(dx) = linalg::solve(hx, &(-h)) else {
            return Correction::Failed;
        };
        let step = dx.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if !step.is_finite() {
            return Correction::Failed;
        }
        for (xi, di) in x.iter_mut().zip(dx.iter()) {
            *xi += di;
        }
        if step <= cfg.path_tol * (1.0 + norm_inf(&x)) {
            return Correction::Converged(x);
        }
        // a non-contracting corrector signals the predictor left the basin
        if step > CONTRACTION * prev {
            return Correction::Failed;
        }
        prev = step;
    }
    Correction::Failed
}

/// Newton on the target system, keeping the iterate with the smallest scaled residual.
pub fn polish(
    target: &PolySystem,
    x0: Vec<Complex64>,
    cfg: &TrackerConfig,
) -> (Vec<Complex64>, f64) {
    let mut best_res = target.scaled_residual(&x0).unwrap_or(f64::INFINITY);
    let mut best = x0.clone();
    let mut x = x0;
    for _ in 0..cfg.endpoint_polish_iters {
        let Ok((f, j)) = target.eval_and_jacobian(&x) else {
            break;
        };
        let Ok(dx) = linalg::solve(j, &(-f)) else {
            break;
        };
        let step = dx.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if !step.is_finite() {
            break;
        }
        for (xi, di) in x.iter_mut().zip(dx.iter()) {
            *xi += di;
        }
        let res = target.scaled_residual(&x).unwrap_or(f64::INFINITY);
        if res < best_res {
            best_res = res;
            best.clone_from(&x);
        }
        if step <= 1e-3 * cfg.newton_tol * (1.0 + norm_inf(&x)) {
            break;
        }
    }
    (best, best_res)
}

/// Tracks one path from `start` at `t = 1` to `t = 0`.
pub fn track_path(fam: &ParamFamily, start: &[Complex64], cfg: &TrackerConfig) -> TrackedSolution {
    track_path_with_id(fam, start, cfg, 0)
}

fn finish(
    path_id: usize,
    x: Vec<Complex64>,
    status: PathStatus,
    t: f64,
    steps: usize,
    fam: &ParamFamily,
) -> TrackedSolution {
    let residual = fam.target.scaled_residual(&x).unwrap_or(f64::INFINITY);
    TrackedSolution {
        path_id,
        x,
        residual,
        status,
        condition_estimate: f64::INFINITY,
        t,
        steps,
    }
}

fn track_path_with_id(
    fam: &ParamFamily,
    start: &[Complex64],
    cfg: &TrackerConfig,
    path_id: usize,
) -> TrackedSolution {
    let mut x = start.to_vec();
    if let Correction::Converged(refined) = newton_at(fam, &x, 1.0, cfg) {
        x = refined;
    }
    let mut t = 1.0_f64;
    let mut h = cfg.initial_step.min(cfg.max_step);
    let mut easy = 0usize;
    let mut steps = 0usize;

    while t > 0.0 {
        if steps >= cfg.max_steps {
            return finish(path_id, x, PathStatus::Truncated, t, steps, fam);
        }
        steps += 1;
        h = h.min(t).min(cfg.max_step);
        let t_next = if t - h <= 1e-14 { 0.0 } else { t - h };
        let dt = t_next - t;

        let predicted = fam.eval_full(&x, t).ok().and_then(|(_, hx, ht)| {
            linalg::solve(hx, &(-ht)).ok().map(|tangent: CVector| {
                x.iter()
                    .zip(tangent.iter())
                    .map(|(xi, vi)| xi + vi * dt)
                    .collect::<Vec<_>>()
            })
        });

        let corrected = match predicted {
            Some(xp) => newton_at(fam, &xp, t_next, cfg),
            None => Correction::Failed,
        };

        match corrected {
            Correction::Converged(xc) => {
                x = xc;
                t = t_next;
                easy += 1;
                if easy >= 3 {
                    h *= cfg.step_expand;
                    easy = 0;
                }
                if norm_inf(&x) > DIVERGENCE_NORM {
                    return finish(path_id, x, PathStatus::Diverged, t, steps, fam);
                }
            }
            Correction::Failed => {
                easy = 0;
                h *= cfg.step_shrink;
                if h < cfg.min_step {
                    // next to the target a direct Newton solve usually finishes the path
                    if t < ENDGAME_T {
                        let (xe, residual) = polish(&fam.target, x.clone(), cfg);
                        if residual < 10.0 * cfg.newton_tol
                            && max_dist(&xe, &x) < ENDGAME_T.sqrt() * (1.0 + norm_inf(&x))
                        {
                            return endpoint(path_id, xe, residual, steps, fam);
                        }
                    }
                    let status = if norm_inf(&x) > DIVERGENCE_NORM.sqrt() {
                        PathStatus::Diverged
                    } else {
                        PathStatus::Stalled
                    };
                    return finish(path_id, x, status, t, steps, fam);
                }
            }
        }
    }

    let (x, residual) = polish(&fam.target, x, cfg);
    if norm_inf(&x) > DIVERGENCE_NORM {
        return finish(path_id, x, PathStatus::Diverged, 0.0, steps, fam);
    }
    let mut sol = endpoint(path_id, x, residual, steps, fam);
    if residual >= 10.0 * cfg.newton_tol {
        sol.status = PathStatus::Stalled;
    }
    sol
}

/// A polished endpoint at `t = 0`.
fn endpoint(
    path_id: usize,
    x: Vec<Complex64>,
    residual: f64,
    steps: usize,
    fam: &ParamFamily,
) -> TrackedSolution {
    let condition_estimate = fam
        .target
        .jacobian(&x)
        .map(|j| linalg::condition_number(&j))
        .unwrap_or(f64::INFINITY);
    TrackedSolution {
        path_id,
        x,
        residual,
        status: PathStatus::Success,
        condition_estimate,
        t: 0.0,
        steps,
    }
}

/// Tracks every start point; output order follows `starts`.
pub fn track_all(
    fam: &ParamFamily,
    starts: &[Vec<Complex64>],
    cfg: &TrackerConfig,
) -> (Vec<TrackedSolution>, BatchSummary) {
    let mut solutions: Vec<TrackedSolution> = starts
        .par_iter()
        .enumerate()
        .map(|(id, s)| track_path_with_id(fam, s, cfg, id))
        .collect();
    resolve_crossings(fam, starts, &mut solutions, cfg);
    let summary = BatchSummary::of(&solutions);
    (solutions, summary)
}

/// Successful paths whose endpoints coincide at a well-conditioned root.
fn crossed_paths(solutions: &[TrackedSolution], radius: f64) -> Vec<usize> {
    let ok: Vec<&TrackedSolution> = solutions
        .iter()
        .filter(|s| s.is_success() && s.condition_estimate < CROSSING_COND)
        .collect();
    let mut crossed = Vec::new();
    for (a, sa) in ok.iter().enumerate() {
        for sb in &ok[a + 1..] {
            if max_dist(&sa.x, &sb.x) < radius * norm_inf(&sa.x).max(1.0) {
                crossed.push(sa.path_id);
                crossed.push(sb.path_id);
            }
        }
    }
    crossed.sort_unstable();
    crossed.dedup();
    crossed
}

/// Re-tracks crossed paths with progressively smaller step caps. The start
/// to endpoint map is a bijection on nonsingular roots, so two paths meeting
/// at a simple root means one of them jumped.
fn resolve_crossings(
    fam: &ParamFamily,
    starts: &[Vec<Complex64>],
    solutions: &mut [TrackedSolution],
    cfg: &TrackerConfig,
) {
    let mut tight = cfg.clone();
    for _ in 0..3 {
        let crossed = crossed_paths(solutions, cfg.dedup_radius);
        if crossed.is_empty() {
            return;
        }
        tight.max_step /= 8.0;
        tight.initial_step = tight.initial_step.min(tight.max_step);
        tight.min_step = tight.min_step.min(0.5 * tight.initial_step);
        tight.max_steps = tight.max_steps.max(cfg.max_steps * 8);
        let redone: Vec<TrackedSolution> = crossed
            .par_iter()
            .map(|&id| track_path_with_id(fam, &starts[id], &tight, id))
            .collect();
        for sol in redone {
            let id = sol.path_id;
            solutions[id] = sol;
        }
    }
}

/// One or two batches of paths and the γ constants they used.
#[derive(Debug, Clone)]
pub struct BatchRun {
    pub solutions: Vec<TrackedSolution>,
    pub summary: BatchSummary,
    pub gammas: Vec<Complex64>,
    pub retried: bool,
}

/// Runs a batch and, when a path failed, retries the whole batch once with a
/// fresh γ. Diverged paths trigger the retry only when `retry_diverged` is
/// set (no roots at infinity are expected). The batch with more successful
/// paths is kept, the retry on ties.
pub fn track_with_retry<F>(
    make_family: F,
    starts: &[Vec<Complex64>],
    cfg: &TrackerConfig,
    rng: &mut ChaCha8Rng,
    retry_diverged: bool,
) -> Result<BatchRun>
where
    F: Fn(Complex64) -> Result<ParamFamily>,
{
    let gamma = draw_gamma(rng);
    let fam = make_family(gamma)?;
    let (solutions, summary) = track_all(&fam, starts, cfg);
    let needs_retry =
        summary.stalled + summary.truncated > 0 || (retry_diverged && summary.diverged > 0);
    if !needs_retry {
        return Ok(BatchRun {
            solutions,
            summary,
            gammas: vec![gamma],
            retried: false,
        });
    }
    let gamma2 = draw_gamma(rng);
    let fam2 = make_family(gamma2)?;
    let (solutions2, summary2) = track_all(&fam2, starts, cfg);
    let (solutions, summary) = if summary2.success >= summary.success {
        (solutions2, summary2)
    } else {
        (solutions, summary)
    };
    Ok(BatchRun {
        solutions,
        summary,
        gammas: vec![gamma, gamma2],
        retried: true,
    })
}

/// A cluster of nearby endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub point: Vec<Complex64>,
    pub multiplicity: usize,
    pub members: Vec<usize>,
}

fn max_dist(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v).norm())
        .fold(0.0, f64::max)
}

/// Groups points whose max-norm distance to a cluster's first member is below
/// `radius·max(1, ‖first‖∞)`. Representatives are cluster means.
pub fn dedup(points: &[Vec<Complex64>], radius: f64) -> Vec<Cluster> {
    let mut clusters: Vec<Cluster> = Vec::new();
    for (idx, p) in points.iter().enumerate() {
        let home = clusters.iter_mut().find(|c| {
            let seed = &points[c.members[0]];
            max_dist(seed, p) < radius * norm_inf(seed).max(1.0)
        });
        match home {
            Some(c) => c.members.push(idx),
            None => clusters.push(Cluster {
                point: p.clone(),
                multiplicity: 1,
                members: vec![idx],
            }),
        }
    }
    for c in &mut clusters {
        c.multiplicity = c.members.len();
        let k = c.members.len() as f64;
        let dim = c.point.len();
        c.point = (0..dim)
            .map(|v| c.members.iter().map(|&m| points[m][v]).sum::<Complex64>() / k)
            .collect();
    }
    clusters
}

/// Smallest pairwise max-norm distance and the indices achieving it.
pub fn nearest_pair(points: &[Vec<Complex64>]) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = max_dist(&points[i], &points[j]);
            if best.is_none_or(|(_, _, b)| d < b) {
                best = Some((i, j, d));
            }
        }
    }
    best
}
