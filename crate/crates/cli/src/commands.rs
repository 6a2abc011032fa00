use anyhow::{anyhow, bail, Context, Result};
use portvar::cumulants::{estimate_matrix, read_returns_path};
use portvar::discriminant::{find_collision, SegmentSearch};
use portvar::model::GlobalMax;
use portvar::variety::{
    degree_compute, dimension_estimate, sample_variety, write_samples_csv, PortfolioMap,
};
use portvar::{solve_critical, solve_strata, Classification, Complex64, SolveReport};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_MISMATCH: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

/// What a command produced, before it is wrapped with run metadata.
pub struct Outcome {
    pub result: Value,
    pub gammas: Vec<Complex64>,
    /// Present when the command supports tabular output.
    pub csv: Option<String>,
    pub exit: u8,
    pub warnings: Vec<String>,
}

impl Outcome {
    fn new(result: impl Serialize) -> Result<Self> {
        Ok(Self {
            result: serde_json::to_value(result)?,
            gammas: Vec::new(),
            csv: None,
            exit: EXIT_OK,
            warnings: Vec::new(),
        })
    }
}

/// Plain decimal for ordinary magnitudes, exponent form otherwise.
fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

fn csv_string(header: Vec<String>, rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn solve_exit(rep: &SolveReport) -> u8 {
    if rep.summary.success == 0 && rep.expected_count > 0 {
        EXIT_NUMERICAL
    } else if rep.count_matches {
        EXIT_OK
    } else {
        EXIT_MISMATCH
    }
}

fn solutions_csv(rep: &SolveReport) -> Result<String> {
    let n = rep.points.first().map_or(0, |p| p.point.x.len());
    let mut header: Vec<String> = Vec::new();
    header.extend((1..=n).map(|i| format!("x{i}_re")));
    header.extend((1..=n).map(|i| format!("x{i}_im")));
    header.extend(
        [
            "lambda_re",
            "lambda_im",
            "multiplicity",
            "residual",
            "classification",
        ]
        .map(String::from),
    );
    let rows = rep.points.iter().map(|p| {
        let mut r: Vec<String> = p.point.x.iter().map(|z| num(z.re)).collect();
        r.extend(p.point.x.iter().map(|z| num(z.im)));
        r.push(num(p.point.lambda.re));
        r.push(num(p.point.lambda.im));
        r.push(p.multiplicity.to_string());
        r.push(num(p.residual));
        r.push(
            serde_json::to_value(p.classification)
                .map_or_else(|_| String::new(), |v| v.as_str().unwrap_or("").into()),
        );
        r
    });
    csv_string(header, rows)
}

pub fn estimate(cfg: &RunConfig) -> Result<Outcome> {
    let path = cfg
        .returns_path
        .as_ref()
        .ok_or_else(|| anyhow!("no returns file; use --returns"))?;
    let d = cfg
        .order
        .ok_or_else(|| anyhow!("no cumulant order; use --order"))?;
    let series = read_returns_path(path)?;
    let est = estimate_matrix(&series, d)?;
    let mut out = Outcome::new(&est)?;
    if !est.valid {
        out.warnings.push(format!(
            "zero cumulant entries (asset, order) {:?}; the solver needs every entry non-zero",
            est.zero_entries
        ));
    }
    let mut header = vec!["asset".to_string()];
    header.extend((1..=d).map(|j| format!("k{j}")));
    let rows = est.assets.iter().zip(est.cumulants.rows()).map(|(a, row)| {
        let mut r = vec![a.clone()];
        r.extend(row.iter().map(|&v| num(v)));
        r
    });
    out.csv = Some(csv_string(header, rows)?);
    Ok(out)
}

pub fn solve(cfg: &RunConfig) -> Result<Outcome> {
    let m = cfg.utility_model()?;
    if !m.w().top_nonzero() {
        bail!(
            "top weight w_{} is zero, so the full-order system is undefined; run `portvar solve-strata` instead",
            m.d()
        );
    }
    let rep = solve_critical(m, &cfg.tracker)?;
    let mut out = Outcome::new(&rep)?;
    out.gammas = rep.gammas.clone();
    out.exit = solve_exit(&rep);
    out.warnings = rep.warnings.clone();
    out.csv = Some(solutions_csv(&rep)?);
    Ok(out)
}

pub fn solve_strata_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let m = cfg.utility_model()?;
    let rep = solve_strata(m, &cfg.tracker)?;
    let mut out = Outcome::new(&rep)?;
    for s in &rep.strata {
        if let Some(r) = &s.report {
            out.gammas.extend(&r.gammas);
            out.warnings
                .extend(r.warnings.iter().map(|w| format!("order {}: {w}", s.order)));
        }
    }
    out.exit = if rep.total_distinct == rep.total_expected {
        EXIT_OK
    } else {
        EXIT_MISMATCH
    };
    Ok(out)
}

pub fn discriminant(cfg: &RunConfig) -> Result<Outcome> {
    let m = cfg.utility_model()?;
    let seg = cfg
        .segment
        .as_ref()
        .ok_or_else(|| anyhow!("no weight segment; use --direction, --s-min and --s-max"))?;
    let mut search = SegmentSearch::new(seg.direction.clone(), seg.s_min, seg.s_max);
    search.grid = seg.grid;
    let found = find_collision(m, &search, &cfg.tracker)?;
    let mut out = match &found {
        Some(rep) => {
            let mut out = Outcome::new(json!({ "found": true, "crossing": rep }))?;
            out.gammas = rep.gammas.clone();
            out
        }
        None => Outcome::new(json!({ "found": false, "crossing": null }))?,
    };
    if found.is_none() {
        out.warnings.push("no crossing in the segment".into());
    }
    Ok(out)
}

pub fn variety_dim(cfg: &RunConfig) -> Result<Outcome> {
    let pm = PortfolioMap::new(cfg.cumulant_matrix()?.clone());
    let rep = dimension_estimate(&pm, cfg.dim_samples, cfg.seed)?;
    let mut out = Outcome::new(&rep)?;
    if rep.claimed_dimension != rep.expected_dimension {
        out.warnings.push(format!(
            "numerical rank {} differs from n − 1 = {}",
            rep.claimed_dimension, rep.expected_dimension
        ));
    }
    Ok(out)
}

pub fn variety_degree(cfg: &RunConfig) -> Result<Outcome> {
    let pm = PortfolioMap::new(cfg.cumulant_matrix()?.clone());
    let rep = degree_compute(&pm, &cfg.tracker, cfg.slice_seed)?;
    let mut out = Outcome::new(&rep)?;
    out.gammas = rep
        .gammas
        .iter()
        .map(|g| Complex64::new(g[0], g[1]))
        .collect();
    out.warnings = rep.warnings.clone();
    out.exit = if rep.summary.success == 0 {
        EXIT_NUMERICAL
    } else if rep.claimed_degree.is_none() || !rep.warnings.is_empty() {
        EXIT_MISMATCH
    } else {
        EXIT_OK
    };
    Ok(out)
}

pub fn sample(cfg: &RunConfig) -> Result<Outcome> {
    let pm = PortfolioMap::new(cfg.cumulant_matrix()?.clone());
    let rows = sample_variety(&pm, cfg.resolution)?;
    let mut buf = Vec::new();
    write_samples_csv(&mut buf, &rows)?;
    let mut out = Outcome::new(&rows)?;
    out.csv = Some(String::from_utf8(buf).context("sample CSV")?);
    Ok(out)
}

#[derive(Serialize)]
struct Candidate {
    x: Vec<f64>,
    lambda: f64,
    utility: f64,
}

pub fn optimize(cfg: &RunConfig) -> Result<Outcome> {
    let m = cfg.utility_model()?;
    if !m.w().top_nonzero() {
        bail!(
            "top weight w_{} is zero, so the full-order system is undefined; run `portvar solve-strata` instead",
            m.d()
        );
    }
    let rep = solve_critical(m, &cfg.tracker)?;
    let mut candidates = Vec::new();
    for p in rep
        .points
        .iter()
        .filter(|p| p.classification == Classification::RealFeasible)
    {
        let x = p.point.real_parts();
        candidates.push(Candidate {
            utility: m.evaluate_utility(&x)?,
            lambda: p.point.lambda.re,
            x,
        });
    }
    candidates.sort_by(|a, b| b.utility.total_cmp(&a.utility));
    let global: GlobalMax = m.has_global_max();
    let best = candidates.first();
    let message = if best.is_none() {
        "no interior critical portfolio"
    } else {
        "best interior critical portfolio"
    };
    let result = json!({
        "message": message,
        "best": best,
        "candidates": candidates,
        "global_max": global,
        "solutions": &rep,
    });
    let mut out = Outcome::new(result)?;
    out.gammas = rep.gammas.clone();
    out.exit = solve_exit(&rep);
    out.warnings = rep.warnings.clone();
    if best.is_none() {
        out.warnings.push(message.into());
    }
    let n = m.n();
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.extend(["lambda", "utility"].map(String::from));
    let rows = candidates.iter().map(|c| {
        let mut r: Vec<String> = c.x.iter().map(|&v| num(v)).collect();
        r.push(num(c.lambda));
        r.push(num(c.utility));
        r
    });
    out.csv = Some(csv_string(header, rows)?);
    Ok(out)
}
