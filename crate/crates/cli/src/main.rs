//! `portvar`: critical points, discriminants and varieties of cumulant utilities.

mod commands;
mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use commands::Outcome;
use config::{Format, RunConfig, SegmentConfig};

const EXIT_INPUT: u8 = 2;

#[derive(Parser)]
#[command(
    name = "portvar",
    version,
    about = "Critical points and feasible varieties of cumulant-based portfolio utilities"
)]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Model JSON `{k, w}` or cumulant matrix JSON `{n, d, entries}`.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Seed for γ draws, slices and sample points. Overrides PORTVAR_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the result here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a cumulant matrix from a CSV of returns (one column per asset).
    Estimate {
        #[arg(long)]
        returns: Option<PathBuf>,
        /// Highest cumulant order.
        #[arg(long)]
        order: Option<usize>,
    },
    /// All complex critical points of the utility on the budget hyperplane.
    Solve,
    /// Critical points of every truncation d, d−1, …, 2.
    SolveStrata,
    /// Search a weight segment for merging critical points.
    Discriminant {
        /// Comma-separated direction in weight space.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        direction: Option<Vec<f64>>,
        #[arg(long, allow_hyphen_values = true)]
        s_min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        s_max: Option<f64>,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Numerical dimension of the feasible portfolio variety.
    VarietyDim {
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Degree of the feasible portfolio variety by linear slicing.
    VarietyDegree {
        #[arg(long)]
        slice_seed: Option<u64>,
    },
    /// Sample the variety on a grid of the simplex interior.
    Sample {
        /// Grid denominator; 201 gives 200 points for two assets.
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Best real interior critical portfolio.
    Optimize,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Estimate { .. } => "estimate",
            Command::Solve => "solve",
            Command::SolveStrata => "solve-strata",
            Command::Discriminant { .. } => "discriminant",
            Command::VarietyDim { .. } => "variety-dim",
            Command::VarietyDegree { .. } => "variety-degree",
            Command::Sample { .. } => "sample",
            Command::Optimize => "optimize",
        }
    }

    fn has_csv(&self) -> bool {
        matches!(
            self,
            Command::Estimate { .. } | Command::Solve | Command::Sample { .. } | Command::Optimize
        )
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.command = Some(cli.command.name().to_string());
    cfg.resolve_seed(cli.seed)?;
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(o) = &cli.output {
        cfg.output = Some(o.clone());
    }
    if let Some(f) = cli.format {
        cfg.format = f;
    }
    if let Some(m) = &cli.model {
        cfg.model_path = Some(m.clone());
        cfg.model = None;
        cfg.cumulants = None;
    }
    match &cli.command {
        Command::Estimate { returns, order } => {
            if let Some(r) = returns {
                cfg.returns_path = Some(r.clone());
            }
            if let Some(d) = order {
                cfg.order = Some(*d);
            }
        }
        Command::Discriminant {
            direction,
            s_min,
            s_max,
            grid,
        } => {
            let base = cfg.segment.take();
            let pick = |flag: Option<f64>, from: Option<f64>, name: &str| {
                flag.or(from)
                    .with_context(|| format!("missing --{name} for the weight segment"))
            };
            let direction = direction
                .clone()
                .or_else(|| base.as_ref().map(|b| b.direction.clone()))
                .context("missing --direction for the weight segment")?;
            cfg.segment = Some(SegmentConfig {
                direction,
                s_min: pick(*s_min, base.as_ref().map(|b| b.s_min), "s-min")?,
                s_max: pick(*s_max, base.as_ref().map(|b| b.s_max), "s-max")?,
                grid: grid.or(base.as_ref().map(|b| b.grid)).unwrap_or(21),
            });
        }
        Command::VarietyDim { samples } => {
            if let Some(s) = samples {
                cfg.dim_samples = *s;
            }
        }
        Command::VarietyDegree { slice_seed } => {
            if let Some(s) = slice_seed {
                cfg.slice_seed = *s;
            }
        }
        Command::Sample { resolution } => {
            if let Some(r) = resolution {
                cfg.resolution = *r;
            }
        }
        Command::Solve | Command::SolveStrata | Command::Optimize => {}
    }
    cfg.load_model()?;
    Ok(cfg)
}

fn envelope(cfg: &RunConfig, out: &Outcome, with_result: bool) -> Value {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let mut v = json!({
        "version": portvar::VERSION,
        "generated_at_unix": now,
        "config": cfg,
        "gammas": out.gammas.iter().map(|g| [g.re, g.im]).collect::<Vec<_>>(),
        "warnings": out.warnings,
        "exit_code": out.exit,
    });
    if with_result {
        v["result"] = out.result.clone();
    }
    v
}

fn write_to(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit(cfg: &RunConfig, out: &Outcome) -> Result<()> {
    match cfg.format {
        Format::Json => {
            let text = serde_json::to_string_pretty(&envelope(cfg, out, true))? + "\n";
            match &cfg.output {
                Some(p) => write_to(p, &text),
                None => Ok(std::io::stdout().write_all(text.as_bytes())?),
            }
        }
        Format::Csv => {
            let csv = out.csv.as_deref().unwrap_or_default();
            let meta = serde_json::to_string_pretty(&envelope(cfg, out, false))? + "\n";
            match &cfg.output {
                Some(p) => {
                    write_to(p, csv)?;
                    let mut side = p.clone().into_os_string();
                    side.push(".meta.json");
                    write_to(Path::new(&side), &meta)
                }
                None => {
                    std::io::stdout().write_all(csv.as_bytes())?;
                    Ok(std::io::stderr().write_all(meta.as_bytes())?)
                }
            }
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let cfg = resolve(&cli)?;
    if cfg.format == Format::Csv && !cli.command.has_csv() {
        bail!(
            "`{}` has no CSV output; use --format json",
            cli.command.name()
        );
    }
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .context("configuring worker threads")?;
    }
    let out = match cli.command {
        Command::Estimate { .. } => commands::estimate(&cfg)?,
        Command::Solve => commands::solve(&cfg)?,
        Command::SolveStrata => commands::solve_strata_cmd(&cfg)?,
        Command::Discriminant { .. } => commands::discriminant(&cfg)?,
        Command::VarietyDim { .. } => commands::variety_dim(&cfg)?,
        Command::VarietyDegree { .. } => commands::variety_degree(&cfg)?,
        Command::Sample { .. } => commands::sample(&cfg)?,
        Command::Optimize => commands::optimize(&cfg)?,
    };
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    emit(&cfg, &out)?;
    Ok(out.exit)
}

/// Numerical breakdowns exit with 4, everything else is an input problem.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<portvar::Error>(),
            Some(portvar::Error::Singular | portvar::Error::NotCritical(_))
        )
    });
    if numerical {
        commands::EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
