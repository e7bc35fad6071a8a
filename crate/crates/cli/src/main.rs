#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64 as C;
use scatter2d::archive::{read_archive, write_archive};
use scatter2d::asymptotics::{build_calculus, hard_expansion_2d, soft_leading_2d, HardVariant};
use scatter2d::error::ScatterError;
use scatter2d::forward::{
    equispaced_angles_deg, generate_dataset_with, unit_from_deg, wavenumber_band,
    BoundaryCondition, ContrastSpec, FarFieldTensor, FormulationPolicy, ForwardProblem,
    FrequencySolver, ScattererConfig,
};
use scatter2d::geometry::{make_grid, Point};
use scatter2d::sampling::{add_noise, indicator, summarize, IndicatorKind, NoiseSpec};
use scatter2d::validation::{
    all_passed, flux_check, lowk_suite, mie_suite, operators_suite, reciprocity_suite, LOWK_PROBES,
};
use serde_json::json;

use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(
    name = "scatter2d",
    version,
    about = "2D acoustic scattering: forward solves, sampling reconstructions, low-frequency checks"
)]
struct Cli {
    /// Size of the worker thread pool (1 runs everything serially).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one (k, d) and write a single-sample far-field archive.
    Forward {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        #[arg(
            long = "dir-deg",
            default_value_t = 180.0,
            allow_negative_numbers = true
        )]
        dir_deg: f64,
        #[arg(long, default_value = "forward.json")]
        out: PathBuf,
    },
    /// Solve every (k_m, d_n) of the configured dataset.
    Dataset {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "dataset.json")]
        out: PathBuf,
    },
    /// Add multiplicative noise to a noise-free archive.
    Noise {
        archive: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "noisy.json")]
        out: PathBuf,
    },
    /// Evaluate a sampling indicator and write CSV, PGM and a summary.
    Reconstruct {
        archive: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        indicator: Option<String>,
        /// Direction index for potthast1 and liu1.
        #[arg(long)]
        direction: Option<usize>,
        /// "xmin xmax ymin ymax n"
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Output prefix.
        #[arg(long, default_value = "reconstruction")]
        out: PathBuf,
    },
    /// Run a check suite and write a JSON report.
    Validate {
        suite: Suite,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        k: Option<f64>,
        /// Output prefix for the report (and the lowk CSV).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Low-frequency expansion terms at probe points.
    Asymptotics {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(
            long = "dir-deg",
            default_value_t = 180.0,
            allow_negative_numbers = true
        )]
        dir_deg: f64,
        /// Wavenumbers at which to also sum the expansion.
        #[arg(long, num_args = 1..)]
        k: Vec<f64>,
        /// "x1 y1 x2 y2 ..."
        #[arg(long, allow_hyphen_values = true)]
        points: Option<String>,
        #[arg(long, default_value_t = 2)]
        order: usize,
        #[arg(long, default_value = "derived")]
        variant: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Mie,
    Reciprocity,
    Flux,
    Lowk,
    Operators,
}

enum Failure {
    Usage(String),
    Config(ConfigError),
    Run(ScatterError),
    Checks,
}

impl From<ScatterError> for Failure {
    fn from(e: ScatterError) -> Self {
        Failure::Run(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, Failure> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn problem(cfg: &RunConfig) -> Result<ForwardProblem, Failure> {
    ForwardProblem::new(&cfg.scatterer, &cfg.discretization).map_err(|e| {
        Failure::Config(ConfigError {
            pointer: "/scatterer".into(),
            message: e.to_string(),
        })
    })
}

fn stamp(t: &mut FarFieldTensor, cfg: &RunConfig, command: &str) {
    t.provenance.insert("config_hash".into(), cfg.hash());
    t.provenance.insert("command".into(), command.into());
    t.provenance
        .insert("version".into(), env!("CARGO_PKG_VERSION").into());
}

fn write_json(path: &Path, value: &serde_json::Value) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).map_err(ScatterError::from)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Pretty JSON on stdout; a closed pipe is not an error.
fn emit(value: &serde_json::Value) -> Outcome {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).map_err(ScatterError::from)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn cmd_forward(config: &Option<PathBuf>, k: f64, dir_deg: f64, out: &Path) -> Outcome {
    let cfg = load_config(config)?;
    if !(k > 0.0) || !k.is_finite() {
        return Err(Failure::Usage(format!("--k must be positive, got {k}")));
    }
    let p = problem(&cfg)?;
    if p.is_free_space() {
        eprintln!("warning: no obstacle and zero contrast, the far field is identically zero");
    }
    let angles = equispaced_angles_deg(cfg.dataset.angles);
    let t0 = Instant::now();
    let solver = FrequencySolver::new(&p, k, FormulationPolicy::Auto)?;
    let setup = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let sol = solver.solve(unit_from_deg(dir_deg))?;
    let solve = t1.elapsed().as_secs_f64();
    let xh: Vec<Point> = angles.iter().map(|&a| unit_from_deg(a)).collect();
    let ff = solver.far_field(&sol, &xh)?;
    let mut t = FarFieldTensor::zeros(angles, vec![k], vec![dir_deg])?;
    t.values = ff;
    stamp(&mut t, &cfg, "forward");
    write_archive(out, &t)?;
    let report = json!({
        "archive": out,
        "k": k,
        "direction_deg": dir_deg,
        "formulation": sol.formulation,
        "residual": sol.residual,
        "iterations": sol.iterations,
        "boundary_condition_number": solver.boundary_condition(),
        "n_cells": p.n_cells(),
        "n_nodes": p.n_nodes(),
        "timings": {"setup_s": setup, "solve_s": solve},
    });
    emit(&report)?;
    Ok(())
}

fn cmd_dataset(config: &Option<PathBuf>, out: &Path) -> Outcome {
    let cfg = load_config(config)?;
    let p = problem(&cfg)?;
    let s = &cfg.dataset;
    let ks = wavenumber_band(s.k_min, s.k_max, s.n_freq);
    let partial = with_ext(out, "partial");
    let result = generate_dataset_with(
        &p,
        &equispaced_angles_deg(s.angles),
        &ks,
        &s.directions_deg,
        FormulationPolicy::Auto,
        |m, n, sol| {
            eprintln!(
                "sample m={m} n={n} k={} dir_deg={} iterations={} residual={:e}",
                ks[m], s.directions_deg[n], sol.iterations, sol.residual
            )
        },
    );
    let mut t = match result {
        Ok(t) => t,
        Err(e) => {
            let _ = std::fs::remove_file(&partial);
            return Err(e.into());
        }
    };
    stamp(&mut t, &cfg, "dataset");
    if let Err(e) =
        write_archive(&partial, &t).and_then(|_| std::fs::rename(&partial, out).map_err(Into::into))
    {
        let _ = std::fs::remove_file(&partial);
        return Err(e.into());
    }
    eprintln!(
        "wrote {} ({}×{}×{})",
        out.display(),
        t.shape().0,
        t.shape().1,
        t.shape().2
    );
    Ok(())
}

fn cmd_noise(
    archive: &Path,
    config: &Option<PathBuf>,
    delta: Option<f64>,
    seed: Option<u64>,
    out: &Path,
) -> Outcome {
    let from_cfg = match config {
        Some(_) => load_config(config)?.noise,
        None => None,
    };
    let spec = match (delta, seed, from_cfg) {
        (Some(d), Some(s), _) => NoiseSpec { delta: d, seed: s },
        (d, s, Some(c)) => NoiseSpec {
            delta: d.unwrap_or(c.delta),
            seed: s.unwrap_or(c.seed),
        },
        _ => {
            return Err(Failure::Usage(
                "noise needs --delta and --seed (or a config with a noise section)".into(),
            ))
        }
    };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let t = read_archive(archive)?;
    let noisy = add_noise(&t, spec)?;
    write_archive(out, &noisy)?;
    Ok(())
}

fn parse_grid(text: &str) -> Result<([f64; 4], usize), Failure> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    let bad = || {
        Failure::Usage(format!(
            "--grid expects \"xmin xmax ymin ymax n\", got {text:?}"
        ))
    };
    if parts.len() != 5 {
        return Err(bad());
    }
    let mut b = [0.0; 4];
    for (o, s) in b.iter_mut().zip(&parts) {
        *o = s.parse().map_err(|_| bad())?;
    }
    Ok((b, parts[4].parse().map_err(|_| bad())?))
}

#[allow(clippy::too_many_arguments)]
fn cmd_reconstruct(
    archive: &Path,
    config: &Option<PathBuf>,
    kind: &Option<String>,
    direction: Option<usize>,
    grid: &Option<String>,
    threshold: Option<f64>,
    out: &Path,
) -> Outcome {
    let cfg = load_config(config)?;
    let kind: IndicatorKind = match kind {
        Some(s) => s
            .parse()
            .map_err(|e: ScatterError| Failure::Usage(e.to_string()))?,
        None => cfg.reconstruct.indicator,
    };
    let grid = match grid {
        Some(g) => {
            let (b, n) = parse_grid(g)?;
            make_grid(b, n).map_err(|e| Failure::Usage(e.to_string()))?
        }
        None => cfg.sampling_grid()?,
    };
    let threshold = threshold.unwrap_or(cfg.reconstruct.threshold);
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Failure::Usage(format!(
            "--threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let direction = direction.or(cfg.reconstruct.direction);
    let t = read_archive(archive)?;
    let field = indicator(&t, kind, direction, &grid).map_err(|e| Failure::Usage(e.to_string()))?;
    if field.is_degenerate() {
        eprintln!("warning: the indicator is identically zero (degenerate data)");
    }
    field.write_csv(&with_ext(out, "csv"))?;
    field.write_pgm(&with_ext(out, "pgm"))?;
    let summary = summarize(&field, threshold)?;
    let mut value = serde_json::to_value(&summary).map_err(ScatterError::from)?;
    value["archive_config_hash"] = json!(t.provenance.get("config_hash"));
    value["noise"] = json!(t.noise);
    write_json(&with_ext(out, "summary.json"), &value)?;
    emit(&value)?;
    Ok(())
}

fn with_bc(cfg: &RunConfig, bc: BoundaryCondition) -> RunConfig {
    let mut c = cfg.clone();
    if let Some(o) = c.scatterer.obstacle.as_mut() {
        o.bc = bc;
    }
    c
}

fn cmd_validate(
    suite: Suite,
    config: &Option<PathBuf>,
    k: Option<f64>,
    out: &Option<PathBuf>,
) -> Outcome {
    let cfg = load_config(config)?;
    let (name, checks, extra) = match suite {
        Suite::Mie => ("mie", mie_suite(128, &[0.5, 1.0, 2.0])?, None),
        Suite::Reciprocity => {
            let p = problem(&cfg)?;
            let pairs = [(35.0, 150.0), (0.0, 180.0), (250.0, 20.0)];
            (
                "reciprocity",
                reciprocity_suite(&p, k.unwrap_or(1.0), &pairs)?,
                None,
            )
        }
        Suite::Flux => {
            let k = k.unwrap_or(1.0);
            let d = unit_from_deg(180.0);
            let mut checks = Vec::new();
            if config.is_some() {
                checks.push(flux_check(&problem(&cfg)?, k, d)?);
            } else {
                for im in [0.0, 0.2] {
                    let mut c = cfg.clone();
                    c.scatterer = ScattererConfig::benchmark(BoundaryCondition::Soft, 0.5);
                    if let Some(m) = c.scatterer.medium.as_mut() {
                        m.contrast = ContrastSpec::Constant { re: 0.5, im };
                    }
                    checks.push(flux_check(&problem(&c)?, k, d)?);
                }
            }
            ("flux", checks, None)
        }
        Suite::Lowk => {
            let hard = problem(&with_bc(&cfg, BoundaryCondition::Hard))?;
            let soft = problem(&with_bc(&cfg, BoundaryCondition::Soft))?;
            let r = lowk_suite(&hard, &soft, unit_from_deg(180.0), &LOWK_PROBES)?;
            let csv = r.csv();
            let exps = json!({
                "hard": r.hard.iter().map(|l| json!({"variant": l.variant, "exponents": l.exponents, "exponents_log": l.exponents_log})).collect::<Vec<_>>(),
                "soft": {"spread": r.soft.spread, "tail_change": r.soft.tail_change},
            });
            ("lowk", r.checks, Some((csv, exps)))
        }
        Suite::Operators => ("operators", operators_suite(256)?, None),
    };
    let passed = all_passed(&checks);
    let mut report = json!({"suite": name, "passed": passed, "checks": checks});
    if let Some((csv, exps)) = &extra {
        report["fits"] = exps.clone();
        match out {
            Some(prefix) => std::fs::write(with_ext(prefix, "csv"), csv)?,
            None => eprint!("{csv}"),
        }
    }
    if let Some(prefix) = out {
        write_json(&with_ext(prefix, "json"), &report)?;
    }
    emit(&report)?;
    for c in &checks {
        eprintln!(
            "{} {} measured {:e} tolerance {:e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.tolerance
        );
    }
    if passed {
        Ok(())
    } else {
        Err(Failure::Checks)
    }
}

fn parse_points(text: &str) -> Result<Vec<Point>, Failure> {
    let vals: Result<Vec<f64>, _> = text.split_whitespace().map(str::parse).collect();
    match vals {
        Ok(v) if !v.is_empty() && v.len() % 2 == 0 => {
            Ok(v.chunks(2).map(|c| [c[0], c[1]]).collect())
        }
        _ => Err(Failure::Usage(format!(
            "--points expects \"x1 y1 x2 y2 ...\", got {text:?}"
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_asymptotics(
    config: &Option<PathBuf>,
    dir_deg: f64,
    ks: &[f64],
    points: &Option<String>,
    order: usize,
    variant: &str,
    out: &Option<PathBuf>,
) -> Outcome {
    let cfg = load_config(config)?;
    let p = problem(&cfg)?;
    let mesh = p
        .boundary
        .as_ref()
        .ok_or_else(|| Failure::Usage("the expansions need a soft or hard obstacle".into()))?;
    let pts = match points {
        Some(s) => parse_points(s)?,
        None => LOWK_PROBES.to_vec(),
    };
    let variant: HardVariant = variant
        .parse()
        .map_err(|e: ScatterError| Failure::Usage(e.to_string()))?;
    let calc = build_calculus(mesh)?;
    let field = match p.bc() {
        BoundaryCondition::Hard => {
            hard_expansion_2d(&calc, &p, unit_from_deg(dir_deg), &pts, order, variant)?
        }
        BoundaryCondition::Soft => soft_leading_2d(&calc, &pts)?,
        BoundaryCondition::None => {
            return Err(Failure::Usage(
                "the expansions need a soft or hard obstacle".into(),
            ))
        }
    };
    let pair = |v: &[C]| v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>();
    let report = json!({
        "boundary_condition": p.bc(),
        "direction_deg": dir_deg,
        "variant": variant,
        "points": field.points,
        "terms": field.terms.iter().map(|t| json!({"tag": t.tag, "values": pair(&t.values)})).collect::<Vec<_>>(),
        "evaluated": ks.iter().map(|&k| json!({"k": k, "values": pair(&field.evaluate(k))})).collect::<Vec<_>>(),
        "calculus": {"a_residual": calc.a_residual, "b_residual": calc.b_residual, "l_a_one": [calc.l_a_one().re, calc.l_a_one().im]},
    });
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    emit(&report)?;
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Forward {
            config,
            k,
            dir_deg,
            out,
        } => cmd_forward(config, *k, *dir_deg, out),
        Command::Dataset { config, out } => cmd_dataset(config, out),
        Command::Noise {
            archive,
            config,
            delta,
            seed,
            out,
        } => cmd_noise(archive, config, *delta, *seed, out),
        Command::Reconstruct {
            archive,
            config,
            indicator,
            direction,
            grid,
            threshold,
            out,
        } => cmd_reconstruct(
            archive, config, indicator, *direction, grid, *threshold, out,
        ),
        Command::Validate {
            suite,
            config,
            k,
            out,
        } => cmd_validate(*suite, config, *k, out),
        Command::Asymptotics {
            config,
            dir_deg,
            k,
            points,
            order,
            variant,
            out,
        } => cmd_asymptotics(config, *dir_deg, k, points, *order, variant, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Checks) => ExitCode::from(1),
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
