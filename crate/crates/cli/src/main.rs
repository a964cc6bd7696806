use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tdse_toolkit::harness::config::EpsPolicy;
use tdse_toolkit::harness::output::{convergence_csv, cost_table_csv, state_csv, trajectory_csv};
use tdse_toolkit::harness::{
    cost_to_tolerance, emit_plot_data, run_convergence, run_eps_sweep, ConvergenceReport, Experiment,
    ExperimentConfig,
};
use tdse_toolkit::schemes::{
    build_strang, propagate_improved_high, propagate_improved_low, propagate_quantified_high, propagate_reference,
    propagate_strang, propagate_toolkit, SchemeKind,
};
use tdse_toolkit::toolkit::{build_correctors, build_pair_toolkit, build_toolkit, load_toolkit, save_toolkit, Toolkit};
use tdse_toolkit::Error;

/// Toolkit propagators for the controlled Schrödinger equation.
#[derive(Parser)]
#[command(name = "tdse-toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; TDSE_TOOLKIT_JOBS takes precedence.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Precompute a toolkit and write it to a directory.
    Build {
        #[command(flatten)]
        common: Common,
        /// Output directory; defaults to `<output_dir>/toolkit`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        n_steps: usize,
        /// Uniform grid cells; omit for one level per exact midpoint value.
        #[arg(long)]
        m: Option<usize>,
        /// Keep spectral factors (needed for fractional powers).
        #[arg(long)]
        factors: bool,
    },
    /// Run one scheme and write its final state.
    Propagate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scheme: SchemeKind,
        #[arg(long)]
        n_steps: usize,
        /// Final state CSV (index, re, im).
        #[arg(long, default_value = "state.csv")]
        out: PathBuf,
        /// Also write every intermediate state to this CSV.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Uniform grid cells, overriding the configured policy.
        #[arg(long)]
        m: Option<usize>,
        /// Load a toolkit written by `build` instead of building one.
        #[arg(long)]
        toolkit: Option<PathBuf>,
    },
    /// Error against the reference over the Δt sweep, with order fits.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Error against the reference over a Δε sweep at fixed Δt.
    EpsSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cheapest power-of-two parameters reaching a tolerance.
    CostTable {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the configured tolerance.
        #[arg(long, allow_negative_numbers = true)]
        tol: Option<f64>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let config = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    Ok(config)
}

fn setup_threads(common: &Common) -> Result<()> {
    let jobs = match std::env::var("TDSE_TOOLKIT_JOBS") {
        Ok(v) => Some(
            v.parse::<usize>()
                .map_err(|_| Error::Config(format!("TDSE_TOOLKIT_JOBS must be a positive integer, got {v:?}")))?,
        ),
        Err(_) => common.jobs,
    };
    if let Some(n) = jobs {
        if n == 0 {
            bail!(Error::Config("jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

fn prepare(common: &Common, out: &Option<PathBuf>) -> Result<(Experiment, PathBuf)> {
    setup_threads(common)?;
    let config = load_config(common)?;
    let dir = out.clone().unwrap_or_else(|| config.output_dir.clone());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok((Experiment::new(config)?, dir))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_report(report: &ConvergenceReport, dir: &Path, stem: &str) -> Result<()> {
    write(&dir.join(format!("{stem}.csv")), convergence_csv(report))?;
    write(&dir.join(format!("{stem}_report.json")), serde_json::to_string_pretty(report)?)?;
    emit_plot_data(report, &dir.join(format!("{stem}_plot.csv")))?;
    for f in &report.fits {
        match &f.fit {
            Some(fit) => println!(
                "{:<16} slope {:>7.3}  residual {:.3e}  ({} points)",
                f.scheme, fit.slope, fit.residual, fit.points
            ),
            None => println!("{:<16} no fit: {}", f.scheme, f.note.as_deref().unwrap_or("")),
        }
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn toolkit_for(exp: &Experiment, scheme: SchemeKind, n: usize, m: Option<usize>, path: &Option<PathBuf>) -> Result<Toolkit> {
    let dt = exp.horizon() / n as f64;
    if let Some(dir) = path {
        return Ok(load_toolkit(dir, Some(&exp.model))?);
    }
    let policy = match m {
        Some(m) => EpsPolicy::Fixed { m },
        None => exp.config.eps_policy.for_scheme(scheme).unwrap_or(EpsPolicy::Exact),
    };
    let needs_factors = matches!(scheme, SchemeKind::ImprovedHigh | SchemeKind::QuantifiedHigh);
    Ok(build_toolkit(&exp.model, exp.levels(policy, n)?, dt, needs_factors)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Build {
            common,
            out,
            n_steps,
            m,
            factors,
        } => {
            setup_threads(&common)?;
            let exp = Experiment::new(load_config(&common)?)?;
            let dir = out.unwrap_or_else(|| exp.config.output_dir.join("toolkit"));
            let policy = m.map_or(EpsPolicy::Exact, |m| EpsPolicy::Fixed { m });
            let dt = exp.horizon() / n_steps as f64;
            let tk = build_toolkit(&exp.model, exp.levels(policy, n_steps)?, dt, factors)?;
            let manifest = save_toolkit(&tk, &exp.model, &dir)?;
            println!("{} entries, Δt = {dt:.6e}: {}", tk.len(), manifest.display());
        }
        Command::Propagate {
            common,
            scheme,
            n_steps,
            out,
            trajectory,
            m,
            toolkit,
        } => {
            setup_threads(&common)?;
            let exp = Experiment::new(load_config(&common)?)?;
            let (model, field) = (&exp.model, &exp.field);
            let record = trajectory.is_some();
            let dt = exp.horizon() / n_steps as f64;
            let result = match scheme {
                SchemeKind::Toolkit => {
                    let tk = toolkit_for(&exp, scheme, n_steps, m, &toolkit)?;
                    propagate_toolkit(model, field, &tk, n_steps, record)?
                }
                SchemeKind::ImprovedLow => {
                    let tk = toolkit_for(&exp, scheme, n_steps, m, &toolkit)?;
                    let corr = build_correctors(model, dt, exp.config.omega_sign)?;
                    propagate_improved_low(model, field, &tk, &corr, n_steps, exp.config.improved_low, record)?
                }
                SchemeKind::ImprovedHigh => {
                    let tk = toolkit_for(&exp, scheme, n_steps, m, &toolkit)?;
                    propagate_improved_high(model, field, &tk, n_steps, record)?
                }
                SchemeKind::QuantifiedHigh => {
                    let tk = toolkit_for(&exp, scheme, n_steps, m, &toolkit)?;
                    let ptk = build_pair_toolkit(&tk, exp.config.quantified_k)?;
                    propagate_quantified_high(model, field, &ptk, n_steps, record)?
                }
                SchemeKind::Strang => propagate_strang(model, field, &build_strang(model, dt)?, n_steps, record)?,
                SchemeKind::Reference => propagate_reference(model, field, n_steps, record)?,
            };
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write(&out, state_csv(&result.final_state))?;
            if let (Some(path), Some(states)) = (&trajectory, &result.trajectory) {
                write(path, trajectory_csv(states, dt))?;
            }
            let summary = json!({
                "scheme": result.scheme,
                "n_steps": result.n_steps,
                "dt": result.dt,
                "horizon": result.horizon,
                "deps": result.eps_step,
                "m": result.m,
                "norm": result.final_state.norm(),
                "cost": result.cost,
            });
            write(&out.with_extension("json"), serde_json::to_string_pretty(&summary)?)?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Convergence { common, out } => {
            let (exp, dir) = prepare(&common, &out)?;
            let report = run_convergence(&exp)?;
            write_report(&report, &dir, "convergence")?;
        }
        Command::EpsSweep { common, out } => {
            let (exp, dir) = prepare(&common, &out)?;
            let report = run_eps_sweep(&exp)?;
            write_report(&report, &dir, "eps_sweep")?;
        }
        Command::CostTable { common, out, tol } => {
            let (exp, dir) = prepare(&common, &out)?;
            let tol = tol.unwrap_or(exp.config.cost.tol);
            let rows = cost_to_tolerance(&exp, tol)?;
            write(&dir.join("cost_table.csv"), cost_table_csv(&rows))?;
            let meta = json!({
                "tol": tol,
                "horizon": exp.horizon(),
                "grid_bounds": exp.config.grid_bounds(&exp.field),
                "m_convention": "m counts grid cells over the span eps_max - eps_min, not eps_max alone",
                "products_per_step": exp.config.cost.product_weights,
                "rows": rows,
            });
            write(&dir.join("cost_table.json"), serde_json::to_string_pretty(&meta)?)?;
            print!("{}", cost_table_csv(&rows));
            if let Some(r) = rows.iter().find(|r| !r.reachable) {
                bail!(Error::Unreachable(format!(
                    "{} did not reach {tol:e} within the search caps (best {:.3e})",
                    r.scheme, r.error
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors are configuration errors; clap's own code 2 is reserved
    // for numerical failures here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e.chain().any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_numerical));
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}
