use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{EpsPolicy, ExperimentConfig};
use super::fit::{fit_order, OrderFit};
use crate::cost::CostCounter;
use crate::error::{Error, Result};
use crate::field::{make_grid, midpoint_value, ControlField};
use crate::model::QuantumModel;
use crate::schemes::{
    build_strang, propagate_improved_high, propagate_improved_low, propagate_quantified_high, propagate_reference,
    propagate_strang, propagate_toolkit, reference_solution, PropagationResult, ReferenceSolution, SchemeKind,
};
use crate::toolkit::{build_correctors, build_pair_toolkit, build_toolkit, FieldLevels};

/// A configured model and field plus the lazily computed reference state.
///
/// Shared immutably by all sweep jobs.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: QuantumModel,
    pub field: ControlField,
    reference: OnceLock<ReferenceSolution>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let model = config.build_model()?;
        let field = config.build_field()?;
        Ok(Self {
            config,
            model,
            field,
            reference: OnceLock::new(),
        })
    }

    /// Reuses a reference computed elsewhere for the same model and field.
    pub fn with_reference(self, reference: ReferenceSolution) -> Self {
        let _ = self.reference.set(reference);
        self
    }

    pub fn horizon(&self) -> f64 {
        self.field.horizon()
    }

    pub fn reference(&self) -> Result<&ReferenceSolution> {
        if let Some(r) = self.reference.get() {
            return Ok(r);
        }
        let solved = reference_solution(&self.model, &self.field, &self.config.reference)?;
        log::info!(
            "reference accepted at N = {} (gap {:.3e})",
            solved.n_ref,
            solved.gaps.last().map_or(f64::NAN, |g| g.1)
        );
        Ok(self.reference.get_or_init(|| solved))
    }

    /// Error floor below which sweep points carry no order information.
    pub fn error_floor(&self) -> Result<f64> {
        let gap = self.reference()?.gaps.last().map_or(0.0, |g| g.1);
        Ok(gap.max(self.config.fit.rounding_floor))
    }

    /// Field levels for `scheme` at `n` steps under `policy`.
    pub fn levels(&self, policy: EpsPolicy, n: usize) -> Result<FieldLevels> {
        let dt = self.horizon() / n as f64;
        let (lo, hi) = self.config.grid_bounds(&self.field);
        match policy {
            EpsPolicy::Exact => {
                let mids = (0..n).map(|j| midpoint_value(&self.field, j, dt)).collect::<Result<_>>()?;
                FieldLevels::exact(mids)
            }
            EpsPolicy::Fixed { m } => Ok(make_grid(lo, hi, m)?.into()),
            EpsPolicy::Proportional { c } => {
                let m = ((hi - lo) / (c * dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
                Ok(make_grid(lo, hi, m)?.into())
            }
        }
    }

    /// One propagation of `scheme` with `n` steps on `levels` (ignored by
    /// the splitting and reference schemes).
    pub fn run(&self, scheme: SchemeKind, n: usize, levels: Option<FieldLevels>) -> Result<PropagationResult> {
        let dt = self.horizon() / n as f64;
        let (model, field) = (&self.model, &self.field);
        let levels = || -> Result<FieldLevels> {
            match levels.clone() {
                Some(l) => Ok(l),
                None => {
                    let policy = self.config.eps_policy.for_scheme(scheme).unwrap_or(EpsPolicy::Exact);
                    self.levels(policy, n)
                }
            }
        };
        let result = match scheme {
            SchemeKind::Toolkit => {
                let tk = build_toolkit(model, levels()?, dt, false)?;
                propagate_toolkit(model, field, &tk, n, false)
            }
            SchemeKind::ImprovedLow => {
                let tk = build_toolkit(model, levels()?, dt, false)?;
                let corr = build_correctors(model, dt, self.config.omega_sign)?;
                propagate_improved_low(model, field, &tk, &corr, n, self.config.improved_low, false)
            }
            SchemeKind::ImprovedHigh => {
                let tk = build_toolkit(model, levels()?, dt, true)?;
                propagate_improved_high(model, field, &tk, n, false)
            }
            SchemeKind::QuantifiedHigh => {
                let levels = levels()?;
                let k = self.config.quantified_k;
                let bytes = pair_bytes(levels.cells(), k, model.dim());
                if bytes > self.config.cost.max_pair_bytes {
                    return Err(Error::Config(format!(
                        "pair toolkit with m = {}, K = {k} needs {bytes} bytes (cap {})",
                        levels.cells(),
                        self.config.cost.max_pair_bytes
                    )));
                }
                let tk = build_toolkit(model, levels, dt, true)?;
                let ptk = build_pair_toolkit(&tk, k)?;
                propagate_quantified_high(model, field, &ptk, n, false)
            }
            SchemeKind::Strang => {
                let split = build_strang(model, dt)?;
                propagate_strang(model, field, &split, n, false)
            }
            SchemeKind::Reference => propagate_reference(model, field, n, false),
        };
        result.map_err(|e| e.context(format!("{scheme} at N = {n}")))
    }

    /// L² distance of a final state from the reference.
    pub fn error_of(&self, result: &PropagationResult) -> Result<f64> {
        result.final_state.distance(&self.reference()?.state)
    }
}

/// Memory of a pair toolkit in bytes.
pub fn pair_bytes(cells: usize, k: usize, dim: usize) -> u64 {
    (cells as u64) * (k as u64) * (dim as u64).pow(2) * 16
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Dt,
    Eps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub scheme: SchemeKind,
    pub n_steps: usize,
    pub dt: f64,
    pub eps_step: Option<f64>,
    pub m: Option<usize>,
    /// Abscissa of the fit (`Δt` or `Δε`).
    pub x: f64,
    pub error: f64,
    pub cost: CostCounter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeFit {
    pub scheme: SchemeKind,
    pub fit: Option<OrderFit>,
    /// Abscissae that entered the fit.
    pub window: Vec<f64>,
    /// Error floor used to exclude points.
    pub floor: f64,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub axis: SweepAxis,
    pub rows: Vec<ConvergenceRow>,
    pub fits: Vec<SchemeFit>,
    pub reference_n: usize,
    pub reference_gap: f64,
    pub warnings: Vec<String>,
}

impl ConvergenceReport {
    pub fn fit_for(&self, scheme: SchemeKind) -> Option<&OrderFit> {
        self.fits.iter().find(|f| f.scheme == scheme).and_then(|f| f.fit.as_ref())
    }

    pub fn rows_for(&self, scheme: SchemeKind) -> impl Iterator<Item = &ConvergenceRow> {
        self.rows.iter().filter(move |r| r.scheme == scheme)
    }
}

/// Fits the rows of one scheme, coarsest points first in `rows`.
fn fit_window(scheme: SchemeKind, rows: &[&ConvergenceRow], skip: usize, floor: f64) -> SchemeFit {
    let mut sorted: Vec<&ConvergenceRow> = rows.to_vec();
    sorted.sort_by(|a, b| b.x.total_cmp(&a.x));
    let points: Vec<(f64, f64)> = sorted
        .iter()
        .skip(skip)
        .filter(|r| r.error >= floor)
        .map(|r| (r.x, r.error))
        .collect();
    let window = points.iter().map(|p| p.0).collect();
    match fit_order(&points) {
        Ok(fit) => SchemeFit {
            scheme,
            fit: Some(fit),
            window,
            floor,
            note: None,
        },
        Err(e) => SchemeFit {
            scheme,
            fit: None,
            window,
            floor,
            note: Some(e.to_string()),
        },
    }
}

/// Halving the abscissa should not raise the error: warn above 2×, fail
/// above 10×. Points under the floor are ignored.
fn check_monotone(scheme: SchemeKind, rows: &[&ConvergenceRow], floor: f64, warnings: &mut Vec<String>) -> Result<()> {
    let mut sorted: Vec<&ConvergenceRow> = rows.to_vec();
    sorted.sort_by(|a, b| b.x.total_cmp(&a.x));
    for w in sorted.windows(2) {
        let (coarse, fine) = (w[0], w[1]);
        if coarse.error < floor || fine.error < floor {
            continue;
        }
        let growth = fine.error / coarse.error;
        if growth > 10.0 {
            return Err(Error::Fit(format!(
                "{scheme}: error grows {growth:.1}× from x = {:.3e} to x = {:.3e}",
                coarse.x, fine.x
            )));
        }
        if growth > 2.0 {
            let msg = format!(
                "{scheme}: error grows {growth:.2}× from x = {:.3e} to x = {:.3e}",
                coarse.x, fine.x
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(())
}

fn row(axis: SweepAxis, exp: &Experiment, result: &PropagationResult) -> Result<ConvergenceRow> {
    let error = exp.error_of(result)?;
    let x = match axis {
        SweepAxis::Dt => result.dt,
        SweepAxis::Eps => result
            .eps_step
            .ok_or_else(|| Error::Config(format!("{} has no field grid", result.scheme)))?,
    };
    Ok(ConvergenceRow {
        scheme: result.scheme,
        n_steps: result.n_steps,
        dt: result.dt,
        eps_step: result.eps_step,
        m: result.m,
        x,
        error,
        cost: result.cost,
    })
}

/// Errors against the reference over the configured `Δt` sweep for every
/// configured scheme, with one order fit per scheme.
pub fn run_convergence(exp: &Experiment) -> Result<ConvergenceReport> {
    let reference = exp.reference()?;
    let floor = exp.error_floor()? * exp.config.fit.floor_factor;
    let counts = exp.config.dt_sweep.counts(exp.horizon())?;
    let jobs: Vec<(SchemeKind, usize)> = exp
        .config
        .schemes
        .iter()
        .flat_map(|&s| counts.iter().map(move |&n| (s, n)))
        .collect();
    let rows: Vec<ConvergenceRow> = jobs
        .par_iter()
        .map(|&(scheme, n)| row(SweepAxis::Dt, exp, &exp.run(scheme, n, None)?))
        .collect::<Result<_>>()?;
    let mut warnings = Vec::new();
    let mut fits = Vec::new();
    for &scheme in &exp.config.schemes {
        let mine: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.scheme == scheme).collect();
        check_monotone(scheme, &mine, floor, &mut warnings)?;
        fits.push(fit_window(scheme, &mine, exp.config.fit.skip_coarsest, floor));
    }
    Ok(ConvergenceReport {
        axis: SweepAxis::Dt,
        rows,
        fits,
        reference_n: reference.n_ref,
        reference_gap: reference.gaps.last().map_or(f64::NAN, |g| g.1),
        warnings,
    })
}

/// Errors over a doubling sweep of grid sizes `m` at fixed `N`. Points
/// within `floor_factor` of the scheme's own `Δε = 0` error are left out of
/// the fit.
pub fn run_eps_sweep(exp: &Experiment) -> Result<ConvergenceReport> {
    let reference = exp.reference()?;
    let sweep = &exp.config.eps_sweep;
    let n = sweep.n_steps;
    let (lo, hi) = exp.config.grid_bounds(&exp.field);
    let ms = sweep.m_values()?;
    if let Some(s) = sweep.schemes.iter().find(|s| !s.is_toolkit_family()) {
        return Err(Error::Config(format!("{s} has no field grid to sweep")));
    }
    let jobs: Vec<(SchemeKind, Option<usize>)> = sweep
        .schemes
        .iter()
        .flat_map(|&s| std::iter::once((s, None)).chain(ms.iter().map(move |&m| (s, Some(m)))))
        .collect();
    let results: Vec<(SchemeKind, Option<usize>, PropagationResult)> = jobs
        .par_iter()
        .map(|&(scheme, m)| {
            let levels = match m {
                Some(m) => make_grid(lo, hi, m)?.into(),
                None => exp.levels(EpsPolicy::Exact, n)?,
            };
            Ok((scheme, m, exp.run(scheme, n, Some(levels))?))
        })
        .collect::<Result<_>>()?;
    let base_floor = exp.error_floor()?;
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    let mut warnings = Vec::new();
    for &scheme in &sweep.schemes {
        let mut dt_floor = 0.0;
        let mut mine = Vec::new();
        for (s, m, result) in &results {
            if *s != scheme {
                continue;
            }
            match m {
                None => dt_floor = exp.error_of(result)?,
                Some(_) => mine.push(row(SweepAxis::Eps, exp, result)?),
            }
        }
        let floor = exp.config.fit.floor_factor * base_floor.max(dt_floor);
        let refs: Vec<&ConvergenceRow> = mine.iter().collect();
        check_monotone(scheme, &refs, floor, &mut warnings)?;
        fits.push(fit_window(scheme, &refs, exp.config.fit.eps_skip_coarsest, floor));
        rows.extend(mine);
    }
    Ok(ConvergenceReport {
        axis: SweepAxis::Eps,
        rows,
        fits,
        reference_n: reference.n_ref,
        reference_gap: reference.gaps.last().map_or(f64::NAN, |g| g.1),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{FieldSpec, ModelSpec, StepSweep};
    use crate::schemes::ReferenceSettings;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            model: ModelSpec::Rotor {
                j_max: 4,
                b: 1.0,
                mu0: 1.0,
            },
            field: FieldSpec::Sinusoid {
                eps_max: 1.0,
                omega: 1.0,
            },
            horizon: Some(2.0),
            dt_sweep: StepSweep::Doubling { n_min: 8, n_max: 256 },
            reference: ReferenceSettings {
                tol: 1e-11,
                start_n: 512,
                max_n: 1 << 20,
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn convergence_orders_on_small_rotor() {
        let exp = Experiment::new(small_config()).unwrap();
        let report = run_convergence(&exp).unwrap();
        assert_eq!(report.rows.len(), 5 * 6);
        let slope = |s| report.fit_for(s).unwrap().slope;
        assert!((slope(SchemeKind::Toolkit) - 2.0).abs() < 0.2);
        assert!((slope(SchemeKind::ImprovedLow) - 3.0).abs() < 0.3);
        assert!((slope(SchemeKind::ImprovedHigh) - 2.0).abs() < 0.2);
        assert!((slope(SchemeKind::Strang) - 2.0).abs() < 0.2);
        for r in &report.rows {
            assert!(r.error <= 2.0);
            assert_eq!(r.cost.matrix_vector_applies, r.scheme.applies_per_step() * r.n_steps as u64);
        }
    }

    #[test]
    fn sweeps_are_deterministic() {
        let a = run_convergence(&Experiment::new(small_config()).unwrap()).unwrap();
        let b = run_convergence(&Experiment::new(small_config()).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn proportional_policy_bounds_step() {
        let exp = Experiment::new(small_config()).unwrap();
        for n in [8, 100, 1000] {
            let levels = exp.levels(EpsPolicy::Proportional { c: 0.5 }, n).unwrap();
            let dt = 2.0 / n as f64;
            assert!(levels.step().unwrap() <= 0.5 * dt * (1.0 + 1e-9));
        }
    }

    #[test]
    fn eps_sweep_rejects_gridless_scheme() {
        let mut config = small_config();
        config.eps_sweep.schemes = vec![SchemeKind::Strang];
        let exp = Experiment::new(config).unwrap();
        assert!(run_eps_sweep(&exp).is_err());
    }

    #[test]
    fn pair_memory_is_capped() {
        let mut config = small_config();
        config.cost.max_pair_bytes = 1000;
        let exp = Experiment::new(config).unwrap();
        assert!(matches!(exp.run(SchemeKind::QuantifiedHigh, 8, None), Err(Error::Config(_))));
    }
}
