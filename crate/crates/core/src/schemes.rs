//! Time-stepping drivers and the step-exact reference solver.
//!
//! Every run uses `Δt = T/N` with `T` the field horizon. Each driver is
//! strictly sequential in the step index; distinct runs may share a model,
//! field and toolkit across threads.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::cost::CostCounter;
use crate::error::{Error, Result};
use crate::field::{derivative_stencil, midpoint_value, BetaDivisor, ControlField};
use crate::linalg::{expm_unitary, spectral_factorize, CVector, SpectralFactors, StateVector, UnitaryPropagator, C64};
use crate::model::QuantumModel;
use crate::toolkit::{CorrectorPair, FieldLevels, PairToolkit, Toolkit};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Toolkit,
    ImprovedLow,
    ImprovedHigh,
    QuantifiedHigh,
    Strang,
    Reference,
}

impl SchemeKind {
    /// The five approximate schemes, in table order.
    pub const APPROXIMATE: [SchemeKind; 5] = [
        SchemeKind::Toolkit,
        SchemeKind::ImprovedLow,
        SchemeKind::ImprovedHigh,
        SchemeKind::QuantifiedHigh,
        SchemeKind::Strang,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Toolkit => "toolkit",
            SchemeKind::ImprovedLow => "improved_low",
            SchemeKind::ImprovedHigh => "improved_high",
            SchemeKind::QuantifiedHigh => "quantified_high",
            SchemeKind::Strang => "strang",
            SchemeKind::Reference => "reference",
        }
    }

    /// Matrix-vector applies per step.
    pub fn applies_per_step(self) -> u64 {
        match self {
            SchemeKind::Toolkit | SchemeKind::QuantifiedHigh | SchemeKind::Reference => 1,
            SchemeKind::ImprovedHigh => 2,
            SchemeKind::ImprovedLow | SchemeKind::Strang => 3,
        }
    }

    /// Default per-step weights of the tabulated "matrix products" column.
    pub fn products_per_step(self) -> u64 {
        match self {
            SchemeKind::Toolkit | SchemeKind::QuantifiedHigh | SchemeKind::Reference => 1,
            SchemeKind::ImprovedLow | SchemeKind::Strang => 2,
            SchemeKind::ImprovedHigh => 3,
        }
    }

    /// Members of the precompute-then-apply family.
    pub fn is_toolkit_family(self) -> bool {
        matches!(
            self,
            SchemeKind::Toolkit | SchemeKind::ImprovedLow | SchemeKind::ImprovedHigh | SchemeKind::QuantifiedHigh
        )
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "toolkit" => Ok(SchemeKind::Toolkit),
            "improved_low" => Ok(SchemeKind::ImprovedLow),
            "improved_high" => Ok(SchemeKind::ImprovedHigh),
            "quantified_high" => Ok(SchemeKind::QuantifiedHigh),
            "strang" => Ok(SchemeKind::Strang),
            "reference" => Ok(SchemeKind::Reference),
            _ => Err(Error::Config(format!("unknown scheme {s:?}"))),
        }
    }
}

/// Initial factor of the improved low-intensity scheme.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImprovedLowInit {
    /// `ψ_0 = ψ0`; correctors applied inside every step only.
    #[default]
    Eq23,
    /// Additionally applies `Ω^{α_0} Θ^{β_0}` to `ψ0` before the first step.
    Literal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImprovedLowOptions {
    #[serde(default)]
    pub divisor: BetaDivisor,
    #[serde(default)]
    pub init: ImprovedLowInit,
}

#[derive(Clone, Debug)]
pub struct PropagationResult {
    pub final_state: StateVector,
    /// States at `t_0, …, t_N` when recording was requested.
    pub trajectory: Option<Vec<StateVector>>,
    pub cost: CostCounter,
    pub scheme: SchemeKind,
    pub dt: f64,
    pub n_steps: usize,
    pub horizon: f64,
    /// `Δε` of a uniform toolkit grid.
    pub eps_step: Option<f64>,
    /// Cells of a uniform toolkit grid.
    pub m: Option<usize>,
}

fn step_size(field: &ControlField, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("number of steps must be positive".into()));
    }
    Ok(field.horizon() / n as f64)
}

fn check_dt(expected: f64, found: f64, what: &str) -> Result<()> {
    if (expected - found).abs() > 1e-12 * expected {
        return Err(Error::InvalidArgument(format!(
            "{what} was built for Δt = {found}, run uses Δt = {expected}"
        )));
    }
    Ok(())
}

fn check_dim(model: &QuantumModel, dim: usize) -> Result<()> {
    if model.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: dim,
        });
    }
    Ok(())
}

fn with_step(j: usize, dt: f64, e: Error) -> Error {
    match e {
        Error::BoundsViolation { value, lower, upper, .. } => Error::BoundsViolation {
            value,
            time: (j as f64 + 0.5) * dt,
            lower,
            upper,
        },
        other => other,
    }
}

/// Runs `n` steps of `step`, recording states on request.
fn drive(
    model: &QuantumModel,
    n: usize,
    record: bool,
    cost: &mut CostCounter,
    mut state: StateVector,
    mut step: impl FnMut(usize, &StateVector, &mut CostCounter) -> Result<StateVector>,
) -> Result<(StateVector, Option<Vec<StateVector>>)> {
    let mut trajectory = record.then(|| {
        let mut v = Vec::with_capacity(n + 1);
        v.push(state.clone());
        v
    });
    debug_assert_eq!(state.dim(), model.dim());
    for j in 0..n {
        state = step(j, &state, cost)?;
        cost.steps += 1;
        if let Some(t) = trajectory.as_mut() {
            t.push(state.clone());
        }
    }
    Ok((state, trajectory))
}

/// `(Δε, m)` of a uniform grid; both absent for exact levels.
fn levels_info(levels: &FieldLevels) -> (Option<f64>, Option<usize>) {
    match levels {
        FieldLevels::Uniform(g) => (Some(g.step()), Some(g.m())),
        FieldLevels::Exact(_) => (None, None),
    }
}

/// Toolkit scheme: `ψ_{j+1} = S_{ℓ_j} ψ_j` with `ℓ_j` the nearest level to
/// the midpoint field value.
pub fn propagate_toolkit(
    model: &QuantumModel,
    field: &ControlField,
    tk: &Toolkit,
    n: usize,
    record: bool,
) -> Result<PropagationResult> {
    let dt = step_size(field, n)?;
    check_dt(dt, tk.dt(), "toolkit")?;
    check_dim(model, tk.dim())?;
    let mut used = vec![false; tk.len()];
    let mut cost = CostCounter::default();
    let (final_state, trajectory) = drive(model, n, record, &mut cost, model.psi0.clone(), |j, psi, cost| {
        let eps = midpoint_value(field, j, dt)?;
        let level = tk.levels().nearest_index(eps).map_err(|e| with_step(j, dt, e))?;
        if let Some(step) = tk.levels().step() {
            debug_assert!((eps - tk.levels().values()[level]).abs() <= 0.5 * step * (1.0 + 1e-9));
        }
        used[level] = true;
        tk.entry(level).apply(psi, cost)
    })?;
    cost.toolkit_entries_used = used.iter().filter(|&&u| u).count() as u64;
    let (eps_step, m) = levels_info(tk.levels());
    Ok(PropagationResult {
        final_state,
        trajectory,
        cost,
        scheme: SchemeKind::Toolkit,
        dt,
        n_steps: n,
        horizon: field.horizon(),
        eps_step,
        m,
    })
}

/// Improved low-intensity scheme:
/// `ψ_{j+1} = S_{ℓ_j} Ω^{α_j} Θ^{β_j} ψ_j`.
pub fn propagate_improved_low(
    model: &QuantumModel,
    field: &ControlField,
    tk: &Toolkit,
    corr: &CorrectorPair,
    n: usize,
    options: ImprovedLowOptions,
    record: bool,
) -> Result<PropagationResult> {
    let dt = step_size(field, n)?;
    check_dt(dt, tk.dt(), "toolkit")?;
    check_dt(dt, corr.dt(), "corrector pair")?;
    check_dim(model, tk.dim())?;
    let mut used = vec![false; tk.len()];
    let mut cost = CostCounter::default();
    let mut psi0 = model.psi0.clone();
    if options.init == ImprovedLowInit::Literal {
        let s = derivative_stencil(field, 0, dt, options.divisor)?;
        psi0 = corr.apply_theta(s.beta, &psi0, &mut cost);
        psi0 = corr.apply_omega(s.alpha, &psi0, &mut cost);
    }
    let (final_state, trajectory) = drive(model, n, record, &mut cost, psi0, |j, psi, cost| {
        let s = derivative_stencil(field, j, dt, options.divisor)?;
        let eps = midpoint_value(field, j, dt)?;
        let level = tk.levels().nearest_index(eps).map_err(|e| with_step(j, dt, e))?;
        used[level] = true;
        let psi = corr.apply_theta(s.beta, psi, cost);
        let psi = corr.apply_omega(s.alpha, &psi, cost);
        tk.entry(level).apply(&psi, cost)
    })?;
    cost.toolkit_entries_used = used.iter().filter(|&&u| u).count() as u64;
    let (eps_step, m) = levels_info(tk.levels());
    Ok(PropagationResult {
        final_state,
        trajectory,
        cost,
        scheme: SchemeKind::ImprovedLow,
        dt,
        n_steps: n,
        horizon: field.horizon(),
        eps_step,
        m,
    })
}

/// Improved high-intensity scheme:
/// `ψ_{j+1} = S_{ℓ_j+1}^{β_j} S_{ℓ_j}^{α_j} ψ_j` with
/// `α_j ε̄_ℓ + β_j ε̄_{ℓ+1} = ε(t_{j+1/2})`.
pub fn propagate_improved_high(
    model: &QuantumModel,
    field: &ControlField,
    tk: &Toolkit,
    n: usize,
    record: bool,
) -> Result<PropagationResult> {
    let dt = step_size(field, n)?;
    check_dt(dt, tk.dt(), "toolkit")?;
    check_dim(model, tk.dim())?;
    if !tk.has_factors() {
        return Err(Error::FactorsMissing(0));
    }
    let mut used = vec![false; tk.len()];
    let mut cost = CostCounter::default();
    let (final_state, trajectory) = drive(model, n, record, &mut cost, model.psi0.clone(), |j, psi, cost| {
        let eps = midpoint_value(field, j, dt)?;
        let w = tk.levels().bracket_weights(eps).map_err(|e| with_step(j, dt, e))?;
        used[w.ell] = true;
        used[w.ell + 1] = true;
        let psi = tk.apply_fractional(w.ell, w.alpha, psi, cost)?;
        tk.apply_fractional(w.ell + 1, w.beta, &psi, cost)
    })?;
    cost.toolkit_entries_used = used.iter().filter(|&&u| u).count() as u64;
    let (eps_step, m) = levels_info(tk.levels());
    Ok(PropagationResult {
        final_state,
        trajectory,
        cost,
        scheme: SchemeKind::ImprovedHigh,
        dt,
        n_steps: n,
        horizon: field.horizon(),
        eps_step,
        m,
    })
}

/// Quantified high-intensity scheme: one precomputed pair product per step,
/// with the bracket weight snapped to the toolkit's `α` grid.
pub fn propagate_quantified_high(
    model: &QuantumModel,
    field: &ControlField,
    ptk: &PairToolkit,
    n: usize,
    record: bool,
) -> Result<PropagationResult> {
    let dt = step_size(field, n)?;
    check_dt(dt, ptk.dt(), "pair toolkit")?;
    check_dim(model, ptk.combo(0, 0).dim())?;
    let k = ptk.k();
    let mut used = vec![false; ptk.cells() * k];
    let mut cost = CostCounter::default();
    let (final_state, trajectory) = drive(model, n, record, &mut cost, model.psi0.clone(), |j, psi, cost| {
        let eps = midpoint_value(field, j, dt)?;
        let w = ptk.levels().bracket_weights(eps).map_err(|e| with_step(j, dt, e))?;
        let idx = ptk.snap_alpha(w.alpha);
        used[w.ell * k + idx] = true;
        ptk.combo(w.ell, idx).apply(psi, cost)
    })?;
    cost.toolkit_entries_used = used.iter().filter(|&&u| u).count() as u64;
    let (eps_step, m) = levels_info(ptk.levels());
    Ok(PropagationResult {
        final_state,
        trajectory,
        cost,
        scheme: SchemeKind::QuantifiedHigh,
        dt,
        n_steps: n,
        horizon: field.horizon(),
        eps_step,
        m,
    })
}

/// Precomputed pieces of the Strang splitting: the half-step kinetic
/// propagator and the spectral factors of `μ`.
#[derive(Clone, Debug)]
pub struct StrangSplitting {
    dt: f64,
    half_kinetic: UnitaryPropagator,
    dipole: Arc<SpectralFactors>,
}

pub fn build_strang(model: &QuantumModel, dt: f64) -> Result<StrangSplitting> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let kinetic = Arc::new(spectral_factorize(&model.h0)?);
    Ok(StrangSplitting {
        dt,
        half_kinetic: expm_unitary(&kinetic, 0.5 * dt)?,
        dipole: Arc::new(spectral_factorize(&model.mu)?),
    })
}

impl StrangSplitting {
    pub fn dt(&self) -> f64 {
        self.dt
    }
}

/// `ψ_{j+1} = e^{-iH0Δt/2} e^{+iε(t_{j+1/2})μΔt} e^{-iH0Δt/2} ψ_j`.
pub fn propagate_strang(
    model: &QuantumModel,
    field: &ControlField,
    split: &StrangSplitting,
    n: usize,
    record: bool,
) -> Result<PropagationResult> {
    let dt = step_size(field, n)?;
    check_dt(dt, split.dt, "Strang splitting")?;
    check_dim(model, split.half_kinetic.dim())?;
    let mut cost = CostCounter::default();
    let (final_state, trajectory) = drive(model, n, record, &mut cost, model.psi0.clone(), |j, psi, cost| {
        let eps = midpoint_value(field, j, dt)?;
        let psi = split.half_kinetic.apply(psi, cost)?;
        // exp(+iεμΔt) = exp(-i t μ) with t = -εΔt.
        let psi = StateVector::from_raw(split.dipole.evolve(-eps * dt, psi.amplitudes()));
        cost.matrix_vector_applies += 1;
        cost.online_exponentials += 1;
        split.half_kinetic.apply(&psi, cost)
    })?;
    Ok(PropagationResult {
        final_state,
        trajectory,
        cost,
        scheme: SchemeKind::Strang,
        dt,
        n_steps: n,
        horizon: field.horizon(),
        eps_step: None,
        m: None,
    })
}

/// One step-exact solve: `ψ_{j+1} = exp(-iΔt(H0 - ε(t_{j+1/2})μ)) ψ_j`, with
/// a fresh eigendecomposition per step.
pub fn propagate_reference(
    model: &QuantumModel,
    field: &ControlField,
    n_ref: usize,
    record: bool,
) -> Result<PropagationResult> {
    let dt = step_size(field, n_ref)?;
    let mut cost = CostCounter::default();
    let real = model.h0.is_real() && model.mu.is_real();
    let (final_state, trajectory) = if real {
        let h0 = model.h0.matrix().map(|z| z.re);
        let mu = model.mu.matrix().map(|z| z.re);
        drive(model, n_ref, record, &mut cost, model.psi0.clone(), |j, psi, cost| {
            let eps = midpoint_value(field, j, dt)?;
            let (out, diagonalized) = real_exact_step(&h0, &mu, eps, dt, psi.amplitudes())?;
            cost.eigendecompositions += diagonalized as u64;
            cost.online_exponentials += 1;
            cost.matrix_vector_applies += 1;
            Ok(StateVector::from_raw(out))
        })?
    } else {
        drive(model, n_ref, record, &mut cost, model.psi0.clone(), |j, psi, cost| {
            let eps = midpoint_value(field, j, dt)?;
            let factors = crate::linalg::factorize_unchecked(&model.hamiltonian(eps))?;
            cost.eigendecompositions += 1;
            cost.online_exponentials += 1;
            cost.matrix_vector_applies += 1;
            Ok(StateVector::from_raw(factors.evolve(dt, psi.amplitudes())))
        })?
    };
    if !final_state.amplitudes().iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::NonFinite("reference state".into()));
    }
    Ok(PropagationResult {
        final_state,
        trajectory,
        cost,
        scheme: SchemeKind::Reference,
        dt,
        n_steps: n_ref,
        horizon: field.horizon(),
        eps_step: None,
        m: None,
    })
}

/// `exp(-iΔt(H0 - εμ)) ψ` for real symmetric `H0`, `μ`.
///
/// When `‖ΔtH‖_∞ ≤ 1` the Taylor series is summed until the next term falls
/// below unit roundoff, which is as exact as a spectral evaluation and an
/// order of magnitude cheaper at small `d`. Larger steps diagonalize.
fn real_exact_step(h0: &DMatrix<f64>, mu: &DMatrix<f64>, eps: f64, dt: f64, psi: &CVector) -> Result<(CVector, bool)> {
    let h = h0 - mu * eps;
    let re: DVector<f64> = psi.map(|z| z.re);
    let im: DVector<f64> = psi.map(|z| z.im);
    let bound = dt * h.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    if bound <= 1.0 {
        // term_{k+1} = -iΔt H term_k / (k+1)
        // The correction is summed on its own and added to ψ once.
        let scale = re.norm().hypot(im.norm());
        let (mut tr, mut ti) = (re.clone(), im.clone());
        let mut terms = Vec::new();
        for k in 1..=60 {
            let c = dt / k as f64;
            let (hr, hi) = (&h * &tr, &h * &ti);
            tr = hi * c;
            ti = hr * -c;
            let small = tr.norm().hypot(ti.norm()) <= 1e-18 * scale;
            terms.push((tr.clone(), ti.clone()));
            if small {
                let (mut cr, mut ci) = (DVector::zeros(re.len()), DVector::zeros(re.len()));
                for (a, b) in terms.iter().rev() {
                    cr += a;
                    ci += b;
                }
                return Ok(((re + cr).zip_map(&(im + ci), C64::new), false));
            }
        }
    }
    let eig = SymmetricEigen::try_new(h, f64::EPSILON, 1000 * h0.nrows())
        .ok_or(Error::EigenNonConvergence { residual: f64::NAN })?;
    let v = &eig.eigenvectors;
    let re: DVector<f64> = psi.map(|z| z.re);
    let im: DVector<f64> = psi.map(|z| z.im);
    let (cr, ci) = (v.tr_mul(&re), v.tr_mul(&im));
    let mut rotated_re = DVector::zeros(cr.len());
    let mut rotated_im = DVector::zeros(cr.len());
    for k in 0..cr.len() {
        let (s, c) = (-dt * eig.eigenvalues[k]).sin_cos();
        rotated_re[k] = c * cr[k] - s * ci[k];
        rotated_im[k] = s * cr[k] + c * ci[k];
    }
    let (out_re, out_im) = (v * rotated_re, v * rotated_im);
    Ok((out_re.zip_map(&out_im, C64::new), true))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceSettings {
    /// Accept once successive refinements differ by less than this.
    pub tol: f64,
    pub start_n: usize,
    pub max_n: usize,
}

impl Default for ReferenceSettings {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            start_n: 1024,
            max_n: 1 << 22,
        }
    }
}

/// Converged reference state with its refinement history.
#[derive(Clone, Debug)]
pub struct ReferenceSolution {
    /// Solution at `2·n_ref` steps (the finer of the accepted pair).
    pub state: StateVector,
    /// Accepted step count: `‖ψ(n_ref) − ψ(2 n_ref)‖ < tol`.
    pub n_ref: usize,
    /// `(N, ‖ψ(N) − ψ(2N)‖)` for every refinement tried.
    pub gaps: Vec<(usize, f64)>,
    pub cost: CostCounter,
}

impl ReferenceSolution {
    /// Successive gap ratios `gap(N)/gap(2N)`.
    pub fn gap_ratios(&self) -> Vec<f64> {
        self.gaps.windows(2).map(|w| w[0].1 / w[1].1).collect()
    }
}

/// Doubles `N` from `start_n` until two successive solutions agree to `tol`.
pub fn reference_solution(
    model: &QuantumModel,
    field: &ControlField,
    settings: &ReferenceSettings,
) -> Result<ReferenceSolution> {
    if settings.start_n == 0 || settings.max_n < settings.start_n {
        return Err(Error::InvalidArgument(format!(
            "invalid reference range {}..{}",
            settings.start_n, settings.max_n
        )));
    }
    let mut n = settings.start_n;
    let mut cost = CostCounter::default();
    let mut previous = propagate_reference(model, field, n, false)?;
    cost.merge(&previous.cost);
    let mut gaps = Vec::new();
    while 2 * n <= settings.max_n {
        let next = propagate_reference(model, field, 2 * n, false)?;
        cost.merge(&next.cost);
        let gap = previous.final_state.distance(&next.final_state)?;
        log::debug!("reference N = {n}: gap {gap:.3e}");
        gaps.push((n, gap));
        if gap < settings.tol {
            return Ok(ReferenceSolution {
                state: next.final_state,
                n_ref: n,
                gaps,
                cost,
            });
        }
        previous = next;
        n *= 2;
    }
    Err(Error::ReferenceNotConverged {
        n_steps: n,
        gap: gaps.last().map_or(f64::NAN, |g| g.1),
        tolerance: settings.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::make_grid;
    use crate::linalg::HermitianOperator;
    use crate::model::{build_rigid_rotor, random_model};
    use crate::toolkit::{build_correctors, build_pair_toolkit, build_toolkit, OmegaSign};

    fn exact(model: &QuantumModel, eps: f64, t: f64) -> StateVector {
        let f = spectral_factorize(&model.hamiltonian(eps)).unwrap();
        StateVector::from_raw(f.evolve(t, model.psi0.amplitudes()))
    }

    fn commuting_model() -> QuantumModel {
        QuantumModel::new(
            HermitianOperator::diagonal(&[0.0, 1.0, 2.5]).unwrap(),
            HermitianOperator::diagonal(&[1.0, -0.5, 0.3]).unwrap(),
            StateVector::new(CVector::from_vec(vec![
                C64::new(0.6, 0.0),
                C64::new(0.0, 0.64),
                C64::new(0.48, 0.0),
            ]))
            .unwrap(),
            "commuting",
        )
        .unwrap()
    }

    fn midpoints(field: &ControlField, n: usize) -> Vec<f64> {
        let dt = field.horizon() / n as f64;
        (0..n).map(|j| midpoint_value(field, j, dt).unwrap()).collect()
    }

    #[test]
    fn scheme_names_round_trip() {
        for kind in SchemeKind::APPROXIMATE.into_iter().chain([SchemeKind::Reference]) {
            assert_eq!(kind.name().parse::<SchemeKind>().unwrap(), kind);
            assert_eq!(kind.name().replace('_', "-").parse::<SchemeKind>().unwrap(), kind);
        }
        assert!("euler".parse::<SchemeKind>().is_err());
    }

    #[test]
    fn toolkit_constant_field_on_grid_is_exact() {
        let model = build_rigid_rotor(4, 1.0, 1.0).unwrap();
        let grid = make_grid(-1.0, 1.0, 8).unwrap();
        let value = grid.values()[5];
        let field = ControlField::constant(value, 2.0).unwrap();
        let expected = exact(&model, value, 2.0);
        for n in [1, 7, 64] {
            let tk = build_toolkit(&model, grid.clone(), 2.0 / n as f64, false).unwrap();
            let r = propagate_toolkit(&model, &field, &tk, n, false).unwrap();
            assert!(r.final_state.distance(&expected).unwrap() <= 1e-12);
            assert_eq!(r.cost.matrix_vector_applies, n as u64);
            assert_eq!(r.cost.online_exponentials, 0);
            assert_eq!(r.cost.toolkit_entries_used, 1);
        }
    }

    #[test]
    fn toolkit_piecewise_on_grid_is_exact() {
        let model = build_rigid_rotor(5, 1.0, 1.0).unwrap();
        let grid = make_grid(-1.0, 1.0, 4).unwrap();
        let field =
            ControlField::piecewise(vec![0.0, 1.0, 2.5], vec![grid.values()[1], grid.values()[4], grid.values()[2]], 4.0)
                .unwrap();
        let n = 8;
        let tk = build_toolkit(&model, grid, 0.5, false).unwrap();
        let r = propagate_toolkit(&model, &field, &tk, n, false).unwrap();
        let reference = propagate_reference(&model, &field, n, false).unwrap();
        assert!(r.final_state.distance(&reference.final_state).unwrap() <= 1e-12);
    }

    #[test]
    fn toolkit_rejects_out_of_grid_field() {
        let model = build_rigid_rotor(2, 1.0, 1.0).unwrap();
        let field = ControlField::constant(2.0, 1.0).unwrap();
        let tk = build_toolkit(&model, make_grid(-1.0, 1.0, 4).unwrap(), 0.25, false).unwrap();
        let err = propagate_toolkit(&model, &field, &tk, 4, false).unwrap_err();
        assert!(matches!(err, Error::BoundsViolation { .. }), "{err}");
        assert!(propagate_toolkit(&model, &field, &tk, 3, false).is_err());
    }

    #[test]
    fn improved_low_constant_field_matches_toolkit() {
        let model = build_rigid_rotor(4, 1.0, 1.0).unwrap();
        let grid = make_grid(-1.0, 1.0, 8).unwrap();
        let field = ControlField::constant(grid.values()[3], 1.0).unwrap();
        let n = 10;
        let tk = build_toolkit(&model, grid, 0.1, false).unwrap();
        let corr = build_correctors(&model, 0.1, OmegaSign::Cancelling).unwrap();
        let a = propagate_toolkit(&model, &field, &tk, n, false).unwrap();
        let b = propagate_improved_low(&model, &field, &tk, &corr, n, ImprovedLowOptions::default(), false).unwrap();
        assert!(a.final_state.distance(&b.final_state).unwrap() <= 1e-13);
        assert_eq!(b.cost.matrix_vector_applies, 3 * n as u64);
        assert_eq!(b.cost.online_exponentials, 2 * n as u64);
    }

    #[test]
    fn improved_low_commuting_model_only_theta_acts() {
        let model = commuting_model();
        let field = ControlField::sinusoid(0.5, 1.0, 2.0).unwrap();
        let n = 16;
        let dt = 2.0 / n as f64;
        let tk = build_toolkit(&model, FieldLevels::exact(midpoints(&field, n)).unwrap(), dt, false).unwrap();
        let corr = build_correctors(&model, dt, OmegaSign::Cancelling).unwrap();
        let r = propagate_improved_low(&model, &field, &tk, &corr, n, ImprovedLowOptions::default(), false).unwrap();
        // Diagonal oracle: every factor is a phase per basis state.
        let (h, mu) = ([0.0, 1.0, 2.5], [1.0, -0.5, 0.3]);
        let mut psi = model.psi0.amplitudes().clone();
        for j in 0..n {
            let s = derivative_stencil(&field, j, dt, BetaDivisor::HalfStep).unwrap();
            let eps = midpoint_value(&field, j, dt).unwrap();
            for k in 0..3 {
                let phase = s.beta * mu[k] * dt.powi(3) / 24.0 - dt * (h[k] - eps * mu[k]);
                psi[k] *= C64::from_polar(1.0, phase);
            }
        }
        assert!((r.final_state.amplitudes() - psi).norm() <= 1e-12);
    }

    #[test]
    fn improved_low_literal_init_differs() {
        let model = build_rigid_rotor(4, 1.0, 1.0).unwrap();
        let field = ControlField::sinusoid(2.0, 1.0, 3.0).unwrap();
        let n = 12;
        let dt = 0.25;
        let tk = build_toolkit(&model, FieldLevels::exact(midpoints(&field, n)).unwrap(), dt, false).unwrap();
        let corr = build_correctors(&model, dt, OmegaSign::Cancelling).unwrap();
        let a = propagate_improved_low(&model, &field, &tk, &corr, n, ImprovedLowOptions::default(), false).unwrap();
        let opts = ImprovedLowOptions {
            init: ImprovedLowInit::Literal,
            ..Default::default()
        };
        let b = propagate_improved_low(&model, &field, &tk, &corr, n, opts, false).unwrap();
        assert!(a.final_state.distance(&b.final_state).unwrap() > 1e-8);
        assert_eq!(b.cost.matrix_vector_applies, 3 * n as u64 + 2);
    }

    #[test]
    fn improved_high_on_grid_matches_toolkit() {
        let model = build_rigid_rotor(4, 1.0, 1.0).unwrap();
        let grid = make_grid(-1.0, 1.0, 8).unwrap();
        let field = ControlField::constant(grid.values()[6], 1.0).unwrap();
        let tk = build_toolkit(&model, grid, 0.125, true).unwrap();
        let a = propagate_toolkit(&model, &field, &tk, 8, false).unwrap();
        let b = propagate_improved_high(&model, &field, &tk, 8, false).unwrap();
        assert!(a.final_state.distance(&b.final_state).unwrap() <= 1e-12);
        assert_eq!(b.cost.matrix_vector_applies, 16);
        assert_eq!(b.cost.online_exponentials, 16);
    }

    #[test]
    fn improved_high_scalar_between_grid_points_is_exact() {
        let model = QuantumModel::new(
            HermitianOperator::diagonal(&[0.7]).unwrap(),
            HermitianOperator::diagonal(&[1.3]).unwrap(),
            StateVector::basis(1, 0).unwrap(),
            "scalar",
        )
        .unwrap();
        let field = ControlField::constant(0.37, 2.0).unwrap();
        let tk = build_toolkit(&model, make_grid(0.0, 1.0, 4).unwrap(), 0.5, true).unwrap();
        let r = propagate_improved_high(&model, &field, &tk, 4, false).unwrap();
        assert!(r.final_state.distance(&exact(&model, 0.37, 2.0)).unwrap() <= 1e-13);
    }

    #[test]
    fn improved_high_needs_factors() {
        let model = build_rigid_rotor(2, 1.0, 1.0).unwrap();
        let field = ControlField::constant(0.1, 1.0).unwrap();
        let tk = build_toolkit(&model, make_grid(-1.0, 1.0, 4).unwrap(), 0.5, false).unwrap();
        assert!(matches!(
            propagate_improved_high(&model, &field, &tk, 2, false),
            Err(Error::FactorsMissing(_))
        ));
    }

    #[test]
    fn quantified_converges_to_improved_high() {
        let model = build_rigid_rotor(5, 1.0, 1.0).unwrap();
        let field = ControlField::sinusoid(1.0, 1.0, 3.0).unwrap();
        let n = 32;
        let dt = 3.0 / n as f64;
        let tk = build_toolkit(&model, make_grid(-1.0, 1.0, 8).unwrap(), dt, true).unwrap();
        let high = propagate_improved_high(&model, &field, &tk, n, false).unwrap();
        let mut last = f64::INFINITY;
        for k in [10, 100, 1000] {
            let ptk = build_pair_toolkit(&tk, k).unwrap();
            let q = propagate_quantified_high(&model, &field, &ptk, n, false).unwrap();
            assert_eq!(q.cost.matrix_vector_applies, n as u64);
            let d = q.final_state.distance(&high.final_state).unwrap();
            assert!(d < 2.0 * last, "K = {k}: {d} vs {last}");
            last = d;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn quantified_on_alpha_grid_matches_improved_high() {
        let model = build_rigid_rotor(3, 1.0, 1.0).unwrap();
        let grid = make_grid(0.0, 1.0, 4).unwrap();
        // 0.25 + 0.25·0.4: α = 0.6 lies on the K = 6 grid.
        let field = ControlField::constant(0.35, 1.0).unwrap();
        let tk = build_toolkit(&model, grid, 0.25, true).unwrap();
        let ptk = build_pair_toolkit(&tk, 6).unwrap();
        let a = propagate_improved_high(&model, &field, &tk, 4, false).unwrap();
        let b = propagate_quantified_high(&model, &field, &ptk, 4, false).unwrap();
        assert!(a.final_state.distance(&b.final_state).unwrap() <= 1e-12);
    }

    #[test]
    fn strang_zero_field_is_free_evolution() {
        let model = build_rigid_rotor(5, 1.0, 1.0).unwrap();
        let model = QuantumModel::new(
            model.h0.clone(),
            model.mu.clone(),
            StateVector::new(CVector::from_element(6, C64::new(1.0 / 6f64.sqrt(), 0.0))).unwrap(),
            "rotor",
        )
        .unwrap();
        let field = ControlField::constant(0.0, 2.0).unwrap();
        let split = build_strang(&model, 0.25).unwrap();
        let r = propagate_strang(&model, &field, &split, 8, false).unwrap();
        assert!(r.final_state.distance(&exact(&model, 0.0, 2.0)).unwrap() <= 1e-12);
        assert_eq!(r.cost.matrix_vector_applies, 24);
        assert_eq!(r.cost.online_exponentials, 8);
    }

    #[test]
    fn strang_commuting_constant_field_is_exact() {
        let model = commuting_model();
        let field = ControlField::constant(0.8, 3.0).unwrap();
        let split = build_strang(&model, 0.5).unwrap();
        let r = propagate_strang(&model, &field, &split, 6, false).unwrap();
        assert!(r.final_state.distance(&exact(&model, 0.8, 3.0)).unwrap() <= 1e-12);
    }

    #[test]
    fn reference_constant_field_is_exact() {
        let model = build_rigid_rotor(6, 1.0, 1.0).unwrap();
        let field = ControlField::constant(0.4, 1.5).unwrap();
        let expected = exact(&model, 0.4, 1.5);
        for n in [1, 3, 64] {
            let r = propagate_reference(&model, &field, n, false).unwrap();
            assert!(r.final_state.distance(&expected).unwrap() <= 1e-13);
        }
    }

    #[test]
    fn reference_complex_path_matches_real_path() {
        let model = random_model(4, 11).unwrap();
        let field = ControlField::sinusoid(0.5, 2.0, 1.0).unwrap();
        let r = propagate_reference(&model, &field, 16, false).unwrap();
        let mut psi = model.psi0.amplitudes().clone();
        let dt = 1.0 / 16.0;
        for j in 0..16 {
            let eps = midpoint_value(&field, j, dt).unwrap();
            psi = spectral_factorize(&model.hamiltonian(eps)).unwrap().evolve(dt, &psi);
        }
        assert!((r.final_state.amplitudes() - psi).norm() <= 1e-12);
    }

    #[test]
    fn series_step_matches_spectral_step() {
        let model = build_rigid_rotor(8, 1.0, 1.0).unwrap();
        let h0 = model.h0.matrix().map(|z| z.re);
        let mu = model.mu.matrix().map(|z| z.re);
        let psi = CVector::from_fn(9, |k, _| C64::new(1.0 / (k + 1) as f64, 0.3 * k as f64)).normalize();
        for dt in [1e-6, 1e-3, 1e-2] {
            let (out, diagonalized) = real_exact_step(&h0, &mu, 0.7, dt, &psi).unwrap();
            assert!(!diagonalized);
            let f = spectral_factorize(&model.hamiltonian(0.7)).unwrap();
            assert!((out - f.evolve(dt, &psi)).norm() <= 1e-14, "dt {dt}");
        }
        let (_, diagonalized) = real_exact_step(&h0, &mu, 0.7, 1.0, &psi).unwrap();
        assert!(diagonalized);
    }

    #[test]
    fn reference_gap_quarters_per_doubling() {
        let model = build_rigid_rotor(4, 1.0, 1.0).unwrap();
        let field = ControlField::sinusoid(1.0, 1.0, 2.0).unwrap();
        let settings = ReferenceSettings {
            tol: 1e-11,
            start_n: 64,
            max_n: 1 << 20,
        };
        let sol = reference_solution(&model, &field, &settings).unwrap();
        assert!(sol.gaps.last().unwrap().1 < 1e-11);
        for r in sol.gap_ratios().iter().take(3) {
            assert!((3.0..=5.0).contains(r), "ratio {r}");
        }
    }

    #[test]
    fn reference_reports_non_convergence() {
        let model = build_rigid_rotor(4, 1.0, 1.0).unwrap();
        let field = ControlField::sinusoid(1.0, 1.0, 2.0).unwrap();
        let settings = ReferenceSettings {
            tol: 1e-11,
            start_n: 4,
            max_n: 16,
        };
        assert!(matches!(
            reference_solution(&model, &field, &settings),
            Err(Error::ReferenceNotConverged { .. })
        ));
    }

    #[test]
    fn trajectory_is_recorded() {
        let model = build_rigid_rotor(2, 1.0, 1.0).unwrap();
        let field = ControlField::sinusoid(0.5, 1.0, 1.0).unwrap();
        let r = propagate_reference(&model, &field, 5, true).unwrap();
        let t = r.trajectory.unwrap();
        assert_eq!(t.len(), 6);
        assert_eq!(t[0], model.psi0);
        assert_eq!(t[5], r.final_state);
    }

    #[test]
    fn all_schemes_preserve_norm() {
        let model = build_rigid_rotor(6, 1.0, 1.0).unwrap();
        let field = ControlField::sinusoid(2.0, 1.0, 3.0).unwrap();
        let n = 200;
        let dt = 3.0 / n as f64;
        let tk = build_toolkit(&model, make_grid(-2.0, 2.0, 16).unwrap(), dt, true).unwrap();
        let corr = build_correctors(&model, dt, OmegaSign::Cancelling).unwrap();
        let ptk = build_pair_toolkit(&tk, 10).unwrap();
        let split = build_strang(&model, dt).unwrap();
        let results = [
            propagate_toolkit(&model, &field, &tk, n, false).unwrap(),
            propagate_improved_low(&model, &field, &tk, &corr, n, ImprovedLowOptions::default(), false).unwrap(),
            propagate_improved_high(&model, &field, &tk, n, false).unwrap(),
            propagate_quantified_high(&model, &field, &ptk, n, false).unwrap(),
            propagate_strang(&model, &field, &split, n, false).unwrap(),
            propagate_reference(&model, &field, n, false).unwrap(),
        ];
        for r in &results {
            assert!((r.final_state.norm() - 1.0).abs() <= 1e-10 * n as f64, "{}", r.scheme);
            assert_eq!(r.cost.steps, n as u64);
            assert_eq!(
                r.cost.matrix_vector_applies,
                r.scheme.applies_per_step() * n as u64,
                "{}",
                r.scheme
            );
        }
    }
}
