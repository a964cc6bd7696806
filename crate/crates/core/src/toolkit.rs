//! Precomputed propagators.
//!
//! A [`Toolkit`] holds `S_ℓ(Δt) = exp(-iΔt(H0 - ε̄_ℓ μ))` for every quantized
//! field value `ε̄_ℓ`. Schemes that need fractional powers keep the spectral
//! factors of each generator, so `S_ℓ(Δt)^α` is evaluated as `S_ℓ(αΔt)`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::CostCounter;
use crate::error::{Error, Result};
use crate::field::{make_grid, ConvexWeights, FieldGrid};
use crate::linalg::{
    commutator, expm_unitary, spectral_factorize, unitarity_defect, CMatrix, HermitianOperator,
    SpectralFactors, StateVector, UnitaryPropagator, C64,
};
use crate::model::QuantumModel;
use crate::textio;

const ALPHA_SLACK: f64 = 1e-12;

/// The field values a toolkit is built on.
///
/// `Exact` holds an arbitrary sorted list of values, used to emulate an
/// unquantized field (`Δε = 0`) by building one propagator per step at the
/// exact midpoint values.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldLevels {
    Uniform(FieldGrid),
    Exact(Vec<f64>),
}

impl From<FieldGrid> for FieldLevels {
    fn from(grid: FieldGrid) -> Self {
        FieldLevels::Uniform(grid)
    }
}

impl FieldLevels {
    /// Sorted, deduplicated list of arbitrary values.
    pub fn exact(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidGrid("no field levels".into()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("field levels".into()));
        }
        values.sort_by(|a, b| a.total_cmp(b));
        values.dedup();
        Ok(FieldLevels::Exact(values))
    }

    pub fn values(&self) -> &[f64] {
        match self {
            FieldLevels::Uniform(g) => g.values(),
            FieldLevels::Exact(v) => v,
        }
    }

    pub fn len(&self) -> usize {
        self.values().len()
    }

    pub fn is_empty(&self) -> bool {
        self.values().is_empty()
    }

    /// `Δε` for a uniform grid.
    pub fn step(&self) -> Option<f64> {
        match self {
            FieldLevels::Uniform(g) => Some(g.step()),
            FieldLevels::Exact(_) => None,
        }
    }

    /// Number of cells (`len - 1`).
    pub fn cells(&self) -> usize {
        self.len() - 1
    }

    pub fn nearest_index(&self, v: f64) -> Result<usize> {
        match self {
            FieldLevels::Uniform(g) => g.nearest_index(v),
            FieldLevels::Exact(values) => {
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("field value {v}")));
                }
                let idx = values.partition_point(|&x| x < v);
                let candidates = [idx.saturating_sub(1), idx.min(values.len() - 1)];
                Ok(candidates
                    .into_iter()
                    .min_by(|&a, &b| (v - values[a]).abs().total_cmp(&(v - values[b]).abs()).then(a.cmp(&b)))
                    .unwrap())
            }
        }
    }

    pub fn bracket_weights(&self, v: f64) -> Result<ConvexWeights> {
        match self {
            FieldLevels::Uniform(g) => g.bracket_weights(v),
            FieldLevels::Exact(values) => {
                if values.len() < 2 {
                    return Err(Error::InvalidGrid("bracketing needs at least two levels".into()));
                }
                let (lo, hi) = (values[0], values[values.len() - 1]);
                if !(v >= lo && v <= hi) {
                    return Err(Error::BoundsViolation {
                        value: v,
                        time: f64::NAN,
                        lower: lo,
                        upper: hi,
                    });
                }
                let ell = values.partition_point(|&x| x <= v).clamp(1, values.len() - 1) - 1;
                let beta = ((v - values[ell]) / (values[ell + 1] - values[ell])).clamp(0.0, 1.0);
                Ok(ConvexWeights {
                    ell,
                    alpha: 1.0 - beta,
                    beta,
                })
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Toolkit {
    levels: FieldLevels,
    dt: f64,
    entries: Vec<UnitaryPropagator>,
    factors: Option<Vec<Arc<SpectralFactors>>>,
    build_cost: CostCounter,
}

/// Exponentiates `H0 - ε̄_ℓ μ` for every level, in parallel over `ℓ`.
pub fn build_toolkit(
    model: &QuantumModel,
    levels: impl Into<FieldLevels>,
    dt: f64,
    keep_factors: bool,
) -> Result<Toolkit> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let levels = levels.into();
    let built: Vec<(UnitaryPropagator, Arc<SpectralFactors>)> = levels
        .values()
        .par_iter()
        .enumerate()
        .map(|(level, &eps)| {
            let wrap = |e: Error| Error::ToolkitEntry {
                level,
                inner: Box::new(e),
            };
            let factors = Arc::new(spectral_factorize(&model.hamiltonian(eps)).map_err(wrap)?);
            let propagator = expm_unitary(&factors, dt).map_err(wrap)?;
            Ok((propagator, factors))
        })
        .collect::<Result<_>>()?;

    let n = built.len() as u64;
    let build_cost = CostCounter {
        eigendecompositions: n,
        matrix_matrix_products: n,
        ..CostCounter::default()
    };
    let (entries, factors): (Vec<_>, Vec<_>) = built
        .into_iter()
        .map(|(u, f)| (if keep_factors { u } else { u.without_generator() }, f))
        .unzip();
    Ok(Toolkit {
        levels,
        dt,
        entries,
        factors: keep_factors.then_some(factors),
        build_cost,
    })
}

impl Toolkit {
    pub fn levels(&self) -> &FieldLevels {
        &self.levels
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.entries[0].dim()
    }

    pub fn entry(&self, level: usize) -> &UnitaryPropagator {
        &self.entries[level]
    }

    pub fn entries(&self) -> &[UnitaryPropagator] {
        &self.entries
    }

    pub fn has_factors(&self) -> bool {
        self.factors.is_some()
    }

    pub fn factors(&self, level: usize) -> Result<&Arc<SpectralFactors>> {
        self.factors
            .as_ref()
            .and_then(|f| f.get(level))
            .ok_or(Error::FactorsMissing(level))
    }

    pub fn build_cost(&self) -> &CostCounter {
        &self.build_cost
    }

    /// `S_ℓ(Δt)^α := S_ℓ(αΔt)`, `α ∈ [0, 1]`.
    pub fn fractional_power(&self, level: usize, alpha: f64) -> Result<UnitaryPropagator> {
        if !(alpha >= -ALPHA_SLACK && alpha <= 1.0 + ALPHA_SLACK) {
            return Err(Error::InvalidArgument(format!("fractional exponent {alpha} outside [0, 1]")));
        }
        if level >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "toolkit level {level} out of range ({} entries)",
                self.len()
            )));
        }
        let factors = self.factors(level)?;
        expm_unitary(factors, alpha.clamp(0.0, 1.0) * self.dt)
    }
}

impl Toolkit {
    /// `S_ℓ(Δt)^α ψ` without forming the matrix; counted as one apply and
    /// one online exponential.
    pub fn apply_fractional(
        &self,
        level: usize,
        alpha: f64,
        psi: &StateVector,
        cost: &mut CostCounter,
    ) -> Result<StateVector> {
        if !(alpha >= -ALPHA_SLACK && alpha <= 1.0 + ALPHA_SLACK) {
            return Err(Error::InvalidArgument(format!("fractional exponent {alpha} outside [0, 1]")));
        }
        let factors = self.factors(level)?;
        cost.matrix_vector_applies += 1;
        cost.online_exponentials += 1;
        Ok(StateVector::from_raw(
            factors.evolve(alpha.clamp(0.0, 1.0) * self.dt, psi.amplitudes()),
        ))
    }
}

/// Free-function form of [`Toolkit::fractional_power`].
pub fn fractional_power(tk: &Toolkit, level: usize, alpha: f64) -> Result<UnitaryPropagator> {
    tk.fractional_power(level, alpha)
}

/// Sign convention for the commutator corrector `Ω`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaSign {
    /// `Ω = exp(-(Δt³/12)[H0, μ])`: cancels the commutator term of the local
    /// error of a midpoint toolkit step.
    #[default]
    Cancelling,
    /// `Ω = exp(+(Δt³/12)[H0, μ])`.
    Positive,
}

/// The correctors `Ω = exp(±(Δt³/12)[H0, μ])` and `Θ = exp((iΔt³/24) μ)`,
/// with their real powers available through stored spectral factors.
#[derive(Clone, Debug)]
pub struct CorrectorPair {
    dt: f64,
    sign: OmegaSign,
    omega_generator: CMatrix,
    theta_generator: CMatrix,
    /// Factors of the Hermitian matrix `i[H0, μ]`.
    commutator_factors: Arc<SpectralFactors>,
    dipole_factors: Arc<SpectralFactors>,
}

pub fn build_correctors(model: &QuantumModel, dt: f64, sign: OmegaSign) -> Result<CorrectorPair> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let c = commutator(&model.h0, &model.mu)?;
    let ic = HermitianOperator::new(&c * C64::new(0.0, 1.0))?;
    let dt3 = dt * dt * dt;
    let s = match sign {
        OmegaSign::Cancelling => -1.0,
        OmegaSign::Positive => 1.0,
    };
    Ok(CorrectorPair {
        dt,
        sign,
        omega_generator: &c * C64::new(s * dt3 / 12.0, 0.0),
        theta_generator: model.mu.matrix() * C64::new(0.0, dt3 / 24.0),
        commutator_factors: Arc::new(spectral_factorize(&ic)?),
        dipole_factors: Arc::new(spectral_factorize(&model.mu)?),
    })
}

impl CorrectorPair {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sign(&self) -> OmegaSign {
        self.sign
    }

    /// Anti-Hermitian exponent of `Ω`.
    pub fn omega_generator(&self) -> &CMatrix {
        &self.omega_generator
    }

    /// Anti-Hermitian exponent of `Θ`.
    pub fn theta_generator(&self) -> &CMatrix {
        &self.theta_generator
    }

    /// `Ω^α`.
    pub fn omega_power(&self, alpha: f64) -> Result<UnitaryPropagator> {
        // exp(α s Δt³/12 · C) = exp(-i t K) with K = iC and t = α s Δt³/12.
        expm_unitary(&self.commutator_factors, alpha * self.omega_sign() * self.dt.powi(3) / 12.0)
    }

    /// `Ω^α ψ` by phase scaling in the eigenbasis of `i[H0, μ]`.
    pub fn apply_omega(&self, alpha: f64, psi: &StateVector, cost: &mut CostCounter) -> StateVector {
        cost.matrix_vector_applies += 1;
        cost.online_exponentials += 1;
        StateVector::from_raw(
            self.commutator_factors
                .evolve(alpha * self.omega_sign() * self.dt.powi(3) / 12.0, psi.amplitudes()),
        )
    }

    /// `Θ^β ψ` by phase scaling in the eigenbasis of `μ`.
    pub fn apply_theta(&self, beta: f64, psi: &StateVector, cost: &mut CostCounter) -> StateVector {
        cost.matrix_vector_applies += 1;
        cost.online_exponentials += 1;
        StateVector::from_raw(self.dipole_factors.evolve(-beta * self.dt.powi(3) / 24.0, psi.amplitudes()))
    }

    fn omega_sign(&self) -> f64 {
        match self.sign {
            OmegaSign::Cancelling => -1.0,
            OmegaSign::Positive => 1.0,
        }
    }

    /// `Θ^β`.
    pub fn theta_power(&self, beta: f64) -> Result<UnitaryPropagator> {
        expm_unitary(&self.dipole_factors, -beta * self.dt.powi(3) / 24.0)
    }
}

/// Precomputed products `S_{ℓ+1}(Δt)^{1-α_k} S_ℓ(Δt)^{α_k}` on a uniform
/// grid of `K` weights `α_k = k/(K-1)`.
///
/// Memory footprint is `m · K · d²` complex numbers.
#[derive(Clone, Debug)]
pub struct PairToolkit {
    levels: FieldLevels,
    dt: f64,
    alphas: Vec<f64>,
    combos: Vec<UnitaryPropagator>,
    build_cost: CostCounter,
}

pub fn build_pair_toolkit(tk: &Toolkit, k: usize) -> Result<PairToolkit> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("alpha grid needs K >= 2, got {k}")));
    }
    if tk.len() < 2 {
        return Err(Error::InvalidGrid("pair toolkit needs at least two levels".into()));
    }
    if !tk.has_factors() {
        return Err(Error::FactorsMissing(0));
    }
    let alphas: Vec<f64> = (0..k).map(|i| i as f64 / (k - 1) as f64).collect();
    let cells = tk.len() - 1;
    let combos: Vec<UnitaryPropagator> = (0..cells * k)
        .into_par_iter()
        .map(|idx| {
            let (ell, i) = (idx / k, idx % k);
            let alpha = alphas[i];
            let lower = tk.fractional_power(ell, alpha)?;
            let upper = tk.fractional_power(ell + 1, 1.0 - alpha)?;
            upper.compose(&lower, &mut CostCounter::default())
        })
        .collect::<Result<_>>()?;
    let products = (cells * k) as u64;
    let build_cost = CostCounter {
        matrix_matrix_products: products,
        online_exponentials: 2 * products,
        ..CostCounter::default()
    };
    Ok(PairToolkit {
        levels: tk.levels.clone(),
        dt: tk.dt,
        alphas,
        combos,
        build_cost,
    })
}

impl PairToolkit {
    pub fn levels(&self) -> &FieldLevels {
        &self.levels
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn k(&self) -> usize {
        self.alphas.len()
    }

    pub fn cells(&self) -> usize {
        self.combos.len() / self.alphas.len()
    }

    pub fn combo(&self, ell: usize, k: usize) -> &UnitaryPropagator {
        &self.combos[ell * self.alphas.len() + k]
    }

    pub fn build_cost(&self) -> &CostCounter {
        &self.build_cost
    }

    /// Nearest grid weight to `alpha`, ties toward the lower index.
    pub fn snap_alpha(&self, alpha: f64) -> usize {
        let k = self.alphas.len();
        let x = alpha.clamp(0.0, 1.0) * (k - 1) as f64;
        let guess = ((x - 0.5).ceil().max(0.0) as usize).min(k - 1);
        let lo = guess.saturating_sub(1);
        let hi = (guess + 1).min(k - 1);
        (lo..=hi)
            .min_by(|&a, &b| {
                (alpha - self.alphas[a])
                    .abs()
                    .total_cmp(&(alpha - self.alphas[b]).abs())
                    .then(a.cmp(&b))
            })
            .unwrap()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LevelsManifest {
    Uniform { eps_min: f64, eps_max: f64, m: usize },
    Exact { values: Vec<f64> },
}

#[derive(Serialize, Deserialize)]
struct FactorFiles {
    eigenvalues: String,
    eigenvectors: String,
}

#[derive(Serialize, Deserialize)]
struct ToolkitManifest {
    format: u32,
    dt: f64,
    levels: LevelsManifest,
    model_hash: String,
    model_label: String,
    keep_factors: bool,
    entries: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    factors: Option<Vec<FactorFiles>>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes one matrix file per entry (plus eigen-factor files when retained)
/// and a `manifest.json` describing the grid, `Δt` and the model hash.
pub fn save_toolkit(tk: &Toolkit, model: &QuantumModel, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let width = tk.len().to_string().len().max(5);
    let mut entries = Vec::with_capacity(tk.len());
    let mut factor_files = tk.has_factors().then(Vec::new);
    for (l, u) in tk.entries.iter().enumerate() {
        let name = format!("entry_{l:0width$}.txt");
        textio::write_matrix(&dir.join(&name), u.matrix())?;
        entries.push(name);
        if let Some(files) = factor_files.as_mut() {
            let f = tk.factors(l)?;
            let values = format!("eigenvalues_{l:0width$}.txt");
            let vectors = format!("eigenvectors_{l:0width$}.txt");
            let as_complex = f.eigenvalues().map(|x| C64::new(x, 0.0));
            textio::write_vector(&dir.join(&values), &as_complex)?;
            textio::write_matrix(&dir.join(&vectors), f.eigenvectors())?;
            files.push(FactorFiles {
                eigenvalues: values,
                eigenvectors: vectors,
            });
        }
    }
    let levels = match &tk.levels {
        FieldLevels::Uniform(g) => LevelsManifest::Uniform {
            eps_min: g.eps_min(),
            eps_max: g.eps_max(),
            m: g.m(),
        },
        FieldLevels::Exact(v) => LevelsManifest::Exact { values: v.clone() },
    };
    let manifest = ToolkitManifest {
        format: 1,
        dt: tk.dt,
        levels,
        model_hash: model.content_hash(),
        model_label: model.label.clone(),
        keep_factors: tk.has_factors(),
        entries,
        factors: factor_files,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// Reads a toolkit written by [`save_toolkit`]. When `model` is given its
/// hash must match the manifest.
pub fn load_toolkit(dir: &Path, model: Option<&QuantumModel>) -> Result<Toolkit> {
    let manifest: ToolkitManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.format != 1 {
        return Err(Error::Config(format!("unsupported toolkit format {}", manifest.format)));
    }
    if let Some(model) = model {
        let hash = model.content_hash();
        if hash != manifest.model_hash {
            return Err(Error::Config(format!(
                "toolkit in {} was built for model {} ({}), not {}",
                dir.display(),
                manifest.model_label,
                manifest.model_hash,
                model.label
            )));
        }
    }
    let levels = match manifest.levels {
        LevelsManifest::Uniform { eps_min, eps_max, m } => FieldLevels::Uniform(make_grid(eps_min, eps_max, m)?),
        LevelsManifest::Exact { values } => FieldLevels::exact(values)?,
    };
    if manifest.entries.len() != levels.len() {
        return Err(Error::Config(format!(
            "manifest lists {} entries for {} levels",
            manifest.entries.len(),
            levels.len()
        )));
    }
    let mut entries = Vec::with_capacity(levels.len());
    for name in &manifest.entries {
        let m = textio::read_matrix(&dir.join(name))?;
        let defect = unitarity_defect(&m);
        if defect > 1e-10 {
            return Err(Error::Config(format!("{name}: unitarity defect {defect:.3e}")));
        }
        entries.push(UnitaryPropagator::from_matrix(m)?);
    }
    let factors = match (&manifest.factors, manifest.keep_factors) {
        (Some(files), true) => {
            let mut out = Vec::with_capacity(files.len());
            for (l, f) in files.iter().enumerate() {
                let values = textio::read_vector(&dir.join(&f.eigenvalues))?.map(|z| z.re);
                let vectors = textio::read_matrix(&dir.join(&f.eigenvectors))?;
                let factors = Arc::new(SpectralFactors::from_parts(values, vectors)?);
                entries[l] = expm_unitary(&factors, manifest.dt)?;
                out.push(factors);
            }
            Some(out)
        }
        (None, true) => return Err(Error::Config("manifest keeps factors but lists no factor files".into())),
        _ => None,
    };
    Ok(Toolkit {
        levels,
        dt: manifest.dt,
        entries,
        factors,
        build_cost: CostCounter::default(),
    })
}
