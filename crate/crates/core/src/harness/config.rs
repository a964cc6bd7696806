use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ControlField, Interpolation};
use crate::model::{build_rigid_rotor, load_model, random_model, QuantumModel};
use crate::schemes::{ImprovedLowOptions, ReferenceSettings, SchemeKind};
use crate::toolkit::OmegaSign;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Rotor {
        #[serde(default = "default_j_max")]
        j_max: usize,
        #[serde(default = "one")]
        b: f64,
        #[serde(default = "one")]
        mu0: f64,
    },
    File {
        h0: PathBuf,
        mu: PathBuf,
        psi0: PathBuf,
    },
    Random {
        dim: usize,
        /// Defaults to the experiment seed.
        #[serde(default)]
        seed: Option<u64>,
    },
}

fn default_j_max() -> usize {
    20
}

fn one() -> f64 {
    1.0
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Rotor {
            j_max: 20,
            b: 1.0,
            mu0: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// `ε(t) = eps_max sin(ωt)`.
    Sinusoid { eps_max: f64, omega: f64 },
    Tabulated {
        times: Vec<f64>,
        values: Vec<f64>,
        #[serde(default)]
        interpolation: Interpolation,
    },
    /// Plateau `values[i]` on `[starts[i], starts[i+1])`.
    Piecewise { starts: Vec<f64>, values: Vec<f64> },
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::Sinusoid {
            eps_max: 5.0,
            omega: 0.5,
        }
    }
}

/// Step counts of a sweep, given as explicit counts, as step sizes, or as a
/// doubling range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum StepSweep {
    Counts { steps: Vec<usize> },
    Sizes { dt: Vec<f64> },
    Doubling { n_min: usize, n_max: usize },
}

impl Default for StepSweep {
    fn default() -> Self {
        StepSweep::Doubling { n_min: 16, n_max: 4096 }
    }
}

fn doubling(min: usize, max: usize, what: &str) -> Result<Vec<usize>> {
    if min == 0 || max < min {
        return Err(Error::Config(format!("invalid {what} range {min}..{max}")));
    }
    let mut out = vec![min];
    while let Some(next) = out.last().unwrap().checked_mul(2).filter(|&n| n <= max) {
        out.push(next);
    }
    Ok(out)
}

impl StepSweep {
    /// Step counts `N` with `NΔt = T`, in declared order.
    pub fn counts(&self, horizon: f64) -> Result<Vec<usize>> {
        let counts = match self {
            StepSweep::Counts { steps } => steps.clone(),
            StepSweep::Sizes { dt } => dt
                .iter()
                .map(|&dt| {
                    if !(dt > 0.0) {
                        return Err(Error::Config(format!("time step must be positive, got {dt}")));
                    }
                    let n = (horizon / dt).round();
                    if n < 1.0 || (n * dt - horizon).abs() > 1e-12 * horizon {
                        return Err(Error::Config(format!("Δt = {dt} does not divide T = {horizon}")));
                    }
                    Ok(n as usize)
                })
                .collect::<Result<_>>()?,
            StepSweep::Doubling { n_min, n_max } => doubling(*n_min, *n_max, "step")?,
        };
        if counts.is_empty() || counts.contains(&0) {
            return Err(Error::Config("step sweep must list positive counts".into()));
        }
        Ok(counts)
    }
}

/// How a scheme's field grid is chosen for a given `Δt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EpsPolicy {
    /// One level per step at the exact midpoint values (`Δε = 0`).
    Exact,
    /// Uniform grid with `m` cells over the field bounds.
    Fixed { m: usize },
    /// Uniform grid with `Δε ≤ cΔt`.
    Proportional { c: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsPolicies {
    pub toolkit: EpsPolicy,
    pub improved_low: EpsPolicy,
    pub improved_high: EpsPolicy,
    pub quantified_high: EpsPolicy,
}

impl Default for EpsPolicies {
    fn default() -> Self {
        Self {
            toolkit: EpsPolicy::Exact,
            improved_low: EpsPolicy::Exact,
            improved_high: EpsPolicy::Proportional { c: 1.0 },
            quantified_high: EpsPolicy::Fixed { m: 64 },
        }
    }
}

impl EpsPolicies {
    pub fn for_scheme(&self, scheme: SchemeKind) -> Option<EpsPolicy> {
        match scheme {
            SchemeKind::Toolkit => Some(self.toolkit),
            SchemeKind::ImprovedLow => Some(self.improved_low),
            SchemeKind::ImprovedHigh => Some(self.improved_high),
            SchemeKind::QuantifiedHigh => Some(self.quantified_high),
            SchemeKind::Strang | SchemeKind::Reference => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsSweep {
    /// Fixed step count of the sweep.
    pub n_steps: usize,
    pub m_min: usize,
    pub m_max: usize,
    pub schemes: Vec<SchemeKind>,
}

impl Default for EpsSweep {
    fn default() -> Self {
        Self {
            n_steps: 4096,
            m_min: 4,
            m_max: 128,
            schemes: vec![SchemeKind::Toolkit],
        }
    }
}

impl EpsSweep {
    pub fn m_values(&self) -> Result<Vec<usize>> {
        doubling(self.m_min, self.m_max, "m")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    /// Coarsest sweep points left out of the time-order fit.
    pub skip_coarsest: usize,
    /// Coarsest points left out of the field-order fit.
    pub eps_skip_coarsest: usize,
    /// Points with error below `floor_factor · floor` are left out.
    pub floor_factor: f64,
    /// Lower bound of the error floor (double-precision accumulation).
    pub rounding_floor: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            skip_coarsest: 2,
            eps_skip_coarsest: 0,
            floor_factor: 10.0,
            rounding_floor: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSettings {
    pub tol: f64,
    pub n_min: usize,
    pub n_max: usize,
    pub m_min: usize,
    pub m_max: usize,
    pub schemes: Vec<SchemeKind>,
    /// Per-step weights of the "matrix products" column, by scheme.
    pub product_weights: ProductWeights,
    /// Memory cap of a pair toolkit, in bytes.
    pub max_pair_bytes: u64,
}

impl Default for CostSettings {
    fn default() -> Self {
        Self {
            tol: 5e-3,
            n_min: 4,
            n_max: 1 << 14,
            m_min: 4,
            m_max: 1 << 13,
            schemes: SchemeKind::APPROXIMATE.to_vec(),
            product_weights: ProductWeights::default(),
            max_pair_bytes: 1 << 30,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProductWeights {
    pub toolkit: u64,
    pub improved_low: u64,
    pub improved_high: u64,
    pub quantified_high: u64,
    pub strang: u64,
}

impl Default for ProductWeights {
    fn default() -> Self {
        Self {
            toolkit: SchemeKind::Toolkit.products_per_step(),
            improved_low: SchemeKind::ImprovedLow.products_per_step(),
            improved_high: SchemeKind::ImprovedHigh.products_per_step(),
            quantified_high: SchemeKind::QuantifiedHigh.products_per_step(),
            strang: SchemeKind::Strang.products_per_step(),
        }
    }
}

impl ProductWeights {
    pub fn per_step(&self, scheme: SchemeKind) -> u64 {
        match scheme {
            SchemeKind::Toolkit => self.toolkit,
            SchemeKind::ImprovedLow => self.improved_low,
            SchemeKind::ImprovedHigh => self.improved_high,
            SchemeKind::QuantifiedHigh => self.quantified_high,
            SchemeKind::Strang => self.strang,
            SchemeKind::Reference => 1,
        }
    }
}

/// A complete experiment description, read from JSON.
///
/// Every field has a default; `{}` is the default rotor experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub field: FieldSpec,
    /// Final time; defaults to half a period for a sinusoid and to the last
    /// tabulated time otherwise.
    pub horizon: Option<f64>,
    pub schemes: Vec<SchemeKind>,
    pub dt_sweep: StepSweep,
    pub eps_policy: EpsPolicies,
    /// Grid bounds `[ε_min, ε_max]`; defaults to the field's bounds.
    pub eps_bounds: Option<(f64, f64)>,
    pub eps_sweep: EpsSweep,
    pub reference: ReferenceSettings,
    pub improved_low: ImprovedLowOptions,
    pub omega_sign: OmegaSign,
    /// Size of the `α` grid of the quantified scheme.
    pub quantified_k: usize,
    pub fit: FitSettings,
    pub cost: CostSettings,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::default(),
            field: FieldSpec::default(),
            horizon: None,
            schemes: SchemeKind::APPROXIMATE.to_vec(),
            dt_sweep: StepSweep::default(),
            eps_policy: EpsPolicies::default(),
            eps_bounds: None,
            eps_sweep: EpsSweep::default(),
            reference: ReferenceSettings::default(),
            improved_low: ImprovedLowOptions::default(),
            omega_sign: OmegaSign::default(),
            quantified_k: 100,
            fit: FitSettings::default(),
            cost: CostSettings::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a JSON config; relative model paths resolve
    /// against the config file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        let mut config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let (ModelSpec::File { h0, mu, psi0 }, Some(dir)) = (&mut config.model, path.parent()) {
            for p in [h0, mu, psi0] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let horizon = self.horizon()?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        self.dt_sweep.counts(horizon)?;
        self.eps_sweep.m_values()?;
        if self.schemes.is_empty() {
            return Err(Error::Config("scheme list is empty".into()));
        }
        if self.quantified_k < 2 {
            return Err(Error::Config("quantified_k must be at least 2".into()));
        }
        if !(self.cost.tol > 0.0 && self.cost.tol <= 2.0) {
            return Err(Error::Config(format!("tolerance must lie in (0, 2], got {}", self.cost.tol)));
        }
        if let Some((lo, hi)) = self.eps_bounds {
            if !(lo < hi) {
                return Err(Error::Config(format!("invalid eps_bounds [{lo}, {hi}]")));
            }
        }
        for policy in [
            self.eps_policy.toolkit,
            self.eps_policy.improved_low,
            self.eps_policy.improved_high,
            self.eps_policy.quantified_high,
        ] {
            match policy {
                EpsPolicy::Fixed { m: 0 } => return Err(Error::Config("fixed policy needs m ≥ 1".into())),
                EpsPolicy::Proportional { c } if !(c > 0.0) => {
                    return Err(Error::Config(format!("proportional policy needs c > 0, got {c}")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> Result<f64> {
        if let Some(t) = self.horizon {
            return Ok(t);
        }
        match &self.field {
            FieldSpec::Sinusoid { omega, .. } => Ok(PI / omega),
            FieldSpec::Tabulated { times, .. } => times
                .last()
                .copied()
                .ok_or_else(|| Error::Config("tabulated field has no samples".into())),
            FieldSpec::Piecewise { .. } => Err(Error::Config("piecewise field needs an explicit horizon".into())),
        }
    }

    pub fn build_model(&self) -> Result<QuantumModel> {
        match &self.model {
            ModelSpec::Rotor { j_max, b, mu0 } => build_rigid_rotor(*j_max, *b, *mu0),
            ModelSpec::File { h0, mu, psi0 } => load_model(h0, mu, psi0),
            ModelSpec::Random { dim, seed } => random_model(*dim, seed.unwrap_or(self.seed)),
        }
    }

    pub fn build_field(&self) -> Result<ControlField> {
        let horizon = self.horizon()?;
        match &self.field {
            FieldSpec::Sinusoid { eps_max, omega } => ControlField::sinusoid(*eps_max, *omega, horizon),
            FieldSpec::Tabulated {
                times,
                values,
                interpolation,
            } => ControlField::tabulated(times.clone(), values.clone(), *interpolation, horizon),
            FieldSpec::Piecewise { starts, values } => {
                ControlField::piecewise(starts.clone(), values.clone(), horizon)
            }
        }
    }

    /// Grid bounds: configured, else the field's declared bounds.
    pub fn grid_bounds(&self, field: &ControlField) -> (f64, f64) {
        self.eps_bounds.unwrap_or_else(|| field.bounds())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default_experiment() {
        let c: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        c.validate().unwrap();
        assert!((c.horizon().unwrap() - 2.0 * PI).abs() < 1e-15);
        assert_eq!(c.dt_sweep.counts(2.0 * PI).unwrap(), vec![16, 32, 64, 128, 256, 512, 1024, 2048, 4096]);
    }

    #[test]
    fn parses_full_config() {
        let text = r#"{
            "model": {"kind": "random", "dim": 4, "seed": 3},
            "field": {"kind": "piecewise", "starts": [0, 1], "values": [0.5, -0.5]},
            "horizon": 2.0,
            "schemes": ["toolkit", "strang"],
            "dt_sweep": {"dt": [0.5, 0.25]},
            "eps_policy": {"toolkit": {"kind": "fixed", "m": 8}},
            "eps_bounds": [-1, 1],
            "omega_sign": "positive",
            "improved_low": {"init": "literal", "divisor": "full_step"},
            "reference": {"tol": 1e-10},
            "seed": 7
        }"#;
        let c: ExperimentConfig = serde_json::from_str(text).unwrap();
        c.validate().unwrap();
        assert_eq!(c.dt_sweep.counts(2.0).unwrap(), vec![4, 8]);
        assert_eq!(c.eps_policy.toolkit, EpsPolicy::Fixed { m: 8 });
        assert_eq!(c.eps_policy.improved_high, EpsPolicy::Proportional { c: 1.0 });
        assert_eq!(c.reference.max_n, 1 << 22);
        assert_eq!(c.build_model().unwrap().dim(), 4);
        assert_eq!(c.build_field().unwrap().eval(1.5).unwrap(), -0.5);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            r#"{"horizon": -1}"#,
            r#"{"dt_sweep": {"dt": [0.3]}, "horizon": 1.0}"#,
            r#"{"dt_sweep": {"steps": []}}"#,
            r#"{"schemes": []}"#,
            r#"{"schemes": ["euler"]}"#,
            r#"{"unknown_key": 1}"#,
            r#"{"eps_policy": {"toolkit": {"kind": "fixed", "m": 0}}}"#,
            r#"{"field": {"kind": "piecewise", "starts": [0], "values": [1]}}"#,
        ] {
            let parsed: std::result::Result<ExperimentConfig, _> = serde_json::from_str(text);
            assert!(parsed.map_or(true, |c| c.validate().is_err()), "{text}");
        }
    }

    #[test]
    fn dt_must_divide_horizon() {
        let sweep = StepSweep::Sizes { dt: vec![0.1] };
        assert_eq!(sweep.counts(1.0).unwrap(), vec![10]);
        assert!(sweep.counts(1.05).is_err());
    }
}
