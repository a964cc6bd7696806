//! Control fields, the uniform quantization grid of field values, and the
//! lookups and finite-difference stencils the schemes need at each step.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of samples used to check the declared bounds at construction.
pub const BOUNDS_CHECK_SAMPLES: usize = 4096;

const BOUNDS_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Linear,
    Nearest,
}

#[derive(Clone)]
enum Shape {
    Sinusoid { amplitude: f64, omega: f64 },
    /// Plateau `values[i]` holds on `[starts[i], starts[i+1])`.
    Piecewise { starts: Vec<f64>, values: Vec<f64> },
    Tabulated {
        times: Vec<f64>,
        values: Vec<f64>,
        interpolation: Interpolation,
    },
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Sinusoid { amplitude, omega } => f
                .debug_struct("Sinusoid")
                .field("amplitude", amplitude)
                .field("omega", omega)
                .finish(),
            Shape::Piecewise { starts, .. } => write!(f, "Piecewise({} plateaus)", starts.len()),
            Shape::Tabulated {
                times,
                interpolation,
                ..
            } => write!(f, "Tabulated({} samples, {interpolation:?})", times.len()),
            Shape::Function(_) => write!(f, "Function"),
        }
    }
}

/// A scalar control `ε(t)` on `[0, T]` with declared bounds
/// `[ε_min, ε_max]`.
#[derive(Clone, Debug)]
pub struct ControlField {
    shape: Shape,
    lower: f64,
    upper: f64,
    horizon: f64,
}

impl ControlField {
    /// `ε(t) = amplitude · sin(ω t)`, bounds `±|amplitude|`.
    pub fn sinusoid(amplitude: f64, omega: f64, horizon: f64) -> Result<Self> {
        if !amplitude.is_finite() || !omega.is_finite() {
            return Err(Error::InvalidArgument("sinusoid parameters must be finite".into()));
        }
        let a = amplitude.abs();
        Self::with_shape(Shape::Sinusoid { amplitude, omega }, -a, a, horizon)
    }

    /// Piecewise-constant field: `values[i]` on `[starts[i], starts[i+1])`,
    /// the last plateau extending to the horizon. `starts[0]` must be 0.
    pub fn piecewise(starts: Vec<f64>, values: Vec<f64>, horizon: f64) -> Result<Self> {
        if starts.is_empty() || starts.len() != values.len() {
            return Err(Error::InvalidArgument(
                "piecewise field needs matching, nonempty start/value lists".into(),
            ));
        }
        if starts[0] != 0.0 {
            return Err(Error::InvalidArgument("first plateau must start at t = 0".into()));
        }
        if !starts.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument("plateau starts must be increasing".into()));
        }
        let (lo, hi) = min_max(&values)?;
        Self::with_shape(Shape::Piecewise { starts, values }, lo, hi, horizon)
    }

    pub fn constant(value: f64, horizon: f64) -> Result<Self> {
        Self::piecewise(vec![0.0], vec![value], horizon)
    }

    /// Samples `(times, values)` interpolated linearly or to the nearest
    /// sample; must cover `[0, horizon]`.
    pub fn tabulated(
        times: Vec<f64>,
        values: Vec<f64>,
        interpolation: Interpolation,
        horizon: f64,
    ) -> Result<Self> {
        if times.len() < 2 || times.len() != values.len() {
            return Err(Error::InvalidArgument(
                "tabulated field needs at least two (t, eps) samples".into(),
            ));
        }
        if !times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument("sample times must be increasing".into()));
        }
        if times[0] > 0.0 || *times.last().unwrap() < horizon * (1.0 - 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "samples cover [{}, {}] but the horizon is [0, {horizon}]",
                times[0],
                times.last().unwrap()
            )));
        }
        let (lo, hi) = min_max(&values)?;
        Self::with_shape(
            Shape::Tabulated {
                times,
                values,
                interpolation,
            },
            lo,
            hi,
            horizon,
        )
    }

    /// Arbitrary closure with explicit bounds.
    pub fn from_fn<F>(f: F, lower: f64, upper: f64, horizon: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::with_shape(Shape::Function(Arc::new(f)), lower, upper, horizon)
    }

    /// Replaces the declared bounds; the field must still satisfy them.
    pub fn with_bounds(self, lower: f64, upper: f64) -> Result<Self> {
        Self::with_shape(self.shape, lower, upper, self.horizon)
    }

    fn with_shape(shape: Shape, lower: f64, upper: f64, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        if !(lower.is_finite() && upper.is_finite() && lower <= upper) {
            return Err(Error::InvalidArgument(format!("invalid bounds [{lower}, {upper}]")));
        }
        let field = Self {
            shape,
            lower,
            upper,
            horizon,
        };
        field.check_bounds()?;
        Ok(field)
    }

    fn check_bounds(&self) -> Result<()> {
        let slack = BOUNDS_SLACK * self.lower.abs().max(self.upper.abs()).max(1.0);
        let last = (BOUNDS_CHECK_SAMPLES - 1) as f64;
        for i in 0..BOUNDS_CHECK_SAMPLES {
            let t = self.horizon * i as f64 / last;
            let value = self.eval_unchecked(t.min(self.horizon));
            if !value.is_finite() || value < self.lower - slack || value > self.upper + slack {
                return Err(Error::BoundsViolation {
                    value,
                    time: t,
                    lower: self.lower,
                    upper: self.upper,
                });
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    /// `ε(t)` for `t ∈ [0, T]`; times overshooting `T` by rounding are
    /// clamped.
    pub fn eval(&self, t: f64) -> Result<f64> {
        let tol = 1e-12 * self.horizon;
        if !(t >= -tol && t <= self.horizon + tol) {
            return Err(Error::OutOfHorizon {
                time: t,
                horizon: self.horizon,
            });
        }
        Ok(self.eval_unchecked(t.clamp(0.0, self.horizon)))
    }

    fn eval_unchecked(&self, t: f64) -> f64 {
        match &self.shape {
            Shape::Sinusoid { amplitude, omega } => amplitude * (omega * t).sin(),
            Shape::Piecewise { starts, values } => {
                let idx = starts.partition_point(|&s| s <= t);
                values[idx.saturating_sub(1)]
            }
            Shape::Tabulated {
                times,
                values,
                interpolation,
            } => {
                let idx = times.partition_point(|&s| s <= t).clamp(1, times.len() - 1);
                let (t0, t1) = (times[idx - 1], times[idx]);
                let (v0, v1) = (values[idx - 1], values[idx]);
                match interpolation {
                    Interpolation::Linear => v0 + (v1 - v0) * (t - t0) / (t1 - t0),
                    Interpolation::Nearest => {
                        if t - t0 <= t1 - t {
                            v0
                        } else {
                            v1
                        }
                    }
                }
            }
            Shape::Function(f) => f(t),
        }
    }
}

fn min_max(values: &[f64]) -> Result<(f64, f64)> {
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("field samples".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// Uniform grid `ε̄_ℓ = ε_min + ℓΔε`, `ℓ = 0..=m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    eps_min: f64,
    eps_max: f64,
    m: usize,
    step: f64,
    values: Vec<f64>,
}

pub fn make_grid(eps_min: f64, eps_max: f64, m: usize) -> Result<FieldGrid> {
    if m == 0 {
        return Err(Error::InvalidGrid("m must be at least 1".into()));
    }
    if !(eps_min.is_finite() && eps_max.is_finite()) || eps_max <= eps_min {
        return Err(Error::InvalidGrid(format!(
            "need eps_max > eps_min, got [{eps_min}, {eps_max}]"
        )));
    }
    let step = (eps_max - eps_min) / m as f64;
    let mut values: Vec<f64> = (0..=m).map(|l| eps_min + l as f64 * step).collect();
    values[m] = eps_max;
    if !values.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidGrid(format!(
            "m = {m} is too fine for [{eps_min}, {eps_max}] in double precision"
        )));
    }
    Ok(FieldGrid {
        eps_min,
        eps_max,
        m,
        step,
        values,
    })
}

impl FieldGrid {
    pub fn eps_min(&self) -> f64 {
        self.eps_min
    }

    pub fn eps_max(&self) -> f64 {
        self.eps_max
    }

    /// Number of cells; the grid holds `m + 1` values.
    pub fn m(&self) -> usize {
        self.m
    }

    /// `Δε`.
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Index of the grid value closest to `v`, ties toward the lower index.
    /// Values up to `Δε/2` outside the bounds are clamped; farther ones are a
    /// bounds violation.
    pub fn nearest_index(&self, v: f64) -> Result<usize> {
        let slack = 0.5 * self.step + BOUNDS_SLACK * self.eps_min.abs().max(self.eps_max.abs()).max(1.0);
        if !(v >= self.eps_min - slack && v <= self.eps_max + slack) {
            return Err(Error::BoundsViolation {
                value: v,
                time: f64::NAN,
                lower: self.eps_min,
                upper: self.eps_max,
            });
        }
        let x = (v - self.eps_min) / self.step;
        let guess = ((x - 0.5).ceil().max(0.0) as usize).min(self.m);
        // Settle rounding in the division by comparing against neighbours.
        let lo = guess.saturating_sub(1);
        let hi = (guess + 1).min(self.m);
        let mut best = lo;
        for l in lo..=hi {
            if (v - self.values[l]).abs() < (v - self.values[best]).abs() {
                best = l;
            }
        }
        Ok(best)
    }

    /// Convex split `v = α ε̄_ℓ + β ε̄_{ℓ+1}` with `α + β = 1`.
    pub fn bracket_weights(&self, v: f64) -> Result<ConvexWeights> {
        let slack = BOUNDS_SLACK * self.eps_min.abs().max(self.eps_max.abs()).max(1.0);
        if !(v >= self.eps_min - slack && v <= self.eps_max + slack) {
            return Err(Error::BoundsViolation {
                value: v,
                time: f64::NAN,
                lower: self.eps_min,
                upper: self.eps_max,
            });
        }
        let v = v.clamp(self.eps_min, self.eps_max);
        let mut ell = (((v - self.eps_min) / self.step).floor().max(0.0) as usize).min(self.m - 1);
        // Division rounding can land one cell off.
        if v < self.values[ell] && ell > 0 {
            ell -= 1;
        } else if v > self.values[ell + 1] && ell + 1 < self.m {
            ell += 1;
        }
        let (lo, hi) = (self.values[ell], self.values[ell + 1]);
        let beta = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        Ok(ConvexWeights {
            ell,
            alpha: 1.0 - beta,
            beta,
        })
    }
}

/// Free-function forms of the grid lookups.
pub fn nearest_index(grid: &FieldGrid, v: f64) -> Result<usize> {
    grid.nearest_index(v)
}

pub fn bracket_weights(grid: &FieldGrid, v: f64) -> Result<ConvexWeights> {
    grid.bracket_weights(v)
}

/// Weights of the two bracketing grid values; `alpha` goes with `ell`,
/// `beta` with `ell + 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvexWeights {
    pub ell: usize,
    pub alpha: f64,
    pub beta: f64,
}

/// Divisor of the three-point second-difference estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaDivisor {
    /// `(Δt/2)²`: consistent estimate of `ε̈(t_{j+1/2})`.
    #[default]
    HalfStep,
    /// `Δt²`: a quarter of the second derivative.
    FullStep,
}

/// First/second derivative estimates of the field over step `j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivativeStencil {
    pub alpha: f64,
    pub beta: f64,
}

pub fn derivative_stencil(
    field: &ControlField,
    j: usize,
    dt: f64,
    divisor: BetaDivisor,
) -> Result<DerivativeStencil> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let t0 = j as f64 * dt;
    let e0 = field.eval(t0)?;
    let e_mid = field.eval(t0 + 0.5 * dt)?;
    let e1 = field.eval(t0 + dt)?;
    let alpha = (e1 - e0) / dt;
    let denom = match divisor {
        BetaDivisor::HalfStep => 0.25 * dt * dt,
        BetaDivisor::FullStep => dt * dt,
    };
    let beta = (e1 - 2.0 * e_mid + e0) / denom;
    if !(alpha.is_finite() && beta.is_finite()) {
        return Err(Error::NonFinite(format!("derivative stencil at step {j}")));
    }
    Ok(DerivativeStencil { alpha, beta })
}

/// `ε((j + 1/2) Δt)`.
pub fn midpoint_value(field: &ControlField, j: usize, dt: f64) -> Result<f64> {
    field.eval((j as f64 + 0.5) * dt)
}
