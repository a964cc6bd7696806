//! Propagators for the controlled Schrödinger equation
//! `i∂tψ = (H0 - με(t))ψ` built from precomputed toolkits of one-step
//! exponentials, with splitting and step-exact baselines and a harness for
//! convergence-order and cost measurements.

pub mod cost;
pub mod error;
pub mod field;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod schemes;
pub mod textio;
pub mod toolkit;

pub use cost::CostCounter;
pub use error::{Error, Result};
pub use field::{make_grid, BetaDivisor, ControlField, FieldGrid};
pub use linalg::{HermitianOperator, SpectralFactors, StateVector, UnitaryPropagator};
pub use model::QuantumModel;
pub use schemes::{PropagationResult, SchemeKind};
pub use toolkit::{build_pair_toolkit, build_toolkit, CorrectorPair, FieldLevels, PairToolkit, Toolkit};
