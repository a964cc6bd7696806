//! The finite-dimensional model `(H0, μ, ψ0)`.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{hermiticity_defect, CMatrix, CVector, HermitianOperator, StateVector, C64};
use crate::textio;

/// Relative window in which a loaded initial state is renormalized.
pub const PSI0_NORM_WINDOW: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct QuantumModel {
    pub h0: HermitianOperator,
    pub mu: HermitianOperator,
    pub psi0: StateVector,
    pub label: String,
}

impl QuantumModel {
    pub fn new(h0: HermitianOperator, mu: HermitianOperator, psi0: StateVector, label: impl Into<String>) -> Result<Self> {
        let d = h0.dim();
        for found in [mu.dim(), psi0.dim()] {
            if found != d {
                return Err(Error::DimensionMismatch { expected: d, found });
            }
        }
        if (psi0.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "initial state must have unit norm, got {}",
                psi0.norm()
            )));
        }
        Ok(Self {
            h0,
            mu,
            psi0,
            label: label.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.h0.dim()
    }

    /// `H0 - ε μ`.
    pub fn hamiltonian(&self, eps: f64) -> HermitianOperator {
        self.h0
            .add_scaled(&self.mu, -eps)
            .expect("model operators share a dimension")
    }

    /// SHA-256 over the text serialization of `(H0, μ, ψ0)`.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(textio::matrix_to_string(self.h0.matrix()));
        hasher.update(textio::matrix_to_string(self.mu.matrix()));
        hasher.update(textio::vector_to_string(self.psi0.amplitudes()));
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Linear rigid rotor restricted to the `m = 0` ladder `|j⟩, j = 0..=j_max`:
/// `H0 = diag(B j(j+1))`, `μ_{j,j+1} = μ0 (j+1)/√((2j+1)(2j+3))`, ground-state
/// initial condition.
pub fn build_rigid_rotor(j_max: usize, b: f64, mu0: f64) -> Result<QuantumModel> {
    if j_max == 0 {
        return Err(Error::InvalidArgument(
            "j_max = 0 leaves a single level and no coupling".into(),
        ));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidArgument(format!("rotational constant must be positive, got {b}")));
    }
    if mu0 == 0.0 || !mu0.is_finite() {
        return Err(Error::InvalidArgument(format!("dipole strength must be nonzero, got {mu0}")));
    }
    let d = j_max + 1;
    let energies: Vec<f64> = (0..d).map(|j| b * (j * (j + 1)) as f64).collect();
    let mut mu = DMatrix::<f64>::zeros(d, d);
    for j in 0..j_max {
        let jf = j as f64;
        let coupling = mu0 * (jf + 1.0) / ((2.0 * jf + 1.0) * (2.0 * jf + 3.0)).sqrt();
        mu[(j, j + 1)] = coupling;
        mu[(j + 1, j)] = coupling;
    }
    QuantumModel::new(
        HermitianOperator::diagonal(&energies)?,
        HermitianOperator::from_real(mu)?,
        StateVector::basis(d, 0)?,
        format!("rotor(j_max={j_max}, B={b}, mu0={mu0})"),
    )
}

/// Writes `H0`, `μ`, `ψ0` in the matrix/vector text format.
pub fn save_model(model: &QuantumModel, h0_path: &Path, mu_path: &Path, psi0_path: &Path) -> Result<()> {
    textio::write_matrix(h0_path, model.h0.matrix())?;
    textio::write_matrix(mu_path, model.mu.matrix())?;
    textio::write_vector(psi0_path, model.psi0.amplitudes())?;
    Ok(())
}

pub fn load_model(h0_path: &Path, mu_path: &Path, psi0_path: &Path) -> Result<QuantumModel> {
    let h0 = load_operator(h0_path)?;
    let mu = load_operator(mu_path)?;
    let psi = textio::read_vector(psi0_path)?;
    let d = h0.dim();
    if mu.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: mu.dim() }.context(mu_path.display().to_string()));
    }
    if psi.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: psi.len() }.context(psi0_path.display().to_string()));
    }
    let psi0 = StateVector::new(psi)?;
    let norm = psi0.norm();
    if (norm - 1.0).abs() > PSI0_NORM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "{}: initial state norm {norm} is not within {PSI0_NORM_WINDOW:e} of 1",
            psi0_path.display()
        )));
    }
    let psi0 = if norm == 1.0 { psi0 } else { psi0.normalized()? };
    QuantumModel::new(h0, mu, psi0, format!("files({})", h0_path.display()))
}

fn load_operator(path: &Path) -> Result<HermitianOperator> {
    let m = textio::read_matrix(path)?;
    HermitianOperator::new(m).map_err(|e| e.context(path.display().to_string()))
}

/// Deterministic random model: Gaussian entries symmetrized into `H0`, `μ`,
/// and a Gaussian unit vector `ψ0`.
pub fn random_model(dim: usize, seed: u64) -> Result<QuantumModel> {
    if dim < 2 {
        return Err(Error::InvalidArgument(format!("random model needs dim >= 2, got {dim}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaussian = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut hermitian = || {
        let m = CMatrix::from_fn(dim, dim, |_, _| C64::new(gaussian(), gaussian()));
        let sym = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        debug_assert!(hermiticity_defect(&sym) == 0.0);
        HermitianOperator::new(sym)
    };
    let h0 = hermitian()?;
    let mu = hermitian()?;
    let psi = CVector::from_fn(dim, |_, _| C64::new(gaussian(), gaussian()));
    let psi0 = StateVector::new(psi)?.normalized()?;
    QuantumModel::new(h0, mu, psi0, format!("random(dim={dim}, seed={seed})"))
}
