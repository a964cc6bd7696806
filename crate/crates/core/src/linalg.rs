//! Dense complex linear algebra for Hermitian generators and their unitary
//! exponentials.
//!
//! Every exponential in the crate goes through [`SpectralFactors`]: a Hermitian
//! operator is diagonalized once and `exp(-i t H)` is then available for any
//! duration `t` at the cost of a diagonal phase scaling and one matrix
//! product. This is what makes fractional powers of toolkit propagators
//! unambiguous.

use std::cmp::Ordering;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::cost::CostCounter;
use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Largest Hermiticity defect silently repaired by symmetrization.
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;

/// Reconstruction residual (relative to the operator scale) accepted from the
/// eigensolver.
pub const RECONSTRUCTION_TOLERANCE: f64 = 1e-10;

const PHASE_PIVOT_THRESHOLD: f64 = 1e-10;

/// Max-entry norm.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Max-entry norm of `H - H†`.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut defect = 0.0_f64;
    for j in 0..n {
        for k in j..n {
            defect = defect.max((m[(j, k)] - m[(k, j)].conj()).norm());
        }
    }
    defect
}

/// Max-entry norm of `C + C†`; zero for anti-Hermitian matrices.
pub fn anti_hermiticity_defect(m: &CMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut defect = 0.0_f64;
    for j in 0..n {
        for k in j..n {
            defect = defect.max((m[(j, k)] + m[(k, j)].conj()).norm());
        }
    }
    defect
}

/// Max-entry norm of `U†U - I`.
pub fn unitarity_defect(m: &CMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let gram = m.adjoint() * m;
    let n = m.nrows();
    let mut defect = 0.0_f64;
    for j in 0..n {
        for k in 0..n {
            let target = if j == k { 1.0 } else { 0.0 };
            defect = defect.max((gram[(j, k)] - C64::new(target, 0.0)).norm());
        }
    }
    defect
}

fn check_square(m: &CMatrix) -> Result<()> {
    if m.is_square() && m.nrows() > 0 {
        Ok(())
    } else {
        Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        })
    }
}

fn check_finite(m: &CMatrix, what: &str) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} has non-finite entries")))
    }
}

/// A dense Hermitian matrix. Construction symmetrizes the input as
/// `(H + H†)/2`, so the stored entries are exactly Hermitian.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator {
    entries: CMatrix,
}

impl HermitianOperator {
    pub fn new(entries: CMatrix) -> Result<Self> {
        check_square(&entries)?;
        check_finite(&entries, "operator")?;
        let defect = hermiticity_defect(&entries);
        if defect > HERMITIAN_TOLERANCE {
            return Err(Error::NotHermitian {
                defect,
                tolerance: HERMITIAN_TOLERANCE,
            });
        }
        Ok(Self {
            entries: symmetrize(&entries),
        })
    }

    pub fn from_real(entries: DMatrix<f64>) -> Result<Self> {
        Self::new(entries.map(|x| C64::new(x, 0.0)))
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::NotSquare { rows: 0, cols: 0 });
        }
        let d = DVector::from_iterator(values.len(), values.iter().map(|&v| C64::new(v, 0.0)));
        Self::new(DMatrix::from_diagonal(&d))
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            entries: CMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_matrix(self) -> CMatrix {
        self.entries
    }

    /// True if every entry has zero imaginary part.
    pub fn is_real(&self) -> bool {
        self.entries.iter().all(|z| z.im == 0.0)
    }

    /// `self + coeff * other`, e.g. `H0 - ε μ` with `coeff = -ε`.
    pub fn add_scaled(&self, other: &HermitianOperator, coeff: f64) -> Result<Self> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        let mut entries = self.entries.clone();
        entries.zip_apply(&other.entries, |a, b| *a += b * coeff);
        Ok(Self { entries })
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            entries: self.entries.map(|z| z * factor),
        }
    }
}

fn symmetrize(m: &CMatrix) -> CMatrix {
    let n = m.nrows();
    let mut out = m.clone();
    for j in 0..n {
        out[(j, j)] = C64::new(m[(j, j)].re, 0.0);
        for k in (j + 1)..n {
            let avg = (m[(j, k)] + m[(k, j)].conj()) * 0.5;
            out[(j, k)] = avg;
            out[(k, j)] = avg.conj();
        }
    }
    out
}

/// Eigen-decomposition `H = V diag(λ) V†` of a Hermitian operator.
///
/// Eigenvalues are ascending. Each eigenvector's first component with
/// modulus above `1e-10` is made real and positive; within a degenerate
/// cluster the vectors are ordered lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralFactors {
    eigenvalues: DVector<f64>,
    eigenvectors: CMatrix,
}

impl SpectralFactors {
    /// Builds factors from raw parts, checking shapes and orthonormality.
    pub fn from_parts(eigenvalues: DVector<f64>, eigenvectors: CMatrix) -> Result<Self> {
        check_square(&eigenvectors)?;
        if eigenvalues.len() != eigenvectors.nrows() {
            return Err(Error::DimensionMismatch {
                expected: eigenvectors.nrows(),
                found: eigenvalues.len(),
            });
        }
        if !eigenvalues.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("eigenvalues".into()));
        }
        let defect = unitarity_defect(&eigenvectors);
        if defect > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "eigenvectors are not orthonormal (defect {defect:.3e})"
            )));
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &CMatrix {
        &self.eigenvectors
    }

    /// `V diag(λ) V†`.
    pub fn reconstruct(&self) -> CMatrix {
        let mut scaled = self.eigenvectors.clone();
        for (k, &lambda) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(k).scale_mut(lambda);
        }
        scaled * self.eigenvectors.adjoint()
    }

    /// `exp(-i t H) ψ` computed as `V (e^{-i t λ} ⊙ V†ψ)`, without forming the
    /// propagator matrix.
    pub fn evolve(&self, t: f64, psi: &CVector) -> CVector {
        let mut coeffs = self.eigenvectors.ad_mul(psi);
        for (c, &lambda) in coeffs.iter_mut().zip(self.eigenvalues.iter()) {
            *c *= C64::from_polar(1.0, -t * lambda);
        }
        &self.eigenvectors * coeffs
    }
}

/// Diagonalizes a Hermitian operator.
///
/// Real symmetric inputs take a real eigensolver path. The factorization is
/// checked by reconstruction against [`RECONSTRUCTION_TOLERANCE`] (scaled by
/// `max(1, ‖H‖_max)`).
pub fn spectral_factorize(h: &HermitianOperator) -> Result<SpectralFactors> {
    let factors = factorize_unchecked(h)?;
    let scale = max_abs(h.matrix()).max(1.0);
    let residual = max_abs(&(factors.reconstruct() - h.matrix())) / scale;
    if residual > RECONSTRUCTION_TOLERANCE || residual.is_nan() {
        return Err(Error::EigenNonConvergence { residual });
    }
    Ok(factors)
}

/// Same as [`spectral_factorize`] but skips the reconstruction check; used in
/// the hot loop of the step-exact reference solver.
pub(crate) fn factorize_unchecked(h: &HermitianOperator) -> Result<SpectralFactors> {
    let n = h.dim();
    let max_iter = 1000 * n.max(1);
    let (values, vectors): (DVector<f64>, CMatrix) = if h.is_real() {
        let real = h.matrix().map(|z| z.re);
        let eig = SymmetricEigen::try_new(real, f64::EPSILON, max_iter).ok_or(
            Error::EigenNonConvergence {
                residual: f64::NAN,
            },
        )?;
        (eig.eigenvalues, eig.eigenvectors.map(|x| C64::new(x, 0.0)))
    } else {
        let eig = SymmetricEigen::try_new(h.matrix().clone(), f64::EPSILON, max_iter).ok_or(
            Error::EigenNonConvergence {
                residual: f64::NAN,
            },
        )?;
        (eig.eigenvalues, eig.eigenvectors)
    };
    if !values.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("eigenvalues".into()));
    }
    Ok(canonicalize(values, vectors))
}

fn canonicalize(values: DVector<f64>, mut vectors: CMatrix) -> SpectralFactors {
    let n = values.len();
    for k in 0..n {
        let mut col = vectors.column_mut(k);
        if let Some(pivot) = col.iter().copied().find(|z| z.norm() > PHASE_PIVOT_THRESHOLD) {
            let phase = pivot.conj() / pivot.norm();
            for z in col.iter_mut() {
                *z *= phase;
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));

    // Order degenerate clusters by their eigenvectors.
    let scale = values.iter().fold(1.0_f64, |acc, x| acc.max(x.abs()));
    let tie = 1e-12 * scale;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] - values[order[end - 1]] <= tie {
            end += 1;
        }
        if end - start > 1 {
            order[start..end].sort_by(|&a, &b| lexicographic(&vectors, a, b));
        }
        start = end;
    }

    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| values[k]));
    let eigenvectors = CMatrix::from_fn(n, n, |r, c| vectors[(r, order[c])]);
    SpectralFactors {
        eigenvalues,
        eigenvectors,
    }
}

fn lexicographic(v: &CMatrix, a: usize, b: usize) -> Ordering {
    for r in 0..v.nrows() {
        let (x, y) = (v[(r, a)], v[(r, b)]);
        let ord = y
            .re
            .partial_cmp(&x.re)
            .unwrap_or(Ordering::Equal)
            .then(y.im.partial_cmp(&x.im).unwrap_or(Ordering::Equal));
        if (x - y).norm() > PHASE_PIVOT_THRESHOLD && ord != Ordering::Equal {
            return ord;
        }
    }
    Ordering::Equal
}

/// A dense unitary matrix, optionally remembering the spectral factors of the
/// Hermitian generator it was exponentiated from.
#[derive(Clone, Debug)]
pub struct UnitaryPropagator {
    entries: CMatrix,
    generator: Option<Arc<SpectralFactors>>,
    duration: f64,
}

impl UnitaryPropagator {
    pub fn identity(dim: usize) -> Self {
        Self {
            entries: CMatrix::identity(dim, dim),
            generator: None,
            duration: 0.0,
        }
    }

    /// Wraps an arbitrary matrix, checking unitarity to `1e-10`.
    pub fn from_matrix(entries: CMatrix) -> Result<Self> {
        check_square(&entries)?;
        check_finite(&entries, "propagator")?;
        let defect = unitarity_defect(&entries);
        if defect > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "matrix is not unitary (defect {defect:.3e})"
            )));
        }
        Ok(Self {
            entries,
            generator: None,
            duration: f64::NAN,
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.entries
    }

    pub fn generator(&self) -> Option<&Arc<SpectralFactors>> {
        self.generator.as_ref()
    }

    /// Duration `t` of `exp(-i t H)`; NaN for propagators built from a raw
    /// matrix or a product.
    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub(crate) fn without_generator(self) -> Self {
        Self {
            generator: None,
            ..self
        }
    }

    /// Matrix product `self · rhs` (apply `rhs` first).
    pub fn compose(&self, rhs: &UnitaryPropagator, cost: &mut CostCounter) -> Result<Self> {
        if rhs.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: rhs.dim(),
            });
        }
        cost.matrix_matrix_products += 1;
        Ok(Self {
            entries: &self.entries * &rhs.entries,
            generator: None,
            duration: f64::NAN,
        })
    }

    /// Matrix-vector product `U ψ`, counted as one apply.
    pub fn apply(&self, psi: &StateVector, cost: &mut CostCounter) -> Result<StateVector> {
        if psi.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: psi.dim(),
            });
        }
        cost.matrix_vector_applies += 1;
        Ok(StateVector {
            amplitudes: &self.entries * &psi.amplitudes,
        })
    }
}

/// `exp(-i t H) = V diag(e^{-i t λ_k}) V†`.
pub fn expm_unitary(factors: &Arc<SpectralFactors>, t: f64) -> Result<UnitaryPropagator> {
    if !t.is_finite() {
        return Err(Error::NonFinite(format!("propagation time {t}")));
    }
    let n = factors.dim();
    if t == 0.0 {
        return Ok(UnitaryPropagator {
            entries: CMatrix::identity(n, n),
            generator: Some(Arc::clone(factors)),
            duration: 0.0,
        });
    }
    let mut scaled = factors.eigenvectors.clone();
    for (k, &lambda) in factors.eigenvalues.iter().enumerate() {
        let phase = t * lambda;
        if !phase.is_finite() {
            return Err(Error::NonFinite(format!("phase t·λ = {t}·{lambda}")));
        }
        let z = C64::from_polar(1.0, -phase);
        for entry in scaled.column_mut(k).iter_mut() {
            *entry *= z;
        }
    }
    Ok(UnitaryPropagator {
        entries: scaled * factors.eigenvectors.adjoint(),
        generator: Some(Arc::clone(factors)),
        duration: t,
    })
}

/// `AB - BA`. Anti-Hermitian when both inputs are Hermitian.
pub fn commutator(a: &HermitianOperator, b: &HermitianOperator) -> Result<CMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let (a, b) = (a.matrix(), b.matrix());
    Ok(a * b - b * a)
}

/// A wave function in the discrete basis.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amplitudes: CVector,
}

impl StateVector {
    pub fn new(amplitudes: CVector) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::InvalidArgument("empty state vector".into()));
        }
        if !amplitudes.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::NonFinite("state amplitudes".into()));
        }
        Ok(Self { amplitudes })
    }

    /// Unit vector `e_k`.
    pub fn basis(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::InvalidArgument(format!(
                "basis index {k} out of range for dimension {dim}"
            )));
        }
        let mut amplitudes = CVector::zeros(dim);
        amplitudes[k] = C64::new(1.0, 0.0);
        Ok(Self { amplitudes })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    /// Discrete L² (Euclidean) norm.
    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn normalized(&self) -> Result<Self> {
        let norm = self.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidArgument("cannot normalize a zero vector".into()));
        }
        Ok(Self {
            amplitudes: self.amplitudes.unscale(norm),
        })
    }

    /// `‖self - other‖`.
    pub fn distance(&self, other: &StateVector) -> Result<f64> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok((&self.amplitudes - &other.amplitudes).norm())
    }

    pub(crate) fn from_raw(amplitudes: CVector) -> Self {
        Self { amplitudes }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn assert_close(a: &CMatrix, b: &CMatrix, tol: f64) {
        let err = max_abs(&(a - b));
        assert!(err <= tol, "max-entry difference {err:.3e} > {tol:.1e}\n{a}\n{b}");
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn sigma_x() -> HermitianOperator {
        HermitianOperator::from_real(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap()
    }

    fn sigma_z() -> HermitianOperator {
        HermitianOperator::diagonal(&[1.0, -1.0]).unwrap()
    }

    fn random_hermitian(dim: usize, seed: u64) -> HermitianOperator {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = CMatrix::from_fn(dim, dim, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        HermitianOperator::new((&m + m.adjoint()) * c(0.5, 0.0)).unwrap()
    }

    #[test]
    fn factorize_diagonal() {
        let h = HermitianOperator::diagonal(&[2.0, 5.0]).unwrap();
        let f = spectral_factorize(&h).unwrap();
        assert_eq!(f.eigenvalues().as_slice(), &[2.0, 5.0]);
        assert_close(f.eigenvectors(), &CMatrix::identity(2, 2), 1e-15);
    }

    #[test]
    fn factorize_unsorted_diagonal_is_ascending() {
        let h = HermitianOperator::diagonal(&[3.0, -1.0, 2.0]).unwrap();
        let f = spectral_factorize(&h).unwrap();
        assert_eq!(f.eigenvalues().as_slice(), &[-1.0, 2.0, 3.0]);
        assert_eq!(f.eigenvectors()[(1, 0)], c(1.0, 0.0));
    }

    #[test]
    fn factorize_pauli_x() {
        let f = spectral_factorize(&sigma_x()).unwrap();
        assert!((f.eigenvalues()[0] + 1.0).abs() < 1e-14);
        assert!((f.eigenvalues()[1] - 1.0).abs() < 1e-14);
        // first component real positive
        for k in 0..2 {
            let z = f.eigenvectors()[(0, k)];
            assert!(z.re > 0.0 && z.im.abs() < 1e-15);
        }
    }

    #[test]
    fn factorize_random_reconstructs() {
        for seed in 0..5 {
            let h = random_hermitian(8, seed);
            let f = spectral_factorize(&h).unwrap();
            assert_close(&f.reconstruct(), h.matrix(), 1e-10);
            assert!(unitarity_defect(f.eigenvectors()) <= 1e-12);
            assert!(f.eigenvalues().as_slice().windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn factorize_is_deterministic() {
        let h = random_hermitian(6, 11);
        assert_eq!(spectral_factorize(&h).unwrap(), spectral_factorize(&h).unwrap());
    }

    #[test]
    fn symmetrizes_small_defect_and_rejects_large() {
        let mut m = sigma_x().into_matrix();
        m[(0, 1)] += c(1e-12, 0.0);
        let h = HermitianOperator::new(m.clone()).unwrap();
        assert_eq!(hermiticity_defect(h.matrix()), 0.0);

        m[(0, 1)] += c(1e-3, 0.0);
        match HermitianOperator::new(m) {
            Err(Error::NotHermitian { defect, .. }) => assert!((defect - 1e-3).abs() < 1e-9),
            other => panic!("expected NotHermitian, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_square() {
        assert!(matches!(
            HermitianOperator::new(CMatrix::zeros(2, 3)),
            Err(Error::NotSquare { .. })
        ));
    }

    #[test]
    fn expm_diagonal_phases() {
        let f = Arc::new(spectral_factorize(&HermitianOperator::diagonal(&[1.0, 3.0]).unwrap()).unwrap());
        let u = expm_unitary(&f, PI).unwrap();
        assert_close(u.matrix(), &(CMatrix::identity(2, 2) * c(-1.0, 0.0)), 1e-14);
    }

    #[test]
    fn expm_pauli_x_quarter_turn() {
        let f = Arc::new(spectral_factorize(&sigma_x()).unwrap());
        let u = expm_unitary(&f, PI / 2.0).unwrap();
        let expected = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, -1.0), c(0.0, 0.0)]);
        assert_close(u.matrix(), &expected, 1e-14);
    }

    #[test]
    fn expm_zero_time_is_identity() {
        let f = Arc::new(spectral_factorize(&random_hermitian(5, 3)).unwrap());
        let u = expm_unitary(&f, 0.0).unwrap();
        assert_eq!(u.matrix(), &CMatrix::identity(5, 5));
    }

    #[test]
    fn expm_rejects_non_finite() {
        let f = Arc::new(spectral_factorize(&sigma_x()).unwrap());
        assert!(expm_unitary(&f, f64::NAN).is_err());
        assert!(expm_unitary(&f, f64::INFINITY).is_err());
    }

    #[test]
    fn expm_semigroup() {
        let f = Arc::new(spectral_factorize(&random_hermitian(7, 9)).unwrap());
        let (s, t) = (0.37, 1.91);
        let lhs = expm_unitary(&f, s + t).unwrap();
        let rhs = expm_unitary(&f, s).unwrap().matrix() * expm_unitary(&f, t).unwrap().matrix();
        assert_close(lhs.matrix(), &rhs, 1e-10);
    }

    #[test]
    fn evolve_matches_matrix_apply() {
        let h = random_hermitian(6, 4);
        let f = Arc::new(spectral_factorize(&h).unwrap());
        let psi = StateVector::basis(6, 2).unwrap();
        let u = expm_unitary(&f, 0.8).unwrap();
        let mut cost = CostCounter::default();
        let a = u.apply(&psi, &mut cost).unwrap();
        let b = f.evolve(0.8, psi.amplitudes());
        assert!((a.amplitudes() - b).norm() < 1e-13);
        assert_eq!(cost.matrix_vector_applies, 1);
    }

    #[test]
    fn commutator_examples() {
        let h = random_hermitian(3, 1);
        assert_eq!(max_abs(&commutator(&h, &h).unwrap()), 0.0);

        let xz = commutator(&sigma_x(), &sigma_z()).unwrap();
        let expected = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(-2.0, 0.0), c(2.0, 0.0), c(0.0, 0.0)]);
        assert_close(&xz, &expected, 0.0);

        let d = HermitianOperator::diagonal(&[1.0, 2.0]).unwrap();
        let dx = commutator(&d, &sigma_x()).unwrap();
        let expected = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        assert_close(&dx, &expected, 0.0);
    }

    #[test]
    fn commutator_antisymmetry_and_anti_hermitian() {
        let (a, b) = (random_hermitian(5, 21), random_hermitian(5, 22));
        let ab = commutator(&a, &b).unwrap();
        let ba = commutator(&b, &a).unwrap();
        assert_close(&ab, &(-ba), 1e-15);
        assert!(anti_hermiticity_defect(&ab) <= 1e-12);
    }

    #[test]
    fn commutator_dimension_mismatch() {
        let a = HermitianOperator::zeros(2);
        let b = HermitianOperator::zeros(3);
        assert!(matches!(commutator(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn apply_identity_and_phase() {
        let psi = StateVector::new(CVector::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8)])).unwrap();
        let mut cost = CostCounter::default();
        let same = UnitaryPropagator::identity(2).apply(&psi, &mut cost).unwrap();
        assert_eq!(same, psi);
        let phase = UnitaryPropagator::from_matrix(CMatrix::identity(2, 2) * C64::from_polar(1.0, -1.0)).unwrap();
        let out = phase.apply(&psi, &mut cost).unwrap();
        assert!((out.norm() - 1.0).abs() < 1e-15);
        assert_eq!(cost.matrix_vector_applies, 2);
    }

    #[test]
    fn apply_dimension_mismatch() {
        let psi = StateVector::basis(3, 0).unwrap();
        let mut cost = CostCounter::default();
        assert!(UnitaryPropagator::identity(2).apply(&psi, &mut cost).is_err());
        assert_eq!(cost.matrix_vector_applies, 0);
    }

    #[test]
    fn defects() {
        assert_eq!(unitarity_defect(&CMatrix::identity(3, 3)), 0.0);
        assert_eq!(unitarity_defect(&(CMatrix::identity(3, 3) * c(2.0, 0.0))), 3.0);
        assert_eq!(hermiticity_defect(&CMatrix::identity(3, 3)), 0.0);
    }

    #[test]
    fn complex_hermitian_path() {
        let m = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(1.0, 0.0)]);
        let h = HermitianOperator::new(m).unwrap();
        assert!(!h.is_real());
        let f = spectral_factorize(&h).unwrap();
        assert!((f.eigenvalues()[0]).abs() < 1e-14);
        assert!((f.eigenvalues()[1] - 2.0).abs() < 1e-14);
        assert_close(&f.reconstruct(), h.matrix(), 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn expm_is_unitary(seed in 0u64..10_000, dim in 1usize..9, t in -20.0f64..20.0) {
                let f = Arc::new(spectral_factorize(&random_hermitian(dim, seed)).unwrap());
                let u = expm_unitary(&f, t).unwrap();
                prop_assert!(unitarity_defect(u.matrix()) <= 1e-12);
            }

            #[test]
            fn apply_preserves_norm(seed in 0u64..10_000, t in -5.0f64..5.0) {
                use rand::{Rng, SeedableRng};
                let f = Arc::new(spectral_factorize(&random_hermitian(6, seed)).unwrap());
                let u = expm_unitary(&f, t).unwrap();
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
                let v = CVector::from_fn(6, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
                let psi = StateVector::new(v).unwrap().normalized().unwrap();
                let mut cost = CostCounter::default();
                let out = u.apply(&psi, &mut cost).unwrap();
                prop_assert!((out.norm() - 1.0).abs() <= 1e-12);
            }

            #[test]
            fn chained_applies_conserve_norm(seed in 0u64..1_000, steps in 1usize..200) {
                let f = Arc::new(spectral_factorize(&random_hermitian(4, seed)).unwrap());
                let u = expm_unitary(&f, 0.3).unwrap();
                let mut psi = StateVector::basis(4, 1).unwrap();
                let mut cost = CostCounter::default();
                for _ in 0..steps {
                    psi = u.apply(&psi, &mut cost).unwrap();
                }
                prop_assert!((psi.norm() - 1.0).abs() <= 1e-12 * steps as f64);
            }
        }
    }
}
