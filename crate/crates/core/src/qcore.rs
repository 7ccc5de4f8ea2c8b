//! Small dense complex linear algebra (dimensions 2 to 4) and the quantum
//! state primitives everything else is built on.
//!
//! Basis ordering is global: three-level systems use `(|0>, |1>, |e>)` and
//! four-level systems use `(|0>, |1>, |e>, |2>)`.

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const MIN_DIM: usize = 2;
pub const MAX_DIM: usize = 4;

/// Tolerance on `|<psi|psi> - 1|` for a state to count as normalized.
pub const NORMALIZATION_TOL: f64 = 1e-12;
/// Relative Hermiticity defect accepted for Hamiltonians.
pub const HERMITICITY_TOL: f64 = 1e-12;

pub(crate) const I: C64 = C64::new(0.0, 1.0);

pub(crate) fn cis(phase: f64) -> C64 {
    C64::from_polar(1.0, phase)
}

fn check_dim(dim: usize) -> Result<()> {
    if (MIN_DIM..=MAX_DIM).contains(&dim) {
        Ok(())
    } else {
        Err(Error::UnsupportedDimension(dim))
    }
}

/// Which one-sided limit to take at a phase-jump instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Side {
    Left,
    #[default]
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(DVector<C64>);

impl StateVector {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        check_dim(amplitudes.len())?;
        Ok(StateVector(DVector::from_vec(amplitudes)))
    }

    pub fn from_real(amplitudes: &[f64]) -> Result<Self> {
        Self::new(amplitudes.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    /// Computational basis state `|index>`.
    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        check_dim(dim)?;
        if index >= dim {
            return Err(Error::IndexOutOfRange { index, dim });
        }
        let mut v = DVector::zeros(dim);
        v[index] = C64::new(1.0, 0.0);
        Ok(StateVector(v))
    }

    pub(crate) fn from_vector(v: DVector<C64>) -> Self {
        StateVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        self.0.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<C64> {
        &self.0
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalization_defect(&self) -> f64 {
        (self.norm_sqr() - 1.0).abs()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalization_defect() <= NORMALIZATION_TOL
    }

    pub fn require_normalized(&self) -> Result<()> {
        let defect = self.normalization_defect();
        if defect <= NORMALIZATION_TOL {
            Ok(())
        } else {
            Err(Error::NotNormalized { defect })
        }
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        same_dim(self.dim(), other.dim())?;
        Ok(self.0.dotc(&other.0))
    }

    /// Population `|<i|psi>|^2` of basis level `i`.
    pub fn population(&self, i: usize) -> f64 {
        self.0[i].norm_sqr()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.0.iter().map(|a| a.norm_sqr()).collect()
    }
}

fn same_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Square complex matrix. Units follow context: angular frequency for
/// Hamiltonians, dimensionless for unitaries and projectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareOperator(DMatrix<C64>);

impl SquareOperator {
    pub fn from_matrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        check_dim(m.nrows())?;
        Ok(SquareOperator(m))
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize, usize) -> C64) -> Result<Self> {
        check_dim(dim)?;
        Ok(SquareOperator(DMatrix::from_fn(dim, dim, f)))
    }

    /// Row-major construction.
    pub fn from_rows(rows: &[&[C64]]) -> Result<Self> {
        let dim = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: bad.len() });
        }
        Self::from_fn(dim, |i, j| rows[i][j])
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(SquareOperator(DMatrix::zeros(dim, dim)))
    }

    pub fn identity(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(SquareOperator(DMatrix::identity(dim, dim)))
    }

    pub(crate) fn from_matrix_unchecked(m: DMatrix<C64>) -> Self {
        SquareOperator(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        self.0[(i, j)]
    }

    pub fn dagger(&self) -> SquareOperator {
        SquareOperator(self.0.adjoint())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    /// `||A - A^dagger||_F`.
    pub fn hermiticity_defect(&self) -> f64 {
        (&self.0 - self.0.adjoint()).iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `||A^dagger A - 1||_F`.
    pub fn unitarity_defect(&self) -> f64 {
        let n = self.dim();
        (self.0.adjoint() * &self.0 - DMatrix::<C64>::identity(n, n)).iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn require_hermitian(&self) -> Result<()> {
        let defect = self.hermiticity_defect();
        if defect <= HERMITICITY_TOL * self.frobenius_norm().max(1.0) {
            Ok(())
        } else {
            Err(Error::NotHermitian { defect })
        }
    }

    pub fn apply(&self, psi: &StateVector) -> Result<StateVector> {
        same_dim(self.dim(), psi.dim())?;
        Ok(StateVector(&self.0 * &psi.0))
    }

    pub fn scale(&self, s: C64) -> SquareOperator {
        SquareOperator(&self.0 * s)
    }

    /// Frobenius distance `||A - B||_F`.
    pub fn distance(&self, other: &SquareOperator) -> f64 {
        (&self.0 - &other.0).iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `min_phi ||A - e^{i phi} B||_F`.
    pub fn distance_mod_phase(&self, other: &SquareOperator) -> f64 {
        let overlap: C64 = other.0.iter().zip(self.0.iter()).map(|(b, a)| b.conj() * a).sum();
        let phase = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { C64::new(1.0, 0.0) };
        (&self.0 - &other.0 * phase).iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Upper-left `n x n` block, e.g. the computational subspace `{|0>, |1>}`.
    pub fn leading_block(&self, n: usize) -> Result<SquareOperator> {
        if n > self.dim() {
            return Err(Error::IndexOutOfRange { index: n, dim: self.dim() });
        }
        SquareOperator::from_matrix(self.0.view((0, 0), (n, n)).into_owned())
    }
}

impl Add for &SquareOperator {
    type Output = SquareOperator;
    fn add(self, rhs: &SquareOperator) -> SquareOperator {
        SquareOperator(&self.0 + &rhs.0)
    }
}

impl Sub for &SquareOperator {
    type Output = SquareOperator;
    fn sub(self, rhs: &SquareOperator) -> SquareOperator {
        SquareOperator(&self.0 - &rhs.0)
    }
}

impl Mul for &SquareOperator {
    type Output = SquareOperator;
    fn mul(self, rhs: &SquareOperator) -> SquareOperator {
        SquareOperator(&self.0 * &rhs.0)
    }
}

pub fn commutator(a: &SquareOperator, b: &SquareOperator) -> Result<SquareOperator> {
    same_dim(a.dim(), b.dim())?;
    Ok(SquareOperator(&a.0 * &b.0 - &b.0 * &a.0))
}

/// `|psi><psi|`.
pub fn projector(psi: &StateVector) -> Result<SquareOperator> {
    psi.require_normalized()?;
    Ok(SquareOperator(&psi.0 * psi.0.adjoint()))
}

/// `<psi|op|psi>`.
pub fn expectation(op: &SquareOperator, psi: &StateVector) -> Result<C64> {
    same_dim(op.dim(), psi.dim())?;
    Ok(psi.0.dotc(&(&op.0 * &psi.0)))
}

/// `|<a|b>|^2`, clamped into `[0, 1]`.
pub fn fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    a.require_normalized()?;
    b.require_normalized()?;
    Ok(a.inner(b)?.norm_sqr().clamp(0.0, 1.0))
}

/// `exp(-i h dt)` for Hermitian `h`, through its eigendecomposition.
pub fn matrix_exponential_skew(h: &SquareOperator, dt: f64) -> Result<SquareOperator> {
    h.require_hermitian()?;
    Ok(exp_hermitian_unchecked(h, dt))
}

pub(crate) fn exp_hermitian_unchecked(h: &SquareOperator, dt: f64) -> SquareOperator {
    // symmetrize first so tiny anti-Hermitian noise cannot leak into the eigensolver
    let sym = (&h.0 + h.0.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(sym);
    let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| cis(-e * dt)));
    let v = &eig.eigenvectors;
    SquareOperator(v * phases * v.adjoint())
}

pub fn pauli_x() -> SquareOperator {
    let (o, l) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0));
    SquareOperator(DMatrix::from_row_slice(2, 2, &[o, l, l, o]))
}

pub fn pauli_y() -> SquareOperator {
    let o = C64::new(0.0, 0.0);
    SquareOperator(DMatrix::from_row_slice(2, 2, &[o, -I, I, o]))
}

pub fn pauli_z() -> SquareOperator {
    let (o, l) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0));
    SquareOperator(DMatrix::from_row_slice(2, 2, &[l, o, o, -l]))
}

/// A Hermitian operator-valued function of time.
///
/// `at(t, Side::Left)` and `at(t, Side::Right)` only differ at the instants
/// listed by `jump_times`; integrators use the left limit at the end of a
/// step and the right limit at its start.
pub trait Hamiltonian: Sync {
    fn dim(&self) -> usize;

    fn at(&self, t: f64, side: Side) -> Result<SquareOperator>;

    fn jump_times(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl<H: Hamiltonian + ?Sized> Hamiltonian for &H {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn at(&self, t: f64, side: Side) -> Result<SquareOperator> {
        (**self).at(t, side)
    }
    fn jump_times(&self) -> Vec<f64> {
        (**self).jump_times()
    }
}

/// Adapter turning a closure into a continuous [`Hamiltonian`].
pub struct FnHamiltonian<F> {
    dim: usize,
    f: F,
}

impl<F> FnHamiltonian<F>
where
    F: Fn(f64) -> SquareOperator + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnHamiltonian { dim, f }
    }
}

impl<F> Hamiltonian for FnHamiltonian<F>
where
    F: Fn(f64) -> SquareOperator + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn at(&self, t: f64, _side: Side) -> Result<SquareOperator> {
        Ok((self.f)(t))
    }
}

/// Time-independent Hamiltonian.
#[derive(Debug, Clone)]
pub struct ConstantHamiltonian(pub SquareOperator);

impl Hamiltonian for ConstantHamiltonian {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn at(&self, _t: f64, _side: Side) -> Result<SquareOperator> {
        Ok(self.0.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_hermitian(dim: usize, vals: &[f64]) -> SquareOperator {
        let mut k = 0;
        let mut m = DMatrix::<C64>::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = c(vals[k], 0.0);
            k += 1;
            for j in (i + 1)..dim {
                m[(i, j)] = c(vals[k], vals[k + 1]);
                m[(j, i)] = m[(i, j)].conj();
                k += 2;
            }
        }
        SquareOperator::from_matrix(m).unwrap()
    }

    #[test]
    fn commutator_of_paulis() {
        let xy = commutator(&pauli_x(), &pauli_y()).unwrap();
        let expected = pauli_z().scale(c(0.0, 2.0));
        assert!(xy.distance(&expected) < 1e-15);
        let xx = commutator(&pauli_x(), &pauli_x()).unwrap();
        assert_eq!(xx.frobenius_norm(), 0.0);
    }

    #[test]
    fn commutator_rejects_dimension_mismatch() {
        let a = SquareOperator::identity(3).unwrap();
        assert!(matches!(commutator(&a, &pauli_x()), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn projector_of_basis_and_superposition() {
        let p = projector(&StateVector::basis(3, 0).unwrap()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == 0 && j == 0 { 1.0 } else { 0.0 };
                assert_eq!(p.entry(i, j), c(want, 0.0));
            }
        }
        let plus = StateVector::from_real(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0]).unwrap();
        let p = projector(&plus).unwrap();
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert!((p.entry(i, j) - c(0.5, 0.0)).norm() < 1e-15);
        }
        assert!((p.trace() - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn projector_rejects_unnormalized() {
        let v = StateVector::from_real(&[1.0, 1.0]).unwrap();
        assert!(matches!(projector(&v), Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn expectation_examples() {
        let p0 = projector(&StateVector::basis(3, 0).unwrap()).unwrap();
        let e = expectation(&p0, &StateVector::basis(3, 0).unwrap()).unwrap();
        assert_eq!(e, c(1.0, 0.0));
        let plus = StateVector::from_real(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2]).unwrap();
        assert!(expectation(&pauli_z(), &plus).unwrap().norm() < 1e-15);
    }

    #[test]
    fn fidelity_examples() {
        let z0 = StateVector::basis(2, 0).unwrap();
        let z1 = StateVector::basis(2, 1).unwrap();
        assert_eq!(fidelity(&z0, &z0).unwrap(), 1.0);
        assert_eq!(fidelity(&z0, &z1).unwrap(), 0.0);
    }

    #[test]
    fn exponential_examples() {
        let zero = SquareOperator::zeros(3).unwrap();
        let u = matrix_exponential_skew(&zero, 0.7).unwrap();
        assert!(u.distance(&SquareOperator::identity(3).unwrap()) < 1e-15);

        let u = matrix_exponential_skew(&pauli_x(), FRAC_PI_2).unwrap();
        assert!(u.distance(&pauli_x().scale(c(0.0, -1.0))) < 1e-14);
    }

    #[test]
    fn exponential_rejects_non_hermitian() {
        let m = SquareOperator::from_rows(&[&[c(0.0, 0.0), c(1.0, 0.0)], &[c(0.0, 0.0), c(0.0, 0.0)]]).unwrap();
        assert!(matches!(matrix_exponential_skew(&m, 1.0), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn dimensions_are_restricted() {
        assert!(matches!(StateVector::basis(5, 0), Err(Error::UnsupportedDimension(5))));
        assert!(matches!(StateVector::basis(3, 3), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn distance_mod_phase_ignores_global_phase() {
        let a = pauli_x();
        let b = pauli_x().scale(cis(1.234));
        assert!(a.distance_mod_phase(&b) < 1e-14);
        assert!(a.distance(&b) > 0.1);
    }

    proptest! {
        #[test]
        fn exponential_is_unitary(dim in 2usize..=4, vals in proptest::collection::vec(-5.0f64..5.0, 16), dt in -3.0f64..3.0) {
            let h = random_hermitian(dim, &vals);
            let u = matrix_exponential_skew(&h, dt).unwrap();
            prop_assert!(u.unitarity_defect() <= 1e-12);
        }

        #[test]
        fn commutator_is_antisymmetric(dim in 2usize..=4, a in proptest::collection::vec(-5.0f64..5.0, 16), b in proptest::collection::vec(-5.0f64..5.0, 16)) {
            let (a, b) = (random_hermitian(dim, &a), random_hermitian(dim, &b));
            let ab = commutator(&a, &b).unwrap();
            let ba = commutator(&b, &a).unwrap();
            prop_assert!((&ab + &ba).frobenius_norm() <= 1e-12);
        }

        #[test]
        fn projector_is_idempotent(re in proptest::collection::vec(-1.0f64..1.0, 4), im in proptest::collection::vec(-1.0f64..1.0, 4), dim in 2usize..=4) {
            let raw: Vec<C64> = (0..dim).map(|i| c(re[i], im[i])).collect();
            let n = raw.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            prop_assume!(n > 1e-3);
            let psi = StateVector::new(raw.into_iter().map(|a| a / n).collect()).unwrap();
            let p = projector(&psi).unwrap();
            prop_assert!((&(&p * &p) - &p).frobenius_norm() <= 1e-12);
            prop_assert!(p.hermiticity_defect() <= 1e-15);
        }

        #[test]
        fn hermitian_expectation_is_real(dim in 2usize..=4, vals in proptest::collection::vec(-5.0f64..5.0, 16), re in proptest::collection::vec(-1.0f64..1.0, 4), im in proptest::collection::vec(-1.0f64..1.0, 4)) {
            let h = random_hermitian(dim, &vals);
            let raw: Vec<C64> = (0..dim).map(|i| c(re[i], im[i])).collect();
            let n = raw.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            prop_assume!(n > 1e-3);
            let psi = StateVector::new(raw.into_iter().map(|a| a / n).collect()).unwrap();
            prop_assert!(expectation(&h, &psi).unwrap().im.abs() <= 1e-12);
        }
    }
}
