//! The ancillary picture: time-dependent orthonormal frames `{|mu_k(t)>}`,
//! the integrands `G_kn = i<mu_k|d mu_n/dt>` and `D_kn = <mu_k|H|mu_n>`,
//! von Neumann residuals, accumulated phases and the closed-form propagator
//! `U(t) = sum_k exp(i f_k(t)) |mu_k(t)><mu_k(0)|`.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exec;
use crate::integrator::{jump_nodes, TimeGrid};
use crate::qcore::{Hamiltonian, Side, SquareOperator, StateVector, C64, I};

/// Default relative tolerance for path eligibility: residual <= tol * ||H||_F.
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-8;
/// Absolute floor added to the eligibility threshold so that instants with
/// `H = 0` are judged by rounding noise rather than by an exact zero.
pub const RESIDUAL_FLOOR: f64 = 1e-13;

/// Basis vectors and their time derivatives at one instant.
#[derive(Debug, Clone)]
pub struct FrameSample {
    pub basis: Vec<DVector<C64>>,
    pub rates: Vec<DVector<C64>>,
}

impl FrameSample {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Matrix whose columns are the basis vectors.
    pub fn basis_matrix(&self) -> DMatrix<C64> {
        DMatrix::from_columns(&self.basis)
    }

    pub fn rate_matrix(&self) -> DMatrix<C64> {
        DMatrix::from_columns(&self.rates)
    }

    pub fn states(&self) -> Vec<StateVector> {
        self.basis.iter().cloned().map(StateVector::from_vector).collect()
    }

    /// `||V^dagger V - 1||_F`.
    pub fn gram_defect(&self) -> f64 {
        let v = self.basis_matrix();
        let n = self.dim();
        (v.adjoint() * &v - DMatrix::<C64>::identity(n, n)).iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `G = i V^dagger dV/dt`.
    pub fn geometric_matrix(&self) -> DMatrix<C64> {
        self.basis_matrix().adjoint() * self.rate_matrix() * I
    }

    /// `D = V^dagger H V`.
    pub fn dynamical_matrix(&self, h: &SquareOperator) -> DMatrix<C64> {
        let v = self.basis_matrix();
        v.adjoint() * h.matrix() * v
    }
}

/// A time-dependent orthonormal basis with analytic derivatives.
pub trait AncillaryFrame: Sync {
    fn dim(&self) -> usize;

    /// Basis and derivatives at `t`; `side` selects the limit at phase jumps.
    fn sample(&self, t: f64, side: Side) -> Result<FrameSample>;

    /// Instants at which the basis jumps.
    fn jump_times(&self) -> Vec<f64> {
        Vec::new()
    }

    /// Geometric phase each path picks up across the jump at `t`, i.e. the
    /// closed-form integral of `G_kk` over the step instead of a delta.
    fn jump_increments(&self, _t: f64) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.dim()])
    }

    fn basis_at(&self, t: f64) -> Result<Vec<StateVector>> {
        Ok(self.sample(t, Side::Right)?.states())
    }
}

impl<F: AncillaryFrame + ?Sized> AncillaryFrame for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn sample(&self, t: f64, side: Side) -> Result<FrameSample> {
        (**self).sample(t, side)
    }
    fn jump_times(&self) -> Vec<f64> {
        (**self).jump_times()
    }
    fn jump_increments(&self, t: f64) -> Result<Vec<f64>> {
        (**self).jump_increments(t)
    }
}

/// A time-independent frame.
#[derive(Debug, Clone)]
pub struct StaticFrame {
    basis: Vec<DVector<C64>>,
}

impl StaticFrame {
    pub fn new(basis: Vec<StateVector>) -> Result<Self> {
        let dim = basis.first().map(|b| b.dim()).ok_or(Error::UnsupportedDimension(0))?;
        if basis.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: basis.len() });
        }
        let frame = StaticFrame { basis: basis.iter().map(|b| b.as_vector().clone()).collect() };
        let defect = frame.sample(0.0, Side::Right)?.gram_defect();
        if defect > 1e-10 {
            return Err(Error::ContractViolation(format!("basis is not orthonormal (defect {defect:.3e})")));
        }
        Ok(frame)
    }

    /// The computational basis.
    pub fn computational(dim: usize) -> Result<Self> {
        Self::new((0..dim).map(|k| StateVector::basis(dim, k)).collect::<Result<_>>()?)
    }
}

impl AncillaryFrame for StaticFrame {
    fn dim(&self) -> usize {
        self.basis.len()
    }
    fn sample(&self, _t: f64, _side: Side) -> Result<FrameSample> {
        let zero = DVector::zeros(self.dim());
        Ok(FrameSample { basis: self.basis.clone(), rates: vec![zero; self.dim()] })
    }
}

fn check_index(k: usize, dim: usize) -> Result<()> {
    if k < dim {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { index: k, dim })
    }
}

fn check_same_dim<F: AncillaryFrame + ?Sized, H: Hamiltonian + ?Sized>(f: &F, h: &H) -> Result<()> {
    if f.dim() == h.dim() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: f.dim(), found: h.dim() })
    }
}

/// `G_kn(t) = i <mu_k(t)| d mu_n(t)/dt>`.
pub fn geometric_integrand<F: AncillaryFrame + ?Sized>(f: &F, t: f64, k: usize, n: usize) -> Result<C64> {
    check_index(k, f.dim())?;
    check_index(n, f.dim())?;
    let s = f.sample(t, Side::Right)?;
    Ok(I * s.basis[k].dotc(&s.rates[n]))
}

/// `D_kn(t) = <mu_k(t)| H(t) |mu_n(t)>`.
pub fn dynamical_integrand<F, H>(f: &F, h: &H, t: f64, k: usize, n: usize) -> Result<C64>
where
    F: AncillaryFrame + ?Sized,
    H: Hamiltonian + ?Sized,
{
    check_same_dim(f, h)?;
    check_index(k, f.dim())?;
    check_index(n, f.dim())?;
    let s = f.sample(t, Side::Right)?;
    let hm = h.at(t, Side::Right)?;
    Ok(s.basis[k].dotc(&(hm.matrix() * &s.basis[n])))
}

/// Matrix with entries `-(G_kn - D_kn)`: the Hamiltonian seen from the
/// rotated frame, expressed in the frozen basis `{|mu_k(0)>}`.
pub fn rotated_hamiltonian<F, H>(f: &F, h: &H, t: f64) -> Result<SquareOperator>
where
    F: AncillaryFrame + ?Sized,
    H: Hamiltonian + ?Sized,
{
    check_same_dim(f, h)?;
    let s = f.sample(t, Side::Right)?;
    let hm = h.at(t, Side::Right)?;
    Ok(SquareOperator::from_matrix_unchecked(s.dynamical_matrix(&hm) - s.geometric_matrix()))
}

fn residual_from(s: &FrameSample, h: &SquareOperator, k: usize) -> f64 {
    let mu = &s.basis[k];
    let mu_dot = &s.rates[k];
    let p = mu * mu.adjoint();
    let p_dot = mu_dot * mu.adjoint() + mu * mu_dot.adjoint();
    let comm = h.matrix() * &p - &p * h.matrix();
    (p_dot + comm * I).iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

/// `|| dPi_k/dt + i [H, Pi_k] ||_F` with `Pi_k = |mu_k><mu_k|`.
pub fn von_neumann_residual<F, H>(f: &F, h: &H, t: f64, k: usize) -> Result<f64>
where
    F: AncillaryFrame + ?Sized,
    H: Hamiltonian + ?Sized,
{
    check_same_dim(f, h)?;
    check_index(k, f.dim())?;
    let s = f.sample(t, Side::Right)?;
    Ok(residual_from(&s, &h.at(t, Side::Right)?, k))
}

/// Residual of every path at one instant, with `||H(t)||_F` for scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSample {
    pub t: f64,
    pub residuals: Vec<f64>,
    pub h_norm: f64,
}

impl ResidualSample {
    pub fn threshold(&self, tol: f64) -> f64 {
        tol * self.h_norm + RESIDUAL_FLOOR
    }

    pub fn passes(&self, k: usize, tol: f64) -> bool {
        self.residuals[k] <= self.threshold(tol)
    }
}

pub fn residual_profile<F, H>(f: &F, h: &H, times: &[f64]) -> Result<Vec<ResidualSample>>
where
    F: AncillaryFrame + ?Sized,
    H: Hamiltonian + ?Sized,
{
    residual_profile_with(exec::ExecMode::default(), f, h, times)
}

pub fn residual_profile_with<F, H>(mode: exec::ExecMode, f: &F, h: &H, times: &[f64]) -> Result<Vec<ResidualSample>>
where
    F: AncillaryFrame + ?Sized,
    H: Hamiltonian + ?Sized,
{
    check_same_dim(f, h)?;
    exec::map_with(mode, times, |&t| -> Result<ResidualSample> {
        let s = f.sample(t, Side::Right)?;
        let hm = h.at(t, Side::Right)?;
        let residuals = (0..s.dim()).map(|k| residual_from(&s, &hm, k)).collect();
        Ok(ResidualSample { t, residuals, h_norm: hm.frobenius_norm() })
    })
    .into_iter()
    .collect()
}

/// Every path whose residual stays below `tol * ||H(t)||_F` on all of `times`.
pub fn diagonal_rank<F, H>(f: &F, h: &H, times: &[f64], tol: f64) -> Result<Vec<usize>>
where
    F: AncillaryFrame + ?Sized,
    H: Hamiltonian + ?Sized,
{
    if times.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let profile = residual_profile(f, h, times)?;
    Ok(eligible_paths(&profile, f.dim(), tol))
}

pub(crate) fn eligible_paths(profile: &[ResidualSample], dim: usize, tol: f64) -> Vec<usize> {
    (0..dim).filter(|&k| profile.iter().all(|s| s.passes(k, tol))).collect()
}

/// `sqrt(2)` times the Frobenius norm of the off-diagonal part of row and
/// column `k` of the rotated Hamiltonian. For a consistent frame this equals
/// the von Neumann residual of path `k`.
pub fn rotated_offdiagonal_norm(h_rot: &SquareOperator, k: usize) -> f64 {
    let m = h_rot.matrix();
    (0..h_rot.dim())
        .filter(|&n| n != k)
        .map(|n| 0.5 * (m[(n, k)].norm_sqr() + m[(k, n)].norm_sqr()))
        .sum::<f64>()
        .sqrt()
        * SQRT_2
}

/// Geometric / dynamical phase split of `f_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSplit {
    /// `int G_kk` plus closed-form jump increments.
    pub geometric: f64,
    /// `-int D_kk`.
    pub dynamical: f64,
}

impl PhaseSplit {
    pub fn total(&self) -> f64 {
        self.geometric + self.dynamical
    }
}

/// Accumulated phases of every path at every node of a grid. At jump nodes
/// the stored value is the right limit (jump increment included).
#[derive(Debug, Clone)]
pub struct PhaseTable {
    pub grid: TimeGrid,
    /// `geometric[k][i]`.
    pub geometric: Vec<Vec<f64>>,
    /// `dynamical[k][i]`.
    pub dynamical: Vec<Vec<f64>>,
}

impl PhaseTable {
    pub fn at(&self, k: usize, i: usize) -> PhaseSplit {
        PhaseSplit { geometric: self.geometric[k][i], dynamical: self.dynamical[k][i] }
    }

    pub fn total(&self, k: usize, i: usize) -> f64 {
        self.geometric[k][i] + self.dynamical[k][i]
    }

    pub fn last(&self, k: usize) -> PhaseSplit {
        self.at(k, self.grid.steps)
    }
}

/// Cumulative composite Simpson rule on a uniform grid. Odd nodes close the
/// last interval with the three-point formula `h/12 (-f0 + 8 f1 + 5 f2)`.
pub fn cumulative_simpson(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[1] = 0.5 * h * (values[0] + values[1]);
        return out;
    }
    out[1] = h / 12.0 * (5.0 * values[0] + 8.0 * values[1] - values[2]);
    for m in 2..n {
        out[m] = if m % 2 == 0 {
            out[m - 2] + h / 3.0 * (values[m - 2] + 4.0 * values[m - 1] + values[m])
        } else {
            out[m - 1] + h / 12.0 * (-values[m - 2] + 8.0 * values[m - 1] + 5.0 * values[m])
        };
    }
    out
}

/// Integrates `G_kk` and `-D_kk` over `grid`, segment by segment between
/// jump nodes, adding each frame jump's closed-form increment.
pub fn phase_table<F, H>(f: &F, h: &H, grid: &TimeGrid) -> Result<PhaseTable>
where
    F: AncillaryFrame + ?Sized,
    H: Hamiltonian + ?Sized,
{
    check_same_dim(f, h)?;
    let dim = f.dim();
    let mut breaks = jump_nodes(grid, &f.jump_times())?;
    breaks.extend(jump_nodes(grid, &h.jump_times())?);
    breaks.sort_unstable();
    breaks.dedup();

    let diag = |t: f64, side: Side| -> Result<(Vec<f64>, Vec<f64>)> {
        let s = f.sample(t, side)?;
        let hm = h.at(t, side)?;
        let g = s.geometric_matrix();
        let d = s.dynamical_matrix(&hm);
        Ok(((0..dim).map(|k| g[(k, k)].re).collect(), (0..dim).map(|k| -d[(k, k)].re).collect()))
    };
    let right: Vec<(Vec<f64>, Vec<f64>)> =
        exec::map_range(grid.len(), |i| diag(grid.node(i), Side::Right)).into_iter().collect::<Result<_>>()?;

    let mut geometric = vec![vec![0.0; grid.len()]; dim];
    let mut dynamical = vec![vec![0.0; grid.len()]; dim];
    let mut bounds = vec![0];
    bounds.extend(breaks.iter().copied().filter(|&b| b > 0 && b < grid.steps));
    bounds.push(grid.steps);
    let mut base_g = vec![0.0; dim];
    let mut base_d = vec![0.0; dim];
    if breaks.first() == Some(&0) {
        for (k, inc) in f.jump_increments(grid.start)?.into_iter().enumerate() {
            base_g[k] += inc;
        }
    }
    for w in bounds.windows(2) {
        let (a, b) = (w[0], w[1]);
        let end_is_jump = breaks.binary_search(&b).is_ok();
        let left_end = if end_is_jump { Some(diag(grid.node(b), Side::Left)?) } else { None };
        for k in 0..dim {
            let pick = |i: usize, geo: bool| -> f64 {
                let sample = match (&left_end, i == b) {
                    (Some(l), true) => l,
                    _ => &right[i],
                };
                if geo {
                    sample.0[k]
                } else {
                    sample.1[k]
                }
            };
            let gv: Vec<f64> = (a..=b).map(|i| pick(i, true)).collect();
            let dv: Vec<f64> = (a..=b).map(|i| pick(i, false)).collect();
            let gc = cumulative_simpson(&gv, grid.dt());
            let dc = cumulative_simpson(&dv, grid.dt());
            for (j, i) in (a..=b).enumerate() {
                geometric[k][i] = base_g[k] + gc[j];
                dynamical[k][i] = base_d[k] + dc[j];
            }
            base_g[k] = geometric[k][b];
            base_d[k] = dynamical[k][b];
        }
        if end_is_jump {
            for (k, inc) in f.jump_increments(grid.node(b))?.into_iter().enumerate() {
                base_g[k] += inc;
                geometric[k][b] = base_g[k];
            }
        }
    }
    Ok(PhaseTable { grid: *grid, geometric, dynamical })
}

fn require_eligible(eligible: &[usize], k: usize) -> Result<()> {
    if eligible.contains(&k) {
        Ok(())
    } else {
        Err(Error::IneligiblePath { path: k })
    }
}

/// `f_k(t)` split into geometric and dynamical parts; `k` must be eligible on `grid`.
pub fn accumulated_phase<F, H>(f: &F, h: &H, k: usize, t: f64, grid: &TimeGrid, tol: f64) -> Result<PhaseSplit>
where
    F: AncillaryFrame + ?Sized,
    H: Hamiltonian + ?Sized,
{
    check_index(k, f.dim())?;
    let i = grid.require_node(t)?;
    require_eligible(&diagonal_rank(f, h, &grid.nodes(), tol)?, k)?;
    Ok(phase_table(f, h, grid)?.at(k, i))
}

/// Gauge-invariant cyclic geometric phase of path `k` over the whole grid:
/// `int G_kk + arg <mu_k(start)|mu_k(end)>`, reduced to `[0, 2 pi)`.
pub fn cyclic_geometric_phase<F: AncillaryFrame + ?Sized>(f: &F, table: &PhaseTable, k: usize) -> Result<f64> {
    check_index(k, f.dim())?;
    let s0 = f.sample(table.grid.start, Side::Right)?;
    let s1 = f.sample(table.grid.end, Side::Right)?;
    let overlap = s0.basis[k].dotc(&s1.basis[k]);
    Ok((table.last(k).geometric + overlap.arg()).rem_euclid(2.0 * PI))
}

/// Closed-form propagator built from the eligible paths.
pub struct ClosedForm<'a, F: ?Sized> {
    frame: &'a F,
    table: PhaseTable,
    paths: Vec<usize>,
    initial: Vec<DVector<C64>>,
}

impl<'a, F: AncillaryFrame + ?Sized> ClosedForm<'a, F> {
    /// Requires full rank on the grid.
    pub fn full<H: Hamiltonian + ?Sized>(frame: &'a F, h: &H, grid: &TimeGrid, tol: f64) -> Result<Self> {
        let eligible = diagonal_rank(frame, h, &grid.nodes(), tol)?;
        if eligible.len() != frame.dim() {
            return Err(Error::DeficientRank { eligible, dim: frame.dim() });
        }
        Self::with_paths(frame, h, grid, eligible)
    }

    /// Sum restricted to the paths that are eligible on the grid.
    pub fn reduced<H: Hamiltonian + ?Sized>(frame: &'a F, h: &H, grid: &TimeGrid, tol: f64) -> Result<Self> {
        let eligible = diagonal_rank(frame, h, &grid.nodes(), tol)?;
        Self::with_paths(frame, h, grid, eligible)
    }

    fn with_paths<H: Hamiltonian + ?Sized>(frame: &'a F, h: &H, grid: &TimeGrid, paths: Vec<usize>) -> Result<Self> {
        let table = phase_table(frame, h, grid)?;
        let initial = frame.sample(grid.start, Side::Right)?.basis;
        Ok(ClosedForm { frame, table, paths, initial })
    }

    pub fn paths(&self) -> &[usize] {
        &self.paths
    }

    pub fn phases(&self) -> &PhaseTable {
        &self.table
    }

    /// `sum_k exp(i f_k) |mu_k(t_i)><mu_k(0)|` at grid node `i`.
    pub fn operator_at(&self, i: usize) -> Result<SquareOperator> {
        let t = self.table.grid.node(i);
        let s = self.frame.sample(t, Side::Right)?;
        let n = s.dim();
        let mut u = DMatrix::<C64>::zeros(n, n);
        for &k in &self.paths {
            let phase = C64::from_polar(1.0, self.table.total(k, i));
            u += &s.basis[k] * self.initial[k].adjoint() * phase;
        }
        Ok(SquareOperator::from_matrix_unchecked(u))
    }

    pub fn operator_at_time(&self, t: f64) -> Result<SquareOperator> {
        self.operator_at(self.table.grid.require_node(t)?)
    }
}

/// Full-rank closed-form `U(t)`; errors with the eligible set when rank is deficient.
pub fn evolution_operator<F, H>(f: &F, h: &H, t: f64, grid: &TimeGrid, tol: f64) -> Result<SquareOperator>
where
    F: AncillaryFrame + ?Sized,
    H: Hamiltonian + ?Sized,
{
    ClosedForm::full(f, h, grid, tol)?.operator_at_time(t)
}

/// Closed-form `U(t)` restricted to the eligible paths.
pub fn reduced_evolution_operator<F, H>(f: &F, h: &H, t: f64, grid: &TimeGrid, tol: f64) -> Result<SquareOperator>
where
    F: AncillaryFrame + ?Sized,
    H: Hamiltonian + ?Sized,
{
    ClosedForm::reduced(f, h, grid, tol)?.operator_at_time(t)
}
