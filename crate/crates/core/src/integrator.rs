//! Fixed-step propagation of `i d/dt psi = H(t) psi`.
//!
//! The production path is classic RK4 on a uniform grid. States are never
//! renormalized; the drift is reported instead. `oracle_propagate` is an
//! independent midpoint exponential product used to cross-check RK4.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::qcore::{exp_hermitian_unchecked, Hamiltonian, Side, SquareOperator, StateVector, C64};

pub const MIN_STEPS: usize = 100;
pub const MIN_ORACLE_SLICES: usize = 10_000;

/// Uniform grid `start + (end - start) * i / steps`, `i = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(start: f64, end: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::EmptyGrid);
        }
        if !(start.is_finite() && end.is_finite()) || end <= start {
            return Err(Error::ContractViolation(format!("invalid grid span [{start}, {end}]")));
        }
        Ok(TimeGrid { start, end, steps })
    }

    pub fn dt(&self) -> f64 {
        (self.end - self.start) / self.steps as f64
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.steps {
            self.end
        } else {
            self.start + (self.end - self.start) * (i as f64 / self.steps as f64)
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.node(i)).collect()
    }

    /// Index of the node at `t`, if `t` is one (to within `1e-9` of a step).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = (t - self.start) / self.dt();
        let i = x.round();
        if i < 0.0 || i > self.steps as f64 || (x - i).abs() > 1e-9 {
            None
        } else {
            Some(i as usize)
        }
    }

    pub fn require_node(&self, t: f64) -> Result<usize> {
        self.index_of(t).ok_or(Error::TimeOffGrid { t })
    }

    /// Indices of the jump nodes of `h` inside the grid.
    pub fn jump_nodes<H: Hamiltonian + ?Sized>(&self, h: &H) -> Result<Vec<usize>> {
        jump_nodes(self, &h.jump_times())
    }
}

pub(crate) fn jump_nodes(grid: &TimeGrid, times: &[f64]) -> Result<Vec<usize>> {
    let slack = 1e-9 * grid.dt();
    let mut nodes = Vec::new();
    for &t in times {
        if t < grid.start - slack || t > grid.end + slack {
            continue;
        }
        nodes.push(grid.index_of(t).ok_or(Error::JumpOffGrid { t })?);
    }
    nodes.sort_unstable();
    nodes.dedup();
    Ok(nodes)
}

#[derive(Debug, Clone)]
pub struct PropagationResult {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    /// `max_t | <psi|psi> - 1 |`.
    pub norm_drift: f64,
}

impl PropagationResult {
    pub fn final_state(&self) -> &StateVector {
        self.states.last().expect("a propagation has at least one node")
    }
}

#[derive(Debug, Clone)]
pub struct UnitaryPropagation {
    pub times: Vec<f64>,
    pub unitaries: Vec<SquareOperator>,
    /// `max_t ||U^dagger U - 1||_F`.
    pub unitarity_drift: f64,
}

impl UnitaryPropagation {
    pub fn final_unitary(&self) -> &SquareOperator {
        self.unitaries.last().expect("a propagation has at least one node")
    }
}

fn check_steps(grid: &TimeGrid) -> Result<()> {
    if grid.steps < MIN_STEPS {
        return Err(Error::ContractViolation(format!("steps = {} < {MIN_STEPS}", grid.steps)));
    }
    Ok(())
}

fn check_dim<H: Hamiltonian + ?Sized>(h: &H, dim: usize) -> Result<()> {
    if h.dim() != dim {
        return Err(Error::DimensionMismatch { expected: h.dim(), found: dim });
    }
    Ok(())
}

/// One RK4 step for `dY/dt = -i H(t) Y` where `Y` is a column or a matrix.
fn rk4_step<H: Hamiltonian + ?Sized>(h: &H, t0: f64, dt: f64, y: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let minus_i = C64::new(0.0, -1.0);
    let half = 0.5 * dt;
    let h1 = h.at(t0, Side::Right)?;
    let hm = h.at(t0 + half, Side::Right)?;
    let h4 = h.at(t0 + dt, Side::Left)?;
    let k1 = h1.matrix() * y * minus_i;
    let k2 = hm.matrix() * (y + &k1 * C64::from(half)) * minus_i;
    let k3 = hm.matrix() * (y + &k2 * C64::from(half)) * minus_i;
    let k4 = h4.matrix() * (y + &k3 * C64::from(dt)) * minus_i;
    Ok(y + (k1 + (k2 + k3) * C64::from(2.0) + k4) * C64::from(dt / 6.0))
}

/// RK4 for a state; the trajectory is stored at every grid node.
pub fn propagate_state<H: Hamiltonian + ?Sized>(
    h: &H,
    psi0: &StateVector,
    grid: &TimeGrid,
) -> Result<PropagationResult> {
    psi0.require_normalized()?;
    propagate_carried(h, psi0, grid)
}

/// Same, without the normalization precondition; used when a stage continues from
/// the previous stage's final state, which carries its own RK4 drift.
pub(crate) fn propagate_carried<H: Hamiltonian + ?Sized>(
    h: &H,
    psi0: &StateVector,
    grid: &TimeGrid,
) -> Result<PropagationResult> {
    check_steps(grid)?;
    check_dim(h, psi0.dim())?;
    grid.jump_nodes(h)?;

    let dt = grid.dt();
    let mut y = DMatrix::from_column_slice(psi0.dim(), 1, psi0.amplitudes());
    let mut times = Vec::with_capacity(grid.len());
    let mut states = Vec::with_capacity(grid.len());
    let mut drift: f64 = psi0.normalization_defect();
    times.push(grid.start);
    states.push(psi0.clone());
    for i in 0..grid.steps {
        y = rk4_step(h, grid.node(i), dt, &y)?;
        let psi = StateVector::from_vector(DVector::from_column_slice(y.as_slice()));
        drift = drift.max(psi.normalization_defect());
        times.push(grid.node(i + 1));
        states.push(psi);
    }
    Ok(PropagationResult { times, states, norm_drift: drift })
}

/// RK4 for the propagator `U(t, start)` starting from the identity.
pub fn propagate_unitary<H: Hamiltonian + ?Sized>(h: &H, grid: &TimeGrid) -> Result<UnitaryPropagation> {
    check_steps(grid)?;
    grid.jump_nodes(h)?;
    let n = h.dim();
    let dt = grid.dt();
    let mut y = DMatrix::<C64>::identity(n, n);
    let mut times = Vec::with_capacity(grid.len());
    let mut unitaries = Vec::with_capacity(grid.len());
    times.push(grid.start);
    unitaries.push(SquareOperator::from_matrix_unchecked(y.clone()));
    let mut drift: f64 = 0.0;
    for i in 0..grid.steps {
        y = rk4_step(h, grid.node(i), dt, &y)?;
        let u = SquareOperator::from_matrix_unchecked(y.clone());
        drift = drift.max(u.unitarity_defect());
        times.push(grid.node(i + 1));
        unitaries.push(u);
    }
    Ok(UnitaryPropagation { times, unitaries, unitarity_drift: drift })
}

/// Time-ordered product of `exp(-i H(t_mid) dt)` over `slices` uniform slices.
pub fn oracle_propagate<H: Hamiltonian + ?Sized>(h: &H, start: f64, end: f64, slices: usize) -> Result<SquareOperator> {
    let grid = TimeGrid::new(start, end, slices)?;
    Ok(oracle_trace(h, &grid, slices)?.pop().expect("trace is never empty").1)
}

/// Oracle propagator recorded every `record_every` slices (and at the end).
pub fn oracle_trace<H: Hamiltonian + ?Sized>(
    h: &H,
    grid: &TimeGrid,
    record_every: usize,
) -> Result<Vec<(f64, SquareOperator)>> {
    if grid.steps < MIN_ORACLE_SLICES {
        return Err(Error::ContractViolation(format!(
            "oracle needs at least {MIN_ORACLE_SLICES} slices, got {}",
            grid.steps
        )));
    }
    let record_every = record_every.max(1);
    let n = h.dim();
    let dt = grid.dt();
    let mut u = DMatrix::<C64>::identity(n, n);
    let mut out = vec![(grid.start, SquareOperator::from_matrix_unchecked(u.clone()))];
    for i in 0..grid.steps {
        let mid = grid.start + (i as f64 + 0.5) * dt;
        let step = exp_hermitian_unchecked(&h.at(mid, Side::Right)?, dt);
        u = step.matrix() * u;
        if (i + 1) % record_every == 0 || i + 1 == grid.steps {
            out.push((grid.node(i + 1), SquareOperator::from_matrix_unchecked(u.clone())));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{matrix_exponential_skew, pauli_x, ConstantHamiltonian, FnHamiltonian};
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn grid_nodes() {
        let g = TimeGrid::new(1.0, 1.5, 500).unwrap();
        assert_eq!(g.node(0), 1.0);
        assert_eq!(g.node(500), 1.5);
        assert_eq!(g.index_of(1.25), Some(250));
        assert_eq!(g.index_of(1.2501), None);
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn zero_hamiltonian_is_identity() {
        let h = ConstantHamiltonian(SquareOperator::zeros(3).unwrap());
        let psi0 = StateVector::basis(3, 1).unwrap();
        let r = propagate_state(&h, &psi0, &TimeGrid::new(0.0, 1.0, 100).unwrap()).unwrap();
        assert!(r.states.iter().all(|s| *s == psi0));
        let u = propagate_unitary(&h, &TimeGrid::new(0.0, 1.0, 100).unwrap()).unwrap();
        assert!(u.final_unitary().distance(&SquareOperator::identity(3).unwrap()) == 0.0);
        let o = oracle_propagate(&h, 0.0, 1.0, 10_000).unwrap();
        assert!(o.distance(&SquareOperator::identity(3).unwrap()) < 1e-15);
    }

    #[test]
    fn rabi_half_cycle() {
        let h = ConstantHamiltonian(pauli_x());
        let psi0 = StateVector::basis(2, 0).unwrap();
        let r = propagate_state(&h, &psi0, &TimeGrid::new(0.0, FRAC_PI_2, 10_000).unwrap()).unwrap();
        let psi = r.final_state().amplitudes();
        assert!(psi[0].norm() < 1e-8);
        assert!((psi[1] - C64::new(0.0, -1.0)).norm() < 1e-8);
    }

    #[test]
    fn constant_hamiltonian_matches_exponential() {
        let h0 = SquareOperator::from_fn(3, |i, j| {
            if i == j {
                C64::new(i as f64 - 1.0, 0.0)
            } else {
                C64::new(0.3, 0.2 * (j as f64 - i as f64))
            }
        })
        .unwrap();
        let h = ConstantHamiltonian(h0.clone());
        let exact = matrix_exponential_skew(&h0, 2.0).unwrap();
        let u = propagate_unitary(&h, &TimeGrid::new(0.0, 2.0, 10_000).unwrap()).unwrap();
        assert!(u.final_unitary().distance(&exact) < 1e-9);
        assert!(u.unitarity_drift < 1e-8);
        let o = oracle_propagate(&h, 0.0, 2.0, 100_000).unwrap();
        assert!(o.distance(&exact) < 1e-10);
    }

    #[test]
    fn preconditions() {
        let h = ConstantHamiltonian(pauli_x());
        let psi0 = StateVector::basis(2, 0).unwrap();
        assert!(propagate_state(&h, &psi0, &TimeGrid::new(0.0, 1.0, 50).unwrap()).is_err());
        let bad = StateVector::from_real(&[1.0, 1.0]).unwrap();
        assert!(matches!(
            propagate_state(&h, &bad, &TimeGrid::new(0.0, 1.0, 100).unwrap()),
            Err(Error::NotNormalized { .. })
        ));
        assert!(oracle_propagate(&h, 0.0, 1.0, 100).is_err());
    }

    struct Jumpy(f64);
    impl Hamiltonian for Jumpy {
        fn dim(&self) -> usize {
            2
        }
        fn at(&self, t: f64, side: Side) -> Result<SquareOperator> {
            let after = match side {
                Side::Right => t >= self.0,
                Side::Left => t > self.0,
            };
            Ok(if after { pauli_x() } else { crate::qcore::pauli_z() })
        }
        fn jump_times(&self) -> Vec<f64> {
            vec![self.0]
        }
    }

    #[test]
    fn jumps_must_land_on_nodes() {
        let psi0 = StateVector::basis(2, 0).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 1000).unwrap();
        assert!(matches!(propagate_state(&Jumpy(0.33333), &psi0, &grid), Err(Error::JumpOffGrid { .. })));
        let r = propagate_state(&Jumpy(0.5), &psi0, &grid).unwrap();
        assert!(r.norm_drift < 1e-12);
        // the jump switches sigma_z (inert on |0>) to sigma_x exactly at t = 1/2
        let psi = r.final_state();
        let exact = matrix_exponential_skew(&pauli_x(), 0.5).unwrap().apply(&psi0).unwrap();
        let overlap = psi.inner(&exact).unwrap().norm();
        assert!((overlap - 1.0).abs() < 1e-10);
    }

    #[test]
    fn fn_hamiltonian_runs() {
        let h = FnHamiltonian::new(2, |t| pauli_x().scale(C64::new(t, 0.0)));
        let psi0 = StateVector::basis(2, 0).unwrap();
        let r = propagate_state(&h, &psi0, &TimeGrid::new(0.0, 1.0, 1000).unwrap()).unwrap();
        // area t^2/2 = 1/2: populations cos^2(1/2), sin^2(1/2)
        assert!((r.final_state().population(1) - 0.5f64.sin().powi(2)).abs() < 1e-10);
    }
}
