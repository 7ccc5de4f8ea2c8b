//! Four-level system in the basis `(|0>, |1>, |e>, |2>)` with resonant
//! drives on `|0>-|e>`, `|1>-|e>`, `|2>-|e>` and `|0>-|1>`, all at constant
//! phases `phi_0 = phi_1 = phi_a = pi/2`, `phi_2 = -pi/2`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::frames::{AncillaryFrame, FrameSample};
use crate::integrator::TimeGrid;
use crate::lambda3::{Perturbation, SINGULAR_EPS};
use crate::qcore::{cis, Hamiltonian, Side, SquareOperator, C64};
use crate::schedules::{ControlParams, ScheduleFn};

pub const PHI0: f64 = FRAC_PI_2;
pub const PHI1: f64 = FRAC_PI_2;
pub const PHI2: f64 = -FRAC_PI_2;
pub const PHI_A: f64 = FRAC_PI_2;

/// Below this `|pi cos(phi) / 2|` the cotangent is replaced by its series.
const SERIES_CUTOFF: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FourLevelDrives {
    pub omega0: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub omega_a: f64,
}

pub fn fourlevel_matrix(d: &FourLevelDrives) -> SquareOperator {
    let zero = C64::new(0.0, 0.0);
    let h02 = cis(PHI0) * d.omega0;
    let h12 = cis(PHI1) * d.omega1;
    let h32 = cis(PHI2) * d.omega2;
    let h01 = cis(PHI_A) * d.omega_a;
    SquareOperator::from_rows(&[
        &[zero, h01, h02, zero],
        &[h01.conj(), zero, h12, zero],
        &[h02.conj(), h12.conj(), zero, h32.conj()],
        &[zero, zero, h32, zero],
    ])
    .expect("4x4 is a supported dimension")
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourLevelControls {
    pub params: ControlParams,
    pub perturbation: Perturbation,
}

impl FourLevelControls {
    /// `Omega = dchi tan(chi) cot(phi) + dphi`, `Omega_2 = dchi / sin(phi)`,
    /// `Omega_0 = Omega sin(theta)`, `Omega_1 = Omega cos(theta)`, `Omega_a = dtheta`.
    pub fn drives(&self, t: f64, side: Side) -> Result<FourLevelDrives> {
        let s = self.params.sample(t, side)?;
        let (th, thd) = s.theta;
        let (omega, omega2) = match coupled_amplitude(&self.params) {
            Some(a) => coupled_drives(a, s.phi, t)?,
            None => generic_drives(s.phi, s.chi, t)?,
        };
        let mut d = FourLevelDrives { omega0: omega * th.sin(), omega1: omega * th.cos(), omega2, omega_a: thd };
        d.omega0 *= self.perturbation.omega0_scale;
        if self.perturbation.zero_omega_a {
            d.omega_a = 0.0;
        }
        Ok(d)
    }

    pub fn hamiltonian(&self, t: f64, side: Side) -> Result<SquareOperator> {
        Ok(fourlevel_matrix(&self.drives(t, side)?))
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        for i in 0..=grid.steps {
            let t = grid.node(i);
            self.drives(t, Side::Right)?;
            if i < grid.steps {
                self.drives(t + 0.5 * grid.dt(), Side::Right)?;
            }
        }
        Ok(())
    }

    pub fn frame(&self) -> FourLevelFrame {
        frame4(&self.params)
    }

    /// Paths the derivation makes transitionless.
    pub fn advertised_paths(&self) -> Vec<usize> {
        vec![0, 2]
    }
}

impl Hamiltonian for FourLevelControls {
    fn dim(&self) -> usize {
        4
    }
    fn at(&self, t: f64, side: Side) -> Result<SquareOperator> {
        self.hamiltonian(t, side)
    }
}

/// `A` when `chi = A (cos(phi) - 1)` with the very same `phi` schedule.
fn coupled_amplitude(p: &ControlParams) -> Option<f64> {
    match &p.chi {
        ScheduleFn::CosineOfScheduleMinusOne { amplitude, inner } if **inner == p.phi => Some(*amplitude),
        _ => None,
    }
}

/// With `chi = A (cos(phi) - 1)`: `Omega_2 = -A dphi` exactly and
/// `dchi tan(chi) cot(phi) = -A dphi cos(phi) tan(chi)`, which stays finite
/// at `phi -> 0`. For `A = pi/2` the product `cos(phi) tan(chi)` equals
/// `-c cot(pi c / 2)` with `c = cos(phi)`, finite at `c -> 0` as well.
fn coupled_drives(a: f64, (ph, phd): (f64, f64), t: f64) -> Result<(f64, f64)> {
    let c = ph.cos();
    let c_tan_chi = if (a - FRAC_PI_2).abs() < 1e-12 {
        let x = 0.5 * PI * c;
        if x.abs() < SERIES_CUTOFF {
            -(2.0 / PI) * (1.0 - x * x / 3.0)
        } else {
            -c * x.cos() / x.sin()
        }
    } else {
        let u = a * (c - 1.0);
        if u.cos().abs() < SINGULAR_EPS {
            return Err(Error::SingularControl { quantity: "tan(chi)", t });
        }
        c * u.tan()
    };
    Ok((phd * (1.0 - a * c_tan_chi), -a * phd))
}

fn generic_drives((ph, phd): (f64, f64), (ch, chd): (f64, f64), t: f64) -> Result<(f64, f64)> {
    let sp = ph.sin();
    if sp.abs() < SINGULAR_EPS {
        return Err(Error::SingularControl { quantity: "sin(phi)", t });
    }
    if ch.cos().abs() < SINGULAR_EPS {
        return Err(Error::SingularControl { quantity: "tan(chi)", t });
    }
    Ok((chd * ch.tan() * ph.cos() / sp + phd, chd / sp))
}

/// Derives and validates the drives on `grid`.
pub fn derive_fourlevel_controls(params: &ControlParams, grid: &TimeGrid) -> Result<FourLevelControls> {
    let c = FourLevelControls { params: params.clone(), perturbation: Perturbation::default() };
    c.validate(grid)?;
    Ok(c)
}

/// `mu_0 = (cos th, -sin th, 0, 0)`,
/// `mu_1 = (sin ph sin th, sin ph cos th, cos ph, 0)`,
/// `mu_2 = (cos ch cos ph sin th, cos ch cos ph cos th, -cos ch sin ph, sin ch)`,
/// `mu_3 = (sin ch cos ph sin th, sin ch cos ph cos th, -sin ch sin ph, -cos ch)`.
#[derive(Debug, Clone)]
pub struct FourLevelFrame {
    pub params: ControlParams,
}

pub fn frame4(params: &ControlParams) -> FourLevelFrame {
    FourLevelFrame { params: params.clone() }
}

fn real4(v: [f64; 4]) -> DVector<C64> {
    DVector::from_iterator(4, v.iter().map(|&x| C64::new(x, 0.0)))
}

impl AncillaryFrame for FourLevelFrame {
    fn dim(&self) -> usize {
        4
    }

    fn sample(&self, t: f64, side: Side) -> Result<FrameSample> {
        let s = self.params.sample(t, side)?;
        let (th, thd) = s.theta;
        let (ph, phd) = s.phi;
        let (ch, chd) = s.chi;
        let (st, ct) = th.sin_cos();
        let (sp, cp) = ph.sin_cos();
        let (sc, cc) = ch.sin_cos();
        let basis = vec![
            real4([ct, -st, 0.0, 0.0]),
            real4([sp * st, sp * ct, cp, 0.0]),
            real4([cc * cp * st, cc * cp * ct, -cc * sp, sc]),
            real4([sc * cp * st, sc * cp * ct, -sc * sp, -cc]),
        ];
        // chain rule over (theta, phi, chi)
        let rates = vec![
            real4([-st * thd, -ct * thd, 0.0, 0.0]),
            real4([sp * ct * thd + cp * st * phd, -sp * st * thd + cp * ct * phd, -sp * phd, 0.0]),
            real4([
                cc * cp * ct * thd - cc * sp * st * phd - sc * cp * st * chd,
                -cc * cp * st * thd - cc * sp * ct * phd - sc * cp * ct * chd,
                -cc * cp * phd + sc * sp * chd,
                cc * chd,
            ]),
            real4([
                sc * cp * ct * thd - sc * sp * st * phd + cc * cp * st * chd,
                -sc * cp * st * thd - sc * sp * ct * phd + cc * cp * ct * chd,
                -sc * cp * phd - cc * sp * chd,
                sc * chd,
            ]),
        ];
        Ok(FrameSample { basis, rates })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::von_neumann_residual;
    use crate::qcore::StateVector;
    use crate::schedules::{stage_schedule_cyclic4, Cyclic4Stage, Interval};

    const T: f64 = 1.0;

    fn stage(st: Cyclic4Stage) -> ControlParams {
        stage_schedule_cyclic4(st, T).unwrap()
    }

    fn grid_for(p: &ControlParams) -> TimeGrid {
        TimeGrid::new(p.interval.start, p.interval.end, 1000).unwrap()
    }

    #[test]
    fn zero_drives_give_zero_matrix() {
        assert_eq!(fourlevel_matrix(&FourLevelDrives::default()), SquareOperator::zeros(4).unwrap());
    }

    #[test]
    fn hamiltonian_is_hermitian() {
        for st in Cyclic4Stage::ALL {
            let p = stage(st);
            let c = derive_fourlevel_controls(&p, &grid_for(&p)).unwrap();
            for i in 0..100 {
                let t = p.interval.start + (i as f64 + 0.37) / 100.0 * p.duration();
                assert!(c.hamiltonian(t, Side::Right).unwrap().hermiticity_defect() <= 1e-12);
            }
        }
    }

    #[test]
    fn frame_examples() {
        let zero =
            ControlParams::new(ScheduleFn::Constant(0.0), ScheduleFn::Constant(0.0), Interval::new(0.0, T).unwrap());
        let b = frame4(&zero).basis_at(0.1).unwrap();
        assert_eq!(b[0], StateVector::basis(4, 0).unwrap());
        assert_eq!(b[1], StateVector::basis(4, 2).unwrap());
        assert_eq!(b[2], StateVector::basis(4, 1).unwrap());
        assert_eq!(b[3].amplitudes()[3], C64::new(-1.0, 0.0));

        let up =
            ControlParams::new(ScheduleFn::Constant(0.7), ScheduleFn::Constant(0.4), Interval::new(0.0, T).unwrap())
                .with_chi(ScheduleFn::Constant(FRAC_PI_2));
        let b = frame4(&up).basis_at(0.1).unwrap();
        assert!((b[2].population(3) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn frame_is_orthonormal_with_exact_rates() {
        for st in Cyclic4Stage::ALL {
            let f = frame4(&stage(st));
            let p = stage(st);
            for i in 1..100 {
                let t = p.interval.start + i as f64 / 100.0 * p.duration();
                let s = f.sample(t, Side::Right).unwrap();
                assert!(s.gram_defect() < 1e-10);
                let h = 1e-6;
                let a = f.sample(t + h, Side::Right).unwrap().basis;
                let b = f.sample(t - h, Side::Right).unwrap().basis;
                for k in 0..4 {
                    let fd = (&a[k] - &b[k]) / C64::new(2.0 * h, 0.0);
                    assert!((fd - &s.rates[k]).norm() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn limits_at_stage_ends_are_finite() {
        let p = stage(Cyclic4Stage::One);
        let c = derive_fourlevel_controls(&p, &grid_for(&p)).unwrap();
        let d = c.drives(0.5 * T, Side::Right).unwrap();
        let phd = -FRAC_PI_2 * PI / T;
        assert!((d.omega2 + FRAC_PI_2 * phd).abs() < 1e-12);
        // the cross term vanishes at phi = 0, leaving Omega = dphi
        assert!((d.omega0.hypot(d.omega1) - phd.abs()).abs() < 1e-12);
        // at phi = pi/2 the product cos(phi) tan(chi) tends to -2/pi
        let d0 = c.drives(1e-3, Side::Right).unwrap();
        assert!(d0.omega0.is_finite() && d0.omega1.is_finite());
    }

    #[test]
    fn series_branch_is_continuous() {
        let x = SERIES_CUTOFF * (1.0 + 1e-9);
        let a = -(2.0 / PI) * (1.0 - x * x / 3.0);
        let b = -(x / (0.5 * PI)) * x.cos() / x.sin();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn stage_two_relations() {
        let p = stage(Cyclic4Stage::Two);
        let c = derive_fourlevel_controls(&p, &grid_for(&p)).unwrap();
        for i in 0..=50 {
            let t = 0.5 * T + i as f64 / 100.0 * T;
            let d = c.drives(t, Side::Right).unwrap();
            assert!((d.omega_a - p.chi.eval(t).1).abs() < 1e-15);
        }
    }

    #[test]
    fn coupled_and_generic_forms_agree() {
        let p = stage(Cyclic4Stage::Three);
        let coupled = FourLevelControls { params: p.clone(), perturbation: Perturbation::default() };
        for i in 1..50 {
            let t = T + i as f64 / 100.0 * T;
            let s = p.sample(t, Side::Right).unwrap();
            let (o, o2) = generic_drives(s.phi, s.chi, t).unwrap();
            let d = coupled.drives(t, Side::Right).unwrap();
            assert!((d.omega2 - o2).abs() < 1e-9);
            assert!((d.omega0 - o * s.theta.0.sin()).abs() < 1e-9);
        }
    }

    #[test]
    fn paths_zero_and_two_are_transitionless() {
        for st in Cyclic4Stage::ALL {
            let p = stage(st);
            let c = derive_fourlevel_controls(&p, &grid_for(&p)).unwrap();
            let f = frame4(&p);
            for i in 0..=40 {
                let t = p.interval.start + i as f64 / 40.0 * p.duration();
                let scale = c.hamiltonian(t, Side::Right).unwrap().frobenius_norm();
                for k in [0, 2] {
                    assert!(
                        von_neumann_residual(&f, &c, t, k).unwrap() <= 1e-8 * scale + 1e-13,
                        "stage {st:?} k={k} t={t}"
                    );
                }
            }
        }
    }
}
