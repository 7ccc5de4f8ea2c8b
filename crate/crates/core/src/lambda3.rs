//! Lambda-type three-level system in the basis `(|0>, |1>, |e>)`:
//!
//! `H = Delta |e><e| + [Omega_0 e^{i phi_0}|0><e| + Omega_1 e^{i phi_1}|1><e|
//!      + Omega_a e^{i phi_a}|0><1| + h.c.]`
//!
//! with the off-diagonal terms halved when `half_convention` is set. The five
//! drive rules derive `(Omega, phi, Delta)` from the frame angles so that the
//! chosen ancillary paths are transitionless.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::frames::{AncillaryFrame, FrameSample, StaticFrame};
use crate::integrator::TimeGrid;
use crate::qcore::{cis, Hamiltonian, Side, SquareOperator, C64, I};
use crate::schedules::{ControlParams, ControlSample};

/// Guard on every sin/cot denominator.
pub const SINGULAR_EPS: f64 = 1e-9;
/// Rates below this are treated as exactly zero (limit branches).
pub const RATE_EPS: f64 = 1e-12;

/// Instantaneous drive values. Amplitudes are signed; a negative amplitude
/// is a pi phase.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Lambda3Drives {
    pub omega0: f64,
    pub omega1: f64,
    pub omega_a: f64,
    pub phi0: f64,
    pub phi1: f64,
    pub phi_a: f64,
    pub delta: f64,
}

/// Builds the 3x3 Hamiltonian from drive values.
pub fn lambda3_matrix(d: &Lambda3Drives, half_convention: bool) -> SquareOperator {
    let f = if half_convention { 0.5 } else { 1.0 };
    let zero = C64::new(0.0, 0.0);
    let h02 = cis(d.phi0) * (f * d.omega0);
    let h12 = cis(d.phi1) * (f * d.omega1);
    let h01 = cis(d.phi_a) * (f * d.omega_a);
    SquareOperator::from_rows(&[
        &[zero, h01, h02],
        &[h01.conj(), zero, h12],
        &[h02.conj(), h12.conj(), C64::new(d.delta, 0.0)],
    ])
    .expect("3x3 is a supported dimension")
}

#[derive(Debug, Clone, PartialEq)]
pub enum DriveRule {
    /// General frame with `phi_0` fixed.
    Universal {
        phi0: f64,
    },
    /// Static `theta`, relative phase `varphi = phi_1 - phi_0`.
    Nhqt {
        theta: f64,
        varphi: f64,
    },
    LewisRiesenfeld,
    /// Static `theta`, `phi_0 = phi_1 = pi/2`, `Omega = dphi/dt`.
    Cdd,
    /// `Omega` is `reference_intensity` when `phi` is fixed, `dphi/dt` otherwise.
    Cd {
        reference_intensity: f64,
        phi_fixed: bool,
    },
    /// Constant drives, no derivation.
    Fixed(Lambda3Drives),
}

impl DriveRule {
    pub fn name(&self) -> &'static str {
        match self {
            DriveRule::Universal { .. } => "universal",
            DriveRule::Nhqt { .. } => "nhqt",
            DriveRule::LewisRiesenfeld => "lr",
            DriveRule::Cdd => "cdd",
            DriveRule::Cd { .. } => "cd",
            DriveRule::Fixed(_) => "fixed",
        }
    }

    /// Paths the rule is designed to make transitionless.
    pub fn advertised_paths(&self) -> Vec<usize> {
        match self {
            DriveRule::Universal { .. } | DriveRule::Nhqt { .. } | DriveRule::Cdd => vec![0, 1, 2],
            DriveRule::LewisRiesenfeld => vec![2],
            DriveRule::Cd { .. } => vec![0],
            DriveRule::Fixed(_) => Vec::new(),
        }
    }
}

/// Deliberate deviations from the derived drives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    /// `Omega_0 -> omega0_scale * Omega_0`.
    pub omega0_scale: f64,
    pub zero_omega_a: bool,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation { omega0_scale: 1.0, zero_omega_a: false }
    }
}

impl Perturbation {
    pub fn is_identity(&self) -> bool {
        *self == Perturbation::default()
    }

    fn apply(&self, d: &mut Lambda3Drives) {
        d.omega0 *= self.omega0_scale;
        if self.zero_omega_a {
            d.omega_a = 0.0;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lambda3Controls {
    pub params: ControlParams,
    pub rule: DriveRule,
    pub half_convention: bool,
    pub perturbation: Perturbation,
}

fn singular(quantity: &'static str, t: f64) -> Error {
    Error::SingularControl { quantity, t }
}

impl Lambda3Controls {
    pub fn with_perturbation(mut self, perturbation: Perturbation) -> Self {
        self.perturbation = perturbation;
        self
    }

    pub fn drives(&self, t: f64, side: Side) -> Result<Lambda3Drives> {
        let s = self.params.sample(t, side)?;
        let mut d = rule_drives(&self.rule, &s, t)?;
        self.perturbation.apply(&mut d);
        Ok(d)
    }

    pub fn hamiltonian(&self, t: f64, side: Side) -> Result<SquareOperator> {
        Ok(lambda3_matrix(&self.drives(t, side)?, self.half_convention))
    }

    /// Evaluates the drives at every node and midpoint of `grid` (both
    /// limits at jumps), surfacing the first singularity.
    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        for i in 0..=grid.steps {
            let t = grid.node(i);
            self.drives(t, Side::Right)?;
            self.drives(t, Side::Left)?;
            if i < grid.steps {
                self.drives(t + 0.5 * grid.dt(), Side::Right)?;
            }
        }
        Ok(())
    }

    /// The ancillary frame the rule was derived for.
    pub fn frame(&self) -> Box<dyn AncillaryFrame + Send + Sync> {
        match &self.rule {
            DriveRule::Universal { .. } | DriveRule::Cdd | DriveRule::Cd { .. } => {
                Box::new(UniversalFrame { params: self.params.clone() })
            }
            DriveRule::Nhqt { theta, varphi } => {
                Box::new(NhqtFrame { params: self.params.clone(), theta: *theta, varphi: *varphi })
            }
            DriveRule::LewisRiesenfeld => Box::new(LrFrame { params: self.params.clone() }),
            DriveRule::Fixed(_) => Box::new(StaticFrame::computational(3).expect("dimension 3 is supported")),
        }
    }

    /// `(H_0, H_c)` where `H_c` holds only the `|0> <-> |1>` drive.
    pub fn decomposition(&self, t: f64, side: Side) -> Result<(SquareOperator, SquareOperator)> {
        let d = self.drives(t, side)?;
        let h0 = Lambda3Drives { omega_a: 0.0, ..d };
        let hc = Lambda3Drives { omega_a: d.omega_a, phi_a: d.phi_a, ..Lambda3Drives::default() };
        Ok((lambda3_matrix(&h0, self.half_convention), lambda3_matrix(&hc, self.half_convention)))
    }
}

impl Hamiltonian for Lambda3Controls {
    fn dim(&self) -> usize {
        3
    }
    fn at(&self, t: f64, side: Side) -> Result<SquareOperator> {
        self.hamiltonian(t, side)
    }
    fn jump_times(&self) -> Vec<f64> {
        self.params.jump_times()
    }
}

fn rule_drives(rule: &DriveRule, s: &ControlSample, t: f64) -> Result<Lambda3Drives> {
    let (th, thd) = s.theta;
    let (ph, phd) = s.phi;
    let (al, ald) = s.alpha;
    let (be, bed) = s.beta;
    match rule {
        DriveRule::Universal { phi0 } => {
            let (phi_a, omega_a) = if ald.abs() < RATE_EPS {
                (al + FRAC_PI_2, thd)
            } else {
                let c2 = (2.0 * th).cos();
                if c2.abs() < SINGULAR_EPS {
                    return Err(singular("tan(2 theta)", t));
                }
                let y = 2.0 * thd;
                let x = ald * (2.0 * th).sin() / c2;
                (al - y.atan2(x), -0.5 * y.hypot(x))
            };
            let sin_pb = (phi0 - be).sin();
            if sin_pb.abs() < SINGULAR_EPS {
                return Err(singular("sin(phi_0 - beta)", t));
            }
            let omega = phd / sin_pb;
            let cos_pb = (phi0 - be).cos();
            let mut delta = bed;
            if cos_pb.abs() >= RATE_EPS && omega != 0.0 {
                let s2 = (2.0 * ph).sin();
                if s2.abs() < SINGULAR_EPS {
                    return Err(singular("cot(2 phi)", t));
                }
                delta += 2.0 * omega * cos_pb * (2.0 * ph).cos() / s2;
            }
            if ald.abs() >= RATE_EPS {
                delta -= ald * th.cos().powi(2) / (2.0 * th).cos();
            }
            Ok(Lambda3Drives {
                omega0: omega * th.sin(),
                omega1: omega * th.cos(),
                omega_a,
                phi0: *phi0,
                phi1: phi0 - al,
                phi_a,
                delta,
            })
        }
        DriveRule::Nhqt { theta, varphi } => {
            let (x, omega) = if ald.abs() < RATE_EPS {
                (FRAC_PI_2, phd)
            } else {
                if ph.cos().abs() < SINGULAR_EPS {
                    return Err(singular("tan(phi)", t));
                }
                let y = ald * ph.tan();
                (-phd.atan2(y), -phd.hypot(y))
            };
            let phi0 = al + x;
            Ok(Lambda3Drives {
                omega0: omega * (0.5 * theta).sin(),
                omega1: -omega * (0.5 * theta).cos(),
                omega_a: 0.0,
                phi0,
                phi1: phi0 + varphi,
                phi_a: 0.0,
                delta: 0.0,
            })
        }
        DriveRule::LewisRiesenfeld => {
            let sp = ph.sin();
            if sp.abs() < SINGULAR_EPS {
                return Err(singular("cot(phi)", t));
            }
            let cot = ph.cos() / sp;
            Ok(Lambda3Drives {
                omega0: thd * th.sin() * cot + phd * th.cos(),
                omega1: -thd * th.cos() * cot + phd * th.sin(),
                ..Lambda3Drives::default()
            })
        }
        DriveRule::Cdd => Ok(Lambda3Drives {
            omega0: phd * th.sin(),
            omega1: phd * th.cos(),
            phi0: FRAC_PI_2,
            phi1: FRAC_PI_2,
            ..Lambda3Drives::default()
        }),
        DriveRule::Cd { reference_intensity, phi_fixed } => {
            let omega = if *phi_fixed { *reference_intensity } else { phd };
            let s2 = (2.0 * ph).sin();
            let delta = if omega == 0.0 {
                0.0
            } else if s2.abs() < SINGULAR_EPS {
                return Err(singular("cot(2 phi)", t));
            } else {
                2.0 * omega * (2.0 * ph).cos() / s2
            };
            Ok(Lambda3Drives {
                omega0: omega * th.sin(),
                omega1: omega * th.cos(),
                omega_a: thd,
                phi0: 0.0,
                phi1: 0.0,
                phi_a: FRAC_PI_2,
                delta,
            })
        }
        DriveRule::Fixed(d) => Ok(*d),
    }
}

fn derive(params: &ControlParams, rule: DriveRule, half_convention: bool, grid: &TimeGrid) -> Result<Lambda3Controls> {
    let c = Lambda3Controls { params: params.clone(), rule, half_convention, perturbation: Perturbation::default() };
    c.validate(grid)?;
    Ok(c)
}

fn require_static_theta(params: &ControlParams, protocol: &str) -> Result<f64> {
    if !params.theta.is_constant() {
        return Err(Error::ContractViolation(format!("{protocol} requires a time-independent theta")));
    }
    Ok(params.theta.value(params.interval.start))
}

/// Universal rule: `phi_0 - phi_1 = alpha`, `Omega = dphi/dt / sin(phi_0 - beta)`,
/// `Omega_0 = Omega sin(theta)`, `Omega_1 = Omega cos(theta)`, `Omega_a = dtheta/dt`
/// when `alpha` is static, and the detuning that keeps all three paths diagonal.
pub fn derive_universal_controls(params: &ControlParams, phi0: f64, grid: &TimeGrid) -> Result<Lambda3Controls> {
    derive(params, DriveRule::Universal { phi0 }, false, grid)
}

/// Holonomic rule on a static `theta`: `phi_0 = alpha + pi/2` under parallel
/// transport, `Omega_0 = Omega sin(theta/2)`, `Omega_1 = -Omega cos(theta/2)`,
/// `Omega = dphi/dt`, with the halved coupling convention.
pub fn derive_nhqt_controls(params: &ControlParams, varphi: f64, grid: &TimeGrid) -> Result<Lambda3Controls> {
    let theta = require_static_theta(params, "nhqt")?;
    derive(params, DriveRule::Nhqt { theta, varphi }, true, grid)
}

/// Invariant-based rule: resonant, real drives with
/// `Omega_0 = dtheta sin(theta) cot(phi) + dphi cos(theta)` and
/// `Omega_1 = -dtheta cos(theta) cot(phi) + dphi sin(theta)`.
pub fn derive_lr_controls(params: &ControlParams, grid: &TimeGrid) -> Result<Lambda3Controls> {
    derive(params, DriveRule::LewisRiesenfeld, false, grid)
}

/// Dressed-state rule on a static `theta`.
pub fn derive_cdd_controls(params: &ControlParams, grid: &TimeGrid) -> Result<Lambda3Controls> {
    require_static_theta(params, "cdd")?;
    derive(params, DriveRule::Cdd, false, grid)
}

/// Counterdiabatic rule. For a fixed `phi` the reference intensity defaults
/// to `pi / duration`.
pub fn derive_cd_controls(
    params: &ControlParams,
    reference_intensity: Option<f64>,
    grid: &TimeGrid,
) -> Result<Lambda3Controls> {
    let phi_fixed = params.phi.is_static();
    let reference_intensity = reference_intensity.unwrap_or(PI / params.duration());
    if !reference_intensity.is_finite() {
        return Err(Error::config("reference_intensity", "must be finite"));
    }
    derive(params, DriveRule::Cd { reference_intensity, phi_fixed }, false, grid)
}

/// Constant drives (e.g. an idle system).
pub fn fixed_controls(params: &ControlParams, drives: Lambda3Drives, half_convention: bool) -> Lambda3Controls {
    Lambda3Controls {
        params: params.clone(),
        rule: DriveRule::Fixed(drives),
        half_convention,
        perturbation: Perturbation::default(),
    }
}

fn vec3(a: C64, b: C64, c: C64) -> DVector<C64> {
    DVector::from_vec(vec![a, b, c])
}

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// `mu_0 = cos(theta)|0> - sin(theta) e^{-i alpha}|1>`,
/// `b = sin(theta)|0> + cos(theta) e^{-i alpha}|1>`, `E = e^{-i beta}|e>`,
/// `mu_1 = sin(phi) b + cos(phi) E`, `mu_2 = cos(phi) b - sin(phi) E`.
#[derive(Debug, Clone)]
pub struct UniversalFrame {
    pub params: ControlParams,
}

pub fn universal_frame(params: &ControlParams) -> UniversalFrame {
    UniversalFrame { params: params.clone() }
}

fn rotate_pair(
    (ph, phd): (f64, f64),
    b: &DVector<C64>,
    bd: &DVector<C64>,
    e: &DVector<C64>,
    ed: &DVector<C64>,
) -> [DVector<C64>; 4] {
    let (s, c) = ph.sin_cos();
    let mu1 = b * re(s) + e * re(c);
    let mu2 = b * re(c) - e * re(s);
    let mu1d = (b * re(c) - e * re(s)) * re(phd) + bd * re(s) + ed * re(c);
    let mu2d = (b * re(-s) - e * re(c)) * re(phd) + bd * re(c) - ed * re(s);
    [mu1, mu1d, mu2, mu2d]
}

impl AncillaryFrame for UniversalFrame {
    fn dim(&self) -> usize {
        3
    }

    fn sample(&self, t: f64, side: Side) -> Result<FrameSample> {
        let s = self.params.sample(t, side)?;
        let (th, thd) = s.theta;
        let (al, ald) = s.alpha;
        let (be, bed) = s.beta;
        let (st, ct) = th.sin_cos();
        let ea = cis(-al);
        let z = re(0.0);
        let mu0 = vec3(re(ct), -ea * st, z);
        let mu0d = vec3(re(-st * thd), -ea * (ct * thd) + I * ea * (st * ald), z);
        let b = vec3(re(st), ea * ct, z);
        let bd = vec3(re(ct * thd), -ea * (st * thd) - I * ea * (ct * ald), z);
        let e = vec3(z, z, cis(-be));
        let ed = &e * (-I * bed);
        let [mu1, mu1d, mu2, mu2d] = rotate_pair(s.phi, &b, &bd, &e, &ed);
        Ok(FrameSample { basis: vec![mu0, mu1, mu2], rates: vec![mu0d, mu1d, mu2d] })
    }

    fn jump_times(&self) -> Vec<f64> {
        self.params.jump_times()
    }

    fn jump_increments(&self, t: f64) -> Result<Vec<f64>> {
        let da: f64 = self.params.alpha.jumps().iter().filter(|j| j.time == t).map(|j| j.delta).sum();
        let db: f64 = self.params.beta.jumps().iter().filter(|j| j.time == t).map(|j| j.delta).sum();
        let s = self.params.sample(t, Side::Right)?;
        let (st2, ct2) = (s.theta.0.sin().powi(2), s.theta.0.cos().powi(2));
        let (sp2, cp2) = (s.phi.0.sin().powi(2), s.phi.0.cos().powi(2));
        Ok(vec![da * st2, da * sp2 * ct2 + db * cp2, da * cp2 * ct2 + db * sp2])
    }
}

/// Holonomic frame with half angles and a static `theta`:
/// `mu_0 = cos(theta/2)|0> + sin(theta/2) e^{i varphi}|1>`,
/// `b = sin(theta/2)|0> - cos(theta/2) e^{i varphi}|1>`, `E = e^{-i alpha}|e>`,
/// `mu_1 = sin(phi/2) b + cos(phi/2) E`, `mu_2 = cos(phi/2) b - sin(phi/2) E`.
#[derive(Debug, Clone)]
pub struct NhqtFrame {
    pub params: ControlParams,
    pub theta: f64,
    pub varphi: f64,
}

pub fn nhqt_frame(params: &ControlParams, varphi: f64) -> Result<NhqtFrame> {
    let theta = require_static_theta(params, "nhqt")?;
    Ok(NhqtFrame { params: params.clone(), theta, varphi })
}

impl AncillaryFrame for NhqtFrame {
    fn dim(&self) -> usize {
        3
    }

    fn sample(&self, t: f64, side: Side) -> Result<FrameSample> {
        let s = self.params.sample(t, side)?;
        let (al, ald) = s.alpha;
        let (sh, ch) = (0.5 * self.theta).sin_cos();
        let ev = cis(self.varphi);
        let z = re(0.0);
        let zero = DVector::zeros(3);
        let mu0 = vec3(re(ch), ev * sh, z);
        let b = vec3(re(sh), -ev * ch, z);
        let e = vec3(z, z, cis(-al));
        let ed = &e * (-I * ald);
        let half_phi = (0.5 * s.phi.0, 0.5 * s.phi.1);
        let [mu1, mu1d, mu2, mu2d] = rotate_pair(half_phi, &b, &zero, &e, &ed);
        Ok(FrameSample { basis: vec![mu0, mu1, mu2], rates: vec![zero, mu1d, mu2d] })
    }

    fn jump_times(&self) -> Vec<f64> {
        self.params.jump_times()
    }

    fn jump_increments(&self, t: f64) -> Result<Vec<f64>> {
        let da: f64 = self.params.alpha.jumps().iter().filter(|j| j.time == t).map(|j| j.delta).sum();
        let half = 0.5 * self.params.sample(t, Side::Right)?.phi.0;
        Ok(vec![0.0, da * half.cos().powi(2), da * half.sin().powi(2)])
    }
}

/// Invariant frame:
/// `mu_0 = (sin(theta), -cos(theta), 0)`,
/// `mu_1 = (cos(theta) sin(phi), sin(theta) sin(phi), i cos(phi))`,
/// `mu_2 = (cos(theta) cos(phi), sin(theta) cos(phi), -i sin(phi))`.
#[derive(Debug, Clone)]
pub struct LrFrame {
    pub params: ControlParams,
}

pub fn lr_frame(params: &ControlParams) -> LrFrame {
    LrFrame { params: params.clone() }
}

impl AncillaryFrame for LrFrame {
    fn dim(&self) -> usize {
        3
    }

    fn sample(&self, t: f64, side: Side) -> Result<FrameSample> {
        let s = self.params.sample(t, side)?;
        let (th, thd) = s.theta;
        let (ph, phd) = s.phi;
        let (st, ct) = th.sin_cos();
        let (sp, cp) = ph.sin_cos();
        let z = re(0.0);
        let mu0 = vec3(re(st), re(-ct), z);
        let mu0d = vec3(re(ct * thd), re(st * thd), z);
        let mu1 = vec3(re(ct * sp), re(st * sp), I * cp);
        let mu1d = vec3(re(-st * sp * thd + ct * cp * phd), re(ct * sp * thd + st * cp * phd), -I * (sp * phd));
        let mu2 = vec3(re(ct * cp), re(st * cp), -I * sp);
        let mu2d = vec3(re(-st * cp * thd - ct * sp * phd), re(ct * cp * thd - st * sp * phd), -I * (cp * phd));
        Ok(FrameSample { basis: vec![mu0, mu1, mu2], rates: vec![mu0d, mu1d, mu2d] })
    }
}

/// `e^{i gamma/2} exp(-i gamma/2 n.sigma)` with
/// `n = (sin(theta) cos(varphi), -sin(theta) sin(varphi), cos(theta))`.
#[derive(Debug, Clone, PartialEq)]
pub struct HolonomicGate {
    pub theta: f64,
    pub varphi: f64,
    pub gamma: f64,
    pub matrix: SquareOperator,
}

impl HolonomicGate {
    pub fn new(theta: f64, varphi: f64, gamma: f64) -> Self {
        let (nx, ny, nz) = (theta.sin() * varphi.cos(), -theta.sin() * varphi.sin(), theta.cos());
        let (s, c) = (0.5 * gamma).sin_cos();
        // exp(-i a n.sigma) = cos(a) - i sin(a) n.sigma
        let m = [[re(c) - I * (s * nz), -I * s * C64::new(nx, -ny)], [-I * s * C64::new(nx, ny), re(c) + I * (s * nz)]];
        let g = cis(0.5 * gamma);
        let matrix = SquareOperator::from_fn(2, |i, j| g * m[i][j]).expect("2x2 is supported");
        HolonomicGate { theta, varphi, gamma, matrix }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{geometric_integrand, von_neumann_residual};
    use crate::qcore::{pauli_x, StateVector};
    use crate::schedules::{Interval, ScheduleFn};
    use proptest::prelude::*;

    const T: f64 = 1.0;

    fn fig2() -> ControlParams {
        ControlParams::new(
            ScheduleFn::sin_half(FRAC_PI_2, T),
            ScheduleFn::cos_half(FRAC_PI_2, T),
            Interval::new(0.0, T).unwrap(),
        )
    }

    fn grid() -> TimeGrid {
        TimeGrid::new(0.0, T, 1000).unwrap()
    }

    fn fd_rates<F: AncillaryFrame>(f: &F, t: f64) -> Vec<DVector<C64>> {
        let h = 1e-6;
        let a = f.sample(t + h, Side::Right).unwrap().basis;
        let b = f.sample(t - h, Side::Right).unwrap().basis;
        a.iter().zip(&b).map(|(x, y)| (x - y) / re(2.0 * h)).collect()
    }

    fn check_frame<F: AncillaryFrame>(f: &F, times: &[f64]) {
        for &t in times {
            let s = f.sample(t, Side::Right).unwrap();
            assert!(s.gram_defect() < 1e-10, "gram at {t}");
            for (k, fd) in fd_rates(f, t).iter().enumerate() {
                assert!((fd - &s.rates[k]).norm() < 1e-6, "rate {k} at {t}");
            }
            let g = s.geometric_matrix();
            assert!((&g - g.adjoint()).norm() < 1e-10);
        }
    }

    #[test]
    fn zero_drives_give_zero_matrix() {
        let h = lambda3_matrix(&Lambda3Drives::default(), false);
        assert_eq!(h, SquareOperator::zeros(3).unwrap());
    }

    #[test]
    fn fig2_drives() {
        let c = derive_universal_controls(&fig2(), FRAC_PI_2, &grid()).unwrap();
        for i in 0..=1000 {
            assert_eq!(c.drives(i as f64 / 1000.0, Side::Right).unwrap().delta, 0.0);
        }
        let d = c.drives(0.0, Side::Right).unwrap();
        assert_eq!(d.omega0, 0.0);
        assert!(d.omega1.abs() < 1e-15);
        assert!((d.omega_a - PI * PI / (4.0 * T)).abs() < 1e-14);
        let h = c.hamiltonian(0.5, Side::Right).unwrap();
        assert!(h.hermiticity_defect() < 1e-15);
        let th = FRAC_PI_2 * (PI / 4.0).sin();
        let omega = -PI * PI / (4.0 * T) * (PI / 4.0).sin();
        assert!((h.entry(0, 2) - I * (omega * th.sin())).norm() < 1e-13);
    }

    #[test]
    fn universal_frame_examples() {
        let zero =
            ControlParams::new(ScheduleFn::Constant(0.0), ScheduleFn::Constant(0.0), Interval::new(0.0, T).unwrap());
        let b = universal_frame(&zero).basis_at(0.3).unwrap();
        for (k, level) in [(0, 0), (1, 2), (2, 1)] {
            assert_eq!(b[k], StateVector::basis(3, level).unwrap());
        }
        let end = universal_frame(&fig2()).basis_at(T).unwrap();
        assert!((end[0].amplitudes()[1] + re(1.0)).norm() < 1e-15);
        assert!(geometric_integrand(&universal_frame(&fig2()), 0.5, 0, 0).unwrap().norm() < 1e-15);
    }

    #[test]
    fn frames_are_orthonormal_with_exact_rates() {
        let times: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
        let general = fig2()
            .with_alpha(ScheduleFn::sin_full(0.7, T))
            .with_beta(ScheduleFn::LinearRamp { intercept: 0.1, slope: 0.4 });
        check_frame(&universal_frame(&general), &times);
        let nh =
            ControlParams::new(ScheduleFn::Constant(0.9), ScheduleFn::cos_full(PI, T), Interval::new(0.0, T).unwrap())
                .with_alpha(ScheduleFn::LinearRamp { intercept: 0.2, slope: 0.6 });
        check_frame(&nhqt_frame(&nh, 0.4).unwrap(), &times);
        let lr = ControlParams::new(
            ScheduleFn::LinearRamp { intercept: PI, slope: -PI / 2.0 },
            ScheduleFn::sin_half(1.0, T),
            Interval::new(0.0, T).unwrap(),
        );
        check_frame(&lr_frame(&lr), &times);
    }

    #[test]
    fn general_alpha_beta_universal_rule_is_full_rank() {
        // theta stays below pi/4 so tan(2 theta) is regular
        let p = ControlParams::new(
            ScheduleFn::SinHalfPeriod { amplitude: 0.6, period: T, offset: -0.2, scale: 1.0 },
            ScheduleFn::LinearRamp { intercept: 0.3, slope: 0.9 },
            Interval::new(0.0, T).unwrap(),
        )
        .with_alpha(ScheduleFn::sin_full(0.5, T))
        .with_beta(ScheduleFn::LinearRamp { intercept: 0.0, slope: 0.3 });
        let c = derive_universal_controls(&p, 1.1, &grid()).unwrap();
        let f = universal_frame(&p);
        for i in 1..50 {
            let t = i as f64 / 50.0;
            let scale = c.hamiltonian(t, Side::Right).unwrap().frobenius_norm();
            for k in 0..3 {
                assert!(von_neumann_residual(&f, &c, t, k).unwrap() <= 1e-10 * scale, "k={k} t={t}");
            }
        }
    }

    #[test]
    fn singular_phase_is_reported_with_time() {
        match derive_universal_controls(&fig2(), 0.0, &grid()) {
            Err(Error::SingularControl { t, .. }) => assert_eq!(t, 0.0),
            other => panic!("expected singular control, got {other:?}"),
        }
        let lr =
            ControlParams::new(ScheduleFn::Constant(0.3), ScheduleFn::sin_half(1.0, T), Interval::new(0.0, T).unwrap());
        assert!(matches!(derive_lr_controls(&lr, &grid()), Err(Error::SingularControl { .. })));
    }

    #[test]
    fn static_theta_is_enforced() {
        assert!(matches!(derive_nhqt_controls(&fig2(), 0.0, &grid()), Err(Error::ContractViolation(_))));
        assert!(matches!(derive_cdd_controls(&fig2(), &grid()), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn nhqt_dark_state_is_annihilated() {
        let p = ControlParams::new(
            ScheduleFn::Constant(FRAC_PI_2),
            ScheduleFn::cos_full(PI, T),
            Interval::new(0.0, T).unwrap(),
        )
        .with_alpha(ScheduleFn::step(0.0, 0.5 * T, 2.0 * PI));
        let c = derive_nhqt_controls(&p, 0.3, &grid()).unwrap();
        let f = nhqt_frame(&p, 0.3).unwrap();
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let mu0 = &f.basis_at(t).unwrap()[0];
            let out = c.hamiltonian(t, Side::Right).unwrap().apply(mu0).unwrap();
            assert!(out.norm_sqr().sqrt() <= 1e-12);
        }
    }

    #[test]
    fn cdd_equals_nhqt_under_substitution() {
        let theta_c = -PI / 4.0;
        let phi_c = ScheduleFn::cos_half(PI, T);
        let cdd = derive_cdd_controls(
            &ControlParams::new(ScheduleFn::Constant(theta_c), phi_c, Interval::new(0.0, T).unwrap()),
            &grid(),
        )
        .unwrap();
        // theta/2 -> pi - theta and phi/2 -> phi
        let nh_params = ControlParams::new(
            ScheduleFn::Constant(2.0 * (PI - theta_c)),
            ScheduleFn::cos_half(2.0 * PI, T),
            Interval::new(0.0, T).unwrap(),
        );
        let nhqt = derive_nhqt_controls(&nh_params, 0.0, &grid()).unwrap();
        let lr_params = ControlParams::new(
            ScheduleFn::Constant(FRAC_PI_2 - theta_c),
            ScheduleFn::cos_half(PI, T),
            Interval::new(0.0, T).unwrap(),
        );
        let lr = Lambda3Controls {
            params: lr_params,
            rule: DriveRule::LewisRiesenfeld,
            half_convention: false,
            perturbation: Perturbation::default(),
        };
        for i in 0..=200 {
            let t = i as f64 / 200.0;
            let a = cdd.hamiltonian(t, Side::Right).unwrap();
            let b = nhqt.hamiltonian(t, Side::Right).unwrap();
            assert!(a.distance(&b) <= 1e-10, "nhqt at {t}");
            if let Ok(l) = lr.drives(t, Side::Right) {
                let c = cdd.drives(t, Side::Right).unwrap();
                assert!((l.omega0 - c.omega0).abs() <= 1e-10 && (l.omega1 - c.omega1).abs() <= 1e-10, "lr at {t}");
            }
        }
    }

    #[test]
    fn cd_decomposition_and_constants() {
        let p = ControlParams::new(
            ScheduleFn::sin_half(FRAC_PI_2, T),
            ScheduleFn::Constant(PI / 8.0),
            Interval::new(0.0, T).unwrap(),
        );
        let c = derive_cd_controls(&p, None, &grid()).unwrap();
        let d0 = c.drives(0.0, Side::Right).unwrap();
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let d = c.drives(t, Side::Right).unwrap();
            assert_eq!(d.delta, d0.delta);
            assert!((d.omega0.hypot(d.omega1) - PI).abs() < 1e-12);
            let (h0, hc) = c.decomposition(t, Side::Right).unwrap();
            assert!((&h0 + &hc).distance(&c.hamiltonian(t, Side::Right).unwrap()) == 0.0);
        }
        assert!((d0.delta - 2.0 * PI).abs() < 1e-12);
        let bad = ControlParams::new(
            ScheduleFn::Constant(0.1),
            ScheduleFn::Constant(FRAC_PI_2),
            Interval::new(0.0, T).unwrap(),
        );
        assert!(matches!(derive_cd_controls(&bad, None, &grid()), Err(Error::SingularControl { .. })));
    }

    #[test]
    fn holonomic_gate_examples() {
        let g = HolonomicGate::new(FRAC_PI_2, 0.0, PI);
        assert!(g.matrix.distance(&pauli_x()) < 1e-15);
        assert!(HolonomicGate::new(0.3, 0.0, 0.0).matrix.distance(&SquareOperator::identity(2).unwrap()) < 1e-15);
    }

    proptest! {
        #[test]
        fn holonomic_gate_is_unitary(theta in -4.0f64..4.0, varphi in -4.0f64..4.0, gamma in -7.0f64..7.0) {
            prop_assert!(HolonomicGate::new(theta, varphi, gamma).matrix.unitarity_defect() <= 1e-12);
        }

        #[test]
        fn derived_hamiltonians_are_hermitian(t in 0.0f64..1.0) {
            let c = derive_universal_controls(&fig2(), FRAC_PI_2, &grid()).unwrap();
            prop_assert!(c.hamiltonian(t, Side::Right).unwrap().hermiticity_defect() <= 1e-12);
        }
    }
}
