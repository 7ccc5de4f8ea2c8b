//! The invariant suite behind `ancilla verify`.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::frames::{
    cyclic_geometric_phase, eligible_paths, phase_table, residual_profile, rotated_hamiltonian,
    rotated_offdiagonal_norm, ClosedForm, DEFAULT_RESIDUAL_TOL,
};
use crate::integrator::{propagate_unitary, TimeGrid};
use crate::lambda3::{HolonomicGate, Perturbation};
use crate::protocols::{
    build_segments, closed_form_check, default_alpha_grid, robustness_scan, run, ErrorScope, ProtocolKind,
    ProtocolSpec, RunReport, DEFAULT_STEPS, EXCITED,
};
use crate::qcore::Side;

pub const DEFAULT_CLOSED_FORM_TOL: f64 = 1e-6;

/// Check names with a one-line description, in execution order.
pub const CHECKS: [(&str, &str); 16] = [
    ("orthonormality", "every ancillary frame stays orthonormal"),
    ("residual-diagonality", "von Neumann residual small <=> rotated Hamiltonian diagonal, both directions"),
    ("rank", "eligible paths: lr {2}, cyclic4 {0,2}, full rank elsewhere"),
    ("closed-form", "closed-form propagator vs RK4 for the full-rank universal protocol"),
    ("convergence", "RK4 error ratio under step halving is 16 +/- 3"),
    ("population-sum", "sum of populations is 1 within 1e-8 at every node"),
    ("reduction", "fixed-angle CD has constant Omega and Delta and reproduces the universal traces"),
    ("nhqt-gate", "holonomic gate, zero dynamical phase, cyclic geometric phase pi"),
    ("checkpoints-universal", "P_1(T) >= 0.999, max P_e <= 1e-3"),
    ("checkpoints-nhqt", "P_e(T/2) = 0.50 +/- 0.01, P_1(T) >= 0.999"),
    ("checkpoints-lr", "P_e(T/2) = 0.22 +/- 0.02, P_1(T) >= 0.999"),
    ("checkpoints-cdd", "P_e(0.65T) = 0.50 +/- 0.02, P_1(T) >= 0.999, asymmetric about T/2"),
    ("checkpoints-cd", "P_1(T) >= 0.999, max P_e <= 1e-3"),
    ("checkpoints-cyclic3", "two loops of |0> -> |e> -> |1> -> |0>, loop 2 repeats loop 1 within 1e-3"),
    ("checkpoints-cyclic4", "|2> -> |0> -> |1> -> |2> with the t = 0.31T snapshot"),
    ("robustness", "all checkpoints >= 0.91 for |alpha| <= 0.2, >= 0.99 at alpha = 0, |0>->|e> leg most sensitive"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    /// Zero `Omega_a` in every run; the residual monitor must catch it.
    pub fault_zero_omega_a: bool,
    pub closed_form_tol: f64,
    /// Run only these checks; empty means all.
    pub only: Vec<String>,
    /// Steps per `T`.
    pub steps: usize,
    pub mode: ExecMode,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            fault_zero_omega_a: false,
            closed_form_tol: DEFAULT_CLOSED_FORM_TOL,
            only: Vec::new(),
            steps: DEFAULT_STEPS,
            mode: ExecMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn check_names() -> impl Iterator<Item = &'static str> {
    CHECKS.iter().map(|(n, _)| *n)
}

/// Runs the selected checks. Failures inside a check are reported as failed
/// outcomes; only an unknown check name is an error.
pub fn verify(opts: &VerifyOptions) -> Result<Vec<CheckOutcome>> {
    if let Some(bad) = opts.only.iter().find(|n| !check_names().any(|c| c == n.as_str())) {
        return Err(Error::config("only", format!("unknown check `{bad}`")));
    }
    if !(opts.closed_form_tol.is_finite() && opts.closed_form_tol > 0.0) {
        return Err(Error::config("closed_form_tol", "must be positive"));
    }
    let ctx = Ctx { opts };
    Ok(CHECKS
        .iter()
        .map(|(n, _)| *n)
        .filter(|n| opts.only.is_empty() || opts.only.iter().any(|o| o == n))
        .map(|name| {
            let (passed, detail) = match ctx.dispatch(name) {
                Ok(r) => r,
                Err(e) => (false, format!("error[{}]: {e}", e.code())),
            };
            CheckOutcome { name, passed, detail }
        })
        .collect())
}

const CONFIGS: [ProtocolKind; 7] = [
    ProtocolKind::Universal,
    ProtocolKind::Nhqt,
    ProtocolKind::Lr,
    ProtocolKind::Cdd,
    ProtocolKind::Cd,
    ProtocolKind::Cyclic3,
    ProtocolKind::Cyclic4,
];

type Outcome = Result<(bool, String)>;

struct Ctx<'a> {
    opts: &'a VerifyOptions,
}

impl Ctx<'_> {
    fn spec(&self, kind: ProtocolKind) -> ProtocolSpec {
        let mut s = ProtocolSpec::new(kind).with_steps(self.opts.steps);
        if self.opts.fault_zero_omega_a {
            s.perturbation = Perturbation { zero_omega_a: true, ..Perturbation::default() };
        }
        s
    }

    fn dispatch(&self, name: &str) -> Outcome {
        match name {
            "orthonormality" => self.orthonormality(),
            "residual-diagonality" => self.residual_diagonality(),
            "rank" => self.rank(),
            "closed-form" => self.closed_form(),
            "convergence" => self.convergence(),
            "population-sum" => self.population_sum(),
            "reduction" => self.reduction(),
            "nhqt-gate" => self.nhqt_gate(),
            "checkpoints-universal" => self.checkpoints(ProtocolKind::Universal),
            "checkpoints-nhqt" => self.checkpoints(ProtocolKind::Nhqt),
            "checkpoints-lr" => self.checkpoints(ProtocolKind::Lr),
            "checkpoints-cdd" => self.checkpoints_cdd(),
            "checkpoints-cd" => self.checkpoints(ProtocolKind::Cd),
            "checkpoints-cyclic3" => self.checkpoints_cyclic3(),
            "checkpoints-cyclic4" => self.checkpoints(ProtocolKind::Cyclic4),
            "robustness" => self.robustness(),
            other => Err(Error::config("only", format!("unknown check `{other}`"))),
        }
    }

    fn orthonormality(&self) -> Outcome {
        let mut worst: f64 = 0.0;
        for kind in CONFIGS {
            for seg in build_segments(&self.spec(kind))? {
                let frame = seg.system.frame();
                for t in seg.grid.nodes().into_iter().step_by(10) {
                    for side in [Side::Left, Side::Right] {
                        worst = worst.max(frame.sample(t, side)?.gram_defect());
                    }
                }
            }
        }
        Ok((worst <= 1e-12, format!("max ||M^dagger M - 1||_F = {worst:.2e}")))
    }

    fn residual_diagonality(&self) -> Outcome {
        let tol = DEFAULT_RESIDUAL_TOL;
        let (mut samples, mut mismatches) = (0usize, 0usize);
        let mut ineligible = Vec::new();
        for kind in CONFIGS {
            for seg in build_segments(&self.spec(kind))? {
                let frame = seg.system.frame();
                let times: Vec<f64> = seg.grid.nodes().into_iter().step_by(10).collect();
                let profile = residual_profile(&*frame, &seg.system, &times)?;
                for s in &profile {
                    let h_rot = rotated_hamiltonian(&*frame, &seg.system, s.t)?;
                    for k in 0..frame.dim() {
                        samples += 1;
                        let diagonal = rotated_offdiagonal_norm(&h_rot, k) <= s.threshold(tol);
                        if diagonal != s.passes(k, tol) {
                            mismatches += 1;
                        }
                    }
                }
                let eligible = eligible_paths(&profile, frame.dim(), tol);
                let advertised = seg.system.advertised_paths();
                if !advertised.iter().all(|k| eligible.contains(k)) {
                    ineligible.push(format!("{kind} {}: advertised {advertised:?}, eligible {eligible:?}", seg.label));
                }
            }
        }
        let mut detail = format!("{samples} (t, k) samples, {mismatches} disagreements");
        if !ineligible.is_empty() {
            detail.push_str("; residual monitor tripped: ");
            detail.push_str(&ineligible.join("; "));
        }
        Ok((mismatches == 0 && ineligible.is_empty(), detail))
    }

    fn rank(&self) -> Outcome {
        let mut ok = true;
        let mut parts = Vec::new();
        for kind in CONFIGS {
            let mut union: Option<Vec<usize>> = None;
            for seg in build_segments(&self.spec(kind))? {
                let frame = seg.system.frame();
                let profile = residual_profile(&*frame, &seg.system, &seg.grid.nodes())?;
                let e = eligible_paths(&profile, frame.dim(), DEFAULT_RESIDUAL_TOL);
                union = Some(match union {
                    None => e,
                    Some(u) => u.into_iter().filter(|k| e.contains(k)).collect(),
                });
            }
            let got = union.unwrap_or_default();
            let want: Vec<usize> = match kind {
                ProtocolKind::Lr => vec![2],
                ProtocolKind::Cyclic4 => vec![0, 2],
                _ => vec![0, 1, 2],
            };
            ok &= got == want;
            parts.push(format!("{kind} {got:?}"));
        }
        Ok((ok, parts.join(", ")))
    }

    fn closed_form(&self) -> Outcome {
        let d = closed_form_check(&self.spec(ProtocolKind::Universal))?;
        let tol = self.opts.closed_form_tol;
        Ok((d <= tol, format!("max_t ||U_closed - U_RK4||_F = {d:.2e} (tol {tol:.0e})")))
    }

    fn convergence(&self) -> Outcome {
        let ratios = convergence_ratios(&self.spec(ProtocolKind::Universal), &[250, 500, 1000])?;
        let ok = ratios.iter().all(|r| (r - 16.0).abs() <= 3.0);
        let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
        Ok((ok, format!("error ratios {}", shown.join(", "))))
    }

    fn population_sum(&self) -> Outcome {
        let mut worst: f64 = 0.0;
        for kind in CONFIGS {
            let r = run(&self.spec(kind))?;
            for row in &r.rows {
                worst = worst.max((row.populations.iter().sum::<f64>() - 1.0).abs());
            }
        }
        Ok((worst <= 1e-8, format!("max |sum P_i - 1| = {worst:.2e}")))
    }

    fn reduction(&self) -> Outcome {
        let cd = run(&self.spec(ProtocolKind::Cd))?;
        let uni = run(&self.spec(ProtocolKind::Universal))?;
        let intensity = |d: &crate::protocols::DriveRow| d.omega0.hypot(d.omega1);
        let first = cd.rows[0].drives;
        let drift = cd
            .rows
            .iter()
            .map(|r| (intensity(&r.drives) - intensity(&first)).abs().max((r.drives.delta - first.delta).abs()))
            .fold(0.0, f64::max);
        let mut gap: f64 = 0.0;
        for (a, b) in cd.rows.iter().zip(&uni.rows) {
            for (p, q) in a.populations.iter().zip(&b.populations) {
                gap = gap.max((p - q).abs());
            }
        }
        let ok = drift <= 1e-12 && gap <= 1e-3 && cd.rows.len() == uni.rows.len();
        Ok((ok, format!("drive drift {drift:.1e}, max population gap vs universal {gap:.2e}")))
    }

    fn nhqt_gate(&self) -> Outcome {
        let report = nhqt_gate_report(&self.spec(ProtocolKind::Nhqt))?;
        let ok = report.gate_distance <= 1e-3
            && report.dynamical.abs() <= 1e-8
            && (report.cyclic_geometric - PI).abs() <= 1e-6;
        Ok((
            ok,
            format!(
                "gate distance {:.2e}, gamma_d {:.1e}, cyclic gamma_g {:.9} (raw {:.9})",
                report.gate_distance, report.dynamical, report.cyclic_geometric, report.raw_geometric
            ),
        ))
    }

    fn checkpoints(&self, kind: ProtocolKind) -> Outcome {
        let r = run(&self.spec(kind))?;
        Ok(summarize(&r))
    }

    fn checkpoints_cdd(&self) -> Outcome {
        let r = run(&self.spec(ProtocolKind::Cdd))?;
        let (ok, detail) = summarize(&r);
        let asym = (r.population_at(EXCITED, 0.3)? - r.population_at(EXCITED, 0.7)?).abs();
        Ok((ok && asym > 0.05, format!("{detail}; |P_e(0.3T) - P_e(0.7T)| = {asym:.3}")))
    }

    fn checkpoints_cyclic3(&self) -> Outcome {
        let r = run(&self.spec(ProtocolKind::Cyclic3).with_loops(2))?;
        let (ok, detail) = summarize(&r);
        let mut repeat: f64 = 0.0;
        for (level, at) in [(EXCITED, 0.5), (1, 1.0), (0, 1.5)] {
            repeat = repeat.max((r.population_at(level, at)? - r.population_at(level, at + 1.5)?).abs());
        }
        Ok((ok && repeat <= 1e-3, format!("{detail}; loop repeat gap {repeat:.1e}")))
    }

    fn robustness(&self) -> Outcome {
        let spec = self.spec(ProtocolKind::Cyclic3);
        let pts = robustness_scan(&spec, &default_alpha_grid(), ErrorScope::WholeProcess, self.opts.mode)?;
        let min_e = pts.iter().map(|p| p.p_excited).fold(1.0, f64::min);
        let min_1 = pts.iter().map(|p| p.p_one).fold(1.0, f64::min);
        let min_0 = pts.iter().map(|p| p.p_zero).fold(1.0, f64::min);
        let at_zero = pts.iter().min_by(|a, b| a.alpha.abs().total_cmp(&b.alpha.abs())).map(|p| p.min()).unwrap_or(0.0);
        let ok = min_e.min(min_1).min(min_0) >= 0.91 && at_zero >= 0.99 && min_e < min_1.min(min_0);
        Ok((
            ok,
            format!("min P_e(T/2) {min_e:.4}, min P_1(T) {min_1:.4}, min P_0(3T/2) {min_0:.4}, alpha=0 {at_zero:.4}"),
        ))
    }
}

fn summarize(r: &RunReport) -> (bool, String) {
    let mut parts: Vec<String> = r
        .checkpoints
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} = {:.4} (want {})", c.checkpoint.label, c.measured, c.checkpoint.expectation))
        .collect();
    if r.failed() {
        let bad: Vec<String> = r
            .residuals
            .iter()
            .filter(|p| !p.passed)
            .map(|p| format!("path {} residual {:.2e}", p.path, p.max_residual))
            .collect();
        parts.insert(0, format!("FAILED residual monitor: {}", bad.join(", ")));
    }
    let passed = r.checkpoints.iter().filter(|c| c.passed).count();
    let head = format!("{passed}/{} checkpoints", r.checkpoints.len());
    if parts.is_empty() {
        (true, head)
    } else {
        (false, format!("{head}; {}", parts.join("; ")))
    }
}

/// Error ratios `e(n_i) / e(n_{i+1})` of the RK4 propagator at `T` against
/// the closed-form operator of a single-stage full-rank configuration.
pub fn convergence_ratios(spec: &ProtocolSpec, steps: &[usize]) -> Result<Vec<f64>> {
    let segments = build_segments(spec)?;
    let [seg] = segments.as_slice() else {
        return Err(Error::ContractViolation(format!("{} is not a single-stage protocol", spec.kind)));
    };
    let frame = seg.system.frame();
    let exact = ClosedForm::full(&*frame, &seg.system, &seg.grid, spec.residual_tol)?.operator_at(seg.grid.steps)?;
    let errors = steps
        .iter()
        .map(|&n| {
            let g = TimeGrid::new(seg.grid.start, seg.grid.end, n)?;
            Ok(propagate_unitary(&seg.system, &g)?.final_unitary().distance(&exact))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(errors.windows(2).map(|w| w[0] / w[1]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NhqtGateReport {
    /// `min_phase ||U_01(T) - U(theta, varphi, gamma)||_F` on `{|0>, |1>}`.
    pub gate_distance: f64,
    pub dynamical: f64,
    /// Integrated geometric phase of the bright path including the jump.
    pub raw_geometric: f64,
    /// Gauge-invariant cyclic phase of the bright path, in `[0, 2 pi)`.
    pub cyclic_geometric: f64,
}

/// Gate and phase bookkeeping of the holonomic protocol (bright path 1).
pub fn nhqt_gate_report(spec: &ProtocolSpec) -> Result<NhqtGateReport> {
    if spec.kind != ProtocolKind::Nhqt {
        return Err(Error::ContractViolation(format!("nhqt_gate_report called with {}", spec.kind)));
    }
    let segments = build_segments(spec)?;
    let seg = &segments[0];
    let frame = seg.system.frame();
    let u = propagate_unitary(&seg.system, &seg.grid)?;
    let theta = match &spec.overrides.theta {
        Some(s) => s.value(0.0),
        None => FRAC_PI_2,
    };
    let gate = HolonomicGate::new(theta, spec.varphi, spec.gamma);
    let gate_distance = u.final_unitary().leading_block(2)?.distance_mod_phase(&gate.matrix);
    let table = phase_table(&*frame, &seg.system, &seg.grid)?;
    let last = table.last(1);
    Ok(NhqtGateReport {
        gate_distance,
        dynamical: last.dynamical,
        raw_geometric: last.geometric,
        cyclic_geometric: cyclic_geometric_phase(&*frame, &table, 1)?,
    })
}
