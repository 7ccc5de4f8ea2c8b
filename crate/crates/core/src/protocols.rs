//! Scenario runner: schedules -> derived drives -> propagation -> report.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fmt;

use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::fourlevel::{derive_fourlevel_controls, FourLevelControls};
use crate::frames::{
    eligible_paths, residual_profile, AncillaryFrame, ClosedForm, ResidualSample, DEFAULT_RESIDUAL_TOL,
};
use crate::integrator::{propagate_carried, propagate_state, propagate_unitary, TimeGrid, MIN_STEPS};
use crate::lambda3::{
    derive_cd_controls, derive_cdd_controls, derive_lr_controls, derive_nhqt_controls, derive_universal_controls,
    Lambda3Controls, Perturbation,
};
use crate::qcore::{Hamiltonian, Side, SquareOperator, StateVector};
use crate::schedules::{
    stage_schedule_cyclic3, stage_schedule_cyclic4, ControlParams, Cyclic3Stage, Cyclic4Stage, Interval, ScheduleFn,
    CYCLIC3_PERIOD,
};

/// Default steps per unit `T`.
pub const DEFAULT_STEPS: usize = 10_000;
/// Step counts are rounded up to a multiple of this so that every shipped
/// checkpoint (quoted to 0.01 T) and stage junction lands on a node.
pub const STEP_QUANTUM: usize = 100;
/// Constant `phi` of the invariant-based protocol.
pub const LR_PHI: f64 = 0.2527;
/// Static `theta` of the dressed-state protocol.
pub const CDD_THETA: f64 = -FRAC_PI_4;
/// Fixed `phi` of the counterdiabatic protocol.
pub const CD_PHI: f64 = PI / 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKind {
    Universal,
    Nhqt,
    Lr,
    Cdd,
    Cd,
    Cyclic3,
    Cyclic4,
    Robustness,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 8] = [
        ProtocolKind::Universal,
        ProtocolKind::Nhqt,
        ProtocolKind::Lr,
        ProtocolKind::Cdd,
        ProtocolKind::Cd,
        ProtocolKind::Cyclic3,
        ProtocolKind::Cyclic4,
        ProtocolKind::Robustness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Universal => "universal",
            ProtocolKind::Nhqt => "nhqt",
            ProtocolKind::Lr => "lr",
            ProtocolKind::Cdd => "cdd",
            ProtocolKind::Cd => "cd",
            ProtocolKind::Cyclic3 => "cyclic3",
            ProtocolKind::Cyclic4 => "cyclic4",
            ProtocolKind::Robustness => "robustness",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::config("protocol", format!("unknown protocol `{name}`")))
    }

    pub fn description(self) -> &'static str {
        match self {
            ProtocolKind::Universal => "full-rank Lambda-system transfer |0> -> |1>",
            ProtocolKind::Nhqt => "nonadiabatic holonomic gate with a phase jump at T/2",
            ProtocolKind::Lr => "invariant-based transfer along a single path",
            ProtocolKind::Cdd => "dressed-state counterdiabatic transfer",
            ProtocolKind::Cd => "counterdiabatic transfer with a fixed mixing angle",
            ProtocolKind::Cyclic3 => "cyclic transfer |0> -> |e> -> |1> -> |0>, period 3T/2",
            ProtocolKind::Cyclic4 => "four-level cyclic transfer |2> -> |0> -> |1> -> |2>",
            ProtocolKind::Robustness => "cyclic3 under a multiplicative Omega_0 error",
        }
    }

    pub fn levels(self) -> usize {
        if self == ProtocolKind::Cyclic4 {
            4
        } else {
            3
        }
    }

    pub fn is_cyclic(self) -> bool {
        matches!(self, ProtocolKind::Cyclic3 | ProtocolKind::Cyclic4 | ProtocolKind::Robustness)
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Level labels in basis order.
pub fn level_labels(levels: usize) -> &'static [&'static str] {
    if levels == 4 {
        &["0", "1", "e", "2"]
    } else {
        &["0", "1", "e"]
    }
}

/// Basis index of `|e>`.
pub const EXCITED: usize = 2;
/// Basis index of `|2>` in the four-level system.
pub const LEVEL_TWO: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observable {
    /// Population of a basis level at the checkpoint time.
    Population(usize),
    /// Largest population of a level over the whole run.
    MaxPopulation(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Expectation {
    AtLeast(f64),
    AtMost(f64),
    Within { value: f64, tol: f64 },
}

impl Expectation {
    pub fn accepts(&self, x: f64) -> bool {
        match *self {
            Expectation::AtLeast(v) => x >= v,
            Expectation::AtMost(v) => x <= v,
            Expectation::Within { value, tol } => (x - value).abs() <= tol,
        }
    }
}

impl fmt::Display for Expectation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expectation::AtLeast(v) => write!(f, ">= {v}"),
            Expectation::AtMost(v) => write!(f, "<= {v}"),
            Expectation::Within { value, tol } => write!(f, "{value} +/- {tol}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub label: String,
    /// In units of `T`; ignored for `MaxPopulation`.
    pub at: f64,
    pub observable: Observable,
    pub expectation: Expectation,
}

impl Checkpoint {
    pub fn population(level: usize, levels: usize, at: f64, expectation: Expectation) -> Self {
        let label = format!("P_{}({}T)", level_labels(levels)[level], fmt_fraction(at));
        Checkpoint { label, at, observable: Observable::Population(level), expectation }
    }

    pub fn max_population(level: usize, levels: usize, expectation: Expectation) -> Self {
        let label = format!("max P_{}", level_labels(levels)[level]);
        Checkpoint { label, at: 0.0, observable: Observable::MaxPopulation(level), expectation }
    }
}

fn fmt_fraction(x: f64) -> String {
    let s = format!("{x:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointResult {
    pub checkpoint: Checkpoint,
    pub measured: f64,
    pub passed: bool,
}

/// Where the multiplicative `Omega_0` error acts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorScope {
    #[default]
    WholeProcess,
    /// Only the given stage (1-based) of every loop.
    SingleStage(usize),
}

/// Optional replacements for the default schedules of single-stage protocols.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScheduleOverrides {
    pub theta: Option<ScheduleFn>,
    pub phi: Option<ScheduleFn>,
    pub chi: Option<ScheduleFn>,
    pub alpha: Option<ScheduleFn>,
    pub beta: Option<ScheduleFn>,
}

impl ScheduleOverrides {
    pub fn is_empty(&self) -> bool {
        *self == ScheduleOverrides::default()
    }

    fn apply(&self, mut p: ControlParams) -> ControlParams {
        if let Some(s) = &self.theta {
            p.theta = s.clone();
        }
        if let Some(s) = &self.phi {
            p.phi = s.clone();
        }
        if let Some(s) = &self.chi {
            p.chi = s.clone();
        }
        if let Some(s) = &self.alpha {
            p.alpha = s.clone();
        }
        if let Some(s) = &self.beta {
            p.beta = s.clone();
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSpec {
    pub kind: ProtocolKind,
    pub duration: f64,
    /// Steps per unit `T`, rounded up to a multiple of [`STEP_QUANTUM`].
    pub steps: usize,
    pub loop_count: usize,
    /// Holonomic phase parameter; the jump of `alpha` at `T/2` is `2 gamma`.
    pub gamma: f64,
    /// Relative phase `phi_1 - phi_0` of the holonomic protocol.
    pub varphi: f64,
    /// Fixed drive phase `phi_0` of the universal rule.
    pub phi0: f64,
    /// Constant `Omega` of the fixed-angle counterdiabatic protocol.
    pub reference_intensity: Option<f64>,
    pub initial_state: Option<StateVector>,
    pub checkpoints: Vec<Checkpoint>,
    pub overrides: ScheduleOverrides,
    /// Relative von Neumann tolerance.
    pub residual_tol: f64,
    pub perturbation: Perturbation,
    pub error_scope: ErrorScope,
}

impl ProtocolSpec {
    /// Defaults are the reference configuration of each protocol.
    pub fn new(kind: ProtocolKind) -> Self {
        ProtocolSpec {
            kind,
            duration: 1.0,
            steps: DEFAULT_STEPS,
            loop_count: 1,
            gamma: PI,
            varphi: 0.0,
            phi0: FRAC_PI_2,
            reference_intensity: None,
            initial_state: None,
            checkpoints: default_checkpoints(kind, 1),
            overrides: ScheduleOverrides::default(),
            residual_tol: DEFAULT_RESIDUAL_TOL,
            perturbation: Perturbation::default(),
            error_scope: ErrorScope::WholeProcess,
        }
    }

    pub fn with_loops(mut self, loops: usize) -> Self {
        self.loop_count = loops;
        self.checkpoints = default_checkpoints(self.kind, loops);
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn levels(&self) -> usize {
        self.kind.levels()
    }

    /// Steps per `T` after rounding.
    pub fn effective_steps(&self) -> usize {
        self.steps.div_ceil(STEP_QUANTUM) * STEP_QUANTUM
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::config("T", "must be a positive number"));
        }
        if self.steps < MIN_STEPS {
            return Err(Error::config("steps", format!("must be at least {MIN_STEPS}")));
        }
        if self.loop_count == 0 {
            return Err(Error::config("loop_count", "must be at least 1"));
        }
        if self.kind.is_cyclic() && !self.overrides.is_empty() {
            return Err(Error::config("schedules", "cyclic protocols use fixed stage schedules"));
        }
        if !self.kind.is_cyclic() && self.loop_count != 1 {
            return Err(Error::config("loop_count", "only cyclic protocols loop"));
        }
        if !(self.residual_tol.is_finite() && self.residual_tol > 0.0) {
            return Err(Error::config("tolerances.residual", "must be positive"));
        }
        if let ErrorScope::SingleStage(s) = self.error_scope {
            let stages = if self.kind == ProtocolKind::Cyclic4 { 3 } else { 2 };
            if s == 0 || s > stages {
                return Err(Error::config("alpha_scan.scope", format!("stage must be in 1..={stages}")));
            }
        }
        for c in &self.checkpoints {
            let level = match c.observable {
                Observable::Population(l) | Observable::MaxPopulation(l) => l,
            };
            if level >= self.levels() {
                return Err(Error::config("checkpoints", format!("level index {level} out of range")));
            }
            let bound = match c.expectation {
                Expectation::AtLeast(v) | Expectation::AtMost(v) => v,
                Expectation::Within { value, .. } => value,
            };
            if !(0.0..=1.0).contains(&bound) {
                return Err(Error::config("checkpoints", format!("expected population {bound} outside [0, 1]")));
            }
        }
        if let Some(psi) = &self.initial_state {
            if psi.dim() != self.levels() {
                return Err(Error::DimensionMismatch { expected: self.levels(), found: psi.dim() });
            }
            psi.require_normalized()?;
        }
        Ok(())
    }

    pub fn initial(&self) -> StateVector {
        self.initial_state.clone().unwrap_or_else(|| {
            let level = if self.kind == ProtocolKind::Cyclic4 { LEVEL_TWO } else { 0 };
            StateVector::basis(self.levels(), level).expect("valid basis state")
        })
    }

    /// Total simulated time.
    pub fn total_time(&self) -> f64 {
        if self.kind.is_cyclic() {
            CYCLIC3_PERIOD * self.duration * self.loop_count as f64
        } else {
            self.duration
        }
    }
}

/// Checkpoints quoted for each protocol.
pub fn default_checkpoints(kind: ProtocolKind, loops: usize) -> Vec<Checkpoint> {
    use Expectation::*;
    let n = kind.levels();
    let pop = |level, at, e| Checkpoint::population(level, n, at, e);
    match kind {
        ProtocolKind::Universal | ProtocolKind::Cd => {
            vec![pop(1, 1.0, AtLeast(0.999)), Checkpoint::max_population(EXCITED, n, AtMost(1e-3))]
        }
        ProtocolKind::Nhqt => vec![pop(EXCITED, 0.5, Within { value: 0.5, tol: 0.01 }), pop(1, 1.0, AtLeast(0.999))],
        ProtocolKind::Lr => vec![pop(EXCITED, 0.5, Within { value: 0.22, tol: 0.02 }), pop(1, 1.0, AtLeast(0.999))],
        ProtocolKind::Cdd => vec![pop(EXCITED, 0.65, Within { value: 0.5, tol: 0.02 }), pop(1, 1.0, AtLeast(0.999))],
        ProtocolKind::Cyclic3 => {
            let mut v = Vec::new();
            for k in 0..loops {
                let s = CYCLIC3_PERIOD * k as f64;
                v.push(pop(EXCITED, s + 0.5, AtLeast(0.99)));
                v.push(pop(1, s + 1.0, AtLeast(0.99)));
                v.push(pop(0, s + 1.5, AtLeast(0.99)));
            }
            v.push(pop(0, 0.82, Within { value: 0.08, tol: 0.02 }));
            v
        }
        ProtocolKind::Cyclic4 => {
            let mut v = Vec::new();
            for k in 0..loops {
                let s = CYCLIC3_PERIOD * k as f64;
                v.push(pop(0, s + 0.5, AtLeast(0.99)));
                v.push(pop(1, s + 1.0, AtLeast(0.99)));
                v.push(pop(LEVEL_TWO, s + 1.5, AtLeast(0.99)));
            }
            v.push(pop(EXCITED, 0.31, Within { value: 0.42, tol: 0.03 }));
            v.push(pop(1, 0.31, Within { value: 0.02, tol: 0.01 }));
            v
        }
        ProtocolKind::Robustness => {
            vec![pop(EXCITED, 0.5, AtLeast(0.91)), pop(1, 1.0, AtLeast(0.91)), pop(0, 1.5, AtLeast(0.91))]
        }
    }
}

/// Default schedules of the single-stage protocols on `[0, T]`.
pub fn default_params(spec: &ProtocolSpec) -> Result<ControlParams> {
    let t = spec.duration;
    let span = Interval::new(0.0, t)?;
    let p = match spec.kind {
        ProtocolKind::Universal => {
            ControlParams::new(ScheduleFn::sin_half(FRAC_PI_2, t), ScheduleFn::cos_half(FRAC_PI_2, t), span)
        }
        ProtocolKind::Nhqt => ControlParams::new(ScheduleFn::Constant(FRAC_PI_2), ScheduleFn::cos_full(PI, t), span)
            .with_alpha(ScheduleFn::step(0.0, 0.5 * t, 2.0 * spec.gamma)),
        ProtocolKind::Lr => ControlParams::new(
            ScheduleFn::LinearRamp { intercept: PI, slope: -PI / (2.0 * t) },
            ScheduleFn::Constant(LR_PHI),
            span,
        ),
        ProtocolKind::Cdd => ControlParams::new(ScheduleFn::Constant(CDD_THETA), ScheduleFn::cos_half(PI, t), span),
        ProtocolKind::Cd => ControlParams::new(ScheduleFn::sin_half(FRAC_PI_2, t), ScheduleFn::Constant(CD_PHI), span),
        other => {
            return Err(Error::ContractViolation(format!("{other} has no single-stage schedule")));
        }
    };
    Ok(spec.overrides.apply(p))
}

/// A concrete driven system on one stage.
#[derive(Debug, Clone, PartialEq)]
pub enum System {
    Lambda3(Lambda3Controls),
    FourLevel(FourLevelControls),
}

/// One row of drive values; `omega2` only for four-level systems.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DriveRow {
    pub omega0: f64,
    pub omega1: f64,
    pub omega2: Option<f64>,
    pub omega_a: f64,
    pub delta: f64,
    pub phi0: f64,
    pub phi1: f64,
    pub phi_a: f64,
}

impl System {
    pub fn drive_row(&self, t: f64, side: Side) -> Result<DriveRow> {
        match self {
            System::Lambda3(c) => {
                let d = c.drives(t, side)?;
                Ok(DriveRow {
                    omega0: d.omega0,
                    omega1: d.omega1,
                    omega2: None,
                    omega_a: d.omega_a,
                    delta: d.delta,
                    phi0: d.phi0,
                    phi1: d.phi1,
                    phi_a: d.phi_a,
                })
            }
            System::FourLevel(c) => {
                let d = c.drives(t, side)?;
                Ok(DriveRow {
                    omega0: d.omega0,
                    omega1: d.omega1,
                    omega2: Some(d.omega2),
                    omega_a: d.omega_a,
                    delta: 0.0,
                    phi0: crate::fourlevel::PHI0,
                    phi1: crate::fourlevel::PHI1,
                    phi_a: crate::fourlevel::PHI_A,
                })
            }
        }
    }

    pub fn frame(&self) -> Box<dyn AncillaryFrame + Send + Sync> {
        match self {
            System::Lambda3(c) => c.frame(),
            System::FourLevel(c) => Box::new(c.frame()),
        }
    }

    pub fn advertised_paths(&self) -> Vec<usize> {
        match self {
            System::Lambda3(c) => c.rule.advertised_paths(),
            System::FourLevel(c) => c.advertised_paths(),
        }
    }

    pub fn perturbation(&self) -> Perturbation {
        match self {
            System::Lambda3(c) => c.perturbation,
            System::FourLevel(c) => c.perturbation,
        }
    }

    fn set_perturbation(&mut self, p: Perturbation) {
        match self {
            System::Lambda3(c) => c.perturbation = p,
            System::FourLevel(c) => c.perturbation = p,
        }
    }
}

impl Hamiltonian for System {
    fn dim(&self) -> usize {
        match self {
            System::Lambda3(c) => c.dim(),
            System::FourLevel(c) => c.dim(),
        }
    }
    fn at(&self, t: f64, side: Side) -> Result<SquareOperator> {
        match self {
            System::Lambda3(c) => c.at(t, side),
            System::FourLevel(c) => c.at(t, side),
        }
    }
    fn jump_times(&self) -> Vec<f64> {
        match self {
            System::Lambda3(c) => c.jump_times(),
            System::FourLevel(c) => c.jump_times(),
        }
    }
}

/// One stage of a run.
#[derive(Debug, Clone)]
pub struct Segment {
    pub label: String,
    pub system: System,
    pub grid: TimeGrid,
}

/// Derives the stages of a protocol, applying the configured perturbation in
/// its scope.
pub fn build_segments(spec: &ProtocolSpec) -> Result<Vec<Segment>> {
    spec.validate()?;
    let t = spec.duration;
    let per_t = spec.effective_steps();
    let grid_for = |p: &ControlParams| {
        let n = (per_t as f64 * p.duration() / t).round() as usize;
        TimeGrid::new(p.interval.start, p.interval.end, n)
    };
    let mut segments = Vec::new();
    match spec.kind {
        ProtocolKind::Cyclic3 | ProtocolKind::Robustness => {
            for k in 1..=spec.loop_count {
                for (i, stage) in [Cyclic3Stage::ToExcitedToOne, Cyclic3Stage::BackToZero].into_iter().enumerate() {
                    let p = stage_schedule_cyclic3(k, stage, t)?;
                    let grid = grid_for(&p)?;
                    let c = derive_universal_controls(&p, FRAC_PI_2, &grid)?;
                    segments.push(Segment {
                        label: format!("loop {k} stage {}", i + 1),
                        system: System::Lambda3(c),
                        grid,
                    });
                }
            }
        }
        ProtocolKind::Cyclic4 => {
            for k in 1..=spec.loop_count {
                for (i, stage) in Cyclic4Stage::ALL.into_iter().enumerate() {
                    let p = stage_schedule_cyclic4(stage, t)?.shifted(CYCLIC3_PERIOD * t * (k - 1) as f64)?;
                    let grid = grid_for(&p)?;
                    let c = derive_fourlevel_controls(&p, &grid)?;
                    segments.push(Segment {
                        label: format!("loop {k} stage {}", i + 1),
                        system: System::FourLevel(c),
                        grid,
                    });
                }
            }
        }
        kind => {
            let p = default_params(spec)?;
            let grid = grid_for(&p)?;
            let c = match kind {
                ProtocolKind::Universal => derive_universal_controls(&p, spec.phi0, &grid)?,
                ProtocolKind::Nhqt => derive_nhqt_controls(&p, spec.varphi, &grid)?,
                ProtocolKind::Lr => derive_lr_controls(&p, &grid)?,
                ProtocolKind::Cdd => derive_cdd_controls(&p, &grid)?,
                ProtocolKind::Cd => derive_cd_controls(&p, spec.reference_intensity, &grid)?,
                _ => unreachable!("cyclic kinds handled above"),
            };
            segments.push(Segment { label: kind.name().to_string(), system: System::Lambda3(c), grid });
        }
    }
    if !spec.perturbation.is_identity() {
        let stages_per_loop = if spec.kind == ProtocolKind::Cyclic4 { 3 } else { 2 };
        for (i, seg) in segments.iter_mut().enumerate() {
            let hit = match spec.error_scope {
                ErrorScope::WholeProcess => true,
                ErrorScope::SingleStage(s) => !spec.kind.is_cyclic() || i % stages_per_loop + 1 == s,
            };
            if hit {
                seg.system.set_perturbation(spec.perturbation);
            }
        }
    }
    Ok(segments)
}

/// Residual maximum of one tracked path over a run.
#[derive(Debug, Clone, PartialEq)]
pub struct PathResidual {
    pub path: usize,
    pub max_residual: f64,
    /// `max_t residual / ||H(t)||_F` over instants with `H != 0`.
    pub max_relative: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub t: f64,
    pub populations: Vec<f64>,
    pub drives: DriveRow,
    pub vn_residual_max: f64,
    pub norm_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub protocol: ProtocolKind,
    pub levels: usize,
    pub duration: f64,
    pub steps_per_t: usize,
    pub rows: Vec<ReportRow>,
    pub checkpoints: Vec<CheckpointResult>,
    pub residuals: Vec<PathResidual>,
    pub norm_drift: f64,
    /// `max_t ||U_closed - U_RK4||_F` for single-stage full-rank runs.
    pub closed_form_distance: Option<f64>,
}

impl RunReport {
    /// The framework's own consistency: every tracked path stayed transitionless.
    pub fn residuals_ok(&self) -> bool {
        self.residuals.iter().all(|r| r.passed)
    }

    /// A run is FAILED when residuals exceed tolerance, regardless of checkpoints.
    pub fn failed(&self) -> bool {
        !self.residuals_ok()
    }

    pub fn all_passed(&self) -> bool {
        !self.failed() && self.checkpoints.iter().all(|c| c.passed)
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    /// Population trace of one level.
    pub fn trace(&self, level: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.populations[level]).collect()
    }

    /// Row index of the node at `t`.
    pub fn row_at(&self, t: f64) -> Result<usize> {
        let i = self.rows.partition_point(|r| r.t < t);
        let dt = self.duration / self.steps_per_t as f64;
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter(|&j| j < self.rows.len())
            .find(|&j| (self.rows[j].t - t).abs() <= 1e-9 * dt)
            .ok_or(Error::TimeOffGrid { t })
    }

    pub fn population_at(&self, level: usize, t: f64) -> Result<f64> {
        Ok(self.rows[self.row_at(t)?].populations[level])
    }

    pub fn max_population(&self, level: usize) -> f64 {
        self.rows.iter().map(|r| r.populations[level]).fold(0.0, f64::max)
    }

    pub fn final_state_populations(&self) -> &[f64] {
        &self.rows.last().expect("reports are never empty").populations
    }
}

struct RunOptions {
    monitor_residuals: bool,
    closed_form: bool,
}

/// Runs any protocol.
pub fn run(spec: &ProtocolSpec) -> Result<RunReport> {
    let closed_form = spec.perturbation.is_identity() && !spec.kind.is_cyclic();
    run_with(spec, RunOptions { monitor_residuals: true, closed_form })
}

/// The three-level cyclic transfer (`Robustness` runs the same wiring).
pub fn run_cyclic3(spec: &ProtocolSpec) -> Result<RunReport> {
    if !matches!(spec.kind, ProtocolKind::Cyclic3 | ProtocolKind::Robustness) {
        return Err(Error::ContractViolation(format!("run_cyclic3 called with {}", spec.kind)));
    }
    run(spec)
}

pub fn run_cyclic4(spec: &ProtocolSpec) -> Result<RunReport> {
    if spec.kind != ProtocolKind::Cyclic4 {
        return Err(Error::ContractViolation(format!("run_cyclic4 called with {}", spec.kind)));
    }
    run(spec)
}

fn run_with(spec: &ProtocolSpec, opts: RunOptions) -> Result<RunReport> {
    let segments = build_segments(spec)?;
    let levels = spec.levels();
    let mut psi = spec.initial();
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut tracked: Vec<PathResidual> = Vec::new();
    let mut norm_drift: f64 = 0.0;
    for (si, seg) in segments.iter().enumerate() {
        let prop = if si == 0 {
            propagate_state(&seg.system, &psi, &seg.grid)?
        } else {
            propagate_carried(&seg.system, &psi, &seg.grid)?
        };
        norm_drift = norm_drift.max(prop.norm_drift);
        let paths = seg.system.advertised_paths();
        let profile: Option<Vec<ResidualSample>> = if opts.monitor_residuals {
            let frame = seg.system.frame();
            Some(residual_profile(&*frame, &seg.system, &prop.times)?)
        } else {
            None
        };
        if let Some(profile) = &profile {
            let eligible = eligible_paths(profile, seg.system.dim(), spec.residual_tol);
            for &k in &paths {
                let max_residual = profile.iter().map(|s| s.residuals[k]).fold(0.0, f64::max);
                let max_relative =
                    profile.iter().filter(|s| s.h_norm > 0.0).map(|s| s.residuals[k] / s.h_norm).fold(0.0, f64::max);
                let passed = eligible.contains(&k);
                match tracked.iter_mut().find(|r| r.path == k) {
                    Some(r) => {
                        r.max_residual = r.max_residual.max(max_residual);
                        r.max_relative = r.max_relative.max(max_relative);
                        r.passed &= passed;
                    }
                    None => tracked.push(PathResidual { path: k, max_residual, max_relative, passed }),
                }
            }
        }
        let first = if si == 0 { 0 } else { 1 };
        for i in first..prop.times.len() {
            let t = prop.times[i];
            let side = if i + 1 == prop.times.len() { Side::Left } else { Side::Right };
            let drives = seg.system.drive_row(t, side)?;
            let vn = profile
                .as_ref()
                .map(|p| paths.iter().map(|&k| p[i].residuals[k]).fold(0.0, f64::max))
                .unwrap_or(f64::NAN);
            let state = &prop.states[i];
            rows.push(ReportRow {
                t,
                populations: state.populations(),
                drives,
                vn_residual_max: vn,
                norm_error: state.normalization_defect(),
            });
        }
        psi = prop.final_state().clone();
    }
    tracked.sort_by_key(|r| r.path);

    let closed_form_distance = if opts.closed_form && segments.len() == 1 {
        let seg = &segments[0];
        let full = seg.system.advertised_paths().len() == seg.system.dim();
        if full {
            Some(closed_form_distance(seg, spec.residual_tol)?)
        } else {
            None
        }
    } else {
        None
    };

    let mut report = RunReport {
        protocol: spec.kind,
        levels,
        duration: spec.duration,
        steps_per_t: spec.effective_steps(),
        rows,
        checkpoints: Vec::new(),
        residuals: tracked,
        norm_drift,
        closed_form_distance,
    };
    report.checkpoints = evaluate_checkpoints(&report, &spec.checkpoints)?;
    Ok(report)
}

fn evaluate_checkpoints(report: &RunReport, checkpoints: &[Checkpoint]) -> Result<Vec<CheckpointResult>> {
    checkpoints
        .iter()
        .map(|c| {
            let measured = match c.observable {
                Observable::Population(level) => report.population_at(level, c.at * report.duration)?,
                Observable::MaxPopulation(level) => report.max_population(level),
            };
            Ok(CheckpointResult { checkpoint: c.clone(), measured, passed: c.expectation.accepts(measured) })
        })
        .collect()
}

fn closed_form_distance(seg: &Segment, tol: f64) -> Result<f64> {
    let frame = seg.system.frame();
    let cf = ClosedForm::full(&*frame, &seg.system, &seg.grid, tol)?;
    let rk4 = propagate_unitary(&seg.system, &seg.grid)?;
    let distances: Vec<Result<f64>> =
        exec::map_range(seg.grid.len(), |i| Ok(cf.operator_at(i)?.distance(&rk4.unitaries[i])));
    distances.into_iter().try_fold(0.0, |acc, d| Ok(f64::max(acc, d?)))
}

/// `max_t ||U_closed(t) - U_RK4(t)||_F` over the grid of a single-stage,
/// full-rank configuration.
pub fn closed_form_check(spec: &ProtocolSpec) -> Result<f64> {
    let segments = build_segments(spec)?;
    if segments.len() != 1 {
        return Err(Error::ContractViolation(format!("{} is not a single-stage protocol", spec.kind)));
    }
    closed_form_distance(&segments[0], spec.residual_tol)
}

/// Checkpoint populations of one robustness point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessPoint {
    pub alpha: f64,
    /// `P_e(T/2)`.
    pub p_excited: f64,
    /// `P_1(T)`.
    pub p_one: f64,
    /// `P_0(3T/2)`.
    pub p_zero: f64,
}

impl RobustnessPoint {
    pub fn min(&self) -> f64 {
        self.p_excited.min(self.p_one).min(self.p_zero)
    }
}

/// `points` equally spaced values over `[min, max]`.
pub fn alpha_grid(min: f64, max: f64, points: usize) -> Result<Vec<f64>> {
    if points == 0 || !(min.is_finite() && max.is_finite()) || max < min {
        return Err(Error::config("alpha_scan", "need points >= 1 and min <= max"));
    }
    if points == 1 {
        return Ok(vec![min]);
    }
    Ok((0..points).map(|i| min + (max - min) * i as f64 / (points - 1) as f64).collect())
}

/// 41 points over `[-0.2, 0.2]`.
pub fn default_alpha_grid() -> Vec<f64> {
    alpha_grid(-0.2, 0.2, 41).expect("valid grid")
}

/// Reruns one cyclic loop with `Omega_0 -> (1 + alpha) Omega_0` in `scope`
/// for every `alpha`, in parallel when `mode` allows.
pub fn robustness_scan(
    spec: &ProtocolSpec,
    alphas: &[f64],
    scope: ErrorScope,
    mode: ExecMode,
) -> Result<Vec<RobustnessPoint>> {
    if alphas.is_empty() {
        return Err(Error::config("alpha_scan.points", "must be at least 1"));
    }
    if let Some(a) = alphas.iter().find(|a| !(-0.5..=0.5).contains(*a)) {
        return Err(Error::config("alpha_scan", format!("alpha = {a} outside [-0.5, 0.5]")));
    }
    let base = ProtocolSpec {
        kind: ProtocolKind::Robustness,
        loop_count: 1,
        checkpoints: default_checkpoints(ProtocolKind::Robustness, 1),
        error_scope: scope,
        ..spec.clone()
    };
    base.validate()?;
    let t = base.duration;
    exec::map_with(mode, alphas, |&alpha| -> Result<RobustnessPoint> {
        let s = ProtocolSpec {
            perturbation: Perturbation { omega0_scale: 1.0 + alpha, ..base.perturbation },
            ..base.clone()
        };
        let r = run_with(&s, RunOptions { monitor_residuals: false, closed_form: false })?;
        Ok(RobustnessPoint {
            alpha,
            p_excited: r.population_at(EXCITED, 0.5 * t)?,
            p_one: r.population_at(1, t)?,
            p_zero: r.population_at(0, 1.5 * t)?,
        })
    })
    .into_iter()
    .collect()
}
