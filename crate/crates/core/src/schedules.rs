//! Named parametric control schedules with analytic derivatives.
//!
//! Every family returns `(value, rate)`. Piecewise-constant phases carry
//! their discontinuities as explicit [`PhaseJump`] events and have zero rate
//! everywhere; the jump itself is never differentiated.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::qcore::Side;

/// Relative slack when deciding whether `t` lies inside an interval.
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseJump {
    pub time: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) || end <= start {
            return Err(Error::ContractViolation(format!("invalid interval [{start}, {end}]")));
        }
        Ok(Interval { start, end })
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        let slack = DOMAIN_SLACK * self.duration().max(self.end.abs());
        t >= self.start - slack && t <= self.end + slack
    }

    pub fn check(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::OutOfDomain { t, start: self.start, end: self.end })
        }
    }
}

/// Closed set of schedule families.
///
/// The trigonometric families evaluate `amplitude * f(scale * pi * (t - offset) / d)`
/// with `d = 2 * period` for the half-period forms and `d = period` for the
/// full-period ones.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleFn {
    Constant(f64),
    /// `intercept + slope * t`.
    LinearRamp {
        intercept: f64,
        slope: f64,
    },
    SinHalfPeriod {
        amplitude: f64,
        period: f64,
        offset: f64,
        scale: f64,
    },
    CosHalfPeriod {
        amplitude: f64,
        period: f64,
        offset: f64,
        scale: f64,
    },
    SinFullPeriod {
        amplitude: f64,
        period: f64,
        offset: f64,
        scale: f64,
    },
    CosFullPeriod {
        amplitude: f64,
        period: f64,
        offset: f64,
        scale: f64,
    },
    /// `amplitude * (cos(inner(t)) - 1)`.
    CosineOfScheduleMinusOne {
        amplitude: f64,
        inner: Box<ScheduleFn>,
    },
    /// `inner(t - shift)`.
    ShiftedWindow {
        shift: f64,
        inner: Box<ScheduleFn>,
    },
    /// `initial` plus the deltas of every jump that has happened.
    PiecewiseConstant {
        initial: f64,
        jumps: Vec<PhaseJump>,
    },
}

/// Family names accepted by [`ScheduleFn::from_family`].
pub const FAMILY_NAMES: [&str; 9] = [
    "Constant",
    "LinearRamp",
    "SinHalfPeriod",
    "CosHalfPeriod",
    "SinFullPeriod",
    "CosFullPeriod",
    "CosineOfScheduleMinusOne",
    "ShiftedWindow",
    "PiecewiseConstant",
];

impl ScheduleFn {
    pub fn sin_half(amplitude: f64, period: f64) -> Self {
        ScheduleFn::SinHalfPeriod { amplitude, period, offset: 0.0, scale: 1.0 }
    }

    pub fn cos_half(amplitude: f64, period: f64) -> Self {
        ScheduleFn::CosHalfPeriod { amplitude, period, offset: 0.0, scale: 1.0 }
    }

    pub fn sin_full(amplitude: f64, period: f64) -> Self {
        ScheduleFn::SinFullPeriod { amplitude, period, offset: 0.0, scale: 1.0 }
    }

    pub fn cos_full(amplitude: f64, period: f64) -> Self {
        ScheduleFn::CosFullPeriod { amplitude, period, offset: 0.0, scale: 1.0 }
    }

    pub fn with_scale(self, new_scale: f64) -> Self {
        use ScheduleFn::*;
        match self {
            SinHalfPeriod { amplitude, period, offset, .. } => {
                SinHalfPeriod { amplitude, period, offset, scale: new_scale }
            }
            CosHalfPeriod { amplitude, period, offset, .. } => {
                CosHalfPeriod { amplitude, period, offset, scale: new_scale }
            }
            SinFullPeriod { amplitude, period, offset, .. } => {
                SinFullPeriod { amplitude, period, offset, scale: new_scale }
            }
            CosFullPeriod { amplitude, period, offset, .. } => {
                CosFullPeriod { amplitude, period, offset, scale: new_scale }
            }
            other => other,
        }
    }

    /// `amplitude * (cos(inner) - 1)`.
    pub fn cosine_minus_one(amplitude: f64, inner: ScheduleFn) -> Self {
        ScheduleFn::CosineOfScheduleMinusOne { amplitude, inner: Box::new(inner) }
    }

    pub fn shifted(shift: f64, inner: ScheduleFn) -> Self {
        if shift == 0.0 {
            inner
        } else {
            ScheduleFn::ShiftedWindow { shift, inner: Box::new(inner) }
        }
    }

    /// Heaviside step `delta * Theta(t - time)`, right-continuous.
    pub fn step(initial: f64, time: f64, delta: f64) -> Self {
        ScheduleFn::PiecewiseConstant { initial, jumps: vec![PhaseJump { time, delta }] }
    }

    /// Builds a schedule from a family name and a flat parameter list.
    ///
    /// | family | params |
    /// |---|---|
    /// | `Constant` | `[value]` |
    /// | `LinearRamp` | `[intercept, slope]` |
    /// | trigonometric | `[amplitude, period, offset = 0, scale = 1]` |
    /// | `CosineOfScheduleMinusOne` | `[amplitude]`, needs `inner` |
    /// | `ShiftedWindow` | `[shift]`, needs `inner` |
    /// | `PiecewiseConstant` | `[initial, t1, delta1, t2, delta2, ...]` |
    pub fn from_family(family: &str, params: &[f64], inner: Option<ScheduleFn>) -> Result<Self> {
        let bad = |reason: &str| Error::config(format!("schedule {family}"), reason);
        if let Some(x) = params.iter().find(|x| !x.is_finite()) {
            return Err(bad(&format!("non-finite parameter {x}")));
        }
        let exact = |n: usize| {
            if params.len() == n {
                Ok(())
            } else {
                Err(bad(&format!("expected {n} parameter(s), got {}", params.len())))
            }
        };
        let need_inner = |inner: Option<ScheduleFn>| inner.ok_or_else(|| bad("requires an inner schedule"));
        let trig = |make: fn(f64, f64, f64, f64) -> ScheduleFn| {
            if !(2..=4).contains(&params.len()) {
                return Err(bad("expected [amplitude, period, offset?, scale?]"));
            }
            if params[1] <= 0.0 {
                return Err(bad("period must be positive"));
            }
            Ok(make(params[0], params[1], params.get(2).copied().unwrap_or(0.0), params.get(3).copied().unwrap_or(1.0)))
        };
        if inner.is_some() && !matches!(family, "CosineOfScheduleMinusOne" | "ShiftedWindow") {
            return Err(bad("does not take an inner schedule"));
        }
        match family {
            "Constant" => {
                exact(1)?;
                Ok(ScheduleFn::Constant(params[0]))
            }
            "LinearRamp" => {
                exact(2)?;
                Ok(ScheduleFn::LinearRamp { intercept: params[0], slope: params[1] })
            }
            "SinHalfPeriod" => {
                trig(|amplitude, period, offset, scale| ScheduleFn::SinHalfPeriod { amplitude, period, offset, scale })
            }
            "CosHalfPeriod" => {
                trig(|amplitude, period, offset, scale| ScheduleFn::CosHalfPeriod { amplitude, period, offset, scale })
            }
            "SinFullPeriod" => {
                trig(|amplitude, period, offset, scale| ScheduleFn::SinFullPeriod { amplitude, period, offset, scale })
            }
            "CosFullPeriod" => {
                trig(|amplitude, period, offset, scale| ScheduleFn::CosFullPeriod { amplitude, period, offset, scale })
            }
            "CosineOfScheduleMinusOne" => {
                exact(1)?;
                Ok(ScheduleFn::cosine_minus_one(params[0], need_inner(inner)?))
            }
            "ShiftedWindow" => {
                exact(1)?;
                Ok(ScheduleFn::ShiftedWindow { shift: params[0], inner: Box::new(need_inner(inner)?) })
            }
            "PiecewiseConstant" => {
                if params.is_empty() || params.len().is_multiple_of(2) {
                    return Err(bad("expected [initial, t1, delta1, ...]"));
                }
                let jumps: Vec<PhaseJump> =
                    params[1..].chunks(2).map(|c| PhaseJump { time: c[0], delta: c[1] }).collect();
                if jumps.windows(2).any(|w| w[1].time <= w[0].time) {
                    return Err(bad("jump times must be strictly increasing"));
                }
                Ok(ScheduleFn::PiecewiseConstant { initial: params[0], jumps })
            }
            _ => Err(Error::config("family", format!("unknown schedule family `{family}`"))),
        }
    }

    /// Value and derivative at `t`, taking the right limit at jumps.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        self.eval_side(t, Side::Right)
    }

    /// Value and derivative, choosing the one-sided limit at jump instants.
    pub fn eval_side(&self, t: f64, side: Side) -> (f64, f64) {
        use ScheduleFn::*;
        match self {
            Constant(v) => (*v, 0.0),
            LinearRamp { intercept, slope } => (intercept + slope * t, *slope),
            SinHalfPeriod { amplitude, period, offset, scale } => {
                let w = scale * PI / (2.0 * period);
                let x = w * (t - offset);
                (amplitude * x.sin(), amplitude * w * x.cos())
            }
            CosHalfPeriod { amplitude, period, offset, scale } => {
                let w = scale * PI / (2.0 * period);
                let x = w * (t - offset);
                (amplitude * x.cos(), -amplitude * w * x.sin())
            }
            SinFullPeriod { amplitude, period, offset, scale } => {
                let w = scale * PI / period;
                let x = w * (t - offset);
                (amplitude * x.sin(), amplitude * w * x.cos())
            }
            CosFullPeriod { amplitude, period, offset, scale } => {
                let w = scale * PI / period;
                let x = w * (t - offset);
                (amplitude * x.cos(), -amplitude * w * x.sin())
            }
            CosineOfScheduleMinusOne { amplitude, inner } => {
                let (v, d) = inner.eval_side(t, side);
                (amplitude * (v.cos() - 1.0), -amplitude * v.sin() * d)
            }
            ShiftedWindow { shift, inner } => inner.eval_side(t - shift, side),
            PiecewiseConstant { initial, jumps } => {
                let v = jumps
                    .iter()
                    .filter(|j| match side {
                        Side::Right => j.time <= t,
                        Side::Left => j.time < t,
                    })
                    .map(|j| j.delta)
                    .fold(*initial, |acc, d| acc + d);
                (v, 0.0)
            }
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.eval(t).0
    }

    /// Domain-checked evaluation.
    pub fn eval_on(&self, interval: &Interval, t: f64) -> Result<(f64, f64)> {
        interval.check(t)?;
        Ok(self.eval(t))
    }

    /// Discontinuities in absolute time.
    pub fn jumps(&self) -> Vec<PhaseJump> {
        use ScheduleFn::*;
        match self {
            PiecewiseConstant { jumps, .. } => jumps.iter().filter(|j| j.delta != 0.0).copied().collect(),
            ShiftedWindow { shift, inner } => {
                inner.jumps().into_iter().map(|j| PhaseJump { time: j.time + shift, delta: j.delta }).collect()
            }
            CosineOfScheduleMinusOne { inner, .. } => inner.jumps(),
            _ => Vec::new(),
        }
    }

    /// True when the rate vanishes identically.
    pub fn is_static(&self) -> bool {
        use ScheduleFn::*;
        match self {
            Constant(_) | PiecewiseConstant { .. } => true,
            LinearRamp { slope, .. } => *slope == 0.0,
            SinHalfPeriod { amplitude, scale, .. }
            | CosHalfPeriod { amplitude, scale, .. }
            | SinFullPeriod { amplitude, scale, .. }
            | CosFullPeriod { amplitude, scale, .. } => *amplitude == 0.0 || *scale == 0.0,
            CosineOfScheduleMinusOne { amplitude, inner } => *amplitude == 0.0 || inner.is_static(),
            ShiftedWindow { inner, .. } => inner.is_static(),
        }
    }

    /// Static and free of jumps.
    pub fn is_constant(&self) -> bool {
        self.is_static() && self.jumps().is_empty()
    }
}

/// One sample of every control angle: `(value, rate)` pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSample {
    pub theta: (f64, f64),
    pub phi: (f64, f64),
    pub chi: (f64, f64),
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
}

/// The angles that parameterize an ancillary basis, on a shared interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlParams {
    pub theta: ScheduleFn,
    pub phi: ScheduleFn,
    /// Only used by four-level frames.
    pub chi: ScheduleFn,
    pub alpha: ScheduleFn,
    pub beta: ScheduleFn,
    pub interval: Interval,
}

impl ControlParams {
    /// `theta` and `phi` on `interval`, everything else zero.
    pub fn new(theta: ScheduleFn, phi: ScheduleFn, interval: Interval) -> Self {
        ControlParams {
            theta,
            phi,
            chi: ScheduleFn::Constant(0.0),
            alpha: ScheduleFn::Constant(0.0),
            beta: ScheduleFn::Constant(0.0),
            interval,
        }
    }

    pub fn with_alpha(mut self, alpha: ScheduleFn) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_beta(mut self, beta: ScheduleFn) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_chi(mut self, chi: ScheduleFn) -> Self {
        self.chi = chi;
        self
    }

    pub fn duration(&self) -> f64 {
        self.interval.duration()
    }

    /// Phase jumps of `alpha` and `beta` inside the interval, sorted by time.
    pub fn jumps(&self) -> Vec<PhaseJump> {
        let mut all: Vec<PhaseJump> = self
            .alpha
            .jumps()
            .into_iter()
            .chain(self.beta.jumps())
            .filter(|j| self.interval.contains(j.time))
            .collect();
        all.sort_by(|a, b| a.time.total_cmp(&b.time));
        all
    }

    pub fn jump_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self.jumps().iter().map(|j| j.time).collect();
        times.dedup();
        times
    }

    pub fn sample(&self, t: f64, side: Side) -> Result<ControlSample> {
        self.interval.check(t)?;
        Ok(self.sample_unchecked(t, side))
    }

    pub(crate) fn sample_unchecked(&self, t: f64, side: Side) -> ControlSample {
        ControlSample {
            theta: self.theta.eval_side(t, side),
            phi: self.phi.eval_side(t, side),
            chi: self.chi.eval_side(t, side),
            alpha: self.alpha.eval_side(t, side),
            beta: self.beta.eval_side(t, side),
        }
    }

    /// Same schedules, shifted in time by `shift`.
    pub fn shifted(&self, shift: f64) -> Result<Self> {
        Ok(ControlParams {
            theta: ScheduleFn::shifted(shift, self.theta.clone()),
            phi: ScheduleFn::shifted(shift, self.phi.clone()),
            chi: ScheduleFn::shifted(shift, self.chi.clone()),
            alpha: ScheduleFn::shifted(shift, self.alpha.clone()),
            beta: ScheduleFn::shifted(shift, self.beta.clone()),
            interval: Interval::new(self.interval.start + shift, self.interval.end + shift)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cyclic3Stage {
    /// Path `mu_2`: `|0> -> |e> -> |1>` over `[0, T]`.
    ToExcitedToOne,
    /// Path `mu_0`: `|1> -> |0>` over `[T, 3T/2]`.
    BackToZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cyclic4Stage {
    One,
    Two,
    Three,
}

impl Cyclic4Stage {
    pub const ALL: [Cyclic4Stage; 3] = [Cyclic4Stage::One, Cyclic4Stage::Two, Cyclic4Stage::Three];
}

/// Loop period of the three-level cycle, in units of `T`.
pub const CYCLIC3_PERIOD: f64 = 1.5;

/// Stage schedules of the `k`-th loop (`k >= 1`) of the three-level cycle.
///
/// Loop `k` is loop 1 translated by `3 (k - 1) T / 2`, so every loop passes
/// through the same states.
pub fn stage_schedule_cyclic3(k: usize, stage: Cyclic3Stage, period: f64) -> Result<ControlParams> {
    if k == 0 {
        return Err(Error::ContractViolation("loop index starts at 1".into()));
    }
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::ContractViolation(format!("invalid period {period}")));
    }
    let t = period;
    let first = match stage {
        Cyclic3Stage::ToExcitedToOne => ControlParams::new(
            ScheduleFn::cos_half(FRAC_PI_2, t),
            ScheduleFn::sin_full(FRAC_PI_2, t),
            Interval::new(0.0, t)?,
        ),
        Cyclic3Stage::BackToZero => ControlParams::new(
            ScheduleFn::cos_full(FRAC_PI_2, t),
            ScheduleFn::sin_full(FRAC_PI_2, t).with_scale(2.0),
            Interval::new(t, CYCLIC3_PERIOD * t)?,
        ),
    };
    first.shifted(CYCLIC3_PERIOD * t * (k - 1) as f64)
}

/// Stage schedules of the four-level cycle; each stage lasts `T/2`.
pub fn stage_schedule_cyclic4(stage: Cyclic4Stage, period: f64) -> Result<ControlParams> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::ContractViolation(format!("invalid period {period}")));
    }
    let t = period;
    let (phi, interval) = match stage {
        Cyclic4Stage::One => (ScheduleFn::cos_full(FRAC_PI_2, t), Interval::new(0.0, 0.5 * t)?),
        Cyclic4Stage::Two => (ScheduleFn::cos_full(FRAC_PI_2, t), Interval::new(0.5 * t, t)?),
        Cyclic4Stage::Three => (ScheduleFn::sin_full(FRAC_PI_2, t), Interval::new(t, 1.5 * t)?),
    };
    let chi = ScheduleFn::cosine_minus_one(FRAC_PI_2, phi.clone());
    let theta = match stage {
        Cyclic4Stage::One => ScheduleFn::sin_full(-FRAC_PI_2, t),
        Cyclic4Stage::Two | Cyclic4Stage::Three => chi.clone(),
    };
    Ok(ControlParams::new(theta, phi, interval).with_chi(chi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::SQRT_2;

    const T: f64 = 1.0;

    fn central_difference(s: &ScheduleFn, t: f64) -> f64 {
        let h = 1e-6 * T;
        (s.value(t + h) - s.value(t - h)) / (2.0 * h)
    }

    fn all_families() -> Vec<ScheduleFn> {
        vec![
            ScheduleFn::Constant(0.3),
            ScheduleFn::LinearRamp { intercept: PI, slope: -PI / (2.0 * T) },
            ScheduleFn::SinHalfPeriod { amplitude: 1.3, period: T, offset: 0.1, scale: 1.5 },
            ScheduleFn::CosHalfPeriod { amplitude: -0.7, period: 2.0 * T, offset: 0.0, scale: 1.0 },
            ScheduleFn::SinFullPeriod { amplitude: FRAC_PI_2, period: T, offset: 0.0, scale: 2.0 },
            ScheduleFn::CosFullPeriod { amplitude: PI, period: T, offset: -0.2, scale: 1.0 },
            ScheduleFn::cosine_minus_one(FRAC_PI_2, ScheduleFn::cos_full(FRAC_PI_2, T)),
            ScheduleFn::shifted(0.4, ScheduleFn::sin_half(2.0, T)),
            ScheduleFn::step(0.0, 0.5 * T, 2.0 * PI),
        ]
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut schedules = all_families();
        for k in 1..=2 {
            for stage in [Cyclic3Stage::ToExcitedToOne, Cyclic3Stage::BackToZero] {
                let p = stage_schedule_cyclic3(k, stage, T).unwrap();
                schedules.extend([p.theta, p.phi]);
            }
        }
        for stage in Cyclic4Stage::ALL {
            let p = stage_schedule_cyclic4(stage, T).unwrap();
            schedules.extend([p.theta, p.phi, p.chi]);
        }
        for s in &schedules {
            let jumps: Vec<f64> = s.jumps().iter().map(|j| j.time).collect();
            for i in 0..1000 {
                let t = (i as f64 + 0.5) / 1000.0 * 3.0 * T;
                if jumps.iter().any(|j| (j - t).abs() < 1e-5) {
                    continue;
                }
                let (_, d) = s.eval(t);
                let fd = central_difference(s, t);
                assert!((d - fd).abs() < 1e-6, "{s:?} at t={t}: {d} vs {fd}");
            }
        }
    }

    #[test]
    fn spec_examples() {
        let (v, d) = ScheduleFn::sin_half(FRAC_PI_2, T).eval(0.0);
        assert_eq!(v, 0.0);
        assert!((d - PI * PI / (4.0 * T)).abs() < 1e-15);

        assert_eq!(ScheduleFn::cos_half(FRAC_PI_2, T).eval(0.0), (FRAC_PI_2, -0.0));

        let lr = ScheduleFn::LinearRamp { intercept: PI, slope: -PI / (2.0 * T) };
        let (v, d) = lr.eval(T);
        assert!((v - FRAC_PI_2).abs() < 1e-15);
        assert!((d + PI / (2.0 * T)).abs() < 1e-15);
    }

    #[test]
    fn cyclic3_examples() {
        let p = stage_schedule_cyclic3(1, Cyclic3Stage::ToExcitedToOne, T).unwrap();
        assert!((p.theta.value(0.0) - FRAC_PI_2).abs() < 1e-15);
        assert!(p.phi.value(0.0).abs() < 1e-15);
        assert!((p.theta.value(0.5 * T) - PI * SQRT_2 / 4.0).abs() < 1e-12);
        assert!((p.theta.value(0.5 * T) - 1.1107).abs() < 1e-4);
        assert!((p.phi.value(0.5 * T) - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn cyclic3_loops_are_periodic_and_continuous() {
        let l1s1 = stage_schedule_cyclic3(1, Cyclic3Stage::ToExcitedToOne, T).unwrap();
        let l1s2 = stage_schedule_cyclic3(1, Cyclic3Stage::BackToZero, T).unwrap();
        let l2s1 = stage_schedule_cyclic3(2, Cyclic3Stage::ToExcitedToOne, T).unwrap();
        assert_eq!(l2s1.interval, Interval { start: 1.5 * T, end: 2.5 * T });
        // loop 2 starts where loop 1 started
        let a = l1s1.sample(0.0, Side::Right).unwrap();
        let b = l2s1.sample(1.5 * T, Side::Right).unwrap();
        assert!((a.theta.0 - b.theta.0).abs() <= 1e-12);
        assert!((a.phi.0 - b.phi.0).abs() <= 1e-12);
        // phi is continuous at the stage junctions; theta switches with the path
        assert!((l1s1.phi.value(T) - l1s2.phi.value(T)).abs() <= 1e-12);
        assert!((l1s2.phi.value(1.5 * T) - l2s1.phi.value(1.5 * T)).abs() <= 1e-12);
        assert!(stage_schedule_cyclic3(0, Cyclic3Stage::BackToZero, T).is_err());
    }

    #[test]
    fn cyclic4_examples() {
        let s1 = stage_schedule_cyclic4(Cyclic4Stage::One, T).unwrap();
        let x = s1.sample(0.0, Side::Right).unwrap();
        // chi = (pi/2)(cos(pi/2) - 1) = -pi/2, so mu_2(0) = -|2>
        assert!((x.phi.0 - FRAC_PI_2).abs() < 1e-15 && (x.chi.0 + FRAC_PI_2).abs() < 1e-15 && x.theta.0.abs() < 1e-15);
        let x = s1.sample(0.5 * T, Side::Right).unwrap();
        assert!(x.phi.0.abs() < 1e-15 && x.chi.0.abs() < 1e-15);
        assert!((x.theta.0 + FRAC_PI_2).abs() < 1e-15);

        let s3 = stage_schedule_cyclic4(Cyclic4Stage::Three, T).unwrap();
        let x = s3.sample(1.5 * T, Side::Right).unwrap();
        assert!((x.phi.0 + FRAC_PI_2).abs() < 1e-15);
        assert!((x.chi.0 + FRAC_PI_2).abs() < 1e-15);
        assert_eq!(x.theta, x.chi);
    }

    #[test]
    fn cyclic4_junctions() {
        let s: Vec<ControlParams> =
            Cyclic4Stage::ALL.iter().map(|&st| stage_schedule_cyclic4(st, T).unwrap()).collect();
        assert_eq!(s[0].interval.end, s[1].interval.start);
        assert_eq!(s[1].interval.end, s[2].interval.start);
        let t = 0.5 * T;
        assert!((s[0].phi.value(t) - s[1].phi.value(t)).abs() <= 1e-12);
        assert!((s[0].chi.value(t) - s[1].chi.value(t)).abs() <= 1e-12);
        // at T the path switches from mu_0 to mu_2 and the angles restart
        let end2 = s[1].sample(T, Side::Right).unwrap();
        let start3 = s[2].sample(T, Side::Right).unwrap();
        assert!((end2.phi.0 + FRAC_PI_2).abs() < 1e-15 && (end2.theta.0 + FRAC_PI_2).abs() < 1e-15);
        assert!(start3.phi.0.abs() < 1e-15 && start3.chi.0.abs() < 1e-15 && start3.theta.0.abs() < 1e-15);
    }

    #[test]
    fn phase_jump_limits() {
        let s = ScheduleFn::step(0.0, 0.5, 2.0 * PI);
        assert_eq!(s.eval_side(0.5, Side::Left), (0.0, 0.0));
        assert_eq!(s.eval_side(0.5, Side::Right), (2.0 * PI, 0.0));
        assert_eq!(s.jumps(), vec![PhaseJump { time: 0.5, delta: 2.0 * PI }]);
        let shifted = ScheduleFn::shifted(1.5, s);
        assert_eq!(shifted.jumps()[0].time, 2.0);
        assert!(shifted.is_static() && !shifted.is_constant());
    }

    #[test]
    fn domain_is_enforced() {
        let p = stage_schedule_cyclic4(Cyclic4Stage::Two, T).unwrap();
        assert!(matches!(p.sample(0.2, Side::Right), Err(Error::OutOfDomain { .. })));
        assert!(p.sample(0.5, Side::Right).is_ok());
        let i = Interval::new(0.0, 1.0).unwrap();
        assert!(ScheduleFn::Constant(1.0).eval_on(&i, 1.5).is_err());
    }

    #[test]
    fn family_construction() {
        let s = ScheduleFn::from_family("SinHalfPeriod", &[FRAC_PI_2, 1.0], None).unwrap();
        assert_eq!(s, ScheduleFn::sin_half(FRAC_PI_2, 1.0));
        let chi =
            ScheduleFn::from_family("CosineOfScheduleMinusOne", &[FRAC_PI_2], Some(ScheduleFn::cos_full(1.0, 1.0)));
        assert!(chi.is_ok());
        assert!(ScheduleFn::from_family("CosineOfScheduleMinusOne", &[1.0], None).is_err());
        assert!(ScheduleFn::from_family("Bogus", &[1.0], None).is_err());
        assert!(ScheduleFn::from_family("Constant", &[1.0, 2.0], None).is_err());
        let pc = ScheduleFn::from_family("PiecewiseConstant", &[0.0, 0.5, PI], None).unwrap();
        assert_eq!(pc, ScheduleFn::step(0.0, 0.5, PI));
    }

    proptest! {
        #[test]
        fn chi_rate_is_exact_chain_rule(t in 0.0f64..1.5, amp in -2.0f64..2.0) {
            let phi = ScheduleFn::sin_full(FRAC_PI_2, T);
            let chi = ScheduleFn::cosine_minus_one(amp, phi.clone());
            let (p, pd) = phi.eval(t);
            let (_, cd) = chi.eval(t);
            let expected = -amp * p.sin() * pd;
            prop_assert!((cd - expected).abs() <= 1e-15 * (1.0 + expected.abs()));
        }
    }
}
