//! JSON run configuration.

use ancilla::protocols::{
    alpha_grid, default_alpha_grid, level_labels, Checkpoint, ErrorScope, Expectation, ProtocolKind, ProtocolSpec,
    ScheduleOverrides, DEFAULT_STEPS,
};
use ancilla::qcore::{StateVector, C64};
use ancilla::schedules::ScheduleFn;
use ancilla::Error;
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub protocol: String,
    #[serde(rename = "T", default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    pub loop_count: Option<usize>,
    pub gamma: Option<f64>,
    pub varphi: Option<f64>,
    pub phi0: Option<f64>,
    pub reference_intensity: Option<f64>,
    /// Amplitudes as `[re, im]` pairs in basis order.
    pub initial_state: Option<Vec<[f64; 2]>>,
    pub schedules: Option<SchedulesConfig>,
    pub alpha_scan: Option<AlphaScanConfig>,
    pub tolerances: Option<TolerancesConfig>,
    pub output_path: Option<String>,
}

fn default_duration() -> f64 {
    1.0
}

fn default_steps() -> usize {
    DEFAULT_STEPS
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulesConfig {
    pub theta: Option<ScheduleConfig>,
    pub phi: Option<ScheduleConfig>,
    pub chi: Option<ScheduleConfig>,
    pub alpha: Option<ScheduleConfig>,
    pub beta: Option<ScheduleConfig>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub family: String,
    #[serde(default)]
    pub params: Vec<f64>,
    pub inner: Option<Box<ScheduleConfig>>,
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<ScheduleFn, Error> {
        let inner = self.inner.as_ref().map(|i| i.build()).transpose()?;
        ScheduleFn::from_family(&self.family, &self.params, inner)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeConfig {
    #[default]
    WholeProcess,
    SingleStage,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaScanConfig {
    #[serde(default = "default_alpha_min")]
    pub min: f64,
    #[serde(default = "default_alpha_max")]
    pub max: f64,
    #[serde(default = "default_alpha_points")]
    pub points: usize,
    #[serde(default)]
    pub scope: ScopeConfig,
    /// 1-based stage for `single_stage`.
    pub stage: Option<usize>,
}

fn default_alpha_min() -> f64 {
    -0.2
}

fn default_alpha_max() -> f64 {
    0.2
}

fn default_alpha_points() -> usize {
    41
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesConfig {
    pub residual: Option<f64>,
    /// Replaces the protocol's default checkpoints.
    pub checkpoints: Option<Vec<CheckpointConfig>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    /// Level label: `0`, `1`, `e` or `2`.
    pub level: String,
    /// Time in units of `T`; omitted means the maximum over the run.
    pub at: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub value: Option<f64>,
    pub tol: Option<f64>,
}

impl CheckpointConfig {
    fn build(&self, levels: usize, index: usize) -> Result<Checkpoint, Error> {
        let field = format!("tolerances.checkpoints[{index}]");
        let bad = |reason: &str| Error::Config { field: field.clone(), reason: reason.to_string() };
        let level = level_labels(levels)
            .iter()
            .position(|l| *l == self.level)
            .ok_or_else(|| bad(&format!("unknown level `{}` for a {levels}-level system", self.level)))?;
        let expectation = match (self.min, self.max, self.value, self.tol) {
            (Some(v), None, None, None) => Expectation::AtLeast(v),
            (None, Some(v), None, None) => Expectation::AtMost(v),
            (None, None, Some(value), Some(tol)) if tol >= 0.0 => Expectation::Within { value, tol },
            _ => return Err(bad("give exactly one of `min`, `max`, or `value` with a non-negative `tol`")),
        };
        Ok(match self.at {
            Some(at) => Checkpoint::population(level, levels, at, expectation),
            None => Checkpoint::max_population(level, levels, expectation),
        })
    }
}

fn config_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config { field: field.to_string(), reason: reason.into() }
}

/// Parses and validates a JSON document.
pub fn parse_config(text: &[u8]) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = serde_json::from_slice(text).map_err(ConfigError::Json)?;
    cfg.to_spec().map_err(ConfigError::Invalid)?;
    Ok(cfg)
}

#[derive(Debug)]
pub enum ConfigError {
    Json(serde_json::Error),
    Invalid(Error),
}

impl RunConfig {
    pub fn kind(&self) -> Result<ProtocolKind, Error> {
        ProtocolKind::from_name(&self.protocol)
    }

    pub fn to_spec(&self) -> Result<ProtocolSpec, Error> {
        let kind = self.kind()?;
        let mut spec = ProtocolSpec::new(kind);
        spec.duration = self.duration;
        spec.steps = self.steps;
        if let Some(loops) = self.loop_count {
            if !kind.is_cyclic() && loops != 1 {
                return Err(config_err("loop_count", "only cyclic protocols loop"));
            }
            spec = spec.with_loops(loops);
        }
        let only = |field: &str, value: Option<f64>, allowed: &[ProtocolKind]| -> Result<Option<f64>, Error> {
            match value {
                Some(v) if !allowed.contains(&kind) => {
                    Err(config_err(field, format!("not used by protocol `{kind}` (value {v})")))
                }
                Some(v) if !v.is_finite() => Err(config_err(field, "must be finite")),
                other => Ok(other),
            }
        };
        if let Some(g) = only("gamma", self.gamma, &[ProtocolKind::Nhqt])? {
            spec.gamma = g;
        }
        if let Some(v) = only("varphi", self.varphi, &[ProtocolKind::Nhqt])? {
            spec.varphi = v;
        }
        if let Some(v) = only("phi0", self.phi0, &[ProtocolKind::Universal])? {
            spec.phi0 = v;
        }
        spec.reference_intensity = only("reference_intensity", self.reference_intensity, &[ProtocolKind::Cd])?;
        if let Some(amps) = &self.initial_state {
            let v: Vec<C64> = amps.iter().map(|[re, im]| C64::new(*re, *im)).collect();
            if v.len() != kind.levels() {
                return Err(config_err(
                    "initial_state",
                    format!("expected {} amplitudes, got {}", kind.levels(), v.len()),
                ));
            }
            let psi = StateVector::new(v).and_then(|psi| psi.require_normalized().map(|_| psi));
            spec.initial_state = Some(psi.map_err(|e| config_err("initial_state", e.to_string()))?);
        }
        if let Some(s) = &self.schedules {
            let build = |name: &str, c: &Option<ScheduleConfig>| {
                c.as_ref()
                    .map(|c| c.build().map_err(|e| config_err(&format!("schedules.{name}"), e.to_string())))
                    .transpose()
            };
            spec.overrides = ScheduleOverrides {
                theta: build("theta", &s.theta)?,
                phi: build("phi", &s.phi)?,
                chi: build("chi", &s.chi)?,
                alpha: build("alpha", &s.alpha)?,
                beta: build("beta", &s.beta)?,
            };
        }
        if let Some(t) = &self.tolerances {
            if let Some(r) = t.residual {
                spec.residual_tol = r;
            }
            if let Some(cps) = &t.checkpoints {
                spec.checkpoints =
                    cps.iter().enumerate().map(|(i, c)| c.build(kind.levels(), i)).collect::<Result<_, _>>()?;
            }
        }
        if let Some(scan) = &self.alpha_scan {
            if !matches!(kind, ProtocolKind::Cyclic3 | ProtocolKind::Robustness) {
                return Err(config_err("alpha_scan", "only the cyclic3 and robustness protocols can be scanned"));
            }
            spec.error_scope = scan.scope()?;
            scan.grid()?;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Alpha grid and scope for `scan`.
    pub fn scan_plan(&self) -> Result<(Vec<f64>, ErrorScope), Error> {
        match &self.alpha_scan {
            Some(s) => Ok((s.grid()?, s.scope()?)),
            None => Ok((default_alpha_grid(), ErrorScope::WholeProcess)),
        }
    }
}

impl AlphaScanConfig {
    fn scope(&self) -> Result<ErrorScope, Error> {
        match (self.scope, self.stage) {
            (ScopeConfig::WholeProcess, None) => Ok(ErrorScope::WholeProcess),
            (ScopeConfig::WholeProcess, Some(_)) => {
                Err(config_err("alpha_scan.stage", "only valid with scope single_stage"))
            }
            (ScopeConfig::SingleStage, Some(s)) if (1..=2).contains(&s) => Ok(ErrorScope::SingleStage(s)),
            (ScopeConfig::SingleStage, _) => Err(config_err("alpha_scan.stage", "single_stage needs stage 1 or 2")),
        }
    }

    fn grid(&self) -> Result<Vec<f64>, Error> {
        if self.min < -0.5 || self.max > 0.5 {
            return Err(config_err("alpha_scan", "alpha must lie within [-0.5, 0.5]"));
        }
        alpha_grid(self.min, self.max, self.points)
    }
}
