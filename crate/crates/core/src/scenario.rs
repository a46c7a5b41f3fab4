//! JSON scenario format: ingestion, validation, and dotted-path overrides.
//!
//! A scenario file fully determines a run; identical files (and seeds)
//! produce bit-identical traces. The top-level `schema` key versions the
//! format. Unknown keys anywhere in the file are rejected so that typos
//! surface as validation errors instead of silently applying defaults.

use serde::{Deserialize, Serialize};

use crate::coordination::{Gains, TriggerConfig};
use crate::error::{Error, Result};
use crate::graph::{Digraph, NetworkSchedule, ScheduleSegment};
use crate::vehicle::{BezierTrajectory, PfConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Network quality-of-service parameters: integral connectivity must hold
/// with threshold `delta` on every window of length `window_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QosParams {
    pub window_s: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub duration_s: f64,
    /// Ordered pairs `[i, j]`: agent `i` receives from agent `j` (1-indexed).
    pub edges: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub cyclic: bool,
    pub segments: Vec<SegmentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub control_points: Vec<[f64; 3]>,
    pub t_f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedEnvelope {
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub gamma: Vec<f64>,
    pub gamma_dot: Vec<f64>,
    /// Vehicle start positions; defaults to the trajectory start points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 3]>>,
    /// Vehicle start velocities; defaults to the matched `ṗ_d(γ₀)·γ̇₀`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocities: Option<Vec<[f64; 3]>>,
}

/// One piece of the piecewise-constant reference rate: from time `t` on,
/// `γ̇_d = value` (until the next piece).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatePiece {
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    /// Per-axis bound of the random vehicle acceleration perturbation, m/s².
    /// Zero disables the hook.
    pub accel_max: f64,
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self { accel_max: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CommsMode {
    /// Samples are broadcast on trigger events and neighbors run the
    /// closed-form predictor between receptions.
    #[default]
    EventTriggered,
    /// Reference mode: every agent reads its neighbors' true states at all
    /// times (no events, zero estimation error).
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: u32,
    pub name: String,
    pub n: usize,
    pub gains: Gains,
    pub trigger: TriggerConfig,
    pub qos: QosParams,
    pub schedule: ScheduleSpec,
    pub trajectories: Vec<TrajectorySpec>,
    pub pf: PfConfig,
    pub speed_envelope: SpeedEnvelope,
    pub initial: InitialSpec,
    pub gamma_dot_d: Vec<RatePiece>,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    #[serde(default)]
    pub waive_connectivity_check: bool,
    #[serde(default)]
    pub comms: CommsMode,
}

impl ScenarioConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_json_value(v: serde_json::Value) -> Result<Self> {
        Ok(serde_json::from_value(v)?)
    }

    pub fn to_json_value(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }

    /// Reads a scenario file, applies `key=value` overrides, and validates.
    /// Returns the config together with any non-fatal warnings.
    pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<(Self, Vec<String>)> {
        let text = std::fs::read_to_string(path)?;
        let mut value: serde_json::Value = serde_json::from_str(&text)?;
        for assignment in overrides {
            let (path, val) = parse_override(assignment)?;
            apply_override(&mut value, &path, val)?;
        }
        let cfg = Self::from_json_value(value)?;
        let warnings = cfg.validate()?;
        Ok((cfg, warnings))
    }

    /// Number of integration steps; the final trace sample is at
    /// `steps · dt`.
    pub fn steps(&self) -> usize {
        ((self.t_end / self.dt).round() as usize).max(1)
    }

    /// Common arrival time of all trajectories.
    pub fn mission_t_f(&self) -> f64 {
        self.trajectories.first().map(|t| t.t_f).unwrap_or(0.0)
    }

    /// Reference rate at time `t` (right-continuous lookup).
    pub fn gamma_dot_d_at(&self, t: f64) -> f64 {
        let mut v = self.gamma_dot_d[0].value;
        for piece in &self.gamma_dot_d {
            if piece.t <= t {
                v = piece.value;
            } else {
                break;
            }
        }
        v
    }

    /// Largest |γ̈_d| of the reference profile. Zero for the piecewise
    /// constant profiles supported here (rate changes are jumps, not
    /// accelerations).
    pub fn gamma_ddot_d_max(&self) -> f64 {
        0.0
    }

    pub fn build_schedule(&self) -> Result<NetworkSchedule> {
        let segments = self
            .schedule
            .segments
            .iter()
            .map(|seg| {
                let graph = Digraph::new(self.n, seg.edges.iter().map(|e| (e[0], e[1])))?;
                Ok(ScheduleSegment { duration: seg.duration_s, graph })
            })
            .collect::<Result<Vec<_>>>()?;
        NetworkSchedule::new(segments, self.schedule.cyclic)
    }

    pub fn build_trajectories(&self) -> Result<Vec<BezierTrajectory>> {
        self.trajectories
            .iter()
            .map(|t| {
                BezierTrajectory::new(
                    t.control_points.iter().map(|&p| p.into()).collect(),
                    t.t_f,
                )
            })
            .collect()
    }

    /// Validates the whole scenario. Returns non-fatal warnings on success;
    /// collects every violation into the error otherwise.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut errors = Vec::new();
        let mut warnings = Vec::new();

        if self.schema != SCHEMA_VERSION {
            errors.push(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                self.schema
            ));
        }
        if self.n < 1 {
            errors.push("n must be at least 1".into());
        }
        if let Err(e) = self.gains.validate() {
            errors.push(e.to_string());
        }
        if let Err(e) = self.trigger.validate() {
            errors.push(e.to_string());
        }
        if let Err(e) = self.pf.validate() {
            errors.push(e.to_string());
        }
        if !(self.qos.window_s > 0.0) {
            errors.push(format!("qos.window_s must be positive, got {}", self.qos.window_s));
        }
        if !(self.qos.delta > 0.0) || self.qos.delta > self.qos.window_s {
            errors.push(format!(
                "qos.delta must satisfy 0 < delta ≤ window_s, got delta={} window_s={}",
                self.qos.delta, self.qos.window_s
            ));
        }
        match self.build_schedule() {
            Ok(s) => {
                if s.n() != self.n {
                    errors.push("schedule node count differs from n".into());
                }
            }
            Err(e) => errors.push(format!("schedule: {e}")),
        }
        if self.trajectories.len() != self.n {
            errors.push(format!(
                "expected {} trajectories, got {}",
                self.n,
                self.trajectories.len()
            ));
        }
        if let Err(e) = self.build_trajectories() {
            errors.push(format!("trajectories: {e}"));
        }
        if let Some(first) = self.trajectories.first() {
            if self
                .trajectories
                .iter()
                .any(|t| (t.t_f - first.t_f).abs() > 1e-12)
            {
                errors.push("all trajectories must share the same arrival time t_f".into());
            }
        }
        if self.initial.gamma.len() != self.n {
            errors.push(format!(
                "initial.gamma has length {}, expected {}",
                self.initial.gamma.len(),
                self.n
            ));
        }
        if self.initial.gamma_dot.len() != self.n {
            errors.push(format!(
                "initial.gamma_dot has length {}, expected {}",
                self.initial.gamma_dot.len(),
                self.n
            ));
        }
        if let Some(p) = &self.initial.positions {
            if p.len() != self.n {
                errors.push(format!("initial.positions has length {}, expected {}", p.len(), self.n));
            }
        }
        if let Some(v) = &self.initial.velocities {
            if v.len() != self.n {
                errors.push(format!("initial.velocities has length {}, expected {}", v.len(), self.n));
            }
        }
        let t_f = self.mission_t_f();
        for (i, &g) in self.initial.gamma.iter().enumerate() {
            if !(0.0..=t_f).contains(&g) {
                errors.push(format!(
                    "initial.gamma[{i}] = {g} outside the mission domain [0, {t_f}]"
                ));
            }
        }
        if self.gamma_dot_d.is_empty() {
            errors.push("gamma_dot_d profile must have at least one piece".into());
        } else {
            if self.gamma_dot_d[0].t != 0.0 {
                errors.push("the first gamma_dot_d piece must start at t = 0".into());
            }
            for w in self.gamma_dot_d.windows(2) {
                if w[1].t <= w[0].t {
                    errors.push("gamma_dot_d piece times must be strictly increasing".into());
                }
            }
            for piece in &self.gamma_dot_d {
                if !(piece.value > 0.0) {
                    errors.push(format!(
                        "gamma_dot_d value at t={} must be positive, got {}",
                        piece.t, piece.value
                    ));
                }
                if self.dt > 0.0 {
                    let steps = piece.t / self.dt;
                    if (steps - steps.round()).abs() > 1e-6 * steps.abs().max(1.0) {
                        errors.push(format!(
                            "gamma_dot_d change at t={} is not aligned to the step grid (dt={})",
                            piece.t, self.dt
                        ));
                    }
                }
            }
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            errors.push(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            errors.push(format!("t_end must be positive, got {}", self.t_end));
        }
        if self.speed_envelope.v_min < 0.0 || self.speed_envelope.v_max < self.speed_envelope.v_min {
            errors.push(format!(
                "speed envelope must satisfy 0 ≤ v_min ≤ v_max, got [{}, {}]",
                self.speed_envelope.v_min, self.speed_envelope.v_max
            ));
        }
        if self.disturbance.accel_max < 0.0 {
            errors.push(format!(
                "disturbance.accel_max must be nonnegative, got {}",
                self.disturbance.accel_max
            ));
        }

        let speed_span = self.speed_envelope.v_max - self.speed_envelope.v_min;
        if self.gains.eta <= speed_span {
            warnings.push(format!(
                "eta = {} does not exceed v_max - v_min = {speed_span}; the exponential \
                 convergence certificate assumes eta > v_max - v_min",
                self.gains.eta
            ));
        }

        if errors.is_empty() {
            Ok(warnings)
        } else {
            Err(Error::Validation(errors))
        }
    }
}

/// Splits `key=value` into a dotted path and a JSON value. Values that do
/// not parse as JSON are taken as strings.
pub fn parse_override(assignment: &str) -> Result<(String, serde_json::Value)> {
    let Some((path, raw)) = assignment.split_once('=') else {
        return Err(Error::Parameter(format!(
            "override '{assignment}' must have the form key=value"
        )));
    };
    let value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    Ok((path.to_string(), value))
}

/// Sets `path` (dot-separated; numeric segments index arrays) inside a JSON
/// document. Intermediate segments must exist; the final segment may name an
/// optional field that the file omitted (typos still surface later, when the
/// strict deserializer rejects unknown keys).
pub fn apply_override(root: &mut serde_json::Value, path: &str, value: serde_json::Value) -> Result<()> {
    let mut cursor = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (k, seg) in segments.iter().enumerate() {
        let last = k + 1 == segments.len();
        match cursor {
            serde_json::Value::Object(map) => {
                if last {
                    map.insert((*seg).to_string(), value);
                    return Ok(());
                }
                let entry = map.get_mut(*seg).ok_or_else(|| {
                    Error::Validation(vec![format!("override path '{path}': unknown field '{seg}'")])
                })?;
                cursor = entry;
            }
            serde_json::Value::Array(items) => {
                let idx: usize = seg.parse().map_err(|_| {
                    Error::Validation(vec![format!(
                        "override path '{path}': '{seg}' is not an array index"
                    )])
                })?;
                let entry = items.get_mut(idx).ok_or_else(|| {
                    Error::Validation(vec![format!("override path '{path}': index {idx} out of range")])
                })?;
                if last {
                    *entry = value;
                    return Ok(());
                }
                cursor = entry;
            }
            _ => {
                return Err(Error::Validation(vec![format!(
                    "override path '{path}': '{seg}' does not address an object or array"
                )]))
            }
        }
    }
    Ok(())
}
