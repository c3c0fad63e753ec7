//! Run configuration: a single JSON document, optionally overridden by flags.

use std::fmt;
use std::path::{Path, PathBuf};

use fairshare::analysis::SweepKind;
use fairshare::lpcore::Tolerances;
use fairshare::netgen::{build_joint_chain, Coupling, JointChain, UserModel};
use fairshare::policy::TieRule;
use fairshare::programs::FairnessSlack;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

/// Errors raised while reading or interpreting a configuration.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{origin}: field `{field}`: {message} (line {line}, column {column})")]
    Parse {
        origin: String,
        field: String,
        message: String,
        line: usize,
        column: usize,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] fairshare::Error),
}

/// Explicit joint background chain; `states[k][i]` is user `i`'s net generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub states: Vec<Vec<i64>>,
    pub kernel: Vec<Vec<f64>>,
}

/// A grid given as an explicit list or as `"start:stop:step"` (endpoints inclusive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    List(Vec<f64>),
    Range(String),
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>, ConfigError> {
        let values = match self {
            Self::List(v) => v.clone(),
            Self::Range(s) => parse_range(s)?,
        };
        if values.is_empty() {
            return Err(ConfigError::Invalid("grid is empty".into()));
        }
        if let Some(w) = values.windows(2).find(|w| !(w[0] < w[1])) {
            return Err(ConfigError::Invalid(format!(
                "grid must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(values)
    }

    /// Grid of battery sizes; every value must be a nonnegative integer.
    pub fn battery_sizes(&self) -> Result<Vec<usize>, ConfigError> {
        self.values()?
            .into_iter()
            .map(|v| {
                let r = v.round();
                if v < 0.0 || (v - r).abs() > 1e-9 {
                    Err(ConfigError::Invalid(format!(
                        "battery size {v} is not a nonnegative integer"
                    )))
                } else {
                    Ok(r as usize)
                }
            })
            .collect()
    }
}

impl std::str::FromStr for GridSpec {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        if s.contains(':') {
            parse_range(s)?;
            return Ok(Self::Range(s.to_string()));
        }
        s.split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| ConfigError::Invalid(format!("grid value {t:?}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Self::List)
    }
}

/// Expands `start:stop:step`; `stop` is included when within half a step.
pub fn parse_range(s: &str) -> Result<Vec<f64>, ConfigError> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = |why: &str| ConfigError::Invalid(format!("grid {s:?}: {why}"));
    if parts.len() != 3 {
        return Err(bad("expected start:stop:step"));
    }
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| bad(&e.to_string()))?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if !(start.is_finite() && stop.is_finite() && step.is_finite()) {
        return Err(bad("values must be finite"));
    }
    if step <= 0.0 {
        return Err(bad("step must be positive"));
    }
    if stop < start {
        return Err(bad("stop is below start"));
    }
    let count = ((stop - start) / step + 0.5).floor() as usize;
    if count > 1_000_000 {
        return Err(bad("too many points"));
    }
    Ok((0..=count)
        .map(|k| {
            let v = start + k as f64 * step;
            // Trim accumulated binary noise so `0:0.5:0.05` yields 0.15, not 0.15000000000000002.
            let r = (v * 1e12).round() / 1e12;
            if (r - v).abs() <= 1e-12 * v.abs().max(1.0) {
                r
            } else {
                v
            }
        })
        .collect())
}

/// Fairness slack: a nonnegative number or the string `"infinity"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaSpec {
    Finite(f64),
    Infinity,
}

impl DeltaSpec {
    pub fn to_slack(self) -> Result<FairnessSlack, ConfigError> {
        match self {
            Self::Finite(d) => Ok(FairnessSlack::bounded(d)?),
            Self::Infinity => Ok(FairnessSlack::Unconstrained),
        }
    }
}

impl fmt::Display for DeltaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Finite(d) => write!(f, "{d:?}"),
            Self::Infinity => f.write_str("infinity"),
        }
    }
}

impl std::str::FromStr for DeltaSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "inf" | "infinity" => Ok(Self::Infinity),
            t => t
                .parse::<f64>()
                .map(Self::Finite)
                .map_err(|e| format!("delta {s:?}: {e}")),
        }
    }
}

impl Serialize for DeltaSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::Finite(d) => s.serialize_f64(*d),
            Self::Infinity => s.serialize_str("infinity"),
        }
    }
}

impl<'de> Deserialize<'de> for DeltaSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = DeltaSpec;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a nonnegative number or \"infinity\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<DeltaSpec, E> {
                Ok(DeltaSpec::Finite(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<DeltaSpec, E> {
                Ok(DeltaSpec::Finite(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<DeltaSpec, E> {
                Ok(DeltaSpec::Finite(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<DeltaSpec, E> {
                if v == "infinity" {
                    Ok(DeltaSpec::Infinity)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// Overrides for the simplex tolerances; unset fields keep their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasibility: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimality: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pivot: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bland_factor: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refactor_interval: Option<usize>,
}

impl SolverConfig {
    pub fn tolerances(&self) -> Result<Tolerances, ConfigError> {
        let d = Tolerances::default();
        let t = Tolerances {
            feasibility: self.feasibility.unwrap_or(d.feasibility),
            optimality: self.optimality.unwrap_or(d.optimality),
            pivot: self.pivot.unwrap_or(d.pivot),
            bland_factor: self.bland_factor.unwrap_or(d.bland_factor),
            refactor_interval: self.refactor_interval.unwrap_or(d.refactor_interval),
        };
        for (name, v) in [
            ("feasibility", t.feasibility),
            ("optimality", t.optimality),
            ("pivot", t.pivot),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(ConfigError::Invalid(format!(
                    "solver.{name} must lie in (0, 1), got {v}"
                )));
            }
        }
        if t.refactor_interval == 0 {
            return Err(ConfigError::Invalid("solver.refactor_interval must be positive".into()));
        }
        Ok(t)
    }
}

/// Which stationary policy `simulate` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    /// Greedy efficient policy with the configured tie rule.
    Greedy,
    /// Policy extracted from the optimal fair measure (`solve-p` with `delta`).
    Fair,
    /// Policy extracted from the maxmin-fair efficient measure (`solve-f`).
    MaxminEfficient,
}

impl std::str::FromStr for PolicyChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "fair" => Ok(Self::Fair),
            "maxmin_efficient" => Ok(Self::MaxminEfficient),
            other => Err(format!(
                "unknown policy {other:?} (expected greedy, fair or maxmin_efficient)"
            )),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub users: Vec<UserModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint: Option<JointSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<DeltaSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<SweepKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batches: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub battery0: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie_rule: Option<TieRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
}

impl RunConfig {
    /// Parses a configuration, reporting the failing field and position.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            ConfigError::Parse {
                origin: origin.to_string(),
                field,
                message: strip_position(&inner.to_string()),
                line: inner.line(),
                column: inner.column(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn chain(&self) -> Result<JointChain, ConfigError> {
        let coupling = match &self.joint {
            None => Coupling::Independent,
            Some(j) => Coupling::Joint {
                states: j.states.clone(),
                kernel: j.kernel.clone(),
            },
        };
        Ok(build_joint_chain(self.users.clone(), coupling)?)
    }

    pub fn require_b_max(&self) -> Result<usize, ConfigError> {
        self.b_max
            .ok_or_else(|| ConfigError::Invalid("b_max is required (config or --bmax)".into()))
    }

    pub fn require_b_grid(&self) -> Result<Vec<usize>, ConfigError> {
        self.b_grid
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("b_grid is required (config or --b-grid)".into()))?
            .battery_sizes()
    }

    pub fn require_delta_grid(&self) -> Result<Vec<f64>, ConfigError> {
        self.delta_grid
            .as_ref()
            .ok_or_else(|| {
                ConfigError::Invalid("delta_grid is required (config or --delta-grid)".into())
            })?
            .values()
    }

    pub fn tolerances(&self) -> Result<Tolerances, ConfigError> {
        self.solver.clone().unwrap_or_default().tolerances()
    }
}

/// serde_json appends " at line L column C"; the position is reported separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}
