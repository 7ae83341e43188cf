//! Scenario files: a JSON description of the access link, the subscribers,
//! the policies to compare, the workload and an optional sweep.
//!
//! ```json
//! {
//!   "name": "subscribers",
//!   "subscribers": { "count": 10, "assigned_rate_bps": 2e6, "bucket_multiplier": 8 },
//!   "policies": [
//!     { "label": "tbf", "shaping": "tbf" },
//!     { "label": "ctbf", "shaping": "ctbf", "retention_fraction": 0.1 }
//!   ],
//!   "seeds": [1, 2, 3, 4, 5],
//!   "sweep": { "axis": "subscriber_count", "values": [2, 10, 25, 50] }
//! }
//! ```
//!
//! Every other field (`switch`, `traffic`, `duration_s`, `warmup_s`,
//! `video_trace`) is optional.

use std::fs;
use std::path::{Path, PathBuf};

use ctbf_core::{
    ConfigError, ShapingPolicy, SimulationConfig, SubscriberId, SubscriberProfile, SwitchConfig,
    TrafficConfig,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace;

pub const DEFAULT_DURATION_S: f64 = 10_800.0;
pub const DEFAULT_WARMUP_S: f64 = 1_200.0;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: field `{field}`: {message}")]
    Field {
        path: PathBuf,
        field: String,
        message: String,
    },
    #[error("{path}:{line}: {message}")]
    Trace {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubscriberSpec {
    pub count: u32,
    #[serde(default = "default_assigned_rate")]
    pub assigned_rate_bps: f64,
    #[serde(default = "default_multiplier")]
    pub bucket_multiplier: f64,
}

fn default_assigned_rate() -> f64 {
    2e6
}

fn default_multiplier() -> f64 {
    8.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    /// Column prefix in the CSV output.
    pub label: String,
    #[serde(flatten)]
    pub policy: ShapingPolicy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SubscriberCount,
    BucketMultiplier,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::SubscriberCount => "subscriber_count",
            SweepAxis::BucketMultiplier => "bucket_multiplier",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub switch: SwitchConfig,
    pub subscribers: SubscriberSpec,
    pub policies: Vec<PolicySpec>,
    #[serde(default)]
    pub traffic: TrafficConfig,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_warmup")]
    pub warmup_s: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    /// Relative paths are resolved against the scenario file.
    #[serde(default)]
    pub video_trace: Option<PathBuf>,
}

fn default_duration() -> f64 {
    DEFAULT_DURATION_S
}

fn default_warmup() -> f64 {
    DEFAULT_WARMUP_S
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

/// One point of a sweep: the value on the axis and the subscriber layout.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub subscribers: u32,
    pub bucket_multiplier: f64,
}

impl Scenario {
    pub fn from_json(text: &str, path: &Path) -> Result<Scenario, LoadError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| LoadError::Field {
            path: path.to_path_buf(),
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), LoadError> {
        let invalid = |m: &str| Err(LoadError::Invalid(m.to_string()));
        if self.subscribers.count == 0 {
            return invalid("subscribers.count must be positive");
        }
        if self.policies.is_empty() {
            return invalid("at least one policy is required");
        }
        for (i, p) in self.policies.iter().enumerate() {
            if p.label.is_empty() || !p.label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(LoadError::Invalid(format!(
                    "policy label {:?} must be non-empty ASCII letters, digits or '_'",
                    p.label
                )));
            }
            if self.policies[..i].iter().any(|q| q.label == p.label) {
                return Err(LoadError::Invalid(format!("duplicate policy label {:?}", p.label)));
            }
        }
        if self.seeds.is_empty() {
            return invalid("at least one seed is required");
        }
        if !(self.duration_s > self.warmup_s && self.warmup_s >= 0.0) {
            return invalid("duration_s must exceed warmup_s >= 0");
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return invalid("sweep.values is empty");
            }
            for &v in &sweep.values {
                if !(v.is_finite() && v > 0.0) {
                    return Err(LoadError::Invalid(format!("sweep value {v} is not positive")));
                }
                if sweep.axis == SweepAxis::SubscriberCount && v.fract() != 0.0 {
                    return Err(LoadError::Invalid(format!("subscriber count {v} is not whole")));
                }
            }
        }
        for point in self.points() {
            for p in &self.policies {
                self.simulation(&point, p.policy, self.seeds[0])?
                    .validate()
                    .map_err(|e| LoadError::Invalid(format!("policy {:?}: {e}", p.label)))?;
            }
        }
        Ok(())
    }

    /// Sweep points in file order; a single point without a sweep.
    pub fn points(&self) -> Vec<SweepPoint> {
        let base = SweepPoint {
            value: 0.0,
            subscribers: self.subscribers.count,
            bucket_multiplier: self.subscribers.bucket_multiplier,
        };
        match &self.sweep {
            None => vec![SweepPoint {
                value: f64::from(base.subscribers),
                ..base
            }],
            Some(sweep) => sweep
                .values
                .iter()
                .map(|&value| match sweep.axis {
                    SweepAxis::SubscriberCount => SweepPoint {
                        value,
                        subscribers: value as u32,
                        ..base.clone()
                    },
                    SweepAxis::BucketMultiplier => SweepPoint {
                        value,
                        bucket_multiplier: value,
                        ..base.clone()
                    },
                })
                .collect(),
        }
    }

    pub fn axis_name(&self) -> &'static str {
        self.sweep
            .as_ref()
            .map_or(SweepAxis::SubscriberCount.name(), |s| s.axis.name())
    }

    pub fn simulation(
        &self,
        point: &SweepPoint,
        policy: ShapingPolicy,
        seed: u64,
    ) -> Result<SimulationConfig, ConfigError> {
        let subscribers = (0..point.subscribers)
            .map(|i| {
                SubscriberProfile::new(
                    SubscriberId(i),
                    self.subscribers.assigned_rate_bps,
                    point.bucket_multiplier,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SimulationConfig {
            switch: self.switch.clone(),
            subscribers,
            traffic: self.traffic.clone(),
            policy,
            duration: self.duration_s,
            warmup: self.warmup_s,
            seed,
        })
    }
}

/// Reads a scenario file and, if it names one, its video trace.
pub fn load_scenario(path: &Path) -> Result<Scenario, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut scenario = Scenario::from_json(&text, path)?;
    if let Some(rel) = &scenario.video_trace {
        let trace_path = path.parent().unwrap_or(Path::new(".")).join(rel);
        let records = trace::read_trace(&trace_path)?;
        let frames = scenario.traffic.video.frames_from_trace(&records)?;
        scenario.traffic.video.trace = Some(frames);
        scenario.video_trace = Some(trace_path);
    }
    Ok(scenario)
}
