//! Command-line adjustments applied on top of a loaded scenario.

use ctbf_core::{DistributionPolicy, ShapingPolicy};
use serde::{Deserialize, Serialize};

use crate::scenario::{PolicySpec, Scenario, SweepAxis};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 900 s runs, 120 s warm-up, seeds 1 to 5.
    Desk,
    /// 10,800 s runs, 1,200 s warm-up.
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    Tbf,
    Ctbf,
    Both,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub profile: Option<Profile>,
    pub subscribers: Option<u32>,
    pub bucket_multiplier: Option<f64>,
    pub policy: Option<PolicyChoice>,
    pub seed: Option<u64>,
    pub duration_s: Option<f64>,
    pub warmup_s: Option<f64>,
}

impl Overrides {
    /// Profile first, then the individual fields. Fixing the swept quantity
    /// removes the sweep.
    pub fn apply(&self, s: &mut Scenario) {
        match self.profile {
            Some(Profile::Desk) => {
                s.duration_s = 900.0;
                s.warmup_s = 120.0;
                s.seeds = (1..=5).collect();
            }
            Some(Profile::Paper) => {
                s.duration_s = crate::scenario::DEFAULT_DURATION_S;
                s.warmup_s = crate::scenario::DEFAULT_WARMUP_S;
            }
            None => {}
        }
        if let Some(n) = self.subscribers {
            s.subscribers.count = n;
            if s.sweep.as_ref().is_some_and(|w| w.axis == SweepAxis::SubscriberCount) {
                s.sweep = None;
            }
        }
        if let Some(m) = self.bucket_multiplier {
            s.subscribers.bucket_multiplier = m;
            if s.sweep.as_ref().is_some_and(|w| w.axis == SweepAxis::BucketMultiplier) {
                s.sweep = None;
            }
        }
        if let Some(choice) = self.policy {
            let keep = |p: &PolicySpec| {
                matches!(
                    (choice, p.policy),
                    (PolicyChoice::Both, _)
                        | (PolicyChoice::Tbf, ShapingPolicy::Tbf)
                        | (PolicyChoice::Ctbf, ShapingPolicy::Ctbf(_))
                )
            };
            s.policies.retain(keep);
            let has_tbf = s.policies.iter().any(|p| p.policy == ShapingPolicy::Tbf);
            let has_ctbf = s.policies.iter().any(|p| matches!(p.policy, ShapingPolicy::Ctbf(_)));
            if matches!(choice, PolicyChoice::Tbf | PolicyChoice::Both) && !has_tbf {
                s.policies.insert(0, PolicySpec {
                    label: "tbf".into(),
                    policy: ShapingPolicy::Tbf,
                });
            }
            if matches!(choice, PolicyChoice::Ctbf | PolicyChoice::Both) && !has_ctbf {
                s.policies.push(PolicySpec {
                    label: "ctbf".into(),
                    policy: ShapingPolicy::Ctbf(DistributionPolicy::default()),
                });
            }
        }
        if let Some(seed) = self.seed {
            s.seeds = vec![seed];
        }
        if let Some(d) = self.duration_s {
            s.duration_s = d;
        }
        if let Some(w) = self.warmup_s {
            s.warmup_s = w;
        }
    }
}
