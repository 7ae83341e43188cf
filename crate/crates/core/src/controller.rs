//! Cooperative rate sharing between the shapers of one access switch.
//!
//! A subscriber whose rate bucket is nearly full is classified inactive. It
//! keeps a small retention fraction of its assigned rate and donates the rest
//! to a shared pool, which is handed out to active subscribers as bonus rate
//! by one of two policies:
//!
//! * [`PolicyKind::Balanced`]: each active subscriber receives the pool times
//!   its weight over *all* subscribers. The inactive subscribers' share of the
//!   pool is left undistributed.
//! * [`PolicyKind::DefinedCap`]: the pool is water-filled over the *active*
//!   subscribers in proportion to their assigned rates, with each effective
//!   rate capped at `assigned_rate * cap_multiplier`. Only what no active
//!   subscriber can absorb is left undistributed.
//!
//! Effective rates plus the undistributed rate always add up to the sum of
//! assigned rates.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::shaper::SubscriberId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activity {
    Active,
    Inactive,
}

/// A subscriber is inactive once its bucket is at least `threshold_fraction`
/// full; an idle subscriber's bucket fills up, a busy one's drains.
pub fn classify(tokens: f64, capacity: f64, threshold_fraction: f64) -> Activity {
    if tokens >= threshold_fraction * capacity {
        Activity::Inactive
    } else {
        Activity::Active
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubscriberProfile {
    pub id: SubscriberId,
    /// Contracted token generation rate, bits/s.
    pub assigned_rate: f64,
    /// Bucket size multiplier, bits per bps.
    pub bucket_multiplier: f64,
}

impl SubscriberProfile {
    pub fn new(id: SubscriberId, assigned_rate: f64, bucket_multiplier: f64) -> Result<Self, ConfigError> {
        if !(assigned_rate.is_finite() && assigned_rate > 0.0) {
            return Err(ConfigError::NonPositive("assigned rate"));
        }
        if !(bucket_multiplier.is_finite() && bucket_multiplier > 0.0) {
            return Err(ConfigError::NonPositive("bucket multiplier"));
        }
        Ok(SubscriberProfile {
            id,
            assigned_rate,
            bucket_multiplier,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "distribution", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyKind {
    Balanced,
    DefinedCap { cap_multiplier: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistributionPolicy {
    pub kind: PolicyKind,
    /// Fraction of its assigned rate an inactive subscriber keeps.
    pub retention_fraction: f64,
    /// Bucket fullness at or above which a subscriber is inactive.
    pub threshold_fraction: f64,
}

impl Default for DistributionPolicy {
    fn default() -> Self {
        DistributionPolicy {
            kind: PolicyKind::DefinedCap { cap_multiplier: 2.0 },
            retention_fraction: 0.10,
            threshold_fraction: 0.95,
        }
    }
}

impl DistributionPolicy {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.retention_fraction) {
            return Err(ConfigError::OutOfRange("retention_fraction"));
        }
        if !(self.threshold_fraction > 0.0 && self.threshold_fraction <= 1.0) {
            return Err(ConfigError::OutOfRange("threshold_fraction"));
        }
        if let PolicyKind::DefinedCap { cap_multiplier } = self.kind {
            if !(cap_multiplier.is_finite() && cap_multiplier >= 1.0) {
                return Err(ConfigError::OutOfRange("cap_multiplier"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DistributionOutcome {
    /// Bonus (active) or substitute rate (inactive), bits/s, by subscriber index.
    pub rate_modifiers: Vec<f64>,
    /// Installed fill rate, bits/s, by subscriber index.
    pub effective_rates: Vec<f64>,
    pub shared_pool: f64,
    /// Part of the pool no active subscriber received.
    pub wasted_rate: f64,
}

/// `profile`'s assigned rate over the total assigned rate of `denominator`.
pub fn contribution_weight<'a>(
    profile: &SubscriberProfile,
    denominator: impl IntoIterator<Item = &'a SubscriberProfile>,
) -> f64 {
    let total: f64 = denominator.into_iter().map(|p| p.assigned_rate).sum();
    debug_assert!(total > 0.0, "empty weight denominator");
    profile.assigned_rate / total
}

/// Total rate donated by inactive subscribers.
pub fn compute_pool(states: &[Activity], profiles: &[SubscriberProfile], retention_fraction: f64) -> f64 {
    profiles
        .iter()
        .zip(states)
        .filter(|(_, s)| **s == Activity::Inactive)
        .map(|(p, _)| p.assigned_rate * (1.0 - retention_fraction))
        .sum()
}

fn substitute_rates(
    profiles: &[SubscriberProfile],
    states: &[Activity],
    retention_fraction: f64,
) -> Vec<f64> {
    profiles
        .iter()
        .zip(states)
        .map(|(p, s)| match s {
            Activity::Inactive => p.assigned_rate * retention_fraction,
            Activity::Active => 0.0,
        })
        .collect()
}

fn finish(
    pool: f64,
    profiles: &[SubscriberProfile],
    states: &[Activity],
    rate_modifiers: Vec<f64>,
) -> DistributionOutcome {
    let effective_rates: Vec<f64> = profiles
        .iter()
        .zip(states)
        .zip(&rate_modifiers)
        .map(|((p, s), m)| match s {
            Activity::Active => p.assigned_rate + m,
            Activity::Inactive => *m,
        })
        .collect();
    let distributed: f64 = states
        .iter()
        .zip(&rate_modifiers)
        .filter(|(s, _)| **s == Activity::Active)
        .map(|(_, m)| m)
        .sum();
    DistributionOutcome {
        rate_modifiers,
        effective_rates,
        shared_pool: pool,
        wasted_rate: (pool - distributed).max(0.0),
    }
}

/// Bonus = pool x weight over all subscribers.
pub fn distribute_balanced(
    pool: f64,
    profiles: &[SubscriberProfile],
    states: &[Activity],
    retention_fraction: f64,
) -> DistributionOutcome {
    let total: f64 = profiles.iter().map(|p| p.assigned_rate).sum();
    let mut modifiers = substitute_rates(profiles, states, retention_fraction);
    for ((m, p), s) in modifiers.iter_mut().zip(profiles).zip(states) {
        if *s == Activity::Active {
            *m = pool * p.assigned_rate / total;
        }
    }
    finish(pool, profiles, states, modifiers)
}

/// Water-fills the pool over active subscribers in proportion to their
/// assigned rates, each bonus capped at `assigned_rate * (cap_multiplier - 1)`.
pub fn distribute_defined_cap(
    pool: f64,
    profiles: &[SubscriberProfile],
    states: &[Activity],
    retention_fraction: f64,
    cap_multiplier: f64,
) -> DistributionOutcome {
    let mut modifiers = substitute_rates(profiles, states, retention_fraction);
    let mut open: Vec<usize> = (0..profiles.len())
        .filter(|&i| states[i] == Activity::Active)
        .collect();
    let mut remaining = pool;
    while remaining > 0.0 && !open.is_empty() {
        let weight_total: f64 = open.iter().map(|&i| profiles[i].assigned_rate).sum();
        let saturated: Vec<usize> = open
            .iter()
            .copied()
            .filter(|&i| {
                let headroom = profiles[i].assigned_rate * (cap_multiplier - 1.0) - modifiers[i];
                remaining * profiles[i].assigned_rate / weight_total >= headroom
            })
            .collect();
        if saturated.is_empty() {
            for &i in &open {
                modifiers[i] += remaining * profiles[i].assigned_rate / weight_total;
            }
            remaining = 0.0;
        } else {
            for &i in &saturated {
                let cap = profiles[i].assigned_rate * (cap_multiplier - 1.0);
                remaining -= cap - modifiers[i];
                modifiers[i] = cap;
            }
            open.retain(|i| !saturated.contains(i));
        }
    }
    finish(pool, profiles, states, modifiers)
}

/// Installed rate for one subscriber under `outcome`.
pub fn effective_rate(
    profile: &SubscriberProfile,
    state: Activity,
    outcome: &DistributionOutcome,
    retention_fraction: f64,
) -> f64 {
    let i = profile.id.index();
    match state {
        Activity::Active => profile.assigned_rate + outcome.rate_modifiers[i],
        Activity::Inactive => profile.assigned_rate * retention_fraction,
    }
}

/// Pool and distribution computed from scratch for one activity configuration.
pub fn distribute(
    policy: &DistributionPolicy,
    profiles: &[SubscriberProfile],
    states: &[Activity],
) -> DistributionOutcome {
    let pool = compute_pool(states, profiles, policy.retention_fraction);
    match policy.kind {
        PolicyKind::Balanced => distribute_balanced(pool, profiles, states, policy.retention_fraction),
        PolicyKind::DefinedCap { cap_multiplier } => {
            distribute_defined_cap(pool, profiles, states, policy.retention_fraction, cap_multiplier)
        }
    }
}

/// Holds the activity state of every subscriber and the distribution in force.
#[derive(Clone, Debug)]
pub struct Controller {
    policy: DistributionPolicy,
    profiles: Vec<SubscriberProfile>,
    states: Vec<Activity>,
    outcome: DistributionOutcome,
    recomputations: u64,
}

impl Controller {
    /// Profiles must be indexed by their subscriber id (`profiles[i].id == i`).
    pub fn new(
        policy: DistributionPolicy,
        profiles: Vec<SubscriberProfile>,
        initial: Vec<Activity>,
    ) -> Result<Self, ConfigError> {
        policy.validate()?;
        if profiles.is_empty() {
            return Err(ConfigError::NonPositive("subscriber count"));
        }
        if initial.len() != profiles.len() {
            return Err(ConfigError::Invalid("one activity state per subscriber".into()));
        }
        if let Some((i, p)) = profiles.iter().enumerate().find(|(i, p)| p.id.index() != *i) {
            return Err(ConfigError::Invalid(alloc::format!(
                "profile at index {i} has id {}",
                p.id
            )));
        }
        let outcome = distribute(&policy, &profiles, &initial);
        Ok(Controller {
            policy,
            profiles,
            states: initial,
            outcome,
            recomputations: 0,
        })
    }

    /// All-active start.
    pub fn all_active(policy: DistributionPolicy, profiles: Vec<SubscriberProfile>) -> Result<Self, ConfigError> {
        let n = profiles.len();
        Self::new(policy, profiles, vec![Activity::Active; n])
    }

    pub fn policy(&self) -> &DistributionPolicy {
        &self.policy
    }

    pub fn profiles(&self) -> &[SubscriberProfile] {
        &self.profiles
    }

    pub fn states(&self) -> &[Activity] {
        &self.states
    }

    pub fn state(&self, id: SubscriberId) -> Activity {
        self.states[id.index()]
    }

    pub fn outcome(&self) -> &DistributionOutcome {
        &self.outcome
    }

    pub fn recomputations(&self) -> u64 {
        self.recomputations
    }

    pub fn effective_rate(&self, id: SubscriberId) -> f64 {
        self.outcome.effective_rates[id.index()]
    }

    pub fn classify(&self, tokens: f64, capacity: f64) -> Activity {
        classify(tokens, capacity, self.policy.threshold_fraction)
    }

    /// Records a state change and recomputes the distribution. The caller
    /// accrues every rate bucket at the old rates before calling this and
    /// installs the new effective rates afterwards. Returns `None` when the
    /// state was already `new_state`.
    pub fn on_transition(&mut self, id: SubscriberId, new_state: Activity) -> Option<&DistributionOutcome> {
        let slot = &mut self.states[id.index()];
        if *slot == new_state {
            return None;
        }
        *slot = new_state;
        self.outcome = distribute(&self.policy, &self.profiles, &self.states);
        self.recomputations += 1;
        Some(&self.outcome)
    }

    /// Assigned-rate total minus effective-rate total minus undistributed
    /// rate; zero up to rounding.
    pub fn conservation_residual(&self) -> f64 {
        let assigned: f64 = self.profiles.iter().map(|p| p.assigned_rate).sum();
        let effective: f64 = self.outcome.effective_rates.iter().sum();
        assigned - effective - self.outcome.wasted_rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Activity::{Active, Inactive};

    const MBPS: f64 = 1e6;

    fn profiles(rates_mbps: &[f64]) -> Vec<SubscriberProfile> {
        rates_mbps
            .iter()
            .enumerate()
            .map(|(i, r)| SubscriberProfile::new(SubscriberId(i as u32), r * MBPS, 8.0).unwrap())
            .collect()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn classification() {
        assert_eq!(classify(1000.0, 1000.0, 0.95), Inactive);
        assert_eq!(classify(960.0, 1000.0, 0.95), Inactive);
        assert_eq!(classify(500.0, 1000.0, 0.95), Active);
    }

    #[test]
    fn weights() {
        let p = profiles(&[5.0, 15.0]);
        assert_eq!(contribution_weight(&p[0], &p), 0.25);
        let p = profiles(&[8.0, 10.0, 5.0]);
        let actives = [p[0].clone(), p[2].clone()];
        assert!(rel(contribution_weight(&p[0], &actives), 8.0 / 13.0) < 1e-15);
        assert!(rel(contribution_weight(&p[2], &actives), 5.0 / 13.0) < 1e-15);
        let p = profiles(&[3.0]);
        assert_eq!(contribution_weight(&p[0], &p), 1.0);
    }

    #[test]
    fn pools() {
        let p = profiles(&[8.0, 10.0, 5.0]);
        assert_eq!(compute_pool(&[Active, Active, Active], &p, 0.1), 0.0);
        assert!(rel(compute_pool(&[Active, Inactive, Active], &p, 0.1), 9.0 * MBPS) < 1e-15);
        let p = profiles(&[2.0, 2.0]);
        assert!(rel(compute_pool(&[Inactive, Inactive], &p, 0.1), 3.6 * MBPS) < 1e-15);
    }

    #[test]
    fn balanced_example() {
        let p = profiles(&[8.0, 10.0, 5.0]);
        let states = [Active, Inactive, Active];
        let out = distribute_balanced(9.0 * MBPS, &p, &states, 0.1);
        assert!(rel(out.rate_modifiers[0], 9.0 * MBPS * 8.0 / 23.0) < 1e-12);
        assert!(rel(out.rate_modifiers[2], 9.0 * MBPS * 5.0 / 23.0) < 1e-12);
        assert!(rel(out.wasted_rate, 9.0 * MBPS * 10.0 / 23.0) < 1e-12);
        assert!(rel(out.wasted_rate / out.shared_pool, 10.0 / 23.0) < 1e-12);

        let out = distribute_balanced(0.0, &p, &[Active; 3], 0.1);
        assert_eq!(out.wasted_rate, 0.0);
        assert!(out.rate_modifiers.iter().all(|m| *m == 0.0));

        let all_off = [Inactive; 3];
        let pool = compute_pool(&all_off, &p, 0.1);
        let out = distribute_balanced(pool, &p, &all_off, 0.1);
        assert!(rel(out.wasted_rate, pool) < 1e-12);
    }

    #[test]
    fn defined_cap_table_two() {
        let p = profiles(&[8.0, 10.0, 5.0]);
        let out = distribute_defined_cap(9.0 * MBPS, &p, &[Active, Inactive, Active], 0.1, 100.0);
        assert!(rel(out.effective_rates[0], 13.538_461_538_461_538 * MBPS) < 1e-12);
        assert!(rel(out.effective_rates[1], 1.0 * MBPS) < 1e-12);
        assert!(rel(out.effective_rates[2], 8.461_538_461_538_462 * MBPS) < 1e-12);
        assert_eq!(out.wasted_rate, 0.0);
    }

    #[test]
    fn defined_cap_ten_subscribers() {
        let p = profiles(&[10.0; 10]);
        let mut states = [Active; 10];
        states[..5].fill(Inactive);
        let out = distribute(
            &DistributionPolicy {
                kind: PolicyKind::DefinedCap { cap_multiplier: 2.0 },
                retention_fraction: 0.0,
                threshold_fraction: 0.95,
            },
            &p,
            &states,
        );
        assert_eq!(out.wasted_rate, 0.0);
        for i in 5..10 {
            assert_eq!(out.rate_modifiers[i], 10.0 * MBPS);
        }
        states[5] = Inactive;
        let out = distribute_defined_cap(compute_pool(&states, &p, 0.0), &p, &states, 0.0, 2.0);
        assert!(out.wasted_rate > 0.0);
        assert_eq!(out.wasted_rate, 20.0 * MBPS);
    }

    #[test]
    fn no_inactive_matches_tbf() {
        let p = profiles(&[3.0, 7.0]);
        let out = distribute(&DistributionPolicy::default(), &p, &[Active, Active]);
        assert_eq!(out.effective_rates, [3.0 * MBPS, 7.0 * MBPS]);
    }

    #[test]
    fn effective_rates_per_state() {
        let p = profiles(&[8.0, 10.0, 5.0]);
        let states = [Active, Inactive, Active];
        let out = distribute_defined_cap(9.0 * MBPS, &p, &states, 0.1, 100.0);
        assert!(rel(effective_rate(&p[1], Inactive, &out, 0.1), MBPS) < 1e-12);
        assert!(rel(effective_rate(&p[0], Active, &out, 0.1), 13.538_461_538 * MBPS) < 1e-9);
        let out = distribute_defined_cap(0.0, &p, &[Active; 3], 0.1, 2.0);
        assert_eq!(effective_rate(&p[2], Active, &out, 0.1), 5.0 * MBPS);
    }

    #[test]
    fn transitions_move_rates_monotonically() {
        let p = profiles(&[2.0, 4.0, 6.0]);
        let mut c = Controller::all_active(DistributionPolicy::default(), p).unwrap();
        let before: Vec<f64> = c.outcome().effective_rates.clone();
        c.on_transition(SubscriberId(1), Inactive).unwrap();
        assert!(c.outcome().shared_pool > 0.0);
        assert!(c.effective_rate(SubscriberId(0)) > before[0]);
        assert!(c.effective_rate(SubscriberId(2)) > before[2]);
        let boosted = c.effective_rate(SubscriberId(0));
        c.on_transition(SubscriberId(2), Inactive).unwrap();
        let more = c.effective_rate(SubscriberId(0));
        assert!(more > boosted);
        c.on_transition(SubscriberId(2), Active).unwrap();
        assert!(c.effective_rate(SubscriberId(0)) < more);
        assert!(c.on_transition(SubscriberId(2), Active).is_none());
        assert_eq!(c.recomputations(), 3);
    }

    #[test]
    fn rejects_bad_policy() {
        let p = profiles(&[2.0]);
        let policy = DistributionPolicy {
            retention_fraction: 1.5,
            ..DistributionPolicy::default()
        };
        assert!(Controller::all_active(policy, p.clone()).is_err());
        let policy = DistributionPolicy {
            kind: PolicyKind::DefinedCap { cap_multiplier: 0.5 },
            ..DistributionPolicy::default()
        };
        assert!(Controller::all_active(policy, p).is_err());
    }
}
