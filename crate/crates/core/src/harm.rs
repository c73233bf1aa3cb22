//! Collision indication and harm accounting.
//!
//! Harm is energy-equivalent: the square of the pair's closing velocity at
//! impact, split between the two vehicles by the opposing mass fraction, so
//! the pair total is exactly the squared relative velocity. Reports can
//! count every impact (dense training signal) or only the first impact per
//! pair (the evaluation protocol).

use crate::model::{CollisionEvent, VehiclePair};
use serde::{Deserialize, Serialize};

/// 1 when the gap is closed (d <= 0), else 0.
pub fn collision_indicator(d: f64) -> f64 {
    if d <= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Harm charged to the (front, rear) vehicle of a pair in contact.
///
/// Each side receives the opposing mass fraction of `v_rel²`, so
/// `front + rear == v_rel²` whenever the indicator fires and both are zero
/// otherwise.
pub fn pair_harm(d: f64, v_rel: f64, m_front: f64, m_rear: f64) -> (f64, f64) {
    let gamma = collision_indicator(d);
    let sq = v_rel * v_rel * gamma;
    let total = m_front + m_rear;
    (m_rear / total * sq, m_front / total * sq)
}

/// Sum of all four per-vehicle harm terms of a single simulation step.
pub fn step_harm(d1: f64, v_rel1: f64, d2: f64, v_rel2: f64, masses: &[f64; 3]) -> f64 {
    let (f1, r1) = pair_harm(d1, v_rel1, masses[0], masses[1]);
    let (f2, r2) = pair_harm(d2, v_rel2, masses[1], masses[2]);
    f1 + r1 + f2 + r2
}

/// How repeated impacts of the same pair contribute to a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CountPolicy {
    /// Every impact contributes (used for the learning reward).
    AllEvents,
    /// Only the earliest impact of each pair contributes (evaluation
    /// protocol: each pairwise collision is counted once).
    FirstPerPair,
}

/// Aggregated harm over one trajectory's collision events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmReport {
    /// Harm charged to each vehicle (lead, middle, rear).
    pub per_vehicle: [f64; 3],
    /// Sum of the per-vehicle totals.
    pub total: f64,
    /// Events that contributed under the counting policy.
    pub events_counted: usize,
    /// Events present in the input.
    pub events_observed: usize,
}

impl HarmReport {
    pub fn zero() -> Self {
        HarmReport {
            per_vehicle: [0.0; 3],
            total: 0.0,
            events_counted: 0,
            events_observed: 0,
        }
    }

    pub fn any_collision(&self) -> bool {
        self.events_observed > 0
    }
}

/// Fold a trajectory's events into a harm report under the given counting
/// policy. Events are expected in step order, as produced by a rollout.
pub fn accumulate(events: &[CollisionEvent], policy: CountPolicy) -> HarmReport {
    let mut per_vehicle = [0.0; 3];
    let mut counted = 0;
    let mut seen = [false, false];
    for ev in events {
        let slot = match ev.pair {
            VehiclePair::Front => 0,
            VehiclePair::Rear => 1,
        };
        if policy == CountPolicy::FirstPerPair && seen[slot] {
            continue;
        }
        seen[slot] = true;
        counted += 1;
        per_vehicle[ev.pair.front_index()] += ev.harm_front_vehicle;
        per_vehicle[ev.pair.rear_index()] += ev.harm_rear_vehicle;
    }
    HarmReport {
        per_vehicle,
        total: per_vehicle.iter().sum(),
        events_counted: counted,
        events_observed: events.len(),
    }
}
