//! Episodic MDP wrapper around the simulator: normalized observations,
//! affine action scaling, the four shaped reward components, and episode
//! lifecycle (the agent is consulted only from its reaction delay onward).

use crate::model::{CollisionEvent, ScenarioConfig, SimState, VehiclePair};
use crate::nn::PolicyNetwork;
use crate::sim::{self, TIME_EPS};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Observation length.
pub const OBS_DIM: usize = 9;
/// Velocity normalization scale in m/s.
pub const V_SCALE: f64 = 30.0;
/// Gap normalization scale in m.
pub const D_SCALE: f64 = 50.0;
/// Acceleration normalization scale in m/s².
pub const A_SCALE: f64 = 10.0;

/// Normalized state encoding fed to the policy:
/// three velocities, two gaps, the accelerations the outer vehicles applied
/// over the previous step, the middle vehicle's previous acceleration, and
/// the normalized time since the braking alert reached the agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Deterministic normalized encoding of a simulation state. Gaps may be
/// negative while a pair is in contact.
pub fn observe(state: &SimState, sc: &ScenarioConfig) -> Observation {
    let t = state.n as f64 * sc.dt;
    Observation([
        state.v[0] / V_SCALE,
        state.v[1] / V_SCALE,
        state.v[2] / V_SCALE,
        state.d1() / D_SCALE,
        state.d2() / D_SCALE,
        state.last_u[0] / A_SCALE,
        state.last_u[2] / A_SCALE,
        state.last_u[1] / A_SCALE,
        (t - sc.tau2).max(0.0) / sc.horizon_seconds(),
    ])
}

/// Map a raw policy output in [-1, 1] onto the middle vehicle's
/// acceleration range: -1 is full braking, +1 the acceleration cap.
/// Out-of-range inputs are clipped first.
pub fn scale_action(raw: f64, decel_cap: f64, accel_cap: f64) -> f64 {
    let r = raw.clamp(-1.0, 1.0);
    -decel_cap + (r + 1.0) * 0.5 * (accel_cap + decel_cap)
}

/// Weights and shaping constants of the reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    /// Weight of the collision-severity penalty.
    pub w_h: f64,
    /// Weight of the risk (time-to-collision + distance) penalty.
    pub w_p: f64,
    /// Weight of the control-smoothness penalty.
    pub w_j: f64,
    /// Severity coefficient of the lead–middle pair.
    pub k_energy_1: f64,
    /// Severity coefficient of the middle–rear pair.
    pub k_energy_2: f64,
    /// Slope of the distance shaping term (> 0).
    pub k_d: f64,
    /// Safety buffer subtracted from the gap in the TTC term, in m.
    pub d_safe: f64,
    /// Target gap of the distance shaping term, in m.
    pub d_target: f64,
    /// Time scale dividing the TTC, in s (> 0).
    pub tau_scale: f64,
    /// Sparse bonus granted when an episode ends without any collision.
    pub r_safe: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_h: 1.0,
            w_p: 0.5,
            w_j: 1e-4,
            k_energy_1: 1.0,
            k_energy_2: 1.0,
            k_d: 0.5,
            d_safe: 1.0,
            d_target: 5.0,
            tau_scale: 2.0,
            r_safe: 10.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("weights file not found or unreadable: {0}")]
    Io(#[from] std::io::Error),
    #[error("weights parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid weights: {0}")]
    Invalid(String),
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), WeightsError> {
        let nonneg = [
            ("w_h", self.w_h),
            ("w_p", self.w_p),
            ("w_j", self.w_j),
            ("k_energy_1", self.k_energy_1),
            ("k_energy_2", self.k_energy_2),
            ("d_safe", self.d_safe),
            ("d_target", self.d_target),
            ("r_safe", self.r_safe),
        ];
        for (name, v) in nonneg {
            if !v.is_finite() || v < 0.0 {
                return Err(WeightsError::Invalid(format!("{name} must be nonnegative")));
            }
        }
        if !self.k_d.is_finite() || self.k_d <= 0.0 {
            return Err(WeightsError::Invalid("k_d must be positive".into()));
        }
        if !self.tau_scale.is_finite() || self.tau_scale <= 0.0 {
            return Err(WeightsError::Invalid("tau_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, WeightsError> {
        let w: RewardWeights = toml::from_str(text)?;
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WeightsError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Collision-severity penalty of one step: the squared closing velocity of
/// every pair that collided this step, weighted per pair. Nonpositive.
pub fn r_collision(events: &[CollisionEvent], w: &RewardWeights) -> f64 {
    -events
        .iter()
        .map(|ev| {
            let k = match ev.pair {
                VehiclePair::Front => w.k_energy_1,
                VehiclePair::Rear => w.k_energy_2,
            };
            k * ev.v_rel_pre * ev.v_rel_pre
        })
        .sum::<f64>()
}

fn pair_risk(d: f64, v_rel: f64, w: &RewardWeights) -> f64 {
    // closing pair: bounded time-to-collision penalty; opening or parallel
    // pairs carry no TTC risk
    let ttc_term = if v_rel > 0.0 {
        let ttc = (d - w.d_safe) / v_rel;
        -sigmoid(-ttc / w.tau_scale)
    } else {
        0.0
    };
    ttc_term - sigmoid(w.k_d * (w.d_target - d))
}

/// Collision-risk penalty of a state: per pair, a sigmoid-bounded
/// time-to-collision term plus a distance shaping term. Bounded in [-4, 0].
pub fn r_risk(d1: f64, d2: f64, v_rel1: f64, v_rel2: f64, w: &RewardWeights) -> f64 {
    pair_risk(d1, v_rel1, w) + pair_risk(d2, v_rel2, w)
}

/// Control-smoothness penalty: negated squared discrete jerk.
pub fn r_jerk(u2_now: f64, u2_prev: f64, dt: f64) -> f64 {
    let jerk = (u2_now - u2_prev) / dt;
    -(jerk * jerk)
}

/// Sparse terminal bonus: granted exactly when the episode has ended
/// without any collision.
pub fn r_terminal(ended: bool, any_collision: bool, r_safe: f64) -> f64 {
    if ended && !any_collision {
        r_safe
    } else {
        0.0
    }
}

/// Unweighted reward components of one transition.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardComponents {
    pub collision: f64,
    pub risk: f64,
    pub jerk: f64,
    pub terminal: f64,
}

/// Weighted sum of the four components.
pub fn total_reward(c: &RewardComponents, w: &RewardWeights) -> f64 {
    w.w_h * c.collision + w.w_p * c.risk + w.w_j * c.jerk + c.terminal
}

/// Outcome of one agent step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub components: RewardComponents,
    pub events: Vec<CollisionEvent>,
}

/// One episode of the braking MDP.
///
/// `reset` pre-rolls the simulator to the agent's reaction delay (the
/// middle vehicle coasts until its alert arrives); afterwards every call
/// to `step` applies one scaled policy action. Episodes end when all three
/// vehicles stand still or the horizon is exhausted.
#[derive(Debug, Clone)]
pub struct EmergencyEnv {
    scenario: ScenarioConfig,
    weights: RewardWeights,
    state: SimState,
    any_collision: bool,
    done: bool,
}

impl EmergencyEnv {
    pub fn new(scenario: ScenarioConfig, weights: RewardWeights) -> Self {
        let mut env = EmergencyEnv {
            state: scenario.initial_state(),
            scenario,
            weights,
            any_collision: false,
            done: false,
        };
        env.reset();
        env
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn any_collision(&self) -> bool {
        self.any_collision
    }

    /// Restart the episode and coast to the reaction delay. Collisions
    /// during the pre-roll count against the terminal bonus but produce no
    /// agent reward.
    pub fn reset(&mut self) -> Observation {
        self.state = self.scenario.initial_state();
        self.any_collision = false;
        self.done = false;
        loop {
            let t = self.state.n as f64 * self.scenario.dt;
            if t + TIME_EPS >= self.scenario.tau2 {
                break;
            }
            let (next, events) = sim::step(&self.state, 0.0, &self.scenario);
            self.any_collision |= !events.is_empty();
            self.state = next;
            if self.state.all_stopped() || self.state.n >= self.scenario.horizon {
                self.done = true;
                break;
            }
        }
        self.obs()
    }

    /// Switch to a new scenario and reset.
    pub fn reset_with(&mut self, scenario: ScenarioConfig) -> Observation {
        self.scenario = scenario;
        self.reset()
    }

    pub fn obs(&self) -> Observation {
        observe(&self.state, &self.scenario)
    }

    /// Apply one raw policy action (clipped to [-1, 1], then scaled onto
    /// the acceleration range).
    pub fn step(&mut self, raw_action: f64) -> StepOutcome {
        assert!(!self.done, "step on a finished episode");
        assert!(raw_action.is_finite(), "non-finite action");
        let caps = self.scenario.vehicles[1];
        let cmd = scale_action(raw_action, caps.decel_cap, caps.accel_cap);
        let prev_u2 = self.state.last_u[1];
        let (next, events) = sim::step(&self.state, cmd, &self.scenario);

        self.any_collision |= !events.is_empty();
        let done = next.all_stopped() || next.n >= self.scenario.horizon;

        let components = RewardComponents {
            collision: r_collision(&events, &self.weights),
            risk: r_risk(
                next.d1(),
                next.d2(),
                next.v[1] - next.v[0],
                next.v[2] - next.v[1],
                &self.weights,
            ),
            jerk: r_jerk(next.last_u[1], prev_u2, self.scenario.dt),
            terminal: r_terminal(done, self.any_collision, self.weights.r_safe),
        };
        let reward = total_reward(&components, &self.weights);

        self.state = next;
        self.done = done;
        StepOutcome {
            obs: observe(&self.state, &self.scenario),
            reward,
            done,
            components,
            events,
        }
    }
}

/// Deterministic controller driving the simulator with the policy's mean
/// action (clipped and scaled), for rollouts outside the training loop.
pub fn policy_controller<'a>(
    policy: &'a PolicyNetwork,
    sc: &'a ScenarioConfig,
) -> impl FnMut(&SimState, usize) -> f64 + 'a {
    let caps = sc.vehicles[1];
    move |state, _| {
        let obs = observe(state, sc);
        scale_action(policy.act_mean(&obs), caps.decel_cap, caps.accel_cap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VehiclePair;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn event(pair: VehiclePair, v_rel: f64) -> CollisionEvent {
        CollisionEvent {
            pair,
            step: 0,
            v_rel_pre: v_rel,
            v_rel_post: -0.3 * v_rel,
            harm_front_vehicle: 0.0,
            harm_rear_vehicle: 0.0,
        }
    }

    #[test]
    fn observe_initial_state() {
        let sc = ScenarioConfig::default();
        let obs = observe(&sc.initial_state(), &sc);
        let o = obs.0;
        assert!(close(o[0], 20.0 / 30.0, 1e-15));
        assert!(close(o[1], 18.0 / 30.0, 1e-15));
        assert!(close(o[2], 20.0 / 30.0, 1e-15));
        assert!(close(o[3], 7.0 / 50.0, 1e-15));
        assert!(close(o[4], 7.0 / 50.0, 1e-15));
        assert_eq!(&o[5..8], &[0.0, 0.0, 0.0]);
        assert_eq!(o[8], 0.0);
    }

    #[test]
    fn observe_reflects_active_braking_and_alert_clock() {
        let sc = ScenarioConfig::default();
        let (state, _) = sim::step(&sc.initial_state(), 0.0, &sc);
        let o = observe(&state, &sc).0;
        assert!(close(o[5], -6.0 / A_SCALE, 1e-15)); // lead braking applied
        assert_eq!(o[8], 0.0); // still before the alert

        let mut late = state;
        late.n = 30; // t = 1.5, alert at 0.5, horizon 12 s
        let o = observe(&late, &sc).0;
        assert!(close(o[8], 1.0 / 12.0, 1e-12));
    }

    #[test]
    fn observe_zero_velocities_when_stopped() {
        let mut sc = ScenarioConfig::default();
        sc.v0 = [0.0, 0.0, 0.0];
        let o = observe(&sc.initial_state(), &sc).0;
        assert_eq!(&o[0..3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn scale_action_endpoints_and_midpoint() {
        assert_eq!(scale_action(-1.0, 7.0, 7.0), -7.0);
        assert_eq!(scale_action(1.0, 7.0, 7.0), 7.0);
        assert_eq!(scale_action(0.0, 7.0, 7.0), 0.0);
        // asymmetric range
        assert_eq!(scale_action(0.0, 7.0, 3.0), -2.0);
        // clipping precedes scaling
        assert_eq!(scale_action(-3.0, 7.0, 7.0), -7.0);
    }

    #[test]
    fn r_collision_values() {
        let w = RewardWeights::default();
        assert_eq!(r_collision(&[], &w), 0.0);
        assert!(close(r_collision(&[event(VehiclePair::Front, 2.0)], &w), -4.0, 1e-12));
        let both = [event(VehiclePair::Front, 2.0), event(VehiclePair::Rear, 3.0)];
        assert!(close(r_collision(&both, &w), -13.0, 1e-12));
    }

    #[test]
    fn r_risk_at_target_distance_with_opening_gap() {
        let w = RewardWeights::default();
        // gap exactly at the target, no closing velocity: only the distance
        // sigmoid at zero argument contributes, -0.5 per pair
        let r = r_risk(w.d_target, 1000.0, -1.0, -1.0, &w);
        assert!(close(r, -0.5, 1e-9));
    }

    #[test]
    fn r_risk_ttc_arithmetic() {
        let w = RewardWeights::default(); // d_safe 1, tau_scale 2
        // d = 10, v_rel = 4: TTC = (10-1)/4 = 2.25 s
        let expected_pair = -sigmoid(-2.25 / 2.0) - sigmoid(0.5 * (5.0 - 10.0));
        let r = r_risk(10.0, 1000.0, 4.0, -1.0, &w);
        assert!(close(r, expected_pair, 1e-12));
        // spec'd safety-buffer arithmetic: d = 10, d_safe = 2 gives TTC 2 s
        let mut w2 = w;
        w2.d_safe = 2.0;
        let ttc = (10.0 - w2.d_safe) / 4.0;
        assert!(close(ttc, 2.0, 1e-15));
    }

    #[test]
    fn r_risk_vanishes_for_huge_opening_gaps() {
        let w = RewardWeights::default();
        let r = r_risk(1000.0, 1000.0, -5.0, -5.0, &w);
        assert!(r.abs() < 1e-9);
    }

    #[test]
    fn r_risk_is_bounded() {
        let w = RewardWeights::default();
        let worst = r_risk(-5.0, -5.0, 30.0, 30.0, &w);
        assert!(worst >= -4.0 && worst <= 0.0);
    }

    #[test]
    fn r_jerk_values() {
        assert_eq!(r_jerk(3.0, 3.0, 0.05), 0.0);
        assert!(close(r_jerk(-7.0, 0.0, 0.05), -19600.0, 1e-9));
        assert!(close(r_jerk(1.0, -1.0, 1.0), -4.0, 1e-12));
    }

    #[test]
    fn r_terminal_rules() {
        assert_eq!(r_terminal(true, false, 10.0), 10.0);
        assert_eq!(r_terminal(true, true, 10.0), 0.0);
        assert_eq!(r_terminal(false, false, 10.0), 0.0);
    }

    #[test]
    fn total_reward_weighted_sum() {
        let w = RewardWeights {
            w_h: 1.0,
            w_p: 0.5,
            w_j: 1.0,
            ..RewardWeights::default()
        };
        let c = RewardComponents {
            collision: -4.0,
            risk: -1.0,
            jerk: 0.0,
            terminal: 0.0,
        };
        assert!(close(total_reward(&c, &w), -4.5, 1e-12));
        let zero = RewardComponents::default();
        assert_eq!(total_reward(&zero, &w), 0.0);
        let safe = RewardComponents {
            terminal: 10.0,
            ..RewardComponents::default()
        };
        assert_eq!(total_reward(&safe, &w), 10.0);
    }

    #[test]
    fn env_pre_rolls_to_the_alert() {
        let sc = ScenarioConfig::default();
        let env = EmergencyEnv::new(sc.clone(), RewardWeights::default());
        // tau2 = 0.5, dt = 0.05: ten coast steps before the first decision
        assert_eq!(env.state().n, 10);
        assert!(!env.is_done());
        assert_eq!(env.obs().0[8], 0.0);
    }

    #[test]
    fn env_episode_reaches_terminal_and_blocks_further_steps() {
        let mut sc = ScenarioConfig::default();
        sc.d1_0 = 200.0;
        sc.d2_0 = 200.0;
        let mut env = EmergencyEnv::new(sc, RewardWeights::default());
        let mut last = None;
        let mut total = 0.0;
        while !env.is_done() {
            let out = env.step(-1.0);
            total += out.reward;
            last = Some(out);
        }
        let last = last.unwrap();
        assert!(last.done);
        // collision-free episode earns the sparse bonus
        assert_eq!(last.components.terminal, 10.0);
        assert!(!env.any_collision());
        assert!(total.is_finite());
    }

    #[test]
    fn env_collision_voids_the_terminal_bonus() {
        let sc = ScenarioConfig::default(); // tight gaps collide under -1.0
        let mut env = EmergencyEnv::new(sc, RewardWeights::default());
        let mut saw_collision_penalty = false;
        let mut terminal = 0.0;
        while !env.is_done() {
            let out = env.step(-1.0);
            if out.components.collision < 0.0 {
                saw_collision_penalty = true;
            }
            terminal = out.components.terminal;
        }
        assert!(saw_collision_penalty);
        assert!(env.any_collision());
        assert_eq!(terminal, 0.0);
    }

    #[test]
    fn every_dense_component_is_nonpositive() {
        let sc = ScenarioConfig::default();
        let mut env = EmergencyEnv::new(sc, RewardWeights::default());
        while !env.is_done() {
            let out = env.step(0.3);
            assert!(out.components.collision <= 0.0);
            assert!(out.components.risk <= 0.0 && out.components.risk >= -4.0);
            assert!(out.components.jerk <= 0.0);
            assert!(out.components.terminal == 0.0 || out.components.terminal == 10.0);
        }
    }

    #[test]
    fn weights_toml_roundtrip_and_validation() {
        let text = "w_h = 2.0\nd_target = 6.5\n";
        let w = RewardWeights::from_toml_str(text).unwrap();
        assert_eq!(w.w_h, 2.0);
        assert_eq!(w.d_target, 6.5);
        assert_eq!(w.w_p, RewardWeights::default().w_p);

        assert!(RewardWeights::from_toml_str("k_d = 0.0").is_err());
        assert!(RewardWeights::from_toml_str("unknown = 1").is_err());
    }
}
