//! Shared domain types: vehicle parameters, scenario configuration,
//! simulation state, and resolved collision events.
//!
//! All types are plain values; construction plus invariant checking is the
//! only behavior here. The lead vehicle starts at x = 0 and the followers
//! are placed behind it by the initial gaps, so only relative distances
//! carry physical meaning.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Physical parameters of one vehicle. Masses are in tonnes, accelerations
/// in m/s².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// Mass in tonnes (> 0).
    pub mass: f64,
    /// Maximum braking deceleration magnitude (> 0).
    pub decel_cap: f64,
    /// Maximum forward acceleration (>= 0, may be zero).
    #[serde(default)]
    pub accel_cap: f64,
}

/// Full initial-condition and physical-parameter record for one episode.
///
/// Vehicles are ordered lead → middle → rear. `d1_0` is the lead–middle gap
/// and `d2_0` the middle–rear gap; both are bumper gaps of point-mass
/// vehicles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub vehicles: [VehicleParams; 3],
    /// Initial velocities in m/s (>= 0).
    pub v0: [f64; 3],
    /// Initial lead–middle gap in m (> 0).
    pub d1_0: f64,
    /// Initial middle–rear gap in m (> 0).
    pub d2_0: f64,
    /// Reaction delay of the middle vehicle in s (>= 0).
    pub tau2: f64,
    /// Reaction delay of the rear vehicle in s (>= 0).
    pub tau3: f64,
    /// Coefficient of restitution, 0 = plastic, 1 = elastic.
    pub e: f64,
    /// Velocity ceiling for the middle vehicle in m/s (> 0).
    pub v2_max: f64,
    /// Integration step in s (> 0).
    pub dt: f64,
    /// Number of simulation steps (>= 1).
    pub horizon: usize,
}

impl Default for ScenarioConfig {
    /// Tight reference scenario: 20/18/20 m/s, 7 m gaps, 0.5/0.8 s delays,
    /// 6/7/6 m/s² caps, 4.5/5.5/5.9 t masses, e = 0.3, 12 s horizon.
    fn default() -> Self {
        ScenarioConfig {
            vehicles: [
                VehicleParams {
                    mass: 4.5,
                    decel_cap: 6.0,
                    accel_cap: 6.0,
                },
                VehicleParams {
                    mass: 5.5,
                    decel_cap: 7.0,
                    accel_cap: 7.0,
                },
                VehicleParams {
                    mass: 5.9,
                    decel_cap: 6.0,
                    accel_cap: 6.0,
                },
            ],
            v0: [20.0, 18.0, 20.0],
            d1_0: 7.0,
            d2_0: 7.0,
            tau2: 0.5,
            tau3: 0.8,
            e: 0.3,
            v2_max: 30.0,
            dt: 0.05,
            horizon: 240,
        }
    }
}

/// One violated invariant, reported with the offending field.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{field}: {message}")]
pub struct ValidationError {
    pub field: String,
    pub message: String,
}

impl ValidationError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        ValidationError {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

/// Errors from loading a scenario-like config file.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config not found or unreadable: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {}", format_violations(.0))]
    Invalid(Vec<ValidationError>),
}

pub(crate) fn format_violations(errs: &[ValidationError]) -> String {
    errs.iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

fn check(
    errs: &mut Vec<ValidationError>,
    ok: bool,
    field: &str,
    message: impl Into<String>,
) {
    if !ok {
        errs.push(ValidationError::new(field, message));
    }
}

impl ScenarioConfig {
    /// Check every invariant and return the full violation list.
    ///
    /// Never aborts: non-finite values are reported like any other bound
    /// violation.
    pub fn validate(&self) -> Result<(), Vec<ValidationError>> {
        let mut errs = Vec::new();
        for (i, veh) in self.vehicles.iter().enumerate() {
            let name = |f: &str| format!("vehicles[{i}].{f}");
            check(
                &mut errs,
                veh.mass.is_finite() && veh.mass > 0.0,
                &name("mass"),
                "mass must be positive",
            );
            check(
                &mut errs,
                veh.decel_cap.is_finite() && veh.decel_cap > 0.0,
                &name("decel_cap"),
                "braking capacity must be positive",
            );
            check(
                &mut errs,
                veh.accel_cap.is_finite() && veh.accel_cap >= 0.0,
                &name("accel_cap"),
                "acceleration cap must be nonnegative",
            );
        }
        for (i, v) in self.v0.iter().enumerate() {
            check(
                &mut errs,
                v.is_finite() && *v >= 0.0,
                &format!("v0[{i}]"),
                "initial velocity must be nonnegative",
            );
        }
        check(
            &mut errs,
            self.d1_0.is_finite() && self.d1_0 > 0.0,
            "d1_0",
            "initial gap must be positive",
        );
        check(
            &mut errs,
            self.d2_0.is_finite() && self.d2_0 > 0.0,
            "d2_0",
            "initial gap must be positive",
        );
        check(
            &mut errs,
            self.tau2.is_finite() && self.tau2 >= 0.0,
            "tau2",
            "delay must be nonnegative",
        );
        check(
            &mut errs,
            self.tau3.is_finite() && self.tau3 >= 0.0,
            "tau3",
            "delay must be nonnegative",
        );
        check(
            &mut errs,
            self.e.is_finite() && (0.0..=1.0).contains(&self.e),
            "e",
            "restitution out of [0,1]",
        );
        check(
            &mut errs,
            self.v2_max.is_finite() && self.v2_max > 0.0,
            "v2_max",
            "velocity ceiling must be positive",
        );
        check(
            &mut errs,
            !self.v0[1].is_finite() || !self.v2_max.is_finite() || self.v0[1] <= self.v2_max,
            "v0[1]",
            "initial middle-vehicle velocity exceeds v2_max",
        );
        check(
            &mut errs,
            self.dt.is_finite() && self.dt > 0.0,
            "dt",
            "step must be positive",
        );
        check(&mut errs, self.horizon >= 1, "horizon", "horizon must be >= 1");
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    /// Initial simulation state: lead vehicle at the origin, followers
    /// placed behind it by the initial gaps.
    pub fn initial_state(&self) -> SimState {
        SimState {
            x: [0.0, -self.d1_0, -self.d1_0 - self.d2_0],
            v: self.v0,
            n: 0,
            pair_collided: [false, false],
            last_u: [0.0; 3],
        }
    }

    /// Total simulated time span in seconds.
    pub fn horizon_seconds(&self) -> f64 {
        self.horizon as f64 * self.dt
    }

    /// Same scenario re-discretized at a different step, keeping the time
    /// span (horizon count is rescaled).
    pub fn with_dt(&self, dt: f64) -> ScenarioConfig {
        let mut sc = self.clone();
        sc.horizon = ((self.horizon_seconds() / dt).round() as usize).max(1);
        sc.dt = dt;
        sc
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let sc: ScenarioConfig = toml::from_str(text)?;
        sc.validate().map_err(ConfigError::Invalid)?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Positions and velocities of all three vehicles plus step bookkeeping.
///
/// `last_u` holds the accelerations applied over the step that produced
/// this state (all zeros for an initial state); index 1 is the controlled
/// middle vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub x: [f64; 3],
    pub v: [f64; 3],
    /// Step index; the state time is `n * dt`.
    pub n: usize,
    /// Whether each pair has collided at least once so far.
    pub pair_collided: [bool; 2],
    /// Accelerations applied over the previous step (lead, middle, rear).
    pub last_u: [f64; 3],
}

impl SimState {
    /// Lead–middle gap.
    pub fn d1(&self) -> f64 {
        self.x[0] - self.x[1]
    }

    /// Middle–rear gap.
    pub fn d2(&self) -> f64 {
        self.x[1] - self.x[2]
    }

    /// Closing velocity of a pair (rear member minus front member);
    /// positive means the gap is shrinking.
    pub fn closing_velocity(&self, pair: VehiclePair) -> f64 {
        match pair {
            VehiclePair::Front => self.v[1] - self.v[0],
            VehiclePair::Rear => self.v[2] - self.v[1],
        }
    }

    /// Acceleration applied to the middle vehicle over the previous step.
    pub fn last_u2(&self) -> f64 {
        self.last_u[1]
    }

    pub fn all_stopped(&self) -> bool {
        self.v == [0.0, 0.0, 0.0]
    }
}

/// Which consecutive pair of vehicles an event refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VehiclePair {
    /// Lead–middle pair.
    Front,
    /// Middle–rear pair.
    Rear,
}

impl VehiclePair {
    /// Index of the pair's front vehicle in state arrays.
    pub fn front_index(self) -> usize {
        match self {
            VehiclePair::Front => 0,
            VehiclePair::Rear => 1,
        }
    }

    /// Index of the pair's rear vehicle in state arrays.
    pub fn rear_index(self) -> usize {
        self.front_index() + 1
    }
}

impl fmt::Display for VehiclePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VehiclePair::Front => write!(f, "front"),
            VehiclePair::Rear => write!(f, "rear"),
        }
    }
}

/// A resolved impact between two consecutive vehicles.
///
/// `v_rel_pre` is the closing velocity immediately before the impulse
/// (always > 0), `v_rel_post = -e * v_rel_pre` the relative velocity right
/// after it. Harm is charged to both pair members at the event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub pair: VehiclePair,
    /// Index of the step over which the impact was detected.
    pub step: usize,
    pub v_rel_pre: f64,
    pub v_rel_post: f64,
    pub harm_front_vehicle: f64,
    pub harm_rear_vehicle: f64,
}
