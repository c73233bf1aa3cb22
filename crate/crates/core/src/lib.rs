//! Deterministic three-vehicle emergency-braking laboratory.
//!
//! The crate simulates a lead / middle / rear vehicle chain during an
//! emergency stop: the lead vehicle brakes at full capacity from t = 0, the
//! rear vehicle follows after a communication delay, and the middle vehicle
//! is the controlled agent. Collisions are resolved as momentum-conserving
//! impulses with a coefficient of restitution, and collision severity is
//! charged as the mass-weighted square of the relative impact velocity.
//!
//! On top of the simulator sit:
//!
//! * [`baseline`] — a constant-deceleration optimizer that sweeps the
//!   braking-magnitude grid and picks the harm-minimizing value,
//! * [`env`] — an episodic MDP wrapper with shaped rewards,
//! * [`nn`], [`ppo`], [`sac`], [`train`] — small MLP function approximators
//!   with hand-rolled backprop and the two policy-gradient trainers,
//! * [`shield`] — a runtime selector that executes the learned policy only
//!   when its predicted harm does not exceed the baseline bound,
//! * [`eval`] — Monte-Carlo scenario sampling and the strategy-comparison
//!   harness with CSV exports.

pub mod baseline;
pub mod env;
pub mod eval;
pub mod harm;
pub mod model;
pub mod nn;
pub mod ppo;
pub mod rng;
pub mod sac;
pub mod shield;
pub mod sim;
pub mod train;
