//! Reference strategies for the middle vehicle: the non-ethical
//! maximal-braking policy and the constant-deceleration optimizer that
//! sweeps a braking-magnitude grid and picks the harm-minimizing value.
//!
//! The optimizer uses the simulator itself as the harm oracle: each grid
//! point is one rollout, so the returned bound is exact for the chosen
//! discretization. Standalone solves default to a fine evaluation step;
//! the shield solves at the execution step so its bound matches executed
//! harm bit for bit.

use crate::harm::{accumulate, CountPolicy};
use crate::model::{ScenarioConfig, SimState};
use crate::sim::{rollout, TIME_EPS};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};

/// Step used by standalone baseline solves and discretization cross-checks.
pub const FINE_EVAL_DT: f64 = 0.005;
/// Default spacing of the deceleration-magnitude grid.
pub const DEFAULT_GRID_STEP: f64 = 0.01;

/// Result of the constant-deceleration sweep.
///
/// `a_star` is a deceleration magnitude (positive number, applied as
/// braking). When the scenario admits collision-free constant braking,
/// `zero_harm_interval` holds the largest contiguous zero-harm grid run and
/// `a_star` is its gentlest member; otherwise the smallest minimizer wins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineSolution {
    pub a_star: f64,
    pub h_star: f64,
    pub zero_harm_interval: Option<(f64, f64)>,
}

/// Maximal-braking policy: full deceleration from the reaction delay until
/// standstill, regardless of the rear vehicle.
pub fn non_ethical(state: &SimState, step: usize, sc: &ScenarioConfig) -> f64 {
    let t = step as f64 * sc.dt;
    if t + TIME_EPS >= sc.tau2 && state.v[1] > 0.0 {
        -sc.vehicles[1].decel_cap
    } else {
        0.0
    }
}

/// Controller braking at a constant magnitude from the reaction delay until
/// standstill. Shared by the harm sweep and the shield's executor so both
/// sides of a comparison run the identical code path.
pub fn constant_decel_controller(a2: f64) -> impl FnMut(&SimState, usize) -> f64 {
    move |state, _| {
        if state.v[1] > 0.0 {
            -a2
        } else {
            0.0
        }
    }
}

/// First-impact-per-pair harm of braking at constant magnitude `a2`,
/// simulated at the fine evaluation step.
pub fn constant_decel_harm(a2: f64, sc: &ScenarioConfig) -> f64 {
    constant_decel_harm_at(a2, sc, FINE_EVAL_DT)
}

/// Same sweep point at an explicit integration step.
pub fn constant_decel_harm_at(a2: f64, sc: &ScenarioConfig, dt: f64) -> f64 {
    let sim_sc = if (dt - sc.dt).abs() < 1e-15 {
        sc.clone()
    } else {
        sc.with_dt(dt)
    };
    let traj = rollout(&sim_sc, constant_decel_controller(a2));
    accumulate(&traj.events, CountPolicy::FirstPerPair).total
}

/// Grid of candidate deceleration magnitudes: multiples of `grid_step` up
/// to the braking capacity, with the capacity itself always included.
fn decel_grid(cap: f64, grid_step: f64) -> Vec<f64> {
    assert!(grid_step > 0.0, "grid step must be positive");
    let n = (cap / grid_step + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|i| i as f64 * grid_step).collect();
    if *grid.last().unwrap() < cap - 1e-12 {
        grid.push(cap);
    } else {
        *grid.last_mut().unwrap() = cap;
    }
    grid
}

/// Sweep the deceleration grid at the fine evaluation step.
pub fn solve(sc: &ScenarioConfig, grid_step: f64) -> BaselineSolution {
    solve_at(sc, grid_step, FINE_EVAL_DT)
}

/// Sweep the deceleration grid, simulating each grid point at `dt`.
///
/// Ties at equal harm resolve to the smallest magnitude; when zero harm is
/// attainable the gentlest member of the largest zero run is returned so
/// `a_star` always lies inside the reported interval.
pub fn solve_at(sc: &ScenarioConfig, grid_step: f64, dt: f64) -> BaselineSolution {
    let grid = decel_grid(sc.vehicles[1].decel_cap, grid_step);
    let harms: Vec<f64> = grid
        .par_iter()
        .map(|&a2| constant_decel_harm_at(a2, sc, dt))
        .collect();

    let mut best = 0usize;
    for (i, &h) in harms.iter().enumerate() {
        if h < harms[best] {
            best = i;
        }
    }

    if harms[best] == 0.0 {
        // largest contiguous zero run; earliest wins ties
        let mut run_start = None;
        let mut best_run = (0usize, 0usize);
        for i in 0..=harms.len() {
            let zero = i < harms.len() && harms[i] == 0.0;
            match (zero, run_start) {
                (true, None) => run_start = Some(i),
                (false, Some(s)) => {
                    if i - s > best_run.1 - best_run.0 {
                        best_run = (s, i);
                    }
                    run_start = None;
                }
                _ => {}
            }
        }
        let (lo, hi) = (best_run.0, best_run.1 - 1);
        BaselineSolution {
            a_star: grid[lo],
            h_star: 0.0,
            zero_harm_interval: Some((grid[lo], grid[hi])),
        }
    } else {
        BaselineSolution {
            a_star: grid[best],
            h_star: harms[best],
            zero_harm_interval: None,
        }
    }
}

/// Full harm-vs-deceleration curve over the grid, for CSV export.
pub fn harm_curve_at(sc: &ScenarioConfig, grid_step: f64, dt: f64) -> Vec<(f64, f64)> {
    let grid = decel_grid(sc.vehicles[1].decel_cap, grid_step);
    grid.par_iter()
        .map(|&a2| (a2, constant_decel_harm_at(a2, sc, dt)))
        .collect()
}

/// Write a harm-vs-deceleration curve as CSV with columns `a2,harm`.
pub fn write_harm_curve_csv<W: Write>(curve: &[(f64, f64)], out: &mut W) -> io::Result<()> {
    writeln!(out, "a2,harm")?;
    for (a2, harm) in curve {
        writeln!(out, "{a2:.4},{harm:.6}")?;
    }
    Ok(())
}
