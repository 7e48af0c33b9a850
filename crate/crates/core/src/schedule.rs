//! Noise-time grid, the forward noising process, and the Euler update.
//!
//! Convention: clean data lives at `t = 0`, pure noise at `t = 1`, and the
//! interpolation is `z_t = (1 - t) * x + t * n` with ground-truth velocity
//! `v = n - x` (pointing data -> noise). Integration therefore runs down the
//! schedule with the signed step `dt = -1/T`, so `x + v * dt` denoises.

use crate::error::{Error, Result};
use crate::mvgrid::{GridNoise, Raster};

/// Descending noise times `[n_max/T, ..., 1/T]` plus the signed Euler step.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    dt: f64,
    total_steps: usize,
    active_steps: usize,
}

impl TimeGrid {
    /// Times in iteration order (strictly descending).
    pub fn times(&self) -> &[f64] {
        &self.times
    }
    /// Signed step `-1/T`.
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn total_steps(&self) -> usize {
        self.total_steps
    }
    pub fn active_steps(&self) -> usize {
        self.active_steps
    }
    /// The schedule index `i` (counting down from `n_max` to 1) of the j-th
    /// iterated entry; useful for diagnostics.
    pub fn step_index(&self, j: usize) -> usize {
        self.active_steps - j
    }
}

/// Build the uniform schedule with `active_steps` entries out of
/// `total_steps`: times `[n_max/T, (n_max-1)/T, ..., 1/T]`, `dt = -1/T`.
pub fn make_schedule(total_steps: usize, active_steps: usize) -> Result<TimeGrid> {
    if total_steps < 1 || active_steps < 1 || active_steps > total_steps {
        return Err(Error::InvalidConfig(format!(
            "schedule needs 1 <= active_steps <= total_steps, got active {active_steps}, total {total_steps}"
        )));
    }
    let t_denom = total_steps as f64;
    let times = (1..=active_steps).rev().map(|i| i as f64 / t_denom).collect();
    Ok(TimeGrid {
        times,
        dt: -1.0 / t_denom,
        total_steps,
        active_steps,
    })
}

/// Rectified-flow noising: `z = (1 - t) * x + t * n`, elementwise. Works on
/// any raster (full grids and single views alike); shapes must match.
pub fn add_noise<T: Raster>(x: &T, n: &GridNoise, t: f64) -> Result<T> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange {
            context: "add_noise",
            detail: format!("t = {t} outside [0, 1]"),
        });
    }
    if !x.same_shape(n) {
        return Err(Error::ShapeMismatch {
            context: "add_noise",
            expected: x.shape_string(),
            actual: n.shape_string(),
        });
    }
    let a = 1.0 - t;
    let values = x
        .values()
        .iter()
        .zip(n.values())
        .map(|(&xv, &nv)| a * xv + t * nv)
        .collect();
    Ok(x.with_values(values))
}

/// One Euler step: `x + delta_v * dt`, elementwise.
pub fn euler_update<T: Raster>(x: &T, delta_v: &T, dt: f64) -> Result<T> {
    if !dt.is_finite() {
        return Err(Error::OutOfRange {
            context: "euler_update",
            detail: format!("dt = {dt} not finite"),
        });
    }
    if !x.same_shape(delta_v) {
        return Err(Error::ShapeMismatch {
            context: "euler_update",
            expected: x.shape_string(),
            actual: delta_v.shape_string(),
        });
    }
    let values = x
        .values()
        .iter()
        .zip(delta_v.values())
        .map(|(&xv, &dv)| xv + dv * dt)
        .collect();
    Ok(x.with_values(values))
}
