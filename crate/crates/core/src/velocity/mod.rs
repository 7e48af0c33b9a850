//! The velocity-model contract `v(z, cond, t)` with classifier-free guidance,
//! plus three implementations:
//!
//! * [`GaussianFlowModel`] — closed-form marginal velocity for conditionally
//!   Gaussian data (the analytic oracle),
//! * [`LinearFlowModel`] — a time-independent affine field (exact algebraic
//!   cancellation testbed),
//! * [`TinyFlowNet`] — a small trainable convolutional network.

mod gaussian;
mod linear;
mod tiny;

pub use gaussian::{gaussian_velocity, GaussianFlowModel};
pub use linear::LinearFlowModel;
pub use tiny::{CheckpointHeader, TinyArch, TinyFlowNet, CHECKPOINT_VERSION};

use crate::error::{Error, Result};
use crate::mvgrid::{GridNoise, MvGrid, Raster, ViewImage, CHANNELS, GRID_COLS, GRID_ROWS};
use crate::schedule::add_noise;

/// A conditional velocity field over grids: maps a (possibly noised) grid, a
/// (possibly noised) condition view, and a time to a velocity grid of the same
/// shape; outputs are finite for finite inputs.
pub trait VelocityModel {
    /// The raw conditional prediction, no guidance applied.
    fn predict_raw(&self, z: &MvGrid, cond: &ViewImage, t: f64) -> Result<MvGrid>;

    /// Whether the model accepts the all-zero null condition as an
    /// unconditional branch (needed for guidance weights other than 1).
    fn supports_unconditional(&self) -> bool {
        true
    }
}

/// Guidance weights for the two branches of the edit loop.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GuidanceConfig {
    /// Weight used when predicting the target-branch velocity.
    pub cfg_tar: f64,
    /// Weight for the source branch; 1 (no guidance) unless overridden.
    pub cfg_src: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            cfg_tar: 3.5,
            cfg_src: 1.0,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("cfg_tar", self.cfg_tar), ("cfg_src", self.cfg_src)] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "guidance weight {name} = {w} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

fn check_cond_shape(z: &MvGrid, cond: &ViewImage, context: &'static str) -> Result<()> {
    if cond.width() != z.tile_width() || cond.height() != z.tile_height() {
        return Err(Error::ShapeMismatch {
            context,
            expected: format!("condition {}x{}", z.tile_width(), z.tile_height()),
            actual: format!("condition {}x{}", cond.width(), cond.height()),
        });
    }
    Ok(())
}

/// Classifier-free guidance: `v = v_uncond + w * (v_cond - v_uncond)` with the
/// all-zero view as the unconditional input. `w = 1` short-circuits to the raw
/// conditional prediction (bit-exact), `w = 0` to the unconditional one.
pub fn predict(
    model: &dyn VelocityModel,
    z: &MvGrid,
    cond: &ViewImage,
    t: f64,
    w: f64,
) -> Result<MvGrid> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange {
            context: "predict",
            detail: format!("t = {t} outside [0, 1]"),
        });
    }
    if !w.is_finite() || w < 0.0 {
        return Err(Error::OutOfRange {
            context: "predict",
            detail: format!("guidance weight {w} must be finite and >= 0"),
        });
    }
    if w == 1.0 {
        return model.predict_raw(z, cond, t);
    }
    if !model.supports_unconditional() {
        return Err(Error::NoUnconditionalSupport { weight: w });
    }
    let null = ViewImage::zeros(cond.width(), cond.height())?;
    let v_uncond = model.predict_raw(z, &null, t)?;
    let v_cond = model.predict_raw(z, cond, t)?;
    let values = v_uncond
        .values()
        .iter()
        .zip(v_cond.values())
        .map(|(&u, &c)| u + w * (c - u))
        .collect();
    Ok(v_uncond.with_values(values))
}

/// A structured linear operator from condition-view values to grid values:
/// tile `k` of the output is `gains[k] *` the condition view, elementwise.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeanMap {
    gains: [f64; 6],
}

impl MeanMap {
    pub fn new(gains: [f64; 6]) -> Result<Self> {
        if gains.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "mean-map gains must be finite, got {gains:?}"
            )));
        }
        Ok(Self { gains })
    }

    /// The same gain on every tile.
    pub fn uniform(gain: f64) -> Result<Self> {
        Self::new([gain; 6])
    }

    pub fn gains(&self) -> &[f64; 6] {
        &self.gains
    }

    /// Apply the operator: grid whose tile `k` is `gains[k] * cond`.
    pub fn apply(&self, cond: &ViewImage) -> MvGrid {
        let (tw, th) = (cond.width(), cond.height());
        let grid_w = tw * GRID_COLS;
        let mut values = vec![0.0; grid_w * th * GRID_ROWS * CHANNELS];
        let cv = cond.values();
        for k in 0..6 {
            let (row, col) = (k / GRID_COLS, k % GRID_COLS);
            let g = self.gains[k];
            for ly in 0..th {
                let src = ly * tw * CHANNELS;
                let dst = ((row * th + ly) * grid_w + col * tw) * CHANNELS;
                for j in 0..tw * CHANNELS {
                    values[dst + j] = g * cv[src + j];
                }
            }
        }
        MvGrid::from_values(tw, th, values).expect("mean map of finite inputs is finite")
    }
}

/// One flow-matching training record: a clean grid, its own condition view, a
/// sampled time, and a noise draw.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub x0: MvGrid,
    pub cond: ViewImage,
    pub t: f64,
    pub noise: GridNoise,
}

/// Conditional flow-matching objective: mean over the batch of
/// `||model(add_noise(x0, n, t), cond, t) - (n - x0)||^2 / element_count`.
pub fn flow_matching_loss(model: &dyn VelocityModel, batch: &[TrainExample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for ex in batch {
        let z = add_noise(&ex.x0, &ex.noise, ex.t)?;
        let pred = model.predict_raw(&z, &ex.cond, ex.t)?;
        let n_elem = pred.values().len() as f64;
        let sum_sq: f64 = pred
            .values()
            .iter()
            .zip(ex.noise.values())
            .zip(ex.x0.values())
            .map(|((&p, &n), &x)| {
                let d = p - (n - x);
                d * d
            })
            .sum();
        total += sum_sq / n_elem;
    }
    Ok(total / batch.len() as f64)
}
