//! A time-independent affine velocity field. Because it is affine in `(z,
//! cond)`, the shared-noise differences in the edit loop cancel its noise
//! dependence exactly, making it the testbed for seed-invariance claims.

use super::{check_cond_shape, MeanMap, VelocityModel};
use crate::error::{Error, Result};
use crate::mvgrid::{MvGrid, Raster, ViewImage};

/// `v(z, cond, t) = grid_gain * z + cond_map(cond) + offset` (no time
/// dependence). `grid_gain` is a scalar multiple of the identity on grids;
/// `cond_map` maps the condition view into grid space; `offset` is a constant
/// grid.
#[derive(Debug, Clone)]
pub struct LinearFlowModel {
    grid_gain: f64,
    cond_map: MeanMap,
    offset: MvGrid,
}

impl LinearFlowModel {
    pub fn new(grid_gain: f64, cond_map: MeanMap, offset: MvGrid) -> Result<Self> {
        if !grid_gain.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "grid_gain must be finite, got {grid_gain}"
            )));
        }
        Ok(Self {
            grid_gain,
            cond_map,
            offset,
        })
    }

    pub fn grid_gain(&self) -> f64 {
        self.grid_gain
    }
    pub fn cond_map(&self) -> &MeanMap {
        &self.cond_map
    }
    pub fn offset(&self) -> &MvGrid {
        &self.offset
    }
}

impl VelocityModel for LinearFlowModel {
    fn predict_raw(&self, z: &MvGrid, cond: &ViewImage, _t: f64) -> Result<MvGrid> {
        check_cond_shape(z, cond, "LinearFlowModel")?;
        if !z.same_shape(&self.offset) {
            return Err(Error::ShapeMismatch {
                context: "LinearFlowModel",
                expected: self.offset.shape_string(),
                actual: z.shape_string(),
            });
        }
        let mapped = self.cond_map.apply(cond);
        let values = z
            .values()
            .iter()
            .zip(mapped.values())
            .zip(self.offset.values())
            .map(|((&zv, &mv), &ov)| self.grid_gain * zv + mv + ov)
            .collect();
        Ok(z.with_values(values))
    }
}
