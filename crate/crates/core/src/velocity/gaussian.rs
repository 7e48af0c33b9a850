//! Closed-form marginal velocity for conditionally Gaussian data: the
//! analytic oracle against which the edit loop is verified.

use super::{check_cond_shape, MeanMap, VelocityModel};
use crate::error::{Error, Result};
use crate::mvgrid::{MvGrid, Raster, ViewImage};

/// The exact marginal velocity `E[n - x | z_t = z]` when the clean data is
/// `x ~ N(M * cond, s^2 I)`, the noise is `n ~ N(0, I)`, and
/// `z_t = (1 - t) x + t n`.
///
/// With `a = 1 - t` and `d = a^2 s^2 + t^2`, the Gaussian posterior gives
/// `E[x|z] = mu + (a s^2 / d) (z - a mu)` and `E[n|z] = (t / d) (z - a mu)`
/// where `mu = M * cond`, hence
///
/// `v = E[n|z] - E[x|z] = -mu + ((t - a s^2) / d) * (z - a mu)`.
///
/// Endpoints: at `t = 1` this reduces to `z - mu` (x unobserved), at `t = 0`
/// to `-z` (z is the data itself, n independent of it).
pub fn gaussian_velocity(
    z: &MvGrid,
    cond: &ViewImage,
    t: f64,
    mean_map: &MeanMap,
    data_std: f64,
) -> Result<MvGrid> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange {
            context: "gaussian_velocity",
            detail: format!("t = {t} outside [0, 1]"),
        });
    }
    if !data_std.is_finite() || data_std < 0.0 {
        return Err(Error::OutOfRange {
            context: "gaussian_velocity",
            detail: format!("data_std = {data_std} must be finite and >= 0"),
        });
    }
    if t == 0.0 && data_std == 0.0 {
        return Err(Error::DegeneratePosterior);
    }
    check_cond_shape(z, cond, "gaussian_velocity")?;

    let a = 1.0 - t;
    let s2 = data_std * data_std;
    let denom = a * a * s2 + t * t;
    let coef = (t - a * s2) / denom;
    let mu = mean_map.apply(cond);
    let values = z
        .values()
        .iter()
        .zip(mu.values())
        .map(|(&zv, &mv)| -mv + coef * (zv - a * mv))
        .collect();
    Ok(z.with_values(values))
}

/// Analytic flow model for conditionally Gaussian data; stands in for the
/// pretrained backbone in oracle tests.
#[derive(Debug, Clone)]
pub struct GaussianFlowModel {
    mean_map: MeanMap,
    data_std: f64,
}

impl GaussianFlowModel {
    pub fn new(mean_map: MeanMap, data_std: f64) -> Result<Self> {
        if !data_std.is_finite() || data_std <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "data_std must be finite and > 0, got {data_std}"
            )));
        }
        Ok(Self {
            mean_map,
            data_std,
        })
    }

    pub fn mean_map(&self) -> &MeanMap {
        &self.mean_map
    }

    pub fn data_std(&self) -> f64 {
        self.data_std
    }
}

impl VelocityModel for GaussianFlowModel {
    fn predict_raw(&self, z: &MvGrid, cond: &ViewImage, t: f64) -> Result<MvGrid> {
        gaussian_velocity(z, cond, t, &self.mean_map, self.data_std)
    }
}
