use serde::{Deserialize, Serialize};

use super::fit::{coefficient_names, FitResult};
use super::model::{sigmoid, BlockKind, IntensityModel};
use crate::error::{invalid, Result};
use crate::geometry::Raster;

/// Constants substituted for the detection and effort parts of the
/// intensity. `None` keeps the fitted block (and the effort offset).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Fix {
    /// Replaces `exp(γ₂ᵀw₂) · effort`.
    pub effort: Option<f64>,
    /// Replaces `g(γ₁ᵀw₁)`.
    pub detection: Option<f64>,
}

impl Fix {
    /// Both parts held at one: the true intensity.
    pub fn true_intensity() -> Self {
        Self { effort: Some(1.0), detection: Some(1.0) }
    }
}

/// Intensity raster from fitted coefficients.
pub fn predict_intensity(fit: &FitResult, model: &IntensityModel, fix: Fix) -> Result<Raster> {
    predict_with_coefficients(&fit.coefficients, model, fix, Some(&fit.names))
}

pub(crate) fn predict_with_coefficients(
    coefs: &[f64],
    model: &IntensityModel,
    fix: Fix,
    names: Option<&[String]>,
) -> Result<Raster> {
    model.check_coefficients(coefs)?;
    if let Some(names) = names {
        if names != coefficient_names(model, None).as_slice() {
            return invalid("fit coefficients do not match the model layout");
        }
    }
    if let Some(c) = fix.effort {
        if !(c.is_finite() && c >= 0.0) {
            return invalid(format!("fixed effort {c} must be finite and non-negative"));
        }
    }
    if let Some(c) = fix.detection {
        if !(0.0..=1.0).contains(&c) {
            return invalid(format!("fixed detection {c} must lie in [0, 1]"));
        }
    }
    let grid = *model.grid();
    let mut env = vec![0.0; grid.len()];
    let mut eff = vec![0.0; grid.len()];
    let mut det = vec![0.0; grid.len()];
    let mut offset = 0;
    for b in model.blocks() {
        let target = match b.kind {
            BlockKind::Environment => &mut env,
            BlockKind::Effort => &mut eff,
            BlockKind::Detection => &mut det,
        };
        for (c, beta) in b.covariates.iter().zip(&coefs[offset..]) {
            let skip = match b.kind {
                BlockKind::Effort => fix.effort.is_some(),
                BlockKind::Detection => fix.detection.is_some(),
                BlockKind::Environment => false,
            };
            if skip {
                continue;
            }
            for (t, v) in target.iter_mut().zip(c.raster.values()) {
                *t += beta * v;
            }
        }
        offset += b.covariates.len();
    }
    let has_detection = model.blocks().iter().any(|b| b.kind == BlockKind::Detection);
    let mut out = Vec::with_capacity(grid.len());
    for cell in 0..grid.len() {
        if env[cell].is_nan() {
            out.push(f64::NAN);
            continue;
        }
        let effort = match fix.effort {
            Some(c) => c,
            None => model.effort_at(cell)? * eff[cell].exp(),
        };
        let detection = match fix.detection {
            Some(c) => c,
            None if has_detection => sigmoid(det[cell]),
            None => 1.0,
        };
        out.push(env[cell].exp() * effort * detection);
    }
    Raster::new(grid, out)
}
