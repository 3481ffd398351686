//! Log-linear intensity with optional logistic detection thinning and a fixed
//! effort offset:
//!
//! ```text
//! log η = βᵀx + log g(γ₁ᵀw₁) + γ₂ᵀw₂ + log effort,    g(z) = 1 / (1 + e^{-z})
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Grid, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    /// Drives the true intensity.
    Environment,
    /// Enters through the logistic detection probability.
    Detection,
    /// Log-linear effort covariates.
    Effort,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub raster: Raster,
}

impl Covariate {
    pub fn new(name: impl Into<String>, raster: Raster) -> Self {
        Self { name: name.into(), raster }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateBlock {
    pub name: String,
    pub kind: BlockKind,
    pub covariates: Vec<Covariate>,
}

impl CovariateBlock {
    pub fn new(name: impl Into<String>, kind: BlockKind, covariates: Vec<Covariate>) -> Self {
        Self { name: name.into(), kind, covariates }
    }
}

/// Names of the coefficients in the order used by coefficient vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub name: String,
    pub kind: BlockKind,
    pub coefficients: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityModel {
    grid: Grid,
    blocks: Vec<CovariateBlock>,
    effort: Option<Raster>,
    pub mark: Option<String>,
}

impl IntensityModel {
    pub fn new(grid: Grid, blocks: Vec<CovariateBlock>, effort: Option<Raster>) -> Result<Self> {
        let mut names = std::collections::HashSet::new();
        let mut detection = 0;
        for b in &blocks {
            if !names.insert(b.name.as_str()) {
                return invalid(format!("duplicate block name `{}`", b.name));
            }
            if b.covariates.is_empty() {
                return invalid(format!("block `{}` has no covariates", b.name));
            }
            if b.kind == BlockKind::Detection {
                detection += 1;
            }
            for c in &b.covariates {
                if c.raster.grid != grid {
                    return invalid(format!("covariate `{}` is on a different grid", c.name));
                }
            }
        }
        if detection > 1 {
            return invalid("at most one detection block is supported");
        }
        if let Some(e) = &effort {
            if e.grid != grid {
                return invalid("effort offset is on a different grid");
            }
            if let Some(cell) = e.values().iter().position(|v| *v < 0.0) {
                return invalid(format!("negative effort in cell {cell}"));
            }
        }
        Ok(Self { grid, blocks, effort, mark: None })
    }

    pub fn with_mark(mut self, mark: impl Into<String>) -> Self {
        self.mark = Some(mark.into());
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn blocks(&self) -> &[CovariateBlock] {
        &self.blocks
    }

    pub fn effort(&self) -> Option<&Raster> {
        self.effort.as_ref()
    }

    /// Same covariates, different (or no) effort offset.
    pub fn with_effort(&self, effort: Option<Raster>) -> Result<Self> {
        let mut m = Self::new(self.grid, self.blocks.clone(), effort)?;
        m.mark.clone_from(&self.mark);
        Ok(m)
    }

    pub fn n_coefficients(&self) -> usize {
        self.blocks.iter().map(|b| b.covariates.len()).sum()
    }

    pub fn layout(&self) -> Vec<BlockLayout> {
        self.blocks
            .iter()
            .map(|b| BlockLayout {
                name: b.name.clone(),
                kind: b.kind,
                coefficients: b.covariates.iter().map(|c| c.name.clone()).collect(),
            })
            .collect()
    }

    /// Position of coefficient `coef` of block `block` in the flat vector.
    pub fn coefficient_index(&self, block: &str, coef: &str) -> Option<usize> {
        let mut offset = 0;
        for b in &self.blocks {
            if b.name == block {
                return b.covariates.iter().position(|c| c.name == coef).map(|i| offset + i);
            }
            offset += b.covariates.len();
        }
        None
    }

    pub(crate) fn check_coefficients(&self, coefs: &[f64]) -> Result<()> {
        if coefs.len() != self.n_coefficients() {
            return invalid(format!(
                "model has {} coefficients, got {}",
                self.n_coefficients(),
                coefs.len()
            ));
        }
        Ok(())
    }

    /// Effort at a cell; 1 without an offset.
    pub fn effort_at(&self, cell: usize) -> Result<f64> {
        match &self.effort {
            Some(e) => e.get(cell),
            None => Ok(1.0),
        }
    }

    /// Covariate row and per-column kinds for one cell.
    pub(crate) fn row(&self, cell: usize, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        for b in &self.blocks {
            for c in &b.covariates {
                out.push(c.raster.get(cell)?);
            }
        }
        Ok(())
    }

    pub(crate) fn column_kinds(&self) -> Vec<BlockKind> {
        self.blocks.iter().flat_map(|b| std::iter::repeat_n(b.kind, b.covariates.len())).collect()
    }
}

/// Linear-predictor pieces at one cell, with first and second derivatives
/// of `log η` in the coefficients.
#[derive(Debug, Clone)]
pub(crate) struct PredictorEval {
    pub log_eta: f64,
    /// ∂ log η / ∂θ
    pub u: Vec<f64>,
    /// ∂² log η / ∂θ² is `-detect_curv · w wᵀ` over the detection columns.
    pub detect_curv: f64,
}

pub(crate) fn log_sigmoid(z: f64) -> f64 {
    // log(1 / (1 + e^{-z})) without overflow
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Evaluate `log η` for a covariate row. `log_offset` is `log effort`.
pub(crate) fn evaluate_row(kinds: &[BlockKind], row: &[f64], coefs: &[f64], log_offset: f64) -> PredictorEval {
    let mut lin = log_offset;
    let mut z = 0.0;
    let mut has_detection = false;
    for ((k, x), b) in kinds.iter().zip(row).zip(coefs) {
        match k {
            BlockKind::Detection => {
                z += b * x;
                has_detection = true;
            }
            _ => lin += b * x,
        }
    }
    if !has_detection {
        return PredictorEval { log_eta: lin, u: row.to_vec(), detect_curv: 0.0 };
    }
    let g = sigmoid(z);
    let tail = sigmoid(-z);
    let u = kinds
        .iter()
        .zip(row)
        .map(|(k, x)| if *k == BlockKind::Detection { tail * x } else { *x })
        .collect();
    PredictorEval { log_eta: lin + log_sigmoid(z), u, detect_curv: g * tail }
}

/// Intensity `η` at a cell.
pub fn eta(model: &IntensityModel, coefs: &[f64], cell: usize) -> Result<f64> {
    model.check_coefficients(coefs)?;
    if cell >= model.grid.len() {
        return invalid(format!("cell {cell} outside the grid"));
    }
    let mut row = Vec::new();
    model.row(cell, &mut row)?;
    let effort = model.effort_at(cell)?;
    if effort == 0.0 {
        return Ok(0.0);
    }
    let kinds = model.column_kinds();
    Ok(evaluate_row(&kinds, &row, coefs, effort.ln()).log_eta.exp())
}

/// Built-in covariate surfaces in grid coordinates.
pub mod surfaces {
    use super::*;

    pub fn constant(grid: &Grid, value: f64) -> Raster {
        Raster::constant(*grid, value)
    }

    pub fn x(grid: &Grid) -> Raster {
        Raster::from_fn(*grid, |p| p.x)
    }

    pub fn y(grid: &Grid) -> Raster {
        Raster::from_fn(*grid, |p| p.y)
    }

    pub fn x2(grid: &Grid) -> Raster {
        Raster::from_fn(*grid, |p| p.x * p.x)
    }

    pub fn y2(grid: &Grid) -> Raster {
        Raster::from_fn(*grid, |p| p.y * p.y)
    }

    pub fn xy(grid: &Grid) -> Raster {
        Raster::from_fn(*grid, |p| p.x * p.y)
    }

    pub fn by_name(grid: &Grid, name: &str) -> Result<Raster> {
        Ok(match name {
            "one" | "intercept" => constant(grid, 1.0),
            "x" => x(grid),
            "y" => y(grid),
            "x2" => x2(grid),
            "y2" => y2(grid),
            "xy" => xy(grid),
            other => return Err(Error::InvalidArgument(format!("unknown built-in covariate `{other}`"))),
        })
    }
}

/// Names of the full quadratic surface in `(x, y)`.
pub const QUADRATIC_TERMS: [&str; 6] = ["intercept", "x", "y", "x2", "y2", "xy"];

/// Environment block `env` holding an intercept and the full quadratic
/// surface in the cell-center coordinates.
pub fn quadratic_model(grid: &Grid, effort: Option<Raster>) -> Result<IntensityModel> {
    let covariates = QUADRATIC_TERMS
        .iter()
        .map(|n| Ok(Covariate::new(*n, surfaces::by_name(grid, n)?)))
        .collect::<Result<Vec<_>>>()?;
    IntensityModel::new(*grid, vec![CovariateBlock::new("env", BlockKind::Environment, covariates)], effort)
}

/// Intercept-only model.
pub fn homogeneous_model(grid: &Grid, effort: Option<Raster>) -> Result<IntensityModel> {
    IntensityModel::new(
        *grid,
        vec![CovariateBlock::new(
            "env",
            BlockKind::Environment,
            vec![Covariate::new("intercept", surfaces::constant(grid, 1.0))],
        )],
        effort,
    )
}
