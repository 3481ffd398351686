//! UDs, mark probabilities, exceedance maps and evaluation metrics.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::Raster;
use crate::ppm::fit::FitResult;
use crate::ppm::model::{BlockKind, IntensityModel};
use crate::ppm::predict::{predict_with_coefficients, Fix};

/// Probability density per unit area; integrates to one over the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UdRaster {
    raster: Raster,
}

impl UdRaster {
    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    pub fn into_raster(self) -> Raster {
        self.raster
    }

    pub fn values(&self) -> &[f64] {
        self.raster.values()
    }

    /// Wrap a raster that is already a density.
    pub fn from_density(raster: Raster) -> Result<Self> {
        let total = raster.integral();
        if raster.values().iter().any(|v| *v < 0.0) || (total - 1.0).abs() > 1e-9 {
            return invalid(format!("raster is not a density (integral {total})"));
        }
        Ok(Self { raster })
    }
}

/// Normalize a non-negative intensity to a UD. Missing cells stay missing.
pub fn normalize_ud(intensity: &Raster) -> Result<UdRaster> {
    if let Some(i) = intensity.values().iter().position(|v| *v < 0.0) {
        return invalid(format!("negative intensity in cell {i}"));
    }
    let total = intensity.integral();
    if !(total > 0.0) || !total.is_finite() {
        return invalid("intensity integrates to zero or is not finite");
    }
    Ok(UdRaster { raster: intensity.map(|v| v / total) })
}

/// `p_k = λ_k / Σ λ` at one location.
pub fn mark_probability(intensities: &[f64]) -> Result<Vec<f64>> {
    mark_probability_at(intensities, 0)
}

fn mark_probability_at(intensities: &[f64], cell: usize) -> Result<Vec<f64>> {
    if intensities.len() < 2 {
        return invalid("mark probabilities need at least two marks");
    }
    if intensities.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return invalid("mark intensities must be finite and non-negative");
    }
    let total: f64 = intensities.iter().sum();
    if total == 0.0 {
        return Err(Error::UndefinedProbability { cell });
    }
    Ok(intensities.iter().map(|v| v / total).collect())
}

/// Per-cell mark probabilities for rasters on one grid.
pub fn mark_probability_rasters(intensities: &[Raster]) -> Result<Vec<Raster>> {
    let Some(first) = intensities.first() else {
        return invalid("mark probabilities need at least two marks");
    };
    for r in intensities {
        first.ensure_same_grid(r)?;
    }
    let k = intensities.len();
    let mut out = vec![Vec::with_capacity(first.grid.len()); k];
    let mut buf = vec![0.0; k];
    for cell in 0..first.grid.len() {
        for (b, r) in buf.iter_mut().zip(intensities) {
            *b = r.values()[cell];
        }
        for (o, p) in out.iter_mut().zip(mark_probability_at(&buf, cell)?) {
            o.push(p);
        }
    }
    out.into_iter().map(|v| Raster::new(first.grid, v)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// Percentile of each draw's own intensity surface.
    #[default]
    PerDraw,
    /// One percentile over the cells of all draws together.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceOptions {
    pub percentile: f64,
    pub n_samples: usize,
    /// Cells whose probability is below this become missing.
    pub cutoff: Option<f64>,
    pub mode: ThresholdMode,
    pub fix: Fix,
    pub seed: u64,
}

impl Default for ExceedanceOptions {
    fn default() -> Self {
        Self { percentile: 70.0, n_samples: 1000, cutoff: None, mode: ThresholdMode::PerDraw, fix: Fix::true_intensity(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceMap {
    pub raster: Raster,
    pub percentile: f64,
    pub cutoff: Option<f64>,
    pub n_samples: usize,
}

/// Nearest-rank percentile: the smallest value with at least `q`% of the
/// values at or below it.
pub fn nearest_rank(values: &mut [f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return invalid("percentile of an empty set");
    }
    if !(0.0..=100.0).contains(&q) {
        return invalid(format!("percentile {q} outside [0, 100]"));
    }
    values.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * values.len() as f64).ceil() as usize;
    Ok(values[rank.clamp(1, values.len()) - 1])
}

/// Sampling factor `L` with `L Lᵀ = Σ` for a symmetric PSD covariance.
fn covariance_factor(fit: &FitResult) -> Result<DMatrix<f64>> {
    let Some(cov) = fit.covariance_matrix() else {
        return Err(Error::Numerical("fit has no covariance (singular information)".into()));
    };
    let n = cov.nrows();
    if n != fit.coefficients.len() || cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("covariance is malformed".into()));
    }
    let sym = (&cov + cov.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if eig.eigenvalues.iter().any(|v| *v < -1e-10 * max.max(f64::MIN_POSITIVE)) {
        return Err(Error::Numerical("covariance is not positive semidefinite".into()));
    }
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    Ok(eig.eigenvectors * root)
}

/// Per-cell probability that the intensity lies above its percentile
/// threshold, under asymptotic-normal coefficient uncertainty.
pub fn exceedance_map(fit: &FitResult, model: &IntensityModel, opts: &ExceedanceOptions) -> Result<ExceedanceMap> {
    if opts.n_samples == 0 {
        return invalid("exceedance map needs at least one sample");
    }
    if let Some(c) = opts.cutoff {
        if !(0.0..=1.0).contains(&c) {
            return invalid(format!("probability cutoff {c} outside [0, 1]"));
        }
    }
    let factor = covariance_factor(fit)?;
    let n = fit.coefficients.len();
    let draws: Vec<Raster> = (0..opts.n_samples)
        .into_par_iter()
        .map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(d as u64));
            let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let coefs: Vec<f64> =
                (0..n).map(|i| fit.coefficients[i] + (0..n).map(|j| factor[(i, j)] * z[j]).sum::<f64>()).collect();
            predict_with_coefficients(&coefs, model, opts.fix, Some(&fit.names))
        })
        .collect::<Result<_>>()?;
    let finite = |r: &Raster| r.values().iter().copied().filter(|v| !v.is_nan()).collect::<Vec<_>>();
    let thresholds: Vec<f64> = match opts.mode {
        ThresholdMode::PerDraw => draws.iter().map(|r| nearest_rank(&mut finite(r), opts.percentile)).collect::<Result<_>>()?,
        ThresholdMode::Pooled => {
            let mut all: Vec<f64> = draws.iter().flat_map(finite).collect();
            vec![nearest_rank(&mut all, opts.percentile)?; draws.len()]
        }
    };
    let grid = *model.grid();
    let mut counts = vec![0usize; grid.len()];
    for (r, t) in draws.iter().zip(&thresholds) {
        for (c, v) in counts.iter_mut().zip(r.values()) {
            if *v > *t {
                *c += 1;
            }
        }
    }
    let missing = draws[0].values().iter().map(|v| v.is_nan());
    let values = counts
        .iter()
        .zip(missing)
        .map(|(&c, miss)| {
            let p = c as f64 / opts.n_samples as f64;
            match opts.cutoff {
                _ if miss => f64::NAN,
                Some(cut) if p < cut => f64::NAN,
                _ => p,
            }
        })
        .collect();
    Ok(ExceedanceMap { raster: Raster::new(grid, values)?, percentile: opts.percentile, cutoff: opts.cutoff, n_samples: opts.n_samples })
}

/// Mean over cells of the squared difference.
pub fn mspe(estimated: &UdRaster, truth: &UdRaster) -> Result<f64> {
    estimated.raster.ensure_same_grid(&truth.raster)?;
    let n = estimated.values().len() as f64;
    Ok(estimated.values().iter().zip(truth.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n)
}

/// Stationary point of a fitted log-quadratic intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UdCenter {
    pub x: f64,
    pub y: f64,
    /// False when the fitted quadratic has no interior maximum.
    pub concave: bool,
}

/// Maximizer of `b_x x + b_y y + b_x2 x² + b_y2 y² + b_xy xy` using the
/// environment coefficients named `x`, `y`, `x2`, `y2`, `xy`.
pub fn ud_center(fit: &FitResult, model: &IntensityModel) -> Result<UdCenter> {
    let mut c = [None; 5];
    let names = ["x", "y", "x2", "y2", "xy"];
    for b in model.blocks().iter().filter(|b| b.kind == BlockKind::Environment) {
        for (k, n) in names.iter().enumerate() {
            if let Some(i) = model.coefficient_index(&b.name, n) {
                c[k] = Some(fit.coefficients[i]);
            }
        }
    }
    let [Some(bx), Some(by), Some(bxx), Some(byy), Some(bxy)] = c else {
        return invalid("model lacks the quadratic environment terms x, y, x2, y2, xy");
    };
    let (a, d, off) = (2.0 * bxx, 2.0 * byy, bxy);
    let det = a * d - off * off;
    if det == 0.0 || !det.is_finite() {
        return Ok(UdCenter { x: f64::NAN, y: f64::NAN, concave: false });
    }
    let x = (-bx * d + off * by) / det;
    let y = (-by * a + off * bx) / det;
    Ok(UdCenter { x, y, concave: a < 0.0 && det > 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterBias {
    pub bias: f64,
    pub concave: bool,
}

/// `μ̂_y − μ_y`.
pub fn ud_center_bias(fit: &FitResult, model: &IntensityModel, mu_y: f64) -> Result<CenterBias> {
    let c = ud_center(fit, model)?;
    Ok(CenterBias { bias: c.y - mu_y, concave: c.concave })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustInterval {
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

impl RobustInterval {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn disjoint(&self, other: &RobustInterval) -> bool {
        self.hi < other.lo || other.hi < self.lo
    }
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return invalid("median needs at least one non-NaN value");
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// `median ± 2 · 1.48 · MAD`.
pub fn robust_interval(values: &[f64]) -> Result<RobustInterval> {
    if values.len() < 2 {
        return invalid("robust interval needs at least two values");
    }
    let m = median(values)?;
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    let half = 2.0 * 1.48 * median(&dev)?;
    Ok(RobustInterval { median: m, lo: m - half, hi: m + half })
}

/// One replicate's metrics for one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub replicate: usize,
    pub setting: String,
    pub mspe_corrected: Option<f64>,
    pub mspe_uncorrected: Option<f64>,
    pub bias_corrected: Option<f64>,
    pub bias_uncorrected: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mspe_overlap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_overlap: Option<f64>,
    pub n_encounters: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}
