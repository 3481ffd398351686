//! Potential-driven movement: Euler-Maruyama paths of a diffusion whose drift
//! is the gradient of a log-density, with reflection at the region boundary.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Grid, Point, Raster, StudyRegion};
use crate::raster_io::fmt17;

/// Attempt cap for rejection sampling of start positions.
pub const MAX_REJECTION_ATTEMPTS: usize = 1_000_000;

/// A user-supplied log-density (up to a constant) and its gradient.
pub trait LogDensity: Send + Sync + fmt::Debug {
    fn log_density(&self, p: &Point) -> f64;
    fn gradient(&self, p: &Point) -> [f64; 2];
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PotentialSpec {
    /// Symmetric bivariate normal with per-axis `variance`.
    BivariateNormal { center: Point, variance: f64 },
    /// Normal in `y` centered at `center_y`, flat in `x`. With the center on
    /// the region edge this is a half-normal over the region.
    HalfNormalY { center_y: f64, variance: f64 },
    #[serde(skip)]
    Custom(Arc<dyn LogDensity>),
}

impl PotentialSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::BivariateNormal { variance, center } => {
                if !(*variance > 0.0 && variance.is_finite()) || !center.x.is_finite() || !center.y.is_finite() {
                    return invalid("bivariate-normal potential needs a finite center and variance > 0");
                }
            }
            Self::HalfNormalY { variance, center_y } => {
                if !(*variance > 0.0 && variance.is_finite()) || !center_y.is_finite() {
                    return invalid("half-normal-y potential needs a finite center and variance > 0");
                }
            }
            Self::Custom(_) => {}
        }
        Ok(())
    }

    /// `log π(p)` up to an additive constant.
    pub fn log_density(&self, p: &Point) -> f64 {
        match self {
            Self::BivariateNormal { center, variance } => {
                let (dx, dy) = (p.x - center.x, p.y - center.y);
                -(dx * dx + dy * dy) / (2.0 * variance)
            }
            Self::HalfNormalY { center_y, variance } => {
                let dy = p.y - center_y;
                -dy * dy / (2.0 * variance)
            }
            Self::Custom(f) => f.log_density(p),
        }
    }

    pub fn gradient(&self, p: &Point) -> [f64; 2] {
        match self {
            Self::BivariateNormal { center, variance } => {
                [(center.x - p.x) / variance, (center.y - p.y) / variance]
            }
            Self::HalfNormalY { center_y, variance } => [0.0, (center_y - p.y) / variance],
            Self::Custom(f) => f.gradient(p),
        }
    }

    /// Same shape with every variance multiplied by `factor` (for custom
    /// densities, the log-density divided by `factor`).
    pub fn tempered(&self, factor: f64) -> Self {
        match self {
            Self::BivariateNormal { center, variance } => {
                Self::BivariateNormal { center: *center, variance: variance * factor }
            }
            Self::HalfNormalY { center_y, variance } => {
                Self::HalfNormalY { center_y: *center_y, variance: variance * factor }
            }
            Self::Custom(inner) => {
                if factor == 1.0 {
                    self.clone()
                } else {
                    Self::Custom(Arc::new(Tempered { inner: inner.clone(), power: 1.0 / factor }))
                }
            }
        }
    }

    pub fn variance(&self) -> Option<f64> {
        match self {
            Self::BivariateNormal { variance, .. } | Self::HalfNormalY { variance, .. } => Some(*variance),
            Self::Custom(_) => None,
        }
    }
}

#[derive(Debug)]
struct Tempered {
    inner: Arc<dyn LogDensity>,
    power: f64,
}

impl LogDensity for Tempered {
    fn log_density(&self, p: &Point) -> f64 {
        self.power * self.inner.log_density(p)
    }

    fn gradient(&self, p: &Point) -> [f64; 2] {
        let g = self.inner.gradient(p);
        [self.power * g[0], self.power * g[1]]
    }
}

/// How the log-density gradient enters the drift.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftForm {
    /// `drift = ∇ log π`. The long-run density is `π^(2/σ²)`, so a smaller
    /// Brownian variance concentrates the mover more tightly.
    #[default]
    Potential,
    /// `drift = (σ²/2) ∇ log π`. The long-run density is `π` for any `σ²`.
    Langevin,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MovementSpec {
    pub potential: PotentialSpec,
    /// Brownian variance per unit time, `σ²`.
    pub bm_variance: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub drift_form: DriftForm,
}

fn default_dt() -> f64 {
    1.0
}

impl MovementSpec {
    pub fn new(potential: PotentialSpec, bm_variance: f64) -> Self {
        Self { potential, bm_variance, dt: 1.0, drift_form: DriftForm::Potential }
    }

    pub fn with_drift_form(mut self, form: DriftForm) -> Self {
        self.drift_form = form;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.potential.validate()?;
        if !(self.bm_variance > 0.0 && self.bm_variance.is_finite()) {
            return invalid("movement needs a Brownian variance > 0");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid("movement needs a time step dt > 0");
        }
        Ok(())
    }

    fn drift_scale(&self) -> f64 {
        match self.drift_form {
            DriftForm::Potential => 1.0,
            DriftForm::Langevin => 0.5 * self.bm_variance,
        }
    }

    /// Potential describing the long-run density of the discretised chain.
    ///
    /// For the Gaussian potentials the Euler chain is an AR(1) process with
    /// coefficient `a = 1 - κ·dt`, `κ = scale / variance`, whose stationary
    /// variance is `σ²·dt / (1 - a²)` per axis (boundary effects ignored).
    pub fn stationary_potential(&self) -> Result<PotentialSpec> {
        self.validate()?;
        let scale = self.drift_scale();
        match &self.potential {
            PotentialSpec::Custom(_) => Ok(self.potential.tempered(0.5 * self.bm_variance / scale)),
            p => {
                let v = p.variance().expect("built-in potentials carry a variance");
                let a = 1.0 - scale * self.dt / v;
                if a.abs() >= 1.0 {
                    return Err(Error::DegenerateSpec(format!(
                        "Euler chain is not mean-reverting (AR coefficient {a})"
                    )));
                }
                let stationary = self.bm_variance * self.dt / (1.0 - a * a);
                Ok(p.tempered(stationary / v))
            }
        }
    }
}

/// Time-ordered positions of one animal or observer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub entity: u32,
    pub dt: f64,
    pub positions: Vec<Point>,
}

impl Trajectory {
    pub fn new(entity: u32, dt: f64, positions: Vec<Point>) -> Self {
        Self { entity, dt, positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn step_lengths(&self) -> impl Iterator<Item = f64> + '_ {
        self.positions.windows(2).map(|w| w[0].distance(&w[1]))
    }
}

pub fn potential_log_density(spec: &PotentialSpec, p: &Point) -> f64 {
    spec.log_density(p)
}

/// Drift vector at `p`.
pub fn drift(spec: &MovementSpec, p: &Point) -> [f64; 2] {
    let g = spec.potential.gradient(p);
    let s = spec.drift_scale();
    [s * g[0], s * g[1]]
}

/// Folds `v` back into `[lo, hi]` by repeated mirror reflection.
pub(crate) fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    if v >= lo && v <= hi {
        return v;
    }
    let w = hi - lo;
    let t = (v - lo).rem_euclid(2.0 * w);
    if t <= w {
        lo + t
    } else {
        hi - (t - w)
    }
}

pub(crate) fn reflect_into(p: Point, region: &StudyRegion) -> Point {
    Point::new(reflect(p.x, region.xmin, region.xmax), reflect(p.y, region.ymin, region.ymax))
}

/// One Euler-Maruyama update followed by reflection into `region`.
pub fn step<R: Rng + ?Sized>(spec: &MovementSpec, p: &Point, region: &StudyRegion, rng: &mut R) -> Point {
    let d = drift(spec, p);
    let sd = (spec.bm_variance * spec.dt).sqrt();
    let zx: f64 = StandardNormal.sample(rng);
    let zy: f64 = StandardNormal.sample(rng);
    let next = Point::new(p.x + d[0] * spec.dt + sd * zx, p.y + d[1] * spec.dt + sd * zy);
    reflect_into(next, region)
}

pub fn simulate_trajectory<R: Rng + ?Sized>(
    spec: &MovementSpec,
    start: Point,
    n_steps: usize,
    region: &StudyRegion,
    entity: u32,
    rng: &mut R,
) -> Result<Trajectory> {
    spec.validate()?;
    if !region.contains(&start) {
        return Err(Error::OutOfDomain { x: start.x, y: start.y });
    }
    let mut positions = Vec::with_capacity(n_steps + 1);
    positions.push(start);
    let mut p = start;
    for _ in 0..n_steps {
        p = step(spec, &p, region, rng);
        positions.push(p);
    }
    Ok(Trajectory::new(entity, spec.dt, positions))
}

/// Draw from the potential's density truncated to `region`.
pub fn sample_initial<R: Rng + ?Sized>(spec: &PotentialSpec, region: &StudyRegion, rng: &mut R) -> Result<Point> {
    spec.validate()?;
    let fail = || Error::DegenerateSpec(format!("no draw inside the region after {MAX_REJECTION_ATTEMPTS} attempts"));
    match spec {
        PotentialSpec::BivariateNormal { center, variance } => {
            let sd = variance.sqrt();
            let nx = Normal::new(center.x, sd).map_err(|e| Error::DegenerateSpec(e.to_string()))?;
            let ny = Normal::new(center.y, sd).map_err(|e| Error::DegenerateSpec(e.to_string()))?;
            (0..MAX_REJECTION_ATTEMPTS)
                .map(|_| Point::new(nx.sample(rng), ny.sample(rng)))
                .find(|p| region.contains(p))
                .ok_or_else(fail)
        }
        PotentialSpec::HalfNormalY { center_y, variance } => {
            let ny = Normal::new(*center_y, variance.sqrt()).map_err(|e| Error::DegenerateSpec(e.to_string()))?;
            let y = (0..MAX_REJECTION_ATTEMPTS)
                .map(|_| ny.sample(rng))
                .find(|y| *y >= region.ymin && *y <= region.ymax)
                .ok_or_else(fail)?;
            Ok(Point::new(rng.random_range(region.xmin..=region.xmax), y))
        }
        PotentialSpec::Custom(f) => {
            let bound = custom_log_bound(f.as_ref(), region) + 1.0;
            for _ in 0..MAX_REJECTION_ATTEMPTS {
                let p = Point::new(
                    rng.random_range(region.xmin..=region.xmax),
                    rng.random_range(region.ymin..=region.ymax),
                );
                let u: f64 = rng.random();
                if u.ln() < f.log_density(&p) - bound {
                    return Ok(p);
                }
            }
            Err(fail())
        }
    }
}

fn custom_log_bound(f: &dyn LogDensity, region: &StudyRegion) -> f64 {
    const N: usize = 256;
    let mut best = f64::NEG_INFINITY;
    for i in 0..=N {
        for j in 0..=N {
            let p = Point::new(
                region.xmin + region.width() * i as f64 / N as f64,
                region.ymin + region.height() * j as f64 / N as f64,
            );
            best = best.max(f.log_density(&p));
        }
    }
    best
}

/// Density raster of the potential, normalised so that `Σ value · cell_area = 1`.
pub fn analytic_ud(spec: &PotentialSpec, grid: &Grid) -> Result<Raster> {
    spec.validate()?;
    if let PotentialSpec::Custom(_) = spec {
        return Err(Error::Unsupported("custom log-densities carry no normalisation".into()));
    }
    let logs: Vec<f64> = grid.centers().map(|c| spec.log_density(&c)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut values: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = values.iter().sum::<f64>() * grid.cell_area;
    values.iter_mut().for_each(|v| *v /= total);
    Raster::new(*grid, values)
}

/// Long-run density raster of a mover (see [`MovementSpec::stationary_potential`]).
pub fn stationary_ud(spec: &MovementSpec, grid: &Grid) -> Result<Raster> {
    analytic_ud(&spec.stationary_potential()?, grid)
}

pub fn write_trajectories_csv<W: Write>(trajectories: &[Trajectory], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["entity", "step", "x", "y"])?;
    for t in trajectories {
        for (k, p) in t.positions.iter().enumerate() {
            w.write_record([t.entity.to_string(), k.to_string(), fmt17(p.x), fmt17(p.y)])?;
        }
    }
    w.flush()?;
    Ok(())
}
