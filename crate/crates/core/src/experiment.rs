//! Replicated simulation studies comparing uncorrected, path-integral
//! corrected and overlap-corrected fits.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{mspe, normalize_ud, robust_interval, ud_center, MetricsRecord, RobustInterval, UdRaster};
use crate::effort::{overlap_corrected_effort, path_integral_effort, EffortField, EffortKernel};
use crate::encounter::{run_study, DetectionMode, EncounterDataset, ObserverKind, ObserverSpec};
use crate::error::{invalid, Error, Result};
use crate::geometry::{build_grid, Grid, Point, Raster, StudyRegion};
use crate::movement::{stationary_ud, MovementSpec, PotentialSpec};
use crate::ppm::{fit_mle, predict_intensity, quadratic_model, FitOptions, Fix, LikelihoodData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObserverBias {
    /// Observer Brownian variance 8.
    Low,
    /// Observer Brownian variance 2.
    High,
}

impl ObserverBias {
    pub fn bm_variance(self) -> f64 {
        match self {
            Self::Low => 8.0,
            Self::High => 2.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverGroup {
    pub count: usize,
    pub kind: ObserverKind,
    #[serde(default = "default_observer_movement")]
    pub movement: MovementSpec,
    #[serde(default = "default_range")]
    pub detection_range: f64,
    #[serde(default)]
    pub detection_mode: DetectionMode,
}

fn default_observer_movement() -> MovementSpec {
    MovementSpec::new(PotentialSpec::HalfNormalY { center_y: 100.0, variance: 200.0 }, 2.0)
}

fn default_animal() -> MovementSpec {
    MovementSpec::new(PotentialSpec::BivariateNormal { center: Point::new(50.0, 50.0), variance: 100.0 }, 2.0)
}

fn default_range() -> f64 {
    10.0
}

fn default_region() -> StudyRegion {
    StudyRegion { xmin: 0.0, xmax: 100.0, ymin: 0.0, ymax: 100.0 }
}

fn default_cells() -> usize {
    100
}

fn default_max_steps() -> usize {
    500
}

fn default_true() -> bool {
    true
}

/// How the corrected fits treat encounters in cells with no estimated effort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum ZeroEffort {
    /// Leave such cells out and discard the encounters inside them.
    Drop,
    /// Add a constant to every cell's effort.
    Floor { value: f64 },
}

impl ZeroEffort {
    pub const DEFAULT_FLOOR: f64 = 0.01;
}

impl Default for ZeroEffort {
    fn default() -> Self {
        Self::Floor { value: Self::DEFAULT_FLOOR }
    }
}

/// What the analyst assumes when building effort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalystSpec {
    #[serde(default = "default_range")]
    pub assumed_range: f64,
    /// Weight effort by the linear detection function rather than 0/1.
    #[serde(default = "default_true")]
    pub detection_modeled: bool,
    /// Also fit the overlap-corrected model.
    #[serde(default)]
    pub overlap: bool,
    #[serde(default)]
    pub zero_effort: ZeroEffort,
}

impl Default for AnalystSpec {
    fn default() -> Self {
        Self { assumed_range: 10.0, detection_modeled: true, overlap: false, zero_effort: ZeroEffort::default() }
    }
}

impl AnalystSpec {
    pub fn kernel(&self) -> EffortKernel {
        if self.detection_modeled {
            EffortKernel::DetectionWeighted
        } else {
            EffortKernel::Indicator
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_setting")]
    pub setting: String,
    #[serde(default = "default_region")]
    pub region: StudyRegion,
    #[serde(default = "default_cells")]
    pub nx: usize,
    #[serde(default = "default_cells")]
    pub ny: usize,
    #[serde(default = "default_animal")]
    pub animal: MovementSpec,
    pub observers: Vec<ObserverGroup>,
    /// Overrides every observer group's Brownian variance when set.
    #[serde(default)]
    pub observer_bias: Option<ObserverBias>,
    pub n_trips: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub analyst: AnalystSpec,
    pub replicates: usize,
    pub base_seed: u64,
}

fn default_setting() -> String {
    "setting".into()
}

impl ExperimentConfig {
    /// Parse TOML or JSON (chosen by a leading `{`).
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text).map_err(|e| {
                let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1));
                Error::Parse { line, msg: e.message().to_string() }
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.region.validate()?;
        if self.replicates == 0 {
            return invalid("replicates must be at least 1");
        }
        if self.n_trips == 0 || self.max_steps == 0 {
            return invalid("n_trips and max_steps must be at least 1");
        }
        if self.observers.iter().map(|o| o.count).sum::<usize>() == 0 {
            return invalid("the observer roster is empty");
        }
        if !(self.analyst.assumed_range > 0.0 && self.analyst.assumed_range.is_finite()) {
            return invalid("assumed detection range must be > 0");
        }
        if let ZeroEffort::Floor { value } = self.analyst.zero_effort {
            if !(value > 0.0 && value.is_finite()) {
                return invalid("zero-effort floor must be > 0");
            }
        }
        self.animal.validate()?;
        for o in self.observer_specs() {
            o.validate()?;
        }
        self.grid().map(|_| ())
    }

    pub fn grid(&self) -> Result<Grid> {
        build_grid(self.region, self.nx, self.ny)
    }

    /// The roster expanded to one spec per observer.
    pub fn observer_specs(&self) -> Vec<ObserverSpec> {
        self.observers
            .iter()
            .flat_map(|g| {
                let mut movement = g.movement.clone();
                if let Some(b) = self.observer_bias {
                    movement.bm_variance = b.bm_variance();
                }
                let spec = ObserverSpec {
                    kind: g.kind,
                    movement,
                    detection_range: g.detection_range,
                    detection_mode: g.detection_mode,
                };
                std::iter::repeat_n(spec, g.count)
            })
            .collect()
    }

    /// `base_seed ⊕ replicate`.
    pub fn replicate_seed(&self, replicate: usize) -> u64 {
        self.base_seed ^ replicate as u64
    }

    /// True UD center in y.
    pub fn true_center_y(&self) -> Result<f64> {
        match &self.animal.potential {
            PotentialSpec::BivariateNormal { center, .. } => Ok(center.y),
            _ => Err(Error::Unsupported("bias metrics need a bivariate-normal animal potential".into())),
        }
    }
}

/// Seed of the trip streams for a replicate. Trip `i` then uses
/// `study_seed + i`; mixing keeps replicates' streams apart.
pub fn study_seed(replicate_seed: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = replicate_seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn simulate_replicate(cfg: &ExperimentConfig, replicate: usize) -> Result<EncounterDataset> {
    run_study(
        &cfg.animal,
        &cfg.observer_specs(),
        cfg.n_trips,
        cfg.max_steps,
        &cfg.region,
        study_seed(cfg.replicate_seed(replicate)),
    )
}

/// Outcome of one fitted setting within a replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct FitMetrics {
    pub mspe: f64,
    pub bias: Option<f64>,
    pub dropped: usize,
}

/// Fit the quadratic model with an optional effort offset and score it.
pub fn score_fit(
    grid: &Grid,
    points: &[Point],
    effort: Option<&EffortField>,
    zero_effort: ZeroEffort,
    truth: &UdRaster,
    mu_y: f64,
) -> Result<FitMetrics> {
    let (effort, kept, dropped) = match effort {
        None => (None, points.to_vec(), 0),
        Some(e) => match zero_effort {
            ZeroEffort::Floor { value } => (Some(e.raster.map(|v| v + value)), points.to_vec(), 0),
            ZeroEffort::Drop => {
                let mut kept = Vec::with_capacity(points.len());
                for p in points {
                    if e.raster.get(grid.cell_of(p)?)? > 0.0 {
                        kept.push(*p);
                    }
                }
                let dropped = points.len() - kept.len();
                (Some(e.raster.clone()), kept, dropped)
            }
        },
    };
    let model = quadratic_model(grid, effort)?;
    let fit = fit_mle(&model, &LikelihoodData::point_pattern(grid, kept), &FitOptions::default())?;
    if !fit.converged {
        return Err(Error::Numerical(format!("fit did not converge: {}", fit.message)));
    }
    let ud = normalize_ud(&predict_intensity(&fit, &model, Fix::true_intensity())?)?;
    let center = ud_center(&fit, &model)?;
    Ok(FitMetrics { mspe: mspe(&ud, truth)?, bias: center.concave.then_some(center.y - mu_y), dropped })
}

/// Simulate and score one replicate. Fit failures are recorded, not raised.
pub fn run_replicate(cfg: &ExperimentConfig, replicate: usize) -> Result<MetricsRecord> {
    let grid = cfg.grid()?;
    let truth = normalize_ud(&stationary_ud(&cfg.animal, &grid)?)?;
    let mu_y = cfg.true_center_y()?;
    let ds = simulate_replicate(cfg, replicate)?;
    let points = ds.encounter_points();
    let tracks: Vec<_> = ds.tracks().cloned().collect();
    let kernel = cfg.analyst.kernel();
    let range = cfg.analyst.assumed_range;

    let mut rec = MetricsRecord {
        replicate,
        setting: cfg.setting.clone(),
        mspe_corrected: None,
        mspe_uncorrected: None,
        bias_corrected: None,
        bias_uncorrected: None,
        mspe_overlap: None,
        bias_overlap: None,
        n_encounters: points.len(),
        errors: Vec::new(),
    };
    let note = |label: &str, r: Result<FitMetrics>, rec: &mut MetricsRecord| -> Option<FitMetrics> {
        match r {
            Ok(m) => {
                if m.bias.is_none() {
                    rec.errors.push(format!("{label}: fitted quadratic has no interior maximum"));
                }
                if m.dropped > 0 {
                    rec.errors.push(format!("{label}: dropped {} encounters in zero-effort cells", m.dropped));
                }
                Some(m)
            }
            Err(e) => {
                rec.errors.push(format!("{label}: {e}"));
                None
            }
        }
    };

    let unc = score_fit(&grid, &points, None, cfg.analyst.zero_effort, &truth, mu_y);
    if let Some(m) = note("uncorrected", unc, &mut rec) {
        rec.mspe_uncorrected = Some(m.mspe);
        rec.bias_uncorrected = m.bias;
    }
    let cor = path_integral_effort(&tracks, &grid, range, kernel)
        .and_then(|e| score_fit(&grid, &points, Some(&e), cfg.analyst.zero_effort, &truth, mu_y));
    if let Some(m) = note("corrected", cor, &mut rec) {
        rec.mspe_corrected = Some(m.mspe);
        rec.bias_corrected = m.bias;
    }
    if cfg.analyst.overlap {
        let ovl = overlap_corrected_effort(ds.trip_tracks(), &grid, range, kernel)
            .and_then(|e| score_fit(&grid, &points, Some(&e), cfg.analyst.zero_effort, &truth, mu_y));
        if let Some(m) = note("overlap", ovl, &mut rec) {
            rec.mspe_overlap = Some(m.mspe);
            rec.bias_overlap = m.bias;
        }
    }
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub n: usize,
    pub interval: Option<RobustInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub setting: String,
    pub base_seed: u64,
    pub replicates: usize,
    pub records: Vec<MetricsRecord>,
    pub summary: Vec<MetricSummary>,
}

impl ExperimentReport {
    pub fn interval(&self, metric: &str) -> Option<RobustInterval> {
        self.summary.iter().find(|s| s.metric == metric).and_then(|s| s.interval)
    }

    /// Plain-text table of the robust intervals.
    pub fn table(&self) -> String {
        let mut out = format!("setting: {}  replicates: {}\n", self.setting, self.replicates);
        let _ = writeln!(out, "{:<18} {:>4} {:>14} {:>14} {:>14}", "metric", "n", "median", "lo", "hi");
        for s in &self.summary {
            match s.interval {
                Some(i) => {
                    let _ = writeln!(out, "{:<18} {:>4} {:>14.6e} {:>14.6e} {:>14.6e}", s.metric, s.n, i.median, i.lo, i.hi);
                }
                None => {
                    let _ = writeln!(out, "{:<18} {:>4} {:>14} {:>14} {:>14}", s.metric, s.n, "-", "-", "-");
                }
            }
        }
        out
    }
}

type Getter = fn(&MetricsRecord) -> Option<f64>;

const METRICS: [(&str, Getter); 6] = [
    ("mspe_corrected", |r| r.mspe_corrected),
    ("mspe_uncorrected", |r| r.mspe_uncorrected),
    ("mspe_overlap", |r| r.mspe_overlap),
    ("bias_corrected", |r| r.bias_corrected),
    ("bias_uncorrected", |r| r.bias_uncorrected),
    ("bias_overlap", |r| r.bias_overlap),
];

pub fn summarize(records: &[MetricsRecord]) -> Vec<MetricSummary> {
    METRICS
        .iter()
        .filter_map(|(name, get)| {
            let values: Vec<f64> = records.iter().filter_map(get).collect();
            let present = records.iter().any(|r| get(r).is_some()) || !name.ends_with("overlap");
            present.then(|| MetricSummary {
                metric: (*name).to_string(),
                n: values.len(),
                interval: robust_interval(&values).ok(),
            })
        })
        .collect()
}

/// Run every replicate (in parallel, reported in replicate order).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let records = (0..cfg.replicates).into_par_iter().map(|r| run_replicate(cfg, r)).collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        setting: cfg.setting.clone(),
        base_seed: cfg.base_seed,
        replicates: cfg.replicates,
        summary: summarize(&records),
        records,
    })
}

/// Truth UD raster for a config.
pub fn truth_ud(cfg: &ExperimentConfig) -> Result<Raster> {
    Ok(normalize_ud(&stationary_ud(&cfg.animal, &cfg.grid()?)?)?.into_raster())
}
