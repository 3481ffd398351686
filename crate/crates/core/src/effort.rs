//! Observer effort surfaces.
//!
//! Fields of view are evaluated at cell centers: a cell receives effort at a
//! time step when its center lies within the observer's range.

use std::collections::BTreeMap;
use std::io::Read;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encounter::{detection_prob, DetectionMode};
use crate::error::{invalid, Error, Result};
use crate::geometry::{Grid, Point, Raster};
use crate::movement::Trajectory;

/// How a field of view weights the cells it covers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EffortKernel {
    /// 1 inside the range, 0 outside.
    Indicator,
    /// Linear-decay detection probability.
    #[default]
    DetectionWeighted,
}

impl EffortKernel {
    fn weight(self, distance: f64, range: f64) -> f64 {
        match self {
            Self::Indicator => detection_prob(distance, range, DetectionMode::Uniform),
            Self::DetectionWeighted => detection_prob(distance, range, DetectionMode::LinearDecay),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EffortMethod {
    PathIntegral(EffortKernel),
    OverlapCorrected(EffortKernel),
    Binned,
    Combined,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffortMeta {
    pub detection_range: Option<f64>,
    pub method: EffortMethod,
}

/// Cumulative effort per cell. Values are finite and nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffortField {
    pub raster: Raster,
    pub meta: EffortMeta,
}

impl EffortField {
    pub fn new(raster: Raster, meta: EffortMeta) -> Result<Self> {
        if let Some(cell) = raster.values().iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return invalid(format!("effort in cell {cell} is negative or not finite"));
        }
        Ok(Self { raster, meta })
    }

    pub fn zeros(grid: Grid, meta: EffortMeta) -> Self {
        Self { raster: Raster::zeros(grid), meta }
    }

    pub fn grid(&self) -> &Grid {
        &self.raster.grid
    }

    pub fn values(&self) -> &[f64] {
        self.raster.values()
    }

    pub fn total(&self) -> f64 {
        self.values().iter().sum()
    }
}

fn validate_range(range: f64) -> Result<()> {
    if !(range > 0.0 && range.is_finite()) {
        return invalid("detection range must be > 0");
    }
    Ok(())
}

fn common_dt(tracks: &[Trajectory]) -> Result<f64> {
    let dt = tracks.first().map_or(1.0, |t| t.dt);
    if tracks.iter().any(|t| t.dt != dt) {
        return invalid("tracks must share one time step");
    }
    Ok(dt)
}

/// Visit every cell whose center lies within `range` of `p` with its kernel weight.
fn for_each_covered(grid: &Grid, p: &Point, range: f64, kernel: EffortKernel, mut f: impl FnMut(usize, f64)) {
    let (x0, x1, y0, y1) = grid.cell_window(p, range);
    for iy in y0..=y1 {
        for ix in x0..=x1 {
            let cell = grid.index(ix, iy);
            let w = kernel.weight(grid.center(cell).distance(p), range);
            if w > 0.0 {
                f(cell, w);
            }
        }
    }
}

const TRACK_CHUNK: usize = 64;

/// Path integral of the fields of view, summed over observers and steps, times dt.
pub fn path_integral_effort(tracks: &[Trajectory], grid: &Grid, range: f64, kernel: EffortKernel) -> Result<EffortField> {
    validate_range(range)?;
    let dt = common_dt(tracks)?;
    let partials: Vec<Vec<f64>> = tracks
        .par_chunks(TRACK_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; grid.len()];
            for p in chunk.iter().flat_map(|t| t.positions.iter()) {
                for_each_covered(grid, p, range, kernel, |c, w| acc[c] += w);
            }
            acc
        })
        .collect();
    let mut values = vec![0.0; grid.len()];
    for part in &partials {
        values.iter_mut().zip(part).for_each(|(v, p)| *v += p);
    }
    values.iter_mut().for_each(|v| *v *= dt);
    EffortField::new(
        Raster::new(*grid, values)?,
        EffortMeta { detection_range: Some(range), method: EffortMethod::PathIntegral(kernel) },
    )
}

/// Effort where simultaneous observers combine as `1 - Π(1 - p)` per cell and step.
///
/// Each slice in `trips` holds tracks that share a clock: position `k` of
/// every track in the slice is the same time step.
pub fn overlap_corrected_effort<'a>(
    trips: impl IntoIterator<Item = &'a [Trajectory]>,
    grid: &Grid,
    range: f64,
    kernel: EffortKernel,
) -> Result<EffortField> {
    validate_range(range)?;
    let trips: Vec<&[Trajectory]> = trips.into_iter().collect();
    let all: Vec<Trajectory> = trips.iter().flat_map(|t| t.iter().cloned()).collect();
    let dt = common_dt(&all)?;

    let partials: Vec<Vec<f64>> = trips
        .par_chunks(TRACK_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; grid.len()];
            // Per-step scratch: survival product, first weight, contributor count.
            let mut survive = vec![1.0; grid.len()];
            let mut first = vec![0.0; grid.len()];
            let mut count = vec![0u32; grid.len()];
            let mut touched = Vec::new();
            for tracks in chunk {
                let steps = tracks.iter().map(|t| t.len()).max().unwrap_or(0);
                for k in 0..steps {
                    for p in tracks.iter().filter_map(|t| t.positions.get(k)) {
                        for_each_covered(grid, p, range, kernel, |c, w| {
                            if count[c] == 0 {
                                touched.push(c);
                                first[c] = w;
                            }
                            count[c] += 1;
                            survive[c] *= 1.0 - w;
                        });
                    }
                    for &c in &touched {
                        acc[c] += if count[c] == 1 { first[c] } else { 1.0 - survive[c] };
                        survive[c] = 1.0;
                        count[c] = 0;
                    }
                    touched.clear();
                }
            }
            acc
        })
        .collect();
    let mut values = vec![0.0; grid.len()];
    for part in &partials {
        values.iter_mut().zip(part).for_each(|(v, p)| *v += p);
    }
    values.iter_mut().for_each(|v| *v *= dt);
    EffortField::new(
        Raster::new(*grid, values)?,
        EffortMeta { detection_range: Some(range), method: EffortMethod::OverlapCorrected(kernel) },
    )
}

/// Linear interpolation of irregular fixes onto a regular clock.
///
/// Output times are `t0, t0 + interval, ...` up to the last fix; the returned
/// trajectory has `dt = interval`.
pub fn regularize_track(fixes: &[(f64, Point)], interval: f64, entity: u32) -> Result<Trajectory> {
    if fixes.len() < 2 {
        return invalid("regularising a track needs at least two fixes");
    }
    if !(interval > 0.0 && interval.is_finite()) {
        return invalid("interval must be > 0");
    }
    if fixes.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return invalid("fix times must be strictly increasing");
    }
    let t0 = fixes[0].0;
    let t_end = fixes[fixes.len() - 1].0;
    let n = ((t_end - t0) / interval + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let t = (t0 + k as f64 * interval).min(t_end);
        while seg + 2 < fixes.len() && fixes[seg + 1].0 < t {
            seg += 1;
        }
        let (ta, a) = fixes[seg];
        let (tb, b) = fixes[seg + 1];
        let w = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        out.push(Point::new(a.x + w * (b.x - a.x), a.y + w * (b.y - a.y)));
    }
    Ok(Trajectory::new(entity, interval, out))
}

/// Count of positions per cell times dt: the observer's field of view is the
/// whole cell containing it.
pub fn bin_track_effort(traj: &Trajectory, grid: &Grid) -> Result<EffortField> {
    let mut values = vec![0.0; grid.len()];
    for p in &traj.positions {
        values[grid.cell_of(p)?] += 1.0;
    }
    values.iter_mut().for_each(|v| *v *= traj.dt);
    EffortField::new(Raster::new(*grid, values)?, EffortMeta { detection_range: None, method: EffortMethod::Binned })
}

/// Cumulative fraction of a day's effort spent by hour `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CdfKnot>", into = "Vec<CdfKnot>")]
pub struct DailyEffortCdf {
    knots: Vec<CdfKnot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfKnot {
    pub tau_hours: f64,
    pub fraction: f64,
}

impl DailyEffortCdf {
    pub fn new(knots: Vec<CdfKnot>) -> Result<Self> {
        if knots.len() < 2 {
            return invalid("a daily effort CDF needs at least two knots");
        }
        let first = knots[0];
        let last = knots[knots.len() - 1];
        if first.tau_hours != 0.0 || first.fraction != 0.0 {
            return invalid("daily effort CDF must start at (0, 0)");
        }
        if last.fraction != 1.0 {
            return invalid("daily effort CDF must end at fraction 1");
        }
        for w in knots.windows(2) {
            if !(w[1].tau_hours > w[0].tau_hours) || w[1].fraction < w[0].fraction {
                return invalid("daily effort CDF knots must increase in tau and not decrease in fraction");
            }
        }
        Ok(Self { knots })
    }

    /// Effort spread evenly over a day of `hours`.
    pub fn uniform(hours: f64) -> Result<Self> {
        Self::new(vec![CdfKnot { tau_hours: 0.0, fraction: 0.0 }, CdfKnot { tau_hours: hours, fraction: 1.0 }])
    }

    pub fn day_length(&self) -> f64 {
        self.knots[self.knots.len() - 1].tau_hours
    }

    pub fn knots(&self) -> &[CdfKnot] {
        &self.knots
    }

    pub fn from_json<R: Read>(input: R) -> Result<Self> {
        Ok(serde_json::from_reader(input)?)
    }
}

impl TryFrom<Vec<CdfKnot>> for DailyEffortCdf {
    type Error = Error;
    fn try_from(knots: Vec<CdfKnot>) -> Result<Self> {
        Self::new(knots)
    }
}

impl From<DailyEffortCdf> for Vec<CdfKnot> {
    fn from(cdf: DailyEffortCdf) -> Self {
        cdf.knots
    }
}

/// Piecewise-linear `F_E(tau)`.
pub fn daily_fraction(cdf: &DailyEffortCdf, tau: f64) -> Result<f64> {
    if !(tau >= 0.0 && tau <= cdf.day_length()) {
        return invalid(format!("tau {tau} outside [0, {}]", cdf.day_length()));
    }
    let k = &cdf.knots;
    let i = k.partition_point(|c| c.tau_hours <= tau).clamp(1, k.len() - 1);
    let (a, b) = (k[i - 1], k[i]);
    let w = (tau - a.tau_hours) / (b.tau_hours - a.tau_hours);
    Ok(a.fraction + w * (b.fraction - a.fraction))
}

/// Multiply a base surface by the summed daily fractions.
pub fn scale_effort(base: &EffortField, fraction_sum: f64) -> Result<EffortField> {
    if !(fraction_sum >= 0.0 && fraction_sum.is_finite()) {
        return invalid("fraction sum must be finite and >= 0");
    }
    EffortField::new(base.raster.map(|v| v * fraction_sum), base.meta.clone())
}

/// Cellwise sum of fields on one grid.
pub fn combine_effort(fields: &[EffortField]) -> Result<EffortField> {
    let first = fields.first().ok_or_else(|| Error::InvalidArgument("no effort fields to combine".into()))?;
    let mut values = first.values().to_vec();
    for f in &fields[1..] {
        first.raster.ensure_same_grid(&f.raster)?;
        values.iter_mut().zip(f.values()).for_each(|(v, x)| *v += x);
    }
    EffortField::new(
        Raster::new(*first.grid(), values)?,
        EffortMeta { detection_range: None, method: EffortMethod::Combined },
    )
}

/// A stochastic effort generator.
pub trait EffortSampler: Sync {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<EffortField>;
}

impl<F> EffortSampler for F
where
    F: Fn(&mut ChaCha8Rng) -> Result<EffortField> + Sync,
{
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<EffortField> {
        self(rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffortEnsemble {
    pub members: Vec<EffortField>,
}

impl EffortEnsemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Cellwise mean over members.
    pub fn mean(&self) -> Result<EffortField> {
        let mut sum = combine_effort(&self.members)?;
        let g = self.members.len() as f64;
        sum.raster.values_mut().iter_mut().for_each(|v| *v /= g);
        sum.meta.method = EffortMethod::Sampled;
        Ok(sum)
    }
}

/// `g` independent effort draws; draw `i` uses the stream seeded with `seed + i`.
pub fn mc_effort_ensemble(generator: &dyn EffortSampler, g: usize, seed: u64) -> Result<EffortEnsemble> {
    if g == 0 {
        return invalid("an effort ensemble needs at least one member");
    }
    let members = (0..g)
        .into_par_iter()
        .map(|i| generator.sample(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64))))
        .collect::<Result<Vec<_>>>()?;
    let grid = *members[0].grid();
    if members.iter().any(|m| *m.grid() != grid) {
        return invalid("ensemble members must share one grid");
    }
    Ok(EffortEnsemble { members })
}

#[derive(Debug, Deserialize)]
struct GpsRow {
    observer: String,
    timestamp_iso8601: String,
    x: f64,
    y: f64,
}

/// Reads `observer,timestamp_iso8601,x,y` rows into per-observer fixes with
/// times in seconds since the earliest fix in the file, sorted by time.
pub fn read_gps_csv<R: Read>(input: R) -> Result<BTreeMap<String, Vec<(f64, Point)>>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut raw: Vec<(String, i64, Point)> = Vec::new();
    for (i, row) in rdr.deserialize::<GpsRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let ts = chrono::DateTime::parse_from_rfc3339(row.timestamp_iso8601.trim())
            .map_err(|e| Error::Parse { line, msg: format!("bad timestamp: {e}") })?;
        let micros = ts.timestamp_micros();
        raw.push((row.observer, micros, Point::new(row.x, row.y)));
    }
    let origin = raw.iter().map(|r| r.1).min().unwrap_or(0);
    let mut out: BTreeMap<String, Vec<(f64, Point)>> = BTreeMap::new();
    for (obs, micros, p) in raw {
        out.entry(obs).or_default().push(((micros - origin) as f64 * 1e-6, p));
    }
    for fixes in out.values_mut() {
        fixes.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok(out)
}
