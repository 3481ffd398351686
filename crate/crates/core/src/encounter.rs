//! Trips of mobile and static observers searching for one animal.
//!
//! Every step moves the animal and the mobile observers, then each observer
//! attempts a detection. A trip ends at the first success. Observer tracks hold
//! the positions at the attempted steps `1..=k`, where `k` is the encounter
//! step or `max_steps` when nothing was seen.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Point, StudyRegion};
use crate::movement::{sample_initial, step, MovementSpec, Trajectory};
use crate::raster_io::fmt17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObserverKind {
    Mobile,
    Static,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectionMode {
    /// Probability falls linearly from 1 at the observer to 0 at the range.
    #[default]
    LinearDecay,
    /// Certain detection inside the range.
    Uniform,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObserverSpec {
    pub kind: ObserverKind,
    /// Movement of a mobile observer. Static observers only use it to draw
    /// their fixed location from its long-run density.
    pub movement: MovementSpec,
    pub detection_range: f64,
    #[serde(default)]
    pub detection_mode: DetectionMode,
}

impl ObserverSpec {
    pub fn mobile(movement: MovementSpec, detection_range: f64) -> Self {
        Self { kind: ObserverKind::Mobile, movement, detection_range, detection_mode: DetectionMode::LinearDecay }
    }

    pub fn fixed(movement: MovementSpec, detection_range: f64) -> Self {
        Self { kind: ObserverKind::Static, ..Self::mobile(movement, detection_range) }
    }

    pub fn with_mode(mut self, mode: DetectionMode) -> Self {
        self.detection_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.movement.validate()?;
        if !(self.detection_range > 0.0 && self.detection_range.is_finite()) {
            return invalid("observer detection range must be > 0");
        }
        Ok(())
    }
}

/// Detection probability at `distance` from an observer with the given range.
pub fn detection_prob(distance: f64, range: f64, mode: DetectionMode) -> f64 {
    match mode {
        DetectionMode::LinearDecay => (1.0 - distance / range).max(0.0),
        DetectionMode::Uniform => {
            if distance <= range {
                1.0
            } else {
                0.0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encounter {
    /// Animal position at detection.
    pub point: Point,
    pub step: usize,
    pub observer: usize,
    pub mark: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub tracks: Vec<Trajectory>,
    pub encounter: Option<Encounter>,
    pub max_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterDataset {
    pub region: StudyRegion,
    pub trips: Vec<TripRecord>,
}

impl EncounterDataset {
    pub fn encounters(&self) -> impl Iterator<Item = (usize, &Encounter)> + '_ {
        self.trips.iter().enumerate().filter_map(|(i, t)| t.encounter.as_ref().map(|e| (i, e)))
    }

    pub fn encounter_points(&self) -> Vec<Point> {
        self.encounters().map(|(_, e)| e.point).collect()
    }

    /// All observer tracks across trips.
    pub fn tracks(&self) -> impl Iterator<Item = &Trajectory> + '_ {
        self.trips.iter().flat_map(|t| t.tracks.iter())
    }

    /// Tracks grouped per trip, for effort measures that combine observers
    /// within a time step.
    pub fn trip_tracks(&self) -> impl Iterator<Item = &[Trajectory]> + '_ {
        self.trips.iter().map(|t| t.tracks.as_slice())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, trip) in self.trips.iter().enumerate() {
            if let Some(e) = &trip.encounter {
                if !self.region.contains(&e.point) {
                    return Err(Error::DataInconsistency(format!("trip {i}: encounter outside the region")));
                }
                if e.step == 0 || e.step > trip.max_steps {
                    return Err(Error::DataInconsistency(format!("trip {i}: encounter step {} out of range", e.step)));
                }
            }
        }
        Ok(())
    }
}

/// Run one trip.
pub fn run_trip<R: Rng + ?Sized>(
    animal: &MovementSpec,
    observers: &[ObserverSpec],
    max_steps: usize,
    region: &StudyRegion,
    rng: &mut R,
) -> Result<TripRecord> {
    if observers.is_empty() {
        return invalid("a trip needs at least one observer");
    }
    if max_steps == 0 {
        return invalid("max_steps must be at least 1");
    }
    animal.validate()?;
    for o in observers {
        o.validate()?;
    }

    let mut a = sample_initial(&animal.stationary_potential()?, region, rng)?;
    let mut pos = observers
        .iter()
        .map(|o| sample_initial(&o.movement.stationary_potential()?, region, rng))
        .collect::<Result<Vec<_>>>()?;
    let mut tracks: Vec<Trajectory> = observers
        .iter()
        .enumerate()
        .map(|(i, o)| Trajectory::new(i as u32, o.movement.dt, Vec::with_capacity(max_steps)))
        .collect();
    let mut draws = vec![0.0; observers.len()];

    for t in 1..=max_steps {
        a = step(animal, &a, region, rng);
        for ((o, p), track) in observers.iter().zip(pos.iter_mut()).zip(tracks.iter_mut()) {
            if o.kind == ObserverKind::Mobile {
                *p = step(&o.movement, p, region, rng);
            }
            track.positions.push(*p);
        }
        draws.iter_mut().for_each(|u| *u = rng.random::<f64>());
        let hit = observers.iter().zip(&pos).zip(&draws).position(|((o, p), u)| {
            *u < detection_prob(p.distance(&a), o.detection_range, o.detection_mode)
        });
        if let Some(observer) = hit {
            return Ok(TripRecord {
                tracks,
                encounter: Some(Encounter { point: a, step: t, observer, mark: None }),
                max_steps,
            });
        }
    }
    Ok(TripRecord { tracks, encounter: None, max_steps })
}

/// Run `n_trips` independent trips; trip `i` uses the stream seeded with
/// `base_seed + i`.
pub fn run_study(
    animal: &MovementSpec,
    observers: &[ObserverSpec],
    n_trips: usize,
    max_steps: usize,
    region: &StudyRegion,
    base_seed: u64,
) -> Result<EncounterDataset> {
    if n_trips == 0 {
        return invalid("n_trips must be at least 1");
    }
    let trips = (0..n_trips)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(i as u64));
            run_trip(animal, observers, max_steps, region, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EncounterDataset { region: *region, trips })
}

pub fn write_encounters_csv<W: Write>(ds: &EncounterDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trip", "step", "x", "y", "mark", "observer"])?;
    for (trip, e) in ds.encounters() {
        w.write_record([
            trip.to_string(),
            e.step.to_string(),
            fmt17(e.point.x),
            fmt17(e.point.y),
            e.mark.clone().unwrap_or_default(),
            e.observer.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_tracks_csv<W: Write>(ds: &EncounterDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trip", "observer", "step", "x", "y"])?;
    for (trip, rec) in ds.trips.iter().enumerate() {
        for track in &rec.tracks {
            for (k, p) in track.positions.iter().enumerate() {
                w.write_record([
                    trip.to_string(),
                    track.entity.to_string(),
                    (k + 1).to_string(),
                    fmt17(p.x),
                    fmt17(p.y),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct EncounterRow {
    trip: usize,
    step: usize,
    x: f64,
    y: f64,
    #[serde(default)]
    mark: Option<String>,
    observer: usize,
}

#[derive(Debug, Deserialize)]
struct TrackRow {
    trip: usize,
    observer: u32,
    step: usize,
    x: f64,
    y: f64,
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse { line, msg: e.to_string() }
}

/// Rebuild a dataset from the encounters and tracks CSVs.
///
/// `max_steps` is taken as the longest track when not given.
pub fn read_dataset<R1: Read, R2: Read>(
    encounters: R1,
    tracks: R2,
    region: StudyRegion,
    dt: f64,
    max_steps: Option<usize>,
) -> Result<EncounterDataset> {
    let mut trips: Vec<TripRecord> = Vec::new();
    let ensure = |trips: &mut Vec<TripRecord>, i: usize| {
        while trips.len() <= i {
            trips.push(TripRecord { tracks: Vec::new(), encounter: None, max_steps: 0 });
        }
    };
    let mut rdr = csv::Reader::from_reader(tracks);
    for row in rdr.deserialize::<TrackRow>() {
        let row = row.map_err(csv_err)?;
        ensure(&mut trips, row.trip);
        let rec = &mut trips[row.trip];
        let track = match rec.tracks.iter_mut().find(|t| t.entity == row.observer) {
            Some(t) => t,
            None => {
                rec.tracks.push(Trajectory::new(row.observer, dt, Vec::new()));
                rec.tracks.last_mut().expect("just pushed")
            }
        };
        if row.step != track.positions.len() + 1 {
            return Err(Error::DataInconsistency(format!(
                "trip {} observer {}: steps must run 1, 2, ... in order",
                row.trip, row.observer
            )));
        }
        track.positions.push(Point::new(row.x, row.y));
    }
    let mut rdr = csv::ReaderBuilder::new().from_reader(encounters);
    for row in rdr.deserialize::<EncounterRow>() {
        let row = row.map_err(csv_err)?;
        ensure(&mut trips, row.trip);
        let rec = &mut trips[row.trip];
        if rec.encounter.is_some() {
            return Err(Error::DataInconsistency(format!("trip {} has two encounters", row.trip)));
        }
        rec.encounter = Some(Encounter {
            point: Point::new(row.x, row.y),
            step: row.step,
            observer: row.observer,
            mark: row.mark.filter(|m| !m.is_empty()),
        });
    }
    let longest = trips.iter().flat_map(|t| t.tracks.iter().map(|k| k.len())).max().unwrap_or(0);
    for rec in &mut trips {
        rec.tracks.sort_by_key(|t| t.entity);
        let enc_step = rec.encounter.as_ref().map_or(0, |e| e.step);
        rec.max_steps = max_steps.unwrap_or(longest).max(enc_step);
    }
    let ds = EncounterDataset { region, trips };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::movement::PotentialSpec;

    fn region() -> StudyRegion {
        StudyRegion::square(100.0).unwrap()
    }

    fn animal() -> MovementSpec {
        MovementSpec::new(PotentialSpec::BivariateNormal { center: Point::new(50.0, 50.0), variance: 100.0 }, 2.0)
    }

    fn observer_motion(bm: f64) -> MovementSpec {
        MovementSpec::new(PotentialSpec::HalfNormalY { center_y: 100.0, variance: 200.0 }, bm)
    }

    #[test]
    fn linear_and_uniform_detection() {
        let lin = DetectionMode::LinearDecay;
        assert_eq!(detection_prob(0.0, 10.0, lin), 1.0);
        assert_eq!(detection_prob(10.0, 10.0, lin), 0.0);
        assert_eq!(detection_prob(5.0, 10.0, lin), 0.5);
        assert_eq!(detection_prob(15.0, 10.0, lin), 0.0);
        assert_eq!(detection_prob(10.0, 10.0, DetectionMode::Uniform), 1.0);
        assert_eq!(detection_prob(10.01, 10.0, DetectionMode::Uniform), 0.0);
    }

    #[test]
    fn trips_need_observers() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(run_trip(&animal(), &[], 10, &region(), &mut rng), Err(Error::InvalidArgument(_))));
        let obs = [ObserverSpec::mobile(observer_motion(2.0), 10.0)];
        assert!(run_trip(&animal(), &obs, 0, &region(), &mut rng).is_err());
    }

    #[test]
    fn region_wide_uniform_detection_is_certain_at_first_step() {
        let obs = [ObserverSpec::fixed(observer_motion(2.0), region().diameter()).with_mode(DetectionMode::Uniform)];
        let ds = run_study(&animal(), &obs, 50, 500, &region(), 77).unwrap();
        for trip in &ds.trips {
            assert_eq!(trip.encounter.as_ref().unwrap().step, 1);
            assert_eq!(trip.tracks[0].len(), 1);
        }
    }

    #[test]
    fn encounters_respect_geometry_and_truncation() {
        let mut observers = vec![ObserverSpec::mobile(observer_motion(2.0), 10.0)];
        observers.extend((0..20).map(|_| ObserverSpec::fixed(observer_motion(2.0), 10.0)));
        let ds = run_study(&animal(), &observers, 60, 500, &region(), 5).unwrap();
        assert_eq!(ds.trips.len(), 60);
        for trip in &ds.trips {
            assert_eq!(trip.tracks.len(), 21);
            match &trip.encounter {
                Some(e) => {
                    let at = trip.tracks[e.observer].positions[e.step - 1];
                    assert!(at.distance(&e.point) <= 10.0);
                    assert!(trip.tracks.iter().all(|t| t.len() == e.step));
                    assert!(region().contains(&e.point));
                }
                None => assert!(trip.tracks.iter().all(|t| t.len() == 500)),
            }
            for t in &trip.tracks[1..] {
                assert!(t.positions.iter().all(|p| *p == t.positions[0]));
            }
        }
    }

    #[test]
    fn high_bias_single_mobile_encounters_skew_north() {
        let obs = [ObserverSpec::mobile(observer_motion(2.0), 10.0)];
        let ds = run_study(&animal(), &obs, 100, 500, &region(), 2024).unwrap();
        let pts = ds.encounter_points();
        assert!(!pts.is_empty() && pts.len() < 100);
        let mean_y = pts.iter().map(|p| p.y).sum::<f64>() / pts.len() as f64;
        assert!(mean_y > 50.0, "mean encounter y {mean_y}");
    }

    #[test]
    fn studies_are_deterministic() {
        let obs = [ObserverSpec::mobile(observer_motion(8.0), 10.0)];
        let a = run_study(&animal(), &obs, 3, 500, &region(), 1).unwrap();
        let b = run_study(&animal(), &obs, 3, 500, &region(), 1).unwrap();
        assert_eq!(a, b);
        assert!(run_study(&animal(), &obs, 0, 500, &region(), 1).is_err());
    }

    #[test]
    fn csv_export_round_trips() {
        let obs = [ObserverSpec::mobile(observer_motion(2.0), 10.0), ObserverSpec::fixed(observer_motion(2.0), 10.0)];
        let mut ds = run_study(&animal(), &obs, 30, 200, &region(), 12).unwrap();
        if let Some(e) = ds.trips.iter_mut().find_map(|t| t.encounter.as_mut()) {
            e.mark = Some("J".into());
        }
        let (mut enc, mut trk) = (Vec::new(), Vec::new());
        write_encounters_csv(&ds, &mut enc).unwrap();
        write_tracks_csv(&ds, &mut trk).unwrap();
        assert!(String::from_utf8_lossy(&enc).starts_with("trip,step,x,y,mark,observer"));
        assert!(String::from_utf8_lossy(&trk).starts_with("trip,observer,step,x,y"));
        let back = read_dataset(enc.as_slice(), trk.as_slice(), region(), 1.0, Some(200)).unwrap();
        assert_eq!(back, ds);
    }
}
