//! Fixtures shared by the benchmarks.

use effortud_core::encounter::{run_study, ObserverSpec};
use effortud_core::movement::{MovementSpec, PotentialSpec};
use effortud_core::{build_grid, EncounterDataset, Grid, Point, StudyRegion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn grid(n: usize) -> Grid {
    build_grid(StudyRegion::square(100.0).unwrap(), n, n).unwrap()
}

/// One high-bias mobile observer, `trips` trips of 500 steps.
pub fn study(trips: usize, seed: u64) -> EncounterDataset {
    let animal = MovementSpec::new(PotentialSpec::BivariateNormal { center: Point::new(50.0, 50.0), variance: 100.0 }, 2.0);
    let observer = ObserverSpec::mobile(
        MovementSpec::new(PotentialSpec::HalfNormalY { center_y: 100.0, variance: 200.0 }, 2.0),
        10.0,
    );
    run_study(&animal, &[observer], trips, 500, &StudyRegion::square(100.0).unwrap(), seed).unwrap()
}

/// Points from a bivariate normal centred in the region, clipped to it.
pub fn normal_points(n: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0, 10.0).unwrap();
    (0..n)
        .map(|_| {
            let x: f64 = 50.0 + rng.sample(normal);
            let y: f64 = 50.0 + rng.sample(normal);
            Point::new(x.clamp(0.0, 99.999), y.clamp(0.0, 99.999))
        })
        .collect()
}
