//! Utilization distributions from encounter data by effort-corrected
//! Poisson point-process regression.

pub mod analysis;
pub mod effort;
pub mod encounter;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod movement;
pub mod ppm;
pub mod raster_io;

pub use analysis::{ExceedanceMap, MetricsRecord, RobustInterval, UdRaster};
pub use effort::{EffortField, EffortKernel, EffortMethod};
pub use encounter::{EncounterDataset, ObserverSpec, TripRecord};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, ExperimentReport};
pub use geometry::{build_grid, Grid, Point, Raster, StudyRegion};
pub use movement::{MovementSpec, PotentialSpec, Trajectory};
pub use ppm::{FitResult, IntensityModel, LikelihoodData};
