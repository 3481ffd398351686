use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use effortud_core::analysis::{exceedance_map, normalize_ud, ExceedanceOptions, ThresholdMode};
use effortud_core::effort::{overlap_corrected_effort, path_integral_effort};
use effortud_core::encounter::{read_dataset, write_encounters_csv, write_tracks_csv};
use effortud_core::experiment::{run_experiment, simulate_replicate, study_seed};
use effortud_core::ppm::spec::{load_data, DataSource, FitRecord, JointSpec, ModelSpec};
use effortud_core::ppm::{fit_joint, fit_mle, predict_intensity, Fix};
use effortud_core::raster_io::{read_raster_file, write_raster_file};
use effortud_core::{build_grid, EffortKernel, Error, ExperimentConfig, FitResult, StudyRegion};

const THREADS_VAR: &str = "EFFORTUD_THREADS";

#[derive(Parser)]
#[command(name = "effortud", version, about = "Effort-corrected utilization distributions from encounter data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate encounter datasets for every replicate of a study config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Effort raster from observer tracks.
    Effort {
        #[arg(long)]
        tracks: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = 10.0)]
        range: f64,
        #[arg(long, value_enum, default_value_t = Kernel::DetectionWeighted)]
        kernel: Kernel,
        /// Combine observers of a trip so overlapping views are not double counted.
        #[arg(long)]
        overlap: bool,
        #[arg(long, default_value_t = 1.0)]
        dt: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Maximum-likelihood fit of a model spec, or of a joint spec.
    Fit {
        #[arg(long, conflicts_with = "joint", required_unless_present = "joint")]
        model: Option<PathBuf>,
        #[arg(long)]
        joint: Option<PathBuf>,
        /// Point CSV with x and y columns.
        #[arg(long, conflicts_with_all = ["counts", "presence"])]
        points: Option<PathBuf>,
        /// Raster of counts per cell.
        #[arg(long, conflicts_with = "presence")]
        counts: Option<PathBuf>,
        /// Raster of 0/1 presence per cell.
        #[arg(long)]
        presence: Option<PathBuf>,
        /// Effort raster; overrides the spec's.
        #[arg(long)]
        effort: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Intensity or UD raster from a fit.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        effort: Option<PathBuf>,
        /// Replace the effort part of the intensity by this constant.
        #[arg(long)]
        fix_effort: Option<f64>,
        /// Replace the detection probability by this constant.
        #[arg(long)]
        fix_detection: Option<f64>,
        /// Normalize to a utilization distribution.
        #[arg(long)]
        ud: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Probability that each cell exceeds a percentile of the true intensity.
    Exceed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        effort: Option<PathBuf>,
        #[arg(long, default_value_t = 70.0)]
        percentile: f64,
        /// Cells with lower probability are written as missing.
        #[arg(long)]
        cutoff: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// One threshold over all draws instead of one per draw.
        #[arg(long)]
        pooled: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replicated simulation study: metrics JSON plus a summary table.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the summary table here.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct GridArgs {
    /// xmin,xmax,ymin,ymax
    #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [0.0, 100.0, 0.0, 100.0])]
    region: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    nx: usize,
    #[arg(long, default_value_t = 100)]
    ny: usize,
}

impl GridArgs {
    fn region(&self) -> Result<StudyRegion, Error> {
        StudyRegion::new(self.region[0], self.region[1], self.region[2], self.region[3])
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kernel {
    Indicator,
    DetectionWeighted,
}

impl From<Kernel> for EffortKernel {
    fn from(k: Kernel) -> Self {
        match k {
            Kernel::Indicator => EffortKernel::Indicator,
            Kernel::DetectionWeighted => EffortKernel::DetectionWeighted,
        }
    }
}

enum Failure {
    Core(Error),
    /// Output was written but the fit did not converge.
    NotConverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(e.into())
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. }
        | Error::Json(_)
        | Error::InvalidArgument(_)
        | Error::DegenerateSpec(_)
        | Error::Unsupported(_) => 2,
        Error::OutOfDomain { .. } | Error::MissingData { .. } | Error::DataInconsistency(_) | Error::Io(_) | Error::Csv(_) => 3,
        Error::Numerical(_) | Error::UndefinedProbability { .. } => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: {THREADS_VAR} must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::NotConverged(msg)) => {
            eprintln!("error: fit did not converge: {msg}");
            ExitCode::from(4)
        }
    }
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn read_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Error> {
    let text = fs::read_to_string(path)?;
    let mut cfg = ExperimentConfig::parse(&text).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse { line, msg: format!("{}: {msg}", path.display()) },
        other => other,
    })?;
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    Ok(cfg)
}

fn read_model(path: &Path) -> Result<ModelSpec, Error> {
    ModelSpec::from_json(&fs::read_to_string(path)?)
}

fn read_fit(path: &Path) -> Result<FitResult, Error> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Error> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Simulate { config, out, seed } => {
            let cfg = read_config(&config, seed)?;
            fs::create_dir_all(&out)?;
            let mut entries = Vec::with_capacity(cfg.replicates);
            for r in 0..cfg.replicates {
                let ds = simulate_replicate(&cfg, r)?;
                let dir = format!("replicate-{r:03}");
                fs::create_dir_all(out.join(&dir))?;
                write_encounters_csv(&ds, fs::File::create(out.join(&dir).join("encounters.csv"))?)?;
                write_tracks_csv(&ds, std::io::BufWriter::new(fs::File::create(out.join(&dir).join("tracks.csv"))?))?;
                let replicate_seed = cfg.replicate_seed(r);
                entries.push(json!({
                    "replicate": r,
                    "replicate_seed": replicate_seed,
                    "study_seed": study_seed(replicate_seed),
                    "n_trips": ds.trips.len(),
                    "n_encounters": ds.encounters().count(),
                    "encounters": format!("{dir}/encounters.csv"),
                    "tracks": format!("{dir}/tracks.csv"),
                }));
            }
            write_json(&out.join("manifest.json"), &json!({ "config": cfg, "replicates": entries }))?;
        }
        Command::Effort { tracks, grid, range, kernel, overlap, dt, out } => {
            let region = grid.region()?;
            let g = build_grid(region, grid.nx, grid.ny)?;
            let header: &[u8] = b"trip,step,x,y,mark,observer\n";
            let ds = read_dataset(header, fs::File::open(&tracks)?, region, dt, None)?;
            let field = if overlap {
                overlap_corrected_effort(ds.trip_tracks(), &g, range, kernel.into())?
            } else {
                let all: Vec<_> = ds.tracks().cloned().collect();
                path_integral_effort(&all, &g, range, kernel.into())?
            };
            write_raster_file(&field.raster, &out)?;
        }
        Command::Fit { model, joint, points, counts, presence, effort, out } => {
            let fit = match (model, joint) {
                (_, Some(joint)) => {
                    let spec = JointSpec::from_json(&fs::read_to_string(&joint)?)?;
                    let jm = spec.build(base_dir(&joint))?;
                    let opts = effortud_core::ppm::FitOptions { optimizer: spec.optimizer, start: None };
                    FitRecord { fit: fit_joint(&jm, &opts)?, optimizer: spec.optimizer }
                }
                (Some(model), None) => {
                    let spec = read_model(&model)?;
                    let base = base_dir(&model);
                    let grid = spec.resolve_grid(base)?;
                    let effort = effort.map(|p| read_raster_file(&p, Some(&grid))).transpose()?;
                    let m = spec.build(base, Some(grid), effort)?;
                    let here = Path::new(".");
                    let source = match (points, counts, presence) {
                        (Some(file), None, None) => DataSource::Points { file },
                        (None, Some(file), None) => DataSource::Counts { file },
                        (None, None, Some(file)) => DataSource::Presence { file },
                        _ => return Err(Error::InvalidArgument("give one of --points, --counts or --presence".into()).into()),
                    };
                    let data = load_data(&source, here, &grid)?;
                    FitRecord { fit: fit_mle(&m, &data, &spec.fit_options())?, optimizer: spec.optimizer }
                }
                (None, None) => unreachable!("clap requires --model or --joint"),
            };
            write_json(&out, &fit)?;
            if !fit.fit.converged {
                return Err(Failure::NotConverged(fit.fit.message));
            }
        }
        Command::Predict { model, fit, effort, fix_effort, fix_detection, ud, out } => {
            let spec = read_model(&model)?;
            let base = base_dir(&model);
            let grid = spec.resolve_grid(base)?;
            let effort = effort.map(|p| read_raster_file(&p, Some(&grid))).transpose()?;
            let m = spec.build(base, Some(grid), effort)?;
            let fit = read_fit(&fit)?;
            let raster = predict_intensity(&fit, &m, Fix { effort: fix_effort, detection: fix_detection })?;
            let raster = if ud { normalize_ud(&raster)?.into_raster() } else { raster };
            write_raster_file(&raster, &out)?;
        }
        Command::Exceed { model, fit, effort, percentile, cutoff, samples, seed, pooled, out } => {
            let spec = read_model(&model)?;
            let base = base_dir(&model);
            let grid = spec.resolve_grid(base)?;
            let effort = effort.map(|p| read_raster_file(&p, Some(&grid))).transpose()?;
            let m = spec.build(base, Some(grid), effort)?;
            let fit = read_fit(&fit)?;
            let opts = ExceedanceOptions {
                percentile,
                n_samples: samples,
                cutoff,
                mode: if pooled { ThresholdMode::Pooled } else { ThresholdMode::PerDraw },
                seed,
                ..Default::default()
            };
            let map = exceedance_map(&fit, &m, &opts)?;
            write_raster_file(&map.raster, &out)?;
        }
        Command::Experiment { config, out, seed, summary } => {
            let cfg = read_config(&config, seed)?;
            let report = run_experiment(&cfg)?;
            write_json(&out, &report)?;
            let table = report.table();
            print!("{table}");
            if let Some(path) = summary {
                fs::write(path, &table)?;
            }
        }
    }
    Ok(())
}
