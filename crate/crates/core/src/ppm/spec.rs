//! JSON model specifications with covariates given as built-in surfaces or
//! raster files, and the JSON form of fit results.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::fit::{FitOptions, FitResult};
use super::joint::{JointComponent, JointModel};
use super::likelihood::LikelihoodData;
use super::model::{surfaces, BlockKind, Covariate, CovariateBlock, IntensityModel};
use super::optimize::OptimizerOptions;
use crate::error::{invalid, Result};
use crate::geometry::{build_grid, Grid, Raster, StudyRegion};
use crate::raster_io::read_raster_file;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub region: StudyRegion,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        build_grid(self.region, self.nx, self.ny)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Link {
    #[default]
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateSource {
    Builtin { builtin: String },
    File { file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub source: CovariateSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub name: String,
    pub kind: BlockKind,
    pub covariates: Vec<CovariateSpec>,
    /// Link for detection blocks.
    #[serde(default)]
    pub link: Link,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub grid: Option<GridSpec>,
    pub blocks: Vec<BlockSpec>,
    /// Effort raster used as the log offset.
    #[serde(default)]
    pub effort: Option<PathBuf>,
    #[serde(default)]
    pub optimizer: OptimizerOptions,
    #[serde(default)]
    pub mark: Option<String>,
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// The spec's own grid, else the grid of the first raster it references.
    pub fn resolve_grid(&self, base: &Path) -> Result<Grid> {
        if let Some(g) = &self.grid {
            return g.build();
        }
        let first = self.effort.iter().chain(self.blocks.iter().flat_map(|b| {
            b.covariates.iter().filter_map(|c| match &c.source {
                CovariateSource::File { file } => Some(file),
                CovariateSource::Builtin { .. } => None,
            })
        }));
        match first.into_iter().next() {
            Some(path) => Ok(read_raster_file(&base.join(path), None)?.grid),
            None => invalid("model spec needs a grid or at least one raster file"),
        }
    }

    /// Build the model; relative paths resolve against `base`. An explicit
    /// `effort` overrides the spec's effort file.
    pub fn build(&self, base: &Path, grid: Option<Grid>, effort: Option<Raster>) -> Result<IntensityModel> {
        let grid = match grid {
            Some(g) => g,
            None => self.resolve_grid(base)?,
        };
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let covariates = b
                    .covariates
                    .iter()
                    .map(|c| {
                        let raster = match &c.source {
                            CovariateSource::Builtin { builtin } => surfaces::by_name(&grid, builtin)?,
                            CovariateSource::File { file } => read_raster_file(&base.join(file), Some(&grid))?,
                        };
                        Ok(Covariate::new(c.name.clone(), raster))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(CovariateBlock::new(b.name.clone(), b.kind, covariates))
            })
            .collect::<Result<Vec<_>>>()?;
        let effort = match (effort, &self.effort) {
            (Some(e), _) => Some(e),
            (None, Some(path)) => Some(read_raster_file(&base.join(path), Some(&grid))?),
            (None, None) => None,
        };
        let model = IntensityModel::new(grid, blocks, effort)?;
        Ok(match &self.mark {
            Some(m) => model.with_mark(m.clone()),
            None => model,
        })
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions { optimizer: self.optimizer, start: None }
    }
}

/// Where a joint component's observations come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// CSV with `x` and `y` columns (extra columns ignored).
    Points { file: PathBuf },
    /// Raster of non-negative integer counts.
    Counts { file: PathBuf },
    /// Raster of 0/1 indicators.
    Presence { file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub label: String,
    pub model: ModelSpec,
    pub data: DataSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub components: Vec<ComponentSpec>,
    #[serde(default)]
    pub shared: Vec<String>,
    #[serde(default)]
    pub optimizer: OptimizerOptions,
}

impl JointSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self, base: &Path) -> Result<JointModel> {
        let components = self
            .components
            .iter()
            .map(|c| {
                let model = c.model.build(base, None, None)?;
                let data = load_data(&c.data, base, model.grid())?;
                Ok(JointComponent::new(c.label.clone(), model, data))
            })
            .collect::<Result<Vec<_>>>()?;
        JointModel::new(components, self.shared.clone())
    }
}

pub fn load_data(source: &DataSource, base: &Path, grid: &Grid) -> Result<LikelihoodData> {
    match source {
        DataSource::Points { file } => {
            let points = read_points_csv(std::fs::File::open(base.join(file))?)?;
            Ok(LikelihoodData::point_pattern(grid, points))
        }
        DataSource::Counts { file } => {
            let r = read_raster_file(&base.join(file), Some(grid))?;
            let counts = r
                .values()
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    if v.fract() != 0.0 || !v.is_finite() {
                        invalid(format!("count in cell {i} is not an integer: {v}"))
                    } else {
                        Ok(*v as i64)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            LikelihoodData::cell_counts_signed(grid, &counts)
        }
        DataSource::Presence { file } => {
            let r = read_raster_file(&base.join(file), Some(grid))?;
            let present = r
                .values()
                .iter()
                .enumerate()
                .map(|(i, v)| match *v {
                    0.0 => Ok(false),
                    1.0 => Ok(true),
                    other => invalid(format!("presence indicator in cell {i} is {other}, not 0 or 1")),
                })
                .collect::<Result<Vec<_>>>()?;
            LikelihoodData::cell_presence(grid, present)
        }
    }
}

/// Points from any CSV with `x` and `y` header columns.
pub fn read_points_csv<R: std::io::Read>(input: R) -> Result<Vec<crate::geometry::Point>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(ix), Some(iy)) = (col("x"), col("y")) else {
        return Err(crate::Error::Parse { line: 1, msg: "header needs `x` and `y` columns".into() });
    };
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i).unwrap_or("").trim().parse().map_err(|e| crate::Error::Parse {
                line: k + 2,
                msg: format!("column {}: {e}", headers.get(i).unwrap_or("?")),
            })
        };
        out.push(crate::geometry::Point::new(parse(ix)?, parse(iy)?));
    }
    Ok(out)
}

/// Fit output with the optimizer settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    #[serde(flatten)]
    pub fit: FitResult,
    pub optimizer: OptimizerOptions,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_builtin_and_file_covariates() {
        let s = r#"{
            "grid": {"region": {"xmin": 0, "xmax": 10, "ymin": 0, "ymax": 10}, "nx": 5, "ny": 5},
            "blocks": [
                {"name": "env", "kind": "environment", "covariates": [
                    {"name": "intercept", "builtin": "intercept"},
                    {"name": "sst", "file": "sst.csv"}
                ]},
                {"name": "det", "kind": "detection", "link": "logistic",
                 "covariates": [{"name": "one", "builtin": "one"}]}
            ],
            "optimizer": {"max_iterations": 50}
        }"#;
        let spec = ModelSpec::from_json(s).unwrap();
        assert_eq!(spec.optimizer.max_iterations, 50);
        assert_eq!(spec.optimizer.gradient_tolerance, 1e-8);
        assert!(matches!(spec.blocks[0].covariates[1].source, CovariateSource::File { .. }));

        let dir = tempfile::tempdir().unwrap();
        let g = spec.resolve_grid(dir.path()).unwrap();
        let sst = Raster::from_fn(g, |p| p.x + p.y);
        crate::raster_io::write_raster_file(&sst, &dir.path().join("sst.csv")).unwrap();
        let m = spec.build(dir.path(), None, None).unwrap();
        assert_eq!(m.n_coefficients(), 3);
        assert_eq!(m.blocks()[0].covariates[1].raster, sst);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(ModelSpec::from_json(r#"{"blocks": [], "bogus": 1}"#).is_err());
    }

    #[test]
    fn points_csv_needs_xy() {
        let pts = read_points_csv("trip,x,y\n0,1.5,2\n".as_bytes()).unwrap();
        assert_eq!(pts, vec![crate::geometry::Point::new(1.5, 2.0)]);
        assert!(read_points_csv("a,b\n1,2\n".as_bytes()).is_err());
        assert!(matches!(read_points_csv("x,y\n1,z\n".as_bytes()), Err(crate::Error::Parse { line: 2, .. })));
    }
}
