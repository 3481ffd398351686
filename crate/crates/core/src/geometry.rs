//! Study region, regular lattice and rasters over it.
//!
//! Cells are indexed row-major from the lower-left corner: `index = iy * nx + ix`
//! with `ix` increasing eastward and `iy` increasing northward. A point on a
//! shared cell edge belongs to the cell with the lower index along that axis.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned rectangular study region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyRegion {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl StudyRegion {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        let region = Self { xmin, xmax, ymin, ymax };
        region.validate()?;
        Ok(region)
    }

    /// The square `[0, side]²`.
    pub fn square(side: f64) -> Result<Self> {
        Self::new(0.0, side, 0.0, side)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.xmin, self.xmax, self.ymin, self.ymax]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.xmax <= self.xmin || self.ymax <= self.ymin {
            return invalid(format!(
                "study region requires xmax > xmin and ymax > ymin, got [{}, {}] x [{}, {}]",
                self.xmin, self.xmax, self.ymin, self.ymax
            ));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))
    }
}

/// Regular lattice of `nx * ny` equal cells covering a [`StudyRegion`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub region: StudyRegion,
    pub nx: usize,
    pub ny: usize,
    pub cell_area: f64,
}

impl Grid {
    pub fn new(region: StudyRegion, nx: usize, ny: usize) -> Result<Self> {
        region.validate()?;
        if nx == 0 || ny == 0 {
            return invalid(format!("grid needs positive cell counts, got {nx} x {ny}"));
        }
        let cell_area = region.area() / (nx * ny) as f64;
        Ok(Self { region, nx, ny, cell_area })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> f64 {
        self.region.width() / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.region.height() / self.ny as f64
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    pub fn center(&self, cell: usize) -> Point {
        let (ix, iy) = self.coords(cell);
        Point::new(
            self.region.xmin + (ix as f64 + 0.5) * self.dx(),
            self.region.ymin + (iy as f64 + 0.5) * self.dy(),
        )
    }

    pub fn centers(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |c| self.center(c))
    }

    /// Column index along one axis; edges go to the lower cell.
    fn axis_index(v: f64, lo: f64, width: f64, n: usize) -> usize {
        let t = (v - lo) / width;
        let k = t.ceil() as i64 - 1;
        k.clamp(0, n as i64 - 1) as usize
    }

    pub fn cell_of(&self, p: &Point) -> Result<usize> {
        if !self.region.contains(p) {
            return Err(Error::OutOfDomain { x: p.x, y: p.y });
        }
        let ix = Self::axis_index(p.x, self.region.xmin, self.dx(), self.nx);
        let iy = Self::axis_index(p.y, self.region.ymin, self.dy(), self.ny);
        Ok(self.index(ix, iy))
    }

    /// Inclusive index ranges of the cells whose centers may lie within
    /// `radius` of `p`.
    pub(crate) fn cell_window(&self, p: &Point, radius: f64) -> (usize, usize, usize, usize) {
        let dx = self.dx();
        let dy = self.dy();
        let lo = |v: f64, origin: f64, w: f64, n: usize| {
            (((v - radius - origin) / w - 0.5).floor().max(0.0) as usize).min(n - 1)
        };
        let hi = |v: f64, origin: f64, w: f64, n: usize| {
            let k = ((v + radius - origin) / w - 0.5).ceil();
            if k < 0.0 {
                0
            } else {
                (k as usize).min(n - 1)
            }
        };
        (
            lo(p.x, self.region.xmin, dx, self.nx),
            hi(p.x, self.region.xmin, dx, self.nx),
            lo(p.y, self.region.ymin, dy, self.ny),
            hi(p.y, self.region.ymin, dy, self.ny),
        )
    }
}

/// Partition `region` into `nx * ny` equal axis-aligned cells.
pub fn build_grid(region: StudyRegion, nx: usize, ny: usize) -> Result<Grid> {
    Grid::new(region, nx, ny)
}

/// One value per grid cell. `NaN` marks a missing value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    pub grid: Grid,
    values: Vec<f64>,
}

impl Raster {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return invalid(format!(
                "raster needs {} values, got {}",
                grid.len(),
                values.len()
            ));
        }
        if let Some(cell) = values.iter().position(|v| v.is_infinite()) {
            return invalid(format!("infinite raster value in cell {cell}"));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: Grid, f: impl Fn(Point) -> f64) -> Self {
        let values = grid.centers().map(f).collect();
        Self { grid, values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, cell: usize) -> Result<f64> {
        let v = self.values[cell];
        if v.is_nan() {
            Err(Error::MissingData { cell })
        } else {
            Ok(v)
        }
    }

    pub fn is_missing(&self, cell: usize) -> bool {
        self.values[cell].is_nan()
    }

    /// Piecewise-constant lookup: the value of the cell containing `p`.
    pub fn lookup(&self, p: &Point) -> Result<f64> {
        let cell = self.grid.cell_of(p)?;
        self.get(cell)
    }

    /// Integral over the region, `Σ value · cell_area`, skipping missing cells.
    pub fn integral(&self) -> f64 {
        self.values.iter().filter(|v| !v.is_nan()).sum::<f64>() * self.grid.cell_area
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn ensure_same_grid(&self, other: &Raster) -> Result<()> {
        if self.grid != other.grid {
            return invalid("rasters are defined on different grids");
        }
        Ok(())
    }
}

/// Value of the cell containing `p`.
pub fn raster_lookup(r: &Raster, p: &Point) -> Result<f64> {
    r.lookup(p)
}
