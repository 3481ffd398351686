//! Raster interchange: `x,y,value` CSV of cell centers and ESRI ASCII grids.
//!
//! Finite values are written with 17 significant digits; a write/read cycle
//! reproduces them bit for bit. Missing cells are written as `NaN` in CSV
//! and as the `NODATA_value` in ASCII grids.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::geometry::{Grid, Point, Raster, StudyRegion};

/// Default `NODATA_value` for ASCII grids.
pub const NODATA: f64 = -9999.0;

pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv<W: Write>(raster: &Raster, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "value"])?;
    for (cell, v) in raster.values().iter().enumerate() {
        let c = raster.grid.center(cell);
        let value = if v.is_nan() { "NaN".to_string() } else { fmt17(*v) };
        w.write_record([fmt17(c.x), fmt17(c.y), value])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `x,y,value` CSV. With `grid` given, each row is placed in the cell
/// containing its coordinates; otherwise the grid is inferred from the set of
/// distinct cell-center coordinates.
pub fn read_csv<R: Read>(input: R, grid: Option<&Grid>) -> Result<Raster> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "x" || &headers[1] != "y" || &headers[2] != "value" {
        return Err(Error::Parse { line: 1, msg: "expected header `x,y,value`".into() });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| -> Result<f64> {
            rec.get(k)
                .ok_or_else(|| Error::Parse { line, msg: "missing field".into() })?
                .parse::<f64>()
                .map_err(|e| Error::Parse { line, msg: e.to_string() })
        };
        rows.push((field(0)?, field(1)?, field(2)?));
    }
    let grid = match grid {
        Some(g) => *g,
        None => infer_grid(&rows)?,
    };
    let mut values = vec![f64::NAN; grid.len()];
    let mut seen = vec![false; grid.len()];
    for (i, &(x, y, v)) in rows.iter().enumerate() {
        let cell = grid.cell_of(&Point::new(x, y))?;
        if std::mem::replace(&mut seen[cell], true) {
            return Err(Error::Parse { line: i + 2, msg: format!("duplicate entry for cell {cell}") });
        }
        values[cell] = v;
    }
    if let Some(cell) = seen.iter().position(|s| !s) {
        return invalid(format!("raster CSV has no entry for cell {cell}"));
    }
    Raster::new(grid, values)
}

fn infer_grid(rows: &[(f64, f64, f64)]) -> Result<Grid> {
    let axis = |get: fn(&(f64, f64, f64)) -> f64| {
        let mut v: Vec<f64> = rows.iter().map(get).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let xs = axis(|r| r.0);
    let ys = axis(|r| r.1);
    if xs.is_empty() || ys.is_empty() {
        return invalid("raster CSV has no rows");
    }
    if xs.len() * ys.len() != rows.len() {
        return invalid("raster CSV rows do not form a complete lattice");
    }
    let spacing = |v: &[f64]| (v.len() > 1).then(|| (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64);
    let (dx, dy) = match (spacing(&xs), spacing(&ys)) {
        (Some(dx), Some(dy)) => (dx, dy),
        (Some(d), None) | (None, Some(d)) => (d, d),
        (None, None) => {
            return invalid("cannot infer cell size from a single-cell raster CSV; supply the grid")
        }
    };
    let region = StudyRegion::new(
        xs[0] - 0.5 * dx,
        xs[xs.len() - 1] + 0.5 * dx,
        ys[0] - 0.5 * dy,
        ys[ys.len() - 1] + 0.5 * dy,
    )?;
    Grid::new(region, xs.len(), ys.len())
}

/// Writes an ESRI ASCII grid. Rows run north to south.
pub fn write_ascii<W: Write>(raster: &Raster, mut out: W) -> Result<()> {
    let g = &raster.grid;
    let cellsize = square_cellsize(g)?;
    writeln!(out, "ncols {}", g.nx)?;
    writeln!(out, "nrows {}", g.ny)?;
    writeln!(out, "xllcorner {}", fmt17(g.region.xmin))?;
    writeln!(out, "yllcorner {}", fmt17(g.region.ymin))?;
    writeln!(out, "cellsize {}", fmt17(cellsize))?;
    writeln!(out, "NODATA_value {NODATA}")?;
    for iy in (0..g.ny).rev() {
        let row: Vec<String> = (0..g.nx)
            .map(|ix| {
                let v = raster.values()[g.index(ix, iy)];
                if v.is_nan() {
                    format!("{NODATA}")
                } else {
                    fmt17(v)
                }
            })
            .collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

fn square_cellsize(g: &Grid) -> Result<f64> {
    let (dx, dy) = (g.dx(), g.dy());
    if ((dx - dy) / dx).abs() > 1e-12 {
        return Err(Error::Unsupported(format!(
            "ESRI ASCII grids need square cells, got {dx} x {dy}"
        )));
    }
    Ok(dx)
}

pub fn read_ascii<R: Read>(input: R) -> Result<Raster> {
    let reader = BufReader::new(input);
    let mut lines = reader.lines().enumerate();
    let mut header = |key: &str| -> Result<String> {
        let (i, line) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 0, msg: format!("missing `{key}` header") })?;
        let line = line?;
        let mut parts = line.split_whitespace();
        let name = parts.next().unwrap_or("");
        if !name.eq_ignore_ascii_case(key) {
            return Err(Error::Parse { line: i + 1, msg: format!("expected `{key}`, found `{name}`") });
        }
        parts
            .next()
            .map(str::to_string)
            .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("`{key}` has no value") })
    };
    let parse_err = |line: usize| move |e: std::num::ParseFloatError| Error::Parse { line, msg: e.to_string() };
    let ncols: usize = header("ncols")?
        .parse()
        .map_err(|e: std::num::ParseIntError| Error::Parse { line: 1, msg: e.to_string() })?;
    let nrows: usize = header("nrows")?
        .parse()
        .map_err(|e: std::num::ParseIntError| Error::Parse { line: 2, msg: e.to_string() })?;
    let xll: f64 = header("xllcorner")?.parse().map_err(parse_err(3))?;
    let yll: f64 = header("yllcorner")?.parse().map_err(parse_err(4))?;
    let cellsize: f64 = header("cellsize")?.parse().map_err(parse_err(5))?;
    let nodata: f64 = header("NODATA_value")?.parse().map_err(parse_err(6))?;

    let region = StudyRegion::new(
        xll,
        xll + cellsize * ncols as f64,
        yll,
        yll + cellsize * nrows as f64,
    )?;
    let grid = Grid::new(region, ncols, nrows)?;
    let mut values = vec![f64::NAN; grid.len()];
    let mut count = 0usize;
    for (i, line) in lines {
        let line = line?;
        for tok in line.split_whitespace() {
            if count >= grid.len() {
                return Err(Error::Parse { line: i + 1, msg: "too many values".into() });
            }
            let v: f64 = tok.parse().map_err(parse_err(i + 1))?;
            let (row, col) = (count / ncols, count % ncols);
            let iy = nrows - 1 - row;
            values[grid.index(col, iy)] = if v == nodata { f64::NAN } else { v };
            count += 1;
        }
    }
    if count != grid.len() {
        return invalid(format!("ASCII grid has {count} values, expected {}", grid.len()));
    }
    Raster::new(grid, values)
}

/// Reads a raster by extension: `.asc` as ESRI ASCII, anything else as CSV.
pub fn read_raster_file(path: &Path, grid: Option<&Grid>) -> Result<Raster> {
    let file = std::fs::File::open(path)?;
    if is_ascii_path(path) {
        let r = read_ascii(file)?;
        if let Some(g) = grid {
            if r.grid.nx != g.nx || r.grid.ny != g.ny {
                return invalid(format!("{} does not match the model grid", path.display()));
            }
        }
        Ok(r)
    } else {
        read_csv(file, grid)
    }
}

pub fn write_raster_file(raster: &Raster, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    if is_ascii_path(path) {
        write_ascii(raster, file)
    } else {
        write_csv(raster, file)
    }
}

fn is_ascii_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("asc"))
}
