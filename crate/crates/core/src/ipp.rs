//! Inhomogeneous Poisson point processes on an axis-aligned rectangle,
//! sampled by thinning a homogeneous envelope.
//!
//! Raster intensities are piecewise constant over cells, so the supremum of
//! the intensity over the region is the largest cell value touching it and
//! the integral is an exact sum of cell values times overlap areas.
//!
//! Raster files are JSON:
//!
//! ```json
//! {
//!   "region": { "x_min": 0, "x_max": 20, "y_min": 0, "y_max": 10 },
//!   "cell_size": 10,
//!   "values": [0.02, 0.01]
//! }
//! ```
//!
//! `cell_size` is a number or a `[width, height]` pair. `values` is row-major
//! with row 0 along `y_min`, either flat or as nested rows.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, SeedStream};

/// Expected counts below this use CDF inversion; larger ones count the
/// arrivals of a unit-rate process before the mean.
pub const INVERSION_LIMIT: f64 = 30.0;

const COVER_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum IppError {
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("intensity must be finite and non-negative, got {0}")]
    InvalidIntensity(f64),
    #[error("raster cell (row {row}, col {col}) has negative intensity {value}")]
    NegativeCell { row: usize, col: usize, value: f64 },
    #[error("raster cell (row {row}, col {col}) has non-finite intensity")]
    NonFiniteCell { row: usize, col: usize },
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("intensity field does not cover the region")]
    NotCovering,
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Region {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self, IppError> {
        let r = Self {
            x_min,
            x_max,
            y_min,
            y_max,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), IppError> {
        let all_finite = [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(IppError::InvalidRegion("bounds must be finite".into()));
        }
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(IppError::InvalidRegion("need x_min < x_max and y_min < y_max".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (self.x_min..=self.x_max).contains(&p[0]) && (self.y_min..=self.y_max).contains(&p[1])
    }
}

/// Parses `x0,x1,y0,y1`.
impl FromStr for Region {
    type Err = IppError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| IppError::InvalidRegion(format!("expected x0,x1,y0,y1, got {s:?}")))?;
        match parts[..] {
            [x0, x1, y0, y1] => Region::new(x0, x1, y0, y1),
            _ => Err(IppError::InvalidRegion(format!("expected 4 numbers, got {}", parts.len()))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellSize {
    Square(f64),
    Rect([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellValues {
    Flat(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

/// On-disk raster description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterFile {
    pub region: Region,
    pub cell_size: CellSize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    pub values: CellValues,
}

/// Piecewise-constant intensity on a grid of `rows × cols` cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RasterFile", into = "RasterFile")]
pub struct Raster {
    bounds: Region,
    cell_width: f64,
    cell_height: f64,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

fn cells_along(extent: f64, cell: f64, axis: &str) -> Result<usize, IppError> {
    let n = (extent / cell).round();
    if n < 1.0 || ((n * cell - extent).abs() > COVER_TOL * extent.max(1.0)) {
        return Err(IppError::InvalidRaster(format!(
            "{axis} extent {extent} is not a whole number of cells of size {cell}"
        )));
    }
    Ok(n as usize)
}

impl TryFrom<RasterFile> for Raster {
    type Error = IppError;

    fn try_from(f: RasterFile) -> Result<Self, Self::Error> {
        f.region.validate()?;
        let (w, h) = match f.cell_size {
            CellSize::Square(s) => (s, s),
            CellSize::Rect([w, h]) => (w, h),
        };
        if !(w.is_finite() && w > 0.0 && h.is_finite() && h > 0.0) {
            return Err(IppError::InvalidRaster("cell size must be positive".into()));
        }
        let cols = cells_along(f.region.width(), w, "x")?;
        let rows = cells_along(f.region.height(), h, "y")?;
        if f.rows.is_some_and(|r| r != rows) || f.cols.is_some_and(|c| c != cols) {
            return Err(IppError::InvalidRaster(format!(
                "declared shape does not match region and cell size ({rows} rows, {cols} cols)"
            )));
        }
        let values = match f.values {
            CellValues::Flat(v) => v,
            CellValues::Rows(r) => {
                if r.iter().any(|row| row.len() != cols) {
                    return Err(IppError::InvalidRaster(format!("every row must have {cols} values")));
                }
                r.concat()
            }
        };
        if values.len() != rows * cols {
            return Err(IppError::InvalidRaster(format!(
                "expected {} values ({rows} rows × {cols} cols), found {}",
                rows * cols,
                values.len()
            )));
        }
        Raster::new(f.region, w, h, rows, cols, values)
    }
}

impl From<Raster> for RasterFile {
    fn from(r: Raster) -> Self {
        RasterFile {
            region: r.bounds,
            cell_size: if r.cell_width == r.cell_height {
                CellSize::Square(r.cell_width)
            } else {
                CellSize::Rect([r.cell_width, r.cell_height])
            },
            rows: Some(r.rows),
            cols: Some(r.cols),
            values: CellValues::Flat(r.values),
        }
    }
}

impl Raster {
    /// Grid anchored at `bounds.(x_min, y_min)`; `values` row-major, row 0 at `y_min`.
    pub fn new(
        bounds: Region,
        cell_width: f64,
        cell_height: f64,
        rows: usize,
        cols: usize,
        values: Vec<f64>,
    ) -> Result<Self, IppError> {
        bounds.validate()?;
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(IppError::InvalidRaster("values must fill rows × cols".into()));
        }
        if cells_along(bounds.width(), cell_width, "x")? != cols || cells_along(bounds.height(), cell_height, "y")? != rows {
            return Err(IppError::InvalidRaster("cells do not tile the raster bounds".into()));
        }
        for (i, &value) in values.iter().enumerate() {
            let (row, col) = (i / cols, i % cols);
            if !value.is_finite() {
                return Err(IppError::NonFiniteCell { row, col });
            }
            if value < 0.0 {
                return Err(IppError::NegativeCell { row, col, value });
            }
        }
        Ok(Self {
            bounds,
            cell_width,
            cell_height,
            rows,
            cols,
            values,
        })
    }

    pub fn bounds(&self) -> &Region {
        &self.bounds
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    fn cell_rect(&self, row: usize, col: usize) -> Region {
        // Last row/column snap to the declared bounds.
        let x0 = self.bounds.x_min + col as f64 * self.cell_width;
        let y0 = self.bounds.y_min + row as f64 * self.cell_height;
        let x1 = if col + 1 == self.cols { self.bounds.x_max } else { x0 + self.cell_width };
        let y1 = if row + 1 == self.rows { self.bounds.y_max } else { y0 + self.cell_height };
        Region {
            x_min: x0,
            x_max: x1,
            y_min: y0,
            y_max: y1,
        }
    }

    fn cell_index(&self, v: f64, origin: f64, size: f64, n: usize) -> usize {
        (((v - origin) / size).floor().max(0.0) as usize).min(n - 1)
    }

    pub fn at(&self, x: f64, y: f64) -> f64 {
        let col = self.cell_index(x, self.bounds.x_min, self.cell_width, self.cols);
        let row = self.cell_index(y, self.bounds.y_min, self.cell_height, self.rows);
        self.value(row, col)
    }

    fn covers(&self, region: &Region) -> bool {
        let tol = COVER_TOL * (self.bounds.width() + self.bounds.height());
        self.bounds.x_min <= region.x_min + tol
            && self.bounds.x_max >= region.x_max - tol
            && self.bounds.y_min <= region.y_min + tol
            && self.bounds.y_max >= region.y_max - tol
    }

    /// `(value, overlap area)` for every cell meeting `region` with positive area.
    fn overlaps<'a>(&'a self, region: &'a Region) -> impl Iterator<Item = (f64, f64)> + 'a {
        (0..self.rows).flat_map(move |row| {
            (0..self.cols).filter_map(move |col| {
                let c = self.cell_rect(row, col);
                let w = c.x_max.min(region.x_max) - c.x_min.max(region.x_min);
                let h = c.y_max.min(region.y_max) - c.y_min.max(region.y_min);
                (w > 0.0 && h > 0.0).then(|| (self.value(row, col), w * h))
            })
        })
    }

    pub fn load(path: &Path) -> Result<Self, IppError> {
        let file_err = |message: String| IppError::File {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let file: RasterFile = serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))?;
        Raster::try_from(file)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum IntensityField {
    Constant { value: f64 },
    Raster(Raster),
}

impl IntensityField {
    pub fn constant(value: f64) -> Result<Self, IppError> {
        let f = IntensityField::Constant { value };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), IppError> {
        match self {
            IntensityField::Constant { value } if !(value.is_finite() && *value >= 0.0) => {
                Err(IppError::InvalidIntensity(*value))
            }
            _ => Ok(()),
        }
    }

    /// Piecewise-constant lookup.
    pub fn at(&self, x: f64, y: f64) -> f64 {
        match self {
            IntensityField::Constant { value } => *value,
            IntensityField::Raster(r) => r.at(x, y),
        }
    }

    fn check_covers(&self, region: &Region) -> Result<(), IppError> {
        self.validate()?;
        region.validate()?;
        match self {
            IntensityField::Raster(r) if !r.covers(region) => Err(IppError::NotCovering),
            _ => Ok(()),
        }
    }

    /// Supremum of the intensity over `region`.
    pub fn max_over(&self, region: &Region) -> Result<f64, IppError> {
        self.check_covers(region)?;
        Ok(match self {
            IntensityField::Constant { value } => *value,
            IntensityField::Raster(r) => r.overlaps(region).map(|(v, _)| v).fold(0.0, f64::max),
        })
    }
}

/// Parses `constant:λ` or `raster:PATH`.
impl FromStr for IntensityField {
    type Err = IppError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(v) = s.strip_prefix("constant:") {
            let value: f64 = v
                .trim()
                .parse()
                .map_err(|_| IppError::InvalidRaster(format!("invalid constant intensity {v:?}")))?;
            IntensityField::constant(value)
        } else if let Some(path) = s.strip_prefix("raster:") {
            Raster::load(Path::new(path)).map(IntensityField::Raster)
        } else {
            Err(IppError::InvalidRaster(format!(
                "intensity must be constant:VALUE or raster:FILE, got {s:?}"
            )))
        }
    }
}

/// Expected number of points in `region`.
pub fn integrate_intensity(field: &IntensityField, region: &Region) -> Result<f64, IppError> {
    field.check_covers(region)?;
    Ok(match field {
        IntensityField::Constant { value } => value * region.area(),
        IntensityField::Raster(r) => r.overlaps(region).map(|(v, a)| v * a).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPattern {
    pub points: Vec<[f64; 2]>,
    pub seed: u64,
}

impl PointPattern {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `x,y` header plus one line per point, shortest round-trip decimals.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y\n");
        for [x, y] in &self.points {
            let _ = writeln!(s, "{x},{y}");
        }
        s
    }
}

/// Exact Poisson draw with the given mean.
pub fn sample_poisson(mean: f64, rng: &mut SeedStream) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean < INVERSION_LIMIT {
        let u = rng.unit();
        let mut k = 0u64;
        let mut p = (-mean).exp();
        let mut cdf = p;
        while u > cdf {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
            if p == 0.0 && cdf < u {
                // Rounding left the CDF short of u; the tail mass is negligible.
                break;
            }
        }
        k
    } else {
        let mut t = 0.0;
        let mut k = 0u64;
        loop {
            t += rng.exponential();
            if t > mean {
                return k;
            }
            k += 1;
        }
    }
}

/// Homogeneous Poisson process with `rate` points per unit area.
pub fn sample_homogeneous(region: &Region, rate: f64, rng: &mut SeedStream) -> Result<PointPattern, IppError> {
    region.validate()?;
    if !(rate.is_finite() && rate >= 0.0) {
        return Err(IppError::InvalidIntensity(rate));
    }
    let n = sample_poisson(rate * region.area(), rng);
    let mut points = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let x = rng.uniform(region.x_min, region.x_max);
        let y = rng.uniform(region.y_min, region.y_max);
        points.push([x, y]);
    }
    Ok(PointPattern {
        points,
        seed: rng.seed(),
    })
}

/// Samples the envelope at the supremum intensity and keeps each point with
/// probability `λ(s) / λ_max`.
pub fn sample_ipp_thinning(
    field: &IntensityField,
    region: &Region,
    rng: &mut SeedStream,
) -> Result<PointPattern, IppError> {
    let lambda_max = field.max_over(region)?;
    if lambda_max == 0.0 {
        return Ok(PointPattern {
            points: Vec::new(),
            seed: rng.seed(),
        });
    }
    let envelope = sample_homogeneous(region, lambda_max, rng)?;
    let mut points = Vec::with_capacity(envelope.len());
    for p in envelope.points {
        let u = rng.unit();
        if u * lambda_max < field.at(p[0], p[1]) {
            points.push(p);
        }
    }
    Ok(PointPattern {
        points,
        seed: envelope.seed,
    })
}

/// Independent replications; replication `i` uses seed `derive_seed(seed, i)`.
pub fn sample_replications(
    field: &IntensityField,
    region: &Region,
    seed: u64,
    reps: usize,
) -> Result<Vec<PointPattern>, IppError> {
    (0..reps)
        .into_par_iter()
        .map(|i| sample_ipp_thinning(field, region, &mut SeedStream::new(derive_seed(seed, i as u64))))
        .collect()
}

/// Greedy hard-core filter: walks points in order and keeps each one that is
/// at least `r` from every point kept so far.
pub fn min_distance_filter(pattern: &PointPattern, r: f64) -> PointPattern {
    if r.is_nan() || r <= 0.0 {
        return pattern.clone();
    }
    let key = |p: &[f64; 2]| ((p[0] / r).floor() as i64, (p[1] / r).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<[f64; 2]>> = HashMap::new();
    let mut kept = Vec::new();
    let r2 = r * r;
    for p in &pattern.points {
        let (gx, gy) = key(p);
        let clear = (-1..=1).all(|dx| {
            (-1..=1).all(|dy| {
                grid.get(&(gx + dx, gy + dy)).is_none_or(|cell| {
                    cell.iter()
                        .all(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) >= r2)
                })
            })
        });
        if clear {
            grid.entry((gx, gy)).or_default().push(*p);
            kept.push(*p);
        }
    }
    PointPattern {
        points: kept,
        seed: pattern.seed,
    }
}
