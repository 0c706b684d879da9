//! Uniform grid partitioning of a bounding box and per-point discretization.

use super::{meters_per_deg_lon, BoundingBox, Trajectory, METERS_PER_DEG_LAT};
use crate::error::{Error, Result};

/// Absolute slack on the cell-count ratio so that an extent that is an exact
/// multiple of the cell size does not gain a phantom row from floating point
/// rounding.
const CEIL_SLACK: f64 = 1e-9;

/// A uniform `rows x cols` partition of a bounding box into square cells of
/// `cell_size` meters.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub bbox: BoundingBox,
    /// Cell edge length in meters.
    pub cell_size: f64,
    /// Number of rows (latitude divisions).
    pub rows: usize,
    /// Number of columns (longitude divisions).
    pub cols: usize,
}

/// Per-point cell coordinates of one trajectory; `(i, j)` are 1-based with
/// `i` counting rows from the southern edge and `j` columns from the west.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSequence {
    pub cells: Vec<(usize, usize)>,
}

impl GridSequence {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Build the grid covering `bbox` with square cells of `cell_size` meters.
///
/// Row and column counts are the rounded-up ratio of the metric extent to the
/// cell size, never less than 1.
pub fn make_grid(bbox: BoundingBox, cell_size: f64) -> Result<GridSpec> {
    if !(cell_size.is_finite() && cell_size > 0.0) {
        return Err(Error::Config(format!(
            "grid cell size must be positive, got {cell_size}"
        )));
    }
    // Re-validate: callers may have built the struct directly.
    let bbox = BoundingBox::new(bbox.lon_min, bbox.lon_max, bbox.lat_min, bbox.lat_max)?;
    let rows = ((bbox.ns_extent_m() / cell_size - CEIL_SLACK).ceil() as usize).max(1);
    let cols = ((bbox.ew_extent_m() / cell_size - CEIL_SLACK).ceil() as usize).max(1);
    Ok(GridSpec {
        bbox,
        cell_size,
        rows,
        cols,
    })
}

impl GridSpec {
    /// Cell containing a point, clamped into the grid on the northern and
    /// eastern boundaries (the box is closed, so boundary points belong to
    /// the last cell).
    pub fn cell_of(&self, lon: f64, lat: f64) -> (usize, usize) {
        let row_off = (lat - self.bbox.lat_min) * METERS_PER_DEG_LAT;
        let col_off = (lon - self.bbox.lon_min) * meters_per_deg_lon(self.bbox.mid_lat());
        let i = (1 + (row_off / self.cell_size).floor() as usize).min(self.rows);
        let j = (1 + (col_off / self.cell_size).floor() as usize).min(self.cols);
        (i.max(1), j.max(1))
    }
}

/// Map every point of `traj` to its grid cell.
pub fn to_grid_sequence(traj: &Trajectory, grid: &GridSpec) -> Result<GridSequence> {
    let mut cells = Vec::with_capacity(traj.len());
    for (idx, p) in traj.points.iter().enumerate() {
        if !grid.bbox.contains(*p) {
            return Err(Error::Data(format!(
                "trajectory '{}': point {} ({}, {}) outside the grid bounding box",
                traj.id, idx, p.lon, p.lat
            )));
        }
        cells.push(grid.cell_of(p.lon, p.lat));
    }
    Ok(GridSequence { cells })
}
