//! Normalized 2-channel input features.
//!
//! Raw degrees would saturate the attention logits, so GPS coordinates are
//! affinely mapped to [0, 1] per bounding-box axis and grid cells divided
//! by the grid dimensions. Preprocessed data stays in [0, 1]; bridge
//! interpolants may wander slightly outside, which is fine.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::traj::{GridSequence, GridSpec, Trajectory};

/// n x 2 tensor of bbox-normalized (lon, lat).
pub fn gps_features(traj: &Trajectory, grid: &GridSpec) -> Result<Tensor> {
    if traj.is_empty() {
        return Err(Error::Data(format!(
            "trajectory '{}' has no points to featurize",
            traj.id
        )));
    }
    let b = &grid.bbox;
    let lon_span = b.lon_max - b.lon_min;
    let lat_span = b.lat_max - b.lat_min;
    let mut t = Tensor::zeros(traj.len(), 2);
    for (i, p) in traj.points.iter().enumerate() {
        t.set(i, 0, (p.lon - b.lon_min) / lon_span);
        t.set(i, 1, (p.lat - b.lat_min) / lat_span);
    }
    Ok(t)
}

/// n x 2 tensor of grid cells scaled by the grid dimensions.
pub fn grid_features(seq: &GridSequence, grid: &GridSpec) -> Result<Tensor> {
    if seq.is_empty() {
        return Err(Error::Data("empty grid sequence".into()));
    }
    let mut t = Tensor::zeros(seq.len(), 2);
    for (idx, &(i, j)) in seq.cells.iter().enumerate() {
        t.set(idx, 0, i as f64 / grid.rows as f64);
        t.set(idx, 1, j as f64 / grid.cols as f64);
    }
    Ok(t)
}
