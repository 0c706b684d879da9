//! Domain types, ingestion, preprocessing and grid discretization.

mod grid;
mod io;
mod preprocess;

pub use grid::{make_grid, to_grid_sequence, GridSequence, GridSpec};
pub use io::{load_trajectories, read_trajectories, write_trajectories};
pub use preprocess::{preprocess, resample, split_dataset};

use crate::error::{Error, Result};

/// Meters per degree of latitude in the equirectangular model.
pub const METERS_PER_DEG_LAT: f64 = 111_320.0;

/// Meters per degree of longitude at the given latitude (degrees).
pub fn meters_per_deg_lon(lat: f64) -> f64 {
    METERS_PER_DEG_LAT * lat.to_radians().cos()
}

/// A single GPS fix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub lon: f64,
    pub lat: f64,
}

impl Point {
    pub fn new(lon: f64, lat: f64) -> Self {
        Point { lon, lat }
    }
}

/// An ordered sequence of GPS points with an identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub points: Vec<Point>,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, points: Vec<Point>) -> Self {
        Trajectory {
            id: id.into(),
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Geographic region bounds in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl BoundingBox {
    pub fn new(lon_min: f64, lon_max: f64, lat_min: f64, lat_max: f64) -> Result<Self> {
        let b = BoundingBox {
            lon_min,
            lon_max,
            lat_min,
            lat_max,
        };
        if !(lon_min.is_finite() && lon_max.is_finite() && lat_min.is_finite() && lat_max.is_finite())
        {
            return Err(Error::Config("bounding box has non-finite bounds".into()));
        }
        if lon_min >= lon_max || lat_min >= lat_max {
            return Err(Error::Config(format!(
                "degenerate bounding box: lon [{lon_min}, {lon_max}], lat [{lat_min}, {lat_max}]"
            )));
        }
        Ok(b)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.lon >= self.lon_min && p.lon <= self.lon_max && p.lat >= self.lat_min && p.lat <= self.lat_max
    }

    /// Mid-latitude used as the reference for the longitude scale.
    pub fn mid_lat(&self) -> f64 {
        0.5 * (self.lat_min + self.lat_max)
    }

    /// North-south extent in meters.
    pub fn ns_extent_m(&self) -> f64 {
        (self.lat_max - self.lat_min) * METERS_PER_DEG_LAT
    }

    /// East-west extent in meters at the mid-latitude.
    pub fn ew_extent_m(&self) -> f64 {
        (self.lon_max - self.lon_min) * meters_per_deg_lon(self.mid_lat())
    }

    /// Smallest box containing every point of every trajectory.
    pub fn around<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Option<BoundingBox> {
        let mut bounds: Option<BoundingBox> = None;
        for t in trajs {
            for p in &t.points {
                let b = bounds.get_or_insert(BoundingBox {
                    lon_min: p.lon,
                    lon_max: p.lon,
                    lat_min: p.lat,
                    lat_max: p.lat,
                });
                b.lon_min = b.lon_min.min(p.lon);
                b.lon_max = b.lon_max.max(p.lon);
                b.lat_min = b.lat_min.min(p.lat);
                b.lat_max = b.lat_max.max(p.lat);
            }
        }
        bounds
    }
}

/// Project a trajectory to planar meters with the equirectangular model,
/// using `ref_lat` (degrees) for the longitude scale. The origin is
/// arbitrary but shared by every call with the same `ref_lat`, which is all
/// the planar distance kernels need.
pub fn project(traj: &Trajectory, ref_lat: f64) -> Vec<[f64; 2]> {
    let lon_scale = meters_per_deg_lon(ref_lat);
    traj.points
        .iter()
        .map(|p| [p.lon * lon_scale, p.lat * METERS_PER_DEG_LAT])
        .collect()
}

/// Disjoint train/eval/test id lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub eval: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn total(&self) -> usize {
        self.train.len() + self.eval.len() + self.test.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_rejects_degenerate() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 1.0, 2.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 1.0, 0.0, 1.0).is_ok());
    }

    #[test]
    fn bbox_around_covers_all_points() {
        let t = Trajectory::new(
            "a",
            vec![Point::new(-1.0, 2.0), Point::new(3.0, -4.0), Point::new(0.5, 0.5)],
        );
        let b = BoundingBox::around([&t]).unwrap();
        assert_eq!(b.lon_min, -1.0);
        assert_eq!(b.lon_max, 3.0);
        assert_eq!(b.lat_min, -4.0);
        assert_eq!(b.lat_max, 2.0);
    }

    #[test]
    fn projection_scales_with_latitude() {
        let t = Trajectory::new("a", vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)]);
        // One degree of longitude at the equator is the full lat scale.
        let xy = project(&t, 0.0);
        assert!((xy[1][0] - xy[0][0] - METERS_PER_DEG_LAT).abs() < 1e-9);
        // At 60 degrees north it shrinks by cos(60) = 0.5.
        let xy = project(&t, 60.0);
        assert!((xy[1][0] - xy[0][0] - METERS_PER_DEG_LAT * 0.5).abs() < 1e-6);
    }
}
