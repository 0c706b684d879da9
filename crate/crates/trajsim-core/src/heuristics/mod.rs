//! Exact heuristic trajectory distances and the all-pairs ground-truth
//! matrix.
//!
//! Three metrics: SSPD (mean point-to-segment, symmetrized), discrete
//! point-set Hausdorff, and discrete Frechet. Geographic inputs are
//! projected to planar meters per pair using the mid-latitude of the pair's
//! joint bounding box; planar mode treats (lon, lat) as raw (x, y) for
//! hand-checkable numbers.

mod kernels;
mod matrix;

pub use kernels::{frechet_xy, hausdorff_xy, sspd_xy};
pub use matrix::{build_matrix, DistanceMatrix};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::traj::{project, BoundingBox, Trajectory};

/// How raw coordinates become planar points for the kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMode {
    /// Treat (lon, lat) directly as (x, y).
    Planar,
    /// Equirectangular projection to meters at the pair's mid-latitude.
    Geographic,
}

/// Which distance a matrix or command uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricTag {
    Sspd,
    Hausdorff,
    Frechet,
}

impl MetricTag {
    pub const ALL: [MetricTag; 3] = [MetricTag::Sspd, MetricTag::Hausdorff, MetricTag::Frechet];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricTag::Sspd => "sspd",
            MetricTag::Hausdorff => "hausdorff",
            MetricTag::Frechet => "frechet",
        }
    }

    pub(crate) fn to_byte(self) -> u8 {
        match self {
            MetricTag::Sspd => 0,
            MetricTag::Hausdorff => 1,
            MetricTag::Frechet => 2,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(MetricTag::Sspd),
            1 => Ok(MetricTag::Hausdorff),
            2 => Ok(MetricTag::Frechet),
            other => Err(Error::Data(format!("unknown metric tag byte {other}"))),
        }
    }
}

impl fmt::Display for MetricTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sspd" => Ok(MetricTag::Sspd),
            "hausdorff" => Ok(MetricTag::Hausdorff),
            "frechet" => Ok(MetricTag::Frechet),
            other => Err(Error::Config(format!(
                "unknown metric '{other}' (expected sspd, hausdorff or frechet)"
            ))),
        }
    }
}

/// Project both trajectories into a shared plane. The reference latitude is
/// the mid-latitude of the joint bounding box, so the result is independent
/// of argument order.
fn pair_xy(a: &Trajectory, b: &Trajectory, mode: DistanceMode) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    match mode {
        DistanceMode::Planar => (
            a.points.iter().map(|p| [p.lon, p.lat]).collect(),
            b.points.iter().map(|p| [p.lon, p.lat]).collect(),
        ),
        DistanceMode::Geographic => {
            let ref_lat = BoundingBox::around([a, b])
                .map(|bb| bb.mid_lat())
                .unwrap_or(0.0);
            (project(a, ref_lat), project(b, ref_lat))
        }
    }
}

fn require_len(t: &Trajectory, min: usize, metric: MetricTag) -> Result<()> {
    if t.len() < min {
        return Err(Error::Data(format!(
            "{metric}: trajectory '{}' has {} points, needs at least {min}",
            t.id,
            t.len()
        )));
    }
    Ok(())
}

/// Discrete Frechet distance between two trajectories.
pub fn frechet_discrete(a: &Trajectory, b: &Trajectory, mode: DistanceMode) -> Result<f64> {
    require_len(a, 1, MetricTag::Frechet)?;
    require_len(b, 1, MetricTag::Frechet)?;
    let (xa, xb) = pair_xy(a, b, mode);
    Ok(frechet_xy(&xa, &xb))
}

/// Discrete point-set Hausdorff distance between two trajectories.
pub fn hausdorff(a: &Trajectory, b: &Trajectory, mode: DistanceMode) -> Result<f64> {
    require_len(a, 1, MetricTag::Hausdorff)?;
    require_len(b, 1, MetricTag::Hausdorff)?;
    let (xa, xb) = pair_xy(a, b, mode);
    Ok(hausdorff_xy(&xa, &xb))
}

/// Symmetric segment-path distance between two trajectories.
pub fn sspd(a: &Trajectory, b: &Trajectory, mode: DistanceMode) -> Result<f64> {
    require_len(a, 2, MetricTag::Sspd)?;
    require_len(b, 2, MetricTag::Sspd)?;
    let (xa, xb) = pair_xy(a, b, mode);
    Ok(sspd_xy(&xa, &xb))
}

/// Dispatch on the metric tag.
pub fn distance(
    metric: MetricTag,
    a: &Trajectory,
    b: &Trajectory,
    mode: DistanceMode,
) -> Result<f64> {
    match metric {
        MetricTag::Sspd => sspd(a, b, mode),
        MetricTag::Hausdorff => hausdorff(a, b, mode),
        MetricTag::Frechet => frechet_discrete(a, b, mode),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traj::{Point, METERS_PER_DEG_LAT};

    fn traj(id: &str, pts: &[(f64, f64)]) -> Trajectory {
        Trajectory::new(id, pts.iter().map(|&(x, y)| Point::new(x, y)).collect())
    }

    #[test]
    fn short_trajectories_are_rejected() {
        let one = traj("one", &[(0.0, 0.0)]);
        let two = traj("two", &[(0.0, 0.0), (1.0, 0.0)]);
        let empty = traj("empty", &[]);
        assert!(sspd(&one, &two, DistanceMode::Planar).is_err());
        assert!(hausdorff(&empty, &two, DistanceMode::Planar).is_err());
        assert!(frechet_discrete(&two, &empty, DistanceMode::Planar).is_err());
        assert!(hausdorff(&one, &two, DistanceMode::Planar).is_ok());
    }

    #[test]
    fn geographic_mode_returns_meters() {
        // Two east-west segments 0.001 deg of latitude apart near the
        // equator: separation should be close to 111.32 m / 1000.
        let a = traj("a", &[(0.0, 0.0), (0.001, 0.0)]);
        let b = traj("b", &[(0.0, 0.001), (0.001, 0.001)]);
        let d = hausdorff(&a, &b, DistanceMode::Geographic).unwrap();
        assert!((d - METERS_PER_DEG_LAT * 0.001).abs() < 1e-6, "{d}");
    }

    #[test]
    fn geographic_mode_is_order_independent() {
        let a = traj("a", &[(-8.61, 41.15), (-8.60, 41.16), (-8.59, 41.15)]);
        let b = traj("b", &[(-8.58, 41.14), (-8.57, 41.17)]);
        for metric in MetricTag::ALL {
            let ab = distance(metric, &a, &b, DistanceMode::Geographic).unwrap();
            let ba = distance(metric, &b, &a, DistanceMode::Geographic).unwrap();
            assert_eq!(ab, ba, "{metric}");
        }
    }

    #[test]
    fn metric_tag_round_trips() {
        for m in MetricTag::ALL {
            assert_eq!(m.as_str().parse::<MetricTag>().unwrap(), m);
            assert_eq!(MetricTag::from_byte(m.to_byte()).unwrap(), m);
        }
        assert!("dtw".parse::<MetricTag>().is_err());
        assert!(MetricTag::from_byte(9).is_err());
    }
}
