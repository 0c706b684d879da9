//! Dataset filtering, splitting, and length alignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::traj::{BoundingBox, DatasetSplit, Point, Trajectory};

/// Keep only trajectories that lie fully inside `bbox` and whose length is
/// within `[min_len, max_len]`. Order and coordinates are preserved.
pub fn preprocess(
    trajs: &[Trajectory],
    bbox: &BoundingBox,
    min_len: usize,
    max_len: usize,
) -> Result<Vec<Trajectory>> {
    if min_len < 2 {
        return Err(Error::Config(format!(
            "filter.min_len must be at least 2, got {min_len}"
        )));
    }
    if min_len > max_len {
        return Err(Error::Config(format!(
            "filter.min_len ({min_len}) exceeds filter.max_len ({max_len})"
        )));
    }
    Ok(trajs
        .iter()
        .filter(|t| {
            t.len() >= min_len
                && t.len() <= max_len
                && t.points.iter().all(|p| bbox.contains(*p))
        })
        .cloned()
        .collect())
}

/// Split sizes by the largest-remainder method; ties go to the earlier
/// split (train before eval before test).
fn split_sizes(n: usize, weights: [usize; 3]) -> [usize; 3] {
    let total: usize = weights.iter().sum();
    let mut sizes = [0usize; 3];
    let mut rems = [0usize; 3];
    for k in 0..3 {
        sizes[k] = n * weights[k] / total;
        rems[k] = (n * weights[k]) % total;
    }
    let assigned: usize = sizes.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    for &k in order.iter().take(n - assigned) {
        sizes[k] += 1;
    }
    sizes
}

/// Shuffle `ids` with a seeded generator and cut them 7:1:2 into
/// train/eval/test. The same seed always produces the same split.
pub fn split_dataset(ids: &[String], seed: u64) -> Result<DatasetSplit> {
    if ids.is_empty() {
        return Err(Error::Data("cannot split an empty id list".into()));
    }
    let mut shuffled = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let [n_train, n_eval, _] = split_sizes(ids.len(), [7, 1, 2]);
    let test = shuffled.split_off(n_train + n_eval);
    let eval = shuffled.split_off(n_train);
    Ok(DatasetSplit {
        train: shuffled,
        eval,
        test,
    })
}

/// Resample a trajectory to exactly `n` points, evenly spaced in arc length
/// along the polyline, with linear interpolation inside segments. Endpoints
/// are kept exactly. A degenerate (zero-length) trajectory yields `n` copies
/// of its first point.
pub fn resample(traj: &Trajectory, n: usize) -> Result<Trajectory> {
    if n < 2 {
        return Err(Error::Config(format!(
            "resample length must be at least 2, got {n}"
        )));
    }
    let pts = &traj.points;
    if pts.is_empty() {
        return Err(Error::Data(format!(
            "trajectory '{}' has no points to resample",
            traj.id
        )));
    }

    let mut cum = Vec::with_capacity(pts.len());
    cum.push(0.0);
    for k in 1..pts.len() {
        let dx = pts[k].lon - pts[k - 1].lon;
        let dy = pts[k].lat - pts[k - 1].lat;
        cum.push(cum[k - 1] + (dx * dx + dy * dy).sqrt());
    }
    let total = *cum.last().unwrap();
    if total == 0.0 {
        return Ok(Trajectory::new(&traj.id, vec![pts[0]; n]));
    }

    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        let target = total * i as f64 / (n - 1) as f64;
        while seg + 2 < pts.len() && cum[seg + 1] < target {
            seg += 1;
        }
        let span = cum[seg + 1] - cum[seg];
        let t = if span > 0.0 {
            ((target - cum[seg]) / span).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(Point::new(
            (1.0 - t) * pts[seg].lon + t * pts[seg + 1].lon,
            (1.0 - t) * pts[seg].lat + t * pts[seg + 1].lat,
        ));
    }
    *out.last_mut().unwrap() = *pts.last().unwrap();
    Ok(Trajectory::new(&traj.id, out))
}
