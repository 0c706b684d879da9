//! Synthetic clustered random-walk corpus in the unit square.
//!
//! Each cluster is one smooth template walk; members are the template plus
//! a constant offset and per-point jitter. Nearest neighbors under any of
//! the heuristic distances are then overwhelmingly within-cluster, which
//! gives training and retrieval tests a known structure to recover.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::traj::{Point, Trajectory};

const STEP: f64 = 0.004;
const TURN_SIGMA: f64 = 0.15;
const MEMBER_OFFSET_SIGMA: f64 = 0.005;
const JITTER_SIGMA: f64 = 0.002;

fn normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    sigma * rng.sample::<f64, _>(StandardNormal)
}

/// `clusters * per_cluster` trajectories of `len` points each, ids
/// `c{cluster}_m{member}`, every coordinate inside [0, 1].
pub fn random_walk_clusters(
    clusters: usize,
    per_cluster: usize,
    len: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if clusters == 0 || per_cluster == 0 {
        return Err(Error::Config(format!(
            "corpus shape {clusters} x {per_cluster} is empty"
        )));
    }
    if len < 2 {
        return Err(Error::Config(format!(
            "trajectories need at least 2 points, got {len}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(clusters * per_cluster);
    for c in 0..clusters {
        // Template walk with a slowly diffusing heading, kept away from
        // the border so member offsets stay inside the box.
        let mut x = rng.gen_range(0.1..0.9);
        let mut y = rng.gen_range(0.1..0.9);
        let mut heading = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut template = Vec::with_capacity(len);
        for _ in 0..len {
            template.push((x, y));
            heading += normal(&mut rng, TURN_SIGMA);
            x = (x + STEP * heading.cos()).clamp(0.02, 0.98);
            y = (y + STEP * heading.sin()).clamp(0.02, 0.98);
        }
        for m in 0..per_cluster {
            let dx = normal(&mut rng, MEMBER_OFFSET_SIGMA);
            let dy = normal(&mut rng, MEMBER_OFFSET_SIGMA);
            let points = template
                .iter()
                .map(|&(tx, ty)| {
                    Point::new(
                        (tx + dx + normal(&mut rng, JITTER_SIGMA)).clamp(0.0, 1.0),
                        (ty + dy + normal(&mut rng, JITTER_SIGMA)).clamp(0.0, 1.0),
                    )
                })
                .collect();
            out.push(Trajectory::new(format!("c{c}_m{m}"), points));
        }
    }
    Ok(out)
}
