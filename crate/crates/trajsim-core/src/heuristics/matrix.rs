//! All-pairs ground-truth distance matrix with binary persistence.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::heuristics::{distance, DistanceMode, MetricTag};
use crate::traj::Trajectory;

const MAGIC: [u8; 4] = *b"TSDM";
const VERSION: u32 = 1;

/// Dense symmetric N x N matrix of pairwise distances. Row order follows
/// the trajectory order the matrix was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    metric: MetricTag,
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    /// Wrap row-major values as a matrix; entries must be finite and
    /// nonnegative with a zero diagonal.
    pub fn from_values(metric: MetricTag, n: usize, values: Vec<f64>) -> Result<DistanceMatrix> {
        if values.len() != n * n {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {n}x{n} matrix",
                values.len()
            )));
        }
        let m = DistanceMatrix { metric, n, values };
        for i in 0..n {
            if m.get(i, i) != 0.0 {
                return Err(Error::Data(format!(
                    "diagonal entry ({i}, {i}) is {}, expected 0",
                    m.get(i, i)
                )));
            }
            for j in 0..n {
                let v = m.get(i, j);
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Data(format!(
                        "distance ({i}, {j}) is {v}, expected finite and nonnegative"
                    )));
                }
            }
        }
        Ok(m)
    }

    pub fn metric(&self) -> MetricTag {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mean over all off-diagonal entries; the distance-to-similarity
    /// temperature defaults to this.
    pub fn mean_off_diagonal(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let sum: f64 = self.values.iter().sum();
        sum / (self.n * (self.n - 1)) as f64
    }

    /// Matrix restricted to `idx` rows/columns, in `idx` order.
    pub fn submatrix(&self, idx: &[usize]) -> Result<DistanceMatrix> {
        for &i in idx {
            if i >= self.n {
                return Err(Error::Data(format!(
                    "submatrix index {i} out of range for {} trajectories",
                    self.n
                )));
            }
        }
        let m = idx.len();
        let mut values = Vec::with_capacity(m * m);
        for &i in idx {
            for &j in idx {
                values.push(self.get(i, j));
            }
        }
        Ok(DistanceMatrix {
            metric: self.metric,
            n: m,
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)
            .map_err(|e| Error::Data(format!("cannot create {}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[self.metric.to_byte()])?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<DistanceMatrix> {
        let file = File::open(path)
            .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
        let mut r = BufReader::new(file);

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Data(format!("{}: truncated header", path.display())))?;
        if magic != MAGIC {
            return Err(Error::Data(format!(
                "{}: bad magic, not a distance matrix file",
                path.display()
            )));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported version {version}",
                path.display()
            )));
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let metric = MetricTag::from_byte(tag[0])?;
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let n = u64::from_le_bytes(u64buf) as usize;

        let mut values = vec![0.0f64; n * n];
        let mut f64buf = [0u8; 8];
        for v in values.iter_mut() {
            r.read_exact(&mut f64buf)
                .map_err(|_| Error::Data(format!("{}: truncated payload", path.display())))?;
            *v = f64::from_le_bytes(f64buf);
        }
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(Error::Data(format!(
                "{}: trailing bytes after {n}x{n} payload",
                path.display()
            )));
        }

        let m = DistanceMatrix { metric, n, values };
        m.validate(path)?;
        Ok(m)
    }

    fn validate(&self, path: &Path) -> Result<()> {
        for (k, &v) in self.values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Data(format!(
                    "{}: entry ({}, {}) is {v}, expected finite and non-negative",
                    path.display(),
                    k / self.n,
                    k % self.n
                )));
            }
        }
        for i in 0..self.n {
            if self.get(i, i) != 0.0 {
                return Err(Error::Data(format!(
                    "{}: diagonal entry ({i}, {i}) is {}, expected 0",
                    path.display(),
                    self.get(i, i)
                )));
            }
        }
        // Symmetry spot check on a deterministic stride of pairs.
        let step = (self.n * self.n / 1000).max(1);
        let mut k = 0;
        while k < self.n * self.n {
            let (i, j) = (k / self.n, k % self.n);
            if (self.get(i, j) - self.get(j, i)).abs() > 1e-9 {
                return Err(Error::Data(format!(
                    "{}: asymmetric at ({i}, {j}): {} vs {}",
                    path.display(),
                    self.get(i, j),
                    self.get(j, i)
                )));
            }
            k += step;
        }
        Ok(())
    }
}

/// Compute the full pairwise matrix. Only the upper triangle is computed
/// (in parallel, indexed placement) and mirrored, so the result does not
/// depend on the thread schedule.
pub fn build_matrix(
    trajs: &[Trajectory],
    metric: MetricTag,
    mode: DistanceMode,
) -> Result<DistanceMatrix> {
    if trajs.len() < 2 {
        return Err(Error::Data(format!(
            "distance matrix needs at least 2 trajectories, got {}",
            trajs.len()
        )));
    }
    let n = trajs.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let dists: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            distance(metric, &trajs[i], &trajs[j], mode).map_err(|e| {
                Error::Data(format!(
                    "pair ({i}, {j}) ('{}' vs '{}'): {e}",
                    trajs[i].id, trajs[j].id
                ))
            })
        })
        .collect::<Result<_>>()?;

    let mut values = vec![0.0f64; n * n];
    for (&(i, j), &d) in pairs.iter().zip(&dists) {
        values[i * n + j] = d;
        values[j * n + i] = d;
    }
    Ok(DistanceMatrix { metric, n, values })
}
