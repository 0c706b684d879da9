//! Planar pairwise distance kernels.
//!
//! All kernels take projected `[x, y]` point slices and work on squared
//! distances internally, taking one square root at the end. Because `sqrt`
//! is correctly rounded and monotone, min/max commute with it exactly, so
//! this is bit-identical to the textbook formulations on plain distances.

#[inline]
pub(crate) fn dist_sq(p: [f64; 2], q: [f64; 2]) -> f64 {
    let dx = p[0] - q[0];
    let dy = p[1] - q[1];
    dx * dx + dy * dy
}

/// Squared distance from `p` to the segment `a..b` (clamped projection).
#[inline]
pub(crate) fn point_segment_dist_sq(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len_sq = ab[0] * ab[0] + ab[1] * ab[1];
    if len_sq == 0.0 {
        return dist_sq(p, a);
    }
    let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len_sq).clamp(0.0, 1.0);
    dist_sq(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

fn point_polyline_dist_sq(p: [f64; 2], poly: &[[f64; 2]]) -> f64 {
    if poly.len() == 1 {
        return dist_sq(p, poly[0]);
    }
    poly.windows(2)
        .map(|w| point_segment_dist_sq(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

fn spd(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let sum: f64 = a
        .iter()
        .map(|&p| point_polyline_dist_sq(p, b).sqrt())
        .sum();
    sum / a.len() as f64
}

/// Symmetric segment-path distance: the two directed point-to-polyline
/// means, averaged.
pub fn sspd_xy(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    0.5 * (spd(a, b) + spd(b, a))
}

fn directed_hausdorff_sq(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter()
        .map(|&p| {
            b.iter()
                .map(|&q| dist_sq(p, q))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Discrete point-set Hausdorff distance.
pub fn hausdorff_xy(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    directed_hausdorff_sq(a, b)
        .max(directed_hausdorff_sq(b, a))
        .sqrt()
}

/// Discrete Frechet distance by the O(n·m) coupling recurrence
/// c[i][j] = max(d(a_i, b_j), min(c[i-1][j], c[i][j-1], c[i-1][j-1])),
/// kept as one rolling row.
pub fn frechet_xy(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let m = b.len();
    let mut row = vec![0.0f64; m];

    row[0] = dist_sq(a[0], b[0]);
    for j in 1..m {
        row[j] = row[j - 1].max(dist_sq(a[0], b[j]));
    }
    for &p in &a[1..] {
        // diag carries c[i-1][j-1] while row[j] still holds c[i-1][j].
        let mut diag = row[0];
        row[0] = row[0].max(dist_sq(p, b[0]));
        for j in 1..m {
            let up = row[j];
            row[j] = dist_sq(p, b[j]).max(diag.min(up).min(row[j - 1]));
            diag = up;
        }
    }
    row[m - 1].sqrt()
}
