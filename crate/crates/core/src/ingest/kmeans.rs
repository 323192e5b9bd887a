use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Marginal, NodeId};

/// Lloyd iterations stop after this many rounds even without a fixed point.
pub const KMEANS_MAX_ITER: usize = 300;

fn dist2(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: ArrayView1<f64>, centers: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centers.rows().into_iter().enumerate() {
        let d = dist2(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations, on the rows of `points`.
///
/// Seeding draws the first center uniformly, then each next center with
/// probability proportional to its squared distance from the chosen set. When
/// every point already coincides with a center the first point is reused. Empty
/// clusters keep their previous center.
pub fn kmeans(points: &Array2<f64>, k: usize, seed: u64) -> Result<Array2<f64>> {
    let (n, d) = points.dim();
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "cannot pick {k} centers from {n} points"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Array2::zeros((k, d));
    centers
        .row_mut(0)
        .assign(&points.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = points
        .rows()
        .into_iter()
        .map(|x| dist2(x, centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            // rounding can leave `target` past the running sum; fall back to the last candidate
            let mut idx = d2.iter().rposition(|&w| w > 0.0).expect("positive total");
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if acc > target {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            0
        };
        centers.row_mut(c).assign(&points.row(pick));
        for (i, x) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(dist2(x, centers.row(c)));
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, x) in points.rows().into_iter().enumerate() {
            let (c, _) = nearest(x, &centers);
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        // offsets from the current center keep coincident members exact
        let mut shift = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, x) in points.rows().into_iter().enumerate() {
            let c = assign[i];
            let delta = &x - &centers.row(c);
            let mut row = shift.row_mut(c);
            row += &delta;
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let step = &shift.row(c) / counts[c] as f64;
                let mut row = centers.row_mut(c);
                row += &step;
            }
        }
    }
    Ok(centers)
}

/// Uniform measure on `n0` k-means centroids of the pooled support of `marginals`.
///
/// The pool is sorted lexicographically before clustering, so the result does not
/// depend on the order of `marginals`. The label is taken from the first marginal
/// and is usually replaced by the caller.
pub fn barycenter_supports(marginals: &[&Marginal], n0: usize, seed: u64) -> Result<Marginal> {
    let first = marginals
        .first()
        .ok_or_else(|| Error::invalid("no marginals to pool"))?;
    let d = first.dim();
    let mut pool: Vec<Vec<f64>> = Vec::new();
    for m in marginals {
        if m.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: m.dim(),
            });
        }
        pool.extend(m.points().rows().into_iter().map(|r| r.to_vec()));
    }
    if n0 > pool.len() {
        return Err(Error::invalid(format!(
            "barycenter support of {n0} points exceeds the {} pooled samples",
            pool.len()
        )));
    }
    pool.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let flat: Vec<f64> = pool.concat();
    let pts = Array2::from_shape_vec((pool.len(), d), flat)
        .map_err(|e| Error::Internal(e.to_string()))?;
    let centers = kmeans(&pts, n0, seed)?;
    Marginal::uniform(
        centers,
        NodeId::new(0, first.label().snapshot),
        first.time(),
    )
}
