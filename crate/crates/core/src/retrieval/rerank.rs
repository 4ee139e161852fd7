//! k-reciprocal re-ranking.
//!
//! Neighbour sets are built over the union of queries and gallery. Each
//! item's k-reciprocal set (expanded with the sets of its reciprocal
//! neighbours when they overlap by more than two thirds) is encoded as a
//! Gaussian-weighted sparse vector, smoothed over its `k2` nearest
//! neighbours, and compared with a Jaccard distance. The output blends the
//! Jaccard distance, rescaled to the input's range, with the input distance.

use serde::{Deserialize, Serialize};

use super::{distance::pair_distance, DistanceMatrix, Metric};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankParams {
    pub k1: usize,
    pub k2: usize,
    pub lambda: f64,
}

impl Default for RerankParams {
    fn default() -> Self {
        RerankParams {
            k1: 20,
            k2: 6,
            lambda: 0.3,
        }
    }
}

impl RerankParams {
    pub fn validate(&self, gallery: usize) -> Result<()> {
        if !(self.k1 > self.k2 && self.k2 >= 1) {
            return Err(Error::invalid(format!(
                "re-ranking needs k1 > k2 >= 1, got k1={} k2={}",
                self.k1, self.k2
            )));
        }
        if self.k1 >= gallery {
            return Err(Error::invalid(format!(
                "k1={} must be smaller than the gallery size {gallery}",
                self.k1
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

fn sorted_neighbours(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    idx
}

fn reciprocal(rank: &[Vec<usize>], i: usize, k: usize) -> Vec<usize> {
    rank[i][..=k]
        .iter()
        .copied()
        .filter(|&c| rank[c][..=k].contains(&i))
        .collect()
}

/// Re-ranked `queries × gallery` distances.
///
/// `dist` is the original query/gallery distance matrix; `queries` and
/// `gallery` are the embeddings it was computed from and `metric` is used to
/// fill in the query/query and gallery/gallery blocks.
pub fn k_reciprocal_rerank(
    dist: &DistanceMatrix,
    queries: &[Vec<f64>],
    gallery: &[Vec<f64>],
    metric: Metric,
    params: &RerankParams,
) -> Result<DistanceMatrix> {
    params.validate(gallery.len())?;
    if dist.rows() != queries.len() || dist.cols() != gallery.len() {
        return Err(Error::invalid(format!(
            "{}x{} distance matrix for {} queries and {} gallery items",
            dist.rows(),
            dist.cols(),
            queries.len(),
            gallery.len()
        )));
    }

    let nq = queries.len();
    let all: Vec<&Vec<f64>> = queries.iter().chain(gallery).collect();
    let n = all.len();

    // Full distances, each row scaled by its maximum.
    let mut full = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            full[i * n + j] = if i < nq && j >= nq {
                dist.get(i, j - nq)
            } else if j < nq && i >= nq {
                dist.get(j, i - nq)
            } else {
                pair_distance(all[i], all[j], metric)
            };
        }
    }
    for i in 0..n {
        let row = &mut full[i * n..(i + 1) * n];
        let max = row.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            row.iter_mut().for_each(|x| *x /= max);
        }
    }
    let rank: Vec<Vec<usize>> = (0..n)
        .map(|i| sorted_neighbours(&full[i * n..(i + 1) * n]))
        .collect();

    let k1 = params.k1;
    let half = (k1 as f64 / 2.0).round_ties_even() as usize;
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        let core = reciprocal(&rank, i, k1);
        let mut expansion = core.clone();
        for &c in &core {
            let cand = reciprocal(&rank, c, half);
            let overlap = cand.iter().filter(|x| core.contains(x)).count();
            if overlap as f64 > 2.0 / 3.0 * cand.len() as f64 {
                expansion.extend(cand);
            }
        }
        expansion.sort_unstable();
        expansion.dedup();
        let weights: Vec<f64> = expansion
            .iter()
            .map(|&j| (-full[i * n + j]).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        for (&j, w) in expansion.iter().zip(weights) {
            v[i * n + j] = w / total;
        }
    }

    if params.k2 > 1 {
        let mut smoothed = vec![0.0; n * n];
        for i in 0..n {
            let out = &mut smoothed[i * n..(i + 1) * n];
            for &nb in &rank[i][..params.k2] {
                out.iter_mut()
                    .zip(&v[nb * n..(nb + 1) * n])
                    .for_each(|(o, x)| *o += x);
            }
            out.iter_mut().for_each(|o| *o /= params.k2 as f64);
        }
        v = smoothed;
    }

    // Column-wise inverted index of non-zero entries.
    let inverted: Vec<Vec<usize>> = (0..n)
        .map(|col| (0..n).filter(|&r| v[r * n + col] != 0.0).collect())
        .collect();

    let scale = dist.max();
    let lambda = params.lambda;
    let mut out = vec![0.0; nq * gallery.len()];
    let mut overlap = vec![0.0; n];
    for i in 0..nq {
        overlap.iter_mut().for_each(|x| *x = 0.0);
        for col in (0..n).filter(|&c| v[i * n + c] != 0.0) {
            let vi = v[i * n + col];
            for &r in &inverted[col] {
                overlap[r] += vi.min(v[r * n + col]);
            }
        }
        for g in 0..gallery.len() {
            let m = overlap[nq + g];
            let jaccard = 1.0 - m / (2.0 - m);
            out[i * gallery.len() + g] = (1.0 - lambda) * jaccard * scale + lambda * dist.get(i, g);
        }
    }
    DistanceMatrix::new(nq, gallery.len(), out)
}
