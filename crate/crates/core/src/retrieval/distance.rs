use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    SquaredEuclidean,
    /// `1 − cos(q, g)`.
    Cosine,
}

/// Row-major `queries × gallery` distances.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::invalid(format!(
                "{rows}x{cols} distance matrix cannot hold {} values",
                data.len()
            )));
        }
        Ok(DistanceMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        DistanceMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, q: usize, g: usize) -> f64 {
        self.data[q * self.cols + g]
    }

    pub fn row(&self, q: usize) -> &[f64] {
        &self.data[q * self.cols..(q + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        DistanceMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn pair_distance(a: &[f64], b: &[f64], metric: Metric) -> f64 {
    match metric {
        Metric::SquaredEuclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        Metric::Euclidean => pair_distance(a, b, Metric::SquaredEuclidean).sqrt(),
        Metric::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            // Clamp rounding excursions so the distance stays in [0, 2].
            (1.0 - dot / (norm(a) * norm(b))).clamp(0.0, 2.0)
        }
    }
}

/// All pairwise distances between `queries` and `gallery`.
pub fn distance_matrix(
    queries: &[Vec<f64>],
    gallery: &[Vec<f64>],
    metric: Metric,
) -> Result<DistanceMatrix> {
    let dim = queries.first().or(gallery.first()).map_or(0, Vec::len);
    if let Some(v) = queries.iter().chain(gallery).find(|v| v.len() != dim) {
        return Err(Error::invalid(format!(
            "embedding dimension {} differs from {dim}",
            v.len()
        )));
    }
    if metric == Metric::Cosine && queries.iter().chain(gallery).any(|v| norm(v) == 0.0) {
        return Err(Error::domain(
            "distance_matrix",
            "cosine distance of a zero vector",
        ));
    }
    Ok(DistanceMatrix::from_fn(
        queries.len(),
        gallery.len(),
        |q, g| pair_distance(&queries[q], &gallery[g], metric),
    ))
}
