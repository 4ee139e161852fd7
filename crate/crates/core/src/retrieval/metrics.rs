//! CMC and mAP under the cross-camera protocol: gallery entries that share
//! both identity and camera with the query are removed before ranking.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::DistanceMatrix;
use crate::error::{Error, Result};

/// Identity and camera of one query or gallery item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tag {
    pub identity: usize,
    pub camera: usize,
}

fn check(dist: &DistanceMatrix, query: &[Tag], gallery: &[Tag]) -> Result<()> {
    if dist.rows() != query.len() || dist.cols() != gallery.len() {
        return Err(Error::invalid(format!(
            "{}x{} distance matrix for {} queries and {} gallery items",
            dist.rows(),
            dist.cols(),
            query.len(),
            gallery.len()
        )));
    }
    Ok(())
}

/// Ranked gallery indices for query `q`, nearest first, with same-identity
/// same-camera entries removed. Ties go to the lower gallery index.
pub fn rank_list(dist: &DistanceMatrix, q: usize, query: &[Tag], gallery: &[Tag]) -> Vec<usize> {
    let row = dist.row(q);
    let mut idx: Vec<usize> = (0..gallery.len())
        .filter(|&g| gallery[g] != query[q])
        .collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    idx
}

/// Per-query match flags along the filtered ranking; `None` for queries
/// with no valid positive.
fn match_flags(dist: &DistanceMatrix, query: &[Tag], gallery: &[Tag]) -> Vec<Option<Vec<bool>>> {
    (0..query.len())
        .map(|q| {
            let flags: Vec<bool> = rank_list(dist, q, query, gallery)
                .into_iter()
                .map(|g| gallery[g].identity == query[q].identity)
                .collect();
            flags.iter().any(|&m| m).then_some(flags)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CmcCurve {
    /// `curve[k-1]` is CMC@k for `k = 1..=gallery size`.
    pub curve: Vec<f64>,
    pub num_queries: usize,
    pub excluded_queries: usize,
}

impl CmcCurve {
    /// CMC@k (1-based); ranks beyond the gallery saturate.
    pub fn at(&self, k: usize) -> f64 {
        assert!(k >= 1, "CMC ranks are 1-based");
        match self.curve.len() {
            0 => 0.0,
            n => self.curve[k.min(n) - 1],
        }
    }
}

pub fn cmc(dist: &DistanceMatrix, query: &[Tag], gallery: &[Tag]) -> Result<CmcCurve> {
    check(dist, query, gallery)?;
    let mut hits = vec![0usize; gallery.len()];
    let (mut valid, mut excluded) = (0, 0);
    for flags in match_flags(dist, query, gallery) {
        let Some(flags) = flags else {
            excluded += 1;
            continue;
        };
        valid += 1;
        let first = flags.iter().position(|&m| m).expect("has a positive");
        hits[first] += 1;
    }
    let mut acc = 0usize;
    let curve = hits
        .into_iter()
        .map(|h| {
            acc += h;
            if valid == 0 {
                0.0
            } else {
                acc as f64 / valid as f64
            }
        })
        .collect();
    Ok(CmcCurve {
        curve,
        num_queries: valid,
        excluded_queries: excluded,
    })
}

/// Average precision of one ranked match list.
pub fn average_precision(flags: &[bool]) -> f64 {
    let mut found = 0usize;
    let mut sum = 0.0;
    for (rank, &m) in flags.iter().enumerate() {
        if m {
            found += 1;
            sum += found as f64 / (rank + 1) as f64;
        }
    }
    if found == 0 {
        0.0
    } else {
        sum / found as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanAp {
    pub map: f64,
    pub num_queries: usize,
    pub excluded_queries: usize,
}

pub fn mean_ap(dist: &DistanceMatrix, query: &[Tag], gallery: &[Tag]) -> Result<MeanAp> {
    check(dist, query, gallery)?;
    let (mut sum, mut valid, mut excluded) = (0.0, 0usize, 0usize);
    for flags in match_flags(dist, query, gallery) {
        match flags {
            Some(f) => {
                sum += average_precision(&f);
                valid += 1;
            }
            None => excluded += 1,
        }
    }
    Ok(MeanAp {
        map: if valid == 0 { 0.0 } else { sum / valid as f64 },
        num_queries: valid,
        excluded_queries: excluded,
    })
}

pub const REPORT_RANKS: [usize; 4] = [1, 5, 10, 20];

/// The metrics JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "mAP")]
    pub map: f64,
    pub cmc: BTreeMap<String, f64>,
    /// Queries with at least one valid positive (the ones averaged over).
    pub num_queries: usize,
    pub excluded_queries: usize,
}

impl MetricsReport {
    pub fn cmc_at(&self, k: usize) -> Option<f64> {
        self.cmc.get(&k.to_string()).copied()
    }
}

pub fn metrics_report(
    dist: &DistanceMatrix,
    query: &[Tag],
    gallery: &[Tag],
) -> Result<MetricsReport> {
    let curve = cmc(dist, query, gallery)?;
    let map = mean_ap(dist, query, gallery)?;
    Ok(MetricsReport {
        map: map.map,
        cmc: REPORT_RANKS
            .iter()
            .map(|&k| (k.to_string(), curve.at(k)))
            .collect(),
        num_queries: curve.num_queries,
        excluded_queries: curve.excluded_queries,
    })
}
