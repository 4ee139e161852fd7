//! Query/gallery evaluation with deterministic inference gates.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::model::{Inference, Model};
use crate::retrieval::{
    distance_matrix, k_reciprocal_rerank, metrics_report, Metric, MetricsReport, RerankParams, Tag,
};
use crate::visual::{classify_token, ObservationRecord, TokenClass};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddedItem {
    pub image_key: String,
    pub id: usize,
    pub camera: usize,
    pub embedding: Vec<f64>,
}

impl EmbeddedItem {
    fn tag(&self) -> Tag {
        Tag {
            identity: self.id,
            camera: self.camera,
        }
    }
}

/// Query and gallery embeddings of one evaluation; the input of the
/// `rerank` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingReport {
    #[serde(default)]
    pub metric: Metric,
    pub query: Vec<EmbeddedItem>,
    pub gallery: Vec<EmbeddedItem>,
}

/// Query embeddings, gallery embeddings and their tags.
type Parts = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Tag>, Vec<Tag>);

impl EmbeddingReport {
    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        report.validate()?;
        Ok(report)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = jsonl::read_to_string(path)?;
        let report: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        report.validate()?;
        Ok(report)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        jsonl::write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.query.is_empty() || self.gallery.is_empty() {
            return Err(Error::invalid(
                "embedding report needs queries and a gallery",
            ));
        }
        let dim = self.query[0].embedding.len();
        for item in self.query.iter().chain(&self.gallery) {
            if item.embedding.len() != dim || dim == 0 {
                return Err(Error::invalid(format!(
                    "{}: embedding has {} dimensions, expected {dim}",
                    item.image_key,
                    item.embedding.len()
                )));
            }
            if item.embedding.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!(
                    "{}: non-finite embedding",
                    item.image_key
                )));
            }
        }
        Ok(())
    }

    fn parts(&self) -> Parts {
        let emb = |v: &[EmbeddedItem]| v.iter().map(|i| i.embedding.clone()).collect();
        let tags = |v: &[EmbeddedItem]| v.iter().map(EmbeddedItem::tag).collect();
        (
            emb(&self.query),
            emb(&self.gallery),
            tags(&self.query),
            tags(&self.gallery),
        )
    }

    pub fn metrics(&self) -> Result<MetricsReport> {
        let (q, g, qt, gt) = self.parts();
        let d = distance_matrix(&q, &g, self.metric)?;
        metrics_report(&d, &qt, &gt)
    }

    pub fn reranked_metrics(&self, params: &RerankParams) -> Result<MetricsReport> {
        let (q, g, qt, gt) = self.parts();
        let d = distance_matrix(&q, &g, self.metric)?;
        let r = k_reciprocal_rerank(&d, &q, &g, self.metric, params)?;
        metrics_report(&r, &qt, &gt)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassGate {
    pub count: usize,
    /// `None` when no token of the class was seen.
    pub mean: Option<f64>,
}

/// Inference-time gate statistics per token class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GateStats {
    pub attribute: ClassGate,
    pub distractor: ClassGate,
    pub other: ClassGate,
    /// Fraction of all gates that are open (`z ≥ 0.5`).
    pub open_rate: Option<f64>,
}

impl GateStats {
    pub fn collect<'a>(inferences: impl IntoIterator<Item = &'a Inference>) -> Self {
        let mut sums = [(0usize, 0.0f64); 3];
        let (mut open, mut total) = (0usize, 0usize);
        for inf in inferences {
            for (tok, &z) in inf.tokens.iter().zip(&inf.gates) {
                let slot = match classify_token(tok) {
                    TokenClass::Attribute => 0,
                    TokenClass::Distractor => 1,
                    TokenClass::Other => 2,
                };
                sums[slot].0 += 1;
                sums[slot].1 += z;
                total += 1;
                open += usize::from(z >= 0.5);
            }
        }
        let class = |(count, sum): (usize, f64)| ClassGate {
            count,
            mean: (count > 0).then(|| sum / count as f64),
        };
        GateStats {
            attribute: class(sums[0]),
            distractor: class(sums[1]),
            other: class(sums[2]),
            open_rate: (total > 0).then(|| open as f64 / total as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub gates: GateStats,
    #[serde(skip)]
    pub embeddings: Option<EmbeddingReport>,
}

/// The first observation of every (identity, camera) pair, in record order,
/// is a query; everything else is gallery.
pub fn split_queries(records: &[ObservationRecord]) -> (Vec<usize>, Vec<usize>) {
    let mut seen = std::collections::HashSet::new();
    (0..records.len()).partition(|&i| seen.insert((records[i].identity, records[i].camera)))
}

/// Embeds every record, using all available cores; results are in record order.
pub fn infer_all(model: &Model, records: &[ObservationRecord]) -> Result<Vec<Inference>> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(records.len().max(1));
    let chunk = records.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = records
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|r| model.infer(&r.features, &r.caption))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(records.len());
        for h in handles {
            out.extend(h.join().expect("inference worker panicked")?);
        }
        Ok(out)
    })
}

pub fn evaluate(
    model: &Model,
    records: &[ObservationRecord],
    metric: Metric,
) -> Result<Evaluation> {
    let dim = model.config.visual_dim;
    if let Some(r) = records.iter().find(|r| r.features.len() != dim) {
        return Err(Error::invalid(format!(
            "{}: visual feature has {} dimensions, the model expects {dim}",
            r.image_key,
            r.features.len()
        )));
    }
    let inferences = infer_all(model, records)?;
    let (queries, gallery) = split_queries(records);
    let item = |i: usize| EmbeddedItem {
        image_key: records[i].image_key.clone(),
        id: records[i].identity,
        camera: records[i].camera,
        embedding: inferences[i].embedding.clone(),
    };
    let embeddings = EmbeddingReport {
        metric,
        query: queries.into_iter().map(item).collect(),
        gallery: gallery.into_iter().map(item).collect(),
    };
    embeddings.validate()?;
    Ok(Evaluation {
        metrics: embeddings.metrics()?,
        gates: GateStats::collect(&inferences),
        embeddings: Some(embeddings),
    })
}

/// Metrics of the raw visual features alone, on the same split.
pub fn raw_visual_metrics(records: &[ObservationRecord], metric: Metric) -> Result<MetricsReport> {
    let (queries, gallery) = split_queries(records);
    let item = |i: usize| EmbeddedItem {
        image_key: records[i].image_key.clone(),
        id: records[i].identity,
        camera: records[i].camera,
        embedding: records[i].features.clone(),
    };
    let report = EmbeddingReport {
        metric,
        query: queries.into_iter().map(item).collect(),
        gallery: gallery.into_iter().map(item).collect(),
    };
    report.validate()?;
    report.metrics()
}
