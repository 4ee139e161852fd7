//! Loss/branch ablation: identification loss alone, with the triplet term,
//! with the gated caption branch, both, and the last one re-ranked.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::data::load_splits;
use super::evaluate::{evaluate, raw_visual_metrics, split_queries, GateStats};
use super::train::{train, EpochLoss};
use crate::error::Result;
use crate::model::Branch;
use crate::retrieval::MetricsReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub cmc: BTreeMap<String, f64>,
    pub gates: Option<GateStats>,
    pub final_loss: Option<EpochLoss>,
}

impl AblationRow {
    fn new(
        name: &str,
        m: &MetricsReport,
        gates: Option<GateStats>,
        final_loss: Option<EpochLoss>,
    ) -> Self {
        AblationRow {
            name: name.to_string(),
            map: m.map,
            cmc: m.cmc.clone(),
            gates,
            final_loss,
        }
    }

    pub fn cmc_at(&self, k: usize) -> f64 {
        self.cmc.get(&k.to_string()).copied().unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// The untrained visual features on the same split, for reference.
    pub raw_visual: MetricsReport,
}

pub const ROW_NAMES: [&str; 5] = [
    "ID",
    "ID+Triplet",
    "ID+HorNet",
    "ID+Triplet+HorNet",
    "+Rerank",
];

/// Configuration of one trained variant.
pub fn variant(base: &ExperimentConfig, branch: Branch, triplet: bool) -> ExperimentConfig {
    let mut c = base.clone();
    c.model.branch = branch;
    c.loss.triplet = triplet;
    c
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_text(&self) -> String {
        let width = ROW_NAMES.iter().map(|n| n.len()).max().unwrap_or(0).max(8);
        let mut out = format!(
            "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}  {:>10}  {:>10}\n",
            "variant", "mAP", "top-1", "top-5", "top-10", "top-20", "gate:attr", "gate:dist"
        );
        let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        for r in &self.rows {
            let (ga, gd) = r
                .gates
                .map_or((None, None), |g| (g.attribute.mean, g.distractor.mean));
            writeln!(
                out,
                "{:<width$}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}  {:>10}  {:>10}",
                r.name,
                r.map,
                r.cmc_at(1),
                r.cmc_at(5),
                r.cmc_at(10),
                r.cmc_at(20),
                fmt_opt(ga),
                fmt_opt(gd)
            )
            .expect("write to string");
        }
        writeln!(
            out,
            "{:<width$}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}",
            "(raw F)",
            self.raw_visual.map,
            self.raw_visual.cmc_at(1).unwrap_or(f64::NAN),
            self.raw_visual.cmc_at(5).unwrap_or(f64::NAN),
            self.raw_visual.cmc_at(10).unwrap_or(f64::NAN),
            self.raw_visual.cmc_at(20).unwrap_or(f64::NAN),
        )
        .expect("write to string");
        out
    }
}

/// Trains the four variants from the same seed and data (in parallel, each
/// on its own graph) and evaluates them on the shared evaluation split.
pub fn ablation(config: &ExperimentConfig) -> Result<AblationTable> {
    config.validate()?;
    let splits = load_splits(config)?;
    // Fail before training if the re-ranking row cannot be produced.
    let (_, gallery) = split_queries(&splits.eval);
    config.eval.rerank.validate(gallery.len())?;
    let variants = [
        variant(config, Branch::VisualOnly, false),
        variant(config, Branch::VisualOnly, true),
        variant(config, Branch::Fused, false),
        variant(config, Branch::Fused, true),
    ];
    let metric = config.eval.metric;
    let results: Vec<Result<_>> = std::thread::scope(|s| {
        let handles: Vec<_> = variants
            .iter()
            .map(|v| {
                let train_set = &splits.train;
                let eval_set = &splits.eval;
                s.spawn(move || {
                    let outcome = train(v, train_set)?;
                    let eval = evaluate(&outcome.model, eval_set, metric)?;
                    Ok((outcome.trace.last().copied(), eval))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("ablation worker panicked"))
            .collect()
    });

    let mut rows = Vec::with_capacity(5);
    let mut last_embeddings = None;
    for (i, res) in results.into_iter().enumerate() {
        let (final_loss, eval) = res?;
        let gates = (variants[i].model.branch == Branch::Fused).then_some(eval.gates);
        rows.push(AblationRow::new(
            ROW_NAMES[i],
            &eval.metrics,
            gates,
            final_loss,
        ));
        last_embeddings = eval.embeddings;
    }
    let embeddings = last_embeddings.expect("evaluation keeps embeddings");
    let reranked = embeddings.reranked_metrics(&config.eval.rerank)?;
    let gates = rows[3].gates;
    rows.push(AblationRow::new(ROW_NAMES[4], &reranked, gates, None));
    Ok(AblationTable {
        rows,
        raw_visual: raw_visual_metrics(&splits.eval, metric)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{DataSource, SyntheticConfig};

    #[test]
    fn five_rows_with_metrics() {
        let mut c = ExperimentConfig::default();
        c.model.embed_dim = 4;
        c.model.hidden = 4;
        c.model.reduced = 4;
        c.model.visual_dim = 8;
        c.sampler.p = 3;
        c.sampler.k = 2;
        c.optimizer.epochs = 2;
        c.eval.rerank.k1 = 6;
        c.eval.rerank.k2 = 2;
        c.data = DataSource::Synthetic(SyntheticConfig {
            identities: 6,
            observations: 4,
            attributes: 4,
            eval_observations: 4,
            cameras: 2,
            ..SyntheticConfig::default()
        });
        let t = ablation(&c).unwrap();
        let names: Vec<&str> = t.rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ROW_NAMES);
        for r in &t.rows {
            assert!((0.0..=1.0).contains(&r.map));
            assert_eq!(r.cmc.len(), 4);
        }
        assert!(t.rows[0].gates.is_none());
        assert!(t.rows[3].gates.is_some());
        let text = t.to_text();
        assert_eq!(text.lines().count(), 7);
        let v = serde_json::to_value(&t).unwrap();
        assert_eq!(v["rows"].as_array().unwrap().len(), 5);
    }
}
