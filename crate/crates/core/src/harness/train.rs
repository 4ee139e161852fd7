//! The training loop: PK batches → gated encoding conditioned on `F` →
//! fusion → identification + triplet loss → backward → optimizer step.

use std::fmt::Write as _;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::ExperimentConfig;
use super::data::{class_labels, stream_rng, Stream};
use super::optim::Optimizer;
use super::sampler::PkSampler;
use crate::autodiff::{Graph, Tensor};
use crate::encoder::GumbelNoise;
use crate::error::{Error, Result};
use crate::fusion::total_loss;
use crate::jsonl;
use crate::model::{caption_tokens, Model};
use crate::text::{TokenSequence, Vocabulary};
use crate::visual::ObservationRecord;

/// Batch-averaged losses of one epoch (1-based).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub id_loss: f64,
    pub triplet_loss: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<EpochLoss>,
    pub checkpoint: Checkpoint,
    /// Identities too small for PK sampling.
    pub skipped_identities: usize,
}

pub fn trace_csv(trace: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,id_loss,triplet_loss,total\n");
    for e in trace {
        writeln!(
            out,
            "{},{},{},{}",
            e.epoch, e.id_loss, e.triplet_loss, e.total
        )
        .expect("write to string");
    }
    out
}

pub fn write_trace(path: &Path, trace: &[EpochLoss]) -> Result<()> {
    jsonl::write_atomic(path, trace_csv(trace).as_bytes())
}

struct Prepared {
    seqs: Vec<TokenSequence>,
    labels: Vec<usize>,
    identities: Vec<usize>,
}

fn prepare(records: &[ObservationRecord], vocab: &Vocabulary) -> Result<Prepared> {
    let seqs = records
        .iter()
        .map(|r| caption_tokens(vocab, &r.caption).map(|(_, s)| s))
        .collect::<Result<_>>()?;
    let (labels, identities) = class_labels(records);
    Ok(Prepared {
        seqs,
        labels,
        identities,
    })
}

/// One optimization step on `batch`; returns `(id, triplet, total)` losses
/// and leaves `model` updated.
fn step(
    model: &mut Model,
    optimizer: &mut Optimizer,
    config: &ExperimentConfig,
    records: &[ObservationRecord],
    data: &Prepared,
    batch: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64, f64)> {
    let mut graph = Graph::new();
    let bound = model.bind(&mut graph);
    let mut noise = GumbelNoise(rng);
    let mut embeddings = Vec::with_capacity(batch.len());
    for &i in batch {
        let out = bound.forward(&mut graph, &records[i].features, &data.seqs[i], &mut noise)?;
        embeddings.push(out.embedding);
    }
    let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
    let loss = total_loss(&mut graph, &embeddings, &labels, bound.theta, &config.loss)?;
    let value = |n| graph.value(n).item();
    let losses = (
        value(loss.id),
        loss.triplet.map_or(0.0, value),
        value(loss.total),
    );
    if !losses.2.is_finite() {
        return Ok(losses);
    }
    graph.backward(loss.total)?;
    let grads: Vec<Tensor> = bound.params.iter().map(|&p| graph.grad(p)).collect();
    optimizer.step(model.tensors_mut(), &grads)?;
    Ok(losses)
}

/// Trains on `records` from the experiment seed. `on_epoch` sees every
/// epoch's losses as they are produced.
pub fn train_with(
    config: &ExperimentConfig,
    records: &[ObservationRecord],
    on_epoch: &mut dyn FnMut(&EpochLoss),
) -> Result<TrainOutcome> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::invalid("no training records"));
    }
    let captions: Vec<&str> = records.iter().map(|r| r.caption.as_str()).collect();
    let vocab = Vocabulary::build(&captions, 1)?;
    let data = prepare(records, &vocab)?;
    let mut model = Model::init(
        config.model.clone(),
        vocab,
        data.identities.len(),
        &mut stream_rng(config.seed, Stream::ModelInit),
    )?;
    let mut sampler = PkSampler::new(&data.labels, config.sampler.p, config.sampler.k)?;
    let mut optimizer = Optimizer::new(config.optimizer.clone());
    let mut rng = stream_rng(config.seed, Stream::Training);
    let mut trace = Vec::with_capacity(config.optimizer.epochs);

    for epoch in 1..=config.optimizer.epochs {
        let batches = sampler.epoch(&mut rng);
        let (mut id_sum, mut tri_sum, mut tot_sum) = (0.0, 0.0, 0.0);
        for batch in &batches {
            let before = (model.clone(), rng.clone());
            let (id, tri, tot) = step(
                &mut model,
                &mut optimizer,
                config,
                records,
                &data,
                batch,
                &mut rng,
            )?;
            if !tot.is_finite() {
                let checkpoint = Checkpoint::capture(
                    &before.0,
                    config,
                    &data.identities,
                    epoch,
                    optimizer.steps(),
                    &before.1,
                );
                return Err(Error::Diverged {
                    epoch,
                    step: optimizer.steps(),
                    checkpoint: Box::new(checkpoint),
                });
            }
            id_sum += id;
            tri_sum += tri;
            tot_sum += tot;
        }
        let n = batches.len() as f64;
        let e = EpochLoss {
            epoch,
            id_loss: id_sum / n,
            triplet_loss: tri_sum / n,
            total: tot_sum / n,
        };
        on_epoch(&e);
        trace.push(e);
    }

    let checkpoint = Checkpoint::capture(
        &model,
        config,
        &data.identities,
        config.optimizer.epochs,
        optimizer.steps(),
        &rng,
    );
    Ok(TrainOutcome {
        model,
        trace,
        checkpoint,
        skipped_identities: sampler.skipped(),
    })
}

pub fn train(config: &ExperimentConfig, records: &[ObservationRecord]) -> Result<TrainOutcome> {
    train_with(config, records, &mut |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{DataSource, SyntheticConfig};
    use crate::harness::data::load_splits;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.model.embed_dim = 4;
        c.model.hidden = 4;
        c.model.reduced = 4;
        c.model.visual_dim = 8;
        c.sampler.p = 3;
        c.sampler.k = 2;
        c.optimizer.epochs = 3;
        c.data = DataSource::Synthetic(SyntheticConfig {
            identities: 5,
            observations: 4,
            attributes: 4,
            ..SyntheticConfig::default()
        });
        c
    }

    #[test]
    fn csv_header_and_rows() {
        let csv = trace_csv(&[EpochLoss {
            epoch: 1,
            id_loss: 1.5,
            triplet_loss: 0.25,
            total: 1.75,
        }]);
        assert_eq!(csv, "epoch,id_loss,triplet_loss,total\n1,1.5,0.25,1.75\n");
    }

    #[test]
    fn runs_and_reports_every_epoch() {
        let c = tiny();
        let data = load_splits(&c).unwrap();
        let mut seen = 0;
        let out = train_with(&c, &data.train, &mut |_| seen += 1).unwrap();
        assert_eq!(seen, 3);
        assert_eq!(out.trace.len(), 3);
        assert!(out.trace.iter().all(|e| e.total.is_finite()));
        assert_eq!(out.checkpoint.model().unwrap(), out.model);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut c = tiny();
        c.optimizer.learning_rate = 0.0;
        let data = load_splits(&c).unwrap();
        let untrained = {
            let mut c0 = c.clone();
            c0.optimizer.epochs = 0;
            train(&c0, &data.train).unwrap().model
        };
        assert_eq!(train(&c, &data.train).unwrap().model, untrained);
    }

    #[test]
    fn divergence_returns_a_checkpoint() {
        let mut c = tiny();
        c.optimizer.kind = crate::harness::config::OptimizerKind::Sgd;
        c.optimizer.learning_rate = 1e300;
        let data = load_splits(&c).unwrap();
        match train(&c, &data.train) {
            Err(Error::Diverged { checkpoint, .. }) => {
                assert!(checkpoint.model().is_ok());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
