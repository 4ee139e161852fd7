//! Training/evaluation data for an experiment, and the random streams
//! derived from its seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{DataSource, ExperimentConfig, SyntheticConfig};
use crate::error::{Error, Result};
use crate::visual::{load_dataset, IdentityBank, ObservationRecord};

/// Independent ChaCha8 streams of one experiment seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    TrainData = 1,
    EvalData = 2,
    ModelInit = 3,
    Training = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<ObservationRecord>,
    pub eval: Vec<ObservationRecord>,
}

pub fn synthetic_bank(seed: u64, syn: &SyntheticConfig, visual_dim: usize) -> Result<IdentityBank> {
    IdentityBank::synthesize(
        syn.identities + syn.test_identities,
        syn.attributes,
        visual_dim,
        seed,
        syn.channel,
    )
}

/// Training set: `observations` per training identity. Evaluation set:
/// `eval_observations` fresh draws per training identity plus every
/// held-out test identity.
pub fn synthetic_splits(seed: u64, syn: &SyntheticConfig, visual_dim: usize) -> Result<Splits> {
    let bank = synthetic_bank(seed, syn, visual_dim)?;
    let train = bank.generate(
        0..syn.identities,
        syn.observations,
        syn.cameras,
        &mut stream_rng(seed, Stream::TrainData),
    )?;
    let eval = bank.generate(
        0..syn.identities + syn.test_identities,
        syn.eval_observations,
        syn.cameras,
        &mut stream_rng(seed, Stream::EvalData),
    )?;
    Ok(Splits { train, eval })
}

pub fn load_splits(config: &ExperimentConfig) -> Result<Splits> {
    let splits = match &config.data {
        DataSource::Synthetic(syn) => synthetic_splits(config.seed, syn, config.model.visual_dim)?,
        DataSource::Files(files) => {
            let train = load_dataset(&files.features, &files.captions)?;
            let eval = match (&files.eval_features, &files.eval_captions) {
                (Some(f), Some(c)) => load_dataset(f, c)?,
                (None, None) => train.clone(),
                _ => {
                    return Err(Error::invalid(
                        "eval_features and eval_captions must be given together",
                    ))
                }
            };
            Splits { train, eval }
        }
    };
    for r in splits.train.iter().chain(&splits.eval) {
        if r.features.len() != config.model.visual_dim {
            return Err(Error::invalid(format!(
                "{}: visual feature has {} dimensions, the model expects {}",
                r.image_key,
                r.features.len(),
                config.model.visual_dim
            )));
        }
    }
    Ok(splits)
}

/// Dense class labels (sorted by identity) and the identity of each class.
pub fn class_labels(records: &[ObservationRecord]) -> (Vec<usize>, Vec<usize>) {
    let mut identities: Vec<usize> = records.iter().map(|r| r.identity).collect();
    identities.sort_unstable();
    identities.dedup();
    let labels = records
        .iter()
        .map(|r| {
            identities
                .binary_search(&r.identity)
                .expect("listed identity")
        })
        .collect();
    (labels, identities)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_world_sizes() {
        let s = synthetic_splits(7, &SyntheticConfig::default(), 64).unwrap();
        assert_eq!(s.train.len(), 400);
        assert_eq!(s.eval.len(), 400);
        assert_ne!(s.train[0].features, s.eval[0].features);
        assert_eq!(s.train[0].identity, s.eval[0].identity);
    }

    #[test]
    fn held_out_identities_only_in_eval() {
        let syn = SyntheticConfig {
            identities: 4,
            test_identities: 2,
            ..SyntheticConfig::default()
        };
        let s = synthetic_splits(1, &syn, 8).unwrap();
        assert!(s.train.iter().all(|r| r.identity < 4));
        assert!(s.eval.iter().any(|r| r.identity >= 4));
    }

    #[test]
    fn labels_are_dense() {
        let s = synthetic_splits(1, &SyntheticConfig::default(), 8).unwrap();
        let mut recs = s.train;
        recs.retain(|r| r.identity % 3 == 0);
        let (labels, ids) = class_labels(&recs);
        assert_eq!(ids[1], 3);
        assert_eq!(*labels.iter().max().unwrap(), ids.len() - 1);
    }

    #[test]
    fn visual_dimension_checked() {
        let mut c = ExperimentConfig::default();
        c.model.visual_dim = 64;
        assert!(load_splits(&c).is_ok());
        let dir = tempfile::tempdir().unwrap();
        let (f, cap) = (dir.path().join("f.jsonl"), dir.path().join("c.jsonl"));
        crate::visual::write_dataset(&f, &cap, &load_splits(&c).unwrap().train).unwrap();
        c.model.visual_dim = 32;
        c.data = DataSource::Files(super::super::config::FileData {
            features: f,
            captions: cap,
            eval_features: None,
            eval_captions: None,
        });
        assert!(load_splits(&c).is_err());
    }
}
