//! Checkpoints: one JSON document holding every tensor, the configuration,
//! the vocabulary, the class → identity map, the step counter and the
//! training RNG position.
//!
//! Tensors are written as `{"shape": [...], "base64": "..."}` (little-endian
//! `f64`, exact and able to carry non-finite values from a diverged run).
//! `{"shape": [...], "values": [...]}` is accepted on load as well.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::model::{Branch, Model};
use crate::text::Vocabulary;

pub const FORMAT: &str = "hornet-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum TensorPayload {
    Base64 { shape: Vec<usize>, base64: String },
    Values { shape: Vec<usize>, values: Vec<f64> },
}

impl TensorPayload {
    pub fn encode(t: &Tensor) -> Self {
        let bytes: Vec<u8> = t.data().iter().flat_map(|x| x.to_le_bytes()).collect();
        TensorPayload::Base64 {
            shape: t.shape().to_vec(),
            base64: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<Tensor> {
        match self {
            TensorPayload::Values { shape, values } => Tensor::new(shape.clone(), values.clone()),
            TensorPayload::Base64 { shape, base64 } => {
                let bytes = STANDARD
                    .decode(base64)
                    .map_err(|e| Error::invalid(format!("bad base64 tensor payload: {e}")))?;
                if bytes.len() % 8 != 0 {
                    return Err(Error::invalid(format!(
                        "tensor payload of {} bytes is not a whole number of f64 values",
                        bytes.len()
                    )));
                }
                let data = bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect();
                Tensor::new(shape.clone(), data)
            }
        }
    }
}

/// Position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    /// Base64 of the 32-byte seed.
    pub seed: String,
    pub stream: u64,
    /// Decimal `u128`.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: STANDARD.encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bytes = STANDARD
            .decode(&self.seed)
            .map_err(|e| Error::invalid(format!("bad rng seed: {e}")))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::invalid("rng seed must be 32 bytes"))?;
        let word_pos: u128 = self
            .word_pos
            .parse()
            .map_err(|e| Error::invalid(format!("bad rng word position: {e}")))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ExperimentConfig,
    pub epoch: usize,
    pub step: u64,
    pub rng: RngState,
    pub vocab: Vocabulary,
    /// Identity label of every classifier row.
    pub identities: Vec<usize>,
    pub tensors: BTreeMap<String, TensorPayload>,
}

impl Checkpoint {
    /// `config.model` must describe `model`.
    pub fn capture(
        model: &Model,
        config: &ExperimentConfig,
        identities: &[usize],
        epoch: usize,
        step: u64,
        rng: &ChaCha8Rng,
    ) -> Self {
        let mut config = config.clone();
        config.model = model.config.clone();
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            config,
            epoch,
            step,
            rng: RngState::capture(rng),
            vocab: model.vocab.clone(),
            identities: identities.to_vec(),
            tensors: model
                .named_tensors()
                .into_iter()
                .map(|(n, t)| (n, TensorPayload::encode(t)))
                .collect(),
        }
    }

    /// Rebuilds the model, checking that every tensor is present with the
    /// shape the configuration implies.
    pub fn model(&self) -> Result<Model> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint format {} v{}",
                self.format, self.version
            )));
        }
        self.config.validate()?;
        // Refuse before allocating a skeleton far larger than the payload.
        let stored = self
            .tensors
            .values()
            .map(|p| match p {
                TensorPayload::Base64 { base64, .. } => base64.len() * 3 / 32 + 1,
                TensorPayload::Values { values, .. } => values.len(),
            })
            .fold(0usize, usize::saturating_add);
        let m = &self.config.model;
        let mut needed = self.identities.len().saturating_mul(m.fused_dim());
        if m.branch == Branch::Fused {
            needed = needed
                .saturating_add(self.vocab.len().saturating_mul(m.embed_dim))
                .saturating_add(
                    m.hidden
                        .saturating_mul(m.embed_dim.saturating_add(m.hidden)),
                );
        }
        if needed > stored {
            return Err(Error::invalid(format!(
                "configuration needs at least {needed} parameters, checkpoint stores about {stored}"
            )));
        }
        let mut skeleton = Model::init(
            self.config.model.clone(),
            self.vocab.clone(),
            self.identities.len(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )?;
        let names: Vec<String> = skeleton
            .named_tensors()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        if names.len() != self.tensors.len() {
            return Err(Error::invalid(format!(
                "checkpoint holds {} tensors, the configured model has {}",
                self.tensors.len(),
                names.len()
            )));
        }
        for (name, slot) in names.iter().zip(skeleton.tensors_mut()) {
            let payload = self
                .tensors
                .get(name)
                .ok_or_else(|| Error::invalid(format!("checkpoint lacks tensor {name}")))?;
            let t = payload.decode()?;
            if t.shape() != slot.shape() {
                return Err(Error::shape("checkpoint_load", slot.shape(), t.shape()));
            }
            *slot = t;
        }
        Ok(skeleton)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Atomic write (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        jsonl::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = jsonl::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn sample() -> (Model, ExperimentConfig) {
        let mut config = ExperimentConfig::default();
        config.model.embed_dim = 3;
        config.model.hidden = 4;
        config.model.reduced = 2;
        config.model.visual_dim = 5;
        let vocab = Vocabulary::build(&["a b c"], 1).unwrap();
        let model = Model::init(
            config.model.clone(),
            vocab,
            3,
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        (model, config)
    }

    #[test]
    fn payload_round_trip_is_exact() {
        let t = Tensor::vector(&[0.1, -1e-300, f64::MAX, f64::NAN]);
        let back = TensorPayload::encode(&t).decode().unwrap();
        assert_eq!(back.data()[..3], t.data()[..3]);
        assert!(back.data()[3].is_nan());
        let v = TensorPayload::Values {
            shape: vec![2],
            values: vec![1.0, 2.0],
        };
        assert_eq!(v.decode().unwrap(), Tensor::vector(&[1.0, 2.0]));
    }

    #[test]
    fn bad_payloads_rejected() {
        let short = TensorPayload::Base64 {
            shape: vec![1],
            base64: STANDARD.encode([0u8; 7]),
        };
        assert!(short.decode().is_err());
        let mismatch = TensorPayload::Values {
            shape: vec![3],
            values: vec![1.0],
        };
        assert!(mismatch.decode().is_err());
        let overflow = TensorPayload::Values {
            shape: vec![1 << 32, 1 << 32],
            values: vec![],
        };
        assert!(overflow.decode().is_err());
    }

    #[test]
    fn oversized_configuration_rejected_before_allocation() {
        let (model, config) = sample();
        let rng = ChaCha8Rng::seed_from_u64(0);
        let mut ck = Checkpoint::capture(&model, &config, &[0, 1, 2], 1, 1, &rng);
        ck.config.model.hidden = 1 << 40;
        let err = ck.model().unwrap_err().to_string();
        assert!(err.contains("at least"), "{err}");
    }

    #[test]
    fn rng_state_resumes_the_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        rng.set_stream(3);
        rng.next_u64();
        let state = RngState::capture(&rng);
        let mut resumed = state.restore().unwrap();
        assert_eq!(rng.next_u64(), resumed.next_u64());
    }

    #[test]
    fn model_round_trip() {
        let (model, config) = sample();
        let rng = ChaCha8Rng::seed_from_u64(0);
        let ck = Checkpoint::capture(&model, &config, &[10, 11, 12], 5, 35, &rng);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.model().unwrap(), model);
    }

    #[test]
    fn missing_or_misshapen_tensor_rejected() {
        let (model, config) = sample();
        let rng = ChaCha8Rng::seed_from_u64(0);
        let mut ck = Checkpoint::capture(&model, &config, &[0, 1, 2], 0, 0, &rng);
        ck.tensors.insert(
            "fusion.b_fc".into(),
            TensorPayload::encode(&Tensor::zeros(&[7])),
        );
        assert!(ck.model().is_err());
        ck.tensors.remove("fusion.b_fc");
        assert!(ck.model().is_err());
    }

    #[test]
    fn save_and_load() {
        let (model, config) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let ck = Checkpoint::capture(
            &model,
            &config,
            &[0, 1, 2],
            1,
            7,
            &ChaCha8Rng::seed_from_u64(2),
        );
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
