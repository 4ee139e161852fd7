//! Visual feature sources: JSON Lines feature files, or a synthetic world of
//! attribute-defined identities whose captions pass through a noisy channel.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::text::CaptionRecord;

pub const DISTRACTOR_VOCAB: usize = 64;

/// One image: identity, camera, visual feature and caption text.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationRecord {
    pub image_key: String,
    pub identity: usize,
    pub camera: usize,
    pub features: Vec<f64>,
    pub caption: String,
}

/// One line of a feature file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRecord {
    pub image_key: String,
    pub id: usize,
    pub camera: usize,
    pub features: Vec<f64>,
}

/// Parses a feature file. All records must share one non-zero, finite
/// feature dimension; the first offending line is reported.
pub fn parse_features(source: &str, text: &str) -> Result<Vec<FeatureRecord>> {
    let records: Vec<FeatureRecord> = jsonl::parse(source, text)?;
    let line_of = |idx: usize| {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .nth(idx)
            .map_or(0, |(i, _)| i + 1)
    };
    let mut dim = None;
    for (i, r) in records.iter().enumerate() {
        let fail = |msg: String| Error::Parse {
            path: source.to_string(),
            line: line_of(i),
            msg,
        };
        if r.features.is_empty() {
            return Err(fail("empty feature vector".into()));
        }
        if r.features.iter().any(|x| !x.is_finite()) {
            return Err(fail("non-finite feature value".into()));
        }
        match dim {
            None => dim = Some(r.features.len()),
            Some(d) if d != r.features.len() => {
                return Err(fail(format!(
                    "feature dimension {} differs from {d} in earlier records",
                    r.features.len()
                )))
            }
            Some(_) => {}
        }
    }
    Ok(records)
}

pub fn load_features(path: &Path) -> Result<Vec<FeatureRecord>> {
    let text = jsonl::read_to_string(path)?;
    parse_features(&path.display().to_string(), &text)
}

pub fn write_features(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    jsonl::write(path, records)
}

/// Joins feature and caption records on `image_key`, in feature-file order.
pub fn join_records(
    features: Vec<FeatureRecord>,
    captions: &[CaptionRecord],
) -> Result<Vec<ObservationRecord>> {
    let mut by_key: HashMap<&str, &str> = HashMap::with_capacity(captions.len());
    for c in captions {
        if by_key.insert(&c.image_key, &c.caption).is_some() {
            return Err(Error::invalid(format!(
                "duplicate caption for image {:?}",
                c.image_key
            )));
        }
    }
    features
        .into_iter()
        .map(|f| {
            let caption = by_key
                .get(f.image_key.as_str())
                .ok_or_else(|| Error::invalid(format!("no caption for image {:?}", f.image_key)))?;
            Ok(ObservationRecord {
                caption: caption.to_string(),
                image_key: f.image_key,
                identity: f.id,
                camera: f.camera,
                features: f.features,
            })
        })
        .collect()
}

/// Splits observations back into the two file formats.
pub fn split_records(records: &[ObservationRecord]) -> (Vec<FeatureRecord>, Vec<CaptionRecord>) {
    records
        .iter()
        .map(|r| {
            (
                FeatureRecord {
                    image_key: r.image_key.clone(),
                    id: r.identity,
                    camera: r.camera,
                    features: r.features.clone(),
                },
                CaptionRecord {
                    image_key: r.image_key.clone(),
                    caption: r.caption.clone(),
                },
            )
        })
        .unzip()
}

pub fn load_dataset(features: &Path, captions: &Path) -> Result<Vec<ObservationRecord>> {
    join_records(
        load_features(features)?,
        &crate::text::read_captions(captions)?,
    )
}

pub fn write_dataset(
    features: &Path,
    captions: &Path,
    records: &[ObservationRecord],
) -> Result<()> {
    let (f, c) = split_records(records);
    write_features(features, &f)?;
    crate::text::write_captions(captions, &c)
}

/// Noise applied when rendering an identity into an observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseChannel {
    pub sigma_visual: f64,
    /// Probability that an attribute token names the wrong value.
    pub p_token_err: f64,
    /// Each caption carries `k` distractors with probability `(1 − p)·pᵏ`.
    pub p_distractor: f64,
}

impl Default for NoiseChannel {
    fn default() -> Self {
        NoiseChannel {
            sigma_visual: 0.3,
            p_token_err: 0.15,
            p_distractor: 0.3,
        }
    }
}

impl NoiseChannel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_visual >= 0.0 && self.sigma_visual.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma_visual must be >= 0, got {}",
                self.sigma_visual
            )));
        }
        if !(0.0..=1.0).contains(&self.p_token_err) {
            return Err(Error::invalid(format!(
                "p_token_err must lie in [0, 1], got {}",
                self.p_token_err
            )));
        }
        // p = 1 would make the distractor count infinite.
        if !(0.0..1.0).contains(&self.p_distractor) {
            return Err(Error::invalid(format!(
                "p_distractor must lie in [0, 1), got {}",
                self.p_distractor
            )));
        }
        Ok(())
    }
}

/// How a caption token relates to the synthetic world.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenClass {
    Attribute,
    Distractor,
    Other,
}

/// Attribute `m` with value `v` is spelled `a{m}y` / `a{m}n`.
pub fn attribute_token(attribute: usize, value: bool) -> String {
    format!("a{attribute}{}", if value { 'y' } else { 'n' })
}

pub fn distractor_token(index: usize) -> String {
    format!("dx{index}")
}

/// Classifies a (tokenized) caption word by the synthetic naming scheme.
pub fn classify_token(token: &str) -> TokenClass {
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if let Some(rest) = token.strip_prefix("dx") {
        if digits(rest) {
            return TokenClass::Distractor;
        }
    }
    if let Some(rest) = token.strip_prefix('a') {
        if let Some(num) = rest.strip_suffix(['y', 'n']) {
            if digits(num) {
                return TokenClass::Attribute;
            }
        }
    }
    TokenClass::Other
}

/// Identities defined by distinct binary attribute vectors, rendered to
/// features through a fixed random projection.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityBank {
    attributes: Vec<Vec<bool>>,
    /// `[dim F, M]`
    w_vis: Tensor,
    pub channel: NoiseChannel,
}

impl IdentityBank {
    /// Deterministic in `seed`. Requires `2^M ≥ num_identities`.
    pub fn synthesize(
        num_identities: usize,
        num_attributes: usize,
        visual_dim: usize,
        seed: u64,
        channel: NoiseChannel,
    ) -> Result<Self> {
        channel.validate()?;
        if num_identities == 0 || num_attributes == 0 || visual_dim == 0 {
            return Err(Error::invalid("identity bank sizes must be positive"));
        }
        let capacity_ok = num_attributes >= usize::BITS as usize - 1
            || (1usize << num_attributes) >= num_identities;
        if !capacity_ok {
            return Err(Error::invalid(format!(
                "{num_attributes} binary attributes cannot distinguish {num_identities} identities"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = HashSet::with_capacity(num_identities);
        let mut attributes = Vec::with_capacity(num_identities);
        while attributes.len() < num_identities {
            let a: Vec<bool> = (0..num_attributes).map(|_| rng.random_bool(0.5)).collect();
            if seen.insert(a.clone()) {
                attributes.push(a);
            }
        }
        let w_vis = Tensor::from_fn(&[visual_dim, num_attributes], || {
            rng.random_range(-1.0..=1.0)
        });
        Ok(IdentityBank {
            attributes,
            w_vis,
            channel,
        })
    }

    pub fn num_identities(&self) -> usize {
        self.attributes.len()
    }

    pub fn num_attributes(&self) -> usize {
        self.w_vis.shape()[1]
    }

    pub fn visual_dim(&self) -> usize {
        self.w_vis.shape()[0]
    }

    pub fn attributes(&self, identity: usize) -> &[bool] {
        &self.attributes[identity]
    }

    pub fn projection(&self) -> &Tensor {
        &self.w_vis
    }

    /// `W_vis · a` for an identity.
    pub fn clean_features(&self, identity: usize) -> Vec<f64> {
        let a = &self.attributes[identity];
        (0..self.visual_dim())
            .map(|r| {
                self.w_vis
                    .row(r)
                    .iter()
                    .zip(a)
                    .filter(|(_, &on)| on)
                    .map(|(w, _)| w)
                    .sum()
            })
            .collect()
    }

    pub fn clean_caption(&self, identity: usize) -> Vec<String> {
        self.attributes[identity]
            .iter()
            .enumerate()
            .map(|(m, &v)| attribute_token(m, v))
            .collect()
    }

    /// Renders one noisy observation of `identity` seen by `camera`.
    pub fn sample_observation<R: Rng + ?Sized>(
        &self,
        identity: usize,
        camera: usize,
        rng: &mut R,
    ) -> Result<ObservationRecord> {
        if identity >= self.num_identities() {
            return Err(Error::invalid(format!(
                "identity {identity} outside bank of {}",
                self.num_identities()
            )));
        }
        let ch = self.channel;
        let mut features = self.clean_features(identity);
        if ch.sigma_visual > 0.0 {
            let normal =
                Normal::new(0.0, ch.sigma_visual).map_err(|e| Error::invalid(e.to_string()))?;
            features.iter_mut().for_each(|x| *x += normal.sample(rng));
        }

        let mut tokens: Vec<String> = self.attributes[identity]
            .iter()
            .enumerate()
            .map(|(m, &v)| {
                let flipped = ch.p_token_err > 0.0 && rng.random_bool(ch.p_token_err);
                attribute_token(m, v != flipped)
            })
            .collect();
        let pool: Vec<usize> = (0..DISTRACTOR_VOCAB).collect();
        while ch.p_distractor > 0.0 && rng.random_bool(ch.p_distractor) {
            let at = rng.random_range(0..=tokens.len());
            let which = *pool.choose(rng).expect("non-empty distractor pool");
            tokens.insert(at, distractor_token(which));
        }

        Ok(ObservationRecord {
            image_key: format!("id{identity}_c{camera}"),
            identity,
            camera,
            features,
            caption: tokens.join(" "),
        })
    }

    /// `per_identity` observations of every identity in `identities`, with
    /// cameras assigned round-robin. Records are grouped by identity.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        identities: impl IntoIterator<Item = usize>,
        per_identity: usize,
        cameras: usize,
        rng: &mut R,
    ) -> Result<Vec<ObservationRecord>> {
        if cameras == 0 {
            return Err(Error::invalid("at least one camera is required"));
        }
        let mut out = Vec::new();
        for id in identities {
            for k in 0..per_identity {
                let camera = k % cameras;
                let mut r = self.sample_observation(id, camera, rng)?;
                r.image_key = format!("id{id:04}_c{camera}_{k:03}");
                out.push(r);
            }
        }
        Ok(out)
    }
}
