//! Caption tokenization, vocabulary construction and word embedding lookup.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::jsonl;

pub const PAD: usize = 0;
pub const UNK: usize = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Lowercases, splits on whitespace and strips leading/trailing punctuation
/// from every piece. Pieces that are pure punctuation vanish.
pub fn tokenize(caption: &str) -> Vec<String> {
    caption
        .split_whitespace()
        .filter_map(|raw| {
            if raw == UNK_TOKEN {
                return Some(UNK_TOKEN.to_string());
            }
            let t = raw.trim_matches(|c: char| c.is_ascii_punctuation());
            (!t.is_empty()).then(|| t.to_lowercase())
        })
        .collect()
}

/// Token ↔ id mapping. Ids are dense; `PAD = 0` and `UNK = 1` are reserved.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

/// Encoded caption. Never empty.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence(Vec<usize>);

impl TokenSequence {
    pub fn new(ids: Vec<usize>, vocab: &Vocabulary) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::invalid("token sequence must not be empty"));
        }
        if let Some(bad) = ids.iter().find(|&&id| id >= vocab.len()) {
            return Err(Error::invalid(format!(
                "token id {bad} outside vocabulary of size {}",
                vocab.len()
            )));
        }
        Ok(TokenSequence(ids))
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Vocabulary {
    fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut id_to_token = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        id_to_token.extend(tokens);
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (i, t) in id_to_token.iter().enumerate() {
            if token_to_id.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
        })
    }

    /// Tokens seen at least `min_freq` times, most frequent first, ties in
    /// lexicographic order.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_freq: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::invalid(
                "cannot build a vocabulary from an empty corpus",
            ));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for caption in corpus {
            for t in tokenize(caption.as_ref()) {
                if t != UNK_TOKEN {
                    *counts.entry(t).or_default() += 1;
                }
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_freq.max(1))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t))
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn encode(&self, caption: &str) -> TokenSequence {
        let mut ids: Vec<usize> = tokenize(caption)
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect();
        if ids.is_empty() {
            ids.push(UNK);
        }
        TokenSequence(ids)
    }

    pub fn decode(&self, seq: &TokenSequence) -> String {
        seq.ids()
            .iter()
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.id_to_token[2..].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Vocabulary::from_tokens(tokens).map_err(serde::de::Error::custom)
    }
}

/// Looks up one embedding row per token. The returned nodes are
/// differentiable with respect to `table`; only used rows receive gradient.
pub fn embed(graph: &mut Graph, table: NodeId, seq: &TokenSequence) -> Result<Vec<NodeId>> {
    seq.ids()
        .iter()
        .map(|&id| graph.gather_row(table, id))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_key: String,
    pub caption: String,
}

pub fn parse_captions(source: &str, text: &str) -> Result<Vec<CaptionRecord>> {
    jsonl::parse(source, text)
}

pub fn read_captions(path: &Path) -> Result<Vec<CaptionRecord>> {
    let text = jsonl::read_to_string(path)?;
    parse_captions(&path.display().to_string(), &text)
}

pub fn write_captions(path: &Path, records: &[CaptionRecord]) -> Result<()> {
    jsonl::write(path, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use proptest::prelude::*;

    #[test]
    fn frequency_then_lexicographic_order() {
        let v = Vocabulary::build(&["a b", "a"], 1).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a", "b"]);
        let v = Vocabulary::build(&["b c", "c b", "a"], 1).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "b", "c", "a"]);
    }

    #[test]
    fn min_freq_filters() {
        let v = Vocabulary::build(&["a b", "a"], 2).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a"]);
        assert_eq!(v.encode("b").ids(), &[UNK]);
    }

    #[test]
    fn empty_corpus_rejected() {
        let empty: [&str; 0] = [];
        assert!(Vocabulary::build(&empty, 1).is_err());
    }

    #[test]
    fn empty_caption_is_unk() {
        let v = Vocabulary::build(&["", "a"], 1).unwrap();
        assert_eq!(v.encode("").ids(), &[UNK]);
        assert_eq!(v.encode("  ... ").ids(), &[UNK]);
    }

    #[test]
    fn punctuation_and_case() {
        let v = Vocabulary::build(&["red shirt"], 1).unwrap();
        let red = v.id("red").unwrap();
        let shirt = v.id("shirt").unwrap();
        assert_eq!(v.encode("A red shirt.").ids(), &[UNK, red, shirt]);
        assert_eq!(v.encode("RED, Shirt!").ids(), &[red, shirt]);
    }

    #[test]
    fn serde_roundtrip() {
        let v = Vocabulary::build(&["x y y z"], 1).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"["y","x","z"]"#);
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert!(serde_json::from_str::<Vocabulary>(r#"["a","a"]"#).is_err());
    }

    #[test]
    fn identity_embedding_lookup() {
        let mut g = Graph::new();
        let table = g.param(Tensor::identity(4));
        let v = Vocabulary::build(&["p q"], 1).unwrap();
        let seq = TokenSequence::new(vec![2], &v).unwrap();
        let e = embed(&mut g, table, &seq).unwrap();
        assert_eq!(g.value(e[0]).data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn repeated_tokens_share_embedding_and_sparse_gradient() {
        let mut g = Graph::new();
        let table = g.param(Tensor::new(vec![5, 2], (0..10).map(f64::from).collect()).unwrap());
        let v = Vocabulary::build(&["p q r"], 1).unwrap();
        let seq = TokenSequence::new(vec![3, 2, 3], &v).unwrap();
        let e = embed(&mut g, table, &seq).unwrap();
        assert_eq!(g.value(e[0]), g.value(e[2]));
        let all = g.concat(&e).unwrap();
        let s = g.sum(all);
        g.backward(s).unwrap();
        assert_eq!(
            g.grad(table).data(),
            &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 0.0, 0.0]
        );
    }

    #[test]
    fn out_of_range_id_rejected() {
        let mut g = Graph::new();
        let table = g.param(Tensor::zeros(&[3, 2]));
        let v = Vocabulary::build(&["p q r s"], 1).unwrap();
        let seq = TokenSequence::new(vec![4], &v).unwrap();
        assert!(embed(&mut g, table, &seq).is_err());
        assert!(TokenSequence::new(vec![9], &v).is_err());
    }

    #[test]
    fn captions_file_reports_line() {
        let text = "{\"image_key\":\"a\",\"caption\":\"x\"}\n\n{\"image_key\":1}\n";
        let err = parse_captions("caps.jsonl", text).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    proptest! {
        #[test]
        fn encode_is_idempotent(corpus in prop::collection::vec("[a-e ,.!]{0,12}", 1..6),
                                caption in "[a-gA-G <>unk,.!]{0,20}") {
            let v = Vocabulary::build(&corpus, 1).unwrap();
            let once = v.encode(&caption);
            prop_assert_eq!(v.encode(&v.decode(&once)), once);
        }

        #[test]
        fn build_is_deterministic(corpus in prop::collection::vec("[a-e ]{0,12}", 1..6)) {
            prop_assert_eq!(Vocabulary::build(&corpus, 1).unwrap(), Vocabulary::build(&corpus, 1).unwrap());
        }
    }
}
