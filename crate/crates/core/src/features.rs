//! Vocabulary construction, many-hot encoding for the linear model and
//! padded index sequences for the embedding model.

use crate::sampling::Sample;
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const PAD: &str = "<pad>";
pub const OOV: &str = "<oov>";
pub const PAD_ID: u32 = 0;
pub const OOV_ID: u32 = 1;
const RESERVED: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("no training samples")]
    NoSamples,
    #[error("no token occurs at least {0} times")]
    EmptyVocabulary(usize),
    #[error("max_len must be positive")]
    ZeroLength,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("vocabulary file line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Token → index map. Index 0 is `<pad>`, 1 is `<oov>`, the rest follow
/// descending training frequency with lexicographic tie-breaks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    hash: String,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let mut v = Self { tokens, index, hash: String::new() };
        v.hash = hex::encode(Sha256::digest(v.to_tsv().as_bytes()));
        v
    }

    /// Dimension of the encodings, reserved entries included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= RESERVED
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied().filter(|&i| i as usize >= RESERVED)
    }

    pub fn id(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(OOV_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// SHA-256 of the serialized vocabulary; models record it to refuse a
    /// mismatched vocabulary.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(s, "{t}\t{i}");
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self, FeatureError> {
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let bad = |reason: &str| FeatureError::Parse { line: i + 1, reason: reason.into() };
            let (tok, idx) = line.split_once('\t').ok_or_else(|| bad("expected token<TAB>index"))?;
            let idx: usize = idx.parse().map_err(|_| bad("index is not an integer"))?;
            if idx != tokens.len() {
                return Err(bad("indices must be contiguous from 0"));
            }
            if tok.is_empty() {
                return Err(bad("empty token"));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() <= RESERVED || tokens[0] != PAD || tokens[1] != OOV {
            return Err(FeatureError::Parse { line: 1, reason: "missing reserved <pad>/<oov> entries".into() });
        }
        let v = Self::from_tokens(tokens);
        if v.index.len() != v.tokens.len() {
            return Err(FeatureError::Parse { line: 0, reason: "duplicate token".into() });
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        std::fs::write(path, self.to_tsv()).map_err(|source| FeatureError::Io { path: path.into(), source })
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let text = std::fs::read_to_string(path).map_err(|source| FeatureError::Io { path: path.into(), source })?;
        Self::from_tsv(&text)
    }
}

pub fn build_vocab(train: &[Sample], min_count: usize) -> Result<Vocabulary, FeatureError> {
    if train.is_empty() {
        return Err(FeatureError::NoSamples);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in train {
        for t in s.tokens.iter() {
            if t != PAD && t != OOV {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count.max(1)).collect();
    if kept.is_empty() {
        return Err(FeatureError::EmptyVocabulary(min_count));
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens = [PAD, OOV].into_iter().chain(kept.into_iter().map(|(t, _)| t)).map(String::from).collect();
    Ok(Vocabulary::from_tokens(tokens))
}

/// Binary presence vector; the implicit value at every index is 1.0.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SparseVector {
    pub dimension: usize,
    /// Strictly increasing.
    pub indices: Vec<u32>,
}

impl SparseVector {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.indices.iter().map(|&i| dense[i as usize]).sum()
    }
}

pub fn encode_manyhot(tokens: &[String], vocab: &Vocabulary) -> SparseVector {
    let mut indices: Vec<u32> = tokens.iter().map(|t| vocab.id(t)).collect();
    indices.sort_unstable();
    indices.dedup();
    SparseVector { dimension: vocab.len(), indices }
}

/// Vocabulary ids truncated to `max_len` and right-padded with `<pad>`.
pub fn encode_ids(tokens: &[String], vocab: &Vocabulary, max_len: usize) -> Result<Vec<u32>, FeatureError> {
    if max_len == 0 {
        return Err(FeatureError::ZeroLength);
    }
    let mut ids: Vec<u32> = tokens.iter().take(max_len).map(|t| vocab.id(t)).collect();
    ids.resize(max_len, PAD_ID);
    Ok(ids)
}

/// Inverse of `encode_ids` up to OOV collapse; padding is dropped.
pub fn decode_ids(ids: &[u32], vocab: &Vocabulary) -> Vec<String> {
    ids.iter()
        .filter(|&&i| i != PAD_ID)
        .map(|&i| vocab.token(i).unwrap_or(OOV).to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::TokenSeq;
    use crate::sampling::{Label, Span};
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn sample(tokens: &[&str]) -> Sample {
        Sample {
            user_id: "u".into(),
            span: Span::AllUser,
            date: NaiveDate::from_ymd_opt(2019, 1, 1).unwrap(),
            label: Label::Control,
            weight: 1.0,
            tokens: TokenSeq(tokens.iter().map(|s| s.to_string()).collect()),
        }
    }

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn sizes_and_hapax_removal() {
        let train = vec![sample(&["a", "b", "c"]), sample(&["d", "e", "a"]), sample(&["b", "a"])];
        let v1 = build_vocab(&train, 1).unwrap();
        assert_eq!(v1.len(), 5 + 2);
        let v2 = build_vocab(&train, 2).unwrap();
        assert_eq!(v2.len(), 2 + 2);
        assert_eq!(v2.token(2), Some("a"));
        assert_eq!(v2.token(3), Some("b"));
        assert!(v2.get("c").is_none());
        assert!(matches!(build_vocab(&train, 4), Err(FeatureError::EmptyVocabulary(4))));
        assert!(matches!(build_vocab(&[], 1), Err(FeatureError::NoSamples)));
    }

    #[test]
    fn manyhot_is_binary() {
        let v = build_vocab(&[sample(&["a", "b"])], 1).unwrap();
        let x = encode_manyhot(&strings(&["a", "b", "a"]), &v);
        assert_eq!(x.nnz(), 2);
        let oov = encode_manyhot(&strings(&["zz", "yy"]), &v);
        assert_eq!(oov.indices, vec![OOV_ID]);
    }

    #[test]
    fn ids_pad_and_truncate() {
        let v = build_vocab(&[sample(&["a", "b", "c", "d", "e", "f", "g"])], 1).unwrap();
        let ids = encode_ids(&strings(&["a", "b", "c"]), &v, 5).unwrap();
        assert_eq!(&ids[3..], &[PAD_ID, PAD_ID]);
        assert!(ids[..3].iter().all(|&i| i >= 2));
        let long = encode_ids(&strings(&["a", "b", "c", "d", "e", "f", "g"]), &v, 5).unwrap();
        assert_eq!(decode_ids(&long, &v), strings(&["a", "b", "c", "d", "e"]));
        assert!(encode_ids(&strings(&["a"]), &v, 0).is_err());
        assert_eq!(decode_ids(&encode_ids(&strings(&["a", "nope"]), &v, 4).unwrap(), &v), strings(&["a", OOV]));
    }

    #[test]
    fn tsv_round_trip_and_hash() {
        let v = build_vocab(&[sample(&["x", "y", "y"])], 1).unwrap();
        let back = Vocabulary::from_tsv(&v.to_tsv()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
        let other = build_vocab(&[sample(&["x", "y", "z"])], 1).unwrap();
        assert_ne!(other.hash(), v.hash());
        assert!(Vocabulary::from_tsv("a\t0\n").is_err());
        assert!(Vocabulary::from_tsv("<pad>\t0\n<oov>\t2\n").is_err());
    }

    #[test]
    fn encoding_validation_data_leaves_vocab_untouched() {
        let v = build_vocab(&[sample(&["a", "b"])], 1).unwrap();
        let before = v.clone();
        let _ = encode_manyhot(&strings(&["c", "d", "a"]), &v);
        let _ = encode_ids(&strings(&["c", "d", "a"]), &v, 8).unwrap();
        assert_eq!(v, before);
    }

    fn token_strategy() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec("[a-h]{1,2}", 0..30)
    }

    proptest! {
        #[test]
        fn vocabulary_order_matches_recount(docs in proptest::collection::vec(token_strategy(), 1..10), min_count in 1usize..4) {
            let train: Vec<_> = docs.iter().map(|d| sample(&d.iter().map(String::as_str).collect::<Vec<_>>())).collect();
            // independent recount: frequency table by nested loops
            let mut distinct: Vec<String> = docs.iter().flatten().cloned().collect::<BTreeSet<_>>().into_iter().collect();
            let freq = |t: &String| docs.iter().map(|d| d.iter().filter(|x| *x == t).count()).sum::<usize>();
            distinct.retain(|t| freq(t) >= min_count);
            let mut expected = distinct.clone();
            expected.sort_by(|a, b| freq(b).cmp(&freq(a)).then(a.cmp(b)));
            match build_vocab(&train, min_count) {
                Ok(v) => {
                    let got: Vec<String> = (2..v.len() as u32).map(|i| v.token(i).unwrap().to_string()).collect();
                    prop_assert_eq!(got, expected);
                }
                Err(_) => prop_assert!(expected.is_empty()),
            }
        }

        #[test]
        fn manyhot_matches_set_oracle(vocab_docs in proptest::collection::vec(token_strategy(), 1..5), query in token_strategy()) {
            let train: Vec<_> = vocab_docs.iter().map(|d| sample(&d.iter().map(String::as_str).collect::<Vec<_>>())).collect();
            let Ok(v) = build_vocab(&train, 1) else { return Ok(()) };
            let x = encode_manyhot(&query, &v);
            let mut oracle = BTreeSet::new();
            for t in &query {
                match (2..v.len() as u32).find(|&i| v.token(i) == Some(t.as_str())) {
                    Some(i) => { oracle.insert(i); }
                    None => { oracle.insert(OOV_ID); }
                }
            }
            prop_assert_eq!(x.indices, oracle.into_iter().collect::<Vec<_>>());
            prop_assert_eq!(x.dimension, v.len());
        }
    }
}
