//! JSON model container.
//!
//! ```text
//! {
//!   "format": "mhdyn-model", "version": 1, "family": "svm" | "avepl",
//!   "vocab_hash": "<sha256 of the vocabulary TSV>", "vocab_size": n,
//!   "config": { ...training config... },
//!   "layout": { "vocab", "d", "h" }            (avepl only)
//!   "arrays": [ { "name": "...", "values": [...] }, ... ],
//!   "checksum": "<sha256 over the little-endian bytes of every array>"
//! }
//! ```
//!
//! Linear models store `weights` and `bias`; embedding models store one array
//! per tensor in layout order. Floats are written in shortest round-trip form,
//! so a reload reproduces every parameter bit for bit.

use super::avepl::{Layout, TENSOR_NAMES};
use super::{EmbeddingPoolModel, Family, LinearModel, Model, ModelError, TrainConfig};
use crate::features::Vocabulary;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

const FORMAT: &str = "mhdyn-model";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Array {
    name: String,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Container {
    format: String,
    version: u32,
    family: Family,
    vocab_hash: String,
    vocab_size: usize,
    config: TrainConfig,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    layout: Option<Layout>,
    arrays: Vec<Array>,
    checksum: String,
}

fn checksum(arrays: &[Array]) -> String {
    let mut h = Sha256::new();
    for a in arrays {
        h.update(a.name.as_bytes());
        for v in &a.values {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn to_container(model: &Model) -> Container {
    let (arrays, layout, vocab_size) = match model {
        Model::Svm(m) => (
            vec![
                Array { name: "weights".into(), values: m.weights.clone() },
                Array { name: "bias".into(), values: vec![m.bias] },
            ],
            None,
            m.weights.len(),
        ),
        Model::Avepl(m) => (
            m.layout
                .tensors()
                .into_iter()
                .map(|(name, r)| Array { name: name.to_string(), values: m.params[r].to_vec() })
                .collect(),
            Some(m.layout),
            m.layout.vocab,
        ),
    };
    Container {
        format: FORMAT.into(),
        version: VERSION,
        family: model.family(),
        vocab_hash: model.vocab_hash().to_string(),
        vocab_size,
        config: model.config().clone(),
        layout,
        checksum: checksum(&arrays),
        arrays,
    }
}

pub fn save_model(model: &Model, path: &Path) -> Result<(), ModelError> {
    let json = serde_json::to_string_pretty(&to_container(model)).expect("model container serializes");
    std::fs::write(path, json + "\n").map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
}

pub fn load_model(path: &Path) -> Result<Model, ModelError> {
    let corrupt = |reason: String| ModelError::Corrupt { path: path.to_path_buf(), reason };
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
    let c: Container = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    if c.format != FORMAT || c.version != VERSION {
        return Err(corrupt(format!("unsupported format {} v{}", c.format, c.version)));
    }
    if checksum(&c.arrays) != c.checksum {
        return Err(corrupt("parameter checksum mismatch".into()));
    }
    if c.arrays.iter().flat_map(|a| &a.values).any(|v| !v.is_finite()) {
        return Err(corrupt("non-finite parameter".into()));
    }
    let names: Vec<&str> = c.arrays.iter().map(|a| a.name.as_str()).collect();
    match c.family {
        Family::Svm => {
            if names != ["weights", "bias"] || c.arrays[0].values.len() != c.vocab_size || c.arrays[1].values.len() != 1 {
                return Err(corrupt("linear model arrays do not match the declared shape".into()));
            }
            let mut arrays = c.arrays.into_iter();
            let weights = arrays.next().expect("checked").values;
            let bias = arrays.next().expect("checked").values[0];
            Ok(Model::Svm(LinearModel { weights, bias, vocab_hash: c.vocab_hash, config: c.config }))
        }
        Family::Avepl => {
            let layout = c.layout.ok_or_else(|| corrupt("missing layout".into()))?;
            let shapes_match = layout.vocab == c.vocab_size
                && names == TENSOR_NAMES
                && layout.tensors().iter().zip(&c.arrays).all(|((_, r), a)| r.len() == a.values.len());
            if !shapes_match {
                return Err(corrupt("embedding model arrays do not match the declared layout".into()));
            }
            let params = c.arrays.into_iter().flat_map(|a| a.values).collect();
            Ok(Model::Avepl(EmbeddingPoolModel { layout, params, vocab_hash: c.vocab_hash, config: c.config }))
        }
    }
}

/// Loads a model and refuses it unless it was trained against `vocab`.
pub fn load_model_for(path: &Path, vocab: &Vocabulary) -> Result<Model, ModelError> {
    let model = load_model(path)?;
    model.check_vocab(vocab)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{SparseVector, PAD_ID};
    use crate::models::avepl::init_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_svm(rng: &mut ChaCha8Rng) -> LinearModel {
        let dim = rng.gen_range(3..40);
        LinearModel {
            weights: (0..dim).map(|_| rng.gen_range(-3.0..3.0) * 10f64.powi(rng.gen_range(-12..4))).collect(),
            bias: rng.gen_range(-1.0..1.0) / 3.0,
            vocab_hash: format!("{:064x}", rng.gen::<u128>()),
            config: TrainConfig { seed: rng.gen(), ..Default::default() },
        }
    }

    fn random_avepl(rng: &mut ChaCha8Rng) -> EmbeddingPoolModel {
        let layout = Layout::new(rng.gen_range(3..25), rng.gen_range(1..6), rng.gen_range(1..6));
        EmbeddingPoolModel {
            params: init_params(&layout, rng),
            layout,
            vocab_hash: format!("{:064x}", rng.gen::<u128>()),
            config: TrainConfig { embedding_dim: layout.d, hidden_dim: layout.h, ..Default::default() },
        }
    }

    #[test]
    fn round_trip_is_exact_on_100_fixtures() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for k in 0..100 {
            let model = if k % 2 == 0 { Model::Svm(random_svm(&mut rng)) } else { Model::Avepl(random_avepl(&mut rng)) };
            let path = dir.path().join(format!("m{k}.json"));
            save_model(&model, &path).unwrap();
            let back = load_model(&path).unwrap();
            assert_eq!(back, model);
            for _ in 0..5 {
                match (&model, &back) {
                    (Model::Svm(a), Model::Svm(b)) => {
                        let mut idx: Vec<u32> = (0..a.dimension() as u32).filter(|_| rng.gen_bool(0.4)).collect();
                        idx.dedup();
                        let x = SparseVector { dimension: a.dimension(), indices: idx };
                        assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
                    }
                    (Model::Avepl(a), Model::Avepl(b)) => {
                        let ids: Vec<u32> = (0..6).map(|_| rng.gen_range(PAD_ID..a.layout.vocab as u32)).collect();
                        assert_eq!(a.predict(&ids).unwrap(), b.predict(&ids).unwrap());
                    }
                    _ => unreachable!("family changed on reload"),
                }
            }
        }
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let path = dir.path().join("m.json");
        save_model(&Model::Svm(random_svm(&mut rng)), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();

        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_model(&path), Err(ModelError::Corrupt { .. })));

        let mut c: serde_json::Value = serde_json::from_str(&text).unwrap();
        c["arrays"][1]["values"][0] = serde_json::json!(123.0);
        std::fs::write(&path, c.to_string()).unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");

        let mut c: serde_json::Value = serde_json::from_str(&text).unwrap();
        c["version"] = serde_json::json!(99);
        std::fs::write(&path, c.to_string()).unwrap();
        assert!(matches!(load_model(&path), Err(ModelError::Corrupt { .. })));

        assert!(matches!(load_model(&dir.path().join("absent.json")), Err(ModelError::Io { .. })));
    }

    #[test]
    fn foreign_vocabulary_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocabulary::from_tsv("<pad>\t0\n<oov>\t1\nhello\t2\n").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let path = dir.path().join("m.json");
        save_model(&Model::Svm(random_svm(&mut rng)), &path).unwrap();
        assert!(matches!(load_model_for(&path, &vocab), Err(ModelError::VocabMismatch { .. })));

        let mut model = random_svm(&mut rng);
        model.weights = vec![0.0; vocab.len()];
        model.vocab_hash = vocab.hash().to_string();
        save_model(&Model::Svm(model), &path).unwrap();
        assert!(load_model_for(&path, &vocab).is_ok());
    }
}
