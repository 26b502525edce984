//! Named training recipes for the toy models, with an optional on-disk cache
//! of trained checkpoints keyed by a fingerprint of the full recipe.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::attention::ToyAttentionConfig;
use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::conv::ToyConvConfig;
use super::corpus::{sample_corpus, CorpusSpec};
use super::toy::{ModelSpec, ToyModel};
use super::train::{train_masked_lm, TrainConfig, TrainError, TrainOutcome};
use crate::scoring::ScoreError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub name: String,
    pub model: ModelSpec,
    pub corpus: CorpusSpec,
    pub corpus_size: usize,
    pub train: TrainConfig,
}

impl Fixture {
    /// Small bidirectional attention model trained on sequences that each
    /// carry one long duplicated segment at an arbitrary offset. Learns to
    /// retrieve from the other copy.
    pub fn attention_icl() -> Self {
        Self {
            name: "attention-icl".into(),
            model: ModelSpec::Attention(ToyAttentionConfig {
                width: 32,
                heads: 4,
                ff_width: 64,
                depth: 2,
                ..ToyAttentionConfig::default()
            }),
            corpus: CorpusSpec {
                dup_fraction: 1.0,
                min_len: 32,
                max_len: 96,
                min_segment: 12,
                max_segment: 48,
                profile_sharpness: 0.0,
                ..CorpusSpec::default()
            },
            corpus_size: 2000,
            train: TrainConfig { steps: 10_000, batch_size: 16, ..TrainConfig::default() },
        }
    }

    /// Four-layer, kernel-5 convolutional model (receptive field 17) trained
    /// on short sequences dominated by nearby repeats. Copying is only
    /// possible when the partner lies inside the receptive field.
    pub fn conv_receptive_field() -> Self {
        Self {
            name: "conv-rf17".into(),
            model: ModelSpec::Conv(ToyConvConfig { channels: 64, ..ToyConvConfig::default() }),
            corpus: CorpusSpec {
                dup_fraction: 0.9,
                min_len: 8,
                max_len: 16,
                min_segment: 4,
                max_segment: 8,
                max_gap: Some(8),
                profile_sharpness: 0.0,
                ..CorpusSpec::default()
            },
            corpus_size: 20_000,
            train: TrainConfig { steps: 3000, batch_size: 32, ..TrainConfig::default() },
        }
    }

    pub const NAMES: [&'static str; 2] = ["attention-icl", "conv-rf17"];

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "attention-icl" => Some(Self::attention_icl()),
            "conv-rf17" => Some(Self::conv_receptive_field()),
            _ => None,
        }
    }

    /// 64-bit FNV-1a over the canonical JSON of the recipe, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut recipe = self.clone();
        // where checkpoints go does not change the trained model
        recipe.train.checkpoint = None;
        let bytes = serde_json::to_vec(&recipe).expect("fixture serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    pub fn cache_path(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}-{}.ckpt", self.name, self.fingerprint()))
    }

    pub fn train_fresh(&self) -> Result<TrainOutcome, TrainError> {
        let corpus = sample_corpus(&self.corpus, self.corpus_size).map_err(ScoreError::from)?;
        train_masked_lm(self.model.build()?, &corpus, &self.train, |_| {})
    }

    /// Returns the trained model, reusing a cached checkpoint in `cache_dir`
    /// when one with a matching fingerprint exists.
    pub fn trained(&self, cache_dir: Option<&Path>) -> Result<ToyModel, TrainError> {
        let Some(dir) = cache_dir else {
            return Ok(self.train_fresh()?.model);
        };
        let path = self.cache_path(dir);
        if let Ok((model, _)) = load_checkpoint(&path) {
            if model.spec() == self.model {
                return Ok(model);
            }
        }
        let started = std::time::Instant::now();
        let model = self.train_fresh()?.model;
        let train_seconds = started.elapsed().as_secs_f64();
        std::fs::create_dir_all(dir).map_err(|e| ScoreError::Model(format!("creating {}: {e}", dir.display())))?;
        let meta = serde_json::json!({
            "fixture": self.name,
            "fingerprint": self.fingerprint(),
            "train_seconds": train_seconds,
        });
        save_checkpoint(&path, &model, &meta)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Network;

    #[test]
    fn fingerprint_tracks_the_recipe() {
        let a = Fixture::attention_icl();
        assert_eq!(a.fingerprint(), Fixture::attention_icl().fingerprint());
        let mut b = a.clone();
        b.train.seed = 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
        b = a.clone();
        b.train.checkpoint = Some("/tmp/x".into());
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn conv_fixture_has_receptive_field_17() {
        let ModelSpec::Conv(c) = Fixture::conv_receptive_field().model else { panic!() };
        assert_eq!(c.receptive_field(), 17);
    }

    #[test]
    fn cache_reuses_a_trained_model() {
        let mut f = Fixture::conv_receptive_field();
        f.name = "tiny".into();
        f.model = ModelSpec::Conv(ToyConvConfig { channels: 4, layers: 1, ..ToyConvConfig::default() });
        f.corpus_size = 20;
        f.train.steps = 3;
        f.train.batch_size = 2;
        let dir = tempfile::tempdir().unwrap();
        let a = f.trained(Some(dir.path())).unwrap();
        assert!(f.cache_path(dir.path()).exists());
        let b = f.trained(Some(dir.path())).unwrap();
        assert_eq!(a.params(), b.params());
        let (_, meta) = load_checkpoint(&f.cache_path(dir.path())).unwrap();
        assert!(meta["train_seconds"].as_f64().unwrap() >= 0.0);
    }
}
