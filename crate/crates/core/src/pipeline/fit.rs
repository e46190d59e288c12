//! Feature extraction over manifests and the two training stages.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::detect::song_mels;
use crate::audio::load_wav;
use crate::corpus::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::features::{read_mel_cache, write_mel_cache, MelExtractor, MelSpectrogram};
use crate::nn::train::{train_classifier, train_embedder, EmbedSample, LabeledEmbedding, TrainHistory};
use crate::nn::{Classifier, ClassifierConfig, Embedder, EmbedderConfig};

/// Gated segment mels of both halves of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures {
    pub pair_id: String,
    pub negative: Vec<MelSpectrogram>,
    pub positive: Vec<MelSpectrogram>,
}

fn cache_path(dir: &Path, pair_id: &str, role: &str, k: usize) -> PathBuf {
    dir.join(format!("{pair_id}.{role}.{k:04}.mel"))
}

fn read_cached(dir: &Path, pair_id: &str, role: &str) -> Result<Option<Vec<MelSpectrogram>>> {
    let mut out = Vec::new();
    while cache_path(dir, pair_id, role, out.len()).exists() {
        out.push(read_mel_cache(cache_path(dir, pair_id, role, out.len()))?);
    }
    Ok((!out.is_empty()).then_some(out))
}

fn file_mels(path: &Path, extractor: &MelExtractor, gate_ratio: f64) -> Result<Vec<MelSpectrogram>> {
    Ok(song_mels(&load_wav(path)?, extractor, gate_ratio)?.into_iter().map(|(_, m)| m).collect())
}

/// Mels of every pair in `split` (all pairs when `None`), in manifest
/// order. With a cache directory, existing cache files are reused and
/// missing ones written.
pub fn pair_features(
    manifest: &DatasetManifest,
    split: Option<Split>,
    extractor: &MelExtractor,
    gate_ratio: f64,
    cache: Option<&Path>,
) -> Result<Vec<PairFeatures>> {
    if let Some(dir) = cache {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let entries: Vec<_> = manifest.entries.iter().filter(|e| split.is_none_or(|s| e.split == s)).collect();
    entries
        .par_iter()
        .map(|e| {
            let load = |role: &str, path: PathBuf| -> Result<Vec<MelSpectrogram>> {
                if let Some(dir) = cache {
                    if let Some(m) = read_cached(dir, &e.pair_id, role)? {
                        return Ok(m);
                    }
                    let mels = file_mels(&path, extractor, gate_ratio)?;
                    for (k, m) in mels.iter().enumerate() {
                        write_mel_cache(cache_path(dir, &e.pair_id, role, k), m, extractor.config())?;
                    }
                    return Ok(mels);
                }
                file_mels(&path, extractor, gate_ratio)
            };
            Ok(PairFeatures {
                pair_id: e.pair_id.clone(),
                negative: load("neg", manifest.negative(e))?,
                positive: load("pos", manifest.positive(e))?,
            })
        })
        .collect()
}

/// Label 0 for negatives, 1 for positives; both halves of a pair share a
/// group so batches always hold matched pairs.
pub fn embed_samples(features: &[PairFeatures]) -> Vec<EmbedSample<'_>> {
    features
        .iter()
        .enumerate()
        .flat_map(|(group, p)| {
            let neg = p.negative.iter().map(move |mel| EmbedSample { mel, label: 0, group });
            let pos = p.positive.iter().map(move |mel| EmbedSample { mel, label: 1, group });
            neg.chain(pos)
        })
        .collect()
}

pub fn labeled_embeddings(embedder: &Embedder<f32>, features: &[PairFeatures]) -> Result<Vec<LabeledEmbedding>> {
    let samples = embed_samples(features);
    let mels: Vec<&MelSpectrogram> = samples.iter().map(|s| s.mel).collect();
    let emb = embedder.embed_all(&mels)?;
    Ok(emb
        .into_iter()
        .zip(&samples)
        .map(|(values, s)| LabeledEmbedding {
            values,
            label: s.label == 1,
        })
        .collect())
}

pub fn fit_embedder(
    train: &[PairFeatures],
    val: &[PairFeatures],
    config: &EmbedderConfig,
) -> Result<(Embedder<f32>, TrainHistory)> {
    train_embedder(&embed_samples(train), &embed_samples(val), config)
}

/// Trains the classifier on embeddings from a frozen embedder.
pub fn fit_classifier(
    embedder: &Embedder<f32>,
    train: &[PairFeatures],
    val: &[PairFeatures],
    config: &ClassifierConfig,
) -> Result<(Classifier<f32>, TrainHistory)> {
    let train = labeled_embeddings(embedder, train)?;
    let val = labeled_embeddings(embedder, val)?;
    train_classifier(&train, &val, config)
}
