//! Training loops for the embedder (semi-hard triplets) and the classifier
//! (binary cross-entropy on frozen embeddings).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::classifier::{bce_loss, Classifier, ClassifierConfig};
use super::embedder::{EmbedCache, Embedder, EmbedderConfig};
use super::optim::Adam;
use super::tensor::{add_grads, Parameterized};
use super::triplet::{batch_all_loss, mine_semi_hard, triplet_batch_loss};
use crate::error::{Error, Result};
use crate::features::MelSpectrogram;

/// One training input for the embedder. Items sharing a `group` (for
/// example the two halves of a negative/positive pair) are batched together.
#[derive(Debug, Clone, Copy)]
pub struct EmbedSample<'a> {
    pub mel: &'a MelSpectrogram,
    pub label: usize,
    pub group: usize,
}

#[derive(Debug, Clone)]
pub struct LabeledEmbedding {
    pub values: Vec<f32>,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Triplets mined (embedder) or validation accuracy in percent (classifier).
    pub metric: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::from("epoch,train_loss,val_loss,metric\n");
        for r in &self.records {
            let val = r.val_loss.map(|v| format!("{v:.6}")).unwrap_or_default();
            text.push_str(&format!("{},{:.6},{},{:.4}\n", r.epoch, r.train_loss, val, r.metric));
        }
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Tracks the best validation loss and a snapshot of the matching model.
struct EarlyStop<M> {
    best: Option<(f64, usize, M)>,
    bad_checks: usize,
    patience: usize,
}

impl<M: Clone> EarlyStop<M> {
    fn new(patience: usize) -> Self {
        Self {
            best: None,
            bad_checks: 0,
            patience,
        }
    }

    /// Returns `true` when training should stop.
    fn observe(&mut self, loss: f64, epoch: usize, model: &M) -> bool {
        match &self.best {
            Some((best, _, _)) if !(loss < *best) => {
                self.bad_checks += 1;
            }
            _ => {
                self.best = Some((loss, epoch, model.clone()));
                self.bad_checks = 0;
            }
        }
        self.bad_checks >= self.patience
    }
}

fn class_counts(labels: impl Iterator<Item = usize>) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    counts
}

/// Batches of whole groups, in a seeded random order.
fn group_batches(samples: &[EmbedSample], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(s.group).or_default().push(i);
    }
    let mut order: Vec<Vec<usize>> = groups.into_values().collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    let mut cur = Vec::new();
    for g in order {
        cur.extend(g);
        if cur.len() >= batch_size {
            batches.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches
}

fn embed_samples(model: &Embedder<f32>, samples: &[EmbedSample]) -> Result<Vec<Vec<f32>>> {
    samples.par_iter().map(|s| model.embed(s.mel)).collect()
}

/// Validation metric: mean hinge over every valid triplet.
pub fn embedder_val_loss(model: &Embedder<f32>, samples: &[EmbedSample]) -> Result<f64> {
    let emb = embed_samples(model, samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Ok(batch_all_loss(&emb, &labels, model.config.margin))
}

/// Trains from a fresh model built from `config`.
pub fn train_embedder(
    train: &[EmbedSample],
    val: &[EmbedSample],
    config: &EmbedderConfig,
) -> Result<(Embedder<f32>, TrainHistory)> {
    train_embedder_from(Embedder::new(config.clone())?, train, val)
}

/// Continues training `model` with its own configuration.
pub fn train_embedder_from(
    mut model: Embedder<f32>,
    train: &[EmbedSample],
    val: &[EmbedSample],
) -> Result<(Embedder<f32>, TrainHistory)> {
    let config = model.config.clone();
    let counts = class_counts(train.iter().map(|s| s.label));
    if counts.len() < 2 || counts.values().any(|&c| c < 2) {
        return Err(Error::Dataset(format!(
            "triplet training needs >= 2 classes with >= 2 items each, got {counts:?}"
        )));
    }
    let margin = config.margin;
    let mut adam = Adam::new(config.learning_rate);
    let mut stop = EarlyStop::new(config.patience.max(1));
    let mut history = TrainHistory::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_e3b0);
    for epoch in 1..=config.max_epochs {
        let (mut loss_sum, mut n_batches, mut n_triplets) = (0.0, 0usize, 0usize);
        for batch in group_batches(train, config.batch_size, &mut rng) {
            let caches: Vec<EmbedCache<f32>> = batch
                .par_iter()
                .map(|&i| model.forward_cached(&train[i].mel.values))
                .collect::<Result<_>>()?;
            let emb: Vec<Vec<f32>> = caches.iter().map(|c| c.output().to_vec()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train[i].label).collect();
            let triplets = mine_semi_hard(&emb, &labels, margin);
            if triplets.is_empty() {
                continue;
            }
            let (loss, d_emb) = triplet_batch_loss(&emb, &triplets, margin);
            let per_item: Vec<Option<_>> = caches
                .par_iter()
                .zip(d_emb.par_iter())
                .map(|(c, d)| d.iter().any(|&v| v != 0.0).then(|| model.backward(c, d)))
                .collect();
            // fixed-order reduction keeps results independent of thread count
            let mut total = None;
            for g in per_item.into_iter().flatten() {
                match &mut total {
                    None => total = Some(g),
                    Some(acc) => add_grads(acc, &g),
                }
            }
            if let Some(g) = total {
                adam.update(&mut model.params_mut(), &g);
            }
            loss_sum += loss;
            n_batches += 1;
            n_triplets += triplets.len();
        }
        let train_loss = if n_batches > 0 { loss_sum / n_batches as f64 } else { 0.0 };
        let val_loss = if val.is_empty() { None } else { Some(embedder_val_loss(&model, val)?) };
        log::info!(
            "embedder epoch {epoch}: train {train_loss:.5} val {} triplets {n_triplets}",
            val_loss.map_or("-".into(), |v| format!("{v:.5}"))
        );
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            metric: n_triplets as f64,
        });
        if stop.observe(val_loss.unwrap_or(train_loss), epoch, &model) {
            history.stopped_early = true;
            break;
        }
    }
    if let Some((loss, epoch, best)) = stop.best {
        history.best_epoch = Some(epoch);
        history.best_val_loss = Some(loss);
        model = best;
    }
    Ok((model, history))
}

fn stack(data: &[LabeledEmbedding], idx: &[usize]) -> (Vec<f32>, Vec<f32>) {
    let mut x = Vec::with_capacity(idx.len() * data.first().map_or(0, |d| d.values.len()));
    let mut t = Vec::with_capacity(idx.len());
    for &i in idx {
        x.extend_from_slice(&data[i].values);
        t.push(if data[i].label { 1.0 } else { 0.0 });
    }
    (x, t)
}

/// Mean BCE and accuracy (percent, threshold 0.5).
pub fn evaluate_classifier(model: &Classifier<f32>, data: &[LabeledEmbedding]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let (x, t) = stack(data, &idx);
    let probs = model.predict(&x, data.len())?;
    let loss = probs.iter().zip(&t).map(|(&y, &l)| bce_loss(y as f64, l as f64)).sum::<f64>() / data.len() as f64;
    let correct = probs.iter().zip(&t).filter(|(&y, &l)| (y > 0.5) == (l > 0.5)).count();
    Ok((loss, 100.0 * correct as f64 / data.len() as f64))
}

pub fn train_classifier(
    train: &[LabeledEmbedding],
    val: &[LabeledEmbedding],
    config: &ClassifierConfig,
) -> Result<(Classifier<f32>, TrainHistory)> {
    let mut model = Classifier::<f32>::new(config.clone())?;
    let positives = train.iter().filter(|d| d.label).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::Dataset("classifier training needs both labels".into()));
    }
    if let Some(bad) = train.iter().chain(val).find(|d| d.values.len() != config.input_dim) {
        return Err(Error::Shape {
            expected: vec![config.input_dim],
            actual: vec![bad.values.len()],
        });
    }
    let mut adam = Adam::new(config.learning_rate);
    let mut stop = EarlyStop::new(config.patience.max(1));
    let mut history = TrainHistory::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xc1a5_51f1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let (x, t) = stack(train, chunk);
            let cache = model.forward_cached(&x, chunk.len())?;
            loss_sum += cache
                .probs
                .iter()
                .zip(&t)
                .map(|(&y, &l)| bce_loss(y as f64, l as f64))
                .sum::<f64>();
            let grads = model.backward(&cache, &t);
            adam.update(&mut model.params_mut(), &grads);
        }
        if epoch % config.eval_every != 0 && epoch != config.max_epochs {
            continue;
        }
        let train_loss = loss_sum / train.len() as f64;
        let (val_loss, val_acc) = if val.is_empty() {
            (None, 0.0)
        } else {
            let (l, a) = evaluate_classifier(&model, val)?;
            (Some(l), a)
        };
        log::debug!("classifier epoch {epoch}: train {train_loss:.5} val {val_loss:?} acc {val_acc:.1}");
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            metric: val_acc,
        });
        if stop.observe(val_loss.unwrap_or(train_loss), epoch, &model) {
            history.stopped_early = true;
            break;
        }
    }
    if let Some((loss, epoch, best)) = stop.best {
        history.best_epoch = Some(epoch);
        history.best_val_loss = Some(loss);
        model = best;
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::embedder::ConvBlock;
    use crate::nn::triplet::squared_distance;
    use rand::Rng;

    const FRAMES: usize = 24;
    const MELS: usize = 16;

    /// Toy "spectrogram" of a steady tone: a bright horizontal band.
    fn tone_mel(band: usize, rng: &mut ChaCha8Rng) -> MelSpectrogram {
        let values = (0..FRAMES * MELS)
            .map(|i| {
                let m = i % MELS;
                let base = if m.abs_diff(band) <= 1 { 0.9 } else { 0.1 };
                (base + rng.random_range(-0.05..0.05)) as f32
            })
            .collect();
        MelSpectrogram {
            frames: FRAMES,
            n_mels: MELS,
            values,
        }
    }

    fn toy_config() -> EmbedderConfig {
        EmbedderConfig {
            input_frames: FRAMES,
            input_mels: MELS,
            conv_blocks: vec![
                ConvBlock {
                    out_channels: 4,
                    stride: 1,
                },
                ConvBlock {
                    out_channels: 8,
                    stride: 1,
                },
            ],
            embedding_dim: 8,
            batch_size: 16,
            learning_rate: 3e-3,
            max_epochs: 30,
            seed: 1,
            ..Default::default()
        }
    }

    fn toy_set(n: usize, seed: u64) -> Vec<(MelSpectrogram, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let band = if label == 0 { 3 + rng.random_range(0..2) } else { 11 + rng.random_range(0..2) };
                (tone_mel(band, &mut rng), label)
            })
            .collect()
    }

    fn samples(set: &[(MelSpectrogram, usize)]) -> Vec<EmbedSample<'_>> {
        set.iter()
            .enumerate()
            .map(|(i, (mel, label))| EmbedSample {
                mel,
                label: *label,
                group: i / 2,
            })
            .collect()
    }

    #[test]
    fn embedder_separates_two_tones() {
        let train_set = toy_set(48, 1);
        let val_set = toy_set(16, 2);
        let test_set = toy_set(16, 3);
        let (model, history) = train_embedder(&samples(&train_set), &samples(&val_set), &toy_config()).unwrap();
        let first = history.records[0].val_loss.unwrap();
        assert!(history.best_val_loss.unwrap() <= first);
        let emb: Vec<Vec<f32>> = test_set.iter().map(|(m, _)| model.embed(m).unwrap()).collect();
        let (mut max_intra, mut min_inter) = (0.0f64, f64::MAX);
        for i in 0..emb.len() {
            for j in i + 1..emb.len() {
                let d = squared_distance(&emb[i], &emb[j]);
                if test_set[i].1 == test_set[j].1 {
                    max_intra = max_intra.max(d);
                } else {
                    min_inter = min_inter.min(d);
                }
            }
        }
        assert!(min_inter > max_intra, "inter {min_inter} intra {max_intra}");
    }

    #[test]
    fn embedder_training_is_deterministic() {
        let train_set = toy_set(16, 4);
        let cfg = EmbedderConfig {
            max_epochs: 2,
            ..toy_config()
        };
        let a = train_embedder(&samples(&train_set), &[], &cfg).unwrap();
        let b = train_embedder(&samples(&train_set), &[], &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let train_set = toy_set(16, 5);
        let cfg = EmbedderConfig {
            learning_rate: 0.0,
            max_epochs: 2,
            ..toy_config()
        };
        let (model, _) = train_embedder(&samples(&train_set), &[], &cfg).unwrap();
        assert_eq!(model, Embedder::new(cfg).unwrap());
    }

    #[test]
    fn degenerate_datasets_are_rejected() {
        let set = toy_set(8, 6);
        let one_class: Vec<EmbedSample> = samples(&set).into_iter().filter(|s| s.label == 0).collect();
        assert!(train_embedder(&one_class, &[], &toy_config()).is_err());

        let data = vec![
            LabeledEmbedding {
                values: vec![0.0; 4],
                label: true,
            };
            3
        ];
        let cfg = ClassifierConfig {
            input_dim: 4,
            ..Default::default()
        };
        assert!(train_classifier(&data, &[], &cfg).is_err());
    }

    fn clusters(n: usize, seed: u64, flip: bool) -> Vec<LabeledEmbedding> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 512;
        let center: Vec<f64> = (0..dim).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        (0..n)
            .map(|i| {
                let label = i % 2 == 0;
                let sign = if label { 1.0 } else { -1.0 };
                let v: Vec<f64> = center.iter().map(|c| sign * c + rng.random_range(-0.8..0.8)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                LabeledEmbedding {
                    values: v.iter().map(|x| (x / norm) as f32).collect(),
                    label: label != flip,
                }
            })
            .collect()
    }

    #[test]
    fn classifier_learns_separable_clusters() {
        let cfg = ClassifierConfig {
            max_epochs: 300,
            ..Default::default()
        };
        let (model, _) = train_classifier(&clusters(200, 1, false), &clusters(100, 2, false), &cfg).unwrap();
        let (_, acc) = evaluate_classifier(&model, &clusters(100, 3, false)).unwrap();
        assert!(acc >= 99.0, "{acc}");

        let (flipped, _) = train_classifier(&clusters(200, 1, true), &clusters(100, 2, true), &cfg).unwrap();
        let (_, acc_flipped) = evaluate_classifier(&flipped, &clusters(100, 3, false)).unwrap();
        assert!((acc_flipped - (100.0 - acc)).abs() <= 1.0, "{acc_flipped} vs {acc}");
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let cfg = ClassifierConfig {
            max_epochs: 0,
            ..Default::default()
        };
        let (model, history) = train_classifier(&clusters(20, 1, false), &[], &cfg).unwrap();
        assert_eq!(model, Classifier::new(cfg).unwrap());
        assert!(history.records.is_empty());
    }
}
