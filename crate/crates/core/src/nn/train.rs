//! Training loop: seed-deterministic shuffling, per-batch SGD, optional
//! journaling, and accuracy evaluation over dataset subsets.

use super::{backward, forward, sgd_step, Model, NnError};
use crate::data::{Dataset, SubsetFilter};
use crate::journal::{BatchKey, Journal, JournalError};
use crate::rng::{self, tags};
use rand::seq::SliceRandom;
use std::time::{Duration, Instant};

/// Plain-SGD training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    pub shuffle: bool,
}

impl TrainConfig {
    pub fn new(epochs: u32, batch_size: usize, learning_rate: f32, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            seed,
            shuffle: true,
        }
    }

    pub fn with_epochs(mut self, epochs: u32) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub batches_run: u32,
    pub wall: Duration,
}

/// The exact example order used for `epoch` of a run with `seed`. Exposed so
/// batch membership can be replayed independently of training.
pub fn epoch_shuffle_order(n: usize, seed: u64, epoch: u32) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::keyed(rng::mix(seed, tags::SHUFFLE), epoch as u64);
    order.shuffle(&mut rng);
    order
}

/// Trains in place for `config.epochs` epochs of seed-deterministic batches.
/// When a journal is supplied it must be freshly created for this model;
/// every batch's (epoch, batch, example ids, delta) is recorded before the
/// next batch begins. The final short batch is kept, not dropped.
pub fn train(
    model: &mut Model,
    dataset: &Dataset,
    config: &TrainConfig,
    mut journal: Option<&mut Journal>,
) -> Result<TrainReport, NnError> {
    let n = dataset.len();
    if n == 0 {
        return Err(NnError::EmptyDataset);
    }
    if config.batch_size == 0 || config.batch_size > n {
        return Err(NnError::BatchTooLarge {
            batch_size: config.batch_size,
            dataset_len: n,
        });
    }
    if config.epochs == 0 {
        return Err(NnError::ZeroEpochs);
    }
    if let Some(journal) = journal.as_deref_mut() {
        if journal.arch_fingerprint() != model.fingerprint() {
            return Err(JournalError::ArchMismatch {
                expected: journal.arch_fingerprint(),
                found: model.fingerprint(),
            }
            .into());
        }
        if !journal.is_empty() {
            return Err(JournalError::NotFresh.into());
        }
        if journal.initial_params() != model.params().to_flat().as_slice() {
            return Err(JournalError::InitialMismatch.into());
        }
    }

    let start = Instant::now();
    let mut epochs = Vec::with_capacity(config.epochs as usize);
    let mut batches_run = 0u32;
    for epoch in 0..config.epochs {
        let order = if config.shuffle {
            epoch_shuffle_order(n, config.seed, epoch)
        } else {
            (0..n).collect()
        };
        let mut loss_sum = 0.0f64;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let (batch, labels, ids) = dataset.batch(chunk);
            let bp = backward(model, &batch, &labels)?;
            let delta = sgd_step(model, &bp.param_grads, config.learning_rate)?;
            loss_sum += bp.loss as f64 * chunk.len() as f64;
            batches_run += 1;
            if let Some(journal) = journal.as_deref_mut() {
                journal.record_batch(
                    BatchKey {
                        epoch,
                        batch: batch_idx as u32,
                    },
                    &ids,
                    &delta,
                )?;
            }
        }
        let train_accuracy = accuracy(model, dataset, &SubsetFilter::All)?;
        epochs.push(EpochStats {
            mean_loss: loss_sum / n as f64,
            train_accuracy,
        });
    }
    Ok(TrainReport {
        epochs,
        batches_run,
        wall: start.elapsed(),
    })
}

/// Fraction of correct argmax predictions over the examples selected by the
/// filter. Errors on an empty selection.
pub fn accuracy(model: &Model, dataset: &Dataset, filter: &SubsetFilter) -> Result<f64, NnError> {
    let selected = filter.select(dataset);
    if selected.is_empty() {
        return Err(NnError::EmptySelection);
    }
    let mut correct = 0usize;
    for chunk in selected.chunks(256) {
        let (batch, labels, _) = dataset.batch(chunk);
        let logits = forward(model, &batch)?;
        let c = model.class_count();
        for (s, &label) in labels.iter().enumerate() {
            let row = &logits.values()[s * c..(s + 1) * c];
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i)
                .expect("non-empty row");
            if pred == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / selected.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::nn::{init_model, Architecture};

    fn tiny_setup() -> (Model, Dataset) {
        let ds = synth_blobs(3, 20, 6, 0.05, 11);
        let model = init_model(Architecture::mlp(6, &[16], 3).unwrap(), 5);
        (model, ds)
    }

    #[test]
    fn same_seed_gives_bit_identical_params() {
        let (m0, ds) = tiny_setup();
        let cfg = TrainConfig::new(2, 8, 0.1, 99);
        let mut a = m0.clone();
        let mut b = m0;
        train(&mut a, &ds, &cfg, None).unwrap();
        train(&mut b, &ds, &cfg, None).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn journal_sums_reproduce_final_params_bit_exactly() {
        let (mut model, ds) = tiny_setup();
        let cfg = TrainConfig::new(3, 7, 0.1, 42); // short final batch each epoch
        let initial = model.params().to_flat();
        let mut journal = Journal::new_full("t", &model);
        train(&mut model, &ds, &cfg, Some(&mut journal)).unwrap();
        let keys = journal.all_keys();
        let sum = journal.sum_deltas(&keys).unwrap();
        let reconstructed: Vec<f32> = initial.iter().zip(&sum).map(|(a, b)| a + b).collect();
        assert_eq!(reconstructed, model.params().to_flat());
    }

    #[test]
    fn shuffle_order_is_replayable() {
        assert_eq!(epoch_shuffle_order(10, 3, 1), epoch_shuffle_order(10, 3, 1));
        assert_ne!(epoch_shuffle_order(10, 3, 1), epoch_shuffle_order(10, 3, 2));
    }

    #[test]
    fn batch_size_larger_than_dataset_is_rejected() {
        let (mut model, ds) = tiny_setup();
        let cfg = TrainConfig::new(1, 1000, 0.1, 0);
        assert!(matches!(
            train(&mut model, &ds, &cfg, None),
            Err(NnError::BatchTooLarge { .. })
        ));
    }

    #[test]
    fn accuracy_partition_identity() {
        // class-3 and not-class-3 accuracies recombine to the overall one.
        let ds = synth_blobs(4, 25, 5, 0.3, 7);
        let model = init_model(Architecture::mlp(5, &[12], 4).unwrap(), 3);
        let all = accuracy(&model, &ds, &SubsetFilter::All).unwrap();
        let a3 = accuracy(&model, &ds, &SubsetFilter::Class(3)).unwrap();
        let rest = accuracy(&model, &ds, &SubsetFilter::NotClass(3)).unwrap();
        let n3 = SubsetFilter::Class(3).select(&ds).len() as f64;
        let nr = SubsetFilter::NotClass(3).select(&ds).len() as f64;
        let recombined = (a3 * n3 + rest * nr) / (n3 + nr);
        assert!((recombined - all).abs() < 1e-9);
    }

    #[test]
    fn random_init_accuracy_near_chance_on_balanced_data() {
        let ds = synth_blobs(10, 40, 8, 0.2, 21);
        let model = init_model(Architecture::mlp(8, &[16], 10).unwrap(), 77);
        let acc = accuracy(&model, &ds, &SubsetFilter::All).unwrap();
        assert!((acc - 0.1).abs() <= 0.05, "accuracy {acc}");
    }

    #[test]
    fn empty_selection_errors() {
        let (model, ds) = tiny_setup();
        let err = accuracy(&model, &ds, &SubsetFilter::Class(2_000)).unwrap_err();
        assert!(matches!(err, NnError::EmptySelection));
    }
}
