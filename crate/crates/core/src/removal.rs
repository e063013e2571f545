//! The three data-removal methods: naive retraining, relabel unlearning, and
//! amnesiac unlearning with optional fine-tuning.
//!
//! Naive retraining and relabel unlearning both continue training the
//! already-trained model (on the filtered or relabeled dataset); forgetting
//! comes from catastrophic interference or label scrambling respectively.
//! Amnesiac unlearning is a single subtraction: the journaled deltas of every
//! batch that contained sensitive data are removed from the parameters, whole
//! batches at a time; the collateral damage to co-batched examples is what
//! fine-tuning repairs.

use crate::data::{DataError, Dataset, Example, SubsetFilter};
use crate::journal::{BatchKey, Journal, JournalError};
use crate::nn::{accuracy, train, Model, NnError, TrainConfig, TrainReport};
use crate::rng::{self, tags};
use rand::Rng;
use std::collections::BTreeSet;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RemovalError {
    #[error("selector resolved to no examples")]
    EmptySelector,
    #[error("selector would remove the entire dataset")]
    SelectsAll,
    #[error("class {class} out of range for {class_count} classes")]
    ClassOutOfRange { class: usize, class_count: usize },
    #[error("example id {0} not present in dataset")]
    UnknownExample(u64),
    #[error("relabeling needs at least two classes")]
    TooFewClasses,
    #[error("examples-mode relabeling needs at least one copy, got {0}")]
    BadCopyCount(u32),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// The sensitive subset: either a whole class or an explicit example-id set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SensitiveSelector {
    Class(usize),
    Examples(BTreeSet<u64>),
}

impl SensitiveSelector {
    /// Resolves to concrete example ids against a dataset. A class selector
    /// must name a valid class; an examples selector must only name ids
    /// present in the dataset (it may be empty, which selects nothing).
    pub fn resolve(&self, dataset: &Dataset) -> Result<BTreeSet<u64>, RemovalError> {
        match self {
            SensitiveSelector::Class(class) => {
                if *class >= dataset.class_count() {
                    return Err(RemovalError::ClassOutOfRange {
                        class: *class,
                        class_count: dataset.class_count(),
                    });
                }
                Ok(dataset
                    .examples()
                    .iter()
                    .filter(|e| e.label == *class)
                    .map(|e| e.id)
                    .collect())
            }
            SensitiveSelector::Examples(ids) => {
                let present = dataset.ids();
                if let Some(&missing) = ids.iter().find(|id| !present.contains(id)) {
                    return Err(RemovalError::UnknownExample(missing));
                }
                Ok(ids.clone())
            }
        }
    }

    /// Filter matching the sensitive examples.
    pub fn target_filter(&self) -> SubsetFilter {
        match self {
            SensitiveSelector::Class(c) => SubsetFilter::Class(*c),
            SensitiveSelector::Examples(ids) => SubsetFilter::Ids(ids.clone()),
        }
    }

    /// Filter matching everything else.
    pub fn non_target_filter(&self) -> SubsetFilter {
        match self {
            SensitiveSelector::Class(c) => SubsetFilter::NotClass(*c),
            SensitiveSelector::Examples(ids) => SubsetFilter::NotIds(ids.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemovalMethod {
    NaiveRetrain,
    RelabelUnlearn,
    AmnesiacUnlearn,
}

impl RemovalMethod {
    pub fn name(&self) -> &'static str {
        match self {
            RemovalMethod::NaiveRetrain => "naive",
            RemovalMethod::RelabelUnlearn => "unlearning",
            RemovalMethod::AmnesiacUnlearn => "amnesiac",
        }
    }
}

/// What a removal did and what it cost. `wall_time` covers the removal work
/// itself (training epochs, or the amnesiac subtraction), not the accuracy
/// evaluations around it. Accuracies are measured on the dataset handed to
/// the removal call; a side is `None` when the selector leaves it empty
/// (empty selector, or a selector covering the whole dataset).
#[derive(Debug, Clone)]
pub struct RemovalReport {
    pub method: RemovalMethod,
    pub wall_time: Duration,
    pub epochs_used: u32,
    pub pre_target_accuracy: Option<f64>,
    pub post_target_accuracy: Option<f64>,
    pub pre_non_target_accuracy: Option<f64>,
    pub post_non_target_accuracy: Option<f64>,
}

fn accuracy_opt(
    model: &Model,
    dataset: &Dataset,
    filter: &SubsetFilter,
) -> Result<Option<f64>, RemovalError> {
    match accuracy(model, dataset, filter) {
        Ok(a) => Ok(Some(a)),
        Err(NnError::EmptySelection) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn measure(
    model: &Model,
    dataset: &Dataset,
    selector: &SensitiveSelector,
) -> Result<(Option<f64>, Option<f64>), RemovalError> {
    let target = accuracy_opt(model, dataset, &selector.target_filter())?;
    let non_target = accuracy_opt(model, dataset, &selector.non_target_filter())?;
    Ok((target, non_target))
}

/// Dataset with the given example ids removed. Errors if nothing would
/// remain.
pub fn dataset_without(dataset: &Dataset, ids: &BTreeSet<u64>) -> Result<Dataset, RemovalError> {
    let kept = dataset.retain(|e| !ids.contains(&e.id));
    if kept.is_empty() {
        return Err(RemovalError::SelectsAll);
    }
    Ok(kept)
}

/// Baseline removal: continue training the trained model on the dataset with
/// the sensitive examples deleted, relying on catastrophic interference to
/// erode what was learned. The sensitive data never enters any batch.
pub fn naive_retrain(
    model: &Model,
    dataset: &Dataset,
    selector: &SensitiveSelector,
    config: &TrainConfig,
) -> Result<(Model, RemovalReport), RemovalError> {
    let ids = selector.resolve(dataset)?;
    if ids.is_empty() {
        return Err(RemovalError::EmptySelector);
    }
    let remaining = dataset_without(dataset, &ids)?;
    let (pre_target, pre_non_target) = measure(model, dataset, selector)?;
    let mut retrained = model.clone();
    let start = Instant::now();
    train(&mut retrained, &remaining, config, None)?;
    let wall_time = start.elapsed();
    let (post_target, post_non_target) = measure(&retrained, dataset, selector)?;
    Ok((
        retrained,
        RemovalReport {
            method: RemovalMethod::NaiveRetrain,
            wall_time,
            epochs_used: config.epochs,
            pre_target_accuracy: pre_target,
            post_target_accuracy: post_target,
            pre_non_target_accuracy: pre_non_target,
            post_non_target_accuracy: post_non_target,
        },
    ))
}

/// Replaces sensitive labels with uniformly random incorrect ones.
///
/// Class mode keeps every example of the class in place with a scrambled
/// label (identity preserved). Examples mode removes the originals and
/// inserts `copies_k` freshly-labeled copies of each, with new ids linked to
/// their origin. Deterministic under the seed.
pub fn relabel(
    dataset: &Dataset,
    selector: &SensitiveSelector,
    copies_k: u32,
    seed: u64,
) -> Result<Dataset, RemovalError> {
    if dataset.class_count() < 2 {
        return Err(RemovalError::TooFewClasses);
    }
    let mut rng = rng::keyed(rng::mix(seed, tags::RELABEL), 0);
    let class_count = dataset.class_count();
    let mut wrong_label = |correct: usize| {
        let draw = rng.gen_range(0..class_count - 1);
        if draw >= correct {
            draw + 1
        } else {
            draw
        }
    };
    match selector {
        SensitiveSelector::Class(class) => {
            if *class >= class_count {
                return Err(RemovalError::ClassOutOfRange {
                    class: *class,
                    class_count,
                });
            }
            let examples = dataset
                .examples()
                .iter()
                .map(|e| {
                    let mut e = e.clone();
                    if e.label == *class {
                        e.label = wrong_label(*class);
                    }
                    e
                })
                .collect();
            Ok(dataset.with_examples(examples)?)
        }
        SensitiveSelector::Examples(_) => {
            if copies_k == 0 {
                return Err(RemovalError::BadCopyCount(copies_k));
            }
            let ids = selector.resolve(dataset)?;
            if ids.is_empty() {
                return Err(RemovalError::EmptySelector);
            }
            let mut next_id = dataset.max_id().map(|m| m + 1).unwrap_or(0);
            let mut examples: Vec<Example> = Vec::with_capacity(
                dataset.len() - ids.len() + ids.len() * copies_k as usize,
            );
            let mut sensitive: Vec<&Example> = Vec::with_capacity(ids.len());
            for e in dataset.examples() {
                if ids.contains(&e.id) {
                    sensitive.push(e);
                } else {
                    examples.push(e.clone());
                }
            }
            for e in sensitive {
                for _ in 0..copies_k {
                    examples.push(Example {
                        id: next_id,
                        origin: Some(e.id),
                        features: e.features.clone(),
                        label: wrong_label(e.label),
                    });
                    next_id += 1;
                }
            }
            Ok(dataset.with_examples(examples)?)
        }
    }
}

/// Default number of noisy-labeled copies in examples-mode relabeling.
pub const DEFAULT_RELABEL_COPIES: u32 = 3;

/// Relabel unlearning: scramble the sensitive labels, then briefly retrain
/// the trained model on the modified dataset. Zero epochs is the identity.
pub fn unlearn(
    model: &Model,
    dataset: &Dataset,
    selector: &SensitiveSelector,
    epochs: u32,
    config: &TrainConfig,
) -> Result<(Model, RemovalReport), RemovalError> {
    let ids = selector.resolve(dataset)?;
    if ids.is_empty() {
        return Err(RemovalError::EmptySelector);
    }
    let (pre_target, pre_non_target) = measure(model, dataset, selector)?;
    let mut unlearned = model.clone();
    let start = Instant::now();
    if epochs > 0 {
        let modified = relabel(dataset, selector, DEFAULT_RELABEL_COPIES, config.seed)?;
        let cfg = config.clone().with_epochs(epochs);
        train(&mut unlearned, &modified, &cfg, None)?;
    }
    let wall_time = start.elapsed();
    let (post_target, post_non_target) = measure(&unlearned, dataset, selector)?;
    Ok((
        unlearned,
        RemovalReport {
            method: RemovalMethod::RelabelUnlearn,
            wall_time,
            epochs_used: epochs,
            pre_target_accuracy: pre_target,
            post_target_accuracy: post_target,
            pre_non_target_accuracy: pre_non_target,
            post_non_target_accuracy: post_non_target,
        },
    ))
}

/// Amnesiac unlearning: subtract the summed deltas of every batch that
/// contained a sensitive example. A single subtraction, no training. The
/// journal must cover all such batches; a watchlist miss is reported with the
/// exact missing keys.
pub fn amnesiac_unlearn(
    model: &Model,
    journal: &Journal,
    dataset: &Dataset,
    selector: &SensitiveSelector,
) -> Result<(Model, RemovalReport), RemovalError> {
    if journal.arch_fingerprint() != model.fingerprint() {
        return Err(JournalError::ArchMismatch {
            expected: journal.arch_fingerprint(),
            found: model.fingerprint(),
        }
        .into());
    }
    let ids = selector.resolve(dataset)?;
    let (pre_target, pre_non_target) = measure(model, dataset, selector)?;
    let mut protected = model.clone();
    let start = Instant::now();
    let keys = batches_for_ids(journal, &ids)?;
    let sum = journal.sum_deltas(&keys)?;
    protected.params_mut().sub_assign_flat(&sum);
    let wall_time = start.elapsed();
    let (post_target, post_non_target) = measure(&protected, dataset, selector)?;
    Ok((
        protected,
        RemovalReport {
            method: RemovalMethod::AmnesiacUnlearn,
            wall_time,
            epochs_used: 0,
            pre_target_accuracy: pre_target,
            post_target_accuracy: post_target,
            pre_non_target_accuracy: pre_non_target,
            post_non_target_accuracy: post_non_target,
        },
    ))
}

/// The batch list for a set of sensitive ids (ids absent from training are
/// an error, matching the journal's contract).
pub fn batches_for_ids(
    journal: &Journal,
    ids: &BTreeSet<u64>,
) -> Result<Vec<BatchKey>, RemovalError> {
    Ok(journal.batches_containing(ids)?)
}

/// Post-removal fine-tuning: continue SGD on the dataset with the sensitive
/// data excluded. Any journaling happens under the caller's fresh journal
/// (a new run id; runs are never merged). Zero epochs is the identity.
pub fn fine_tune(
    model: &Model,
    dataset_without_sensitive: &Dataset,
    epochs: u32,
    config: &TrainConfig,
    journal: Option<&mut Journal>,
) -> Result<(Model, Option<TrainReport>), RemovalError> {
    let mut tuned = model.clone();
    if epochs == 0 {
        return Ok((tuned, None));
    }
    let cfg = config.clone().with_epochs(epochs);
    let report = train(&mut tuned, dataset_without_sensitive, &cfg, journal)?;
    Ok((tuned, Some(report)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::nn::{init_model, Architecture};

    fn setup() -> (Model, Dataset, TrainConfig) {
        let ds = synth_blobs(4, 30, 6, 0.08, 3);
        let cfg = TrainConfig::new(3, 10, 0.1, 17);
        let mut model = init_model(Architecture::mlp(6, &[24], 4).unwrap(), 5);
        train(&mut model, &ds, &cfg, None).unwrap();
        (model, ds, cfg)
    }

    #[test]
    fn dataset_without_counts() {
        let ds = synth_blobs(3, 10, 4, 0.1, 1);
        let ids = SensitiveSelector::Class(1).resolve(&ds).unwrap();
        let rest = dataset_without(&ds, &ids).unwrap();
        assert_eq!(rest.len(), ds.len() - ids.len());
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn selecting_everything_errors() {
        let ds = synth_blobs(2, 5, 4, 0.1, 1);
        let all = ds.ids();
        assert!(matches!(
            dataset_without(&ds, &all),
            Err(RemovalError::SelectsAll)
        ));
    }

    #[test]
    fn relabel_class_mode_never_keeps_true_label() {
        let ds = synth_blobs(5, 20, 4, 0.1, 2);
        let out = relabel(&ds, &SensitiveSelector::Class(3), 1, 9).unwrap();
        for (orig, new) in ds.examples().iter().zip(out.examples()) {
            if orig.label == 3 {
                assert_ne!(new.label, 3);
                assert_eq!(new.id, orig.id);
            } else {
                assert_eq!(new.label, orig.label);
            }
        }
    }

    #[test]
    fn relabel_examples_mode_counts_and_origins() {
        let ds = synth_blobs(4, 10, 4, 0.1, 2);
        let ids: BTreeSet<u64> = [0u64, 1, 2, 3, 4].into_iter().collect();
        let sel = SensitiveSelector::Examples(ids.clone());
        let out = relabel(&ds, &sel, 3, 7).unwrap();
        assert_eq!(out.len(), ds.len() - 5 + 15);
        let copies: Vec<&Example> = out
            .examples()
            .iter()
            .filter(|e| e.origin.is_some())
            .collect();
        assert_eq!(copies.len(), 15);
        for c in &copies {
            let origin = c.origin.unwrap();
            assert!(ids.contains(&origin));
            let true_label = ds
                .examples()
                .iter()
                .find(|e| e.id == origin)
                .unwrap()
                .label;
            assert_ne!(c.label, true_label);
            assert!(!out.ids().contains(&origin) || !ids.contains(&c.id));
        }
        // originals are gone
        for id in &ids {
            assert!(!out.contains_id(*id));
        }
    }

    #[test]
    fn relabel_is_deterministic_under_seed() {
        let ds = synth_blobs(4, 15, 4, 0.1, 2);
        let sel = SensitiveSelector::Class(0);
        let a = relabel(&ds, &sel, 1, 42).unwrap();
        let b = relabel(&ds, &sel, 1, 42).unwrap();
        let c = relabel(&ds, &sel, 1, 43).unwrap();
        assert_eq!(a, b);
        let labels = |d: &Dataset| d.examples().iter().map(|e| e.label).collect::<Vec<_>>();
        assert_ne!(labels(&a), labels(&c));
    }

    #[test]
    fn relabel_rejects_zero_copies() {
        let ds = synth_blobs(3, 5, 4, 0.1, 2);
        let sel = SensitiveSelector::Examples([0u64].into_iter().collect());
        assert!(matches!(
            relabel(&ds, &sel, 0, 1),
            Err(RemovalError::BadCopyCount(0))
        ));
    }

    #[test]
    fn unlearn_zero_epochs_is_identity() {
        let (model, ds, cfg) = setup();
        let (out, report) = unlearn(&model, &ds, &SensitiveSelector::Class(1), 0, &cfg).unwrap();
        assert_eq!(out.params(), model.params());
        assert_eq!(report.epochs_used, 0);
        assert_eq!(report.pre_target_accuracy, report.post_target_accuracy);
    }

    #[test]
    fn fine_tune_zero_epochs_is_identity() {
        let (model, ds, cfg) = setup();
        let (out, report) = fine_tune(&model, &ds, 0, &cfg, None).unwrap();
        assert_eq!(out.params(), model.params());
        assert!(report.is_none());
    }

    #[test]
    fn amnesiac_empty_selector_is_identity() {
        let ds = synth_blobs(3, 20, 5, 0.1, 4);
        let cfg = TrainConfig::new(2, 8, 0.1, 6);
        let mut model = init_model(Architecture::mlp(5, &[12], 3).unwrap(), 2);
        let mut journal = Journal::new_full("r", &model);
        train(&mut model, &ds, &cfg, Some(&mut journal)).unwrap();
        let sel = SensitiveSelector::Examples(BTreeSet::new());
        let (out, _) = amnesiac_unlearn(&model, &journal, &ds, &sel).unwrap();
        assert_eq!(out.params(), model.params());
    }

    #[test]
    fn amnesiac_all_batches_restores_initial_params() {
        let ds = synth_blobs(3, 20, 5, 0.1, 4);
        let cfg = TrainConfig::new(2, 8, 0.1, 6);
        let mut model = init_model(Architecture::mlp(5, &[12], 3).unwrap(), 2);
        let initial = model.params().clone();
        let mut journal = Journal::new_full("r", &model);
        train(&mut model, &ds, &cfg, Some(&mut journal)).unwrap();
        assert_ne!(model.params(), &initial);
        let sel = SensitiveSelector::Examples(ds.ids());
        let (out, _) = amnesiac_unlearn(&model, &journal, &ds, &sel).unwrap();
        assert_eq!(out.params(), &initial);
    }

    #[test]
    fn amnesiac_exact_bookkeeping_for_any_selector() {
        let ds = synth_blobs(4, 16, 5, 0.1, 8);
        let cfg = TrainConfig::new(2, 8, 0.1, 3);
        let mut model = init_model(Architecture::mlp(5, &[10], 4).unwrap(), 1);
        let mut journal = Journal::new_full("r", &model);
        train(&mut model, &ds, &cfg, Some(&mut journal)).unwrap();
        let sel = SensitiveSelector::Class(2);
        let (out, _) = amnesiac_unlearn(&model, &journal, &ds, &sel).unwrap();
        let keys = journal
            .batches_containing(&sel.resolve(&ds).unwrap())
            .unwrap();
        let sum = journal.sum_deltas(&keys).unwrap();
        let diff: Vec<f32> = model
            .params()
            .to_flat()
            .iter()
            .zip(out.params().to_flat())
            .map(|(a, b)| a - b)
            .collect();
        assert_eq!(diff, sum);
    }

    #[test]
    fn amnesiac_watchlist_miss_names_missing_keys() {
        let ds = synth_blobs(3, 20, 5, 0.1, 4);
        let cfg = TrainConfig::new(2, 10, 0.1, 6);
        let mut model = init_model(Architecture::mlp(5, &[12], 3).unwrap(), 2);
        // Watch a single example; then ask to remove a whole class.
        let watched: BTreeSet<u64> = [0u64].into_iter().collect();
        let mut journal = Journal::new_watchlist("r", &model, watched);
        train(&mut model, &ds, &cfg, Some(&mut journal)).unwrap();
        let sel = SensitiveSelector::Class(1);
        let err = amnesiac_unlearn(&model, &journal, &ds, &sel).unwrap_err();
        match err {
            RemovalError::Journal(JournalError::MissingDeltas(keys)) => {
                assert!(!keys.is_empty());
            }
            other => panic!("expected MissingDeltas, got {other:?}"),
        }
    }

    #[test]
    fn amnesiac_checks_fingerprint() {
        let ds = synth_blobs(3, 12, 5, 0.1, 4);
        let cfg = TrainConfig::new(1, 6, 0.1, 6);
        let mut model = init_model(Architecture::mlp(5, &[12], 3).unwrap(), 2);
        let mut journal = Journal::new_full("r", &model);
        train(&mut model, &ds, &cfg, Some(&mut journal)).unwrap();
        let other = init_model(Architecture::mlp(5, &[13], 3).unwrap(), 2);
        let err =
            amnesiac_unlearn(&other, &journal, &ds, &SensitiveSelector::Class(0)).unwrap_err();
        assert!(matches!(
            err,
            RemovalError::Journal(JournalError::ArchMismatch { .. })
        ));
    }

    #[test]
    fn undoing_a_middle_batch_differs_from_never_training_on_it() {
        // Train on three fixed batches b0, b1, b2 (shuffle off), amnesiac-remove
        // b1, and compare with a same-seed model trained only on b0 and b2:
        // later deltas depend on earlier parameters, so they must differ.
        let ds = synth_blobs(2, 9, 4, 0.15, 12); // 18 examples -> 3 batches of 6
        let mut cfg = TrainConfig::new(1, 6, 0.2, 9);
        cfg.shuffle = false;
        let arch = Architecture::mlp(4, &[8], 2).unwrap();
        let mut model = init_model(arch.clone(), 31);
        let initial = model.clone();
        let mut journal = Journal::new_full("r", &model);
        train(&mut model, &ds, &cfg, Some(&mut journal)).unwrap();

        let b1_ids: BTreeSet<u64> = ds.examples()[6..12].iter().map(|e| e.id).collect();
        let sel = SensitiveSelector::Examples(b1_ids.clone());
        let (undone, _) = amnesiac_unlearn(&model, &journal, &ds, &sel).unwrap();

        let without_b1 = dataset_without(&ds, &b1_ids).unwrap();
        let mut direct = initial;
        train(&mut direct, &without_b1, &cfg, None).unwrap();

        let max_diff = undone
            .params()
            .to_flat()
            .iter()
            .zip(direct.params().to_flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_diff > 1e-7, "max diff {max_diff}");
    }

    #[test]
    fn disturbance_grows_with_batch_count() {
        // Expected L2 of the subtracted mass is non-decreasing in |SB|.
        let ds = synth_blobs(4, 40, 6, 0.2, 5);
        let cfg = TrainConfig::new(3, 8, 0.1, 21);
        let mut model = init_model(Architecture::mlp(6, &[16], 4).unwrap(), 11);
        let mut journal = Journal::new_full("r", &model);
        train(&mut model, &ds, &cfg, Some(&mut journal)).unwrap();
        let all_keys = journal.all_keys();
        let mut means = Vec::new();
        for (si, &size) in [2usize, 10, 30].iter().enumerate() {
            let mut total = 0.0f64;
            for run in 0..10u64 {
                let mut rng = rng::keyed(rng::mix(99, tags::SWEEP), si as u64 * 100 + run);
                let mut keys = all_keys.clone();
                for i in 0..size {
                    let j = rng.gen_range(i..keys.len());
                    keys.swap(i, j);
                }
                let sum = journal.sum_deltas(&keys[..size]).unwrap();
                total += sum.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            }
            means.push(total / 10.0);
        }
        assert!(
            means[0] <= means[1] && means[1] <= means[2],
            "means {means:?}"
        );
    }
}
