//! Shadow-model membership inference.
//!
//! The attacker trains shadow models on their own data pool with known
//! membership, harvests softmax prediction vectors into one labeled dataset
//! per class, and trains a small binary attack model per class. At attack
//! time the class-matched attack model decides "member" from the target
//! model's prediction vector alone.

use super::AttackError;
use crate::data::Dataset;
use crate::nn::{
    self, backward_trace, forward_trace, loss, sgd_step, Architecture, LayerSpec, Model,
    TrainConfig,
};
use crate::rng::{self, tags};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use std::collections::{BTreeMap, BTreeSet};

/// Shadow-training configuration. Each shadow gets a seed-deterministic
/// 50/50 in/out split of the pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShadowConfig {
    pub shadow_count: usize,
    pub shadow_epochs: u32,
    pub split_seed: u64,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        ShadowConfig {
            shadow_count: 16,
            shadow_epochs: 10,
            split_seed: 0,
        }
    }
}

/// A trained shadow model and the identity of its in/out examples.
#[derive(Debug, Clone)]
pub struct Shadow {
    pub model: Model,
    pub in_ids: BTreeSet<u64>,
    pub out_ids: BTreeSet<u64>,
}

/// Trains `shadow_count` shadows, each on a seed-deterministic half of the
/// pool. `train_config` supplies the optimizer settings; epochs come from the
/// shadow config and per-shadow seeds are derived from the training seed.
pub fn train_shadows(
    pool: &Dataset,
    architecture: &Architecture,
    shadow_config: &ShadowConfig,
    train_config: &TrainConfig,
) -> Result<Vec<Shadow>, AttackError> {
    if shadow_config.shadow_count < 2 {
        return Err(AttackError::PoolTooSmall {
            len: shadow_config.shadow_count,
            need: 2,
        });
    }
    if pool.len() < 2 {
        return Err(AttackError::PoolTooSmall {
            len: pool.len(),
            need: 2,
        });
    }
    let n = pool.len();
    let half = n / 2;
    let mut shadows = Vec::with_capacity(shadow_config.shadow_count);
    for i in 0..shadow_config.shadow_count {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::keyed(
            rng::mix(shadow_config.split_seed, tags::SHADOW_SPLIT),
            i as u64,
        ));
        let mut in_idx: Vec<usize> = order[..half].to_vec();
        in_idx.sort_unstable();
        let in_set: BTreeSet<usize> = in_idx.iter().copied().collect();
        let train_set = pool.with_examples(
            in_idx
                .iter()
                .map(|&idx| pool.examples()[idx].clone())
                .collect(),
        )
        .expect("pool subset is valid");
        let seed = rng::mix(rng::mix(train_config.seed, tags::SHADOW_TRAIN), i as u64);
        let mut model = nn::init_model(architecture.clone(), seed);
        let cfg = train_config
            .clone()
            .with_epochs(shadow_config.shadow_epochs)
            .with_seed(seed);
        nn::train(&mut model, &train_set, &cfg, None)?;
        let in_ids = train_set.ids();
        let out_ids: BTreeSet<u64> = pool
            .examples()
            .iter()
            .enumerate()
            .filter(|(idx, _)| !in_set.contains(idx))
            .map(|(_, e)| e.id)
            .collect();
        shadows.push(Shadow {
            model,
            in_ids,
            out_ids,
        });
    }
    Ok(shadows)
}

/// Per-class attack training data: prediction vectors labeled with the
/// membership bit.
#[derive(Debug, Clone, Default)]
pub struct AttackDataset {
    pub features: Vec<Vec<f32>>,
    pub members: Vec<bool>,
}

impl AttackDataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn member_count(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }
}

/// Runs every pool example through every shadow and files the softmax
/// prediction vector under the example's class, labeled by whether the
/// example was in that shadow's training half. Classes absent from the pool
/// are simply omitted.
pub fn build_attack_dataset(
    shadows: &[Shadow],
    pool: &Dataset,
) -> Result<BTreeMap<usize, AttackDataset>, AttackError> {
    let mut datasets: BTreeMap<usize, AttackDataset> = BTreeMap::new();
    let all: Vec<usize> = (0..pool.len()).collect();
    for shadow in shadows {
        let class_count = shadow.model.class_count();
        for chunk in all.chunks(256) {
            let (batch, labels, ids) = pool.batch(chunk);
            let logits = nn::forward(&shadow.model, &batch)?;
            let probs = loss::softmax_rows(&logits);
            for (s, (&label, &id)) in labels.iter().zip(&ids).enumerate() {
                let row = probs.values()[s * class_count..(s + 1) * class_count].to_vec();
                let entry = datasets.entry(label).or_default();
                entry.features.push(row);
                entry.members.push(shadow.in_ids.contains(&id));
            }
        }
    }
    Ok(datasets)
}

/// One trained attack model per class. The architecture is fixed: two hidden
/// layers of 256 and 128 units with relu, and a single-logit sigmoid head.
#[derive(Debug, Clone)]
pub struct AttackSuite {
    models: BTreeMap<usize, Model>,
}

const ATTACK_EPOCHS: u32 = 40;
const ATTACK_LR: f32 = 0.5;
const ATTACK_BATCH: usize = 32;

fn attack_architecture(input: usize) -> Architecture {
    Architecture::new(
        vec![input],
        vec![
            LayerSpec::Dense { input, output: 256 },
            LayerSpec::Relu,
            LayerSpec::Dense { input: 256, output: 128 },
            LayerSpec::Relu,
            LayerSpec::Dense { input: 128, output: 1 },
        ],
    )
    .expect("attack architecture is valid")
}

fn train_binary(
    model: &mut Model,
    data: &AttackDataset,
    epochs: u32,
    lr: f32,
    batch_size: usize,
    seed: u64,
) -> Result<(), AttackError> {
    let n = data.len();
    let width = data.features[0].len();
    let batch_size = batch_size.min(n);
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::keyed(rng::mix(seed, tags::SHUFFLE), epoch as u64));
        for chunk in order.chunks(batch_size) {
            let mut values = Vec::with_capacity(chunk.len() * width);
            let mut targets = Vec::with_capacity(chunk.len());
            for &i in chunk {
                values.extend_from_slice(&data.features[i]);
                targets.push(if data.members[i] { 1.0f32 } else { 0.0 });
            }
            let batch = Tensor::from_vec(vec![chunk.len(), width], values)
                .expect("finite prediction vectors");
            let trace = forward_trace(model, &batch)?;
            let (_, dlogits) = loss::binary_ce_grad(&trace.logits, &targets);
            let (grads, _) = backward_trace(model, &trace, &dlogits);
            sgd_step(model, &grads, lr)?;
        }
    }
    Ok(())
}

/// Trains one attack model per class dataset. Deterministic per seed; a
/// class whose dataset carries a single membership label is an error.
pub fn train_attack_suite(
    attack_datasets: &BTreeMap<usize, AttackDataset>,
    seed: u64,
) -> Result<AttackSuite, AttackError> {
    if attack_datasets.is_empty() {
        return Err(AttackError::NoAttackData);
    }
    let mut models = BTreeMap::new();
    for (&class, data) in attack_datasets {
        let members = data.member_count();
        if members == 0 || members == data.len() {
            return Err(AttackError::SingleLabelClass(class));
        }
        let width = data.features[0].len();
        let class_seed = rng::mix(rng::mix(seed, tags::ATTACK), class as u64);
        let mut model = nn::init_model(attack_architecture(width), class_seed);
        train_binary(
            &mut model,
            data,
            ATTACK_EPOCHS,
            ATTACK_LR,
            ATTACK_BATCH,
            class_seed,
        )?;
        models.insert(class, model);
    }
    Ok(AttackSuite { models })
}

impl AttackSuite {
    pub fn classes(&self) -> Vec<usize> {
        self.models.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Sigmoid membership probability from a prediction vector, using the
    /// attack model for the given class.
    pub fn member_probability(&self, class: usize, prediction: &[f32]) -> Result<f32, AttackError> {
        let model = self
            .models
            .get(&class)
            .ok_or(AttackError::MissingClassModel(class))?;
        let expected = model.arch().input_shape()[0];
        if prediction.len() != expected {
            return Err(AttackError::BadPredictionWidth {
                expected,
                found: prediction.len(),
            });
        }
        let batch = Tensor::from_vec(vec![1, expected], prediction.to_vec())
            .map_err(|_| AttackError::Nn(nn::NnError::NonFiniteOutput))?;
        let logits = nn::forward(model, &batch)?;
        Ok(loss::sigmoid(logits.values()[0]))
    }

    /// Hard membership decision at the 0.5 threshold.
    pub fn predicts_member(&self, class: usize, prediction: &[f32]) -> Result<bool, AttackError> {
        Ok(self.member_probability(class, prediction)? >= 0.5)
    }
}

/// Recall of the membership attack against a target model: the fraction of
/// actual members of the probe set that the attack flags as members.
/// Non-member probes cannot change recall and are ignored. Ground truth is
/// evaluator-side knowledge only.
pub fn membership_recall(
    suite: &AttackSuite,
    target_model: &Model,
    probe_examples: &Dataset,
    ground_truth_members: &BTreeSet<u64>,
) -> Result<f32, AttackError> {
    let class_count = target_model.class_count();
    let member_idx: Vec<usize> = probe_examples
        .examples()
        .iter()
        .enumerate()
        .filter(|(_, e)| ground_truth_members.contains(&e.id))
        .map(|(i, _)| i)
        .collect();
    if member_idx.is_empty() {
        return Err(AttackError::NoPositives);
    }
    let mut true_positives = 0usize;
    for chunk in member_idx.chunks(256) {
        let (batch, labels, _) = probe_examples.batch(chunk);
        let logits = nn::forward(target_model, &batch)?;
        let probs = loss::softmax_rows(&logits);
        for (s, &label) in labels.iter().enumerate() {
            let row = &probs.values()[s * class_count..(s + 1) * class_count];
            if suite.predicts_member(label, row)? {
                true_positives += 1;
            }
        }
    }
    Ok((true_positives as f64 / member_idx.len() as f64) as f32)
}
