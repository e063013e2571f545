//! The train -> remove -> attack -> report pipeline.
//!
//! One experiment produces a metrics row per phase using the row convention
//! `0` (trained), `0'` (immediately after the removal step, before any
//! retraining), then `1`, `2`, ... for each post-removal training epoch.
//! For naive retraining and relabel unlearning the `0'` row equals the `0`
//! row (only the dataset changed); for amnesiac unlearning it reflects the
//! batch subtraction.
//!
//! Everything is derived from (config, seed): metrics files are byte-stable
//! across runs. Wall-clock timings are inherently unstable and therefore go
//! to a separate `timings.csv`.

use crate::config::{
    DatasetSpec, ExperimentConfig, JournalChoice, RemovalSpec, TargetSpec,
};
use crate::HarnessError;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;
use unlearn_core::attacks::{
    self, build_attack_dataset, membership_recall, train_attack_suite, train_shadows,
    AttackSuite, InversionConfig, ManifestEntry, ShadowConfig,
};
use unlearn_core::data::{self, Dataset, SubsetFilter};
use unlearn_core::journal::Journal;
use unlearn_core::nn::{self, accuracy, Architecture, LayerSpec, Model, NnError, TrainConfig};
use unlearn_core::removal::{
    amnesiac_unlearn, dataset_without, relabel, RemovalMethod, SensitiveSelector,
};
use unlearn_core::rng::{self, tags};

const TAG_POOL: u64 = 0x101;
const TAG_POST: u64 = 0x102;

/// How much of the pipeline a CLI verb runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineScope {
    /// Train and evaluate only.
    TrainOnly,
    /// Train, remove, and track accuracy across post-removal epochs.
    Removal,
    /// Full pipeline including the configured attacks.
    RemovalWithAttacks,
}

/// One phase of an experiment, in Table-1 row form.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub phase: String,
    pub target_accuracy: Option<f64>,
    pub non_target_accuracy: Option<f64>,
    pub membership_recall: Option<f64>,
    pub inversion_score: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub rows: Vec<MetricsRow>,
    pub out_dir: PathBuf,
}

pub(crate) fn write_file(path: &Path, content: &str) -> Result<(), HarnessError> {
    std::fs::write(path, content).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.8}")).unwrap_or_default()
}

/// Renders metrics.csv content (deterministic; no wall times).
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out =
        String::from("phase,target_accuracy,non_target_accuracy,membership_recall,inversion_score\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.phase,
            opt(r.target_accuracy),
            opt(r.non_target_accuracy),
            opt(r.membership_recall),
            opt(r.inversion_score),
        );
    }
    out
}

fn timings_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("phase,wall_time_s\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.6}", r.phase, r.wall_time_s);
    }
    out
}

struct BuiltData {
    train: Dataset,
    test: Dataset,
    pool: Option<Dataset>,
}

fn build_dataset(config: &ExperimentConfig) -> Result<Dataset, HarnessError> {
    Ok(match &config.dataset {
        DatasetSpec::Digits { per_class, noise } => {
            data::synth_digits(*per_class, *noise, config.seed)
        }
        DatasetSpec::Blobs {
            classes,
            per_class,
            dim,
            spread,
        } => data::synth_blobs(*classes, *per_class, *dim, *spread, config.seed),
        DatasetSpec::Idx { images, labels, .. } => data::load_idx(images, labels)?,
    })
}

fn build_data(config: &ExperimentConfig, needs_pool: bool) -> Result<BuiltData, HarnessError> {
    let full = build_dataset(config)?;
    let (work, test) = match &config.dataset {
        DatasetSpec::Idx {
            test_images: Some(ti),
            test_labels: Some(tl),
            ..
        } => (full, data::load_idx(ti, tl)?),
        _ => {
            let train_fraction = 1.0 - config.test_fraction;
            if config.stratified {
                data::split_stratified(&full, train_fraction, config.seed)?
            } else {
                data::split(&full, train_fraction, config.seed)?
            }
        }
    };
    if needs_pool {
        let (train, pool) = if config.stratified {
            data::split_stratified(&work, 0.5, rng::mix(config.seed, TAG_POOL))?
        } else {
            data::split(&work, 0.5, rng::mix(config.seed, TAG_POOL))?
        };
        Ok(BuiltData {
            train,
            test,
            pool: Some(pool),
        })
    } else {
        Ok(BuiltData {
            train: work,
            test,
            pool: None,
        })
    }
}

pub(crate) fn resolve_arch(
    config: &ExperimentConfig,
    dataset: &Dataset,
) -> Result<Architecture, HarnessError> {
    if let Some(arch) = &config.arch {
        if arch.input_shape() != dataset.feature_shape() {
            return Err(HarnessError::Invalid(format!(
                "arch input shape {:?} does not match dataset feature shape {:?}",
                arch.input_shape(),
                dataset.feature_shape()
            )));
        }
        if arch.class_count() < dataset.class_count() {
            return Err(HarnessError::Invalid(format!(
                "arch has {} outputs but the dataset has {} classes",
                arch.class_count(),
                dataset.class_count()
            )));
        }
        return Ok(arch.clone());
    }
    // Default: MNIST-scale MLP over the flattened features.
    let shape = dataset.feature_shape().to_vec();
    let flat: usize = shape.iter().product();
    let mut layers = Vec::new();
    if shape.len() > 1 {
        layers.push(LayerSpec::Flatten);
    }
    layers.extend([
        LayerSpec::Dense { input: flat, output: 256 },
        LayerSpec::Relu,
        LayerSpec::Dense { input: 256, output: 128 },
        LayerSpec::Relu,
        LayerSpec::Dense { input: 128, output: dataset.class_count() },
    ]);
    Ok(Architecture::new(shape, layers)?)
}

fn resolve_selector(
    target: &TargetSpec,
    train: &Dataset,
    seed: u64,
) -> Result<SensitiveSelector, HarnessError> {
    Ok(match target {
        TargetSpec::Class(c) => {
            if *c >= train.class_count() {
                return Err(HarnessError::Invalid(format!(
                    "removal.target class {c} out of range for {} classes",
                    train.class_count()
                )));
            }
            SensitiveSelector::Class(*c)
        }
        TargetSpec::Ids(ids) => SensitiveSelector::Examples(ids.iter().copied().collect()),
        TargetSpec::Sample(k) => {
            if *k > train.len() {
                return Err(HarnessError::Invalid(format!(
                    "removal.target sample:{k} exceeds the {} training examples",
                    train.len()
                )));
            }
            let mut order: Vec<u64> = train.examples().iter().map(|e| e.id).collect();
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng::keyed(rng::mix(seed, tags::PROBE), 0));
            SensitiveSelector::Examples(order[..*k].iter().copied().collect())
        }
    })
}

fn phase_file_tag(label: &str) -> String {
    label.replace('\'', "prime")
}

struct AttackContext {
    suite: Option<AttackSuite>,
    oracle: Option<Model>,
    inversion_class: usize,
    manifest: Vec<ManifestEntry>,
}

struct PhaseMeasurer<'a> {
    config: &'a ExperimentConfig,
    train_ds: &'a Dataset,
    test_ds: &'a Dataset,
    selector: Option<&'a SensitiveSelector>,
    sensitive_ids: BTreeSet<u64>,
    attacks: AttackContext,
    out_dir: &'a Path,
}

impl<'a> PhaseMeasurer<'a> {
    fn accuracy_opt(
        &self,
        model: &Model,
        ds: &Dataset,
        filter: &SubsetFilter,
    ) -> Result<Option<f64>, HarnessError> {
        match accuracy(model, ds, filter) {
            Ok(a) => Ok(Some(a)),
            Err(NnError::EmptySelection) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn measure(
        &mut self,
        model: &Model,
        phase_idx: u64,
        label: &str,
        wall_time_s: f64,
        with_attacks: bool,
    ) -> Result<MetricsRow, HarnessError> {
        let (target_accuracy, non_target_accuracy) = match self.selector {
            Some(SensitiveSelector::Class(c)) => (
                self.accuracy_opt(model, self.test_ds, &SubsetFilter::Class(*c))?,
                self.accuracy_opt(model, self.test_ds, &SubsetFilter::NotClass(*c))?,
            ),
            Some(SensitiveSelector::Examples(_)) => (
                // Example-level targets are training points; measure them
                // directly and use the held-out set for non-target accuracy.
                self.accuracy_opt(
                    model,
                    self.train_ds,
                    &SubsetFilter::Ids(self.sensitive_ids.clone()),
                )?,
                self.accuracy_opt(model, self.test_ds, &SubsetFilter::All)?,
            ),
            None => (
                None,
                self.accuracy_opt(model, self.test_ds, &SubsetFilter::All)?,
            ),
        };

        let mut membership = None;
        let mut inversion = None;
        if with_attacks {
            if let Some(suite) = &self.attacks.suite {
                membership = Some(membership_recall(
                    suite,
                    model,
                    self.train_ds,
                    &self.sensitive_ids,
                )?);
            }
            if let Some(oracle) = &self.attacks.oracle {
                let mut total = 0.0f64;
                let runs = self.config.attack.inversion_runs.max(1);
                for run in 0..runs {
                    let inv_seed = rng::mix(
                        rng::mix(self.config.seed, tags::INVERT),
                        (phase_idx << 32) | run as u64,
                    );
                    let mut icfg = InversionConfig::new(self.attacks.inversion_class);
                    icfg.total_steps = self.config.attack.inversion_steps;
                    icfg.step_size = self.config.attack.inversion_step_size;
                    icfg.process_interval = self.config.attack.inversion_interval;
                    icfg.noise_scale = self.config.attack.inversion_noise;
                    icfg.seed = inv_seed;
                    let image = attacks::invert_class(model, &icfg)?;
                    let score =
                        attacks::recognizability_score(oracle, &image, icfg.target_class)?;
                    total += score as f64;
                    let file = format!(
                        "inversion_{}_run{}.pgm",
                        phase_file_tag(label),
                        run
                    );
                    attacks::write_pgm(self.out_dir.join(&file), &image)?;
                    self.attacks.manifest.push(ManifestEntry {
                        file,
                        seed: inv_seed,
                        steps: icfg.total_steps,
                        score,
                    });
                }
                inversion = Some(total / runs as f64);
            }
        }

        Ok(MetricsRow {
            phase: label.to_string(),
            target_accuracy,
            non_target_accuracy,
            membership_recall: membership,
            inversion_score: inversion,
            wall_time_s,
        })
    }
}

/// Out-dir preparation shared with the sweep pipeline.
pub(crate) fn run_sweep_prepare(config: &ExperimentConfig) -> Result<(), HarnessError> {
    prepare_out_dir(&config.out)
}

/// Train/test datasets for the sweep (no adversary pool).
pub(crate) fn build_sweep_data(
    config: &ExperimentConfig,
) -> Result<(Dataset, Dataset), HarnessError> {
    let data = build_data(config, false)?;
    Ok((data.train, data.test))
}

fn prepare_out_dir(path: &Path) -> Result<(), HarnessError> {
    if path.exists() {
        let mut entries = path.read_dir().map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if entries.next().is_some() {
            return Err(HarnessError::OutDirNotEmpty(path.to_path_buf()));
        }
    } else {
        std::fs::create_dir_all(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

/// Runs one experiment. Emits `metrics.csv` (one row per phase),
/// `timings.csv`, `resolved_config.txt`, a human-readable `summary.txt`,
/// a journal file when journaling is on, and inversion PGMs plus a manifest
/// when the inversion attack is enabled. Fully deterministic under the seed;
/// the output directory is removed again if the experiment fails.
pub fn run_experiment(
    config: &ExperimentConfig,
    scope: PipelineScope,
) -> Result<ExperimentOutput, HarnessError> {
    prepare_out_dir(&config.out)?;
    match run_inner(config, scope) {
        Ok(out) => Ok(out),
        Err(e) => {
            let _ = std::fs::remove_dir_all(&config.out);
            Err(e)
        }
    }
}

fn run_inner(
    config: &ExperimentConfig,
    scope: PipelineScope,
) -> Result<ExperimentOutput, HarnessError> {
    let out_dir = config.out.clone();
    let removal = match scope {
        PipelineScope::TrainOnly => config.removal.as_ref(),
        _ => Some(config.removal_required()?),
    };
    let with_attacks = scope == PipelineScope::RemovalWithAttacks;
    if with_attacks && !config.attack.membership && !config.attack.inversion {
        return Err(HarnessError::Invalid(
            "attack runs need attack.membership or attack.inversion enabled".into(),
        ));
    }
    let needs_pool = with_attacks && config.attack.membership;
    let data = build_data(config, needs_pool)?;
    let arch = resolve_arch(config, &data.train)?;

    let selector = match removal {
        Some(spec) => Some(resolve_selector(&spec.target, &data.train, config.seed)?),
        None => None,
    };
    let sensitive_ids = match &selector {
        Some(sel) => sel.resolve(&data.train).map_err(HarnessError::from)?,
        None => BTreeSet::new(),
    };

    // Attack preparation is independent of the removal method, so it happens
    // once up front: shadows and the per-class attack suite from the
    // adversary's pool, and a held-out oracle for scoring inversions.
    let mut attacks_ctx = AttackContext {
        suite: None,
        oracle: None,
        inversion_class: 0,
        manifest: Vec::new(),
    };
    if with_attacks && config.attack.membership {
        let pool = data.pool.as_ref().expect("pool built for membership");
        let shadow_cfg = ShadowConfig {
            shadow_count: config.attack.shadows,
            shadow_epochs: config.attack.shadow_epochs,
            split_seed: rng::mix(config.seed, tags::SHADOW_SPLIT),
        };
        let shadows = train_shadows(pool, &arch, &shadow_cfg, &config.train)?;
        let datasets = build_attack_dataset(&shadows, pool)?;
        attacks_ctx.suite = Some(train_attack_suite(
            &datasets,
            rng::mix(config.seed, tags::ATTACK),
        )?);
    }
    if with_attacks && config.attack.inversion {
        if data.train.feature_shape().len() < 2 {
            return Err(HarnessError::Invalid(
                "attack.inversion needs an image-shaped dataset".into(),
            ));
        }
        let inversion_class = match config.attack.inversion_class {
            Some(c) => c,
            None => match &selector {
                Some(SensitiveSelector::Class(c)) => *c,
                _ => 3,
            },
        };
        if inversion_class >= data.train.class_count() {
            return Err(HarnessError::Invalid(format!(
                "attack.inversion_class {inversion_class} out of range for {} classes",
                data.train.class_count()
            )));
        }
        attacks_ctx.inversion_class = inversion_class;
        // The oracle trains on everything available to the experimenter and
        // is never subject to removal.
        let mut oracle = nn::init_model(arch.clone(), rng::mix(config.seed, tags::ORACLE));
        let oracle_cfg = config
            .train
            .clone()
            .with_seed(rng::mix(config.seed, tags::ORACLE));
        nn::train(&mut oracle, &data.train, &oracle_cfg, None)?;
        attacks_ctx.oracle = Some(oracle);
    }

    // Train the target, journaling per configuration.
    let journal_choice = config.journal.unwrap_or(match removal {
        Some(spec) if spec.method == RemovalMethod::AmnesiacUnlearn => JournalChoice::Full,
        _ => JournalChoice::Off,
    });
    let mut model = nn::init_model(arch.clone(), config.seed);
    let mut journal = match journal_choice {
        JournalChoice::Off => None,
        JournalChoice::Full => Some(Journal::new_full(format!("train-{}", config.seed), &model)),
        JournalChoice::Watchlist => Some(Journal::new_watchlist(
            format!("train-{}", config.seed),
            &model,
            sensitive_ids.clone(),
        )),
    };
    let train_start = Instant::now();
    nn::train(&mut model, &data.train, &config.train, journal.as_mut())?;
    let train_wall = train_start.elapsed().as_secs_f64();
    if let Some(journal) = &journal {
        journal.save(out_dir.join("journal.amnj"))?;
    }

    let mut measurer = PhaseMeasurer {
        config,
        train_ds: &data.train,
        test_ds: &data.test,
        selector: selector.as_ref(),
        sensitive_ids: sensitive_ids.clone(),
        attacks: attacks_ctx,
        out_dir: &out_dir,
    };

    let mut rows = Vec::new();
    rows.push(measurer.measure(&model, 0, "0", train_wall, with_attacks)?);

    let mut post_note = String::new();
    if let Some(spec) = removal {
        if scope != PipelineScope::TrainOnly {
            let sel = selector.as_ref().expect("selector resolved with removal");
            // Apply the removal step.
            let (mut current, post_ds, zero_prime_wall) = match spec.method {
                RemovalMethod::NaiveRetrain => {
                    let start = Instant::now();
                    let post = dataset_without(&data.train, &sensitive_ids)?;
                    (model.clone(), Some(post), start.elapsed().as_secs_f64())
                }
                RemovalMethod::RelabelUnlearn => {
                    let start = Instant::now();
                    let post = relabel(&data.train, sel, spec.copies, config.seed)?;
                    (model.clone(), Some(post), start.elapsed().as_secs_f64())
                }
                RemovalMethod::AmnesiacUnlearn => {
                    let journal = journal.as_ref().ok_or_else(|| {
                        HarnessError::Invalid(
                            "amnesiac unlearning requires journal.mode full or watchlist".into(),
                        )
                    })?;
                    let (protected, report) =
                        amnesiac_unlearn(&model, journal, &data.train, sel)?;
                    let post = if spec.fine_tune {
                        Some(dataset_without(&data.train, &sensitive_ids)?)
                    } else {
                        None
                    };
                    (protected, post, report.wall_time.as_secs_f64())
                }
            };
            rows.push(measurer.measure(&current, 1, "0'", zero_prime_wall, with_attacks)?);

            if let Some(post_ds) = post_ds {
                for epoch in 1..=spec.post_epochs {
                    let cfg = TrainConfig {
                        epochs: 1,
                        batch_size: config.train.batch_size.min(post_ds.len()),
                        learning_rate: spec.post_lr,
                        seed: rng::mix(rng::mix(config.seed, TAG_POST), epoch as u64),
                        shuffle: config.train.shuffle,
                    };
                    let start = Instant::now();
                    nn::train(&mut current, &post_ds, &cfg, None)?;
                    let wall = start.elapsed().as_secs_f64();
                    let label = epoch.to_string();
                    rows.push(measurer.measure(
                        &current,
                        1 + epoch as u64,
                        &label,
                        wall,
                        with_attacks,
                    )?);
                }
            } else {
                post_note = "post-removal training skipped (removal.fine_tune = false)\n".into();
            }
        }
    }

    if !measurer.attacks.manifest.is_empty() {
        attacks::write_manifest(out_dir.join("inversion_manifest.txt"), &measurer.attacks.manifest)?;
    }
    write_file(&out_dir.join("metrics.csv"), &metrics_csv(&rows))?;
    write_file(&out_dir.join("timings.csv"), &timings_csv(&rows))?;
    write_file(&out_dir.join("resolved_config.txt"), &config.resolved_lines())?;
    let summary = render_summary(config, removal, &data, &arch, &rows, &post_note);
    write_file(&out_dir.join("summary.txt"), &summary)?;

    Ok(ExperimentOutput { rows, out_dir })
}

fn render_summary(
    config: &ExperimentConfig,
    removal: Option<&RemovalSpec>,
    data: &BuiltData,
    arch: &Architecture,
    rows: &[MetricsRow],
    post_note: &str,
) -> String {
    let mut s = String::new();
    let method = removal.map(|r| r.method.name()).unwrap_or("train");
    let _ = writeln!(s, "experiment summary");
    let _ = writeln!(s, "==================");
    let _ = writeln!(s, "method: {method}");
    let _ = writeln!(
        s,
        "data: train={} test={} pool={}",
        data.train.len(),
        data.test.len(),
        data.pool.as_ref().map(|p| p.len()).unwrap_or(0)
    );
    let _ = writeln!(s, "architecture: {arch}");
    let _ = writeln!(s, "seed: {}", config.seed);
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<6} {:>14} {:>18} {:>12} {:>12}",
        "phase", "target_acc", "non_target_acc", "recall", "inversion"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<6} {:>14} {:>18} {:>12} {:>12}",
            r.phase,
            opt(r.target_accuracy),
            opt(r.non_target_accuracy),
            opt(r.membership_recall),
            opt(r.inversion_score),
        );
    }
    if !post_note.is_empty() {
        let _ = writeln!(s);
        s.push_str(post_note);
    }
    if rows.iter().any(|r| r.inversion_score.is_some()) {
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "inversion_score is an oracle-probability proxy; the emitted PGM \
             images are the primary visual channel."
        );
    }
    s
}
