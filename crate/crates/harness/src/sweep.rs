//! Removal-fraction sweep: how much accuracy survives as a growing fraction
//! of random batches is amnesiac-unlearned from a trained model.

use crate::config::{ExperimentConfig, JournalChoice};
use crate::experiment::write_file;
use crate::HarnessError;
use std::fmt::Write as _;
use std::path::PathBuf;
use unlearn_core::data::SubsetFilter;
use unlearn_core::journal::Journal;
use unlearn_core::nn::{self, accuracy};
use unlearn_core::rng::{self, tags};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub fraction: f64,
    pub run: u32,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub fraction: f64,
    pub runs: u32,
    pub mean_accuracy: f64,
    pub min_accuracy: f64,
    pub max_accuracy: f64,
}

#[derive(Debug)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub cells: Vec<SweepCell>,
    pub out_dir: PathBuf,
}

/// Trains one journaled model, then for each fraction removes that share of
/// randomly selected batches (amnesiac subtraction) and records all-class
/// test accuracy, averaged over `runs` random batch selections. Fraction 0
/// leaves the model untouched, so its accuracy equals the trained model's
/// exactly.
pub fn sweep_removal_fraction(
    config: &ExperimentConfig,
    fractions: &[f64],
    runs: u32,
) -> Result<SweepOutput, HarnessError> {
    if runs == 0 {
        return Err(HarnessError::Invalid("sweep needs runs >= 1".into()));
    }
    if fractions.is_empty() {
        return Err(HarnessError::Invalid("sweep needs at least one fraction".into()));
    }
    for f in fractions {
        if !(0.0..=1.0).contains(f) {
            return Err(HarnessError::Invalid(format!(
                "sweep fractions must lie in [0,1], got {f}"
            )));
        }
    }

    crate::experiment::run_sweep_prepare(config)?;
    let result = sweep_inner(config, fractions, runs);
    if result.is_err() {
        let _ = std::fs::remove_dir_all(&config.out);
    }
    result
}

fn sweep_inner(
    config: &ExperimentConfig,
    fractions: &[f64],
    runs: u32,
) -> Result<SweepOutput, HarnessError> {
    let data = crate::experiment::build_sweep_data(config)?;
    let arch = crate::experiment::resolve_arch(config, &data.0)?;
    let (train_ds, test_ds) = data;

    let mut model = nn::init_model(arch, config.seed);
    let journal_choice = config.journal.unwrap_or(JournalChoice::Full);
    let mut journal = match journal_choice {
        JournalChoice::Full => Journal::new_full(format!("sweep-{}", config.seed), &model),
        JournalChoice::Watchlist => {
            return Err(HarnessError::Invalid(
                "sweep requires journal.mode = full (every batch must be coverable)".into(),
            ));
        }
        JournalChoice::Off => {
            return Err(HarnessError::Invalid(
                "sweep requires journaling; set journal.mode = full".into(),
            ));
        }
    };
    nn::train(&mut model, &train_ds, &config.train, Some(&mut journal))?;

    let all_keys = journal.all_keys();
    let total = all_keys.len();
    let available = journal.delta_count();
    let mut cells = Vec::new();
    let mut rows = Vec::new();
    for (fi, &fraction) in fractions.iter().enumerate() {
        let k = (fraction * total as f64).round() as usize;
        if k > available {
            return Err(HarnessError::SweepCoverage {
                needed: k,
                available,
            });
        }
        let mut sum = 0.0f64;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for run in 0..runs {
            let mut keys = all_keys.clone();
            let mut rng = rng::keyed(
                rng::mix(config.seed, tags::SWEEP),
                (fi as u64) << 32 | run as u64,
            );
            // Partial Fisher-Yates: the first k entries are the sample.
            use rand::Rng;
            for i in 0..k {
                let j = rng.gen_range(i..keys.len());
                keys.swap(i, j);
            }
            let subtract = journal.sum_deltas(&keys[..k])?;
            let mut undone = model.clone();
            undone.params_mut().sub_assign_flat(&subtract);
            let acc = accuracy(&undone, &test_ds, &SubsetFilter::All)?;
            sum += acc;
            min = min.min(acc);
            max = max.max(acc);
            cells.push(SweepCell {
                fraction,
                run,
                accuracy: acc,
            });
        }
        rows.push(SweepRow {
            fraction,
            runs,
            mean_accuracy: sum / runs as f64,
            min_accuracy: min,
            max_accuracy: max,
        });
    }

    let mut csv = String::from("fraction,runs,mean_accuracy,min_accuracy,max_accuracy\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{:.8},{:.8},{:.8}",
            r.fraction, r.runs, r.mean_accuracy, r.min_accuracy, r.max_accuracy
        );
    }
    write_file(&config.out.join("sweep.csv"), &csv)?;
    let mut detail = String::from("fraction,run,accuracy\n");
    for c in &cells {
        let _ = writeln!(detail, "{},{},{:.8}", c.fraction, c.run, c.accuracy);
    }
    write_file(&config.out.join("sweep_runs.csv"), &detail)?;
    write_file(&config.out.join("resolved_config.txt"), &config.resolved_lines())?;

    Ok(SweepOutput {
        rows,
        cells,
        out_dir: config.out.clone(),
    })
}
