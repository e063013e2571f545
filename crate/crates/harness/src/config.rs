//! Experiment configuration: a flat key-value text file with dotted section
//! keys, environment-variable overrides, and defaults for everything except
//! the dataset and the removal method.
//!
//! File format: one `key = value` per line, `#` starts a comment. Any key can
//! be overridden by an environment variable named `UNLEARN_<KEY>` with dots
//! replaced by double underscores and letters uppercased, e.g.
//! `UNLEARN_TRAIN__EPOCHS=8` overrides `train.epochs`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use thiserror::Error;
use unlearn_core::nn::Architecture;
use unlearn_core::removal::RemovalMethod;
use unlearn_core::TrainConfig;

pub const ENV_PREFIX: &str = "UNLEARN_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config line {line_no} is not `key = value`: {content:?}")]
    BadLine { line_no: usize, content: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("missing required config key `{0}`")]
    MissingKey(&'static str),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
}

/// Every key the config file understands.
pub const KNOWN_KEYS: &[&str] = &[
    "dataset.kind",
    "dataset.per_class",
    "dataset.noise",
    "dataset.classes",
    "dataset.dim",
    "dataset.spread",
    "dataset.images",
    "dataset.labels",
    "dataset.test_images",
    "dataset.test_labels",
    "dataset.test_fraction",
    "dataset.stratified",
    "arch",
    "train.epochs",
    "train.batch_size",
    "train.lr",
    "train.shuffle",
    "journal.mode",
    "removal.method",
    "removal.target",
    "removal.copies",
    "removal.post_epochs",
    "removal.post_lr",
    "removal.fine_tune",
    "attack.membership",
    "attack.shadows",
    "attack.shadow_epochs",
    "attack.probe_count",
    "attack.inversion",
    "attack.inversion_class",
    "attack.inversion_steps",
    "attack.inversion_step_size",
    "attack.inversion_interval",
    "attack.inversion_noise",
    "attack.inversion_runs",
    "seed",
    "out",
];

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Digits {
        per_class: usize,
        noise: f32,
    },
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        spread: f32,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JournalChoice {
    Off,
    Full,
    Watchlist,
}

/// Which data a removal run targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetSpec {
    /// A whole class.
    Class(usize),
    /// Explicit example ids.
    Ids(Vec<u64>),
    /// A seed-deterministic sample of k training examples.
    Sample(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemovalSpec {
    pub method: RemovalMethod,
    pub target: TargetSpec,
    pub copies: u32,
    pub post_epochs: u32,
    pub post_lr: f32,
    pub fine_tune: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub membership: bool,
    pub shadows: usize,
    pub shadow_epochs: u32,
    pub inversion: bool,
    pub inversion_class: Option<usize>,
    pub inversion_steps: u32,
    pub inversion_step_size: f32,
    pub inversion_interval: u32,
    pub inversion_noise: f32,
    pub inversion_runs: u32,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub arch: Option<Architecture>,
    pub train: TrainConfig,
    /// `None` means auto: full journaling for amnesiac runs, off otherwise.
    pub journal: Option<JournalChoice>,
    pub removal: Option<RemovalSpec>,
    pub attack: AttackSpec,
    pub test_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
    pub out: PathBuf,
    resolved: BTreeMap<String, String>,
}

struct KeyMap {
    values: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: BTreeMap<String, String>,
}

impl KeyMap {
    fn get(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        let v = self.values.get(key).cloned();
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.clone());
        }
        v
    }

    fn get_or(&mut self, key: &str, default: &str) -> String {
        let v = self.get(key).unwrap_or_else(|| default.to_string());
        self.resolved.insert(key.to_string(), v.clone());
        v
    }
}

fn env_var_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "__").to_uppercase())
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        reason: format!("{e} (got {value:?})"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(ConfigError::BadValue {
            key: key.to_string(),
            reason: format!("expected a boolean, got {other:?}"),
        }),
    }
}

impl ExperimentConfig {
    /// Reads, parses, and applies environment overrides.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut map = Self::parse_lines(&text)?;
        for key in KNOWN_KEYS {
            if let Ok(value) = std::env::var(env_var_name(key)) {
                map.insert(key.to_string(), value);
            }
        }
        Self::build(map)
    }

    /// Parses config text without touching the environment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::build(Self::parse_lines(text)?)
    }

    fn parse_lines(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::BadLine {
                line_no: i + 1,
                content: line.to_string(),
            })?;
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(map)
    }

    fn build(values: BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut map = KeyMap {
            values,
            used: BTreeSet::new(),
            resolved: BTreeMap::new(),
        };

        let dataset = {
            let kind = map
                .get("dataset.kind")
                .ok_or(ConfigError::MissingKey("dataset.kind"))?;
            match kind.as_str() {
                "digits" => DatasetSpec::Digits {
                    per_class: parse_num("dataset.per_class", &map.get_or("dataset.per_class", "300"))?,
                    noise: parse_num("dataset.noise", &map.get_or("dataset.noise", "0.08"))?,
                },
                "blobs" => DatasetSpec::Blobs {
                    classes: parse_num("dataset.classes", &map.get_or("dataset.classes", "10"))?,
                    per_class: parse_num("dataset.per_class", &map.get_or("dataset.per_class", "300"))?,
                    dim: parse_num("dataset.dim", &map.get_or("dataset.dim", "32"))?,
                    spread: parse_num("dataset.spread", &map.get_or("dataset.spread", "0.15"))?,
                },
                "idx" => DatasetSpec::Idx {
                    images: PathBuf::from(
                        map.get("dataset.images")
                            .ok_or(ConfigError::MissingKey("dataset.images"))?,
                    ),
                    labels: PathBuf::from(
                        map.get("dataset.labels")
                            .ok_or(ConfigError::MissingKey("dataset.labels"))?,
                    ),
                    test_images: map.get("dataset.test_images").map(PathBuf::from),
                    test_labels: map.get("dataset.test_labels").map(PathBuf::from),
                },
                other => {
                    return Err(ConfigError::BadValue {
                        key: "dataset.kind".into(),
                        reason: format!("expected digits|blobs|idx, got {other:?}"),
                    });
                }
            }
        };

        let arch = match map.get("arch") {
            Some(s) => Some(s.parse::<Architecture>().map_err(|e| ConfigError::BadValue {
                key: "arch".into(),
                reason: e.to_string(),
            })?),
            None => None,
        };

        let seed: u64 = parse_num("seed", &map.get_or("seed", "42"))?;
        let train = TrainConfig {
            epochs: parse_num("train.epochs", &map.get_or("train.epochs", "3"))?,
            batch_size: parse_num("train.batch_size", &map.get_or("train.batch_size", "32"))?,
            learning_rate: parse_num("train.lr", &map.get_or("train.lr", "0.1"))?,
            seed,
            shuffle: parse_bool("train.shuffle", &map.get_or("train.shuffle", "true"))?,
        };

        let journal = match map.get("journal.mode").as_deref() {
            None => None,
            Some("off") => Some(JournalChoice::Off),
            Some("full") => Some(JournalChoice::Full),
            Some("watchlist") => Some(JournalChoice::Watchlist),
            Some(other) => {
                return Err(ConfigError::BadValue {
                    key: "journal.mode".into(),
                    reason: format!("expected off|full|watchlist, got {other:?}"),
                });
            }
        };

        let removal = match map.get("removal.method").as_deref() {
            None => None,
            Some(method) => {
                let method = match method {
                    "naive" => RemovalMethod::NaiveRetrain,
                    "unlearning" | "relabel" => RemovalMethod::RelabelUnlearn,
                    "amnesiac" => RemovalMethod::AmnesiacUnlearn,
                    other => {
                        return Err(ConfigError::BadValue {
                            key: "removal.method".into(),
                            reason: format!("expected naive|unlearning|amnesiac, got {other:?}"),
                        });
                    }
                };
                let target = parse_target(&map.get_or("removal.target", "class:3"))?;
                let post_lr = match map.get("removal.post_lr") {
                    Some(v) => parse_num("removal.post_lr", &v)?,
                    None => train.learning_rate,
                };
                Some(RemovalSpec {
                    method,
                    target,
                    copies: parse_num("removal.copies", &map.get_or("removal.copies", "3"))?,
                    post_epochs: parse_num(
                        "removal.post_epochs",
                        &map.get_or("removal.post_epochs", "5"),
                    )?,
                    post_lr,
                    fine_tune: parse_bool(
                        "removal.fine_tune",
                        &map.get_or("removal.fine_tune", "true"),
                    )?,
                })
            }
        };

        let attack = AttackSpec {
            membership: parse_bool("attack.membership", &map.get_or("attack.membership", "true"))?,
            shadows: parse_num("attack.shadows", &map.get_or("attack.shadows", "16"))?,
            shadow_epochs: parse_num(
                "attack.shadow_epochs",
                &map.get_or("attack.shadow_epochs", "10"),
            )?,
            inversion: parse_bool("attack.inversion", &map.get_or("attack.inversion", "true"))?,
            inversion_class: match map.get("attack.inversion_class") {
                Some(v) => Some(parse_num("attack.inversion_class", &v)?),
                None => None,
            },
            inversion_steps: parse_num(
                "attack.inversion_steps",
                &map.get_or("attack.inversion_steps", "5000"),
            )?,
            inversion_step_size: parse_num(
                "attack.inversion_step_size",
                &map.get_or("attack.inversion_step_size", "0.1"),
            )?,
            inversion_interval: parse_num(
                "attack.inversion_interval",
                &map.get_or("attack.inversion_interval", "750"),
            )?,
            inversion_noise: parse_num(
                "attack.inversion_noise",
                &map.get_or("attack.inversion_noise", "0.1"),
            )?,
            inversion_runs: parse_num(
                "attack.inversion_runs",
                &map.get_or("attack.inversion_runs", "1"),
            )?,
        };

        let test_fraction: f64 =
            parse_num("dataset.test_fraction", &map.get_or("dataset.test_fraction", "0.2"))?;
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(ConfigError::BadValue {
                key: "dataset.test_fraction".into(),
                reason: format!("must lie strictly between 0 and 1, got {test_fraction}"),
            });
        }
        let stratified = parse_bool(
            "dataset.stratified",
            &map.get_or("dataset.stratified", "true"),
        )?;
        let out = PathBuf::from(map.get_or("out", "out"));

        // probe_count is accepted for compatibility with sample targets.
        if let Some(v) = map.get("attack.probe_count") {
            let _: usize = parse_num("attack.probe_count", &v)?;
        }

        for key in map.values.keys() {
            if !map.used.contains(key) {
                return Err(ConfigError::UnknownKey(key.clone()));
            }
        }

        Ok(ExperimentConfig {
            dataset,
            arch,
            train,
            journal,
            removal,
            attack,
            test_fraction,
            stratified,
            seed,
            out,
            resolved: map.resolved,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.resolved.insert("seed".into(), seed.to_string());
        self
    }

    pub fn with_out(mut self, out: PathBuf) -> Self {
        self.resolved
            .insert("out".into(), out.display().to_string());
        self.out = out;
        self
    }

    /// The removal spec, or an error naming the missing key.
    pub fn removal_required(&self) -> Result<&RemovalSpec, ConfigError> {
        self.removal
            .as_ref()
            .ok_or(ConfigError::MissingKey("removal.method"))
    }

    /// Deterministic `key = value` dump of every resolved setting.
    pub fn resolved_lines(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.resolved {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

fn parse_target(value: &str) -> Result<TargetSpec, ConfigError> {
    let bad = |reason: String| ConfigError::BadValue {
        key: "removal.target".into(),
        reason,
    };
    if let Some(rest) = value.strip_prefix("class:") {
        Ok(TargetSpec::Class(rest.trim().parse().map_err(|e| {
            bad(format!("bad class number: {e}"))
        })?))
    } else if let Some(rest) = value.strip_prefix("ids:") {
        let ids = rest
            .split(',')
            .map(|s| s.trim().parse::<u64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("bad id list: {e}")))?;
        if ids.is_empty() {
            return Err(bad("id list is empty".into()));
        }
        Ok(TargetSpec::Ids(ids))
    } else if let Some(rest) = value.strip_prefix("sample:") {
        let k: usize = rest
            .trim()
            .parse()
            .map_err(|e| bad(format!("bad sample count: {e}")))?;
        if k == 0 {
            return Err(bad("sample count must be positive".into()));
        }
        Ok(TargetSpec::Sample(k))
    } else {
        Err(bad(format!(
            "expected class:<n>, ids:<a,b,...>, or sample:<k>, got {value:?}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "dataset.kind = blobs\nremoval.method = amnesiac\n";

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.train.epochs, 3);
        let removal = cfg.removal.as_ref().unwrap();
        assert_eq!(removal.method, RemovalMethod::AmnesiacUnlearn);
        assert_eq!(removal.target, TargetSpec::Class(3));
        assert_eq!(removal.post_epochs, 5);
        assert!(cfg.attack.membership);
        assert_eq!(cfg.attack.shadows, 16);
        assert_eq!(cfg.attack.shadow_epochs, 10);
        assert_eq!(cfg.attack.inversion_steps, 5000);
    }

    #[test]
    fn unknown_key_is_an_error_naming_the_key() {
        let err = ExperimentConfig::parse("dataset.kind = blobs\nnope.key = 1\n").unwrap_err();
        match err {
            ConfigError::UnknownKey(k) => assert_eq!(k, "nope.key"),
            other => panic!("expected UnknownKey, got {other:?}"),
        }
    }

    #[test]
    fn bad_values_name_the_field() {
        let err =
            ExperimentConfig::parse("dataset.kind = blobs\ntrain.epochs = banana\n").unwrap_err();
        match err {
            ConfigError::BadValue { key, .. } => assert_eq!(key, "train.epochs"),
            other => panic!("expected BadValue, got {other:?}"),
        }
    }

    #[test]
    fn target_spellings() {
        let class = parse_target("class:7").unwrap();
        assert_eq!(class, TargetSpec::Class(7));
        let ids = parse_target("ids:1, 2,9").unwrap();
        assert_eq!(ids, TargetSpec::Ids(vec![1, 2, 9]));
        let sample = parse_target("sample:24").unwrap();
        assert_eq!(sample, TargetSpec::Sample(24));
        assert!(parse_target("everything").is_err());
    }

    #[test]
    fn resolved_lines_are_sorted_and_complete() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        let lines = cfg.resolved_lines();
        assert!(lines.contains("removal.method = amnesiac"));
        assert!(lines.contains("train.epochs = 3"));
        let keys: Vec<&str> = lines.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn env_override_applies() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.conf");
        std::fs::write(&path, MINIMAL).unwrap();
        std::env::set_var("UNLEARN_TRAIN__EPOCHS", "9");
        let cfg = ExperimentConfig::from_file(&path).unwrap();
        std::env::remove_var("UNLEARN_TRAIN__EPOCHS");
        assert_eq!(cfg.train.epochs, 9);
    }
}
