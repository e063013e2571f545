//! Dataset ingestion (IDX), synthetic fixtures, splits, and example identity.
//!
//! Example ids are unique and stable across shuffles and splits. Derived
//! examples (relabeled copies) get fresh ids linked back to their origin, so
//! no pipeline stage silently loses identity.

use crate::rng::{self, tags};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found} (expected {expected})")]
    BadMagic {
        path: String,
        expected: u32,
        found: u32,
    },
    #[error("{path}: file truncated")]
    Truncated { path: String },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("bad dimensions: {0}")]
    DimMismatch(String),
    #[error("label {label} out of range for {class_count} classes")]
    LabelOutOfRange { label: usize, class_count: usize },
    #[error("duplicate example id {0}")]
    DuplicateId(u64),
    #[error("example feature length {found} does not match shape {shape:?}")]
    FeatureMismatch { shape: Vec<usize>, found: usize },
    #[error("split fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error("split produced an empty side")]
    EmptySplit,
    #[error("dataset shape {0:?} cannot be written as IDX images")]
    NotImageShaped(Vec<usize>),
    #[error("class count {0} exceeds the 256 representable by IDX labels")]
    TooManyClasses(usize),
}

/// One labeled, identified example. Features are row-major in the dataset's
/// feature shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: u64,
    /// Id of the example this one was derived from, if any.
    pub origin: Option<u64>,
    pub features: Vec<f32>,
    pub label: usize,
}

/// Immutable collection of identified, labeled examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    feature_shape: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(
        feature_shape: Vec<usize>,
        class_count: usize,
        examples: Vec<Example>,
    ) -> Result<Self, DataError> {
        let feature_len: usize = feature_shape.iter().product();
        let mut seen = BTreeSet::new();
        for e in &examples {
            if e.label >= class_count {
                return Err(DataError::LabelOutOfRange {
                    label: e.label,
                    class_count,
                });
            }
            if e.features.len() != feature_len {
                return Err(DataError::FeatureMismatch {
                    shape: feature_shape,
                    found: e.features.len(),
                });
            }
            if !seen.insert(e.id) {
                return Err(DataError::DuplicateId(e.id));
            }
        }
        Ok(Dataset {
            examples,
            feature_shape,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn feature_shape(&self) -> &[usize] {
        &self.feature_shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn ids(&self) -> BTreeSet<u64> {
        self.examples.iter().map(|e| e.id).collect()
    }

    pub fn max_id(&self) -> Option<u64> {
        self.examples.iter().map(|e| e.id).max()
    }

    pub fn contains_id(&self, id: u64) -> bool {
        self.examples.iter().any(|e| e.id == id)
    }

    /// Assembles the examples at `indices` into a batch tensor plus labels
    /// and ids, in index order.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>, Vec<u64>) {
        let feature_len: usize = self.feature_shape.iter().product();
        let mut values = Vec::with_capacity(indices.len() * feature_len);
        let mut labels = Vec::with_capacity(indices.len());
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            let e = &self.examples[i];
            values.extend_from_slice(&e.features);
            labels.push(e.label);
            ids.push(e.id);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.feature_shape);
        (
            Tensor::from_vec(shape, values).expect("dataset features are finite"),
            labels,
            ids,
        )
    }

    /// A new dataset containing only the examples whose index passes `keep`.
    pub fn retain(&self, mut keep: impl FnMut(&Example) -> bool) -> Dataset {
        Dataset {
            examples: self.examples.iter().filter(|e| keep(e)).cloned().collect(),
            feature_shape: self.feature_shape.clone(),
            class_count: self.class_count,
        }
    }

    /// Same shape and class metadata, different examples.
    pub fn with_examples(&self, examples: Vec<Example>) -> Result<Dataset, DataError> {
        Dataset::new(self.feature_shape.clone(), self.class_count, examples)
    }
}

/// Selects a subset of a dataset by class or identity, or its complement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubsetFilter {
    All,
    Class(usize),
    NotClass(usize),
    Ids(BTreeSet<u64>),
    NotIds(BTreeSet<u64>),
}

impl SubsetFilter {
    pub fn select(&self, dataset: &Dataset) -> Vec<usize> {
        dataset
            .examples()
            .iter()
            .enumerate()
            .filter(|(_, e)| match self {
                SubsetFilter::All => true,
                SubsetFilter::Class(c) => e.label == *c,
                SubsetFilter::NotClass(c) => e.label != *c,
                SubsetFilter::Ids(ids) => ids.contains(&e.id),
                SubsetFilter::NotIds(ids) => !ids.contains(&e.id),
            })
            .map(|(i, _)| i)
            .collect()
    }
}

fn read_u32_be(r: &mut impl Read, path: &str) -> Result<u32, DataError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| DataError::Truncated {
        path: path.to_string(),
    })?;
    Ok(u32::from_be_bytes(buf))
}

/// Parses an IDX image/label file pair: big-endian magic 2051 (images) /
/// 2049 (labels), u32 dims, u8 pixels scaled from [0,255] to [0,1]. Ids are
/// assigned by file order.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset, DataError> {
    let ipath = images_path.as_ref().display().to_string();
    let lpath = labels_path.as_ref().display().to_string();
    let io_err = |path: &str| {
        let path = path.to_string();
        move |source: std::io::Error| DataError::Io { path, source }
    };

    let mut images = BufReader::new(File::open(&images_path).map_err(io_err(&ipath))?);
    let magic = read_u32_be(&mut images, &ipath)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            path: ipath,
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(&mut images, &ipath)? as usize;
    let rows = read_u32_be(&mut images, &ipath)? as usize;
    let cols = read_u32_be(&mut images, &ipath)? as usize;
    if rows == 0 || cols == 0 {
        return Err(DataError::DimMismatch(format!(
            "{ipath}: zero image dimension {rows}x{cols}"
        )));
    }
    let mut pixels = vec![0u8; count * rows * cols];
    images
        .read_exact(&mut pixels)
        .map_err(|_| DataError::Truncated { path: ipath })?;

    let mut labels_file = BufReader::new(File::open(&labels_path).map_err(io_err(&lpath))?);
    let magic = read_u32_be(&mut labels_file, &lpath)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: lpath,
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let label_count = read_u32_be(&mut labels_file, &lpath)? as usize;
    if label_count != count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let mut labels = vec![0u8; label_count];
    labels_file
        .read_exact(&mut labels)
        .map_err(|_| DataError::Truncated { path: lpath })?;

    let class_count = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(10).max(2);
    let feature_len = rows * cols;
    let examples = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| Example {
            id: i as u64,
            origin: None,
            features: pixels[i * feature_len..(i + 1) * feature_len]
                .iter()
                .map(|&p| p as f32 / 255.0)
                .collect(),
            label: label as usize,
        })
        .collect();
    Dataset::new(vec![1, rows, cols], class_count, examples)
}

/// Writes a dataset back out in the IDX layout read by [`load_idx`]. Pixel
/// values are rounded onto the 1/255 grid, so datasets whose values already
/// lie on that grid round-trip exactly.
pub fn save_idx(
    dataset: &Dataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<(), DataError> {
    let shape = dataset.feature_shape();
    let (rows, cols) = match shape {
        [1, r, c] => (*r, *c),
        [r, c] => (*r, *c),
        other => return Err(DataError::NotImageShaped(other.to_vec())),
    };
    if dataset.class_count() > 256 {
        return Err(DataError::TooManyClasses(dataset.class_count()));
    }
    let ipath = images_path.as_ref().display().to_string();
    let lpath = labels_path.as_ref().display().to_string();

    let mut images = BufWriter::new(File::create(&images_path).map_err(|source| DataError::Io {
        path: ipath.clone(),
        source,
    })?);
    let write_img = |w: &mut dyn Write, bytes: &[u8]| -> Result<(), DataError> {
        w.write_all(bytes).map_err(|source| DataError::Io {
            path: ipath.clone(),
            source,
        })
    };
    write_img(&mut images, &IDX_IMAGES_MAGIC.to_be_bytes())?;
    write_img(&mut images, &(dataset.len() as u32).to_be_bytes())?;
    write_img(&mut images, &(rows as u32).to_be_bytes())?;
    write_img(&mut images, &(cols as u32).to_be_bytes())?;
    for e in dataset.examples() {
        let bytes: Vec<u8> = e
            .features
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        write_img(&mut images, &bytes)?;
    }

    let mut labels = BufWriter::new(File::create(&labels_path).map_err(|source| DataError::Io {
        path: lpath.clone(),
        source,
    })?);
    let write_lbl = |w: &mut dyn Write, bytes: &[u8]| -> Result<(), DataError> {
        w.write_all(bytes).map_err(|source| DataError::Io {
            path: lpath.clone(),
            source,
        })
    };
    write_lbl(&mut labels, &IDX_LABELS_MAGIC.to_be_bytes())?;
    write_lbl(&mut labels, &(dataset.len() as u32).to_be_bytes())?;
    for e in dataset.examples() {
        write_lbl(&mut labels, &[e.label as u8])?;
    }
    Ok(())
}

/// Gaussian clusters around seed-deterministic centers in the unit cube.
/// Linearly separable when `spread` is small; heavily overlapping (and thus
/// easy to overfit, hard to generalize) when it is large.
pub fn synth_blobs(
    class_count: usize,
    per_class: usize,
    dim: usize,
    spread: f32,
    seed: u64,
) -> Dataset {
    assert!(class_count >= 2, "need at least two classes");
    assert!(dim >= 1 && per_class >= 1);
    let mut center_rng = rng::keyed(rng::mix(seed, tags::BLOBS), 0);
    let centers: Vec<Vec<f32>> = (0..class_count)
        .map(|_| (0..dim).map(|_| center_rng.gen_range(0.0..1.0)).collect())
        .collect();
    let normal = Normal::new(0.0f32, spread.max(0.0)).expect("valid spread");
    let mut examples = Vec::with_capacity(class_count * per_class);
    for (class, center) in centers.iter().enumerate() {
        let mut rng = rng::keyed(rng::mix(seed, tags::BLOBS), 1 + class as u64);
        for k in 0..per_class {
            let features = center.iter().map(|&c| c + normal.sample(&mut rng)).collect();
            examples.push(Example {
                id: (class * per_class + k) as u64,
                origin: None,
                features,
                label: class,
            });
        }
    }
    Dataset::new(vec![dim], class_count, examples).expect("synthetic blobs are valid")
}

// 7x5 glyph bitmaps for digits 0-9.
const GLYPHS: [[u8; 7]; 10] = [
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
];

pub const DIGITS_SIDE: usize = 28;

/// Procedurally rendered digit images: each example draws its digit's glyph
/// (7x5 font scaled 3x) onto a 28x28 canvas with a small random offset,
/// random stroke intensity, and per-pixel Gaussian noise. Values are snapped
/// to the 1/255 grid so IDX round trips are exact. This is the desk-scale
/// stand-in for a real handwritten-digit corpus: learnable, visually
/// recognizable, and fully deterministic under the seed.
pub fn synth_digits(per_class: usize, noise: f32, seed: u64) -> Dataset {
    assert!(per_class >= 1);
    let side = DIGITS_SIDE;
    let normal = Normal::new(0.0f32, noise.max(0.0)).expect("valid noise");
    let mut examples = Vec::with_capacity(10 * per_class);
    for (digit, glyph) in GLYPHS.iter().enumerate() {
        let mut rng = rng::keyed(rng::mix(seed, tags::DIGITS), digit as u64);
        for k in 0..per_class {
            let row_off = rng.gen_range(2..6usize);
            let col_off = rng.gen_range(5..10usize);
            let intensity = rng.gen_range(0.75..1.0f32);
            let mut img = vec![0.0f32; side * side];
            for (r, bits) in glyph.iter().enumerate() {
                for c in 0..5 {
                    if bits & (1 << (4 - c)) != 0 {
                        for dr in 0..3 {
                            for dc in 0..3 {
                                let rr = row_off + r * 3 + dr;
                                let cc = col_off + c * 3 + dc;
                                img[rr * side + cc] = intensity;
                            }
                        }
                    }
                }
            }
            for v in img.iter_mut() {
                let noisy = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
                *v = (noisy * 255.0).round() / 255.0;
            }
            examples.push(Example {
                id: (digit * per_class + k) as u64,
                origin: None,
                features: img,
                label: digit,
            });
        }
    }
    Dataset::new(vec![1, side, side], 10, examples).expect("synthetic digits are valid")
}

/// Seed-deterministic disjoint partition. The first part receives
/// `round(len * fraction)` examples; ids are preserved and both parts keep
/// the original example order.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::BadFraction(fraction));
    }
    let n = dataset.len();
    let take = (n as f64 * fraction).round() as usize;
    if take == 0 || take == n {
        return Err(DataError::EmptySplit);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::keyed(rng::mix(seed, tags::SPLIT), 0));
    let mut first: Vec<usize> = order[..take].to_vec();
    let mut second: Vec<usize> = order[take..].to_vec();
    first.sort_unstable();
    second.sort_unstable();
    let pick = |idxs: &[usize]| {
        dataset.with_examples(idxs.iter().map(|&i| dataset.examples()[i].clone()).collect())
    };
    Ok((pick(&first)?, pick(&second)?))
}

/// Like [`split`], but partitions each class separately so class proportions
/// are preserved.
pub fn split_stratified(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::BadFraction(fraction));
    }
    let mut first_idx = Vec::new();
    let mut second_idx = Vec::new();
    for class in 0..dataset.class_count() {
        let mut members: Vec<usize> = dataset
            .examples()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == class)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng::keyed(rng::mix(seed, tags::SPLIT), 1 + class as u64));
        let take = (members.len() as f64 * fraction).round() as usize;
        first_idx.extend_from_slice(&members[..take]);
        second_idx.extend_from_slice(&members[take..]);
    }
    if first_idx.is_empty() || second_idx.is_empty() {
        return Err(DataError::EmptySplit);
    }
    first_idx.sort_unstable();
    second_idx.sort_unstable();
    let pick = |idxs: &[usize]| {
        dataset.with_examples(idxs.iter().map(|&i| dataset.examples()[i].clone()).collect())
    };
    Ok((pick(&first_idx)?, pick(&second_idx)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn blobs_counts_and_determinism() {
        let a = synth_blobs(4, 50, 3, 0.1, 9);
        let b = synth_blobs(4, 50, 3, 0.1, 9);
        assert_eq!(a.len(), 200);
        assert_eq!(a, b);
    }

    #[test]
    fn digits_are_deterministic_and_on_pixel_grid() {
        let a = synth_digits(3, 0.05, 5);
        let b = synth_digits(3, 0.05, 5);
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        for e in a.examples() {
            for &v in &e.features {
                assert!((0.0..=1.0).contains(&v));
                let grid = (v * 255.0).round() / 255.0;
                assert_eq!(v, grid);
            }
        }
    }

    #[test]
    fn split_halves_and_preserves_ids() {
        let ds = synth_blobs(2, 50, 2, 0.1, 3);
        let (a, b) = split(&ds, 0.5, 1).unwrap();
        assert_eq!(a.len(), 50);
        assert_eq!(b.len(), 50);
        let mut union = a.ids();
        union.extend(b.ids());
        assert_eq!(union, ds.ids());
        assert!(a.ids().is_disjoint(&b.ids()));
    }

    #[test]
    fn stratified_split_preserves_proportions() {
        let ds = synth_digits(40, 0.05, 2);
        let (a, _) = split_stratified(&ds, 0.75, 1).unwrap();
        for class in 0..10 {
            let count = a.examples().iter().filter(|e| e.label == class).count();
            assert_eq!(count, 30, "class {class}");
        }
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        let ds = synth_blobs(2, 2, 2, 0.1, 0);
        assert!(split(&ds, 0.0, 0).is_err());
        assert!(split(&ds, 1.0, 0).is_err());
        assert!(split(&ds, 0.1, 0).is_err()); // rounds to an empty side
    }

    #[test]
    fn idx_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let images = dir.path().join("img.idx3-ubyte");
        let labels = dir.path().join("lbl.idx1-ubyte");
        let ds = synth_digits(4, 0.1, 17);
        save_idx(&ds, &images, &labels).unwrap();
        let back = load_idx(&images, &labels).unwrap();
        assert_eq!(back.len(), ds.len());
        assert_eq!(back.feature_shape(), ds.feature_shape());
        for (a, b) in back.examples().iter().zip(ds.examples()) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.features, b.features);
        }
    }

    #[test]
    fn idx_rejects_wrong_magic_and_truncation() {
        let dir = tempdir().unwrap();
        let images = dir.path().join("img");
        let labels = dir.path().join("lbl");
        let ds = synth_digits(2, 0.1, 1);
        save_idx(&ds, &images, &labels).unwrap();

        // Corrupt the image magic.
        let mut bytes = std::fs::read(&images).unwrap();
        bytes[0] = 0xff;
        let bad = dir.path().join("bad");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(
            load_idx(&bad, &labels),
            Err(DataError::BadMagic { .. })
        ));

        // Truncate the pixel block.
        let full = std::fs::read(&images).unwrap();
        let cut = dir.path().join("cut");
        std::fs::write(&cut, &full[..full.len() - 10]).unwrap();
        assert!(matches!(
            load_idx(&cut, &labels),
            Err(DataError::Truncated { .. })
        ));
    }

    #[test]
    fn idx_count_mismatch_is_detected() {
        let dir = tempdir().unwrap();
        let i1 = dir.path().join("i1");
        let l1 = dir.path().join("l1");
        let i2 = dir.path().join("i2");
        let l2 = dir.path().join("l2");
        save_idx(&synth_digits(2, 0.1, 1), &i1, &l1).unwrap();
        save_idx(&synth_digits(3, 0.1, 1), &i2, &l2).unwrap();
        assert!(matches!(
            load_idx(&i1, &l2),
            Err(DataError::CountMismatch { .. })
        ));
    }

    #[test]
    fn pixel_scaling_endpoints() {
        // pixel 255 -> 1.0, pixel 0 -> 0.0
        let dir = tempdir().unwrap();
        let images = dir.path().join("img");
        let labels = dir.path().join("lbl");
        let ds = Dataset::new(
            vec![1, 1, 2],
            2,
            vec![Example {
                id: 0,
                origin: None,
                features: vec![1.0, 0.0],
                label: 1,
            }],
        )
        .unwrap();
        save_idx(&ds, &images, &labels).unwrap();
        let back = load_idx(&images, &labels).unwrap();
        assert_eq!(back.examples()[0].features, vec![1.0, 0.0]);
    }

    #[test]
    fn dataset_validates_labels_and_ids() {
        let bad_label = Dataset::new(
            vec![1],
            2,
            vec![Example { id: 0, origin: None, features: vec![0.0], label: 5 }],
        );
        assert!(matches!(bad_label, Err(DataError::LabelOutOfRange { .. })));
        let dup = Dataset::new(
            vec![1],
            2,
            vec![
                Example { id: 1, origin: None, features: vec![0.0], label: 0 },
                Example { id: 1, origin: None, features: vec![0.0], label: 1 },
            ],
        );
        assert!(matches!(dup, Err(DataError::DuplicateId(1))));
    }
}
