//! Records which examples appeared in which batches, plus the per-batch
//! parameter deltas, with bit-exact persistence.
//!
//! Two journaling modes exist. FULL keeps the delta of every batch.
//! WATCHLIST keeps deltas only for batches containing a watched example; the
//! example-to-batch index is always complete in both modes (ids are cheap,
//! deltas are not), so batch membership queries work identically and a
//! watchlist miss can be reported with the exact missing keys.
//!
//! # File format (little-endian)
//!
//! ```text
//! magic          u32   0x414D4E4A
//! version        u16   1
//! mode           u8    0 = full, 1 = watchlist
//! fingerprint    u64   architecture fingerprint
//! param_count    u64
//! run_id         u32 length + UTF-8 bytes
//! [watchlist]    u64 count + u64 ids        (mode 1 only)
//! initial params f32 * param_count          (canonical ParamVector order)
//! batch records, repeated to end of file:
//!   epoch u32, batch u32, example_count u32, example ids u64[],
//!   has_delta u8, [delta f32 * param_count]
//! ```
//!
//! A text sidecar (`<path>.index`) with one `epoch,batch,id,id,...` line per
//! batch is written alongside for human inspection; loading ignores it.

use crate::nn::{Model, ParamDelta};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

pub const JOURNAL_MAGIC: u32 = 0x414D_4E4A;
pub const JOURNAL_VERSION: u16 = 1;

/// Index of one batch within a training run, ordered by (epoch, batch).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BatchKey {
    pub epoch: u32,
    pub batch: u32,
}

impl fmt::Display for BatchKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(epoch {}, batch {})", self.epoch, self.batch)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JournalMode {
    /// Keep every batch delta.
    Full,
    /// Keep deltas only for batches containing a watched example.
    Watchlist(BTreeSet<u64>),
}

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("batch {0} already recorded")]
    DuplicateKey(BatchKey),
    #[error("example id {0} never appeared in any recorded batch")]
    UnknownExample(u64),
    #[error("no delta recorded for batches: {}", format_keys(.0))]
    MissingDeltas(Vec<BatchKey>),
    #[error("delta has {found} values, journal expects {expected}")]
    DeltaLengthMismatch { expected: usize, found: usize },
    #[error("architecture fingerprint mismatch: journal {expected:#018x}, model {found:#018x}")]
    ArchMismatch { expected: u64, found: u64 },
    #[error("journal already contains batches; training requires a fresh journal")]
    NotFresh,
    #[error("journal initial parameters do not match the model's current parameters")]
    InitialMismatch,
    #[error("bad magic {0:#010x}")]
    BadMagic(u32),
    #[error("unsupported journal version {0}")]
    UnsupportedVersion(u16),
    #[error("journal file truncated")]
    Truncated,
    #[error("corrupt journal: {0}")]
    Corrupt(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn format_keys(keys: &[BatchKey]) -> String {
    keys.iter()
        .map(|k| k.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Per-run record of batch membership and batch deltas. Deltas are stored
/// flat in the canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Journal {
    run_id: String,
    mode: JournalMode,
    arch_fingerprint: u64,
    initial_params: Vec<f32>,
    example_index: BTreeMap<u64, Vec<BatchKey>>,
    delta_store: BTreeMap<BatchKey, Vec<f32>>,
    indexed: BTreeSet<BatchKey>,
}

impl Journal {
    pub fn new_full(run_id: impl Into<String>, model: &Model) -> Journal {
        Journal {
            run_id: run_id.into(),
            mode: JournalMode::Full,
            arch_fingerprint: model.fingerprint(),
            initial_params: model.params().to_flat(),
            example_index: BTreeMap::new(),
            delta_store: BTreeMap::new(),
            indexed: BTreeSet::new(),
        }
    }

    pub fn new_watchlist(
        run_id: impl Into<String>,
        model: &Model,
        watched: BTreeSet<u64>,
    ) -> Journal {
        Journal {
            mode: JournalMode::Watchlist(watched),
            ..Journal::new_full(run_id, model)
        }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn mode(&self) -> &JournalMode {
        &self.mode
    }

    pub fn arch_fingerprint(&self) -> u64 {
        self.arch_fingerprint
    }

    pub fn param_count(&self) -> usize {
        self.initial_params.len()
    }

    pub fn initial_params(&self) -> &[f32] {
        &self.initial_params
    }

    pub fn is_empty(&self) -> bool {
        self.indexed.is_empty()
    }

    /// Number of batches indexed (with or without a stored delta).
    pub fn batch_count(&self) -> usize {
        self.indexed.len()
    }

    /// Number of batches with a stored delta.
    pub fn delta_count(&self) -> usize {
        self.delta_store.len()
    }

    pub fn all_keys(&self) -> Vec<BatchKey> {
        self.indexed.iter().copied().collect()
    }

    pub fn delta_keys(&self) -> Vec<BatchKey> {
        self.delta_store.keys().copied().collect()
    }

    pub fn batches_for_example(&self, id: u64) -> Option<&[BatchKey]> {
        self.example_index.get(&id).map(|v| v.as_slice())
    }

    /// Records one batch: which examples it contained and its exact delta.
    /// In watchlist mode the index entry is always kept but the delta is
    /// stored only when the batch touches a watched example.
    pub fn record_batch(
        &mut self,
        key: BatchKey,
        example_ids: &[u64],
        delta: &ParamDelta,
    ) -> Result<(), JournalError> {
        if self.indexed.contains(&key) {
            return Err(JournalError::DuplicateKey(key));
        }
        let flat = delta.to_flat();
        if flat.len() != self.initial_params.len() {
            return Err(JournalError::DeltaLengthMismatch {
                expected: self.initial_params.len(),
                found: flat.len(),
            });
        }
        let keep_delta = match &self.mode {
            JournalMode::Full => true,
            JournalMode::Watchlist(watched) => {
                example_ids.iter().any(|id| watched.contains(id))
            }
        };
        for &id in example_ids {
            self.example_index.entry(id).or_default().push(key);
        }
        if keep_delta {
            self.delta_store.insert(key, flat);
        }
        self.indexed.insert(key);
        Ok(())
    }

    /// Deduplicated, ascending list of every batch containing any of the
    /// given examples. Errors on an id that never appeared in any batch.
    pub fn batches_containing(&self, ids: &BTreeSet<u64>) -> Result<Vec<BatchKey>, JournalError> {
        let mut keys = BTreeSet::new();
        for &id in ids {
            let batches = self
                .example_index
                .get(&id)
                .ok_or(JournalError::UnknownExample(id))?;
            keys.extend(batches.iter().copied());
        }
        Ok(keys.into_iter().collect())
    }

    /// Keys among `keys` that have no stored delta.
    pub fn missing_deltas(&self, keys: &[BatchKey]) -> Vec<BatchKey> {
        keys.iter()
            .filter(|k| !self.delta_store.contains_key(k))
            .copied()
            .collect()
    }

    /// Element-wise sum of the deltas at `keys`, accumulated in ascending key
    /// order. Deltas live on the update grid, so the sum is exact and
    /// independent of grouping. Empty input yields the zero delta.
    pub fn sum_deltas(&self, keys: &[BatchKey]) -> Result<Vec<f32>, JournalError> {
        let missing = self.missing_deltas(keys);
        if !missing.is_empty() {
            return Err(JournalError::MissingDeltas(missing));
        }
        let mut sorted: Vec<BatchKey> = keys.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut acc = vec![0.0f32; self.initial_params.len()];
        for key in sorted {
            let delta = &self.delta_store[&key];
            for (a, d) in acc.iter_mut().zip(delta) {
                *a += d;
            }
        }
        Ok(acc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), JournalError> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&JOURNAL_MAGIC.to_le_bytes())?;
        w.write_all(&JOURNAL_VERSION.to_le_bytes())?;
        let (mode_byte, watched) = match &self.mode {
            JournalMode::Full => (0u8, None),
            JournalMode::Watchlist(set) => (1u8, Some(set)),
        };
        w.write_all(&[mode_byte])?;
        w.write_all(&self.arch_fingerprint.to_le_bytes())?;
        w.write_all(&(self.initial_params.len() as u64).to_le_bytes())?;
        w.write_all(&(self.run_id.len() as u32).to_le_bytes())?;
        w.write_all(self.run_id.as_bytes())?;
        if let Some(set) = watched {
            w.write_all(&(set.len() as u64).to_le_bytes())?;
            for &id in set {
                w.write_all(&id.to_le_bytes())?;
            }
        }
        write_f32s(&mut w, &self.initial_params)?;

        // Rebuild per-batch id lists from the index (ascending ids per key).
        let ids_by_key = self.ids_by_key();
        for key in &self.indexed {
            let ids = ids_by_key.get(key).map(|v| v.as_slice()).unwrap_or(&[]);
            w.write_all(&key.epoch.to_le_bytes())?;
            w.write_all(&key.batch.to_le_bytes())?;
            w.write_all(&(ids.len() as u32).to_le_bytes())?;
            for &id in ids {
                w.write_all(&id.to_le_bytes())?;
            }
            match self.delta_store.get(key) {
                Some(delta) => {
                    w.write_all(&[1u8])?;
                    write_f32s(&mut w, delta)?;
                }
                None => w.write_all(&[0u8])?,
            }
        }
        w.flush()?;
        self.write_sidecar(path, &ids_by_key)?;
        Ok(())
    }

    fn ids_by_key(&self) -> BTreeMap<BatchKey, Vec<u64>> {
        let mut map: BTreeMap<BatchKey, Vec<u64>> = BTreeMap::new();
        for (&id, keys) in &self.example_index {
            for key in keys {
                map.entry(*key).or_default().push(id);
            }
        }
        map
    }

    fn write_sidecar(
        &self,
        path: &Path,
        ids_by_key: &BTreeMap<BatchKey, Vec<u64>>,
    ) -> Result<(), JournalError> {
        let sidecar = sidecar_path(path);
        let mut w = BufWriter::new(File::create(sidecar)?);
        for key in &self.indexed {
            write!(w, "{},{}", key.epoch, key.batch)?;
            if let Some(ids) = ids_by_key.get(key) {
                for id in ids {
                    write!(w, ",{id}")?;
                }
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Journal, JournalError> {
        let bytes = std::fs::read(path)?;
        let mut cur = Cursor::new(&bytes);
        let magic = cur.u32()?;
        if magic != JOURNAL_MAGIC {
            return Err(JournalError::BadMagic(magic));
        }
        let version = cur.u16()?;
        if version != JOURNAL_VERSION {
            return Err(JournalError::UnsupportedVersion(version));
        }
        let mode_byte = cur.u8()?;
        let fingerprint = cur.u64()?;
        let param_count = cur.u64()? as usize;
        let run_len = cur.u32()? as usize;
        let run_id = String::from_utf8(cur.take(run_len)?.to_vec())
            .map_err(|_| JournalError::Corrupt("run id is not valid UTF-8".into()))?;
        let mode = match mode_byte {
            0 => JournalMode::Full,
            1 => {
                let count = cur.u64()? as usize;
                let mut watched = BTreeSet::new();
                for _ in 0..count {
                    watched.insert(cur.u64()?);
                }
                JournalMode::Watchlist(watched)
            }
            other => {
                return Err(JournalError::Corrupt(format!("unknown mode byte {other}")));
            }
        };
        let initial_params = cur.f32s(param_count)?;

        let mut journal = Journal {
            run_id,
            mode,
            arch_fingerprint: fingerprint,
            initial_params,
            example_index: BTreeMap::new(),
            delta_store: BTreeMap::new(),
            indexed: BTreeSet::new(),
        };
        while let Some(epoch) = cur.u32_or_end()? {
            let batch = cur.u32()?;
            let key = BatchKey { epoch, batch };
            if journal.indexed.contains(&key) {
                return Err(JournalError::Corrupt(format!("duplicate batch {key}")));
            }
            let id_count = cur.u32()? as usize;
            let mut ids = Vec::with_capacity(id_count);
            for _ in 0..id_count {
                ids.push(cur.u64()?);
            }
            let has_delta = match cur.u8()? {
                0 => false,
                1 => true,
                other => {
                    return Err(JournalError::Corrupt(format!(
                        "bad delta flag {other} for batch {key}"
                    )));
                }
            };
            for id in ids {
                journal.example_index.entry(id).or_default().push(key);
            }
            if has_delta {
                journal.delta_store.insert(key, cur.f32s(param_count)?);
            }
            journal.indexed.insert(key);
        }
        Ok(journal)
    }
}

/// Sidecar text-index path for a journal file.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".index");
    std::path::PathBuf::from(name)
}

fn write_f32s(w: &mut impl Write, values: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], JournalError> {
        if self.pos + n > self.buf.len() {
            return Err(JournalError::Truncated);
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, JournalError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, JournalError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, JournalError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, JournalError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// `None` at a clean record boundary (end of file), error mid-field.
    fn u32_or_end(&mut self) -> Result<Option<u32>, JournalError> {
        if self.pos == self.buf.len() {
            return Ok(None);
        }
        Ok(Some(self.u32()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, JournalError> {
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_model, Architecture};
    use tempfile::tempdir;

    fn model() -> Model {
        init_model(Architecture::mlp(3, &[4], 2).unwrap(), 1)
    }

    fn delta_of(model: &Model, fill: f32) -> ParamDelta {
        let mut d = model.params().zero_like();
        for l in d.layers_mut() {
            l.weights.values_mut().fill(fill);
            l.bias.values_mut().fill(fill);
        }
        d
    }

    #[test]
    fn record_and_query() {
        let m = model();
        let mut j = Journal::new_full("r", &m);
        let key = BatchKey { epoch: 0, batch: 0 };
        j.record_batch(key, &[3, 5], &delta_of(&m, 0.25)).unwrap();
        assert_eq!(j.batches_for_example(5).unwrap(), &[key]);
        assert!(matches!(
            j.record_batch(key, &[1], &delta_of(&m, 0.0)),
            Err(JournalError::DuplicateKey(_))
        ));
        assert!(matches!(
            j.batches_containing(&[9u64].into_iter().collect()),
            Err(JournalError::UnknownExample(9))
        ));
    }

    #[test]
    fn counting_keys() {
        let m = model();
        let mut j = Journal::new_full("r", &m);
        for epoch in 0..3u32 {
            for batch in 0..10u32 {
                j.record_batch(
                    BatchKey { epoch, batch },
                    &[(epoch * 10 + batch) as u64],
                    &delta_of(&m, 0.0),
                )
                .unwrap();
            }
        }
        assert_eq!(j.delta_count(), 30);
        assert_eq!(j.batch_count(), 30);
    }

    #[test]
    fn empty_selector_and_key_set() {
        let m = model();
        let mut j = Journal::new_full("r", &m);
        j.record_batch(BatchKey { epoch: 0, batch: 0 }, &[1], &delta_of(&m, 0.5))
            .unwrap();
        assert!(j.batches_containing(&BTreeSet::new()).unwrap().is_empty());
        let zero = j.sum_deltas(&[]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disjoint_sums_recombine_exactly() {
        let m = model();
        let mut j = Journal::new_full("r", &m);
        let k = |b| BatchKey { epoch: 0, batch: b };
        for (b, f) in [(0, 0.125f32), (1, -0.5), (2, 0.0625)] {
            j.record_batch(k(b), &[b as u64], &delta_of(&m, f)).unwrap();
        }
        let all = j.sum_deltas(&[k(0), k(1), k(2)]).unwrap();
        let a = j.sum_deltas(&[k(0), k(2)]).unwrap();
        let b = j.sum_deltas(&[k(1)]).unwrap();
        let recombined: Vec<f32> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        assert_eq!(all, recombined);
    }

    #[test]
    fn watchlist_stores_subset_with_complete_index() {
        let m = model();
        let watched: BTreeSet<u64> = [7u64].into_iter().collect();
        let mut j = Journal::new_watchlist("r", &m, watched);
        j.record_batch(BatchKey { epoch: 0, batch: 0 }, &[1, 2], &delta_of(&m, 0.5))
            .unwrap();
        j.record_batch(BatchKey { epoch: 0, batch: 1 }, &[7, 3], &delta_of(&m, 0.25))
            .unwrap();
        assert_eq!(j.batch_count(), 2);
        assert_eq!(j.delta_count(), 1);
        // Index knows batch 0 even though its delta was dropped.
        let keys = j
            .batches_containing(&[1u64].into_iter().collect())
            .unwrap();
        assert_eq!(keys, vec![BatchKey { epoch: 0, batch: 0 }]);
        assert!(matches!(
            j.sum_deltas(&keys),
            Err(JournalError::MissingDeltas(_))
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let m = model();
        let mut j = Journal::new_watchlist("run-7", &m, [2u64, 9].into_iter().collect());
        j.record_batch(BatchKey { epoch: 0, batch: 0 }, &[1, 2], &delta_of(&m, 0.5))
            .unwrap();
        j.record_batch(BatchKey { epoch: 1, batch: 0 }, &[3, 4], &delta_of(&m, -0.25))
            .unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.amnj");
        j.save(&path).unwrap();
        let back = Journal::load(&path).unwrap();
        assert_eq!(back, j);
        assert!(sidecar_path(&path).exists());
    }

    #[test]
    fn corrupt_magic_truncation_and_version() {
        let m = model();
        let mut j = Journal::new_full("r", &m);
        j.record_batch(BatchKey { epoch: 0, batch: 0 }, &[1], &delta_of(&m, 0.5))
            .unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("j.amnj");
        j.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let bad_magic = dir.path().join("bad_magic");
        let mut b = bytes.clone();
        b[0] ^= 0xff;
        std::fs::write(&bad_magic, &b).unwrap();
        assert!(matches!(
            Journal::load(&bad_magic),
            Err(JournalError::BadMagic(_))
        ));

        let bad_version = dir.path().join("bad_version");
        let mut b = bytes.clone();
        b[4] = 0xee;
        std::fs::write(&bad_version, &b).unwrap();
        assert!(matches!(
            Journal::load(&bad_version),
            Err(JournalError::UnsupportedVersion(_))
        ));

        let truncated = dir.path().join("truncated");
        std::fs::write(&truncated, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            Journal::load(&truncated),
            Err(JournalError::Truncated)
        ));
    }
}
