//! Prepared-data directory: `vocab.json`, `splits.bin`, `categories.json`
//! and `stats.json`.
//!
//! `splits.bin` holds the 8-byte magic `CDNSSPLT`, a `u32` version, then the
//! train, valid and test splits (each a `u64` count followed by `u32` triples),
//! then the filter map (`u64` key count; per key `s, r, n` and `n` objects).
//! All integers are little-endian. Splits include inverse triples.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kg_data::{classify_relations, Dataset, RelationCategory, Triple, Vocabulary};

pub const SPLITS_MAGIC: &[u8; 8] = b"CDNSSPLT";
const SPLITS_VERSION: u32 = 1;

pub const VOCAB_FILE: &str = "vocab.json";
pub const SPLITS_FILE: &str = "splits.bin";
pub const CATEGORIES_FILE: &str = "categories.json";
pub const STATS_FILE: &str = "stats.json";

/// Serialise the splits and filter map.
pub fn encode_splits(dataset: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SPLITS_MAGIC);
    out.extend_from_slice(&SPLITS_VERSION.to_le_bytes());
    for split in [&dataset.train, &dataset.valid, &dataset.test] {
        out.extend_from_slice(&(split.len() as u64).to_le_bytes());
        for t in split.iter() {
            for v in [t.subject, t.relation, t.object] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let entries = dataset.filter_map.sorted_entries();
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for ((s, r), objects) in entries {
        out.extend_from_slice(&s.to_le_bytes());
        out.extend_from_slice(&r.to_le_bytes());
        out.extend_from_slice(&(objects.len() as u32).to_le_bytes());
        for o in objects {
            out.extend_from_slice(&o.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            Error::Checkpoint(format!("{SPLITS_FILE} truncated at byte {}", self.pos))
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

/// Rebuild a dataset from `splits.bin` bytes and its vocabulary.
///
/// The stored filter map must agree with the one derived from the splits.
pub fn decode_splits(bytes: &[u8], vocab: Vocabulary) -> Result<Dataset> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != SPLITS_MAGIC {
        return Err(Error::Checkpoint(format!("{SPLITS_FILE}: bad magic")));
    }
    let version = c.u32()?;
    if version != SPLITS_VERSION {
        return Err(Error::Checkpoint(format!(
            "{SPLITS_FILE}: unsupported version {version}"
        )));
    }
    let ne = vocab.num_entities() as u32;
    let nr = vocab.num_relations() as u32;
    let mut splits = Vec::with_capacity(3);
    for _ in 0..3 {
        let n = c.u64()? as usize;
        let mut split = Vec::with_capacity(n.min(bytes.len() / 12));
        for _ in 0..n {
            let t = Triple::new(c.u32()?, c.u32()?, c.u32()?);
            if t.subject >= ne || t.object >= ne || t.relation >= nr {
                return Err(Error::OutOfRange {
                    what: "triple id in splits.bin",
                    index: t.subject.max(t.object).max(t.relation) as usize,
                    bound: ne.max(nr) as usize,
                });
            }
            split.push(t);
        }
        splits.push(split);
    }
    let keys = c.u64()? as usize;
    let mut stored: Vec<((u32, u32), Vec<u32>)> = Vec::with_capacity(keys.min(bytes.len() / 12));
    for _ in 0..keys {
        let s = c.u32()?;
        let r = c.u32()?;
        let n = c.u32()? as usize;
        let objects = (0..n).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        stored.push(((s, r), objects));
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{SPLITS_FILE}: trailing bytes")));
    }
    let test = splits.pop().unwrap_or_default();
    let valid = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    let dataset = Dataset::from_encoded(vocab, train, valid, test);
    let derived = dataset.filter_map.sorted_entries();
    let consistent = derived.len() == stored.len()
        && derived
            .iter()
            .zip(&stored)
            .all(|(d, s)| d.0 == s.0 && d.1 == s.1.as_slice());
    if !consistent {
        return Err(Error::Checkpoint(format!(
            "{SPLITS_FILE}: stored filter map disagrees with the splits"
        )));
    }
    Ok(dataset)
}

/// Relation label to category, base relations only.
pub fn category_map(dataset: &Dataset) -> BTreeMap<String, RelationCategory> {
    let cats = classify_relations(&dataset.train, &dataset.vocab);
    dataset.vocab.relations()[..dataset.vocab.num_base_relations()]
        .iter()
        .cloned()
        .zip(cats)
        .collect()
}

/// Write every prepared artifact into `out`.
pub fn write_prepared(dataset: &Dataset, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let write = |name: &str, bytes: Vec<u8>| {
        let path = out.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    };
    write(VOCAB_FILE, serde_json::to_vec_pretty(&dataset.vocab)?)?;
    write(SPLITS_FILE, encode_splits(dataset))?;
    write(
        CATEGORIES_FILE,
        serde_json::to_vec_pretty(&category_map(dataset))?,
    )?;
    write(STATS_FILE, serde_json::to_vec_pretty(&dataset.stats())?)?;
    Ok(())
}

pub fn is_prepared(dir: &Path) -> bool {
    dir.join(VOCAB_FILE).is_file() && dir.join(SPLITS_FILE).is_file()
}

pub fn load_prepared(dir: &Path) -> Result<Dataset> {
    let vocab_path = dir.join(VOCAB_FILE);
    let splits_path = dir.join(SPLITS_FILE);
    let vocab_bytes = fs::read(&vocab_path).map_err(|e| Error::io(&vocab_path, e))?;
    let vocab: Vocabulary = serde_json::from_slice(&vocab_bytes)?;
    let bytes = fs::read(&splits_path).map_err(|e| Error::io(&splits_path, e))?;
    decode_splits(&bytes, vocab)
}

/// Load a prepared directory, or raw `train/valid/test.txt` files otherwise.
pub fn load_any(dir: &Path) -> Result<Dataset> {
    if is_prepared(dir) {
        load_prepared(dir)
    } else {
        Dataset::load_dir(dir)
    }
}
