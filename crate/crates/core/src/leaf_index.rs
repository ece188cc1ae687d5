//! Inverted index from `(tree, leaf)` to the training instances routed there.
//!
//! Each tree's leaf lists partition `0..n_train`; ids within a list ascend.
//! The training targets travel with the index so posterior fitting never needs
//! the feature matrix.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::error::{IbugError, Result};
use crate::gbrt::Ensemble;
use crate::model_io::to_native_json;

const CACHE_MAGIC: &[u8; 8] = b"IBUGIDX\0";
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LeafIndex {
    /// `leaves[t][j]` holds the instance ids of leaf `j` in tree `t`.
    leaves: Vec<Vec<Vec<u32>>>,
    targets: Vec<f64>,
}

impl LeafIndex {
    /// Routes every row of `data` (the model's training set) through every tree.
    pub fn build(model: &Ensemble, data: &Dataset) -> Result<Self> {
        if data.n_features() != model.n_features() {
            return Err(IbugError::invalid(format!(
                "dataset has {} features, model expects {}",
                data.n_features(),
                model.n_features()
            )));
        }
        if data.n_rows() > u32::MAX as usize {
            return Err(IbugError::invalid("too many training rows for the index"));
        }
        let leaves = model
            .trees()
            .iter()
            .map(|tree| {
                let mut lists = vec![Vec::new(); tree.n_leaves()];
                for (i, row) in data.rows().enumerate() {
                    lists[tree.leaf_id(row)].push(i as u32);
                }
                lists
            })
            .collect();
        Ok(LeafIndex {
            leaves,
            targets: data.targets().to_vec(),
        })
    }

    pub fn n_train(&self) -> usize {
        self.targets.len()
    }

    pub fn n_trees(&self) -> usize {
        self.leaves.len()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Instance set of `leaf` in `tree`.
    #[inline]
    pub fn lookup(&self, tree: usize, leaf: usize) -> &[u32] {
        &self.leaves[tree][leaf]
    }

    pub fn n_leaves(&self, tree: usize) -> usize {
        self.leaves[tree].len()
    }

    pub(crate) fn check_model(&self, model: &Ensemble) -> Result<()> {
        let matches = self.leaves.len() == model.n_trees()
            && self
                .leaves
                .iter()
                .zip(model.trees())
                .all(|(l, t)| l.len() == t.n_leaves());
        if matches {
            Ok(())
        } else {
            Err(IbugError::invalid("leaf index was not built from this model"))
        }
    }

    /// Per-tree mean, over `probes`, of the fraction of training instances
    /// sharing the probe's leaf.
    pub fn leaf_density(&self, model: &Ensemble, probes: &Dataset) -> Result<Vec<f64>> {
        self.check_model(model)?;
        if probes.n_features() != model.n_features() {
            return Err(IbugError::invalid("probe dimensionality does not match the model"));
        }
        let n = self.n_train() as f64;
        let m = probes.n_rows() as f64;
        Ok(model
            .trees()
            .iter()
            .enumerate()
            .map(|(t, tree)| {
                let total: usize = probes.rows().map(|x| self.leaves[t][tree.leaf_id(x)].len()).sum();
                total as f64 / n / m
            })
            .collect())
    }

    /// Content key for cache files: SHA-256 of the model's native JSON and of
    /// the dataset bytes.
    pub fn cache_key(model: &Ensemble, data: &Dataset) -> ([u8; 32], [u8; 32]) {
        (Self::model_key(model), Sha256::digest(data.content_bytes()).into())
    }

    /// The model half of [`LeafIndex::cache_key`].
    pub fn model_key(model: &Ensemble) -> [u8; 32] {
        Sha256::digest(to_native_json(model).as_bytes()).into()
    }

    /// Writes the binary cache: magic, version, keys, then per tree the leaf
    /// lists as little-endian `u32`, then the targets as `f64` bits.
    pub fn write_cache<W: Write>(&self, mut out: W, key: &([u8; 32], [u8; 32])) -> Result<()> {
        out.write_all(CACHE_MAGIC)?;
        out.write_all(&CACHE_VERSION.to_le_bytes())?;
        out.write_all(&key.0)?;
        out.write_all(&key.1)?;
        out.write_all(&(self.n_train() as u64).to_le_bytes())?;
        out.write_all(&(self.n_trees() as u64).to_le_bytes())?;
        let mut buf = Vec::new();
        for tree in &self.leaves {
            buf.extend_from_slice(&(tree.len() as u64).to_le_bytes());
            for list in tree {
                buf.extend_from_slice(&(list.len() as u64).to_le_bytes());
                for id in list {
                    buf.extend_from_slice(&id.to_le_bytes());
                }
            }
        }
        for y in &self.targets {
            buf.extend_from_slice(&y.to_bits().to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn save_cache(&self, path: impl AsRef<Path>, key: &([u8; 32], [u8; 32])) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_cache(std::io::BufWriter::new(file), key)
    }

    /// Reads a cache file. The model half of the key must match `model_key`;
    /// the data half is checked only when `data_key` is given.
    pub fn read_cache<R: Read>(
        mut input: R,
        model_key: &[u8; 32],
        data_key: Option<&[u8; 32]>,
    ) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(8)? != CACHE_MAGIC {
            return Err(IbugError::parse("byte 0", "not a leaf-index cache"));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        if version != CACHE_VERSION {
            return Err(IbugError::parse("byte 8", format!("unsupported cache version {version}")));
        }
        if cur.take(32)? != model_key {
            return Err(IbugError::invalid("leaf-index cache was built for a different model"));
        }
        let stored_data_key = cur.take(32)?;
        if data_key.is_some_and(|k| k.as_slice() != stored_data_key) {
            return Err(IbugError::invalid("leaf-index cache was built for a different dataset"));
        }
        let n_train = cur.u64()? as usize;
        let n_trees = cur.u64()? as usize;
        let mut leaves = Vec::with_capacity(n_trees.min(1 << 20));
        for _ in 0..n_trees {
            let n_leaves = cur.u64()? as usize;
            let mut tree = Vec::with_capacity(n_leaves.min(1 << 20));
            for _ in 0..n_leaves {
                let len = cur.u64()? as usize;
                let raw = cur.take(len.checked_mul(4).ok_or_else(|| cur.error("length overflow"))?)?;
                let ids: Vec<u32> = raw
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                if ids.iter().any(|&i| i as usize >= n_train) {
                    return Err(cur.error("instance id out of range"));
                }
                tree.push(ids);
            }
            leaves.push(tree);
        }
        let raw = cur.take(n_train.checked_mul(8).ok_or_else(|| cur.error("length overflow"))?)?;
        let targets = raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Ok(LeafIndex { leaves, targets })
    }

    pub fn load_cache(path: impl AsRef<Path>, model_key: &[u8; 32], data_key: Option<&[u8; 32]>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_cache(std::io::BufReader::new(file), model_key, data_key)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn error(&self, msg: &str) -> IbugError {
        IbugError::parse(format!("byte {}", self.pos), msg.to_string())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(self.error("unexpected end of cache file")),
        }
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
