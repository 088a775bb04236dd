//! Named parameter storage with freeze mask and bit-exact persistence.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MRPS";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    grad: Vec<f64>,
    frozen: bool,
}

/// All trainable tensors, keyed by name, with gradient slots and a freeze
/// mask. Frozen tensors are skipped by [`ParamStore::sgd_step`] and stay
/// bit-identical across a tuning run.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, values: Vec<f64>, rows: usize, cols: usize) {
        assert_eq!(values.len(), rows * cols, "value length vs shape");
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter `{name}`"
        );
        let grad = vec![0.0; values.len()];
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            rows,
            cols,
            values,
            grad,
            frozen: false,
        });
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn shape_at(&self, idx: usize) -> (usize, usize) {
        (self.entries[idx].rows, self.entries[idx].cols)
    }

    pub fn values_at(&self, idx: usize) -> &[f64] {
        &self.entries[idx].values
    }

    pub fn values(&self, name: &str) -> Result<&[f64]> {
        self.index_of(name)
            .map(|i| self.entries[i].values.as_slice())
            .ok_or_else(|| Error::UnknownNode(format!("parameter `{name}`")))
    }

    pub fn values_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::UnknownNode(format!("parameter `{name}`")))?;
        Ok(self.entries[i].values.as_mut_slice())
    }

    pub fn grad(&self, name: &str) -> Result<&[f64]> {
        self.index_of(name)
            .map(|i| self.entries[i].grad.as_slice())
            .ok_or_else(|| Error::UnknownNode(format!("parameter `{name}`")))
    }

    pub fn accumulate_grad_at(&mut self, idx: usize, grad: &[f64]) {
        let e = &mut self.entries[idx];
        debug_assert_eq!(e.grad.len(), grad.len());
        for (g, x) in e.grad.iter_mut().zip(grad) {
            *g += x;
        }
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.index_of(name)
            .map(|i| self.entries[i].frozen)
            .unwrap_or(false)
    }

    /// Freezes exactly the names for which `pred` returns true.
    pub fn set_freeze<F: Fn(&str) -> bool>(&mut self, pred: F) {
        for e in &mut self.entries {
            e.frozen = pred(&e.name);
        }
    }

    pub fn freeze_all(&mut self) {
        self.set_freeze(|_| true);
    }

    pub fn unfreeze_all(&mut self) {
        self.set_freeze(|_| false);
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// One plain SGD step: unfrozen tensors move by `-lr·grad`, frozen
    /// tensors stay untouched, all gradients reset to zero.
    pub fn sgd_step(&mut self, lr: f64) {
        for e in &mut self.entries {
            if !e.frozen {
                for (v, g) in e.values.iter_mut().zip(&e.grad) {
                    *v -= lr * *g;
                }
            }
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Largest absolute gradient entry; diagnostic for NaN aborts.
    pub fn max_abs_grad(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.grad.iter())
            .fold(0.0f64, |m, g| m.max(g.abs()))
    }

    /// Bitwise equality of values for every parameter matching `pred`.
    pub fn bit_identical_subset<F: Fn(&str) -> bool>(&self, other: &ParamStore, pred: F) -> bool {
        for e in &self.entries {
            if !pred(&e.name) {
                continue;
            }
            match other.index_of(&e.name) {
                None => return false,
                Some(j) => {
                    let o = &other.entries[j];
                    if o.rows != e.rows || o.cols != e.cols {
                        return false;
                    }
                    if e.values
                        .iter()
                        .zip(&o.values)
                        .any(|(a, b)| a.to_bits() != b.to_bits())
                    {
                        return false;
                    }
                }
            }
        }
        true
    }
}

fn write_u32(w: &mut impl Write, x: u32) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn write_u64(w: &mut impl Write, x: u64) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Serializes a store: `(name, shape, values)` triples plus the freeze
/// mask. Values round-trip bit-exactly.
pub fn write_store(w: &mut impl Write, store: &ParamStore) -> Result<()> {
    let io = |e: std::io::Error| Error::Checkpoint(format!("write: {e}"));
    w.write_all(MAGIC).map_err(io)?;
    write_u32(w, VERSION).map_err(io)?;
    write_u64(w, store.entries.len() as u64).map_err(io)?;
    for e in &store.entries {
        write_u32(w, e.name.len() as u32).map_err(io)?;
        w.write_all(e.name.as_bytes()).map_err(io)?;
        write_u64(w, e.rows as u64).map_err(io)?;
        write_u64(w, e.cols as u64).map_err(io)?;
        w.write_all(&[u8::from(e.frozen)]).map_err(io)?;
        for v in &e.values {
            w.write_all(&v.to_bits().to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

pub fn read_store(r: &mut impl Read) -> Result<ParamStore> {
    let io = |e: std::io::Error| Error::Checkpoint(format!("read: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(r).map_err(io)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u64(r).map_err(io)? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(r).map_err(io)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(io)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("bad name".into()))?;
        let rows = read_u64(r).map_err(io)? as usize;
        let cols = read_u64(r).map_err(io)? as usize;
        let mut fbyte = [0u8; 1];
        r.read_exact(&mut fbyte).map_err(io)?;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            values.push(f64::from_bits(read_u64(r).map_err(io)?));
        }
        store.insert(&name, values, rows, cols);
        if fbyte[0] != 0 {
            let idx = store.entries.len() - 1;
            store.entries[idx].frozen = true;
        }
    }
    Ok(store)
}

pub fn save_store(store: &ParamStore, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    write_store(&mut w, store)?;
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_store(path: &Path) -> Result<ParamStore> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_store(&mut BufReader::new(file))
}
