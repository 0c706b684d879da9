//! Named parameters with gradients and binary checkpointing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"TSPS";
const VERSION: u32 = 1;

/// Insertion-ordered map from parameter name to tensor, with a same-shaped
/// gradient slot per parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
    grads: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::Numeric(format!(
                "parameter '{name}' has non-finite entries"
            )));
        }
        if self.params.contains_key(name) {
            return Err(Error::Shape(format!("duplicate parameter name '{name}'")));
        }
        self.grads
            .insert(name.to_string(), Tensor::zeros(t.rows, t.cols));
        self.params.insert(name.to_string(), t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Shape(format!("unknown parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Shape(format!("unknown parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn element_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.values_mut() {
            g.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Add `delta` into the gradient slot of `name`.
    pub fn accumulate_grad(&mut self, name: &str, delta: &Tensor) -> Result<()> {
        let g = self
            .grads
            .get_mut(name)
            .ok_or_else(|| Error::Shape(format!("unknown parameter '{name}'")))?;
        if g.shape() != delta.shape() {
            return Err(Error::Shape(format!(
                "gradient for '{name}' is {}x{}, parameter is {}x{}",
                delta.rows, delta.cols, g.rows, g.cols
            )));
        }
        g.add_assign(delta);
        Ok(())
    }

    /// Scale every gradient by `c` (batch averaging).
    pub fn scale_grads(&mut self, c: f64) {
        for g in self.grads.values_mut() {
            g.data.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    /// Largest absolute gradient entry, for divergence diagnostics.
    pub fn grad_max_abs(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|g| g.data.iter())
            .fold(0.0, |m, &v| m.max(v.abs()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)
            .map_err(|e| Error::Data(format!("cannot create {}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for (name, t) in &self.params {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&2u32.to_le_bytes())?;
            w.write_all(&(t.rows as u64).to_le_bytes())?;
            w.write_all(&(t.cols as u64).to_le_bytes())?;
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ParamStore> {
        let file = File::open(path)
            .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
        let mut r = BufReader::new(file);
        let bad = |what: &str| Error::Data(format!("{}: {what}", path.display()));

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if magic != MAGIC {
            return Err(bad("bad magic, not a checkpoint file"));
        }
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b)?;
        if u32::from_le_bytes(u32b) != VERSION {
            return Err(bad("unsupported version"));
        }
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u64b)?;
        let count = u64::from_le_bytes(u64b) as usize;

        let mut store = ParamStore::new();
        for _ in 0..count {
            r.read_exact(&mut u32b).map_err(|_| bad("truncated entry"))?;
            let name_len = u32::from_le_bytes(u32b) as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
            let name = String::from_utf8(name).map_err(|_| bad("non-UTF-8 name"))?;
            r.read_exact(&mut u32b)?;
            let rank = u32::from_le_bytes(u32b);
            if rank != 2 {
                return Err(bad("unsupported tensor rank"));
            }
            r.read_exact(&mut u64b)?;
            let rows = u64::from_le_bytes(u64b) as usize;
            r.read_exact(&mut u64b)?;
            let cols = u64::from_le_bytes(u64b) as usize;
            let mut data = vec![0.0f64; rows * cols];
            let mut f64b = [0u8; 8];
            for v in data.iter_mut() {
                r.read_exact(&mut f64b).map_err(|_| bad("truncated payload"))?;
                *v = f64::from_le_bytes(f64b);
            }
            store.insert(&name, Tensor { rows, cols, data }).map_err(|e| {
                Error::Data(format!("{}: {e}", path.display()))
            })?;
        }
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(store)
    }
}
