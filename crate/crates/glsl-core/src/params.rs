//! Named, ordered parameter store plus the versioned checkpoint container.
//!
//! Checkpoints are a flat list of (name, shape, values) records, little
//! endian, behind a magic header. The order of records is the registration
//! order, which is deterministic for a given model config.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{GlslError, Result};
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"GLSLCKP1";

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors.iter().map(|t| t.shape().to_vec()).collect()
    }

    /// Push every parameter onto a fresh tape as a leaf; the returned ids are
    /// index-aligned with the store.
    pub fn register_leaves(&self, tape: &mut Tape) -> Vec<VarId> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Collect gradients for every parameter from a backward pass, in store
    /// order. Parameters the loss never touched get zero gradients.
    pub fn collect_grads(&self, leaf_ids: &[VarId], grads: &[Option<Tensor>]) -> Vec<Tensor> {
        leaf_ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                grads[*id]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(self.tensors[i].shape().to_vec()))
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(MAGIC)?;
        f.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in self.names.iter().zip(&self.tensors) {
            let nb = name.as_bytes();
            f.write_all(&(nb.len() as u32).to_le_bytes())?;
            f.write_all(nb)?;
            f.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for d in t.shape() {
                f.write_all(&(*d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(GlslError::Checkpoint(format!(
                "bad magic header in {}",
                path.display()
            )));
        }
        let mut store = ParamStore::new();
        let count = read_u32(&mut f)? as usize;
        for _ in 0..count {
            let name_len = read_u32(&mut f)? as usize;
            let mut name = vec![0u8; name_len];
            f.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|e| GlslError::Checkpoint(format!("invalid name: {e}")))?;
            let ndim = read_u32(&mut f)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                f.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                f.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            let t = Tensor::new(shape, data)
                .map_err(|e| GlslError::Checkpoint(format!("record {name}: {e}")))?;
            store.register(name, t);
        }
        Ok(store)
    }
}

fn read_u32(f: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    f.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
