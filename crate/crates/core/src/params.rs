//! Named parameter tensors and the checkpoint file format.
//!
//! A checkpoint is a text header followed by raw little-endian `f64` values
//! of every tensor in header order:
//!
//! ```text
//! tipseg-checkpoint 1
//! <count>
//! <name> <dim> <dim> ...
//! ...
//! end
//! <payload>
//! ```

use std::path::Path;

use rand::Rng;

use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::render::write_file;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

const MAGIC: &str = "tipseg-checkpoint 1";

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// Uniform in `±√(6/fan_in)`, which keeps activation variance steady
    /// through ReLU layers.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let t = Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound));
        self.add(name, t)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Records every tensor on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(self.tensors.iter().map(|t| tape.param(t.clone())).collect())
    }

    /// Records every tensor as a constant (inference).
    pub fn bind_constant(&self, tape: &mut Tape) -> Bound {
        Bound(
            self.tensors
                .iter()
                .map(|t| tape.constant(t.clone()))
                .collect(),
        )
    }

    /// Binds every tensor as a constant except `id`, which is bound to `var`.
    /// Used to differentiate with respect to a single tensor.
    pub fn bind_replacing(&self, tape: &mut Tape, id: ParamId, var: Var) -> Bound {
        Bound(
            self.tensors
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    if i == id.0 {
                        var
                    } else {
                        tape.constant(t.clone())
                    }
                })
                .collect(),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{MAGIC}\n{}\n", self.tensors.len());
        for (name, t) in self.names.iter().zip(&self.tensors) {
            header.push_str(name);
            for d in t.shape() {
                header.push_str(&format!(" {d}"));
            }
            header.push('\n');
        }
        header.push_str("end\n");
        let mut out = header.into_bytes();
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut pos = 0;
        let mut next_line = || -> Result<&str> {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("truncated header"))?;
            let line = std::str::from_utf8(&bytes[pos..pos + end])
                .map_err(|_| bad("header is not UTF-8"))?;
            pos += end + 1;
            Ok(line)
        };
        if next_line()? != MAGIC {
            return Err(bad("missing checkpoint magic line"));
        }
        let count: usize = next_line()?
            .trim()
            .parse()
            .map_err(|_| bad("bad tensor count"))?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let line = next_line()?;
            let mut it = line.split_whitespace();
            let name = it
                .next()
                .ok_or_else(|| bad("empty tensor line"))?
                .to_string();
            let shape = it
                .map(|d| {
                    d.parse::<usize>()
                        .map_err(|_| bad(&format!("bad dimension in `{line}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            entries.push((name, shape));
        }
        if next_line()? != "end" {
            return Err(bad("missing header terminator"));
        }
        let mut store = ParamStore::new();
        let mut payload = bytes[pos..].chunks_exact(8);
        for (name, shape) in entries {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = payload
                .by_ref()
                .take(n)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if data.len() != n {
                return Err(bad(&format!("payload too short for `{name}`")));
            }
            store.add(name, Tensor::new(&shape, data)?);
        }
        if payload.next().is_some() || !payload.remainder().is_empty() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Replaces values from `other`, which must have identical names and shapes.
    pub fn assign(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Checkpoint("parameter names differ".into()));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::shape("checkpoint", a.shape(), b.shape()));
            }
            a.clone_from(b);
        }
        Ok(())
    }
}

/// Tape handles of a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let mut s = ParamStore::new();
        s.add(
            "enc.w0",
            Tensor::from_fn(&[2, 1, 3, 3], |i| i as f64 * 0.5 - 1.0),
        );
        s.add("gcn.w", Tensor::from_fn(&[4, 4], |i| (i as f64).sin()));
        s.add("bias", Tensor::zeros(&[0]));
        let bytes = s.to_bytes();
        assert!(bytes.starts_with(b"tipseg-checkpoint 1\n3\nenc.w0 2 1 3 3\n"));
        assert_eq!(ParamStore::from_bytes(&bytes).unwrap(), s);
        assert!(ParamStore::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 8]);
        assert!(ParamStore::from_bytes(&extra).is_err());
    }

    #[test]
    fn uniform_init_respects_bound() {
        let mut rng = crate::rng::substream(1, "init");
        let mut s = ParamStore::new();
        let id = s.add_uniform("w", &[16, 9], 9, &mut rng);
        assert!(s
            .get(id)
            .data()
            .iter()
            .all(|v| v.abs() <= (6.0f64 / 9.0).sqrt()));
    }
}
