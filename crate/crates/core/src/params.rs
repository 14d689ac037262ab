//! Named parameter storage, per-pass graph context, and the parameter manifest.
//!
//! The manifest is JSON:
//!
//! ```json
//! {"format": "iram-params/1",
//!  "params": [{"path": "classifier.out.w", "shape": [200, 2],
//!              "trainable": true, "values": [/* row-major float64 */]}]}
//! ```
//!
//! Floats are written in shortest round-trip form and parsed with exact
//! rounding, so save/load is bit-exact.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{IramError, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

pub const MANIFEST_FORMAT: &str = "iram-params/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Params {
    paths: Vec<String>,
    tensors: Vec<Tensor>,
    by_path: HashMap<String, ParamId>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn add(&mut self, path: impl Into<String>, mut tensor: Tensor, trainable: bool) -> Result<ParamId> {
        let path = path.into();
        if self.by_path.contains_key(&path) {
            return Err(IramError::Config(format!("duplicate parameter path {path}")));
        }
        tensor.set_requires_grad(trainable);
        let id = ParamId(self.tensors.len());
        self.by_path.insert(path.clone(), id);
        self.paths.push(path);
        self.tensors.push(tensor);
        Ok(id)
    }

    /// Adds a trainable tensor with entries drawn from N(0, std²).
    pub fn add_gaussian<R: Rng + ?Sized>(
        &mut self,
        path: impl Into<String>,
        shape: Vec<usize>,
        std: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n = shape.iter().product();
        let normal = Normal::new(0.0, std).map_err(|e| IramError::Config(e.to_string()))?;
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        self.add(path, Tensor::new(shape, data)?, true)
    }

    pub fn add_constant(&mut self, path: impl Into<String>, shape: Vec<usize>, value: f64) -> Result<ParamId> {
        let n = shape.iter().product();
        self.add(path, Tensor::new(shape, vec![value; n])?, true)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn path(&self, id: ParamId) -> &str {
        &self.paths[id.0]
    }

    pub fn find(&self, path: &str) -> Option<ParamId> {
        self.by_path.get(path).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Sums the adjoints of every tagged parameter leaf on `tape`.
    pub fn collect_grads(&self, tape: &Tape<'_>, grads: &Gradients) -> GradBuffer {
        let mut buf = GradBuffer::zeros_like(self);
        for (tag, var) in tape.tagged_leaves() {
            if let Some(g) = grads.get(var) {
                buf.accumulate(ParamId(tag), g);
            }
        }
        buf
    }

    /// Accumulates a gradient buffer into each tensor's `grad` field.
    pub fn accumulate_grads(&mut self, buf: &GradBuffer) -> Result<()> {
        for (t, g) in self.tensors.iter_mut().zip(&buf.grads) {
            if let Some(g) = g {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn to_manifest(&self) -> Manifest {
        Manifest {
            format: MANIFEST_FORMAT.to_string(),
            params: self
                .paths
                .iter()
                .zip(&self.tensors)
                .map(|(p, t)| ManifestEntry {
                    path: p.clone(),
                    shape: t.shape().to_vec(),
                    trainable: t.requires_grad(),
                    values: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_manifest(m: Manifest) -> Result<Self> {
        if m.format != MANIFEST_FORMAT {
            return Err(IramError::Incompatible(format!("unknown manifest format {}", m.format)));
        }
        let mut p = Params::new();
        for e in m.params {
            p.add(e.path, Tensor::new(e.shape, e.values)?, e.trainable)?;
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(&self.to_manifest()).map_err(|e| IramError::json(path, e))?;
        std::fs::write(path, s).map_err(|e| IramError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| IramError::io(path, e))?;
        let m: Manifest = serde_json::from_str(&s).map_err(|e| IramError::json(path, e))?;
        Params::from_manifest(m)
    }

    /// Replaces every value with those of `other`, which must hold the same
    /// paths and shapes in the same order.
    pub fn copy_values_from(&mut self, other: &Params) -> Result<()> {
        if self.paths != other.paths {
            return Err(IramError::Incompatible("parameter paths differ".into()));
        }
        for ((a, b), path) in self.tensors.iter_mut().zip(&other.tensors).zip(&self.paths) {
            if a.shape() != b.shape() {
                return Err(IramError::Incompatible(format!(
                    "{path}: expected shape {:?}, found {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            a.data_mut().copy_from_slice(b.data());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub params: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub values: Vec<f64>,
}

/// Per-parameter gradient accumulator, aligned with a [`Params`] store.
#[derive(Clone, Debug, PartialEq)]
pub struct GradBuffer {
    grads: Vec<Option<Vec<f64>>>,
}

impl GradBuffer {
    pub fn zeros_like(params: &Params) -> Self {
        GradBuffer {
            grads: vec![None; params.len()],
        }
    }

    pub fn from_vecs(grads: Vec<Option<Vec<f64>>>) -> Self {
        GradBuffer { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Vec<f64>> {
        self.grads.get_mut(id.0).and_then(|g| g.as_mut())
    }

    pub fn accumulate(&mut self, id: ParamId, g: &[f64]) {
        match &mut self.grads[id.0] {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, x)| *b += x),
            slot => *slot = Some(g.to_vec()),
        }
    }

    /// Adds `other` into `self`, slot by slot.
    pub fn merge(&mut self, other: &GradBuffer) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.iter_mut().for_each(|g| g.iter_mut().for_each(|x| *x *= s));
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.grads.iter().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.grads.iter_mut().flatten()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// One forward pass: a tape over borrowed parameters plus dropout state.
pub struct Ctx<'a> {
    pub tape: Tape<'a>,
    params: &'a Params,
    leaves: Vec<Option<Var>>,
    train: bool,
    rng: ChaCha8Rng,
}

impl<'a> Ctx<'a> {
    pub fn new(params: &'a Params, train: bool, seed: u64) -> Self {
        Ctx {
            tape: Tape::new(),
            params,
            leaves: vec![None; params.len()],
            train,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn eval(params: &'a Params) -> Self {
        Ctx::new(params, false, 0)
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn params(&self) -> &'a Params {
        self.params
    }

    /// The tape leaf for a parameter, recorded on first use.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.leaves[id.0] {
            return v;
        }
        let v = self.tape.borrowed_leaf(self.params.get(id), id.0);
        self.leaves[id.0] = Some(v);
        v
    }

    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        self.tape.dropout(x, p, self.train, &mut self.rng)
    }

    /// Runs backward from `loss` and gathers parameter gradients.
    pub fn backward(&mut self, loss: Var) -> Result<GradBuffer> {
        let grads = self.tape.backward(loss)?;
        Ok(self.params.collect_grads(&self.tape, &grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = Params::new();
        p.add_gaussian("a.w", vec![3, 4], 0.01, &mut rng).unwrap();
        p.add("b", Tensor::vector(vec![0.1 + 0.2, 1e-300, -0.0, f64::MAX]), false)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        p.save(&path).unwrap();
        let q = Params::load(&path).unwrap();
        for id in p.ids() {
            assert_eq!(p.path(id), q.path(id));
            assert_eq!(p.get(id).shape(), q.get(id).shape());
            assert_eq!(p.get(id).requires_grad(), q.get(id).requires_grad());
            let a: Vec<u64> = p.get(id).data().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = q.get(id).data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn duplicate_paths_rejected() {
        let mut p = Params::new();
        p.add_constant("x", vec![1], 0.0).unwrap();
        assert!(p.add_constant("x", vec![1], 0.0).is_err());
    }

    #[test]
    fn repeated_use_accumulates_into_one_gradient() {
        let mut p = Params::new();
        let w = p.add("w", Tensor::vector(vec![2.0]), true).unwrap();
        let mut ctx = Ctx::eval(&p);
        let a = ctx.p(w);
        let b = ctx.p(w);
        assert_eq!(a, b);
        let y = ctx.tape.mul(a, b).unwrap();
        let y = ctx.tape.sum(y);
        let g = ctx.backward(y).unwrap();
        assert_eq!(g.get(w).unwrap(), &[4.0]);
    }

    #[test]
    fn frozen_parameters_get_no_gradient() {
        let mut p = Params::new();
        let w = p.add("w", Tensor::vector(vec![2.0]), false).unwrap();
        let v = p.add("v", Tensor::vector(vec![3.0]), true).unwrap();
        let mut ctx = Ctx::eval(&p);
        let (a, b) = (ctx.p(w), ctx.p(v));
        let y = ctx.tape.mul(a, b).unwrap();
        let y = ctx.tape.sum(y);
        let g = ctx.backward(y).unwrap();
        assert!(g.get(w).is_none());
        assert_eq!(g.get(v).unwrap(), &[2.0]);
    }
}
