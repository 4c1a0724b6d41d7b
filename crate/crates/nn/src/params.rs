//! Parameter storage, the Adam optimizer, and the checkpoint format.
//!
//! A checkpoint is two files side by side: `<name>.json`, a manifest with the
//! parameter names, shapes and caller-supplied hyperparameters, and
//! `<name>.bin`, every parameter flattened row-major as little-endian `f32`
//! in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: Shape) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    /// Uniform Glorot initialisation.
    pub fn glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: Shape,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / (shape.rows + shape.cols) as f64).sqrt();
        let data = (0..shape.len())
            .map(|_| T::lit(rng.gen_range(-bound..bound)))
            .collect();
        self.add(name, Tensor::new(shape, data))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.shape().len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Zero every parameter; handy for closed-form checks.
    pub fn zero_all(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn save(&self, dir: &Path, name: &str, hyper: serde_json::Value) -> Result<(), NnError> {
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            format: FORMAT.to_string(),
            hyperparameters: hyper,
            params: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(n, t)| ParamEntry {
                    name: n.clone(),
                    shape: t.shape().dims(),
                })
                .collect(),
        };
        let mut bytes = Vec::with_capacity(self.num_scalars() * 4);
        for t in &self.tensors {
            for v in t.data() {
                bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        let (json, bin) = checkpoint_paths(dir, name);
        fs::write(json, serde_json::to_vec_pretty(&manifest)?)?;
        fs::write(bin, bytes)?;
        Ok(())
    }

    /// Loads a checkpoint, returning the store and its hyperparameters.
    pub fn load(dir: &Path, name: &str) -> Result<(Self, serde_json::Value), NnError> {
        let (json, bin) = checkpoint_paths(dir, name);
        let manifest: Manifest = serde_json::from_slice(&fs::read(json)?)?;
        if manifest.format != FORMAT {
            return Err(NnError::Checkpoint(format!(
                "unknown format {:?}",
                manifest.format
            )));
        }
        let bytes = fs::read(bin)?;
        let expected: usize = manifest
            .params
            .iter()
            .map(|p| p.shape[0] * p.shape[1] * 4)
            .sum();
        if bytes.len() != expected {
            return Err(NnError::Checkpoint(format!(
                "expected {expected} bytes of parameters, found {}",
                bytes.len()
            )));
        }
        let mut floats = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let mut store = Self::new();
        for p in manifest.params {
            let shape = Shape::new(p.shape[0], p.shape[1]);
            let data = floats
                .by_ref()
                .take(shape.len())
                .map(|v| T::lit(v as f64))
                .collect();
            store.add(p.name, Tensor::new(shape, data));
        }
        Ok((store, manifest.hyperparameters))
    }
}

const FORMAT: &str = "hunkfix-params-v1";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    hyperparameters: serde_json::Value,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: [usize; 2],
}

pub fn checkpoint_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{name}.json")),
        dir.join(format!("{name}.bin")),
    )
}

/// Gradient accumulator aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct ParamGrads<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn for_store(store: &ParamStore<T>) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub fn add(&mut self, id: ParamId, g: &Tensor<T>) {
        match &mut self.grads[id.0] {
            Some(existing) => existing.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn merge(&mut self, other: &ParamGrads<T>) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.add(ParamId(i), g);
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.data().iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 5.0,
        }
    }
}

pub struct Adam<T> {
    cfg: AdamConfig,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamConfig) -> Self {
        let zeros = |t: &Tensor<T>| vec![T::zero(); t.shape().len()];
        Self {
            cfg,
            step: 0,
            m: store.tensors.iter().map(zeros).collect(),
            v: store.tensors.iter().map(zeros).collect(),
        }
    }

    /// Applies one update, restricted to parameters that received a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &ParamGrads<T>) {
        self.step += 1;
        let c = &self.cfg;
        let norm = grads.norm();
        let clip = if c.clip > 0.0 && norm > c.clip {
            c.clip / norm
        } else {
            1.0
        };
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        for (i, g) in grads.grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let params = store.tensors[i].data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                let gj = gj * T::lit(clip);
                self.m[i][j] = b1 * self.m[i][j] + (T::one() - b1) * gj;
                self.v[i][j] = b2 * self.v[i][j] + (T::one() - b2) * gj * gj;
                let mhat = self.m[i][j].as_f64() / bc1;
                let vhat = self.v[i][j].as_f64() / bc2;
                params[j] = params[j] - T::lit(c.lr * mhat / (vhat.sqrt() + c.eps));
            }
        }
    }
}
