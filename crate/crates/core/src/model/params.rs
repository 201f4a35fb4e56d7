//! Named, ordered storage for learnable arrays and normalization statistics.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{DType, Float, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    /// Convolution kernels: learnable, weight-decayed.
    Weight,
    /// Convolution biases: learnable, no decay.
    Bias,
    /// Normalization gamma/beta: learnable, no decay.
    NormAffine,
    /// Running mean/variance: not learnable.
    RunningStat,
}

impl ParamKind {
    pub fn learnable(self) -> bool {
        self != ParamKind::RunningStat
    }

    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, usize>,
    fingerprint: [u8; 32],
}

/// Initial value of a new entry.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with the given std, resampled outside two standard deviations.
    TruncNormal(f64),
}

impl<T: Float> ParamStore<T> {
    pub fn new(fingerprint: [u8; 32]) -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
            fingerprint,
        }
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        self.fingerprint
    }

    pub(crate) fn add(
        &mut self,
        name: String,
        kind: ParamKind,
        shape: Shape,
        init: Init,
        rng: &mut impl Rng,
    ) -> ParamId {
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let tensor = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::full(shape, T::one()),
            Init::TruncNormal(std) => Tensor::from_fn(shape, |_, _, _, _| {
                loop {
                    let z: f64 = rng.sample(StandardNormal);
                    if z.abs() <= 2.0 {
                        break T::c(z * std);
                    }
                }
            }),
        };
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, kind, tensor });
        ParamId(id)
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &[T] {
        self.entries[id.0].tensor.data()
    }

    #[inline]
    pub fn value_mut(&mut self, id: ParamId) -> &mut [T] {
        self.entries[id.0].tensor.data_mut()
    }

    pub fn accumulate_grad(&mut self, id: ParamId, delta: &[T]) {
        self.entries[id.0].tensor.accumulate_grad(delta);
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.by_name.get(name).map(|&i| &self.entries[i])
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Learnable element count (running statistics excluded).
    pub fn learnable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind.learnable())
            .map(|e| e.tensor.numel())
            .sum()
    }

    /// Writes running statistics produced by a train-mode forward pass.
    pub fn apply_stat_updates(&mut self, updates: Vec<(ParamId, Vec<T>)>) {
        for (id, v) in updates {
            self.value_mut(id).copy_from_slice(&v);
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.zero_grad();
        }
    }

    /// Euclidean norm over all learnable gradients.
    pub fn grad_norm(&self) -> T {
        let mut sq = T::zero();
        for e in self.entries.iter().filter(|e| e.kind.learnable()) {
            if let Some(g) = e.tensor.grad() {
                for &v in g {
                    sq += v * v;
                }
            }
        }
        sq.sqrt()
    }

    /// Overwrites values from another store with the same layout, e.g. when
    /// loading a checkpoint.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.fingerprint != self.fingerprint {
            return Err(Error::Fingerprint {
                expected: crate::model::config::hex(&self.fingerprint),
                found: crate::model::config::hex(&other.fingerprint),
            });
        }
        if other.entries.len() != self.entries.len() {
            return Err(Error::config("parameter layouts differ"));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::config(format!(
                    "parameter `{}` {} does not match `{}` {}",
                    a.name,
                    a.tensor.shape(),
                    b.name,
                    b.tensor.shape()
                )));
            }
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.tensor.data_mut().copy_from_slice(b.tensor.data());
        }
        Ok(())
    }

    /// Rebuilds a store from raw parts (checkpoint loading).
    pub fn from_entries(fingerprint: [u8; 32], entries: Vec<ParamEntry<T>>) -> Result<Self> {
        let mut by_name = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if by_name.insert(e.name.clone(), i).is_some() {
                return Err(Error::config(format!("duplicate parameter `{}`", e.name)));
            }
        }
        Ok(Self {
            entries,
            by_name,
            fingerprint,
        })
    }

    /// Same values in another precision.
    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    kind: e.kind,
                    tensor: e.tensor.cast(),
                })
                .collect(),
            by_name: self.by_name.clone(),
            fingerprint: self.fingerprint,
        }
    }
}

impl ParamKind {
    pub fn tag(self) -> &'static str {
        match self {
            ParamKind::Weight => "weight",
            ParamKind::Bias => "bias",
            ParamKind::NormAffine => "norm",
            ParamKind::RunningStat => "stat",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "weight" => ParamKind::Weight,
            "bias" => ParamKind::Bias,
            "norm" => ParamKind::NormAffine,
            "stat" => ParamKind::RunningStat,
            _ => return None,
        })
    }
}
