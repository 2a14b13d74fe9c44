use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Index of a trainable tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Index of a batch-norm running-statistics buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Running mean and unbiased running variance of one batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Named trainable tensors and batch-norm buffers, in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    pub params: Vec<NamedTensor<T>>,
    pub buffers: Vec<RunningStats<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore { params: Vec::new(), buffers: Vec::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(NamedTensor { name: name.into(), value });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, channels: usize) -> BufferId {
        self.buffers.push(RunningStats {
            name: name.into(),
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn buffer(&self, id: BufferId) -> &RunningStats<T> {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut RunningStats<T> {
        &mut self.buffers[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total trainable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|p| NamedTensor { name: p.name.clone(), value: p.value.cast() }).collect(),
            buffers: self
                .buffers
                .iter()
                .map(|b| RunningStats {
                    name: b.name.clone(),
                    mean: b.mean.iter().map(|&v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
                    var: b.var.iter().map(|&v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
                })
                .collect(),
        }
    }

    /// Replaces every value with the one of the same name in `other`,
    /// which must hold exactly the same names and shapes.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.params.len() != self.params.len() || other.buffers.len() != self.buffers.len() {
            return Err(Error::Data(format!(
                "parameter set mismatch: {} tensors / {} buffers, expected {} / {}",
                other.params.len(),
                other.buffers.len(),
                self.params.len(),
                self.buffers.len()
            )));
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(Error::Data(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    theirs.name,
                    theirs.value.shape(),
                    mine.name,
                    mine.value.shape()
                )));
            }
            mine.value = theirs.value.clone();
        }
        for (mine, theirs) in self.buffers.iter_mut().zip(&other.buffers) {
            if mine.name != theirs.name || mine.mean.len() != theirs.mean.len() || mine.var.len() != theirs.var.len() {
                return Err(Error::Data(format!("buffer {} does not match {}", theirs.name, mine.name)));
            }
            mine.mean.clone_from(&theirs.mean);
            mine.var.clone_from(&theirs.var);
        }
        Ok(())
    }
}

/// Gaussian with standard deviation `sqrt(2 / fan_in)`.
pub(crate) fn he_normal<T: Scalar>(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite positive std");
    Tensor::from_fn(shape, |_| T::from_f64_lossy(normal.sample(rng)))
}

pub(crate) fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
