use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments per parameter tensor, plus the shared step
/// counter used for bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || params.params.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        AdamState { config, step: 0, m: zeros(), v: zeros() }
    }

    /// One update of every parameter. A `None` gradient counts as zero.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) -> Result<()> {
        if grads.len() != params.params.len() || self.m.len() != params.params.len() {
            return Err(Error::shape(
                "adam",
                format!("{} gradients and {} moments for {} parameters", grads.len(), self.m.len(), params.params.len()),
            ));
        }
        for ((p, g), m) in params.params.iter().zip(grads).zip(&self.m) {
            if let Some(g) = g {
                if g.shape() != p.value.shape() || m.shape() != p.value.shape() {
                    return Err(Error::shape("adam", format!("{}: gradient {:?} vs {:?}", p.name, g.shape(), p.value.shape())));
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let corr1 = T::from_f64_lossy(1.0 - c.beta1.powi(t));
        let corr2 = T::from_f64_lossy(1.0 - c.beta2.powi(t));
        let (lr, eps) = (T::from_f64_lossy(lr), T::from_f64_lossy(c.eps));
        for (i, p) in params.params.iter_mut().enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let g = grads[i].as_ref().map(|g| g.data());
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(T::zero(), |g| g[j]);
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                let m_hat = m[j] / corr1;
                let v_hat = v[j] / corr2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Step decay `lr·γ^⌊epoch / every⌋`, applied as repeated multiplication.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub gamma: f64,
    pub every: usize,
}

impl LrSchedule {
    /// Learning rate of the zero-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut lr = self.base;
        for _ in 0..epoch / self.every.max(1) {
            lr *= self.gamma;
        }
        lr
    }
}
