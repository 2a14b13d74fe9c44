//! Backends a network forward pass can run on.
//!
//! [`TapeGraph`] computes values on a [`Tape`]; [`ShapeGraph`] only
//! propagates extents, which makes full-size shape audits free.

use super::layers::{BatchNorm, Conv};
use super::params::{BufferId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::shape::split_nc_spatial;
use crate::tensor::{BatchNormMode, BatchStats, PoolGeom, Scalar, Tape, Var};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Operations used by the network definitions.
pub trait Graph {
    type V: Copy;

    fn shape(&self, v: Self::V) -> Vec<usize>;
    fn conv(&mut self, x: Self::V, layer: &Conv) -> Result<Self::V>;
    fn conv_transpose(&mut self, x: Self::V, layer: &Conv) -> Result<Self::V>;
    fn batch_norm(&mut self, x: Self::V, layer: &BatchNorm) -> Result<Self::V>;
    fn leaky_relu(&mut self, x: Self::V) -> Self::V;
    fn max_pool(&mut self, x: Self::V, geom: PoolGeom) -> Result<Self::V>;
    fn concat(&mut self, xs: &[Self::V]) -> Result<Self::V>;
    fn softmax(&mut self, x: Self::V) -> Result<Self::V>;
    fn reshape(&mut self, x: Self::V, shape: &[usize]) -> Result<Self::V>;
    /// `[B, C, H, W]` to `[B, C, 1, 1]` spatial means.
    fn spatial_mean(&mut self, x: Self::V) -> Result<Self::V>;
    /// `[B, C, 1, 1]` repeated to `[B, C, h, w]`.
    fn broadcast_spatial(&mut self, x: Self::V, h: usize, w: usize) -> Result<Self::V>;
    /// Labels a layer output.
    fn record(&mut self, _name: &str, _v: Self::V) {}
}

/// Values on a tape with every parameter bound as a leaf.
pub struct TapeGraph<'p, T: Scalar> {
    pub tape: Tape<T>,
    params: &'p ParamStore<T>,
    bound: Vec<Var>,
    train: bool,
    /// Batch statistics seen by each training-mode batch norm.
    pub batch_stats: Vec<(BufferId, BatchStats<T>)>,
    /// Recorded layer outputs.
    pub trace: Vec<(String, Var)>,
}

impl<'p, T: Scalar> TapeGraph<'p, T> {
    /// Binds `params` on a fresh tape: as gradient leaves when `train`, as
    /// constants otherwise. Batch norms use batch statistics iff `train`.
    pub fn new(params: &'p ParamStore<T>, train: bool) -> Self {
        let mut tape = Tape::new();
        let bound = params
            .params
            .iter()
            .map(|p| if train { tape.leaf(p.value.clone()) } else { tape.constant(p.value.clone()) })
            .collect();
        TapeGraph { tape, params, bound, train, batch_stats: Vec::new(), trace: Vec::new() }
    }

    /// Tape variable of parameter `i` (registration order).
    pub fn param_var(&self, i: usize) -> Var {
        self.bound[i]
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.bound
    }

    pub fn input(&mut self, t: crate::tensor::Tensor<T>) -> Var {
        self.tape.constant(t)
    }
}

impl<T: Scalar> Graph for TapeGraph<'_, T> {
    type V = Var;

    fn shape(&self, v: Var) -> Vec<usize> {
        self.tape.shape(v).to_vec()
    }

    fn conv(&mut self, x: Var, layer: &Conv) -> Result<Var> {
        let b = layer.bias.map(|b| self.bound[b.0]);
        self.tape.conv(x, self.bound[layer.weight.0], b, layer.geom)
    }

    fn conv_transpose(&mut self, x: Var, layer: &Conv) -> Result<Var> {
        let b = layer.bias.map(|b| self.bound[b.0]);
        self.tape.conv_transpose(x, self.bound[layer.weight.0], b, layer.geom)
    }

    fn batch_norm(&mut self, x: Var, layer: &BatchNorm) -> Result<Var> {
        let (g, b) = (self.bound[layer.gamma.0], self.bound[layer.beta.0]);
        let eps = T::from_f64_lossy(BN_EPS);
        if self.train {
            let (v, stats) = self.tape.batch_norm(x, g, b, BatchNormMode::Train, eps)?;
            self.batch_stats.push((layer.buffer, stats.expect("training mode returns statistics")));
            Ok(v)
        } else {
            let rs = self.params.buffer(layer.buffer);
            let mode = BatchNormMode::Eval { mean: &rs.mean, var: &rs.var };
            Ok(self.tape.batch_norm(x, g, b, mode, eps)?.0)
        }
    }

    fn leaky_relu(&mut self, x: Var) -> Var {
        self.tape.leaky_relu(x, T::from_f64_lossy(LEAKY_SLOPE))
    }

    fn max_pool(&mut self, x: Var, geom: PoolGeom) -> Result<Var> {
        self.tape.max_pool(x, geom)
    }

    fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        self.tape.concat_channels(xs)
    }

    fn softmax(&mut self, x: Var) -> Result<Var> {
        self.tape.softmax_channels(x)
    }

    fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.tape.reshape(x, shape)
    }

    fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(Error::shape("spatial_mean", format!("need [B, C, H, W], got {s:?}")));
        }
        let sum = self.tape.sum_trailing(x, 2)?;
        let mean = self.tape.scale(sum, T::one() / T::from_usize(s[2] * s[3]).unwrap());
        self.tape.reshape(mean, &[s[0], s[1], 1, 1])
    }

    fn broadcast_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 || s[2] != 1 || s[3] != 1 {
            return Err(Error::shape("broadcast_spatial", format!("need [B, C, 1, 1], got {s:?}")));
        }
        let flat = self.tape.reshape(x, &[s[0], s[1]])?;
        self.tape.broadcast_trailing(flat, &[s[0], s[1], h, w])
    }

    fn record(&mut self, name: &str, v: Var) {
        self.trace.push((name.to_string(), v));
    }
}

/// Extents only; validates every operation exactly like the tape does.
pub struct ShapeGraph<'p, T> {
    params: &'p ParamStore<T>,
    shapes: Vec<Vec<usize>>,
    pub trace: Vec<(String, Vec<usize>)>,
}

impl<'p, T: Scalar> ShapeGraph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        ShapeGraph { params, shapes: Vec::new(), trace: Vec::new() }
    }

    pub fn input(&mut self, shape: Vec<usize>) -> usize {
        self.push(shape)
    }

    fn push(&mut self, shape: Vec<usize>) -> usize {
        self.shapes.push(shape);
        self.shapes.len() - 1
    }

    fn check_bias(&self, layer: &Conv, channels: usize, op: &'static str) -> Result<()> {
        if let Some(b) = layer.bias {
            if self.params.get(b).shape() != [channels] {
                return Err(Error::shape(op, format!("bias {:?} for {channels} channels", self.params.get(b).shape())));
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Graph for ShapeGraph<'_, T> {
    type V = usize;

    fn shape(&self, v: usize) -> Vec<usize> {
        self.shapes[v].clone()
    }

    fn conv(&mut self, x: usize, layer: &Conv) -> Result<usize> {
        let g = layer.geom;
        let (batch, cin, input) = split_nc_spatial(&self.shapes[x], g.spatial_rank, "conv")?;
        let w = self.params.get(layer.weight).shape().to_vec();
        let cout = w.first().copied().unwrap_or(0);
        let mut expect = vec![cout, cin];
        expect.extend(g.kernel_dims());
        if w != expect {
            return Err(Error::shape("conv", format!("weights {w:?} incompatible with input {:?}", self.shapes[x])));
        }
        self.check_bias(layer, cout, "conv")?;
        let out = g.conv_out(input)?;
        Ok(self.push(crate::tensor::shape::join_nc_spatial(batch, cout, out, g.spatial_rank)))
    }

    fn conv_transpose(&mut self, x: usize, layer: &Conv) -> Result<usize> {
        let g = layer.geom;
        let (batch, cin, input) = split_nc_spatial(&self.shapes[x], g.spatial_rank, "conv_transpose")?;
        let w = self.params.get(layer.weight).shape().to_vec();
        if w.len() != g.spatial_rank + 2 || w[0] != cin || w[2..] != g.kernel_dims()[..] {
            return Err(Error::shape(
                "conv_transpose",
                format!("weights {w:?} incompatible with input {:?}", self.shapes[x]),
            ));
        }
        self.check_bias(layer, w[1], "conv_transpose")?;
        let out = g.transpose_out(input)?;
        Ok(self.push(crate::tensor::shape::join_nc_spatial(batch, w[1], out, g.spatial_rank)))
    }

    fn batch_norm(&mut self, x: usize, layer: &BatchNorm) -> Result<usize> {
        let s = self.shapes[x].clone();
        let ch = self.params.get(layer.gamma).shape();
        if s.len() < 2 || ch != [s[1]] {
            return Err(Error::shape("batch_norm", format!("scale {ch:?} for input {s:?}")));
        }
        Ok(self.push(s))
    }

    fn leaky_relu(&mut self, x: usize) -> usize {
        let s = self.shapes[x].clone();
        self.push(s)
    }

    fn max_pool(&mut self, x: usize, geom: PoolGeom) -> Result<usize> {
        let s = self.shapes[x].clone();
        if s.len() < 3 {
            return Err(Error::shape("max_pool", format!("need at least 3 axes, got {s:?}")));
        }
        let n = s.len();
        let out = geom.out([s[n - 2], s[n - 1]])?;
        let mut o = s[..n - 2].to_vec();
        o.extend_from_slice(&out);
        Ok(self.push(o))
    }

    fn concat(&mut self, xs: &[usize]) -> Result<usize> {
        let base = self.shapes[*xs.first().ok_or_else(|| Error::shape("concat_channels", "no inputs"))?].clone();
        let mut channels = 0;
        for &v in xs {
            let s = &self.shapes[v];
            if s.len() != base.len() || s.len() < 2 || s[0] != base[0] || s[2..] != base[2..] {
                return Err(Error::shape(
                    "concat_channels",
                    format!("{s:?} cannot be concatenated with {base:?} along channels"),
                ));
            }
            channels += s[1];
        }
        let mut o = base;
        o[1] = channels;
        Ok(self.push(o))
    }

    fn softmax(&mut self, x: usize) -> Result<usize> {
        let s = self.shapes[x].clone();
        Ok(self.push(s))
    }

    fn reshape(&mut self, x: usize, shape: &[usize]) -> Result<usize> {
        let n: usize = self.shapes[x].iter().product();
        if shape.iter().product::<usize>() != n {
            return Err(Error::shape("reshape", format!("{:?} cannot become {shape:?}", self.shapes[x])));
        }
        Ok(self.push(shape.to_vec()))
    }

    fn spatial_mean(&mut self, x: usize) -> Result<usize> {
        let s = self.shapes[x].clone();
        if s.len() != 4 {
            return Err(Error::shape("spatial_mean", format!("need [B, C, H, W], got {s:?}")));
        }
        Ok(self.push(vec![s[0], s[1], 1, 1]))
    }

    fn broadcast_spatial(&mut self, x: usize, h: usize, w: usize) -> Result<usize> {
        let s = self.shapes[x].clone();
        if s.len() != 4 || s[2] != 1 || s[3] != 1 {
            return Err(Error::shape("broadcast_spatial", format!("need [B, C, 1, 1], got {s:?}")));
        }
        Ok(self.push(vec![s[0], s[1], h, w]))
    }

    fn record(&mut self, name: &str, v: usize) {
        self.trace.push((name.to_string(), self.shapes[v].clone()));
    }
}
