use rand_chacha::ChaCha8Rng;

use super::graph::Graph;
use super::params::{he_normal, BufferId, ParamId, ParamStore};
use crate::error::Result;
use crate::tensor::{ConvGeom, Scalar, Tensor};

/// Convolution (or transposed convolution) weights with their geometry.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
}

impl Conv {
    /// Weights `[cout, cin, k…]`, He-initialized, zero bias.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
    ) -> Self {
        let mut shape = vec![cout, cin];
        shape.extend(geom.kernel_dims());
        let weight = store.add(format!("{name}.weight"), he_normal(shape, cin * geom.taps(), rng));
        let bias = Some(store.add(format!("{name}.bias"), Tensor::zeros(vec![cout])));
        Conv { weight, bias, geom }
    }

    /// Transposed-convolution weights `[cin, cout, k…]`. The fan-in counts
    /// the taps reaching one output position, `cin·taps / Π stride`.
    pub fn transposed<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
    ) -> Self {
        let mut shape = vec![cin, cout];
        shape.extend(geom.kernel_dims());
        let stride: usize = geom.stride[3 - geom.spatial_rank..].iter().product();
        let fan_in = (cin * geom.taps() / stride.max(1)).max(1);
        let weight = store.add(format!("{name}.weight"), he_normal(shape, fan_in, rng));
        let bias = Some(store.add(format!("{name}.bias"), Tensor::zeros(vec![cout])));
        Conv { weight, bias, geom }
    }

    pub fn forward<G: Graph>(&self, g: &mut G, x: G::V) -> Result<G::V> {
        g.conv(x, self)
    }

    pub fn forward_transposed<G: Graph>(&self, g: &mut G, x: G::V) -> Result<G::V> {
        g.conv_transpose(x, self)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub buffer: BufferId,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(vec![channels], T::one()));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(vec![channels]));
        let buffer = store.add_buffer(name, channels);
        BatchNorm { gamma, beta, buffer }
    }
}

/// Convolution, batch norm, leaky ReLU.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl ConvBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
    ) -> Self {
        ConvBlock {
            conv: Conv::new(store, rng, &format!("{name}.conv"), cin, cout, geom),
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout),
        }
    }

    pub fn forward<G: Graph>(&self, g: &mut G, x: G::V) -> Result<G::V> {
        let y = g.conv(x, &self.conv)?;
        let y = g.batch_norm(y, &self.bn)?;
        Ok(g.leaky_relu(y))
    }
}

/// Two chained [`ConvBlock`]s.
#[derive(Clone, Debug)]
pub struct DoubleBlock(pub ConvBlock, pub ConvBlock);

impl DoubleBlock {
    /// `3×3`, stride 1, padding 1 twice.
    pub fn same_2d<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize) -> Self {
        let g = ConvGeom::square(3, 1, 1, 1);
        DoubleBlock(
            ConvBlock::new(store, rng, &format!("{name}.0"), cin, cout, g),
            ConvBlock::new(store, rng, &format!("{name}.1"), cout, cout, g),
        )
    }

    /// `3×3×3` twice, spatial padding 1. The depth padding of each
    /// convolution is 0 while its input depth exceeds 1, and 1 otherwise.
    pub fn temporal_3d<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        depth: usize,
    ) -> Self {
        let pad = |d: usize| if d > 1 { 0 } else { 1 };
        let g0 = ConvGeom::conv3d([3; 3], [1; 3], [pad(depth), 1, 1], [1; 3]);
        let depth1 = if depth > 1 { depth - 2 } else { depth };
        let g1 = ConvGeom::conv3d([3; 3], [1; 3], [pad(depth1), 1, 1], [1; 3]);
        DoubleBlock(
            ConvBlock::new(store, rng, &format!("{name}.0"), cin, cout, g0),
            ConvBlock::new(store, rng, &format!("{name}.1"), cout, cout, g1),
        )
    }

    pub fn forward<G: Graph>(&self, g: &mut G, x: G::V) -> Result<G::V> {
        let y = self.0.forward(g, x)?;
        self.1.forward(g, y)
    }
}

/// Atrous spatial pyramid pooling: a pointwise block, one dilated `3×3`
/// block per rate and an image-level branch (global mean, pointwise conv,
/// broadcast), concatenated in that order.
#[derive(Clone, Debug)]
pub struct Aspp {
    pub pointwise: ConvBlock,
    pub atrous: Vec<ConvBlock>,
    pub image: Conv,
}

impl Aspp {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        branch: usize,
        rates: &[usize],
    ) -> Self {
        let pointwise = ConvBlock::new(store, rng, &format!("{name}.pointwise"), cin, branch, ConvGeom::pointwise());
        let atrous = rates
            .iter()
            .enumerate()
            .map(|(i, &r)| ConvBlock::new(store, rng, &format!("{name}.atrous{i}"), cin, branch, ConvGeom::square(3, 1, r, r)))
            .collect();
        let image = Conv::new(store, rng, &format!("{name}.image"), cin, branch, ConvGeom::pointwise());
        Aspp { pointwise, atrous, image }
    }

    /// Number of concatenated branches.
    pub fn branches(&self) -> usize {
        self.atrous.len() + 2
    }

    pub fn forward<G: Graph>(&self, g: &mut G, x: G::V) -> Result<G::V> {
        let s = g.shape(x);
        let mut outs = vec![self.pointwise.forward(g, x)?];
        for b in &self.atrous {
            outs.push(b.forward(g, x)?);
        }
        let pooled = g.spatial_mean(x)?;
        let pooled = g.conv(pooled, &self.image)?;
        outs.push(g.broadcast_spatial(pooled, s[2], s[3])?);
        g.concat(&outs)
    }
}
