use super::config::{ModelConfig, Variant};
use super::graph::{Graph, ShapeGraph, BN_MOMENTUM};
use super::layers::{Aspp, Conv, DoubleBlock};
use super::params::{init_rng, BufferId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{BatchStats, ConvGeom, PoolGeom, Scalar};

/// Attaches the layer name to any failure inside it.
fn at<V>(layer: &str, r: Result<V>) -> Result<V> {
    r.map_err(|e| match e {
        Error::Shape { .. } | Error::Config(_) => Error::Config(format!("layer {layer}: {e}")),
        other => other,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ViewKind {
    Rd,
    Ra,
    Ad,
}

impl ViewKind {
    fn prefix(self) -> &'static str {
        match self {
            ViewKind::Rd => "rd",
            ViewKind::Ra => "ra",
            ViewKind::Ad => "ad",
        }
    }

    /// Downsampling of the encoders: range only for RD, range and angle
    /// for RA, angle only for AD.
    fn pool(self) -> PoolGeom {
        match self {
            ViewKind::Ra => PoolGeom::new([2, 2], [2, 2]),
            ViewKind::Rd | ViewKind::Ad => PoolGeom::new([2, 1], [2, 1]),
        }
    }

    fn up(self) -> ConvGeom {
        match self {
            ViewKind::Ra => ConvGeom::square(2, 2, 0, 1),
            _ => ConvGeom::conv2d([2, 1], [2, 1], [0, 0], [1, 1]),
        }
    }
}

#[derive(Clone, Debug)]
struct Encoder {
    view: ViewKind,
    first: DoubleBlock,
    temporal: bool,
    block: DoubleBlock,
    project: Conv,
    aspp: Option<(Aspp, Conv)>,
}

struct Encoded<V> {
    latent: V,
    fused: Option<V>,
}

impl Encoder {
    fn forward<G: Graph>(&self, g: &mut G, x: G::V) -> Result<Encoded<G::V>> {
        let p = self.view.prefix();
        let name = |i: usize| format!("{p}_layer{i}");
        let l1 = name(1);
        let mut y = at(&l1, self.first.forward(g, x))?;
        if self.temporal {
            let s = g.shape(y);
            if s.len() != 5 || s[2] != 1 {
                return Err(Error::Config(format!("layer {l1}: temporal convolutions left depth {s:?}, expected 1")));
            }
            y = at(&l1, g.reshape(y, &[s[0], s[1], s[3], s[4]]))?;
        }
        g.record(&l1, y);
        let y = at(&name(2), g.max_pool(y, self.view.pool()))?;
        g.record(&name(2), y);
        let y = at(&name(3), self.block.forward(g, y))?;
        g.record(&name(3), y);
        let y = at(&name(4), g.max_pool(y, self.view.pool()))?;
        g.record(&name(4), y);
        let latent = at(&name(5), self.project.forward(g, y))?;
        g.record(&name(5), latent);
        let fused = match &self.aspp {
            None => None,
            Some((aspp, fuse)) => {
                let m = at(&name(6), aspp.forward(g, latent))?;
                g.record(&name(6), m);
                let f = at(&name(7), fuse.forward(g, m))?;
                g.record(&name(7), f);
                Some(f)
            }
        };
        Ok(Encoded { latent, fused })
    }
}

#[derive(Clone, Debug)]
struct Decoder {
    view: ViewKind,
    /// Number of the latent projection layer.
    first: usize,
    project: Conv,
    up1: Conv,
    block1: DoubleBlock,
    up2: Conv,
    block2: DoubleBlock,
    head: Conv,
}

impl Decoder {
    /// `skips` are concatenated around the latent projection as
    /// `[skips[0], projection, skips[1..]]`.
    fn forward<G: Graph>(&self, g: &mut G, latent: G::V, skips: &[G::V]) -> Result<G::V> {
        let p = self.view.prefix();
        let mut n = self.first;
        let mut name = || {
            let s = format!("{p}_layer{n}");
            n += 1;
            s
        };
        let l = name();
        let proj = at(&l, self.project.forward(g, latent))?;
        g.record(&l, proj);
        let x = if skips.is_empty() {
            proj
        } else {
            let mut parts = vec![skips[0], proj];
            parts.extend_from_slice(&skips[1..]);
            let l = name();
            let c = at(&l, g.concat(&parts))?;
            g.record(&l, c);
            c
        };
        let l = name();
        let x = at(&l, self.up1.forward_transposed(g, x))?;
        g.record(&l, x);
        let l = name();
        let x = at(&l, self.block1.forward(g, x))?;
        g.record(&l, x);
        let l = name();
        let x = at(&l, self.up2.forward_transposed(g, x))?;
        g.record(&l, x);
        let l = name();
        let x = at(&l, self.block2.forward(g, x))?;
        g.record(&l, x);
        let l = name();
        let logits = at(&l, self.head.forward(g, x))?;
        g.record(&l, logits);
        g.softmax(logits)
    }
}

/// Network inputs: `[B, q+1, H, W]` stacks, or `[B, 1, q+1, H, W]` for
/// the temporal variant.
#[derive(Clone, Copy, Debug)]
pub struct Inputs<V> {
    pub rd: V,
    pub ra: V,
    pub ad: Option<V>,
}

/// Per-bin class probabilities `[B, K, n_range, n_doppler]` and
/// `[B, K, n_range, n_angle]`.
#[derive(Clone, Copy, Debug)]
pub struct SegmentationOutput<V> {
    pub p_rd: V,
    pub p_ra: V,
}

/// A built network: its configuration, parameters and wiring.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    encoders: Vec<Encoder>,
    decoders: [Decoder; 2],
}

impl<T: Scalar> Model<T> {
    /// Registers every layer (He-initialized from `seed`) and checks the
    /// whole network on the configured extents.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::default();
        let mut rng = init_rng(seed);
        let v = config.variant;
        let c = config.channels();
        let mut views = vec![ViewKind::Rd, ViewKind::Ra];
        if v.uses_ad() {
            views.insert(1, ViewKind::Ad);
        }
        let mut encoders = Vec::new();
        for view in views {
            let p = view.prefix();
            let first = if v.is_temporal() {
                DoubleBlock::temporal_3d(&mut store, &mut rng, &format!("{p}_layer1"), 1, c, config.frames())
            } else {
                DoubleBlock::same_2d(&mut store, &mut rng, &format!("{p}_layer1"), config.frames(), c)
            };
            let block = DoubleBlock::same_2d(&mut store, &mut rng, &format!("{p}_layer3"), c, c);
            let project = Conv::new(&mut store, &mut rng, &format!("{p}_layer5"), c, c, ConvGeom::pointwise());
            let aspp = v.has_aspp().then(|| {
                let a = Aspp::new(&mut store, &mut rng, &format!("{p}_layer6"), c, c, &config.aspp_rates);
                let width = a.branches() * c;
                let fuse = Conv::new(&mut store, &mut rng, &format!("{p}_layer7"), width, c, ConvGeom::pointwise());
                (a, fuse)
            });
            encoders.push(Encoder { view, first, temporal: v.is_temporal(), block, project, aspp });
        }
        let latent = encoders.len() * c;
        let skips = match v {
            Variant::MvNet => 0,
            Variant::MvaNetA => 1,
            Variant::MvaNetB | Variant::TmvaNet => 2,
        };
        let first = if v.has_aspp() { 9 } else { 7 };
        let decoders = [ViewKind::Rd, ViewKind::Ra].map(|view| {
            let p = view.prefix();
            let mut n = first;
            let mut name = || {
                let s = format!("{p}_layer{n}");
                n += 1;
                s
            };
            let project = Conv::new(&mut store, &mut rng, &name(), latent, c, ConvGeom::pointwise());
            if skips > 0 {
                name();
            }
            let up1 = Conv::transposed(&mut store, &mut rng, &name(), (skips + 1) * c, c, view.up());
            let block1 = DoubleBlock::same_2d(&mut store, &mut rng, &name(), c, c);
            let up2 = Conv::transposed(&mut store, &mut rng, &name(), c, c, view.up());
            let block2 = DoubleBlock::same_2d(&mut store, &mut rng, &name(), c, c);
            let head = Conv::new(&mut store, &mut rng, &name(), c, config.n_classes, ConvGeom::pointwise());
            Decoder { view, first, project, up1, block1, up2, block2, head }
        });
        let model = Model { config, params: store, encoders, decoders };
        model.trace_shapes()?;
        Ok(model)
    }

    /// Input extents for a batch of `b`.
    pub fn input_shapes(&self, b: usize) -> Inputs<Vec<usize>> {
        let c = &self.config;
        let stack = |h: usize, w: usize| {
            if c.variant.is_temporal() {
                vec![b, 1, c.frames(), h, w]
            } else {
                vec![b, c.frames(), h, w]
            }
        };
        Inputs {
            rd: stack(c.n_range, c.n_doppler),
            ra: stack(c.n_range, c.n_angle),
            ad: c.variant.uses_ad().then(|| stack(c.n_angle, c.n_doppler)),
        }
    }

    pub fn forward<G: Graph>(&self, g: &mut G, inputs: Inputs<G::V>) -> Result<SegmentationOutput<G::V>> {
        let v = self.config.variant;
        let expected = self.input_shapes(g.shape(inputs.rd).first().copied().unwrap_or(0));
        for (name, got, want) in [
            ("rd", Some(inputs.rd), Some(expected.rd)),
            ("ra", Some(inputs.ra), Some(expected.ra)),
            ("ad", inputs.ad, expected.ad),
        ] {
            match (got, want) {
                (Some(x), Some(w)) if g.shape(x) != w => {
                    return Err(Error::shape("forward", format!("{name} input {:?}, model expects {w:?}", g.shape(x))))
                }
                (None, Some(_)) => return Err(Error::Contract(format!("{v} needs an {name} input"))),
                _ => {}
            }
        }
        let mut encoded = Vec::new();
        for enc in &self.encoders {
            let x = match enc.view {
                ViewKind::Rd => inputs.rd,
                ViewKind::Ra => inputs.ra,
                ViewKind::Ad => inputs.ad.expect("checked above"),
            };
            encoded.push((enc.view, enc.forward(g, x)?));
        }
        let latent_name = if v.has_aspp() { "layer8" } else { "layer6" };
        let latents: Vec<G::V> = [ViewKind::Rd, ViewKind::Ra, ViewKind::Ad]
            .iter()
            .filter_map(|view| encoded.iter().find(|(k, _)| k == view).map(|(_, e)| e.latent))
            .collect();
        let latent = at(latent_name, g.concat(&latents))?;
        g.record(latent_name, latent);
        let fused = |view: ViewKind| encoded.iter().find(|(k, _)| *k == view).and_then(|(_, e)| e.fused);
        let mut outs = Vec::new();
        for dec in &self.decoders {
            let mut skips = Vec::new();
            if let Some(own) = fused(dec.view) {
                skips.push(own);
                if let Some(ad) = fused(ViewKind::Ad) {
                    skips.push(ad);
                }
            }
            outs.push(dec.forward(g, latent, &skips)?);
        }
        Ok(SegmentationOutput { p_rd: outs[0], p_ra: outs[1] })
    }

    /// Every recorded layer output for a single-sample batch, batch axis
    /// dropped.
    pub fn trace_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let mut g = ShapeGraph::new(&self.params);
        let shapes = self.input_shapes(1);
        let inputs = Inputs { rd: g.input(shapes.rd), ra: g.input(shapes.ra), ad: shapes.ad.map(|s| g.input(s)) };
        let out = self.forward(&mut g, inputs)?;
        let c = &self.config;
        let k = c.n_classes;
        for (name, v, want) in [
            ("rd", out.p_rd, vec![1, k, c.n_range, c.n_doppler]),
            ("ra", out.p_ra, vec![1, k, c.n_range, c.n_angle]),
        ] {
            if g.shape(v) != want {
                return Err(Error::Config(format!("{name} output {:?} differs from the view extents {want:?}", g.shape(v))));
            }
        }
        Ok(g.trace.into_iter().map(|(n, s)| (n, s[1..].to_vec())).collect())
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Trainable scalars per top-level layer, in registration order.
    pub fn audit(&self) -> Vec<(String, usize)> {
        let mut rows: Vec<(String, usize)> = Vec::new();
        for p in &self.params.params {
            let layer = p.name.split('.').next().unwrap_or(&p.name);
            match rows.last_mut() {
                Some((name, n)) if name == layer => *n += p.value.numel(),
                _ => rows.push((layer.to_string(), p.value.numel())),
            }
        }
        rows
    }

    /// Folds training-mode batch statistics into the running estimates:
    /// `r ← (1 − m)·r + m·batch` with the unbiased batch variance.
    pub fn update_running_stats(&mut self, stats: &[(BufferId, BatchStats<T>)]) {
        let m = T::from_f64_lossy(BN_MOMENTUM);
        let keep = T::one() - m;
        for (id, s) in stats {
            let correction = if s.count > 1 {
                T::from_usize(s.count).unwrap() / T::from_usize(s.count - 1).unwrap()
            } else {
                T::one()
            };
            let buf = self.params.buffer_mut(*id);
            for (r, &b) in buf.mean.iter_mut().zip(&s.mean) {
                *r = keep * *r + m * b;
            }
            for (r, &b) in buf.var.iter_mut().zip(&s.var) {
                *r = keep * *r + m * b * correction;
            }
        }
    }

    /// Same network and values in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            encoders: self.encoders.clone(),
            decoders: self.decoders.clone(),
        }
    }

    /// Zeroes the weights and biases of both classification heads.
    pub fn zero_heads(&mut self) {
        for d in &self.decoders {
            for id in [Some(d.head.weight), d.head.bias].into_iter().flatten() {
                self.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }
}
