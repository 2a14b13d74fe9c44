//! Finite-difference gradient suites shared by the `gradcheck` command and
//! the test suites.

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::dataset::one_hot;
use crate::error::Result;
use crate::loss::{coherence, combined, soft_dice, wce, LossWeights, Targets};
use crate::model::{Inputs, Model, ModelConfig, ParamStore, SegmentationOutput, TapeGraph, Variant};
use crate::tensor::{
    grad_check, relative_error, BatchNormMode, ConvGeom, GradCheckReport, PoolGeom, Tape, Tensor, Var,
};

/// Central-difference step of the operation and loss suites.
pub const EPS: f64 = 1e-5;

/// Central-difference step of the end-to-end check. Smaller than [`EPS`]
/// so a step rarely crosses a leaky-ReLU or max-pool kink in the network.
pub const NETWORK_EPS: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub report: GradCheckReport,
}

fn uniform(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Distinct values at least `gap / n` apart in random order, so small
/// perturbations never change an arg-max.
fn separated(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / n as f64).collect();
    v.shuffle(rng);
    Tensor::new(shape, v).expect("length matches")
}

/// Values with `|x| ≥ 0.05`.
fn off_zero(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

/// `Σ y ⊙ r` for a fixed pseudo-random `r`, so every output coordinate
/// reaches the scalar with a distinct weight.
fn project(t: &mut Tape<f64>, y: Var) -> Result<Var> {
    let shape = t.shape(y).to_vec();
    let r = t.constant(Tensor::from_fn(shape, |i| (i as f64 * 1.618_034 + 0.3).sin()));
    let p = t.mul(y, r)?;
    Ok(t.sum_all(p))
}

fn check(
    out: &mut Vec<CheckResult>,
    name: &str,
    x: &Tensor<f64>,
    f: impl FnMut(&mut Tape<f64>, Var) -> Result<Var>,
) -> Result<()> {
    let report = grad_check(f, x, EPS)?;
    out.push(CheckResult { name: name.to_string(), report });
    Ok(())
}

/// Every differentiable engine operation, each input checked separately,
/// on small random inputs drawn from `seed`.
pub fn op_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let r = &mut rng;

    let convs = [
        ("conv2d", vec![2, 2, 5, 5], vec![3, 2, 3, 3], ConvGeom::square(3, 1, 1, 1)),
        ("conv2d_strided_dilated", vec![1, 2, 7, 6], vec![2, 2, 3, 3], ConvGeom::conv2d([3, 3], [2, 1], [2, 2], [2, 2])),
        ("conv3d", vec![1, 2, 3, 4, 4], vec![2, 2, 3, 3, 3], ConvGeom::conv3d([3; 3], [1; 3], [0, 1, 1], [1; 3])),
    ];
    for (name, xs, ws, g) in convs {
        let (x, w, b) = (uniform(xs, -1.0, 1.0, r), uniform(ws.clone(), -1.0, 1.0, r), uniform(vec![ws[0]], -1.0, 1.0, r));
        check(&mut out, &format!("{name}/x"), &x, |t, v| {
            let (wv, bv) = (t.constant(w.clone()), t.constant(b.clone()));
            let y = t.conv(v, wv, Some(bv), g)?;
            project(t, y)
        })?;
        check(&mut out, &format!("{name}/w"), &w, |t, v| {
            let (xv, bv) = (t.constant(x.clone()), t.constant(b.clone()));
            let y = t.conv(xv, v, Some(bv), g)?;
            project(t, y)
        })?;
        check(&mut out, &format!("{name}/b"), &b, |t, v| {
            let (xv, wv) = (t.constant(x.clone()), t.constant(w.clone()));
            let y = t.conv(xv, wv, Some(v), g)?;
            project(t, y)
        })?;
    }

    let ups = [
        ("conv_transpose_2x2", vec![1, 2, 3, 3], vec![2, 3, 2, 2], ConvGeom::square(2, 2, 0, 1)),
        ("conv_transpose_2x1", vec![2, 2, 3, 2], vec![2, 2, 2, 1], ConvGeom::conv2d([2, 1], [2, 1], [0, 0], [1, 1])),
    ];
    for (name, xs, ws, g) in ups {
        let (x, w, b) = (uniform(xs, -1.0, 1.0, r), uniform(ws.clone(), -1.0, 1.0, r), uniform(vec![ws[1]], -1.0, 1.0, r));
        check(&mut out, &format!("{name}/x"), &x, |t, v| {
            let (wv, bv) = (t.constant(w.clone()), t.constant(b.clone()));
            let y = t.conv_transpose(v, wv, Some(bv), g)?;
            project(t, y)
        })?;
        check(&mut out, &format!("{name}/w"), &w, |t, v| {
            let (xv, bv) = (t.constant(x.clone()), t.constant(b.clone()));
            let y = t.conv_transpose(xv, v, Some(bv), g)?;
            project(t, y)
        })?;
        check(&mut out, &format!("{name}/b"), &b, |t, v| {
            let (xv, wv) = (t.constant(x.clone()), t.constant(w.clone()));
            let y = t.conv_transpose(xv, wv, Some(v), g)?;
            project(t, y)
        })?;
    }

    for (name, k) in [("max_pool_2x2", [2, 2]), ("max_pool_2x1", [2, 1])] {
        let x = separated(vec![2, 2, 4, 4], r);
        check(&mut out, name, &x, |t, v| {
            let y = t.max_pool(v, PoolGeom::new(k, k))?;
            project(t, y)
        })?;
    }

    let (x, gamma, beta) = (uniform(vec![2, 3, 4, 4], -1.0, 1.0, r), uniform(vec![3], 0.5, 1.5, r), uniform(vec![3], -0.5, 0.5, r));
    let (mean, var) = (vec![0.1, -0.2, 0.3], vec![0.5, 1.0, 2.0]);
    for (name, train) in [("batch_norm_train", true), ("batch_norm_eval", false)] {
        let mode = || if train { BatchNormMode::Train } else { BatchNormMode::Eval { mean: &mean, var: &var } };
        check(&mut out, &format!("{name}/x"), &x, |t, v| {
            let (g, b) = (t.constant(gamma.clone()), t.constant(beta.clone()));
            let y = t.batch_norm(v, g, b, mode(), 1e-5)?.0;
            project(t, y)
        })?;
        check(&mut out, &format!("{name}/gamma"), &gamma, |t, v| {
            let (xv, b) = (t.constant(x.clone()), t.constant(beta.clone()));
            let y = t.batch_norm(xv, v, b, mode(), 1e-5)?.0;
            project(t, y)
        })?;
        check(&mut out, &format!("{name}/beta"), &beta, |t, v| {
            let (xv, g) = (t.constant(x.clone()), t.constant(gamma.clone()));
            let y = t.batch_norm(xv, g, v, mode(), 1e-5)?.0;
            project(t, y)
        })?;
    }

    let x = off_zero(vec![3, 7], r);
    check(&mut out, "leaky_relu", &x, |t, v| {
        let y = t.leaky_relu(v, 0.01);
        project(t, y)
    })?;
    let x = uniform(vec![2, 4, 3, 2], -3.0, 3.0, r);
    check(&mut out, "softmax_channels", &x, |t, v| {
        let y = t.softmax_channels(v)?;
        project(t, y)
    })?;
    let (x, other) = (uniform(vec![2, 2, 3, 3], -1.0, 1.0, r), uniform(vec![2, 3, 3, 3], -1.0, 1.0, r));
    check(&mut out, "concat_channels", &x, |t, v| {
        let o = t.constant(other.clone());
        let y = t.concat_channels(&[o, v, o])?;
        project(t, y)
    })?;
    let x = uniform(vec![2, 3, 4], -1.0, 1.0, r);
    check(&mut out, "reshape", &x, |t, v| {
        let y = t.reshape(v, &[6, 4])?;
        project(t, y)
    })?;
    let x = uniform(vec![4, 5], 0.05, 2.0, r);
    check(&mut out, "clamp_log", &x, |t, v| {
        let y = t.clamp_log(v, 1e-12);
        project(t, y)
    })?;

    let (x, other) = (uniform(vec![3, 4], -1.0, 1.0, r), uniform(vec![3, 4], 0.5, 1.5, r));
    type Binary = fn(&mut Tape<f64>, Var, Var) -> Result<Var>;
    let binaries: [(&str, Binary); 4] = [
        ("add", |t, a, b| t.add(a, b)),
        ("sub", |t, a, b| t.sub(a, b)),
        ("mul", |t, a, b| t.mul(a, b)),
        ("div", |t, a, b| t.div(a, b)),
    ];
    for (name, op) in binaries {
        check(&mut out, &format!("{name}/a"), &x, |t, v| {
            let o = t.constant(other.clone());
            let y = op(t, v, o)?;
            project(t, y)
        })?;
        check(&mut out, &format!("{name}/b"), &other, |t, v| {
            let o = t.constant(x.clone());
            let y = op(t, o, v)?;
            project(t, y)
        })?;
    }
    check(&mut out, "scale", &x, |t, v| {
        let y = t.scale(v, -2.5);
        project(t, y)
    })?;
    check(&mut out, "add_scalar", &x, |t, v| {
        let y = t.add_scalar(v, 0.7);
        project(t, y)
    })?;
    check(&mut out, "square", &x, |t, v| {
        let y = t.square(v);
        project(t, y)
    })?;
    let x = uniform(vec![2, 3, 4], -1.0, 1.0, r);
    check(&mut out, "sum_trailing", &x, |t, v| {
        let y = t.sum_trailing(v, 1)?;
        project(t, y)
    })?;
    check(&mut out, "mean_all", &x, |t, v| Ok(t.mean_all(v)))?;
    check(&mut out, "broadcast_trailing", &x, |t, v| {
        let y = t.broadcast_trailing(v, &[2, 3, 4, 3])?;
        project(t, y)
    })?;
    let x = separated(vec![2, 3, 5], r);
    check(&mut out, "max_last", &x, |t, v| {
        let y = t.max_last(v)?;
        project(t, y)
    })?;
    Ok(out)
}

/// The three losses and their combination on random 2-class `4×4` maps.
pub fn loss_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut out = Vec::new();
    let labels = |r: &mut ChaCha8Rng, w: usize| Tensor::from_fn(vec![1, 4, w], |_| r.random_range(0..2u8));
    let (rd_labels, ra_labels) = (labels(r, 4), labels(r, 3));
    let (y_rd, y_ra) = (one_hot::<f64>(&rd_labels, 2)?, one_hot::<f64>(&ra_labels, 2)?);
    let p_rd = uniform(vec![1, 2, 4, 4], 0.05, 1.0, r);
    let p_ra = separated(vec![1, 2, 4, 3], r).map(|v| 0.55 + 0.4 * v);
    let p_rd_sep = separated(vec![1, 2, 4, 4], r).map(|v| 0.55 + 0.4 * v);
    let w = [0.3, 0.7];

    check(&mut out, "wce", &p_rd, |t, v| wce(t, v, &y_rd, &w))?;
    check(&mut out, "soft_dice", &p_rd, |t, v| soft_dice(t, v, &y_rd))?;
    check(&mut out, "coherence/rd", &p_rd_sep, |t, v| {
        let b = t.constant(p_ra.clone());
        coherence(t, v, b)
    })?;
    check(&mut out, "coherence/ra", &p_ra, |t, v| {
        let a = t.constant(p_rd_sep.clone());
        coherence(t, a, v)
    })?;
    let targets = Targets { rd_labels: &rd_labels, ra_labels: &ra_labels, rd_weights: &w, ra_weights: &w };
    check(&mut out, "combined", &p_rd_sep, |t, v| {
        let b = t.constant(p_ra.clone());
        let out = SegmentationOutput { p_rd: v, p_ra: b };
        Ok(combined(t, &out, &targets, &LossWeights::default())?.0)
    })?;
    let _ = y_ra;
    Ok(out)
}

/// Combined loss of `variant` at 1/8 of the full extents and width 1/8,
/// differentiated with respect to its parameters. Checks `per_tensor`
/// random coordinates of every parameter tensor except the convolution
/// biases that feed a batch norm, whose gradient is identically zero.
pub fn network_check(variant: Variant, seed: u64, per_tensor: usize) -> Result<CheckResult> {
    let config = ModelConfig::new(variant).with_extents(32, 32, 8).with_width(1.0 / 8.0);
    let model = Model::<f64>::build(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let shapes = model.input_shapes(2);
    let inputs = Inputs {
        rd: uniform(shapes.rd, 0.0, 1.0, &mut rng),
        ra: uniform(shapes.ra, 0.0, 1.0, &mut rng),
        ad: shapes.ad.map(|s| uniform(s, 0.0, 1.0, &mut rng)),
    };
    let k = model.config.n_classes;
    let rd_labels = Tensor::from_fn(vec![2, 32, 8], |_| rng.random_range(0..k as u8));
    let ra_labels = Tensor::from_fn(vec![2, 32, 32], |_| rng.random_range(0..k as u8));
    let w = vec![1.0 / k as f64; k];
    let targets = Targets { rd_labels: &rd_labels, ra_labels: &ra_labels, rd_weights: &w, ra_weights: &w };
    let lw = LossWeights::default();

    let loss_of = |params: &ParamStore<f64>| -> Result<(Tape<f64>, Var, Vec<Var>)> {
        let mut g = TapeGraph::new(params, true);
        let x = Inputs {
            rd: g.input(inputs.rd.clone()),
            ra: g.input(inputs.ra.clone()),
            ad: inputs.ad.clone().map(|a| g.input(a)),
        };
        let out = model.forward(&mut g, x)?;
        let (loss, _) = combined(&mut g.tape, &out, &targets, &lw)?;
        let vars = g.param_vars().to_vec();
        Ok((g.tape, loss, vars))
    };
    let (tape, loss, vars) = loss_of(&model.params)?;
    let grads = tape.backward(loss)?;
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0, checked: 0 };
    let mut worst_name = String::new();
    let mut params = model.params.clone();
    for (pi, p) in model.params.params.iter().enumerate() {
        if p.name.ends_with(".conv.bias") {
            continue;
        }
        let g = grads.get(vars[pi]).expect("every parameter reaches the loss");
        for _ in 0..per_tensor.min(p.value.numel()) {
            let i = rng.random_range(0..p.value.numel());
            let orig = p.value.data()[i];
            let mut eval = |v: f64| -> Result<f64> {
                params.params[pi].value.data_mut()[i] = v;
                let (t, l, _) = loss_of(&params)?;
                Ok(t.value(l).data()[0])
            };
            let numeric = (eval(orig + NETWORK_EPS)? - eval(orig - NETWORK_EPS)?) / (2.0 * NETWORK_EPS);
            params.params[pi].value.data_mut()[i] = orig;
            let analytic = g.data()[i];
            let e = relative_error(analytic, numeric);
            report.checked += 1;
            if e >= report.max_rel_error {
                report = GradCheckReport { max_rel_error: e, worst_index: i, analytic, numeric, checked: report.checked };
                worst_name.clone_from(&p.name);
            }
        }
    }
    Ok(CheckResult { name: format!("{variant} end-to-end (worst at {worst_name})"), report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes() {
        for seed in [0, 1] {
            for c in op_checks(seed).unwrap().into_iter().chain(loss_checks(seed).unwrap()) {
                assert!(c.report.max_rel_error < 1e-6, "{}: {:?}", c.name, c.report);
            }
        }
    }

    #[test]
    fn network_gradient_matches_finite_differences() {
        let c = network_check(Variant::TmvaNet, 3, 1).unwrap();
        assert!(c.report.checked > 20);
        assert!(c.report.max_rel_error < 1e-3, "{}: {:?}", c.name, c.report);
    }
}
