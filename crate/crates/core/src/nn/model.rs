//! The separable-convolution regression network (an Xception-style entry
//! flow): stem conv, separable residual blocks, global average pooling and
//! a 1x1 linear head.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{self, BnCache, ConvParams, Mode, Padding};
use super::tensor::{Scalar, Tensor};
use crate::error::TensorError;
use crate::rng::{rng_for, TAG_INIT};
use crate::vf::ACTIVE_POINTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeparableBlockSpec {
    pub channels: usize,
    /// 3x3 stride-2 'same' max pool at the end of the block.
    pub pool: bool,
    pub residual: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub in_channels: usize,
    pub input_width: usize,
    pub input_height: usize,
    pub stem_channels: usize,
    pub blocks: Vec<SeparableBlockSpec>,
    pub out_channels: usize,
}

impl ModelSpec {
    /// Desk-scale default: stem of 8 channels and four pooled residual
    /// blocks 8 -> 16 -> 32 -> 64.
    pub fn desk(out_channels: usize, input_width: usize, input_height: usize) -> ModelSpec {
        ModelSpec {
            in_channels: 1,
            input_width,
            input_height,
            stem_channels: 8,
            blocks: [8, 16, 32, 64].iter().map(|&c| SeparableBlockSpec { channels: c, pool: true, residual: true }).collect(),
            out_channels,
        }
    }

    /// Deeper variant closer to the full entry and middle flows.
    pub fn xception_like(out_channels: usize, input_width: usize, input_height: usize) -> ModelSpec {
        let mut blocks: Vec<SeparableBlockSpec> =
            [32, 64, 128, 256].iter().map(|&c| SeparableBlockSpec { channels: c, pool: true, residual: true }).collect();
        blocks.extend((0..4).map(|_| SeparableBlockSpec { channels: 256, pool: false, residual: true }));
        ModelSpec { in_channels: 1, input_width, input_height, stem_channels: 32, blocks, out_channels }
    }

    /// Every violated constraint.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.in_channels == 0 {
            v.push("model.in_channels must be >= 1".to_string());
        }
        if self.input_width == 0 || self.input_height == 0 {
            v.push(format!("model input {}x{} must be at least 1x1", self.input_width, self.input_height));
        }
        if self.stem_channels == 0 {
            v.push("model.stem_channels must be >= 1".to_string());
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.channels == 0 {
                v.push(format!("model.blocks[{i}].channels must be >= 1"));
            }
        }
        if self.out_channels != 1 && self.out_channels != ACTIVE_POINTS {
            v.push(format!("model.out_channels is {}, must be 1 (MD) or {ACTIVE_POINTS} (thresholds)", self.out_channels));
        }
        v
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(TensorError::Spec(v.join("; ")))
        }
    }

    /// Names and shapes of the trainable parameters in declaration order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut p = Vec::new();
        let c0 = self.stem_channels;
        p.push(("stem.conv.w".to_string(), vec![c0, self.in_channels, 3, 3]));
        p.push(("stem.bn.gamma".to_string(), vec![c0]));
        p.push(("stem.bn.beta".to_string(), vec![c0]));
        let mut cin = c0;
        for (b, blk) in self.blocks.iter().enumerate() {
            let c = blk.channels;
            p.push((format!("block{b}.sep1.depthwise"), vec![cin, 1, 3, 3]));
            p.push((format!("block{b}.sep1.pointwise"), vec![c, cin, 1, 1]));
            p.push((format!("block{b}.bn1.gamma"), vec![c]));
            p.push((format!("block{b}.bn1.beta"), vec![c]));
            p.push((format!("block{b}.sep2.depthwise"), vec![c, 1, 3, 3]));
            p.push((format!("block{b}.sep2.pointwise"), vec![c, c, 1, 1]));
            p.push((format!("block{b}.bn2.gamma"), vec![c]));
            p.push((format!("block{b}.bn2.beta"), vec![c]));
            if skip_kind(blk, cin) == Skip::Projection {
                p.push((format!("block{b}.proj.w"), vec![c, cin, 1, 1]));
                p.push((format!("block{b}.proj.b"), vec![c]));
            }
            cin = c;
        }
        p.push(("head.w".to_string(), vec![self.out_channels, cin, 1, 1]));
        p.push(("head.b".to_string(), vec![self.out_channels]));
        p
    }

    /// Channel count of each batch-norm layer, in order.
    pub fn bn_channels(&self) -> Vec<usize> {
        let mut v = vec![self.stem_channels];
        for b in &self.blocks {
            v.push(b.channels);
            v.push(b.channels);
        }
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Length of the serialized weight blob: parameters then running stats.
    pub fn blob_len(&self) -> usize {
        self.parameter_count() + 2 * self.bn_channels().iter().sum::<usize>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Skip {
    None,
    Identity,
    Projection,
}

fn skip_kind(blk: &SeparableBlockSpec, cin: usize) -> Skip {
    if !blk.residual {
        Skip::None
    } else if blk.pool || blk.channels != cin {
        Skip::Projection
    } else {
        Skip::Identity
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockLayout {
    dw1: usize,
    pw1: usize,
    g1: usize,
    b1: usize,
    dw2: usize,
    pw2: usize,
    g2: usize,
    b2: usize,
    proj: Option<(usize, usize)>,
    skip: Skip,
    pool: bool,
}

#[derive(Debug, Clone)]
struct Layout {
    stem_w: usize,
    stem_g: usize,
    stem_b: usize,
    blocks: Vec<BlockLayout>,
    head_w: usize,
    head_b: usize,
}

impl Layout {
    fn of(spec: &ModelSpec) -> Layout {
        let mut i = 3;
        let mut cin = spec.stem_channels;
        let mut blocks = Vec::new();
        for blk in &spec.blocks {
            let skip = skip_kind(blk, cin);
            let proj = (skip == Skip::Projection).then(|| (i + 8, i + 9));
            blocks.push(BlockLayout {
                dw1: i,
                pw1: i + 1,
                g1: i + 2,
                b1: i + 3,
                dw2: i + 4,
                pw2: i + 5,
                g2: i + 6,
                b2: i + 7,
                proj,
                skip,
                pool: blk.pool,
            });
            i += if proj.is_some() { 10 } else { 8 };
            cin = blk.channels;
        }
        Layout { stem_w: 0, stem_g: 1, stem_b: 2, blocks, head_w: i, head_b: i + 1 }
    }
}

/// Running mean and variance of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: ModelSpec,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    running: Vec<RunningStats<T>>,
}

struct BlockTrace<T> {
    input: Tensor<T>,
    r1: Tensor<T>,
    bn1: BnCache<T>,
    v1: Tensor<T>,
    r2: Tensor<T>,
    bn2: BnCache<T>,
    pool_in_shape: Vec<usize>,
    argmax: Option<Vec<usize>>,
}

/// Intermediate activations kept for the backward pass.
pub struct Trace<T> {
    input: Tensor<T>,
    stem_bn: BnCache<T>,
    stem_bn_out: Tensor<T>,
    blocks: Vec<BlockTrace<T>>,
    gap_in_shape: Vec<usize>,
    pooled: Tensor<T>,
    output: Tensor<T>,
}

impl<T> Trace<T> {
    /// Network output, shape `(n, out_channels)`.
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }
}

fn check_finite<T: Scalar>(t: &Tensor<T>, layer: &str) -> Result<(), TensorError> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(TensorError::NonFinite { layer: layer.to_string() })
    }
}

const STEM: ConvParams = ConvParams { stride: 2, padding: Padding::Same, groups: 1 };
const POINTWISE: ConvParams = ConvParams { stride: 1, padding: Padding::Same, groups: 1 };

impl<T: Scalar> Network<T> {
    /// He-normal convolution weights, unit BN scale, zero biases; draws are
    /// taken in declaration order from a stream seeded by `seed`.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Network<T>, TensorError> {
        spec.validate()?;
        let mut rng = rng_for(&[TAG_INIT, seed]);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in spec.parameter_shapes() {
            let n: usize = shape.iter().product();
            let data: Vec<T> = if name.ends_with(".gamma") {
                vec![T::one(); n]
            } else if name.ends_with(".beta") || name.ends_with(".b") {
                vec![T::zero(); n]
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let gain = if name.starts_with("head") { 1.0 } else { 2.0 };
                let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
                (0..n).map(|_| T::from_f64(normal.sample(&mut rng))).collect()
            };
            names.push(name);
            params.push(Tensor::new(shape, data)?);
        }
        let running = spec
            .bn_channels()
            .iter()
            .map(|&c| RunningStats { mean: vec![T::zero(); c], var: vec![T::one(); c] })
            .collect();
        Ok(Network { spec: spec.clone(), names, params, running })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats<T>] {
        &self.running
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats<T>] {
        &mut self.running
    }

    /// Parameters followed by each BN layer's running mean and variance.
    pub fn to_blob(&self) -> Vec<T> {
        let mut out: Vec<T> = self.params.iter().flat_map(|p| p.data().iter().copied()).collect();
        for r in &self.running {
            out.extend_from_slice(&r.mean);
            out.extend_from_slice(&r.var);
        }
        out
    }

    pub fn from_blob(spec: &ModelSpec, blob: &[T]) -> Result<Network<T>, TensorError> {
        spec.validate()?;
        if blob.len() != spec.blob_len() {
            return Err(TensorError::ElementCount { shape: vec![spec.blob_len()], expected: spec.blob_len(), got: blob.len() });
        }
        let mut pos = 0;
        let mut take = |n: usize| {
            let s = blob[pos..pos + n].to_vec();
            pos += n;
            s
        };
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in spec.parameter_shapes() {
            let n = shape.iter().product();
            params.push(Tensor::new(shape, take(n))?);
            names.push(name);
        }
        let running = spec.bn_channels().iter().map(|&c| RunningStats { mean: take(c), var: take(c) }).collect();
        Ok(Network { spec: spec.clone(), names, params, running })
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            running: self
                .running
                .iter()
                .map(|r| RunningStats {
                    mean: r.mean.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                    var: r.var.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(), TensorError> {
        let s = &self.spec;
        let ok = input.shape().len() == 4
            && input.shape()[1] == s.in_channels
            && input.shape()[2] == s.input_height
            && input.shape()[3] == s.input_width;
        if ok {
            Ok(())
        } else {
            Err(TensorError::Shape {
                op: "forward",
                detail: format!(
                    "input {:?}, model expects (n, {}, {}, {})",
                    input.shape(),
                    s.in_channels,
                    s.input_height,
                    s.input_width
                ),
            })
        }
    }

    fn bn(&self, x: &Tensor<T>, g: usize, b: usize, stats: usize, mode: Mode) -> Result<(Tensor<T>, BnCache<T>), TensorError> {
        let r = &self.running[stats];
        ops::batch_norm(x, &self.params[g], &self.params[b], &r.mean, &r.var, mode)
    }

    /// Forward pass keeping every activation needed by [`Network::backward`].
    /// Does not touch the running statistics.
    pub fn forward_trace(&self, input: &Tensor<T>, mode: Mode) -> Result<Trace<T>, TensorError> {
        self.check_input(input)?;
        let lay = Layout::of(&self.spec);
        let p = &self.params;
        let stem_pre = ops::conv2d(input, &p[lay.stem_w], None, STEM)?;
        check_finite(&stem_pre, "stem.conv")?;
        let (stem_bn_out, stem_bn) = self.bn(&stem_pre, lay.stem_g, lay.stem_b, 0, mode)?;
        check_finite(&stem_bn_out, "stem.bn")?;
        let mut h = ops::relu(&stem_bn_out);
        let mut blocks = Vec::with_capacity(lay.blocks.len());
        for (bi, bl) in lay.blocks.iter().enumerate() {
            let name = |s: &str| format!("block{bi}.{s}");
            let r1 = ops::relu(&h);
            let u1 = ops::depthwise_separable_conv(&r1, &p[bl.dw1], &p[bl.pw1])?;
            check_finite(&u1, &name("sep1"))?;
            let (v1, bn1) = self.bn(&u1, bl.g1, bl.b1, 1 + 2 * bi, mode)?;
            check_finite(&v1, &name("bn1"))?;
            let r2 = ops::relu(&v1);
            let u2 = ops::depthwise_separable_conv(&r2, &p[bl.dw2], &p[bl.pw2])?;
            check_finite(&u2, &name("sep2"))?;
            let (v2, bn2) = self.bn(&u2, bl.g2, bl.b2, 2 + 2 * bi, mode)?;
            check_finite(&v2, &name("bn2"))?;
            let pool_in_shape = v2.shape().to_vec();
            let (mut out, argmax) = if bl.pool {
                let (m, a) = ops::max_pool(&v2, 3, 2, Padding::Same)?;
                (m, Some(a))
            } else {
                (v2, None)
            };
            match bl.skip {
                Skip::None => {}
                Skip::Identity => out.add_assign(&h),
                Skip::Projection => {
                    let (w, b) = bl.proj.expect("projection layout");
                    let stride = if bl.pool { 2 } else { 1 };
                    let s = ops::conv2d(&h, &p[w], Some(&p[b]), ConvParams::dense(stride, Padding::Same))?;
                    check_finite(&s, &name("proj"))?;
                    out = out.add(&s)?;
                }
            }
            blocks.push(BlockTrace { input: h, r1, bn1, v1, r2, bn2, pool_in_shape, argmax });
            h = out;
        }
        let gap_in_shape = h.shape().to_vec();
        let pooled = ops::global_avg_pool(&h);
        let head = ops::conv2d(&pooled, &p[lay.head_w], Some(&p[lay.head_b]), POINTWISE)?;
        check_finite(&head, "head")?;
        let n = input.shape()[0];
        let output = head.reshape(vec![n, self.spec.out_channels])?;
        Ok(Trace { input: input.clone(), stem_bn, stem_bn_out, blocks, gap_in_shape, pooled, output })
    }

    /// Predictions of shape `(n, out_channels)`.
    pub fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, TensorError> {
        Ok(self.forward_trace(input, mode)?.output)
    }

    /// Gradients of every parameter (declaration order) given the gradient
    /// of the loss with respect to the output.
    pub fn backward(&self, trace: &Trace<T>, grad_output: &Tensor<T>) -> Result<Vec<Tensor<T>>, TensorError> {
        if grad_output.shape() != trace.output.shape() {
            return Err(TensorError::Shape {
                op: "backward",
                detail: format!("grad {:?} vs output {:?}", grad_output.shape(), trace.output.shape()),
            });
        }
        let lay = Layout::of(&self.spec);
        let p = &self.params;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; p.len()];

        let n = grad_output.shape()[0];
        let g_head = grad_output.clone().reshape(vec![n, self.spec.out_channels, 1, 1])?;
        let hg = ops::conv2d_backward(&trace.pooled, &p[lay.head_w], &g_head, POINTWISE)?;
        grads[lay.head_w] = Some(hg.weight);
        grads[lay.head_b] = Some(hg.bias);
        let mut g = ops::global_avg_pool_backward(&trace.gap_in_shape, &hg.input);

        for (bl, bt) in lay.blocks.iter().zip(&trace.blocks).rev() {
            let mut g_in = Tensor::zeros(bt.input.shape());
            match bl.skip {
                Skip::None => {}
                Skip::Identity => g_in.add_assign(&g),
                Skip::Projection => {
                    let (w, b) = bl.proj.expect("projection layout");
                    let stride = if bl.pool { 2 } else { 1 };
                    let pg = ops::conv2d_backward(&bt.input, &p[w], &g, ConvParams::dense(stride, Padding::Same))?;
                    g_in.add_assign(&pg.input);
                    grads[w] = Some(pg.weight);
                    grads[b] = Some(pg.bias);
                }
            }
            let g_v2 = match &bt.argmax {
                Some(arg) => ops::max_pool_backward(&bt.pool_in_shape, arg, &g),
                None => g,
            };
            let b2 = ops::batch_norm_backward(&g_v2, &p[bl.g2], &bt.bn2)?;
            grads[bl.g2] = Some(b2.gamma);
            grads[bl.b2] = Some(b2.beta);
            let s2 = ops::depthwise_separable_backward(&bt.r2, &p[bl.dw2], &p[bl.pw2], &b2.input)?;
            grads[bl.dw2] = Some(s2.depthwise);
            grads[bl.pw2] = Some(s2.pointwise);
            let g_v1 = ops::relu_backward(&bt.v1, &s2.input);
            let b1 = ops::batch_norm_backward(&g_v1, &p[bl.g1], &bt.bn1)?;
            grads[bl.g1] = Some(b1.gamma);
            grads[bl.b1] = Some(b1.beta);
            let s1 = ops::depthwise_separable_backward(&bt.r1, &p[bl.dw1], &p[bl.pw1], &b1.input)?;
            grads[bl.dw1] = Some(s1.depthwise);
            grads[bl.pw1] = Some(s1.pointwise);
            g_in.add_assign(&ops::relu_backward(&bt.input, &s1.input));
            g = g_in;
        }

        let g_stem = ops::relu_backward(&trace.stem_bn_out, &g);
        let sb = ops::batch_norm_backward(&g_stem, &p[lay.stem_g], &trace.stem_bn)?;
        grads[lay.stem_g] = Some(sb.gamma);
        grads[lay.stem_b] = Some(sb.beta);
        let sc = ops::conv2d_backward(&trace.input, &p[lay.stem_w], &sb.input, STEM)?;
        grads[lay.stem_w] = Some(sc.weight);

        Ok(grads.into_iter().map(|g| g.expect("every parameter receives a gradient")).collect())
    }

    /// Folds the batch statistics of a train-mode trace into the running
    /// statistics.
    pub fn update_running_stats(&mut self, trace: &Trace<T>) {
        let mut caches = vec![&trace.stem_bn];
        for b in &trace.blocks {
            caches.push(&b.bn1);
            caches.push(&b.bn2);
        }
        for (r, c) in self.running.iter_mut().zip(caches) {
            if c.mode == Mode::Train {
                ops::update_running_stats(&mut r.mean, &c.batch_mean, ops::BN_MOMENTUM);
                ops::update_running_stats(&mut r.var, &c.batch_var, ops::BN_MOMENTUM);
            }
        }
    }
}

/// Fills a tensor with uniform values in [-scale, scale]; used by tests and
/// the gradient check.
pub fn random_tensor<T: Scalar, R: Rng>(shape: &[usize], scale: f64, rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| T::from_f64(rng.random_range(-scale..=scale))).collect())
        .expect("shape product")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn desk_spec_shapes() {
        let s = ModelSpec::desk(52, 96, 64);
        let shapes = s.parameter_shapes();
        assert_eq!(shapes[0], ("stem.conv.w".to_string(), vec![8, 1, 3, 3]));
        assert_eq!(shapes.len(), 3 + 4 * 10 + 2);
        assert_eq!(shapes.last().unwrap().1, vec![52]);
        assert!(s.violations().is_empty());
        let mut bad = s.clone();
        bad.out_channels = 7;
        bad.input_width = 0;
        assert_eq!(bad.violations().len(), 2);
    }

    #[test]
    fn output_shape_threshold_target() {
        let spec = ModelSpec::desk(52, 32, 16);
        let net = Network::<f32>::init(&spec, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_tensor(&[4, 1, 16, 32], 1.0, &mut rng);
        let y = net.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape(), &[4, 52]);
    }

    #[test]
    fn zero_weights_give_zero_predictions() {
        let spec = ModelSpec::desk(1, 16, 16);
        let mut net = Network::<f64>::init(&spec, 2).unwrap();
        for p in net.params_mut() {
            p.data_mut().fill(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&[2, 1, 16, 16], 1.0, &mut rng);
        for mode in [Mode::Train, Mode::Infer] {
            assert!(net.forward(&x, mode).unwrap().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn identical_images_identical_rows() {
        let spec = ModelSpec::desk(52, 16, 8);
        let net = Network::<f32>::init(&spec, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let one = random_tensor::<f32, _>(&[1, 1, 8, 16], 1.0, &mut rng);
        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        data.extend_from_slice(one.data());
        let x = Tensor::new(vec![3, 1, 8, 16], data).unwrap();
        let y = net.forward(&x, Mode::Infer).unwrap();
        assert_eq!(&y.data()[..52], &y.data()[52..104]);
        assert_eq!(&y.data()[..52], &y.data()[104..]);
        assert_eq!(y, net.forward(&x, Mode::Infer).unwrap());
    }

    #[test]
    fn zeroed_residual_path_is_identity() {
        let spec = ModelSpec {
            in_channels: 1,
            input_width: 8,
            input_height: 8,
            stem_channels: 4,
            blocks: vec![SeparableBlockSpec { channels: 4, pool: false, residual: true }],
            out_channels: 1,
        };
        let mut net = Network::<f64>::init(&spec, 4).unwrap();
        let names = net.param_names().to_vec();
        for (n, p) in names.iter().zip(net.params_mut()) {
            if n.contains("pointwise") {
                p.data_mut().fill(0.0);
            }
        }
        // head reads channel 0 only
        let lay = Layout::of(&spec);
        net.params_mut()[lay.head_w].data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&[2, 1, 8, 8], 1.0, &mut rng);
        let with_block = net.forward(&x, Mode::Infer).unwrap();

        let stem_only = {
            let y = ops::conv2d(&x, &net.params()[0], None, STEM).unwrap();
            let r = &net.running_stats()[0];
            let (y, _) = ops::batch_norm(&y, &net.params()[1], &net.params()[2], &r.mean, &r.var, Mode::Infer).unwrap();
            let y = ops::relu(&y);
            let g = ops::global_avg_pool(&y);
            (0..2).map(|b| g.data()[b * 4]).collect::<Vec<_>>()
        };
        assert_eq!(with_block.data(), &stem_only[..]);
    }

    #[test]
    fn non_finite_input_names_layer() {
        let spec = ModelSpec::desk(1, 8, 8);
        let net = Network::<f32>::init(&spec, 5).unwrap();
        let mut x = Tensor::zeros(&[1, 1, 8, 8]);
        x.data_mut()[0] = f32::NAN;
        match net.forward(&x, Mode::Infer) {
            Err(TensorError::NonFinite { layer }) => assert_eq!(layer, "stem.conv"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_input_shape() {
        let net = Network::<f32>::init(&ModelSpec::desk(1, 8, 8), 5).unwrap();
        assert!(matches!(net.forward(&Tensor::zeros(&[1, 1, 8, 9]), Mode::Infer), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn blob_roundtrip_and_running_stats() {
        let spec = ModelSpec::desk(52, 16, 16);
        let mut net = Network::<f32>::init(&spec, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&[2, 1, 16, 16], 1.0, &mut rng);
        let trace = net.forward_trace(&x, Mode::Train).unwrap();
        net.update_running_stats(&trace);
        assert_ne!(net.running_stats()[0].mean, vec![0.0; 8]);
        let blob = net.to_blob();
        assert_eq!(blob.len(), spec.blob_len());
        let back = Network::<f32>::from_blob(&spec, &blob).unwrap();
        assert_eq!(back, net);
        assert!(Network::<f32>::from_blob(&spec, &blob[1..]).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let spec = ModelSpec::desk(1, 8, 8);
        let a = Network::<f32>::init(&spec, 9).unwrap();
        let b = Network::<f32>::init(&spec, 9).unwrap();
        let c = Network::<f32>::init(&spec, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
