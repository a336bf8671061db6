//! Layer primitives with hand-written backward passes. All spatial ops take
//! NCHW tensors.

use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::TensorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output size `ceil(in / stride)`; padding split with the extra pixel
    /// at the bottom/right.
    Same,
    /// No padding; output size `floor((in - k) / stride) + 1`.
    Valid,
}

/// Output size and leading padding along one axis.
pub fn output_geometry(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, total / 2))
        }
        Padding::Valid => (input >= kernel).then(|| ((input - kernel) / stride + 1, 0)),
    }
}

/// Output positions `[lo, hi)` whose tap at kernel offset `k` lands inside
/// the input.
#[inline]
fn tap_range(k: usize, pad: usize, stride: usize, input: usize, output: usize) -> (usize, usize) {
    let k = k as isize;
    let pad = pad as isize;
    let s = stride as isize;
    // need 0 <= o*s + k - pad <= input-1
    let lo_num = pad - k;
    let lo = if lo_num <= 0 { 0 } else { (lo_num + s - 1) / s };
    let hi_num = input as isize - 1 + pad - k;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num / s + 1).min(output as isize);
    if lo >= hi {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

/// Static description of a (grouped) 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: Padding,
    pub groups: usize,
}

impl ConvParams {
    pub fn dense(stride: usize, padding: Padding) -> ConvParams {
        ConvParams { stride, padding, groups: 1 }
    }
}

struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    oh: usize,
    ow: usize,
    pt: usize,
    pl: usize,
    cin_g: usize,
    cout_g: usize,
}

fn conv_geometry<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, p: ConvParams) -> Result<ConvGeom, TensorError> {
    let shape_err = |detail: String| TensorError::Shape { op: "conv2d", detail };
    if input.shape().len() != 4 || weight.shape().len() != 4 {
        return Err(shape_err(format!("input {:?}, weight {:?}", input.shape(), weight.shape())));
    }
    let (n, cin, h, w) = input.dims4();
    let (cout, cin_g, kh, kw) = weight.dims4();
    if kh != kw || kh == 0 {
        return Err(shape_err(format!("square kernel expected, got {kh}x{kw}")));
    }
    if p.groups == 0 || cin % p.groups != 0 || cout % p.groups != 0 || cin / p.groups != cin_g {
        return Err(shape_err(format!(
            "input channels {cin}, weight {:?}, groups {}",
            weight.shape(),
            p.groups
        )));
    }
    if p.stride == 0 {
        return Err(shape_err("stride must be positive".into()));
    }
    let (oh, pt) = output_geometry(h, kh, p.stride, p.padding)
        .ok_or_else(|| shape_err(format!("input height {h} smaller than kernel {kh}")))?;
    let (ow, pl) = output_geometry(w, kw, p.stride, p.padding)
        .ok_or_else(|| shape_err(format!("input width {w} smaller than kernel {kw}")))?;
    Ok(ConvGeom { n, cin, h, w, cout, k: kh, oh, ow, pt, pl, cin_g, cout_g: cout / p.groups })
}

/// Cross-correlation. `weight` is `[cout, cin / groups, k, k]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    p: ConvParams,
) -> Result<Tensor<T>, TensorError> {
    let g = conv_geometry(input, weight, p)?;
    if let Some(b) = bias {
        if b.len() != g.cout {
            return Err(TensorError::Shape { op: "conv2d", detail: format!("bias {:?} for {} outputs", b.shape(), g.cout) });
        }
    }
    let s = p.stride;
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![T::zero(); g.n * g.cout * g.oh * g.ow];
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    for n in 0..g.n {
        for co in 0..g.cout {
            let group = co / g.cout_g;
            let o_plane = &mut out[(n * g.cout + co) * plane_out..(n * g.cout + co + 1) * plane_out];
            if let Some(b) = bias {
                o_plane.fill(b.data()[co]);
            }
            for cig in 0..g.cin_g {
                let ci = group * g.cin_g + cig;
                let i_plane = &x[(n * g.cin + ci) * plane_in..(n * g.cin + ci + 1) * plane_in];
                for kh in 0..g.k {
                    let (oh_lo, oh_hi) = tap_range(kh, g.pt, s, g.h, g.oh);
                    for kw in 0..g.k {
                        let wv = wt[((co * g.cin_g + cig) * g.k + kh) * g.k + kw];
                        let (ow_lo, ow_hi) = tap_range(kw, g.pl, s, g.w, g.ow);
                        if ow_lo == ow_hi {
                            continue;
                        }
                        for oh in oh_lo..oh_hi {
                            let ih = oh * s + kh - g.pt;
                            let i_row = &i_plane[ih * g.w..(ih + 1) * g.w];
                            let o_row = &mut o_plane[oh * g.ow..(oh + 1) * g.ow];
                            if s == 1 {
                                let off = kw as isize - g.pl as isize;
                                let src = &i_row[(ow_lo as isize + off) as usize..(ow_hi as isize + off) as usize];
                                for (o, &v) in o_row[ow_lo..ow_hi].iter_mut().zip(src) {
                                    *o = *o + wv * v;
                                }
                            } else {
                                for ow in ow_lo..ow_hi {
                                    o_row[ow] = o_row[ow] + wv * i_row[ow * s + kw - g.pl];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.n, g.cout, g.oh, g.ow], out)
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    p: ConvParams,
) -> Result<ConvGrads<T>, TensorError> {
    let g = conv_geometry(input, weight, p)?;
    if grad_out.shape() != [g.n, g.cout, g.oh, g.ow] {
        return Err(TensorError::Shape {
            op: "conv2d_backward",
            detail: format!("grad {:?}, expected {:?}", grad_out.shape(), [g.n, g.cout, g.oh, g.ow]),
        });
    }
    let s = p.stride;
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); wt.len()];
    let mut gb = vec![T::zero(); g.cout];
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    for n in 0..g.n {
        for co in 0..g.cout {
            let group = co / g.cout_g;
            let go_plane = &go[(n * g.cout + co) * plane_out..(n * g.cout + co + 1) * plane_out];
            gb[co] = gb[co] + go_plane.iter().copied().sum::<T>();
            for cig in 0..g.cin_g {
                let ci = group * g.cin_g + cig;
                let base = (n * g.cin + ci) * plane_in;
                for kh in 0..g.k {
                    let (oh_lo, oh_hi) = tap_range(kh, g.pt, s, g.h, g.oh);
                    for kw in 0..g.k {
                        let widx = ((co * g.cin_g + cig) * g.k + kh) * g.k + kw;
                        let wv = wt[widx];
                        let (ow_lo, ow_hi) = tap_range(kw, g.pl, s, g.w, g.ow);
                        if ow_lo == ow_hi {
                            continue;
                        }
                        let mut acc = T::zero();
                        for oh in oh_lo..oh_hi {
                            let ih = oh * s + kh - g.pt;
                            let go_row = &go_plane[oh * g.ow..(oh + 1) * g.ow];
                            let row_base = base + ih * g.w;
                            if s == 1 {
                                let start = (row_base as isize + ow_lo as isize + kw as isize - g.pl as isize) as usize;
                                let len = ow_hi - ow_lo;
                                let i_row = &x[start..start + len];
                                let gx_row = &mut gx[start..start + len];
                                for ((gi, &xi), &gov) in gx_row.iter_mut().zip(i_row).zip(&go_row[ow_lo..ow_hi]) {
                                    *gi = *gi + wv * gov;
                                    acc = acc + gov * xi;
                                }
                            } else {
                                for ow in ow_lo..ow_hi {
                                    let idx = row_base + ow * s + kw - g.pl;
                                    gx[idx] = gx[idx] + wv * go_row[ow];
                                    acc = acc + go_row[ow] * x[idx];
                                }
                            }
                        }
                        gw[widx] = gw[widx] + acc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        weight: Tensor::new(weight.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![g.cout], gb)?,
    })
}

/// Per-channel 3x3 (or k x k) 'same' convolution followed by a 1x1
/// cross-channel convolution. `depthwise` is `[c, 1, k, k]`, `pointwise`
/// is `[c_out, c, 1, 1]`.
pub fn depthwise_separable_conv<T: Scalar>(
    input: &Tensor<T>,
    depthwise: &Tensor<T>,
    pointwise: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let c = input.shape().get(1).copied().unwrap_or(0);
    let mid = conv2d(input, depthwise, None, ConvParams { stride: 1, padding: Padding::Same, groups: c })?;
    conv2d(&mid, pointwise, None, ConvParams::dense(1, Padding::Same))
}

pub struct SeparableGrads<T> {
    pub input: Tensor<T>,
    pub depthwise: Tensor<T>,
    pub pointwise: Tensor<T>,
}

pub fn depthwise_separable_backward<T: Scalar>(
    input: &Tensor<T>,
    depthwise: &Tensor<T>,
    pointwise: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<SeparableGrads<T>, TensorError> {
    let c = input.shape().get(1).copied().unwrap_or(0);
    let dw_p = ConvParams { stride: 1, padding: Padding::Same, groups: c };
    let mid = conv2d(input, depthwise, None, dw_p)?;
    let pw = conv2d_backward(&mid, pointwise, grad_out, ConvParams::dense(1, Padding::Same))?;
    let dw = conv2d_backward(input, depthwise, &pw.input, dw_p)?;
    Ok(SeparableGrads { input: dw.input, depthwise: dw.weight, pointwise: pw.weight })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// What [`batch_norm_backward`] needs from the forward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub mode: Mode,
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    /// Batch statistics (train mode only; biased variance).
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

/// Per-channel normalization over (N, H, W). Train mode uses batch
/// statistics; infer mode uses the running statistics.
pub fn batch_norm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &[T],
    running_var: &[T],
    mode: Mode,
) -> Result<(Tensor<T>, BnCache<T>), TensorError> {
    let (n, c, h, w) = input.dims4();
    if gamma.len() != c || beta.len() != c || running_mean.len() != c || running_var.len() != c {
        return Err(TensorError::Shape { op: "batch_norm", detail: format!("{c} channels vs gamma {:?}", gamma.shape()) });
    }
    let m = n * h * w;
    if mode == Mode::Train && m == 0 {
        return Err(TensorError::EmptyBatch);
    }
    let eps = T::from_f64(BN_EPS);
    let plane = h * w;
    let x = input.data();
    let (mean, var) = match mode {
        Mode::Train => {
            let mf = T::from_f64(m as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    s = s + x[(b * c + ch) * plane..(b * c + ch + 1) * plane].iter().copied().sum::<T>();
                }
                let mu = s / mf;
                let mut v = T::zero();
                for b in 0..n {
                    for &xv in &x[(b * c + ch) * plane..(b * c + ch + 1) * plane] {
                        v = v + (xv - mu) * (xv - mu);
                    }
                }
                mean[ch] = mu;
                var[ch] = v / mf;
            }
            (mean, var)
        }
        Mode::Infer => (running_mean.to_vec(), running_var.to_vec()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
            let (g, bt, mu, is) = (gamma.data()[ch], beta.data()[ch], mean[ch], inv_std[ch]);
            for ((xh, yv), &xv) in xhat[r.clone()].iter_mut().zip(&mut y[r.clone()]).zip(&x[r]) {
                *xh = (xv - mu) * is;
                *yv = g * *xh + bt;
            }
        }
    }
    let shape = input.shape().to_vec();
    let (batch_mean, batch_var) = if mode == Mode::Train { (mean, var) } else { (Vec::new(), Vec::new()) };
    Ok((
        Tensor::new(shape.clone(), y)?,
        BnCache { mode, xhat: Tensor::new(shape, xhat)?, inv_std, batch_mean, batch_var },
    ))
}

pub struct BnGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn batch_norm_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BnCache<T>,
) -> Result<BnGrads<T>, TensorError> {
    if grad_out.shape() != cache.xhat.shape() {
        return Err(TensorError::Shape {
            op: "batch_norm_backward",
            detail: format!("{:?} vs {:?}", grad_out.shape(), cache.xhat.shape()),
        });
    }
    let (n, c, h, w) = grad_out.dims4();
    let plane = h * w;
    let m = T::from_f64((n * plane) as f64);
    let dy = grad_out.data();
    let xh = cache.xhat.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
            for (&d, &x) in dy[r.clone()].iter().zip(&xh[r]) {
                dbeta[ch] = dbeta[ch] + d;
                dgamma[ch] = dgamma[ch] + d * x;
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for b in 0..n {
        for ch in 0..c {
            let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
            let scale = gamma.data()[ch] * cache.inv_std[ch];
            match cache.mode {
                Mode::Train => {
                    let (sb, sg) = (dbeta[ch] / m, dgamma[ch] / m);
                    for ((o, &d), &x) in dx[r.clone()].iter_mut().zip(&dy[r.clone()]).zip(&xh[r]) {
                        *o = scale * (d - sb - x * sg);
                    }
                }
                Mode::Infer => {
                    for (o, &d) in dx[r.clone()].iter_mut().zip(&dy[r]) {
                        *o = scale * d;
                    }
                }
            }
        }
    }
    Ok(BnGrads {
        input: Tensor::new(grad_out.shape().to_vec(), dx)?,
        gamma: Tensor::new(vec![c], dgamma)?,
        beta: Tensor::new(vec![c], dbeta)?,
    })
}

/// Exponential moving update of running statistics.
pub fn update_running_stats<T: Scalar>(running: &mut [T], batch: &[T], momentum: f64) {
    let mo = T::from_f64(momentum);
    let one_minus = T::from_f64(1.0 - momentum);
    for (r, &b) in running.iter_mut().zip(batch) {
        *r = mo * *r + one_minus * b;
    }
}

/// Windowed maximum; padded positions never win. Returns the output and,
/// per output element, the flat input index of its (first) maximum.
pub fn max_pool<T: Scalar>(
    input: &Tensor<T>,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, Vec<usize>), TensorError> {
    let (n, c, h, w) = input.dims4();
    if h == 0 || w == 0 {
        return Err(TensorError::Shape { op: "max_pool", detail: "empty spatial dims".into() });
    }
    let shape_err = || TensorError::Shape { op: "max_pool", detail: format!("input {h}x{w} smaller than window {kernel}") };
    let (oh, pt) = output_geometry(h, kernel, stride, padding).ok_or_else(shape_err)?;
    let (ow, pl) = output_geometry(w, kernel, stride, padding).ok_or_else(shape_err)?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            let y0 = (oy * stride).saturating_sub(pt);
            let y1 = (oy * stride + kernel).saturating_sub(pt).min(h);
            for ox in 0..ow {
                let x0 = (ox * stride).saturating_sub(pl);
                let x1 = (ox * stride + kernel).saturating_sub(pl).min(w);
                let mut best = base + y0 * w + x0;
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        let idx = base + yy * w + xx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, arg))
}

pub fn max_pool_backward<T: Scalar>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let mut gx = Tensor::zeros(input_shape);
    let d = gx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] = d[i] + g;
    }
    gx
}

/// Per-channel spatial mean, shape `(n, c, 1, 1)`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = input.dims4();
    let plane = h * w;
    let inv = T::from_f64(1.0 / plane as f64);
    let data = input.data().chunks(plane).map(|p| p.iter().copied().sum::<T>() * inv).collect();
    Tensor::new(vec![n, c, 1, 1], data).expect("shape matches")
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let plane = input_shape[2] * input_shape[3];
    let inv = T::from_f64(1.0 / plane as f64);
    let data = grad_out.data().iter().flat_map(|&g| std::iter::repeat_n(g * inv, plane)).collect();
    Tensor::new(input_shape.to_vec(), data).expect("shape matches")
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
    Tensor::new(input.shape().to_vec(), data).expect("shape matches")
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("shape matches")
}

/// Mean squared error over all elements and its gradient `2 (pred - target) / N`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>), TensorError> {
    if pred.shape() != target.shape() {
        return Err(TensorError::Shape { op: "mse_loss", detail: format!("{:?} vs {:?}", pred.shape(), target.shape()) });
    }
    let n = T::from_f64(pred.len().max(1) as f64);
    let two = T::from_f64(2.0);
    let mut loss = T::zero();
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            loss = loss + d * d;
            two * d / n
        })
        .collect();
    Ok((loss / n, Tensor::new(pred.shape().to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_pixel_same_conv_uses_centre_tap_only() {
        let x = Tensor::new(vec![1, 1, 1, 1], vec![2.0f64]).unwrap();
        let w = Tensor::new(vec![1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let p = ConvParams::dense(1, Padding::Same);
        let y = conv2d(&x, &w, None, p).unwrap();
        assert_eq!(y.data(), &[10.0]);
        let g = conv2d_backward(&x, &w, &Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap(), p).unwrap();
        assert_eq!(g.input.data(), &[5.0]);
        let mut gw = vec![0.0; 9];
        gw[4] = 2.0;
        assert_eq!(g.weight.data(), &gw[..]);
    }
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct nested-loop cross-correlation with explicit zero padding.
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad_t: usize, pad_l: usize, oh: usize, ow: usize) -> Tensor<f64> {
        let (n, cin, h, wd) = x.dims4();
        let (cout, _, k, _) = w.dims4();
        let mut out = vec![0.0; n * cout * oh * ow];
        for b in 0..n {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0;
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad_t as isize;
                                    let ix = (ox * stride + kx) as isize - pad_l as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    s += w.data()[((co * cin + ci) * k + ky) * k + kx]
                                        * x.data()[((b * cin + ci) * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                        out[((b * cout + co) * oh + oy) * ow + ox] = s;
                    }
                }
            }
        }
        Tensor::new(vec![n, cout, oh, ow], out).unwrap()
    }

    #[test]
    fn geometry() {
        assert_eq!(output_geometry(8, 3, 2, Padding::Same), Some((4, 0)));
        assert_eq!(output_geometry(7, 3, 2, Padding::Same), Some((4, 1)));
        assert_eq!(output_geometry(5, 3, 1, Padding::Same), Some((5, 1)));
        assert_eq!(output_geometry(5, 3, 1, Padding::Valid), Some((3, 0)));
        assert_eq!(output_geometry(2, 3, 1, Padding::Valid), None);
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&[2, 3, 5, 4], &mut rng);
        let mut w = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        assert_eq!(conv2d(&x, &w, None, ConvParams::dense(1, Padding::Same)).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_one_hot() {
        let mut x = Tensor::<f64>::zeros(&[1, 1, 5, 5]);
        x.data_mut()[2 * 5 + 2] = 1.0;
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, None, ConvParams::dense(1, Padding::Valid)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        // every 3x3 valid window of a 5x5 image contains the centre pixel
        assert_eq!(y, conv_oracle(&x, &w, 1, 0, 0, 3, 3));
        assert!(y.data().iter().all(|&v| v == 1.0));

        let mut x = Tensor::<f64>::zeros(&[1, 1, 5, 5]);
        x.data_mut()[0] = 1.0;
        let y = conv2d(&x, &w, None, ConvParams::dense(1, Padding::Valid)).unwrap();
        let expected: Vec<f64> = (0..9).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
        assert_eq!(y.data(), &expected[..]);
    }

    #[test]
    fn stride_two_same_shape() {
        let x = Tensor::<f32>::zeros(&[1, 2, 8, 8]);
        let w = Tensor::zeros(&[3, 2, 3, 3]);
        let y = conv2d(&x, &w, None, ConvParams::dense(2, Padding::Same)).unwrap();
        assert_eq!(y.shape(), &[1, 3, 4, 4]);
    }

    #[test]
    fn conv_matches_oracle_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(h, w, k, s, pad) in &[
            (7, 6, 3, 1, Padding::Same),
            (7, 6, 3, 2, Padding::Same),
            (8, 9, 3, 2, Padding::Valid),
            (5, 5, 1, 2, Padding::Same),
        ] {
            let x = rand_tensor(&[2, 3, h, w], &mut rng);
            let wt = rand_tensor(&[4, 3, k, k], &mut rng);
            let (oh, pt) = output_geometry(h, k, s, pad).unwrap();
            let (ow, pl) = output_geometry(w, k, s, pad).unwrap();
            let y = conv2d(&x, &wt, None, ConvParams::dense(s, pad)).unwrap();
            let o = conv_oracle(&x, &wt, s, pt, pl, oh, ow);
            for (a, b) in y.data().iter().zip(o.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_shape_mismatch() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(conv2d(&x, &w, None, ConvParams::dense(1, Padding::Same)), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn separable_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&[1, 2, 4, 4], &mut rng);
        let mut dw = Tensor::zeros(&[2, 1, 3, 3]);
        dw.data_mut()[4] = 1.0;
        dw.data_mut()[9 + 4] = 1.0;
        let pw = Tensor::new(vec![2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(depthwise_separable_conv(&x, &dw, &pw).unwrap(), x);
    }

    #[test]
    fn separable_equals_composed_dense_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (c, cout) = (2, 3);
        let x = rand_tensor(&[1, c, 4, 4], &mut rng);
        let dw = rand_tensor(&[c, 1, 3, 3], &mut rng);
        let pw = rand_tensor(&[cout, c, 1, 1], &mut rng);
        // dense[o, i, ky, kx] = pw[o, i] * dw[i, ky, kx]
        let mut dense = Tensor::zeros(&[cout, c, 3, 3]);
        for o in 0..cout {
            for i in 0..c {
                for t in 0..9 {
                    dense.data_mut()[(o * c + i) * 9 + t] = pw.data()[o * c + i] * dw.data()[i * 9 + t];
                }
            }
        }
        let sep = depthwise_separable_conv(&x, &dw, &pw).unwrap();
        let full = conv_oracle(&x, &dense, 1, 1, 1, 4, 4);
        for (a, b) in sep.data().iter().zip(full.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn separable_parameter_count() {
        let (c, cp, k) = (8usize, 8usize, 3usize);
        assert_eq!(c * k * k + c * cp, 136);
        assert!(c * k * k + c * cp < c * cp * k * k);
    }

    #[test]
    fn batch_norm_on_standardized_batch() {
        let x = Tensor::new(vec![4, 1, 1, 1], vec![-1.0f64, 1.0, -1.0, 1.0]).unwrap();
        let g = Tensor::full(&[1], 1.0);
        let b = Tensor::zeros(&[1]);
        let (y, _) = batch_norm(&x, &g, &b, &[0.0], &[1.0], Mode::Train).unwrap();
        for (a, e) in y.data().iter().zip(x.data()) {
            assert!((a - e).abs() < 1e-5);
        }
    }

    #[test]
    fn batch_norm_constant_channel_gives_beta() {
        let x = Tensor::full(&[2, 1, 3, 3], 4.2);
        let g = Tensor::full(&[1], 1.7);
        let b = Tensor::full(&[1], 0.3);
        let (y, _) = batch_norm(&x, &g, &b, &[0.0], &[1.0], Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn batch_norm_infer_uses_running_stats() {
        let x = Tensor::new(vec![2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = Tensor::full(&[1], 2.0);
        let b = Tensor::full(&[1], 1.0);
        let (y1, _) = batch_norm(&x, &g, &b, &[2.0], &[4.0], Mode::Infer).unwrap();
        let (y2, _) = batch_norm(&x, &g, &b, &[2.0], &[4.0], Mode::Infer).unwrap();
        assert_eq!(y1, y2);
        let is = 1.0 / (4.0f64 + BN_EPS).sqrt();
        assert!((y1.data()[0] - (2.0 * (1.0 - 2.0) * is + 1.0)).abs() < 1e-12);
        // a single sample gives the same answer as inside the batch
        let single = Tensor::new(vec![1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let (ys, _) = batch_norm(&single, &g, &b, &[2.0], &[4.0], Mode::Infer).unwrap();
        assert_eq!(ys.data(), &y1.data()[..2]);
    }

    #[test]
    fn batch_norm_empty_batch() {
        let x = Tensor::<f64>::zeros(&[0, 1, 2, 2]);
        let g = Tensor::full(&[1], 1.0);
        let b = Tensor::zeros(&[1]);
        assert!(matches!(batch_norm(&x, &g, &b, &[0.0], &[1.0], Mode::Train), Err(TensorError::EmptyBatch)));
    }

    #[test]
    fn running_stats_momentum() {
        let mut r = vec![1.0f64];
        update_running_stats(&mut r, &[3.0], 0.9);
        assert!((r[0] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn max_pool_cases() {
        let c = Tensor::full(&[1, 1, 5, 6], 0.7f64);
        let (y, _) = max_pool(&c, 3, 2, Padding::Same).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 0.7));

        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = max_pool(&x, 3, 2, Padding::Same).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);

        let mut hot = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
        hot.data_mut()[5] = 2.0;
        let (y, arg) = max_pool(&hot, 3, 2, Padding::Same).unwrap();
        let g = max_pool_backward(hot.shape(), &arg, &Tensor::full(y.shape(), 1.0));
        // (1,1) is in the window of outputs (0,0) only; other windows tie on
        // zeros and route to their first element
        assert_eq!(g.data()[5], 1.0);
        let ones = Tensor::full(&[1, 1, 1, 1], 1.0);
        let single = Tensor::new(vec![1, 1, 1, 1], vec![5.0]).unwrap();
        let (_, a) = max_pool(&single, 3, 2, Padding::Same).unwrap();
        assert_eq!(max_pool_backward(single.shape(), &a, &ones).data(), &[1.0]);
    }

    #[test]
    fn max_pool_hot_pixel_takes_all_gradient() {
        let mut x = Tensor::<f64>::full(&[1, 1, 3, 3], -1.0);
        x.data_mut()[4] = 3.0;
        let (y, arg) = max_pool(&x, 3, 2, Padding::Valid).unwrap();
        assert_eq!(y.data(), &[3.0]);
        let g = max_pool_backward(x.shape(), &arg, &Tensor::full(&[1, 1, 1, 1], 2.5));
        assert_eq!(g.data().iter().sum::<f64>(), 2.5);
        assert_eq!(g.data()[4], 2.5);
    }

    #[test]
    fn max_pool_ties_route_to_first() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0f64);
        let (_, arg) = max_pool(&x, 3, 2, Padding::Valid).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn gap_cases() {
        let c = Tensor::full(&[2, 3, 4, 4], 1.5f64);
        assert!(global_avg_pool(&c).data().iter().all(|&v| v == 1.5));
        let cb: Vec<f64> = (0..16).map(|i| ((i / 4 + i % 4) % 2) as f64).collect();
        let cb = Tensor::new(vec![1, 1, 4, 4], cb).unwrap();
        assert_eq!(global_avg_pool(&cb).data(), &[0.5]);
        let g = global_avg_pool_backward(&[1, 1, 2, 3], &Tensor::full(&[1, 1, 1, 1], 6.0));
        assert!(g.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn relu_cases() {
        let neg = Tensor::new(vec![3], vec![-1.0f64, -0.5, -3.0]).unwrap();
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let pos = Tensor::new(vec![2], vec![0.5f64, 2.0]).unwrap();
        assert_eq!(relu(&pos), pos);
        let x = Tensor::new(vec![4], vec![-1.0f64, 0.0, 1e-9, 2.0]).unwrap();
        let g = relu_backward(&x, &Tensor::full(&[4], 1.0));
        assert_eq!(g.data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn mse_cases() {
        let p = Tensor::new(vec![2], vec![0.0f64, 0.0]).unwrap();
        let t = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        let (l, g) = mse_loss(&p, &t).unwrap();
        assert_eq!(l, 12.5);
        assert_eq!(g.data(), &[-3.0, -4.0]);
        assert_eq!(mse_loss(&t, &t).unwrap().0, 0.0);
        assert!(mse_loss(&p, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = rand_tensor(&[3, 4], &mut rng);
        let t = rand_tensor(&[3, 4], &mut rng);
        let (_, g) = mse_loss(&p, &t).unwrap();
        for i in 0..p.len() {
            let h = 1e-6;
            let mut a = p.clone();
            a.data_mut()[i] += h;
            let mut b = p.clone();
            b.data_mut()[i] -= h;
            let fd = (mse_loss(&a, &t).unwrap().0 - mse_loss(&b, &t).unwrap().0) / (2.0 * h);
            let rel = (fd - g.data()[i]).abs() / g.data()[i].abs().max(1e-4);
            assert!(rel < 1e-6, "rel {rel}");
        }
    }
}
