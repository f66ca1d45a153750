//! Functional forward/backward kernels.
//!
//! These are the single source of truth for layer math: the autodiff graph
//! records them during training and the no-grad evaluation path calls them
//! directly. Dot products and statistics accumulate in f64.

use crate::error::{BinetError, Result};
use crate::tensor::Tensor;

// ── matmul variants ──────────────────────────────────────────────────

/// out[m×n] = a[m×k] · b[k×n]
pub fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let mut acc = vec![0f64; n];
    for i in 0..m {
        acc.fill(0.0);
        let a_row = &a[i * k..(i + 1) * k];
        for (l, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let av = av as f64;
            let b_row = &b[l * n..(l + 1) * n];
            for (j, &bv) in b_row.iter().enumerate() {
                acc[j] += av * bv as f64;
            }
        }
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, &v) in acc.iter().enumerate() {
            out_row[j] = v as f32;
        }
    }
}

/// out[m×n] = a[m×k] · b[n×k]ᵀ  (both operands row-major)
pub fn matmul_bt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0f64;
            for l in 0..k {
                acc += a_row[l] as f64 * b_row[l] as f64;
            }
            out[i * n + j] = acc as f32;
        }
    }
}

/// acc[m×n] += a[k×m]ᵀ · b[k×n], accumulated in f64.
pub fn matmul_at_acc(a: &[f32], b: &[f32], k: usize, m: usize, n: usize, acc: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(acc.len(), m * n);
    for l in 0..k {
        let a_row = &a[l * m..(l + 1) * m];
        let b_row = &b[l * n..(l + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let av = av as f64;
            let acc_row = &mut acc[i * n..(i + 1) * n];
            for (j, &bv) in b_row.iter().enumerate() {
                acc_row[j] += av * bv as f64;
            }
        }
    }
}

// ── conv2d ───────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn infer(
        input_shape: &[usize],
        weight_shape: &[usize],
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<ConvGeom> {
        if input_shape.len() != 4 || weight_shape.len() != 4 {
            return Err(BinetError::ShapeMismatch(format!(
                "conv2d expects NCHW input and OIHW weight, got {input_shape:?} / {weight_shape:?}"
            )));
        }
        let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
        let (o, i, kh, kw) = (weight_shape[0], weight_shape[1], weight_shape[2], weight_shape[3]);
        if c != i {
            return Err(BinetError::ShapeMismatch(format!(
                "conv2d input has {c} channels but weight expects {i}"
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(BinetError::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        let (ph, pw) = padding;
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(BinetError::ShapeMismatch(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * ph,
                w + 2 * pw
            )));
        }
        let out_h = (h + 2 * ph - kh) / stride.0 + 1;
        let out_w = (w + 2 * pw - kw) / stride.1 + 1;
        Ok(ConvGeom {
            batch: n,
            in_ch: c,
            in_h: h,
            in_w: w,
            out_ch: o,
            kh,
            kw,
            stride,
            padding,
            out_h,
            out_w,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_ch, self.out_h, self.out_w]
    }
}

/// Lower one sample into a [patch_len × out_pixels] column buffer.
/// Row order is (channel, ky, kx); out-of-bounds positions contribute 0.
pub fn im2col(sample: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let p = g.out_pixels();
    debug_assert_eq!(sample.len(), g.in_ch * g.in_h * g.in_w);
    debug_assert_eq!(cols.len(), g.patch_len() * p);
    let mut row = 0;
    for c in 0..g.in_ch {
        let plane = &sample[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let out_row = &mut cols[row * p..(row + 1) * p];
                let mut idx = 0;
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride.0 + ky) as isize - g.padding.0 as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        out_row[idx..idx + g.out_w].fill(0.0);
                        idx += g.out_w;
                        continue;
                    }
                    let base = iy as usize * g.in_w;
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride.1 + kx) as isize - g.padding.1 as isize;
                        out_row[idx] = if ix < 0 || ix >= g.in_w as isize {
                            0.0
                        } else {
                            plane[base + ix as usize]
                        };
                        idx += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add a column-buffer gradient back onto one input sample.
pub fn col2im_acc(dcols: &[f32], g: &ConvGeom, dsample: &mut [f32]) {
    let p = g.out_pixels();
    debug_assert_eq!(dsample.len(), g.in_ch * g.in_h * g.in_w);
    debug_assert_eq!(dcols.len(), g.patch_len() * p);
    let mut row = 0;
    for c in 0..g.in_ch {
        let plane = &mut dsample[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let in_row = &dcols[row * p..(row + 1) * p];
                let mut idx = 0;
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride.0 + ky) as isize - g.padding.0 as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        idx += g.out_w;
                        continue;
                    }
                    let base = iy as usize * g.in_w;
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride.1 + kx) as isize - g.padding.1 as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            plane[base + ix as usize] += in_row[idx];
                        }
                        idx += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Cross-correlation without bias. Returns output and the per-sample column
/// buffers (kept for the backward pass).
pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<(Tensor, Vec<f32>, ConvGeom)> {
    let g = ConvGeom::infer(input.shape(), weight.shape(), stride, padding)?;
    let kp = g.patch_len();
    let p = g.out_pixels();
    let sample_len = g.in_ch * g.in_h * g.in_w;
    let out_sample_len = g.out_ch * p;
    let mut cols = vec![0f32; g.batch * kp * p];
    let mut out = vec![0f32; g.batch * out_sample_len];
    for s in 0..g.batch {
        let sample = &input.data()[s * sample_len..(s + 1) * sample_len];
        let cols_s = &mut cols[s * kp * p..(s + 1) * kp * p];
        im2col(sample, &g, cols_s);
        matmul(
            weight.data(),
            cols_s,
            g.out_ch,
            kp,
            p,
            &mut out[s * out_sample_len..(s + 1) * out_sample_len],
        );
    }
    Ok((Tensor::new(g.output_shape(), out)?, cols, g))
}

/// Gradients of conv2d w.r.t. input and weight.
pub fn conv2d_backward(
    dout: &[f32],
    weight: &Tensor,
    cols: &[f32],
    g: &ConvGeom,
) -> (Tensor, Tensor) {
    let kp = g.patch_len();
    let p = g.out_pixels();
    let sample_len = g.in_ch * g.in_h * g.in_w;
    let out_sample_len = g.out_ch * p;

    let mut dweight_acc = vec![0f64; g.out_ch * kp];
    let mut dinput = vec![0f32; g.batch * sample_len];
    let mut dcols = vec![0f32; kp * p];
    for s in 0..g.batch {
        let dout_s = &dout[s * out_sample_len..(s + 1) * out_sample_len];
        let cols_s = &cols[s * kp * p..(s + 1) * kp * p];
        // dW += dout_s[o×p] · cols_sᵀ  → accumulate rows of dW in f64
        for o in 0..g.out_ch {
            let drow = &dout_s[o * p..(o + 1) * p];
            let acc_row = &mut dweight_acc[o * kp..(o + 1) * kp];
            for l in 0..kp {
                let col_row = &cols_s[l * p..(l + 1) * p];
                let mut acc = 0f64;
                for j in 0..p {
                    acc += drow[j] as f64 * col_row[j] as f64;
                }
                acc_row[l] += acc;
            }
        }
        // dcols = Wᵀ[kp×o] · dout_s[o×p]
        dcols.fill(0.0);
        {
            let mut acc = vec![0f64; kp * p];
            matmul_at_acc(weight.data(), dout_s, g.out_ch, kp, p, &mut acc);
            for (dst, &v) in dcols.iter_mut().zip(acc.iter()) {
                *dst = v as f32;
            }
        }
        col2im_acc(&dcols, g, &mut dinput[s * sample_len..(s + 1) * sample_len]);
    }

    let dweight: Vec<f32> = dweight_acc.iter().map(|&v| v as f32).collect();
    let dw = Tensor::new(weight.shape().to_vec(), dweight).expect("weight grad shape");
    let di = Tensor::new(
        vec![g.batch, g.in_ch, g.in_h, g.in_w],
        dinput,
    )
    .expect("input grad shape");
    (di, dw)
}

/// Direct 6-loop convolution in f64. Slow; used as the reference
/// implementation for exactness checks and by the kernel benchmark's
/// float baseline.
pub fn conv2d_naive(
    input: &Tensor,
    weight: &Tensor,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor> {
    let g = ConvGeom::infer(input.shape(), weight.shape(), stride, padding)?;
    let x = input.data();
    let w = weight.data();
    let mut out = vec![0f32; g.batch * g.out_ch * g.out_pixels()];
    let mut idx = 0;
    for s in 0..g.batch {
        for o in 0..g.out_ch {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = 0f64;
                    for c in 0..g.in_ch {
                        for ky in 0..g.kh {
                            let iy = (oy * g.stride.0 + ky) as isize - g.padding.0 as isize;
                            if iy < 0 || iy >= g.in_h as isize {
                                continue;
                            }
                            for kx in 0..g.kw {
                                let ix =
                                    (ox * g.stride.1 + kx) as isize - g.padding.1 as isize;
                                if ix < 0 || ix >= g.in_w as isize {
                                    continue;
                                }
                                let xi = x[((s * g.in_ch + c) * g.in_h + iy as usize)
                                    * g.in_w
                                    + ix as usize];
                                let wi = w[((o * g.in_ch + c) * g.kh + ky) * g.kw + kx];
                                acc += xi as f64 * wi as f64;
                            }
                        }
                    }
                    out[idx] = acc as f32;
                    idx += 1;
                }
            }
        }
    }
    Tensor::new(g.output_shape(), out)
}

// ── linear ───────────────────────────────────────────────────────────

/// x[n×f] · w[o×f]ᵀ → [n×o]
pub fn linear_forward(input: &Tensor, weight: &Tensor) -> Result<Tensor> {
    if input.shape().len() != 2 || weight.shape().len() != 2 {
        return Err(BinetError::ShapeMismatch(format!(
            "linear expects 2-d input and weight, got {:?} / {:?}",
            input.shape(),
            weight.shape()
        )));
    }
    let (n, f) = (input.shape()[0], input.shape()[1]);
    let (o, fw) = (weight.shape()[0], weight.shape()[1]);
    if f != fw {
        return Err(BinetError::ShapeMismatch(format!(
            "linear input features {f} != weight features {fw}"
        )));
    }
    let mut out = vec![0f32; n * o];
    matmul_bt(input.data(), weight.data(), n, f, o, &mut out);
    Tensor::new(vec![n, o], out)
}

pub fn linear_backward(dout: &[f32], input: &Tensor, weight: &Tensor) -> (Tensor, Tensor) {
    let (n, f) = (input.shape()[0], input.shape()[1]);
    let o = weight.shape()[0];
    // dx = dout[n×o] · w[o×f]
    let mut dx = vec![0f32; n * f];
    matmul(dout, weight.data(), n, o, f, &mut dx);
    // dw = doutᵀ[o×n] · x[n×f]
    let mut dw_acc = vec![0f64; o * f];
    matmul_at_acc(dout, input.data(), n, o, f, &mut dw_acc);
    let dw: Vec<f32> = dw_acc.iter().map(|&v| v as f32).collect();
    (
        Tensor::new(vec![n, f], dx).expect("dx shape"),
        Tensor::new(vec![o, f], dw).expect("dw shape"),
    )
}

// ── batch normalization ──────────────────────────────────────────────

/// Mutable running statistics owned by a layer.
#[derive(Clone, Debug)]
pub struct BnRunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl BnRunningStats {
    pub fn new(channels: usize) -> Self {
        BnRunningStats { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }
}

/// Saved activations for the backward pass.
pub struct BnCache {
    pub xhat: Vec<f32>,
    pub inv_std: Vec<f64>,
    /// True when normalization used batch statistics (training mode).
    pub batch_stats: bool,
}

/// Interpret a tensor as [N, C, spatial] for per-channel normalization.
/// 2-d tensors normalize per feature (spatial = 1).
fn bn_dims(shape: &[usize], channels: usize) -> Result<(usize, usize)> {
    let (n, c, spatial) = match shape.len() {
        2 => (shape[0], shape[1], 1),
        4 => (shape[0], shape[1], shape[2] * shape[3]),
        _ => {
            return Err(BinetError::ShapeMismatch(format!(
                "batch_norm expects 2-d or 4-d input, got {shape:?}"
            )))
        }
    };
    if c != channels {
        return Err(BinetError::ShapeMismatch(format!(
            "batch_norm has {channels} channels but input has {c}"
        )));
    }
    Ok((n, spatial))
}

#[allow(clippy::too_many_arguments)]
pub fn batch_norm_forward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &mut BnRunningStats,
    training: bool,
    momentum: f64,
    eps: f64,
) -> Result<(Tensor, BnCache)> {
    let channels = gamma.numel();
    let (n, spatial) = bn_dims(input.shape(), channels)?;
    if beta.numel() != channels || running.mean.len() != channels {
        return Err(BinetError::ShapeMismatch(
            "batch_norm parameter lengths disagree".into(),
        ));
    }
    let x = input.data();
    let count = (n * spatial) as f64;
    let mut mean = vec![0f64; channels];
    let mut var = vec![0f64; channels];
    if training {
        if n * spatial == 0 {
            return Err(BinetError::EmptyTensor("batch_norm on empty batch".into()));
        }
        for c in 0..channels {
            let mut sum = 0f64;
            for s in 0..n {
                let base = (s * channels + c) * spatial;
                for i in 0..spatial {
                    sum += x[base + i] as f64;
                }
            }
            let mu = sum / count;
            let mut sq = 0f64;
            for s in 0..n {
                let base = (s * channels + c) * spatial;
                for i in 0..spatial {
                    let d = x[base + i] as f64 - mu;
                    sq += d * d;
                }
            }
            mean[c] = mu;
            var[c] = sq / count;
            running.mean[c] = ((1.0 - momentum) * running.mean[c] as f64
                + momentum * mu) as f32;
            running.var[c] =
                ((1.0 - momentum) * running.var[c] as f64 + momentum * var[c]) as f32;
        }
    } else {
        for c in 0..channels {
            mean[c] = running.mean[c] as f64;
            var[c] = running.var[c] as f64;
        }
    }

    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0f32; x.len()];
    let mut out = vec![0f32; x.len()];
    for s in 0..n {
        for c in 0..channels {
            let base = (s * channels + c) * spatial;
            let (mu, istd) = (mean[c], inv_std[c]);
            let (g, b) = (gamma.data()[c], beta.data()[c]);
            for i in 0..spatial {
                let xh = ((x[base + i] as f64 - mu) * istd) as f32;
                xhat[base + i] = xh;
                out[base + i] = xh * g + b;
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), out)?,
        BnCache { xhat, inv_std, batch_stats: training },
    ))
}

pub fn batch_norm_backward(
    dout: &[f32],
    input_shape: &[usize],
    gamma: &Tensor,
    cache: &BnCache,
) -> (Tensor, Tensor, Tensor) {
    let channels = gamma.numel();
    let (n, spatial) = bn_dims(input_shape, channels).expect("checked in forward");
    let count = (n * spatial) as f64;
    let mut dgamma = vec![0f64; channels];
    let mut dbeta = vec![0f64; channels];
    for s in 0..n {
        for c in 0..channels {
            let base = (s * channels + c) * spatial;
            for i in 0..spatial {
                let d = dout[base + i] as f64;
                dgamma[c] += d * cache.xhat[base + i] as f64;
                dbeta[c] += d;
            }
        }
    }
    let mut dx = vec![0f32; dout.len()];
    for s in 0..n {
        for c in 0..channels {
            let base = (s * channels + c) * spatial;
            let g = gamma.data()[c] as f64;
            let istd = cache.inv_std[c];
            for i in 0..spatial {
                let d = dout[base + i] as f64;
                let v = if cache.batch_stats {
                    g * istd
                        * (d - dbeta[c] / count
                            - cache.xhat[base + i] as f64 * dgamma[c] / count)
                } else {
                    g * istd * d
                };
                dx[base + i] = v as f32;
            }
        }
    }
    (
        Tensor::new(input_shape.to_vec(), dx).expect("dx shape"),
        Tensor::new(vec![channels], dgamma.iter().map(|&v| v as f32).collect())
            .expect("dgamma shape"),
        Tensor::new(vec![channels], dbeta.iter().map(|&v| v as f32).collect())
            .expect("dbeta shape"),
    )
}

// ── activations / pooling / shape ops ────────────────────────────────

pub fn hardtanh_forward(input: &Tensor) -> Tensor {
    input.map(|x| x.clamp(-1.0, 1.0))
}

pub fn hardtanh_backward(dout: &[f32], input: &Tensor) -> Tensor {
    let dx: Vec<f32> = dout
        .iter()
        .zip(input.data().iter())
        .map(|(&d, &x)| if (-1.0..=1.0).contains(&x) { d } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), dx).expect("dx shape")
}

/// Non-overlapping max pooling (stride = kernel). Ties resolve to the first
/// element in scan order.
pub fn max_pool2d_forward(input: &Tensor, kernel: usize) -> Result<(Tensor, Vec<usize>)> {
    let shape = input.shape();
    if shape.len() != 4 {
        return Err(BinetError::ShapeMismatch("max_pool2d expects NCHW".into()));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if kernel == 0 || h % kernel != 0 || w % kernel != 0 {
        return Err(BinetError::ShapeMismatch(format!(
            "max_pool2d kernel {kernel} must evenly divide {h}x{w}"
        )));
    }
    let (oh, ow) = (h / kernel, w / kernel);
    let x = input.data();
    let mut out = vec![0f32; n * c * oh * ow];
    let mut argmax = vec![0usize; n * c * oh * ow];
    let mut oi = 0;
    for s in 0..n {
        for ch in 0..c {
            let plane = (s * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let idx = plane + (oy * kernel + ky) * w + ox * kernel + kx;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[oi] = best;
                    argmax[oi] = best_idx;
                    oi += 1;
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, argmax))
}

pub fn max_pool2d_backward(dout: &[f32], input_shape: &[usize], argmax: &[usize]) -> Tensor {
    let numel = input_shape.iter().product();
    let mut dx = vec![0f32; numel];
    for (d, &idx) in dout.iter().zip(argmax.iter()) {
        dx[idx] += d;
    }
    Tensor::new(input_shape.to_vec(), dx).expect("dx shape")
}

/// Spatial subsampling x[.., ::s, ::s]; the option-A shortcut downsample.
pub fn subsample_forward(input: &Tensor, stride: usize) -> Result<Tensor> {
    let shape = input.shape();
    if shape.len() != 4 {
        return Err(BinetError::ShapeMismatch("subsample expects NCHW".into()));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
    let x = input.data();
    let mut out = vec![0f32; n * c * oh * ow];
    let mut oi = 0;
    for s in 0..n {
        for ch in 0..c {
            let plane = (s * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    out[oi] = x[plane + oy * stride * w + ox * stride];
                    oi += 1;
                }
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn subsample_backward(dout: &[f32], input_shape: &[usize], stride: usize) -> Tensor {
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
    let mut dx = vec![0f32; n * c * h * w];
    let mut oi = 0;
    for s in 0..n {
        for ch in 0..c {
            let plane = (s * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    dx[plane + oy * stride * w + ox * stride] += dout[oi];
                    oi += 1;
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx).expect("dx shape")
}

/// Append `extra` zero channels; the option-A shortcut channel expansion.
pub fn channel_pad_forward(input: &Tensor, extra: usize) -> Result<Tensor> {
    let shape = input.shape();
    if shape.len() != 4 {
        return Err(BinetError::ShapeMismatch("channel_pad expects NCHW".into()));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let plane = h * w;
    let mut out = vec![0f32; n * (c + extra) * plane];
    for s in 0..n {
        let src = &input.data()[s * c * plane..(s + 1) * c * plane];
        out[s * (c + extra) * plane..s * (c + extra) * plane + c * plane]
            .copy_from_slice(src);
    }
    Tensor::new(vec![n, c + extra, h, w], out)
}

pub fn channel_pad_backward(dout: &[f32], input_shape: &[usize], extra: usize) -> Tensor {
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let plane = h * w;
    let mut dx = vec![0f32; n * c * plane];
    for s in 0..n {
        let src = &dout[s * (c + extra) * plane..s * (c + extra) * plane + c * plane];
        dx[s * c * plane..(s + 1) * c * plane].copy_from_slice(src);
    }
    Tensor::new(input_shape.to_vec(), dx).expect("dx shape")
}

/// [N,C,H,W] → [N,C] channel means.
pub fn global_avg_pool_forward(input: &Tensor) -> Result<Tensor> {
    let shape = input.shape();
    if shape.len() != 4 {
        return Err(BinetError::ShapeMismatch("global_avg_pool expects NCHW".into()));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let plane = h * w;
    let x = input.data();
    let mut out = vec![0f32; n * c];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            let mut acc = 0f64;
            for i in 0..plane {
                acc += x[base + i] as f64;
            }
            out[s * c + ch] = (acc / plane as f64) as f32;
        }
    }
    Tensor::new(vec![n, c], out)
}

pub fn global_avg_pool_backward(dout: &[f32], input_shape: &[usize]) -> Tensor {
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let plane = h * w;
    let scale = 1.0 / plane as f32;
    let mut dx = vec![0f32; n * c * plane];
    for s in 0..n {
        for ch in 0..c {
            let d = dout[s * c + ch] * scale;
            let base = (s * c + ch) * plane;
            dx[base..base + plane].fill(d);
        }
    }
    Tensor::new(input_shape.to_vec(), dx).expect("dx shape")
}

// ── cross entropy ────────────────────────────────────────────────────

/// Mean softmax cross-entropy. Returns (loss, softmax probabilities).
pub fn cross_entropy_forward(logits: &Tensor, labels: &[usize]) -> Result<(f32, Vec<f32>)> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(BinetError::ShapeMismatch("cross_entropy expects [N, classes]".into()));
    }
    let (n, classes) = (shape[0], shape[1]);
    if labels.len() != n {
        return Err(BinetError::ShapeMismatch(format!(
            "{} labels for batch of {n}",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(BinetError::EmptyTensor("cross_entropy on empty batch".into()));
    }
    let x = logits.data();
    let mut softmax = vec![0f32; n * classes];
    let mut loss = 0f64;
    for s in 0..n {
        let label = labels[s];
        if label >= classes {
            return Err(BinetError::LabelOutOfRange { label, classes });
        }
        let row = &x[s * classes..(s + 1) * classes];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut denom = 0f64;
        for (j, &v) in row.iter().enumerate() {
            let e = ((v as f64) - max).exp();
            softmax[s * classes + j] = e as f32;
            denom += e;
        }
        for j in 0..classes {
            softmax[s * classes + j] = (softmax[s * classes + j] as f64 / denom) as f32;
        }
        loss += denom.ln() + max - row[label] as f64;
    }
    Ok(((loss / n as f64) as f32, softmax))
}

pub fn cross_entropy_backward(
    dloss: f32,
    softmax: &[f32],
    labels: &[usize],
    classes: usize,
) -> Tensor {
    let n = labels.len();
    let scale = dloss / n as f32;
    let mut dx = softmax.to_vec();
    for (s, &label) in labels.iter().enumerate() {
        dx[s * classes + label] -= 1.0;
    }
    for v in dx.iter_mut() {
        *v *= scale;
    }
    Tensor::new(vec![n, classes], dx).expect("dx shape")
}
