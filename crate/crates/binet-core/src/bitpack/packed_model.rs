//! Deployment model: packed binary weights, folded batch norm, and the
//! bitwise inference path.
//!
//! File format: magic "BNET", u16 version, little-endian TLV records per
//! layer, trailing CRC32. Negative shift scalars are deferred into the next
//! folded batch-norm multiply when one follows (through scale-commuting
//! layers only); positive shifts stay integer bit-shifts on the accumulator.
//! Both routes scale by an exact power of two, so results are bit-identical.

use super::conv::{apply_shift, packed_conv2d, PackedConvWeights};
use super::PackedBitTensor;
use crate::error::{BinetError, Result};
use crate::format::{frame, unframe, Reader, Writer};
use crate::imb::{binarize_activations, pow2};
use crate::kernels;
use crate::model::{Dataset, Downsample, LayerSpec, Network};
use crate::tensor::Tensor;
use std::path::Path;

const MAGIC: &[u8; 4] = b"BNET";
const VERSION: u16 = 1;
const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub enum PackedLayer {
    ConvFp { weight: Tensor, stride: usize, padding: usize },
    ConvBin { weights: PackedConvWeights, post_scale: f32 },
    LinearFp { weight: Tensor },
    LinearBin { out_features: usize, in_features: usize, shift: i32, post_scale: f32, words: Vec<u64> },
    /// Folded per-channel affine y = scale·x + bias.
    BatchNorm { scale: Vec<f32>, bias: Vec<f32> },
    Hardtanh,
    MaxPool { kernel: usize },
    GlobalAvgPool,
    Flatten,
    ShortcutSave,
    ShortcutAdd { downsample: Option<Downsample> },
}

#[derive(Clone, Debug)]
pub struct PackedModel {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub layers: Vec<PackedLayer>,
}

/// Layers a pending power-of-two scale may move through unchanged
/// (positive scaling commutes with max pooling and reshapes).
fn scale_commutes(layer: &LayerSpec) -> bool {
    matches!(layer, LayerSpec::MaxPool2d { .. } | LayerSpec::Flatten)
}

/// Freeze a trained network into its deployment form.
pub fn export_model(net: &Network) -> Result<PackedModel> {
    let mut layers: Vec<PackedLayer> = Vec::with_capacity(net.spec.layers.len());
    let mut param_idx = 0;
    let mut running_idx = 0;
    let mut bin_idx = 0;
    // (index into `layers`, 2^shift) awaiting a batch-norm fold.
    let mut pending: Option<(usize, f32)> = None;

    let resolve_pending = |layers: &mut Vec<PackedLayer>, pending: &mut Option<(usize, f32)>| {
        if let Some((idx, factor)) = pending.take() {
            match &mut layers[idx] {
                PackedLayer::ConvBin { post_scale, .. }
                | PackedLayer::LinearBin { post_scale, .. } => *post_scale *= factor,
                _ => unreachable!("pending scale always points at a binarized layer"),
            }
        }
    };

    for layer in &net.spec.layers {
        if pending.is_some() && !matches!(layer, LayerSpec::BatchNorm { .. }) && !scale_commutes(layer)
        {
            resolve_pending(&mut layers, &mut pending);
        }
        match layer {
            LayerSpec::Conv2d { stride, padding, binarize, .. } => {
                if *binarize {
                    let q = net.quantize_layer(bin_idx)?;
                    bin_idx += 1;
                    let weights = PackedConvWeights::from_quantized(
                        &q,
                        (*stride, *stride),
                        (*padding, *padding),
                    )?;
                    layers.push(PackedLayer::ConvBin { weights, post_scale: 1.0 });
                    if q.shift < 0 {
                        pending = Some((layers.len() - 1, pow2(q.shift)));
                    }
                } else {
                    layers.push(PackedLayer::ConvFp {
                        weight: net.params[param_idx].clone(),
                        stride: *stride,
                        padding: *padding,
                    });
                }
                param_idx += 1;
            }
            LayerSpec::Linear { in_features, out_features, binarize } => {
                if *binarize {
                    let q = net.quantize_layer(bin_idx)?;
                    bin_idx += 1;
                    let packed = PackedBitTensor::pack(&q.signs.reshape(&[*out_features
                        * *in_features])?)?;
                    // repack row-aligned
                    let row_words = in_features.div_ceil(64);
                    let mut words = vec![0u64; out_features * row_words];
                    for o in 0..*out_features {
                        for j in 0..*in_features {
                            if packed.get_bit(o * in_features + j) {
                                words[o * row_words + j / 64] |= 1u64 << (j % 64);
                            }
                        }
                    }
                    layers.push(PackedLayer::LinearBin {
                        out_features: *out_features,
                        in_features: *in_features,
                        shift: q.shift,
                        post_scale: 1.0,
                        words,
                    });
                    if q.shift < 0 {
                        pending = Some((layers.len() - 1, pow2(q.shift)));
                    }
                } else {
                    layers.push(PackedLayer::LinearFp { weight: net.params[param_idx].clone() });
                }
                param_idx += 1;
            }
            LayerSpec::BatchNorm { features } => {
                let gamma = &net.params[param_idx];
                let beta = &net.params[param_idx + 1];
                param_idx += 2;
                let stats = &net.running[running_idx];
                running_idx += 1;
                let extra = pending.take().map(|(_, f)| f).unwrap_or(1.0);
                let mut scale = Vec::with_capacity(*features);
                let mut bias = Vec::with_capacity(*features);
                for c in 0..*features {
                    let a = gamma.data()[c] as f64 / (stats.var[c] as f64 + BN_EPS).sqrt();
                    let b = beta.data()[c] as f64 - a * stats.mean[c] as f64;
                    scale.push((a as f32) * extra);
                    bias.push(b as f32);
                }
                layers.push(PackedLayer::BatchNorm { scale, bias });
            }
            LayerSpec::Hardtanh => layers.push(PackedLayer::Hardtanh),
            LayerSpec::MaxPool2d { kernel } => layers.push(PackedLayer::MaxPool { kernel: *kernel }),
            LayerSpec::GlobalAvgPool => layers.push(PackedLayer::GlobalAvgPool),
            LayerSpec::Flatten => layers.push(PackedLayer::Flatten),
            LayerSpec::ShortcutSave => layers.push(PackedLayer::ShortcutSave),
            LayerSpec::ShortcutAdd { downsample } => {
                layers.push(PackedLayer::ShortcutAdd { downsample: *downsample })
            }
        }
    }
    resolve_pending(&mut layers, &mut pending);

    Ok(PackedModel {
        name: net.spec.name.clone(),
        input_shape: net.spec.input_shape.clone(),
        num_classes: net.spec.num_classes,
        layers,
    })
}

impl PackedModel {
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let mut x = images.clone();
        let mut shortcuts: Vec<Tensor> = Vec::new();
        for layer in &self.layers {
            x = match layer {
                PackedLayer::ConvFp { weight, stride, padding } => {
                    kernels::conv2d_forward(&x, weight, (*stride, *stride), (*padding, *padding))?
                        .0
                }
                PackedLayer::ConvBin { weights, post_scale } => {
                    let packed = PackedBitTensor::pack(&binarize_activations(&x))?;
                    let (acc, shape) = packed_conv2d(&packed, weights)?;
                    let mut data = apply_shift(&acc, weights.shift.max(0));
                    if *post_scale != 1.0 {
                        for v in data.iter_mut() {
                            *v *= post_scale;
                        }
                    }
                    Tensor::new(shape, data)?
                }
                PackedLayer::LinearFp { weight } => kernels::linear_forward(&x, weight)?,
                PackedLayer::LinearBin { out_features, in_features, shift, post_scale, words } => {
                    linear_bin_forward(&x, *out_features, *in_features, *shift, *post_scale, words)?
                }
                PackedLayer::BatchNorm { scale, bias } => affine_per_channel(&x, scale, bias)?,
                PackedLayer::Hardtanh => kernels::hardtanh_forward(&x),
                PackedLayer::MaxPool { kernel } => kernels::max_pool2d_forward(&x, *kernel)?.0,
                PackedLayer::GlobalAvgPool => kernels::global_avg_pool_forward(&x)?,
                PackedLayer::Flatten => {
                    let n = x.shape()[0];
                    let rest: usize = x.shape()[1..].iter().product();
                    x.reshape(&[n, rest])?
                }
                PackedLayer::ShortcutSave => {
                    shortcuts.push(x.clone());
                    x
                }
                PackedLayer::ShortcutAdd { downsample } => {
                    let saved = shortcuts
                        .pop()
                        .ok_or_else(|| BinetError::InvalidModel("shortcut underflow".into()))?;
                    let saved = match downsample {
                        Some(d) => {
                            let sub = kernels::subsample_forward(&saved, d.stride)?;
                            if d.pad_channels > 0 {
                                kernels::channel_pad_forward(&sub, d.pad_channels)?
                            } else {
                                sub
                            }
                        }
                        None => saved,
                    };
                    if saved.shape() != x.shape() {
                        return Err(BinetError::ShapeMismatch("shortcut add".into()));
                    }
                    let data: Vec<f32> = x
                        .data()
                        .iter()
                        .zip(saved.data().iter())
                        .map(|(&a, &b)| a + b)
                        .collect();
                    Tensor::new(x.shape().to_vec(), data)?
                }
            };
        }
        Ok(x)
    }

    pub fn evaluate(&self, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
        if data.is_empty() {
            return Err(BinetError::EmptyTensor("evaluate on empty dataset".into()));
        }
        let indices: Vec<usize> = (0..data.len()).collect();
        let mut correct = 0usize;
        let mut loss_sum = 0f64;
        for chunk in indices.chunks(batch_size) {
            let (images, labels) = data.gather(chunk);
            let logits = self.forward(&images)?;
            let classes = logits.shape()[1];
            for (i, &label) in labels.iter().enumerate() {
                let row = &logits.data()[i * classes..(i + 1) * classes];
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                if best == label {
                    correct += 1;
                }
            }
            let (loss, _) = kernels::cross_entropy_forward(&logits, &labels)?;
            loss_sum += loss as f64 * labels.len() as f64;
        }
        Ok((correct as f64 / data.len() as f64, loss_sum / data.len() as f64))
    }

    // ── serialization ────────────────────────────────────────────────

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.string(&self.name);
        w.usize_slice(&self.input_shape);
        w.u64(self.num_classes as u64);
        w.u64(self.layers.len() as u64);
        for layer in &self.layers {
            let mut body = Writer::new();
            let tag = write_packed_layer(&mut body, layer);
            let body = body.into_bytes();
            w.u8(tag);
            w.u64(body.len() as u64);
            w.raw(&body);
        }
        frame(MAGIC, VERSION, &w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<PackedModel> {
        let body = unframe(MAGIC, VERSION, bytes)?;
        let mut r = Reader::new(body);
        let name = r.string("model name")?;
        let input_shape = r.usize_slice("input shape")?;
        let num_classes = r.u64("num classes")? as usize;
        let n_layers = r.u64("layer count")? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let tag = r.u8("layer tag")?;
            let len = r.u64("layer length")? as usize;
            let body = r.bytes(len, "layer body")?;
            let mut lr = Reader::new(body);
            layers.push(read_packed_layer(tag, &mut lr)?);
        }
        Ok(PackedModel { name, input_shape, num_classes, layers })
    }

    /// Serialized size in bytes: 1 bit per binarized weight plus the
    /// full-precision first/last layers and batch-norm parameters.
    pub fn byte_size(&self) -> usize {
        self.to_bytes().len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PackedModel> {
        let bytes = std::fs::read(path)?;
        PackedModel::from_bytes(&bytes)
    }
}

/// Load a packed model from disk (spec-level alias for [`PackedModel::load`]).
pub fn import_model(path: &Path) -> Result<PackedModel> {
    PackedModel::load(path)
}

fn linear_bin_forward(
    x: &Tensor,
    out_features: usize,
    in_features: usize,
    shift: i32,
    post_scale: f32,
    words: &[u64],
) -> Result<Tensor> {
    if x.shape().len() != 2 || x.shape()[1] != in_features {
        return Err(BinetError::ShapeMismatch(format!(
            "binary linear expects [N,{in_features}], got {:?}",
            x.shape()
        )));
    }
    let n = x.shape()[0];
    let row_words = in_features.div_ceil(64);
    let mut row = vec![0u64; row_words];
    let mut out = vec![0f32; n * out_features];
    let s_int = shift.max(0);
    let factor = post_scale;
    for s in 0..n {
        row.fill(0);
        for j in 0..in_features {
            if x.data()[s * in_features + j] >= 0.0 {
                row[j / 64] |= 1u64 << (j % 64);
            }
        }
        for o in 0..out_features {
            let wrow = &words[o * row_words..(o + 1) * row_words];
            let mut disagreements = 0u32;
            for i in 0..row_words {
                disagreements += (row[i] ^ wrow[i]).count_ones();
            }
            // weight and input tails are both zero, so XOR tails vanish
            let dot = in_features as i64 - 2 * disagreements as i64;
            // Negative shifts live in post_scale or the next folded batch
            // norm, exactly as in the packed conv path.
            out[s * out_features + o] = ((dot << s_int) as f32) * factor;
        }
    }
    Tensor::new(vec![n, out_features], out)
}

fn affine_per_channel(x: &Tensor, scale: &[f32], bias: &[f32]) -> Result<Tensor> {
    let shape = x.shape();
    let (n, c, spatial) = match shape.len() {
        2 => (shape[0], shape[1], 1),
        4 => (shape[0], shape[1], shape[2] * shape[3]),
        _ => return Err(BinetError::ShapeMismatch("affine expects 2-d or 4-d".into())),
    };
    if c != scale.len() {
        return Err(BinetError::ShapeMismatch(format!(
            "affine over {} channels, input has {c}",
            scale.len()
        )));
    }
    let mut out = vec![0f32; x.numel()];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * spatial;
            let (a, b) = (scale[ch], bias[ch]);
            for i in 0..spatial {
                out[base + i] = x.data()[base + i] * a + b;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

fn write_packed_layer(w: &mut Writer, layer: &PackedLayer) -> u8 {
    match layer {
        PackedLayer::ConvFp { weight, stride, padding } => {
            w.usize_slice(weight.shape());
            w.f32_slice(weight.data());
            w.u64(*stride as u64);
            w.u64(*padding as u64);
            0
        }
        PackedLayer::ConvBin { weights, post_scale } => {
            w.u64(weights.out_ch as u64);
            w.u64(weights.in_ch as u64);
            w.u64(weights.kh as u64);
            w.u64(weights.kw as u64);
            w.u64(weights.stride.0 as u64);
            w.u64(weights.stride.1 as u64);
            w.u64(weights.padding.0 as u64);
            w.u64(weights.padding.1 as u64);
            w.i32(weights.shift);
            w.f32(*post_scale);
            w.u64_slice(weights.words());
            1
        }
        PackedLayer::LinearFp { weight } => {
            w.usize_slice(weight.shape());
            w.f32_slice(weight.data());
            2
        }
        PackedLayer::LinearBin { out_features, in_features, shift, post_scale, words } => {
            w.u64(*out_features as u64);
            w.u64(*in_features as u64);
            w.i32(*shift);
            w.f32(*post_scale);
            w.u64_slice(words);
            3
        }
        PackedLayer::BatchNorm { scale, bias } => {
            w.f32_slice(scale);
            w.f32_slice(bias);
            4
        }
        PackedLayer::Hardtanh => 5,
        PackedLayer::MaxPool { kernel } => {
            w.u64(*kernel as u64);
            6
        }
        PackedLayer::GlobalAvgPool => 7,
        PackedLayer::Flatten => 8,
        PackedLayer::ShortcutSave => 9,
        PackedLayer::ShortcutAdd { downsample } => {
            match downsample {
                Some(d) => {
                    w.u8(1);
                    w.u64(d.stride as u64);
                    w.u64(d.pad_channels as u64);
                }
                None => w.u8(0),
            }
            10
        }
    }
}

fn read_packed_layer(tag: u8, r: &mut Reader) -> Result<PackedLayer> {
    Ok(match tag {
        0 => {
            let shape = r.usize_slice("conv shape")?;
            let data = r.f32_slice("conv data")?;
            let stride = r.u64("conv stride")? as usize;
            let padding = r.u64("conv padding")? as usize;
            PackedLayer::ConvFp { weight: Tensor::new(shape, data)?, stride, padding }
        }
        1 => {
            let out_ch = r.u64("out_ch")? as usize;
            let in_ch = r.u64("in_ch")? as usize;
            let kh = r.u64("kh")? as usize;
            let kw = r.u64("kw")? as usize;
            let stride = (r.u64("stride_h")? as usize, r.u64("stride_w")? as usize);
            let padding = (r.u64("pad_h")? as usize, r.u64("pad_w")? as usize);
            let shift = r.i32("shift")?;
            let post_scale = r.f32("post_scale")?;
            let words = r.u64_slice("weight words")?;
            PackedLayer::ConvBin {
                weights: PackedConvWeights::from_raw(
                    out_ch, in_ch, kh, kw, stride, padding, shift, words,
                )?,
                post_scale,
            }
        }
        2 => {
            let shape = r.usize_slice("linear shape")?;
            let data = r.f32_slice("linear data")?;
            PackedLayer::LinearFp { weight: Tensor::new(shape, data)? }
        }
        3 => {
            let out_features = r.u64("out_features")? as usize;
            let in_features = r.u64("in_features")? as usize;
            let shift = r.i32("shift")?;
            let post_scale = r.f32("post_scale")?;
            let words = r.u64_slice("weight words")?;
            let row_words = in_features.div_ceil(64);
            if words.len() != out_features * row_words {
                return Err(BinetError::FormatTruncated("binary linear words".into()));
            }
            PackedLayer::LinearBin { out_features, in_features, shift, post_scale, words }
        }
        4 => {
            let scale = r.f32_slice("bn scale")?;
            let bias = r.f32_slice("bn bias")?;
            if scale.len() != bias.len() {
                return Err(BinetError::FormatTruncated("bn lengths disagree".into()));
            }
            PackedLayer::BatchNorm { scale, bias }
        }
        5 => PackedLayer::Hardtanh,
        6 => PackedLayer::MaxPool { kernel: r.u64("pool kernel")? as usize },
        7 => PackedLayer::GlobalAvgPool,
        8 => PackedLayer::Flatten,
        9 => PackedLayer::ShortcutSave,
        10 => {
            let downsample = if r.u8("shortcut flag")? != 0 {
                Some(Downsample {
                    stride: r.u64("stride")? as usize,
                    pad_channels: r.u64("pad")? as usize,
                })
            } else {
                None
            };
            PackedLayer::ShortcutAdd { downsample }
        }
        t => return Err(BinetError::FormatTruncated(format!("unknown layer tag {t}"))),
    })
}
