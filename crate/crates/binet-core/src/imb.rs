//! Information-maximized weight binarization.
//!
//! Weights are balanced and standardized before the sign is taken, which
//! pushes the +1/−1 split toward 50/50 (maximum Bernoulli entropy), and the
//! layer scale is restricted to an integer power of two so that deployment
//! needs no floating-point scalars. Activations binarize by plain sign.

use crate::error::{BinetError, Result};
use crate::tensor::Tensor;
use serde::Serialize;

/// sign with sign(0) = +1.
#[inline]
pub fn sign_value(x: f32) -> f32 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// 2^s as f32 (exact for the |s| range used here).
#[inline]
pub fn pow2(s: i32) -> f32 {
    (s as f64).exp2() as f32
}

/// Per-layer binary weights: the sign tensor plus the integer shift scalar.
/// Dequantized form is signs · 2^shift; no fractional scaling exists
/// anywhere in the layer.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedWeights {
    pub signs: Tensor,
    pub shift: i32,
    pub source_shape: Vec<usize>,
}

impl QuantizedWeights {
    pub fn dequantize(&self) -> Tensor {
        self.signs.scale(pow2(self.shift))
    }
}

/// Diagnostics of one binarization: Bernoulli entropy of the sign tensor and
/// the quantization error against the tensor that was binarized.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BinarizerReport {
    pub entropy_nats: f64,
    pub p_plus: f64,
    pub error_l1: f64,
    pub error_l2: f64,
}

/// ŵ_std = (w − μ(w)) / σ(w), with population σ over the whole tensor.
/// σ below 1e-12 (constant tensors) is floored to 1e-12.
pub fn standardize_balance(w: &Tensor) -> Result<Tensor> {
    if w.is_empty() {
        return Err(BinetError::EmptyTensor("standardize_balance".into()));
    }
    let mu = w.mean64();
    let sigma = w.population_std64().max(1e-12);
    let data: Vec<f32> = w.data().iter().map(|&x| (((x as f64) - mu) / sigma) as f32).collect();
    Ok(Tensor::new(w.shape().to_vec(), data)?)
}

/// s = round(log2(‖ŵ‖_l1 / n)), rounding half away from zero.
/// A zero tensor gets s = 0.
pub fn shift_scalar(w_std: &Tensor) -> i32 {
    let l1 = w_std.l1_norm64();
    if l1 == 0.0 {
        return 0;
    }
    let mean_abs = l1 / w_std.numel() as f64;
    // f64::round rounds half away from zero, which is the documented rule.
    mean_abs.log2().round() as i32
}

/// Full weight binarization: standardize-balance, sign, integer shift.
pub fn binarize_weights(w: &Tensor) -> Result<QuantizedWeights> {
    let w_std = standardize_balance(w)?;
    let shift = shift_scalar(&w_std);
    let signs = w_std.map(sign_value);
    Ok(QuantizedWeights { signs, shift, source_shape: w.shape().to_vec() })
}

/// Vanilla binarization baseline: sign of the raw weights, no
/// standardization, no scale.
pub fn binarize_weights_vanilla(w: &Tensor) -> QuantizedWeights {
    QuantizedWeights {
        signs: w.map(sign_value),
        shift: 0,
        source_shape: w.shape().to_vec(),
    }
}

/// Q_a = sign(a); activations carry no scale.
pub fn binarize_activations(a: &Tensor) -> Tensor {
    a.map(sign_value)
}

/// Bernoulli entropy in nats of a ±1 tensor: p = fraction of +1,
/// H = −p·ln p − (1−p)·ln(1−p) with 0·ln 0 = 0.
pub fn binary_entropy(signs: &Tensor) -> Result<f64> {
    if signs.is_empty() {
        return Err(BinetError::EmptyTensor("binary_entropy".into()));
    }
    let plus = signs.data().iter().filter(|&&x| x > 0.0).count();
    let p = plus as f64 / signs.numel() as f64;
    Ok(bernoulli_entropy(p))
}

/// Entropy of a Bernoulli(p) variable in nats.
pub fn bernoulli_entropy(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.ln() };
    term(p) + term(1.0 - p)
}

/// (Σ|q−x|, Σ(q−x)²) with f64 accumulation.
pub fn quantization_error(x: &Tensor, q: &Tensor) -> Result<(f64, f64)> {
    if x.shape() != q.shape() {
        return Err(BinetError::ShapeMismatch(format!(
            "quantization_error {:?} vs {:?}",
            x.shape(),
            q.shape()
        )));
    }
    let mut l1 = 0f64;
    let mut l2 = 0f64;
    for (&xv, &qv) in x.data().iter().zip(q.data().iter()) {
        let d = qv as f64 - xv as f64;
        l1 += d.abs();
        l2 += d * d;
    }
    Ok((l1, l2))
}

/// Binarize a weight tensor and report entropy plus the quantization error
/// of Q_w against the standardized weights it approximates.
pub fn report_weights(w: &Tensor) -> Result<(QuantizedWeights, BinarizerReport)> {
    let w_std = standardize_balance(w)?;
    let q = binarize_weights(w)?;
    let deq = q.dequantize();
    let (error_l1, error_l2) = quantization_error(&w_std, &deq)?;
    let plus = q.signs.data().iter().filter(|&&x| x > 0.0).count();
    let p_plus = plus as f64 / q.signs.numel() as f64;
    Ok((
        q,
        BinarizerReport { entropy_nats: bernoulli_entropy(p_plus), p_plus, error_l1, error_l2 },
    ))
}
