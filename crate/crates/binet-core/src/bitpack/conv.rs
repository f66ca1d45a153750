//! Packed convolution: im2row lowering with channel-major bit layout, so
//! each output pixel is one long masked XNOR dot against a weight row.

use super::{xnor_dot_masked, PackedBitTensor};
use crate::error::{BinetError, Result};
use crate::imb::{pow2, QuantizedWeights};
use crate::kernels::ConvGeom;
use crate::tensor::Tensor;

/// One binarized conv layer's weights in packed form. Each output channel is
/// one row of in_ch·kh·kw bits in (channel, ky, kx) order, padded to a word
/// boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedConvWeights {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub shift: i32,
    row_words: usize,
    words: Vec<u64>,
}

impl PackedConvWeights {
    pub fn from_quantized(
        q: &QuantizedWeights,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<PackedConvWeights> {
        let shape = q.signs.shape();
        if shape.len() != 4 {
            return Err(BinetError::ShapeMismatch(format!(
                "packed conv weights must be OIHW, got {shape:?}"
            )));
        }
        let (o, i, kh, kw) = (shape[0], shape[1], shape[2], shape[3]);
        let patch = i * kh * kw;
        let row_words = patch.div_ceil(64);
        let mut words = vec![0u64; o * row_words];
        for oc in 0..o {
            let base = oc * patch;
            for j in 0..patch {
                if q.signs.data()[base + j] == 1.0 {
                    words[oc * row_words + j / 64] |= 1u64 << (j % 64);
                } else if q.signs.data()[base + j] != -1.0 {
                    return Err(BinetError::InvalidArgument(
                        "packed conv weights must be ±1".into(),
                    ));
                }
            }
        }
        Ok(PackedConvWeights {
            out_ch: o,
            in_ch: i,
            kh,
            kw,
            stride,
            padding,
            shift: q.shift,
            row_words,
            words,
        })
    }

    pub fn row_words(&self) -> usize {
        self.row_words
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub(crate) fn from_raw(
        out_ch: usize,
        in_ch: usize,
        kh: usize,
        kw: usize,
        stride: (usize, usize),
        padding: (usize, usize),
        shift: i32,
        words: Vec<u64>,
    ) -> Result<PackedConvWeights> {
        let row_words = (in_ch * kh * kw).div_ceil(64);
        if words.len() != out_ch * row_words {
            return Err(BinetError::FormatTruncated(format!(
                "packed conv words: expected {}, got {}",
                out_ch * row_words,
                words.len()
            )));
        }
        Ok(PackedConvWeights { out_ch, in_ch, kh, kw, stride, padding, shift, row_words, words })
    }

    fn geometry(&self, input_shape: &[usize]) -> Result<ConvGeom> {
        ConvGeom::infer(
            input_shape,
            &[self.out_ch, self.in_ch, self.kh, self.kw],
            self.stride,
            self.padding,
        )
    }
}

/// XNOR-popcount convolution over a packed ±1 NCHW input. Returns the raw
/// integer accumulators in NCHW order (shift not yet applied) plus the
/// output shape. Zero padding enters through the im2row validity masks.
pub fn packed_conv2d(
    input: &PackedBitTensor,
    weights: &PackedConvWeights,
) -> Result<(Vec<i32>, Vec<usize>)> {
    let g = weights.geometry(input.shape())?;
    let patch = g.patch_len();
    let row_words = weights.row_words;
    let pixels = g.out_pixels();
    let mut out = vec![0i32; g.batch * g.out_ch * pixels];

    // Per-sample im2row buffers: value bits + validity masks.
    let mut rows = vec![0u64; pixels * row_words];
    let mut masks = vec![0u64; pixels * row_words];

    for s in 0..g.batch {
        rows.fill(0);
        masks.fill(0);
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let pixel = oy * g.out_w + ox;
                let row = &mut rows[pixel * row_words..(pixel + 1) * row_words];
                let mask = &mut masks[pixel * row_words..(pixel + 1) * row_words];
                let mut j = 0;
                for c in 0..g.in_ch {
                    for ky in 0..g.kh {
                        let iy = (oy * g.stride.0 + ky) as isize - g.padding.0 as isize;
                        for kx in 0..g.kw {
                            let ix = (ox * g.stride.1 + kx) as isize - g.padding.1 as isize;
                            if iy >= 0
                                && iy < g.in_h as isize
                                && ix >= 0
                                && ix < g.in_w as isize
                            {
                                let bit_idx = ((s * g.in_ch + c) * g.in_h + iy as usize)
                                    * g.in_w
                                    + ix as usize;
                                mask[j / 64] |= 1u64 << (j % 64);
                                if input.get_bit(bit_idx) {
                                    row[j / 64] |= 1u64 << (j % 64);
                                }
                            }
                            j += 1;
                        }
                    }
                }
                debug_assert_eq!(j, patch);
            }
        }
        for oc in 0..g.out_ch {
            let wrow = &weights.words[oc * row_words..(oc + 1) * row_words];
            let out_base = (s * g.out_ch + oc) * pixels;
            for pixel in 0..pixels {
                let row = &rows[pixel * row_words..(pixel + 1) * row_words];
                let mask = &masks[pixel * row_words..(pixel + 1) * row_words];
                out[out_base + pixel] = xnor_dot_masked(row, wrow, mask) as i32;
            }
        }
    }
    Ok((out, g.output_shape()))
}

/// Apply the power-of-two shift to integer accumulators, producing exact
/// f32 values (integers times 2^s stay exactly representable here).
pub fn apply_shift(acc: &[i32], shift: i32) -> Vec<f32> {
    if shift >= 0 {
        acc.iter().map(|&v| ((v as i64) << shift) as f32).collect()
    } else {
        let factor = pow2(shift);
        acc.iter().map(|&v| v as f32 * factor).collect()
    }
}

/// Convenience wrapper: packed conv with the layer's shift applied.
pub fn packed_conv2d_scaled(
    input: &PackedBitTensor,
    weights: &PackedConvWeights,
) -> Result<Tensor> {
    let (acc, shape) = packed_conv2d(input, weights)?;
    Tensor::new(shape, apply_shift(&acc, weights.shift))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imb::QuantizedWeights;

    fn pack_ones(shape: &[usize]) -> PackedBitTensor {
        PackedBitTensor::pack(&Tensor::ones(shape)).unwrap()
    }

    fn quantized_ones(shape: &[usize], shift: i32) -> QuantizedWeights {
        QuantizedWeights {
            signs: Tensor::ones(shape),
            shift,
            source_shape: shape.to_vec(),
        }
    }

    #[test]
    fn all_ones_two_by_two() {
        let input = pack_ones(&[1, 1, 2, 2]);
        let w = PackedConvWeights::from_quantized(&quantized_ones(&[1, 1, 2, 2], 0), (1, 1), (0, 0))
            .unwrap();
        let out = packed_conv2d_scaled(&input, &w).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data(), &[4.0]);
    }

    #[test]
    fn negative_shift_halves() {
        let input = pack_ones(&[1, 1, 2, 2]);
        let w =
            PackedConvWeights::from_quantized(&quantized_ones(&[1, 1, 2, 2], -1), (1, 1), (0, 0))
                .unwrap();
        let out = packed_conv2d_scaled(&input, &w).unwrap();
        assert_eq!(out.data(), &[2.0]);
    }

    #[test]
    fn positive_shift_is_integer_doubling() {
        assert_eq!(apply_shift(&[3, -2], 2), vec![12.0, -8.0]);
        assert_eq!(apply_shift(&[3], -2), vec![0.75]);
    }

    #[test]
    fn geometry_mismatch_rejected() {
        let input = pack_ones(&[1, 2, 4, 4]);
        let w = PackedConvWeights::from_quantized(&quantized_ones(&[1, 1, 3, 3], 0), (1, 1), (0, 0))
            .unwrap();
        assert!(packed_conv2d(&input, &w).is_err());
    }

    #[test]
    fn padding_matches_float_conv_with_zero_pad() {
        use crate::kernels::conv2d_naive;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let sign = |rng: &mut rand_chacha::ChaCha8Rng| if rng.gen::<bool>() { 1.0f32 } else { -1.0 };
        let x_data: Vec<f32> = (0..2 * 3 * 5 * 5).map(|_| sign(&mut rng)).collect();
        let w_data: Vec<f32> = (0..4 * 3 * 3 * 3).map(|_| sign(&mut rng)).collect();
        let x = Tensor::new(vec![2, 3, 5, 5], x_data).unwrap();
        let w = Tensor::new(vec![4, 3, 3, 3], w_data).unwrap();

        let float_out = conv2d_naive(&x, &w, (1, 1), (1, 1)).unwrap();
        let q = QuantizedWeights { signs: w.clone(), shift: 0, source_shape: w.shape().to_vec() };
        let pw = PackedConvWeights::from_quantized(&q, (1, 1), (1, 1)).unwrap();
        let packed_out =
            packed_conv2d_scaled(&PackedBitTensor::pack(&x).unwrap(), &pw).unwrap();
        assert_eq!(float_out.shape(), packed_out.shape());
        for (a, b) in float_out.data().iter().zip(packed_out.data().iter()) {
            assert_eq!(a, b);
        }
    }
}
