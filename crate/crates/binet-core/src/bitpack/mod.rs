//! Bit-packed ±1 tensors and the XNOR/Bitcount kernels.
//!
//! Encoding: bit 1 ↔ +1, bit 0 ↔ −1, LSB-first within each 64-bit word.
//! Tail bits past `logical_len` are kept zero by construction and masked in
//! every kernel, so stray tail writes can never affect results.

mod bench;
mod conv;
mod ops;
mod packed_model;

pub use bench::{benchmark_conv, BenchReport};
pub use conv::{apply_shift, packed_conv2d, packed_conv2d_scaled, PackedConvWeights};
pub use ops::{count_ops, LayerOps, OpsReport, ScalarScheme};
pub use packed_model::{export_model, import_model, PackedLayer, PackedModel};

use crate::error::{BinetError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedBitTensor {
    words: Vec<u64>,
    logical_len: usize,
    shape: Vec<usize>,
}

#[inline]
fn tail_mask(logical_len: usize) -> u64 {
    let rem = logical_len % 64;
    if rem == 0 {
        u64::MAX
    } else {
        (1u64 << rem) - 1
    }
}

impl PackedBitTensor {
    /// Pack a ±1 tensor, one bit per element. Elements other than ±1 are
    /// rejected.
    pub fn pack(signs: &Tensor) -> Result<PackedBitTensor> {
        let n = signs.numel();
        let mut words = vec![0u64; n.div_ceil(64)];
        for (i, &v) in signs.data().iter().enumerate() {
            if v == 1.0 {
                words[i / 64] |= 1u64 << (i % 64);
            } else if v != -1.0 {
                return Err(BinetError::InvalidArgument(format!(
                    "pack expects ±1 elements, found {v} at index {i}"
                )));
            }
        }
        Ok(PackedBitTensor { words, logical_len: n, shape: signs.shape().to_vec() })
    }

    pub fn unpack(&self) -> Tensor {
        let data: Vec<f32> =
            (0..self.logical_len).map(|i| if self.get_bit(i) { 1.0 } else { -1.0 }).collect();
        Tensor::new(self.shape.clone(), data).expect("packed shape consistent")
    }

    #[inline]
    pub fn get_bit(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn logical_len(&self) -> usize {
        self.logical_len
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Test-only hatch: expose the raw words so fuzz tests can scribble on
    /// tail bits and verify kernels mask them out.
    pub fn words_mut(&mut self) -> &mut [u64] {
        &mut self.words
    }
}

/// Σ pᵢ·qᵢ over ±1 vectors, computed as
/// 2·popcount(XNOR within the logical range) − n, implemented as XOR +
/// popcount with tail masking.
pub fn xnor_dot(p: &PackedBitTensor, q: &PackedBitTensor) -> Result<i64> {
    if p.logical_len != q.logical_len {
        return Err(BinetError::ShapeMismatch(format!(
            "xnor_dot lengths {} vs {}",
            p.logical_len, q.logical_len
        )));
    }
    let n = p.logical_len;
    if n == 0 {
        return Ok(0);
    }
    let last = p.words.len() - 1;
    let mut disagreements = 0u32;
    for i in 0..last {
        disagreements += (p.words[i] ^ q.words[i]).count_ones();
    }
    disagreements += ((p.words[last] ^ q.words[last]) & tail_mask(n)).count_ones();
    Ok(n as i64 - 2 * disagreements as i64)
}

/// Masked dot: Σ xᵢ·wᵢ over positions whose mask bit is set. Positions with
/// a clear mask bit contribute zero, which is how zero padding is carried
/// through the bitwise path.
#[inline]
pub(crate) fn xnor_dot_masked(x: &[u64], w: &[u64], mask: &[u64]) -> i64 {
    let mut valid = 0u32;
    let mut disagreements = 0u32;
    for i in 0..x.len() {
        let m = mask[i];
        valid += m.count_ones();
        disagreements += ((x[i] ^ w[i]) & m).count_ones();
    }
    valid as i64 - 2 * disagreements as i64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pack_encoding_lsb_first() {
        let t = Tensor::from_vec(vec![1.0, -1.0, 1.0]);
        let p = PackedBitTensor::pack(&t).unwrap();
        assert_eq!(p.words(), &[0b101]);
        assert_eq!(p.logical_len(), 3);
    }

    #[test]
    fn pack_sixty_four_ones() {
        let t = Tensor::from_vec(vec![1.0; 64]);
        let p = PackedBitTensor::pack(&t).unwrap();
        assert_eq!(p.words(), &[u64::MAX]);
    }

    #[test]
    fn pack_rejects_non_sign_values() {
        let t = Tensor::from_vec(vec![1.0, 0.5]);
        assert!(PackedBitTensor::pack(&t).is_err());
        let t = Tensor::from_vec(vec![0.0]);
        assert!(PackedBitTensor::pack(&t).is_err());
    }

    #[test]
    fn round_trip_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f32> =
            (0..1000).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let t = Tensor::from_vec(data);
        let p = PackedBitTensor::pack(&t).unwrap();
        assert_eq!(p.unpack(), t);
        // and pack(unpack(p)) == p bit for bit
        assert_eq!(PackedBitTensor::pack(&p.unpack()).unwrap(), p);
    }

    #[test]
    fn xnor_dot_hand_cases() {
        let ones = Tensor::from_vec(vec![1.0; 8]);
        let p = PackedBitTensor::pack(&ones).unwrap();
        assert_eq!(xnor_dot(&p, &p).unwrap(), 8);

        let neg = Tensor::from_vec(vec![-1.0; 8]);
        let q = PackedBitTensor::pack(&neg).unwrap();
        assert_eq!(xnor_dot(&p, &q).unwrap(), -8);

        let a = PackedBitTensor::pack(&Tensor::from_vec(vec![1.0, 1.0, -1.0, -1.0])).unwrap();
        let b = PackedBitTensor::pack(&Tensor::from_vec(vec![1.0, -1.0, 1.0, -1.0])).unwrap();
        assert_eq!(xnor_dot(&a, &b).unwrap(), 0);
    }

    #[test]
    fn xnor_dot_rejects_length_mismatch() {
        let a = PackedBitTensor::pack(&Tensor::from_vec(vec![1.0; 4])).unwrap();
        let b = PackedBitTensor::pack(&Tensor::from_vec(vec![1.0; 5])).unwrap();
        assert!(xnor_dot(&a, &b).is_err());
    }

    #[test]
    fn xnor_dot_ignores_tail_garbage() {
        let data: Vec<f32> = (0..70).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let t = Tensor::from_vec(data);
        let clean = PackedBitTensor::pack(&t).unwrap();
        let mut dirty = clean.clone();
        let last = dirty.words_mut().len() - 1;
        dirty.words_mut()[last] |= !tail_mask(70);
        assert_eq!(xnor_dot(&clean, &dirty).unwrap(), xnor_dot(&clean, &clean).unwrap());
    }
}
