//! Exactness of the bitwise path: packed convolution against a test-owned
//! float reference on randomized geometries (channel counts off the word
//! boundary included), shift exactness across |s| ≤ 20, and tail-bit
//! invariance under garbage writes.

mod common;

use binet_core::bitpack::{
    apply_shift, packed_conv2d, packed_conv2d_scaled, xnor_dot, PackedBitTensor,
    PackedConvWeights,
};
use binet_core::imb::{pow2, QuantizedWeights};
use binet_core::tensor::Tensor;
use common::conv64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sign_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

#[test]
fn packed_conv_exact_on_randomized_geometries() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..200 {
        let n = rng.gen_range(1..3);
        // deliberately straddle the 64-bit word boundary in the patch length
        let c = rng.gen_range(1..10);
        let o = rng.gen_range(1..6);
        let k = rng.gen_range(1..4);
        let stride = (rng.gen_range(1..3), rng.gen_range(1..3));
        let pad = (rng.gen_range(0..2), rng.gen_range(0..2));
        let h = rng.gen_range(k + 1..k + 6);
        let w = rng.gen_range(k + 1..k + 6);
        let s = rng.gen_range(-6i32..=6);

        let input = sign_tensor(&mut rng, &[n, c, h, w]);
        let weight = sign_tensor(&mut rng, &[o, c, k, k]);
        let q = QuantizedWeights { signs: weight.clone(), shift: s, source_shape: weight.shape().to_vec() };
        let pw = PackedConvWeights::from_quantized(&q, stride, pad).unwrap();
        let packed = packed_conv2d_scaled(&PackedBitTensor::pack(&input).unwrap(), &pw).unwrap();

        let x64: Vec<f64> = input.data().iter().map(|&v| v as f64).collect();
        let w64: Vec<f64> = weight.data().iter().map(|&v| v as f64).collect();
        let reference = conv64(&x64, &w64, n, c, h, w, o, k, k, stride, pad);
        let factor = pow2(s) as f64;
        assert_eq!(packed.numel(), reference.len(), "case {case}");
        for (i, (&got, &want)) in packed.data().iter().zip(reference.iter()).enumerate() {
            assert_eq!(
                got as f64,
                want * factor,
                "case {case} elem {i} (s={s}, stride={stride:?}, pad={pad:?})"
            );
        }
    }
}

#[test]
fn shift_exact_for_magnitudes_up_to_twenty() {
    let acc = [3i32, -7, 1, 255];
    for s in -20i32..=20 {
        let scaled = apply_shift(&acc, s);
        let factor = (s as f64).exp2();
        for (&a, &v) in acc.iter().zip(scaled.iter()) {
            assert_eq!(v as f64, a as f64 * factor, "s={s}");
        }
    }
}

#[test]
fn results_invariant_to_tail_garbage() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..50 {
        let len = rng.gen_range(1..200);
        let a = sign_tensor(&mut rng, &[len]);
        let b = sign_tensor(&mut rng, &[len]);
        let pa = PackedBitTensor::pack(&a).unwrap();
        let pb = PackedBitTensor::pack(&b).unwrap();
        let clean = xnor_dot(&pa, &pb).unwrap();

        let mut dirty_a = pa.clone();
        let mut dirty_b = pb.clone();
        if len % 64 != 0 {
            let garbage: u64 = rng.gen();
            let keep = (1u64 << (len % 64)) - 1;
            let last = dirty_a.words_mut().len() - 1;
            dirty_a.words_mut()[last] |= garbage & !keep;
            let last = dirty_b.words_mut().len() - 1;
            dirty_b.words_mut()[last] |= rng.gen::<u64>() & !keep;
        }
        assert_eq!(xnor_dot(&dirty_a, &dirty_b).unwrap(), clean);

        // brute-force the dot as well
        let brute: i64 = a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(&x, &y)| (x * y) as i64)
            .sum();
        assert_eq!(clean, brute);
    }
}

#[test]
fn channel_counts_off_word_boundary() {
    // 3×3 kernels with in_ch ∈ {7, 8, 9}: patch lengths 63, 72, 81 exercise
    // word-tail handling inside the masked dot.
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for c in [7usize, 8, 9, 21, 64, 65] {
        let input = sign_tensor(&mut rng, &[1, c, 5, 5]);
        let weight = sign_tensor(&mut rng, &[3, c, 3, 3]);
        let q = QuantizedWeights { signs: weight.clone(), shift: 0, source_shape: weight.shape().to_vec() };
        let pw = PackedConvWeights::from_quantized(&q, (1, 1), (1, 1)).unwrap();
        let (acc, shape) = packed_conv2d(&PackedBitTensor::pack(&input).unwrap(), &pw).unwrap();
        let x64: Vec<f64> = input.data().iter().map(|&v| v as f64).collect();
        let w64: Vec<f64> = weight.data().iter().map(|&v| v as f64).collect();
        let reference = conv64(&x64, &w64, 1, c, 5, 5, 3, 3, 3, (1, 1), (1, 1));
        assert_eq!(shape, vec![1, 3, 5, 5]);
        for (&got, &want) in acc.iter().zip(reference.iter()) {
            assert_eq!(got as f64, want, "c={c}");
        }
    }
}
