//! Single-thread wall-clock comparison of the packed kernel against the
//! naive float convolution on the same geometry.

use super::conv::{packed_conv2d, PackedConvWeights};
use super::PackedBitTensor;
use crate::error::Result;
use crate::imb::QuantizedWeights;
use crate::kernels::conv2d_naive;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::time::Instant;

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub geometry: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub height: usize,
    pub width: usize,
    pub reps: usize,
    /// Median nanoseconds per call, packed XNOR/Bitcount path (includes
    /// activation packing, as deployment would).
    pub ns_packed: u64,
    /// Median nanoseconds per call, naive direct float convolution.
    pub ns_float: u64,
    pub ratio: f64,
    pub thread_count: usize,
}

fn median_ns(mut samples: Vec<u64>) -> u64 {
    samples.sort_unstable();
    samples[samples.len() / 2]
}

/// Benchmark one conv geometry (batch 1, stride 1, padding 1) over `reps`
/// repetitions and report median wall time per kernel. Runs on the calling
/// thread only.
pub fn benchmark_conv(
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    height: usize,
    width: usize,
    reps: usize,
) -> Result<BenchReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xBE7C);
    let mut sign_tensor = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        Tensor::new(shape.to_vec(), data).expect("bench shape")
    };
    let input = sign_tensor(&[1, in_ch, height, width]);
    let weight = sign_tensor(&[out_ch, in_ch, kernel, kernel]);
    let q = QuantizedWeights { signs: weight.clone(), shift: 0, source_shape: weight.shape().to_vec() };
    let packed_w = PackedConvWeights::from_quantized(&q, (1, 1), (1, 1))?;

    let mut float_ns = Vec::with_capacity(reps);
    let mut packed_ns = Vec::with_capacity(reps);
    let mut float_sink = 0f64;
    let mut packed_sink = 0i64;
    for _ in 0..reps {
        let t0 = Instant::now();
        let out = conv2d_naive(&input, &weight, (1, 1), (1, 1))?;
        float_ns.push(t0.elapsed().as_nanos() as u64);
        float_sink += out.data()[0] as f64;

        let t1 = Instant::now();
        let packed_in = PackedBitTensor::pack(&input)?;
        let (acc, _) = packed_conv2d(&packed_in, &packed_w)?;
        packed_ns.push(t1.elapsed().as_nanos() as u64);
        packed_sink += acc[0] as i64;
    }
    // keep the optimizer honest
    std::hint::black_box((float_sink, packed_sink));

    let ns_float = median_ns(float_ns);
    let ns_packed = median_ns(packed_ns);
    Ok(BenchReport {
        geometry: format!("{in_ch}x{out_ch} {kernel}x{kernel} on {height}x{width}"),
        in_ch,
        out_ch,
        kernel,
        height,
        width,
        reps,
        ns_packed,
        ns_float,
        ratio: ns_float as f64 / ns_packed.max(1) as f64,
        thread_count: 1,
    })
}
