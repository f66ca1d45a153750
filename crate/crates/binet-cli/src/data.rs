//! Dataset ingestion: MNIST-format IDX files, CIFAR-10 binary batches, and
//! deterministic synthetic generators.
//!
//! Normalization constants: single-channel IDX images use mean 0.1307 /
//! std 0.3081; CIFAR-10 uses per-channel means (0.4914, 0.4822, 0.4465) and
//! stds (0.2470, 0.2435, 0.2616).

use binet_core::error::{BinetError, Result};
use binet_core::model::Dataset;
use binet_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::Path;

pub const MNIST_MEAN: f32 = 0.1307;
pub const MNIST_STD: f32 = 0.3081;
pub const CIFAR_MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f32; 3] = [0.2470, 0.2435, 0.2616];

const IDX_IMAGES_MAGIC: u32 = 2051;
const IDX_LABELS_MAGIC: u32 = 2049;

// ── IDX (MNIST) format ───────────────────────────────────────────────

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    if at + 4 > bytes.len() {
        return Err(BinetError::DatasetFormat(format!("{what}: truncated header")));
    }
    Ok(u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap()))
}

/// Parse an IDX image file (big-endian magic 2051) into raw u8 pixels.
pub fn parse_idx_images(bytes: &[u8], what: &str) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, what)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(BinetError::DatasetFormat(format!(
            "{what}: bad magic {magic}, expected {IDX_IMAGES_MAGIC}"
        )));
    }
    let n = be_u32(bytes, 4, what)? as usize;
    let h = be_u32(bytes, 8, what)? as usize;
    let w = be_u32(bytes, 12, what)? as usize;
    let expected = 16 + n * h * w;
    if bytes.len() != expected {
        return Err(BinetError::DatasetFormat(format!(
            "{what}: {} bytes, expected exactly {expected}",
            bytes.len()
        )));
    }
    Ok((n, h, w, bytes[16..].to_vec()))
}

/// Parse an IDX label file (big-endian magic 2049).
pub fn parse_idx_labels(bytes: &[u8], classes: usize, what: &str) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, what)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(BinetError::DatasetFormat(format!(
            "{what}: bad magic {magic}, expected {IDX_LABELS_MAGIC}"
        )));
    }
    let n = be_u32(bytes, 4, what)? as usize;
    let expected = 8 + n;
    if bytes.len() != expected {
        return Err(BinetError::DatasetFormat(format!(
            "{what}: {} bytes, expected exactly {expected}",
            bytes.len()
        )));
    }
    let labels: Vec<usize> = bytes[8..].iter().map(|&b| b as usize).collect();
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(BinetError::DatasetFormat(format!(
                "{what}: label {l} at record {i} out of range [0,{classes})"
            )));
        }
    }
    Ok(labels)
}

pub fn encode_idx_images(n: usize, h: usize, w: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(n as u32).to_be_bytes());
    out.extend_from_slice(&(h as u32).to_be_bytes());
    out.extend_from_slice(&(w as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}

fn idx_to_dataset(n: usize, h: usize, w: usize, pixels: &[u8], labels: Vec<usize>) -> Result<Dataset> {
    if labels.len() != n {
        return Err(BinetError::DatasetFormat(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    let data: Vec<f32> =
        pixels.iter().map(|&p| (p as f32 / 255.0 - MNIST_MEAN) / MNIST_STD).collect();
    Dataset::new(Tensor::new(vec![n, 1, h, w], data)?, labels)
}

/// Load MNIST-format IDX files from a directory
/// (train-images-idx3-ubyte / train-labels-idx1-ubyte / t10k-...).
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let read = |name: &str| -> Result<Vec<u8>> {
        std::fs::read(dir.join(name)).map_err(|e| {
            BinetError::DatasetFormat(format!("{}: {e}", dir.join(name).display()))
        })
    };
    let (n, h, w, px) = parse_idx_images(&read("train-images-idx3-ubyte")?, "train images")?;
    let labels = parse_idx_labels(&read("train-labels-idx1-ubyte")?, 10, "train labels")?;
    let train = idx_to_dataset(n, h, w, &px, labels)?;
    let (n, h, w, px) = parse_idx_images(&read("t10k-images-idx3-ubyte")?, "test images")?;
    let labels = parse_idx_labels(&read("t10k-labels-idx1-ubyte")?, 10, "test labels")?;
    let test = idx_to_dataset(n, h, w, &px, labels)?;
    Ok((train, test))
}

// ── CIFAR-10 binary format ───────────────────────────────────────────

const CIFAR_RECORD: usize = 3073;
const CIFAR_PIXELS: usize = 3072;

/// Parse one CIFAR-10 binary batch: 3073-byte records, first byte the label.
pub fn parse_cifar_batch(bytes: &[u8], what: &str) -> Result<(Vec<f32>, Vec<usize>)> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(BinetError::DatasetFormat(format!(
            "{what}: {} bytes is not a multiple of {CIFAR_RECORD}",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut data = Vec::with_capacity(n * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(n);
    for rec in 0..n {
        let base = rec * CIFAR_RECORD;
        let label = bytes[base] as usize;
        if label >= 10 {
            return Err(BinetError::DatasetFormat(format!(
                "{what}: label {label} at record {rec} out of range [0,10)"
            )));
        }
        labels.push(label);
        for c in 0..3 {
            for i in 0..1024 {
                let p = bytes[base + 1 + c * 1024 + i] as f32 / 255.0;
                data.push((p - CIFAR_MEAN[c]) / CIFAR_STD[c]);
            }
        }
    }
    Ok((data, labels))
}

/// Load the five CIFAR-10 training batches and the test batch.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let mut train_data = Vec::new();
    let mut train_labels = Vec::new();
    for i in 1..=5 {
        let name = format!("data_batch_{i}.bin");
        let bytes = std::fs::read(dir.join(&name)).map_err(|e| {
            BinetError::DatasetFormat(format!("{}: {e}", dir.join(&name).display()))
        })?;
        let (data, labels) = parse_cifar_batch(&bytes, &name)?;
        train_data.extend(data);
        train_labels.extend(labels);
    }
    let n_train = train_labels.len();
    let train = Dataset::new(
        Tensor::new(vec![n_train, 3, 32, 32], train_data)?,
        train_labels,
    )?;
    let bytes = std::fs::read(dir.join("test_batch.bin")).map_err(|e| {
        BinetError::DatasetFormat(format!("{}: {e}", dir.join("test_batch.bin").display()))
    })?;
    let (data, labels) = parse_cifar_batch(&bytes, "test_batch.bin")?;
    let n_test = labels.len();
    let test = Dataset::new(Tensor::new(vec![n_test, 3, 32, 32], data)?, labels)?;
    Ok((train, test))
}

// ── synthetic datasets ───────────────────────────────────────────────

/// Seven-segment-style digit glyphs on a 28×28 canvas with jitter, stroke
/// and intensity variation, and Gaussian pixel noise. Pixels are u8, so the
/// output can also be written as genuine IDX files.
pub fn synth_digits_raw(
    count: usize,
    seed: u64,
    noise: f64,
) -> (usize, usize, Vec<u8>, Vec<usize>) {
    const H: usize = 28;
    const W: usize = 28;
    // segment → (rows, cols) in the base glyph box
    const SEGMENTS: [(usize, usize, usize, usize); 7] = [
        (3, 5, 8, 20),   // A top bar
        (4, 14, 18, 20), // B top right
        (13, 24, 18, 20), // C bottom right
        (22, 24, 8, 20), // D bottom bar
        (13, 24, 7, 9),  // E bottom left
        (4, 14, 7, 9),   // F top left
        (12, 14, 8, 20), // G middle bar
    ];
    const DIGIT_SEGMENTS: [&[usize]; 10] = [
        &[0, 1, 2, 3, 4, 5],    // 0
        &[1, 2],                // 1
        &[0, 1, 6, 4, 3],       // 2
        &[0, 1, 6, 2, 3],       // 3
        &[5, 6, 1, 2],          // 4
        &[0, 5, 6, 2, 3],       // 5
        &[0, 5, 6, 4, 2, 3],    // 6
        &[0, 1, 2],             // 7
        &[0, 1, 2, 3, 4, 5, 6], // 8
        &[0, 1, 2, 3, 5, 6],    // 9
    ];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = vec![0u8; count * H * W];
    let mut labels = Vec::with_capacity(count);
    for s in 0..count {
        let digit = rng.gen_range(0..10usize);
        labels.push(digit);
        let dx = rng.gen_range(-3i32..=3);
        let dy = rng.gen_range(-3i32..=3);
        let intensity = rng.gen_range(0.6f32..1.0);
        let thick = rng.gen_range(0i32..=1);
        let canvas = &mut pixels[s * H * W..(s + 1) * H * W];
        let mut paint = vec![0f32; H * W];
        for &seg in DIGIT_SEGMENTS[digit] {
            let (r0, r1, c0, c1) = SEGMENTS[seg];
            let seg_intensity = intensity * rng.gen_range(0.85f32..1.15);
            for r in r0 as i32 - thick..r1 as i32 + thick {
                for c in c0 as i32 - thick..c1 as i32 + thick {
                    let (y, x) = (r + dy, c + dx);
                    if y >= 0 && y < H as i32 && x >= 0 && x < W as i32 {
                        let v = &mut paint[y as usize * W + x as usize];
                        *v = v.max(seg_intensity);
                    }
                }
            }
        }
        for (dst, &v) in canvas.iter_mut().zip(paint.iter()) {
            let n: f32 = rng.sample::<f32, _>(StandardNormal) * noise as f32;
            *dst = ((v + n).clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    (H, W, pixels, labels)
}

/// Two Gaussian blobs in 2-D, linearly separable.
fn synth_two_gaussians(count: usize, seed: u64, noise: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = (0.3 + noise) as f32;
    let mut data = Vec::with_capacity(count * 2);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let class = rng.gen_range(0..2usize);
        let (cx, cy) = if class == 0 { (-1.5f32, -1.0) } else { (1.5, 1.0) };
        data.push(cx + sigma * rng.sample::<f32, _>(StandardNormal));
        data.push(cy + sigma * rng.sample::<f32, _>(StandardNormal));
        labels.push(class);
    }
    Dataset::new(Tensor::new(vec![count, 2, 1, 1], data).unwrap(), labels)
        .expect("synthetic shapes are consistent")
}

/// Synthetic dataset by name: "digits" (28×28 glyph images, 10 classes,
/// normalized like MNIST) or "two-gaussians" (2-D, 2 classes).
/// Deterministic per (name, seed).
pub fn synth_dataset(
    name: &str,
    train_count: usize,
    test_count: usize,
    seed: u64,
    noise: f64,
) -> Result<(Dataset, Dataset)> {
    match name {
        "digits" | "synth-digits" => {
            let make = |count: usize, seed: u64| -> Result<Dataset> {
                let (h, w, pixels, labels) = synth_digits_raw(count, seed, noise);
                idx_to_dataset(count, h, w, &pixels, labels)
            };
            Ok((make(train_count, seed)?, make(test_count, seed.wrapping_add(1))?))
        }
        "two-gaussians" => Ok((
            synth_two_gaussians(train_count, seed, noise),
            synth_two_gaussians(test_count, seed.wrapping_add(1), noise),
        )),
        _ => Err(BinetError::InvalidArgument(format!(
            "unknown synthetic dataset {name:?} (digits|two-gaussians)"
        ))),
    }
}

/// Resolve a dataset name from the run configuration.
pub fn load_dataset(
    name: &str,
    data_path: Option<&Path>,
    synth_train: usize,
    synth_test: usize,
    seed: u64,
    noise: f64,
) -> Result<(Dataset, Dataset)> {
    match name {
        "mnist" => {
            let dir = data_path.ok_or_else(|| {
                BinetError::InvalidArgument("dataset mnist requires data_path".into())
            })?;
            load_mnist(dir)
        }
        "cifar10" => {
            let dir = data_path.ok_or_else(|| {
                BinetError::InvalidArgument("dataset cifar10 requires data_path".into())
            })?;
            load_cifar10(dir)
        }
        other => synth_dataset(other, synth_train, synth_test, seed, noise),
    }
}

/// Number of classes a named dataset carries.
pub fn dataset_classes(name: &str) -> usize {
    match name {
        "two-gaussians" => 2,
        _ => 10,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_round_trip_and_magic() {
        let pixels: Vec<u8> = (0..2 * 4 * 4).map(|i| i as u8).collect();
        let bytes = encode_idx_images(2, 4, 4, &pixels);
        let (n, h, w, px) = parse_idx_images(&bytes, "t").unwrap();
        assert_eq!((n, h, w), (2, 4, 4));
        assert_eq!(px, pixels);

        let mut bad = bytes.clone();
        bad[3] = 7; // wrong magic
        assert!(matches!(
            parse_idx_images(&bad, "t"),
            Err(BinetError::DatasetFormat(_))
        ));
        // truncated
        assert!(parse_idx_images(&bytes[..bytes.len() - 1], "t").is_err());
    }

    #[test]
    fn idx_labels_validate_range() {
        let bytes = encode_idx_labels(&[0, 3, 9]);
        assert_eq!(parse_idx_labels(&bytes, 10, "t").unwrap(), vec![0, 3, 9]);
        let bytes = encode_idx_labels(&[0, 12]);
        assert!(parse_idx_labels(&bytes, 10, "t").is_err());
    }

    #[test]
    fn cifar_record_layout() {
        // record 0 byte 0 is the label
        let mut bytes = vec![0u8; CIFAR_RECORD * 2];
        bytes[0] = 7;
        bytes[CIFAR_RECORD] = 3;
        let (_, labels) = parse_cifar_batch(&bytes, "t").unwrap();
        assert_eq!(labels, vec![7, 3]);

        bytes[0] = 11;
        assert!(parse_cifar_batch(&bytes, "t").is_err());
        assert!(parse_cifar_batch(&bytes[..100], "t").is_err());
    }

    #[test]
    fn synth_digits_deterministic() {
        let (h, w, a_px, a_lb) = synth_digits_raw(16, 7, 0.2);
        let (_, _, b_px, b_lb) = synth_digits_raw(16, 7, 0.2);
        assert_eq!((h, w), (28, 28));
        assert_eq!(a_px, b_px);
        assert_eq!(a_lb, b_lb);
        let (_, _, c_px, _) = synth_digits_raw(16, 8, 0.2);
        assert_ne!(a_px, c_px);
    }

    #[test]
    fn two_gaussians_deterministic() {
        let (a_train, _) = synth_dataset("two-gaussians", 32, 8, 7, 0.0).unwrap();
        let (b_train, _) = synth_dataset("two-gaussians", 32, 8, 7, 0.0).unwrap();
        assert_eq!(a_train.images, b_train.images);
        assert_eq!(a_train.labels, b_train.labels);
    }

    #[test]
    fn digit_classes_are_visually_distinct() {
        // noiseless glyphs of different digits must differ in many pixels
        let (_, _, px, lb) = synth_digits_raw(64, 3, 0.0);
        let size = 28 * 28;
        let mut by_class: Vec<Option<&[u8]>> = vec![None; 10];
        for (i, &l) in lb.iter().enumerate() {
            if by_class[l].is_none() {
                by_class[l] = Some(&px[i * size..(i + 1) * size]);
            }
        }
        for a in 0..10 {
            for b in a + 1..10 {
                if let (Some(pa), Some(pb)) = (by_class[a], by_class[b]) {
                    let diff = pa
                        .iter()
                        .zip(pb.iter())
                        .filter(|(x, y)| (**x as i16 - **y as i16).abs() > 64)
                        .count();
                    assert!(diff > 10, "digits {a} and {b} differ in only {diff} pixels");
                }
            }
        }
    }
}
