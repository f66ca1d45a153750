//! Training loop: per-epoch estimator refresh, minibatch SGD, and the
//! metrics stream.

use crate::autodiff::Tape;
use crate::dte::{updatable_fraction, ClampMode, EstimatorMode};
use crate::error::{BinetError, Result};
use crate::imb::{binary_entropy, quantization_error};
use crate::model::net::Network;
use crate::optim::{cosine_lr, SgdMomentum};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Images [N,C,H,W] plus integer labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>) -> Result<Dataset> {
        if images.shape().len() != 4 {
            return Err(BinetError::ShapeMismatch(format!(
                "dataset images must be [N,C,H,W], got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(BinetError::ShapeMismatch(format!(
                "{} images vs {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        Ok(Dataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        for &l in &self.labels {
            if l >= num_classes {
                return Err(BinetError::LabelOutOfRange { label: l, classes: num_classes });
            }
        }
        Ok(())
    }

    /// Copy out a batch by sample indices.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let sample_len: usize = self.sample_shape().iter().product();
        let mut data = Vec::with_capacity(indices.len() * sample_len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * sample_len..(i + 1) * sample_len]);
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        (Tensor::new(shape, data).expect("gather shape"), labels)
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    pub seed: u64,
    pub estimator: EstimatorMode,
    pub clamp_mode: ClampMode,
    pub epsilon: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub delta: f64,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 400,
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 128,
            seed: 0,
            estimator: EstimatorMode::Dte,
            clamp_mode: ClampMode::Literal,
            epsilon: 0.1,
            t_min: 0.1,
            t_max: 10.0,
            delta: 0.1,
            augment: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(BinetError::InvalidArgument("epochs must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(BinetError::InvalidArgument("batch_size must be > 0".into()));
        }
        if self.lr0 < 0.0 {
            return Err(BinetError::InvalidArgument("lr0 must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(BinetError::InvalidArgument("epsilon must be in [0,1]".into()));
        }
        if self.t_min <= 0.0 || self.t_max <= self.t_min {
            return Err(BinetError::InvalidArgument("need 0 < t_min < t_max".into()));
        }
        if !(0.0..1.0).contains(&self.delta) || self.delta <= 0.0 {
            return Err(BinetError::InvalidArgument("delta must be in (0,1)".into()));
        }
        Ok(())
    }
}

/// Per-binarized-layer diagnostics for one epoch.
#[derive(Clone, Debug, Serialize)]
pub struct LayerMetrics {
    pub layer: String,
    pub entropy: f64,
    pub p_plus: f64,
    pub t: f64,
    pub k: f64,
    pub updatable_fraction: f64,
    pub sign_flip_rate: f64,
    pub error_l1: f64,
    pub error_l2: f64,
}

/// One appended record per epoch.
#[derive(Clone, Debug, Serialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub lr: f64,
    pub layers: Vec<LayerMetrics>,
}

impl MetricsRecord {
    /// CSV header matching [`MetricsRecord::csv_row`]; layer columns are
    /// prefixed by the layer name.
    pub fn csv_header(&self) -> String {
        let mut cols = vec![
            "epoch".to_string(),
            "train_loss".to_string(),
            "train_accuracy".to_string(),
            "test_loss".to_string(),
            "test_accuracy".to_string(),
            "lr".to_string(),
        ];
        for layer in &self.layers {
            for field in [
                "entropy",
                "p_plus",
                "t",
                "k",
                "updatable_fraction",
                "sign_flip_rate",
                "error_l1",
                "error_l2",
            ] {
                cols.push(format!("{}_{}", layer.layer, field));
            }
        }
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.epoch.to_string(),
            format!("{:.6}", self.train_loss),
            format!("{:.6}", self.train_accuracy),
            format!("{:.6}", self.test_loss),
            format!("{:.6}", self.test_accuracy),
            format!("{:.8}", self.lr),
        ];
        for layer in &self.layers {
            cols.push(format!("{:.6}", layer.entropy));
            cols.push(format!("{:.6}", layer.p_plus));
            cols.push(format!("{:.6}", layer.t));
            cols.push(format!("{:.6}", layer.k));
            cols.push(format!("{:.6}", layer.updatable_fraction));
            cols.push(format!("{:.6}", layer.sign_flip_rate));
            cols.push(format!("{:.6}", layer.error_l1));
            cols.push(format!("{:.6}", layer.error_l2));
        }
        cols.join(",")
    }
}

/// Fraction of positions whose sign differs.
pub fn sign_flip_rate(prev_signs: &Tensor, curr_signs: &Tensor) -> Result<f64> {
    if prev_signs.shape() != curr_signs.shape() {
        return Err(BinetError::ShapeMismatch(format!(
            "sign_flip_rate {:?} vs {:?}",
            prev_signs.shape(),
            curr_signs.shape()
        )));
    }
    if prev_signs.is_empty() {
        return Err(BinetError::EmptyTensor("sign_flip_rate".into()));
    }
    let flips = prev_signs
        .data()
        .iter()
        .zip(curr_signs.data().iter())
        .filter(|(a, b)| a != b)
        .count();
    Ok(flips as f64 / prev_signs.numel() as f64)
}

/// Top-1 accuracy and mean loss over a split, in eval mode (running batch
/// norm statistics, binarization from current weights).
pub fn evaluate(net: &mut Network, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(BinetError::EmptyTensor("evaluate on empty dataset".into()));
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0usize;
    let mut loss_sum = 0f64;
    for chunk in indices.chunks(batch_size) {
        let (images, labels) = data.gather(chunk);
        let mut tape = Tape::new();
        let fp = net.forward(&mut tape, images, false)?;
        let logits = tape.value(fp.logits);
        correct += count_correct(logits, &labels);
        let loss = tape.cross_entropy(fp.logits, &labels)?;
        loss_sum += tape.value(loss).data()[0] as f64 * labels.len() as f64;
    }
    Ok((correct as f64 / data.len() as f64, loss_sum / data.len() as f64))
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let classes = logits.shape()[1];
    let mut correct = 0;
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
    correct
}

/// Random pad-and-crop plus horizontal flip, the standard CIFAR recipe.
fn augment_batch(images: &mut Tensor, pad: usize, rng: &mut ChaCha8Rng) {
    let shape = images.shape().to_vec();
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let sample_len = c * h * w;
    let data = images.data_mut();
    for s in 0..n {
        let dy = rng.gen_range(0..=2 * pad) as isize - pad as isize;
        let dx = rng.gen_range(0..=2 * pad) as isize - pad as isize;
        let flip: bool = rng.gen();
        let src = data[s * sample_len..(s + 1) * sample_len].to_vec();
        let dst = &mut data[s * sample_len..(s + 1) * sample_len];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let sy = y as isize + dy;
                    let sx0 = if flip { (w - 1 - x) as isize } else { x as isize };
                    let sx = sx0 + dx;
                    let v = if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                        0.0
                    } else {
                        src[(ch * h + sy as usize) * w + sx as usize]
                    };
                    dst[(ch * h + y) * w + x] = v;
                }
            }
        }
    }
}

/// Train a network in place. `on_epoch` fires after each epoch's metrics are
/// assembled (checkpointing, file appends). Deterministic for a fixed seed.
pub fn train<F>(
    net: &mut Network,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<MetricsRecord>>
where
    F: FnMut(usize, &Network, &SgdMomentum, &MetricsRecord) -> Result<()>,
{
    cfg.validate()?;
    // Reject shape or label problems before epoch 0.
    for (name, split) in [("train", train_set), ("test", test_set)] {
        if split.is_empty() {
            return Err(BinetError::EmptyTensor(format!("{name} split is empty")));
        }
        if split.sample_shape() != net.spec.input_shape.as_slice() {
            return Err(BinetError::ShapeMismatch(format!(
                "{name} samples {:?} do not match model input {:?}",
                split.sample_shape(),
                net.spec.input_shape
            )));
        }
        split.check_labels(net.spec.num_classes)?;
    }
    net.estimator_mode = cfg.estimator;

    let mut opt = SgdMomentum::new(cfg.momentum, cfg.weight_decay, &net.param_sizes());
    // Distinct deterministic streams per purpose.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5AFF1E));
    let mut augment_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xA06));
    let mut records = Vec::with_capacity(cfg.epochs);

    // Baseline signs for the epoch-0 flip rate.
    for i in 0..net.bin_states.len() {
        let q = net.quantize_layer(i)?;
        net.bin_states[i].prev_signs = Some(q.signs.data().to_vec());
    }

    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        net.update_estimators(
            epoch,
            cfg.epochs,
            cfg.epsilon,
            cfg.t_min,
            cfg.t_max,
            cfg.clamp_mode,
        )?;
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr0);
        indices.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0f64;
        let mut correct = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            let (mut images, labels) = train_set.gather(chunk);
            if cfg.augment {
                augment_batch(&mut images, 4, &mut augment_rng);
            }
            let mut tape = Tape::new();
            let fp = net.forward(&mut tape, images, true)?;
            correct += count_correct(tape.value(fp.logits), &labels);
            let loss = tape.cross_entropy(fp.logits, &labels)?;
            loss_sum += tape.value(loss).data()[0] as f64 * labels.len() as f64;
            tape.backward(loss)?;
            for (i, leaf) in fp.param_leaves.iter().enumerate() {
                if let Some(grad) = tape.grad(*leaf) {
                    let grad = grad.to_vec();
                    opt.step(i, lr, net.params[i].data_mut(), &grad, 1.0)?;
                }
            }
        }

        let (test_accuracy, test_loss) = evaluate(net, test_set, cfg.batch_size)?;
        let layers = collect_layer_metrics(net, cfg.delta)?;
        let record = MetricsRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            test_loss,
            test_accuracy,
            lr: lr as f64,
            layers,
        };
        on_epoch(epoch, net, &opt, &record)?;
        records.push(record);
    }
    Ok(records)
}

/// Snapshot per-layer diagnostics from the current weights, and roll the
/// sign-flip baseline forward.
fn collect_layer_metrics(net: &mut Network, delta: f64) -> Result<Vec<LayerMetrics>> {
    let mut out = Vec::with_capacity(net.bin_states.len());
    for i in 0..net.bin_states.len() {
        let q = net.quantize_layer(i)?;
        let basis = net.estimator_basis(i)?;
        let entropy = binary_entropy(&q.signs)?;
        let p_plus = q.signs.data().iter().filter(|&&x| x > 0.0).count() as f64
            / q.signs.numel() as f64;
        let (error_l1, error_l2) = quantization_error(&basis, &q.dequantize())?;
        let state = net.bin_states[i].estimator;
        let frac = updatable_fraction(&basis, &state, delta)?;
        let flip = match &net.bin_states[i].prev_signs {
            Some(prev) => {
                let prev_t = Tensor::new(q.signs.shape().to_vec(), prev.clone())?;
                sign_flip_rate(&prev_t, &q.signs)?
            }
            None => 0.0,
        };
        net.bin_states[i].prev_signs = Some(q.signs.data().to_vec());
        out.push(LayerMetrics {
            layer: net.bin_states[i].name.clone(),
            entropy,
            p_plus,
            t: state.t,
            k: state.k,
            updatable_fraction: frac,
            sign_flip_rate: flip,
            error_l1,
            error_l2,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_flip_rate_endpoints() {
        let a = Tensor::from_vec(vec![1.0, -1.0, 1.0, -1.0]);
        assert_eq!(sign_flip_rate(&a, &a).unwrap(), 0.0);
        let b = a.map(|x| -x);
        assert_eq!(sign_flip_rate(&a, &b).unwrap(), 1.0);
        let half = Tensor::from_vec(vec![1.0, -1.0, -1.0, 1.0]);
        assert_eq!(sign_flip_rate(&a, &half).unwrap(), 0.5);
    }

    #[test]
    fn dataset_gather_and_validation() {
        let images = Tensor::new(vec![3, 1, 1, 2], vec![0., 1., 2., 3., 4., 5.]).unwrap();
        let ds = Dataset::new(images, vec![0, 1, 0]).unwrap();
        let (batch, labels) = ds.gather(&[2, 0]);
        assert_eq!(batch.shape(), &[2, 1, 1, 2]);
        assert_eq!(batch.data(), &[4., 5., 0., 1.]);
        assert_eq!(labels, vec![0, 0]);
        assert!(ds.check_labels(2).is_ok());
        assert!(ds.check_labels(1).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        cfg.validate().unwrap();
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig { t_min: 2.0, t_max: 1.0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        cfg = TrainConfig { delta: 0.0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
