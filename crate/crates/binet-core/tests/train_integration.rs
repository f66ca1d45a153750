//! End-to-end training behavior: separable-data sanity, seed determinism,
//! training-path vs packed-path forward equivalence, checkpoint and packed
//! export round trips.

use binet_core::autodiff::Tape;
use binet_core::bitpack::{export_model, packed_conv2d_scaled, PackedBitTensor, PackedConvWeights};
use binet_core::dte::{ClampMode, EstimatorMode};
use binet_core::imb::binarize_activations;
use binet_core::kernels::conv2d_forward;
use binet_core::model::{
    binary_mlp, desk_cnn, deserialize_checkpoint, evaluate, serialize_checkpoint, train,
    Binarizer, Dataset, Network, TrainConfig,
};
use binet_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Two well-separated Gaussian blobs in 2-D.
fn two_gaussians(n_per_class: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n_per_class * 2 * 2);
    let mut labels = Vec::with_capacity(n_per_class * 2);
    for class in 0..2 {
        let (cx, cy) = if class == 0 { (-1.5f32, -1.0) } else { (1.5, 1.0) };
        for _ in 0..n_per_class {
            let dx: f32 = rng.sample(StandardNormal);
            let dy: f32 = rng.sample(StandardNormal);
            data.push(cx + 0.4 * dx);
            data.push(cy + 0.4 * dy);
            labels.push(class);
        }
    }
    let n = labels.len();
    Dataset::new(Tensor::new(vec![n, 2, 1, 1], data).unwrap(), labels).unwrap()
}

fn quick_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        lr0: 0.05,
        batch_size: 32,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn binary_mlp_learns_separable_data() {
    let train_set = two_gaussians(100, 1);
    let test_set = two_gaussians(50, 2);
    let mut net = Network::new(binary_mlp(2, 16, 2), Binarizer::Imb, 7).unwrap();
    let cfg = quick_config(20, 7);
    let records = train(&mut net, &train_set, &test_set, &cfg, |_, _, _, _| Ok(())).unwrap();
    let last = records.last().unwrap();
    assert!(
        last.train_accuracy >= 0.95,
        "train accuracy {}",
        last.train_accuracy
    );
    assert_eq!(records.len(), 20);
}

#[test]
fn identical_seeds_give_identical_runs() {
    let train_set = two_gaussians(60, 3);
    let test_set = two_gaussians(30, 4);
    let run = || {
        let mut net = Network::new(binary_mlp(2, 16, 2), Binarizer::Imb, 11).unwrap();
        let cfg = quick_config(5, 42);
        train(&mut net, &train_set, &test_set, &cfg, |_, _, _, _| Ok(())).unwrap()
    };
    let a = run();
    let b = run();
    for (ra, rb) in a.iter().zip(b.iter()) {
        assert_eq!(ra.train_loss, rb.train_loss);
        assert_eq!(ra.test_accuracy, rb.test_accuracy);
        for (la, lb) in ra.layers.iter().zip(rb.layers.iter()) {
            assert_eq!(la.entropy, lb.entropy);
            assert_eq!(la.sign_flip_rate, lb.sign_flip_rate);
            assert_eq!(la.t, lb.t);
        }
    }
}

#[test]
fn estimator_rejects_bad_dataset_before_epoch_zero() {
    let train_set = two_gaussians(10, 3);
    // wrong input shape for the CNN
    let mut net = Network::new(desk_cnn(1, 28, 28, 10), Binarizer::Imb, 1).unwrap();
    let cfg = quick_config(1, 0);
    assert!(train(&mut net, &train_set, &train_set, &cfg, |_, _, _, _| Ok(())).is_err());

    // out-of-range label
    let images = Tensor::zeros(&[4, 2, 1, 1]);
    let bad = Dataset::new(images, vec![0, 1, 2, 0]).unwrap();
    let mut net = Network::new(binary_mlp(2, 8, 2), Binarizer::Imb, 1).unwrap();
    assert!(train(&mut net, &bad, &bad, &cfg, |_, _, _, _| Ok(())).is_err());
}

#[test]
fn training_forward_equals_packed_execution_per_layer() {
    // For random binarized conv layers, the float training path
    // (conv on ±1 signs, scaled by 2^s) equals the packed XNOR path exactly.
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for _ in 0..20 {
        let w = Tensor::randn(&[8, 5, 3, 3], 0.2, &mut rng);
        let q = binet_core::imb::binarize_weights(&w).unwrap();
        let raw_input = Tensor::randn(&[2, 5, 7, 7], 1.0, &mut rng);
        let qa = binarize_activations(&raw_input);

        let (float_out, _, _) = conv2d_forward(&qa, &q.signs, (1, 1), (1, 1)).unwrap();
        let float_scaled = float_out.scale(binet_core::imb::pow2(q.shift));

        let pw = PackedConvWeights::from_quantized(&q, (1, 1), (1, 1)).unwrap();
        let packed_out =
            packed_conv2d_scaled(&PackedBitTensor::pack(&qa).unwrap(), &pw).unwrap();
        assert_eq!(float_scaled.shape(), packed_out.shape());
        for (a, b) in float_scaled.data().iter().zip(packed_out.data().iter()) {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn trained_cnn_checkpoint_and_packed_export_round_trip() {
    // Tiny CNN, tiny synthetic image data: train a couple of epochs, then
    // checkpoint and packed export must reproduce evaluation results.
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let n = 64;
    let mut images = Vec::with_capacity(n * 1 * 12 * 12);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        for p in 0..144 {
            let (y, x) = (p / 12, p % 12);
            let base = if class == 0 {
                if y < 6 { 0.9 } else { 0.1 }
            } else if x < 6 {
                0.9
            } else {
                0.1
            };
            let noise: f32 = rng.sample::<f32, _>(StandardNormal) * 0.1;
            images.push((base + noise).clamp(0.0, 1.0));
        }
        labels.push(class);
    }
    let data =
        Dataset::new(Tensor::new(vec![n, 1, 12, 12], images).unwrap(), labels).unwrap();
    let mut net = Network::new(desk_cnn(1, 12, 12, 2), Binarizer::Imb, 9).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        lr0: 0.05,
        batch_size: 16,
        seed: 5,
        estimator: EstimatorMode::Dte,
        clamp_mode: ClampMode::ActiveRegion,
        ..TrainConfig::default()
    };
    let mut opt_bytes: Vec<u8> = Vec::new();
    train(&mut net, &data, &data, &cfg, |epoch, net, opt, _| {
        if epoch == 2 {
            opt_bytes = serialize_checkpoint(net, opt, epoch + 1);
        }
        Ok(())
    })
    .unwrap();

    let (acc_mem, loss_mem) = evaluate(&mut net, &data, 16).unwrap();

    // checkpoint round trip
    let ck = deserialize_checkpoint(&opt_bytes).unwrap();
    let mut restored = ck.network;
    let (acc_ck, loss_ck) = evaluate(&mut restored, &data, 16).unwrap();
    assert_eq!(acc_mem, acc_ck);
    assert_eq!(loss_mem, loss_ck);
    assert_eq!(ck.epoch, 3);

    // packed export round trip
    let packed = export_model(&net).unwrap();
    let (acc_packed, _) = packed.evaluate(&data, 16).unwrap();
    assert_eq!(acc_mem, acc_packed, "packed accuracy differs");

    let bytes = packed.to_bytes();
    let reloaded = binet_core::bitpack::PackedModel::from_bytes(&bytes).unwrap();
    let (acc_reload, _) = reloaded.evaluate(&data, 16).unwrap();
    assert_eq!(acc_packed, acc_reload);
}

#[test]
fn whole_model_logits_match_packed_model_closely() {
    // Binarized conv outputs agree exactly; after batch-norm folding the
    // remaining difference is sub-ulp-scale rounding, so logits agree to a
    // tight tolerance and predictions agree exactly.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut net = Network::new(desk_cnn(1, 12, 12, 3), Binarizer::Imb, 13).unwrap();
    // give running stats non-trivial values
    for stats in net.running.iter_mut() {
        for (i, m) in stats.mean.iter_mut().enumerate() {
            *m = (i as f32 * 0.13).sin() * 0.2;
        }
        for (i, v) in stats.var.iter_mut().enumerate() {
            *v = 0.5 + (i as f32 * 0.31).cos().abs();
        }
    }
    let packed = export_model(&net).unwrap();
    let images = Tensor::randn(&[8, 1, 12, 12], 1.0, &mut rng);

    let mut tape = Tape::new();
    let fp = net.forward(&mut tape, images.clone(), false).unwrap();
    let logits_mem = tape.value(fp.logits).clone();
    let logits_packed = packed.forward(&images).unwrap();

    assert_eq!(logits_mem.shape(), logits_packed.shape());
    for (a, b) in logits_mem.data().iter().zip(logits_packed.data().iter()) {
        assert!((a - b).abs() <= 1e-4 * a.abs().max(1.0), "{a} vs {b}");
    }
}
