//! Versioned binary checkpoint: model description, latent weights, optimizer
//! state, estimator states, epoch counter. Little-endian, CRC-framed.

use crate::dte::{EstimatorMode, EstimatorState};
use crate::error::{BinetError, Result};
use crate::format::{frame, unframe, Reader, Writer};
use crate::model::net::{Binarizer, Network};
use crate::model::{Downsample, LayerSpec, ModelSpec};
use crate::optim::SgdMomentum;
use crate::tensor::Tensor;
use std::path::Path;

const MAGIC: &[u8; 4] = b"BCKP";
const VERSION: u16 = 1;

pub struct Checkpoint {
    pub network: Network,
    pub optimizer: SgdMomentum,
    /// Number of completed epochs.
    pub epoch: usize,
}

fn write_layer(w: &mut Writer, layer: &LayerSpec) {
    match layer {
        LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, padding, binarize } => {
            w.u8(0);
            w.u64(*in_ch as u64);
            w.u64(*out_ch as u64);
            w.u64(*kernel as u64);
            w.u64(*stride as u64);
            w.u64(*padding as u64);
            w.u8(*binarize as u8);
        }
        LayerSpec::Linear { in_features, out_features, binarize } => {
            w.u8(1);
            w.u64(*in_features as u64);
            w.u64(*out_features as u64);
            w.u8(*binarize as u8);
        }
        LayerSpec::BatchNorm { features } => {
            w.u8(2);
            w.u64(*features as u64);
        }
        LayerSpec::Hardtanh => w.u8(3),
        LayerSpec::MaxPool2d { kernel } => {
            w.u8(4);
            w.u64(*kernel as u64);
        }
        LayerSpec::GlobalAvgPool => w.u8(5),
        LayerSpec::Flatten => w.u8(6),
        LayerSpec::ShortcutSave => w.u8(7),
        LayerSpec::ShortcutAdd { downsample } => {
            w.u8(8);
            match downsample {
                Some(d) => {
                    w.u8(1);
                    w.u64(d.stride as u64);
                    w.u64(d.pad_channels as u64);
                }
                None => w.u8(0),
            }
        }
    }
}

fn read_layer(r: &mut Reader) -> Result<LayerSpec> {
    Ok(match r.u8("layer tag")? {
        0 => LayerSpec::Conv2d {
            in_ch: r.u64("conv in_ch")? as usize,
            out_ch: r.u64("conv out_ch")? as usize,
            kernel: r.u64("conv kernel")? as usize,
            stride: r.u64("conv stride")? as usize,
            padding: r.u64("conv padding")? as usize,
            binarize: r.u8("conv binarize")? != 0,
        },
        1 => LayerSpec::Linear {
            in_features: r.u64("linear in")? as usize,
            out_features: r.u64("linear out")? as usize,
            binarize: r.u8("linear binarize")? != 0,
        },
        2 => LayerSpec::BatchNorm { features: r.u64("bn features")? as usize },
        3 => LayerSpec::Hardtanh,
        4 => LayerSpec::MaxPool2d { kernel: r.u64("pool kernel")? as usize },
        5 => LayerSpec::GlobalAvgPool,
        6 => LayerSpec::Flatten,
        7 => LayerSpec::ShortcutSave,
        8 => {
            let downsample = if r.u8("shortcut flag")? != 0 {
                Some(Downsample {
                    stride: r.u64("shortcut stride")? as usize,
                    pad_channels: r.u64("shortcut pad")? as usize,
                })
            } else {
                None
            };
            LayerSpec::ShortcutAdd { downsample }
        }
        tag => {
            return Err(BinetError::FormatTruncated(format!("unknown layer tag {tag}")));
        }
    })
}

pub fn serialize_checkpoint(net: &Network, opt: &SgdMomentum, epoch: usize) -> Vec<u8> {
    let mut w = Writer::new();
    w.string(&net.spec.name);
    w.usize_slice(&net.spec.input_shape);
    w.u64(net.spec.num_classes as u64);
    w.u64(net.spec.layers.len() as u64);
    for layer in &net.spec.layers {
        write_layer(&mut w, layer);
    }
    w.u8(match net.binarizer {
        Binarizer::Imb => 0,
        Binarizer::Vanilla => 1,
    });
    w.u8(match net.estimator_mode {
        EstimatorMode::Dte => 0,
        EstimatorMode::Ede => 1,
        EstimatorMode::Clip => 2,
        EstimatorMode::Identity => 3,
    });
    w.u64(epoch as u64);

    w.u64(net.params.len() as u64);
    for (name, tensor) in net.param_names.iter().zip(net.params.iter()) {
        w.string(name);
        w.usize_slice(tensor.shape());
        w.f32_slice(tensor.data());
    }

    w.f32(opt.momentum);
    w.f32(opt.weight_decay);
    w.u64(opt.num_params() as u64);
    for i in 0..opt.num_params() {
        w.f32_slice(opt.velocity(i));
    }

    w.u64(net.running.len() as u64);
    for stats in &net.running {
        w.f32_slice(&stats.mean);
        w.f32_slice(&stats.var);
    }

    w.u64(net.bin_states.len() as u64);
    for st in &net.bin_states {
        let e = &st.estimator;
        w.f64(e.t);
        w.f64(e.k);
        w.u64(e.epoch_i as u64);
        w.u64(e.total_n as u64);
        w.f64(e.epsilon);
        w.f64(e.t_min);
        w.f64(e.t_max);
    }

    frame(MAGIC, VERSION, &w.into_bytes())
}

pub fn deserialize_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let body = unframe(MAGIC, VERSION, bytes)?;
    let mut r = Reader::new(body);
    let name = r.string("model name")?;
    let input_shape = r.usize_slice("input shape")?;
    let num_classes = r.u64("num classes")? as usize;
    let n_layers = r.u64("layer count")? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        layers.push(read_layer(&mut r)?);
    }
    let spec = ModelSpec { name, input_shape, num_classes, layers };
    let binarizer = match r.u8("binarizer")? {
        0 => Binarizer::Imb,
        1 => Binarizer::Vanilla,
        v => return Err(BinetError::FormatTruncated(format!("unknown binarizer tag {v}"))),
    };
    let estimator_mode = match r.u8("estimator mode")? {
        0 => EstimatorMode::Dte,
        1 => EstimatorMode::Ede,
        2 => EstimatorMode::Clip,
        3 => EstimatorMode::Identity,
        v => return Err(BinetError::FormatTruncated(format!("unknown estimator tag {v}"))),
    };
    let epoch = r.u64("epoch")? as usize;

    let mut network = Network::new(spec, binarizer, 0)?;
    network.estimator_mode = estimator_mode;

    let n_params = r.u64("param count")? as usize;
    if n_params != network.params.len() {
        return Err(BinetError::InvalidModel(format!(
            "checkpoint holds {n_params} parameters, model expects {}",
            network.params.len()
        )));
    }
    for i in 0..n_params {
        let pname = r.string("param name")?;
        let shape = r.usize_slice("param shape")?;
        let data = r.f32_slice("param data")?;
        if pname != network.param_names[i] || shape != network.params[i].shape() {
            return Err(BinetError::InvalidModel(format!(
                "checkpoint parameter {pname}/{shape:?} does not match model {}/{:?}",
                network.param_names[i],
                network.params[i].shape()
            )));
        }
        network.params[i] = Tensor::new(shape, data)?;
    }

    let momentum = r.f32("momentum")?;
    let weight_decay = r.f32("weight decay")?;
    let mut optimizer = SgdMomentum::new(momentum, weight_decay, &network.param_sizes());
    let n_vel = r.u64("velocity count")? as usize;
    if n_vel != optimizer.num_params() {
        return Err(BinetError::InvalidModel("optimizer state count mismatch".into()));
    }
    for i in 0..n_vel {
        let v = r.f32_slice("velocity")?;
        if v.len() != optimizer.velocity(i).len() {
            return Err(BinetError::InvalidModel("velocity length mismatch".into()));
        }
        *optimizer.velocity_mut(i) = v;
    }

    let n_bn = r.u64("bn count")? as usize;
    if n_bn != network.running.len() {
        return Err(BinetError::InvalidModel("batch-norm state count mismatch".into()));
    }
    for i in 0..n_bn {
        let mean = r.f32_slice("bn mean")?;
        let var = r.f32_slice("bn var")?;
        if mean.len() != network.running[i].mean.len() {
            return Err(BinetError::InvalidModel("batch-norm length mismatch".into()));
        }
        network.running[i].mean = mean;
        network.running[i].var = var;
    }

    let n_bin = r.u64("estimator count")? as usize;
    if n_bin != network.bin_states.len() {
        return Err(BinetError::InvalidModel("estimator state count mismatch".into()));
    }
    for i in 0..n_bin {
        let t = r.f64("t")?;
        let k = r.f64("k")?;
        let epoch_i = r.u64("epoch_i")? as usize;
        let total_n = r.u64("total_n")? as usize;
        let epsilon = r.f64("epsilon")?;
        let t_min = r.f64("t_min")?;
        let t_max = r.f64("t_max")?;
        network.bin_states[i].estimator =
            EstimatorState { t, k, epoch_i, total_n, epsilon, t_min, t_max };
    }

    Ok(Checkpoint { network, optimizer, epoch })
}

/// Write a checkpoint atomically (temp file + rename).
pub fn save_checkpoint(
    path: &Path,
    net: &Network,
    opt: &SgdMomentum,
    epoch: usize,
) -> Result<()> {
    let bytes = serialize_checkpoint(net, opt, epoch);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    deserialize_checkpoint(&bytes)
}
