//! Model descriptions and the built-in zoo.
//!
//! A model is an ordered list of layer descriptors plus input geometry and
//! class count. Binarized conv/linear layers binarize their own input and
//! weights in the forward pass; the first and last parameterized layers stay
//! full precision.

mod checkpoint;
mod net;
mod train;

pub use checkpoint::{
    deserialize_checkpoint, load_checkpoint, save_checkpoint, serialize_checkpoint, Checkpoint,
};
pub use net::{Binarizer, ForwardPass, Network};
pub use train::{
    evaluate, sign_flip_rate, train, Dataset, LayerMetrics, MetricsRecord, TrainConfig,
};

use crate::error::{BinetError, Result};

/// Option-A style shortcut projection: spatial subsample plus zero channel
/// padding; parameter-free and full precision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Downsample {
    pub stride: usize,
    pub pad_channels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        binarize: bool,
    },
    Linear {
        in_features: usize,
        out_features: usize,
        binarize: bool,
    },
    BatchNorm {
        features: usize,
    },
    Hardtanh,
    MaxPool2d {
        kernel: usize,
    },
    GlobalAvgPool,
    Flatten,
    /// Push the current activation onto the shortcut stack.
    ShortcutSave,
    /// Pop the stack and add it (optionally downsampled) to the current
    /// activation.
    ShortcutAdd {
        downsample: Option<Downsample>,
    },
}

impl LayerSpec {
    pub fn is_parameterized(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Linear { .. })
    }

    pub fn is_binarized(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv2d { binarize: true, .. } | LayerSpec::Linear { binarize: true, .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    /// Input geometry [C, H, W].
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
}

/// Operation-count geometry of one parameterized layer.
#[derive(Clone, Debug)]
pub struct ParamLayerGeometry {
    pub name: String,
    pub binarized: bool,
    /// out-pixels × out-channels.
    pub c1: u64,
    /// kernel-area × in-channels.
    pub c2: u64,
}

/// Activation shape while walking the layer list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Shape {
    Spatial(usize, usize, usize),
    Flat(usize),
}

impl ModelSpec {
    /// Structural validation: first/last parameterized layers full precision,
    /// balanced shortcut stack, and end-to-end shape consistency down to the
    /// class count.
    pub fn validate(&self) -> Result<()> {
        if self.input_shape.len() != 3 {
            return Err(BinetError::InvalidModel(format!(
                "input_shape must be [C,H,W], got {:?}",
                self.input_shape
            )));
        }
        let params: Vec<&LayerSpec> =
            self.layers.iter().filter(|l| l.is_parameterized()).collect();
        if params.is_empty() {
            return Err(BinetError::InvalidModel("model has no parameterized layers".into()));
        }
        if params[0].is_binarized() || params[params.len() - 1].is_binarized() {
            return Err(BinetError::InvalidModel(
                "first and last parameterized layers must be full precision".into(),
            ));
        }

        let mut shape = Shape::Spatial(self.input_shape[0], self.input_shape[1], self.input_shape[2]);
        let mut stack: Vec<Shape> = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            shape = step_shape(shape, layer, &mut stack)
                .map_err(|e| BinetError::InvalidModel(format!("layer {idx}: {e}")))?;
        }
        if !stack.is_empty() {
            return Err(BinetError::InvalidModel("unbalanced shortcut stack".into()));
        }
        match shape {
            Shape::Flat(f) if f == self.num_classes => Ok(()),
            other => Err(BinetError::InvalidModel(format!(
                "model output is {other:?}, expected {} logits",
                self.num_classes
            ))),
        }
    }

    /// Names and shapes of every trainable parameter, in creation order.
    pub fn parameter_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut conv_idx = 0;
        let mut fc_idx = 0;
        let mut bn_idx = 0;
        for layer in &self.layers {
            match layer {
                LayerSpec::Conv2d { in_ch, out_ch, kernel, binarize, .. } => {
                    let tag = if *binarize { "bconv" } else { "conv" };
                    out.push((
                        format!("{tag}{conv_idx}.weight"),
                        vec![*out_ch, *in_ch, *kernel, *kernel],
                    ));
                    conv_idx += 1;
                }
                LayerSpec::Linear { in_features, out_features, binarize } => {
                    let tag = if *binarize { "bfc" } else { "fc" };
                    out.push((format!("{tag}{fc_idx}.weight"), vec![*out_features, *in_features]));
                    fc_idx += 1;
                }
                LayerSpec::BatchNorm { features } => {
                    out.push((format!("bn{bn_idx}.gamma"), vec![*features]));
                    out.push((format!("bn{bn_idx}.beta"), vec![*features]));
                    bn_idx += 1;
                }
                _ => {}
            }
        }
        out
    }

    /// Per parameterized layer: C1 = out-pixels × out-channels and
    /// C2 = kernel-area × in-channels (for linear layers C1 = out features,
    /// C2 = in features), plus whether the layer is binarized. Follows the
    /// same shape walk as validation.
    pub fn param_layer_geometries(&self) -> Result<Vec<ParamLayerGeometry>> {
        let mut out = Vec::new();
        let mut shape =
            Shape::Spatial(self.input_shape[0], self.input_shape[1], self.input_shape[2]);
        let mut stack = Vec::new();
        let mut conv_idx = 0;
        let mut fc_idx = 0;
        for layer in &self.layers {
            let next = step_shape(shape, layer, &mut stack)?;
            match layer {
                LayerSpec::Conv2d { in_ch, out_ch, kernel, binarize, .. } => {
                    let (oh, ow) = match next {
                        Shape::Spatial(_, h, w) => (h, w),
                        Shape::Flat(_) => unreachable!("conv output is spatial"),
                    };
                    let tag = if *binarize { "bconv" } else { "conv" };
                    out.push(ParamLayerGeometry {
                        name: format!("{tag}{conv_idx}"),
                        binarized: *binarize,
                        c1: (oh * ow * out_ch) as u64,
                        c2: (kernel * kernel * in_ch) as u64,
                    });
                    conv_idx += 1;
                }
                LayerSpec::Linear { in_features, out_features, binarize } => {
                    let tag = if *binarize { "bfc" } else { "fc" };
                    out.push(ParamLayerGeometry {
                        name: format!("{tag}{fc_idx}"),
                        binarized: *binarize,
                        c1: *out_features as u64,
                        c2: *in_features as u64,
                    });
                    fc_idx += 1;
                }
                _ => {}
            }
            shape = next;
        }
        Ok(out)
    }

    /// Names of the binarized parameterized layers, in order.
    pub fn binarized_layer_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut conv_idx = 0;
        let mut fc_idx = 0;
        for layer in &self.layers {
            match layer {
                LayerSpec::Conv2d { binarize, .. } => {
                    if *binarize {
                        out.push(format!("bconv{conv_idx}"));
                    }
                    conv_idx += 1;
                }
                LayerSpec::Linear { binarize, .. } => {
                    if *binarize {
                        out.push(format!("bfc{fc_idx}"));
                    }
                    fc_idx += 1;
                }
                _ => {}
            }
        }
        out
    }
}

fn step_shape(shape: Shape, layer: &LayerSpec, stack: &mut Vec<Shape>) -> Result<Shape> {
    let err = |msg: String| Err(BinetError::InvalidModel(msg));
    match layer {
        LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, padding, .. } => match shape {
            Shape::Spatial(c, h, w) => {
                if c != *in_ch {
                    return err(format!("conv expects {in_ch} channels, input has {c}"));
                }
                if h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                    return err(format!("kernel {kernel} exceeds padded input {h}x{w}"));
                }
                let oh = (h + 2 * padding - kernel) / stride + 1;
                let ow = (w + 2 * padding - kernel) / stride + 1;
                Ok(Shape::Spatial(*out_ch, oh, ow))
            }
            _ => err("conv on flat activation".into()),
        },
        LayerSpec::Linear { in_features, out_features, .. } => match shape {
            Shape::Flat(f) => {
                if f != *in_features {
                    return err(format!("linear expects {in_features} features, input has {f}"));
                }
                Ok(Shape::Flat(*out_features))
            }
            _ => err("linear on spatial activation (missing flatten?)".into()),
        },
        LayerSpec::BatchNorm { features } => {
            let c = match shape {
                Shape::Spatial(c, _, _) => c,
                Shape::Flat(f) => f,
            };
            if c != *features {
                return err(format!("batch_norm over {features} features, input has {c}"));
            }
            Ok(shape)
        }
        LayerSpec::Hardtanh => Ok(shape),
        LayerSpec::MaxPool2d { kernel } => match shape {
            Shape::Spatial(c, h, w) => {
                if *kernel == 0 || h % kernel != 0 || w % kernel != 0 {
                    return err(format!("pool kernel {kernel} must divide {h}x{w}"));
                }
                Ok(Shape::Spatial(c, h / kernel, w / kernel))
            }
            _ => err("max_pool on flat activation".into()),
        },
        LayerSpec::GlobalAvgPool => match shape {
            Shape::Spatial(c, _, _) => Ok(Shape::Flat(c)),
            _ => err("global_avg_pool on flat activation".into()),
        },
        LayerSpec::Flatten => match shape {
            Shape::Spatial(c, h, w) => Ok(Shape::Flat(c * h * w)),
            Shape::Flat(f) => Ok(Shape::Flat(f)),
        },
        LayerSpec::ShortcutSave => {
            stack.push(shape);
            Ok(shape)
        }
        LayerSpec::ShortcutAdd { downsample } => {
            let saved = match stack.pop() {
                Some(s) => s,
                None => return err("shortcut add without save".into()),
            };
            let saved = match (saved, downsample) {
                (Shape::Spatial(c, h, w), Some(d)) => Shape::Spatial(
                    c + d.pad_channels,
                    h.div_ceil(d.stride),
                    w.div_ceil(d.stride),
                ),
                (s, None) => s,
                (Shape::Flat(_), Some(_)) => {
                    return err("downsample shortcut on flat activation".into())
                }
            };
            if saved != shape {
                return err(format!("shortcut shapes disagree: {saved:?} vs {shape:?}"));
            }
            Ok(shape)
        }
    }
}

// ── zoo ──────────────────────────────────────────────────────────────

/// Desk-scale 4-layer CNN: full-precision stem conv and classifier, two
/// binarized convs in between.
pub fn desk_cnn(in_ch: usize, height: usize, width: usize, num_classes: usize) -> ModelSpec {
    use LayerSpec::*;
    ModelSpec {
        name: "desk-cnn".into(),
        input_shape: vec![in_ch, height, width],
        num_classes,
        layers: vec![
            Conv2d { in_ch, out_ch: 8, kernel: 3, stride: 1, padding: 1, binarize: false },
            BatchNorm { features: 8 },
            Hardtanh,
            MaxPool2d { kernel: 2 },
            Conv2d { in_ch: 8, out_ch: 16, kernel: 3, stride: 1, padding: 1, binarize: true },
            BatchNorm { features: 16 },
            Hardtanh,
            MaxPool2d { kernel: 2 },
            Conv2d { in_ch: 16, out_ch: 32, kernel: 3, stride: 1, padding: 1, binarize: true },
            BatchNorm { features: 32 },
            Hardtanh,
            GlobalAvgPool,
            Linear { in_features: 32, out_features: num_classes, binarize: false },
        ],
    }
}

/// Small MLP with one binarized hidden layer, for low-dimensional synthetic
/// tasks.
pub fn binary_mlp(in_features: usize, hidden: usize, num_classes: usize) -> ModelSpec {
    use LayerSpec::*;
    ModelSpec {
        name: "binary-mlp".into(),
        input_shape: vec![in_features, 1, 1],
        num_classes,
        layers: vec![
            Flatten,
            Linear { in_features, out_features: hidden, binarize: false },
            BatchNorm { features: hidden },
            Hardtanh,
            Linear { in_features: hidden, out_features: hidden, binarize: true },
            BatchNorm { features: hidden },
            Hardtanh,
            Linear { in_features: hidden, out_features: num_classes, binarize: false },
        ],
    }
}

/// VGG-Small for 32×32 inputs: six convs, all binarized except the stem,
/// full-precision classifier.
pub fn vgg_small(in_ch: usize, num_classes: usize) -> ModelSpec {
    use LayerSpec::*;
    let conv = |ic: usize, oc: usize, bin: bool| Conv2d {
        in_ch: ic,
        out_ch: oc,
        kernel: 3,
        stride: 1,
        padding: 1,
        binarize: bin,
    };
    ModelSpec {
        name: "vgg-small".into(),
        input_shape: vec![in_ch, 32, 32],
        num_classes,
        layers: vec![
            conv(in_ch, 128, false),
            BatchNorm { features: 128 },
            Hardtanh,
            conv(128, 128, true),
            MaxPool2d { kernel: 2 },
            BatchNorm { features: 128 },
            Hardtanh,
            conv(128, 256, true),
            BatchNorm { features: 256 },
            Hardtanh,
            conv(256, 256, true),
            MaxPool2d { kernel: 2 },
            BatchNorm { features: 256 },
            Hardtanh,
            conv(256, 512, true),
            BatchNorm { features: 512 },
            Hardtanh,
            conv(512, 512, true),
            MaxPool2d { kernel: 2 },
            BatchNorm { features: 512 },
            Hardtanh,
            Flatten,
            Linear { in_features: 512 * 4 * 4, out_features: num_classes, binarize: false },
        ],
    }
}

/// ResNet-20 for 32×32 inputs with parameter-free full-precision shortcuts.
pub fn resnet20(in_ch: usize, num_classes: usize) -> ModelSpec {
    use LayerSpec::*;
    let mut layers = vec![
        Conv2d { in_ch, out_ch: 16, kernel: 3, stride: 1, padding: 1, binarize: false },
        BatchNorm { features: 16 },
        Hardtanh,
    ];
    let block = |layers: &mut Vec<LayerSpec>, ic: usize, oc: usize, stride: usize| {
        layers.push(ShortcutSave);
        layers.push(Conv2d { in_ch: ic, out_ch: oc, kernel: 3, stride, padding: 1, binarize: true });
        layers.push(BatchNorm { features: oc });
        layers.push(Hardtanh);
        layers.push(Conv2d { in_ch: oc, out_ch: oc, kernel: 3, stride: 1, padding: 1, binarize: true });
        layers.push(BatchNorm { features: oc });
        let downsample = if stride != 1 || ic != oc {
            Some(Downsample { stride, pad_channels: oc - ic })
        } else {
            None
        };
        layers.push(ShortcutAdd { downsample });
        layers.push(Hardtanh);
    };
    for (ic, oc, stride) in [(16, 16, 1), (16, 16, 1), (16, 16, 1)] {
        block(&mut layers, ic, oc, stride);
    }
    for (ic, oc, stride) in [(16, 32, 2), (32, 32, 1), (32, 32, 1)] {
        block(&mut layers, ic, oc, stride);
    }
    for (ic, oc, stride) in [(32, 64, 2), (64, 64, 1), (64, 64, 1)] {
        block(&mut layers, ic, oc, stride);
    }
    layers.push(GlobalAvgPool);
    layers.push(Linear { in_features: 64, out_features: num_classes, binarize: false });
    ModelSpec { name: "resnet-20".into(), input_shape: vec![in_ch, 32, 32], num_classes, layers }
}

/// Look up a zoo model by name for the given dataset geometry.
pub fn zoo_model(name: &str, input_shape: &[usize], num_classes: usize) -> Result<ModelSpec> {
    if input_shape.len() != 3 {
        return Err(BinetError::InvalidModel(format!(
            "dataset input shape must be [C,H,W], got {input_shape:?}"
        )));
    }
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    match name {
        "desk-cnn" => Ok(desk_cnn(c, h, w, num_classes)),
        "binary-mlp" => Ok(binary_mlp(c * h * w, 32, num_classes)),
        "vgg-small" => Ok(vgg_small(c, num_classes)),
        "resnet-20" => Ok(resnet20(c, num_classes)),
        _ => Err(BinetError::InvalidModel(format!(
            "unknown model {name:?} (desk-cnn|binary-mlp|vgg-small|resnet-20)"
        ))),
    }
}
