//! Runtime network: parameters, running statistics, per-layer estimator
//! states, and the forward pass that wires binarization into the graph.

use crate::autodiff::{Tape, Var};
use crate::dte::{estimator_derivative, ClampMode, EstimatorMode, EstimatorState};
use crate::error::{BinetError, Result};
use crate::imb::{
    binarize_activations, binarize_weights, binarize_weights_vanilla, pow2, sign_value,
    standardize_balance, QuantizedWeights,
};
use crate::kernels::BnRunningStats;
use crate::model::{Downsample, LayerSpec, ModelSpec};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Forward-path weight quantization scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binarizer {
    /// Standardize-balance, sign, integer shift scalar.
    Imb,
    /// sign of the raw weights, no standardization, no scale.
    Vanilla,
}

impl Binarizer {
    pub fn as_str(&self) -> &'static str {
        match self {
            Binarizer::Imb => "imb",
            Binarizer::Vanilla => "vanilla",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "imb" => Ok(Binarizer::Imb),
            "vanilla" => Ok(Binarizer::Vanilla),
            _ => Err(BinetError::InvalidArgument(format!(
                "unknown binarizer {s:?} (imb|vanilla)"
            ))),
        }
    }
}

enum Rt {
    Conv { param: usize, stride: usize, padding: usize, bin: Option<usize> },
    Linear { param: usize, bin: Option<usize> },
    BatchNorm { gamma: usize, beta: usize, running: usize },
    Hardtanh,
    MaxPool { kernel: usize },
    GlobalAvgPool,
    Flatten,
    ShortcutSave,
    ShortcutAdd { downsample: Option<Downsample> },
}

/// Per-binarized-layer training state.
pub struct BinLayerState {
    pub name: String,
    /// Index of the layer's weight in the parameter list.
    pub param: usize,
    pub estimator: EstimatorState,
    /// Signs at the end of the previous epoch, for the flip-rate metric.
    pub prev_signs: Option<Vec<f32>>,
}

pub struct ForwardPass {
    pub logits: Var,
    /// One leaf per parameter, aligned with `Network::params`.
    pub param_leaves: Vec<Var>,
}

pub struct Network {
    pub spec: ModelSpec,
    pub binarizer: Binarizer,
    pub estimator_mode: EstimatorMode,
    rt: Vec<Rt>,
    pub params: Vec<Tensor>,
    pub param_names: Vec<String>,
    pub running: Vec<BnRunningStats>,
    pub bin_states: Vec<BinLayerState>,
}

impl Network {
    /// Build a network with freshly initialized weights (He init for
    /// conv/linear, identity affine for batch norm).
    pub fn new(spec: ModelSpec, binarizer: Binarizer, seed: u64) -> Result<Network> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut param_names = Vec::new();
        let mut running = Vec::new();
        let mut bin_states = Vec::new();
        let mut rt = Vec::new();
        let bin_names = spec.binarized_layer_names();
        let layout = spec.parameter_layout();
        let mut layout_idx = 0;
        let mut bin_idx = 0;

        for layer in &spec.layers {
            match layer {
                LayerSpec::Conv2d { in_ch, kernel, stride, padding, binarize, .. } => {
                    let (name, shape) = &layout[layout_idx];
                    let fan_in = in_ch * kernel * kernel;
                    let std = (2.0 / fan_in as f32).sqrt();
                    params.push(Tensor::randn(shape, std, &mut rng));
                    param_names.push(name.clone());
                    let bin = if *binarize {
                        bin_states.push(BinLayerState {
                            name: bin_names[bin_idx].clone(),
                            param: layout_idx,
                            estimator: EstimatorState::from_t(1.0, 0, 1, 0.1, 0.1, 10.0),
                            prev_signs: None,
                        });
                        bin_idx += 1;
                        Some(bin_states.len() - 1)
                    } else {
                        None
                    };
                    rt.push(Rt::Conv { param: layout_idx, stride: *stride, padding: *padding, bin });
                    layout_idx += 1;
                }
                LayerSpec::Linear { in_features, binarize, .. } => {
                    let (name, shape) = &layout[layout_idx];
                    let std = (2.0 / *in_features as f32).sqrt();
                    params.push(Tensor::randn(shape, std, &mut rng));
                    param_names.push(name.clone());
                    let bin = if *binarize {
                        bin_states.push(BinLayerState {
                            name: bin_names[bin_idx].clone(),
                            param: layout_idx,
                            estimator: EstimatorState::from_t(1.0, 0, 1, 0.1, 0.1, 10.0),
                            prev_signs: None,
                        });
                        bin_idx += 1;
                        Some(bin_states.len() - 1)
                    } else {
                        None
                    };
                    rt.push(Rt::Linear { param: layout_idx, bin });
                    layout_idx += 1;
                }
                LayerSpec::BatchNorm { features } => {
                    let gamma_idx = layout_idx;
                    params.push(Tensor::ones(&[*features]));
                    param_names.push(layout[layout_idx].0.clone());
                    layout_idx += 1;
                    params.push(Tensor::zeros(&[*features]));
                    param_names.push(layout[layout_idx].0.clone());
                    layout_idx += 1;
                    running.push(BnRunningStats::new(*features));
                    rt.push(Rt::BatchNorm {
                        gamma: gamma_idx,
                        beta: gamma_idx + 1,
                        running: running.len() - 1,
                    });
                }
                LayerSpec::Hardtanh => rt.push(Rt::Hardtanh),
                LayerSpec::MaxPool2d { kernel } => rt.push(Rt::MaxPool { kernel: *kernel }),
                LayerSpec::GlobalAvgPool => rt.push(Rt::GlobalAvgPool),
                LayerSpec::Flatten => rt.push(Rt::Flatten),
                LayerSpec::ShortcutSave => rt.push(Rt::ShortcutSave),
                LayerSpec::ShortcutAdd { downsample } => {
                    rt.push(Rt::ShortcutAdd { downsample: *downsample })
                }
            }
        }

        Ok(Network {
            spec,
            binarizer,
            estimator_mode: EstimatorMode::Dte,
            rt,
            params,
            param_names,
            running,
            bin_states,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params.iter().map(|p| p.numel()).collect()
    }

    /// Quantize one binarized layer's current weights (the export path).
    /// Training never consumes this cache; the forward pass recomputes
    /// sign/shift from the live weights every step.
    pub fn quantize_layer(&self, bin_idx: usize) -> Result<QuantizedWeights> {
        let w = &self.params[self.bin_states[bin_idx].param];
        match self.binarizer {
            Binarizer::Imb => binarize_weights(w),
            Binarizer::Vanilla => Ok(binarize_weights_vanilla(w)),
        }
    }

    /// The tensor the estimator sees for a binarized layer: standardized
    /// weights under IMB, raw weights under the vanilla baseline.
    pub fn estimator_basis(&self, bin_idx: usize) -> Result<Tensor> {
        let w = &self.params[self.bin_states[bin_idx].param];
        match self.binarizer {
            Binarizer::Imb => standardize_balance(w),
            Binarizer::Vanilla => Ok(w.clone()),
        }
    }

    /// Finalize per-layer estimator states for one epoch from the current
    /// weight distributions.
    pub fn update_estimators(
        &mut self,
        epoch: usize,
        total_epochs: usize,
        epsilon: f64,
        t_min: f64,
        t_max: f64,
        clamp: ClampMode,
    ) -> Result<()> {
        for i in 0..self.bin_states.len() {
            let state = match self.estimator_mode {
                EstimatorMode::Dte => {
                    let basis = self.estimator_basis(i)?;
                    EstimatorState::for_epoch(
                        epoch,
                        total_epochs,
                        epsilon,
                        t_min,
                        t_max,
                        &basis,
                        clamp,
                    )?
                }
                EstimatorMode::Ede => EstimatorState::for_epoch_unclamped(
                    epoch,
                    total_epochs,
                    epsilon,
                    t_min,
                    t_max,
                )?,
                EstimatorMode::Clip | EstimatorMode::Identity => {
                    EstimatorState::from_t(1.0, epoch, total_epochs, epsilon, t_min, t_max)
                }
            };
            self.bin_states[i].estimator = state;
        }
        Ok(())
    }

    /// Build the forward graph for a batch. In training mode batch norm uses
    /// batch statistics and updates running stats; binarization always
    /// recomputes sign/shift from the live weights.
    pub fn forward(&mut self, tape: &mut Tape, input: Tensor, training: bool) -> Result<ForwardPass> {
        let shape = input.shape().to_vec();
        if shape.len() != 4
            || shape[1] != self.spec.input_shape[0]
            || shape[2] != self.spec.input_shape[1]
            || shape[3] != self.spec.input_shape[2]
        {
            return Err(BinetError::ShapeMismatch(format!(
                "input {:?} does not match model input {:?}",
                shape, self.spec.input_shape
            )));
        }
        let param_leaves: Vec<Var> =
            self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let mut x = tape.leaf(input);
        let mut shortcuts: Vec<Var> = Vec::new();

        for layer in &self.rt {
            x = match layer {
                Rt::Conv { param, stride, padding, bin } => {
                    let (s, p) = ((*stride, *stride), (*padding, *padding));
                    match bin {
                        None => tape.conv2d(x, param_leaves[*param], s, p)?,
                        Some(bi) => {
                            let st = &self.bin_states[*bi];
                            let (bw, shift) = binarize_on_tape(
                                tape,
                                param_leaves[*param],
                                &self.params[*param],
                                self.binarizer,
                                self.estimator_mode,
                                &st.estimator,
                            )?;
                            let qa = binarize_input_on_tape(
                                tape,
                                x,
                                self.estimator_mode,
                                &st.estimator,
                            )?;
                            let y = tape.conv2d(qa, bw, s, p)?;
                            if shift == 0 {
                                y
                            } else {
                                tape.scale(y, pow2(shift))
                            }
                        }
                    }
                }
                Rt::Linear { param, bin } => match bin {
                    None => tape.linear(x, param_leaves[*param])?,
                    Some(bi) => {
                        let st = &self.bin_states[*bi];
                        let (bw, shift) = binarize_on_tape(
                            tape,
                            param_leaves[*param],
                            &self.params[*param],
                            self.binarizer,
                            self.estimator_mode,
                            &st.estimator,
                        )?;
                        let qa =
                            binarize_input_on_tape(tape, x, self.estimator_mode, &st.estimator)?;
                        let y = tape.linear(qa, bw)?;
                        if shift == 0 {
                            y
                        } else {
                            tape.scale(y, pow2(shift))
                        }
                    }
                },
                Rt::BatchNorm { gamma, beta, running } => tape.batch_norm(
                    x,
                    param_leaves[*gamma],
                    param_leaves[*beta],
                    &mut self.running[*running],
                    training,
                    0.1,
                    1e-5,
                )?,
                Rt::Hardtanh => tape.hardtanh(x),
                Rt::MaxPool { kernel } => tape.max_pool2d(x, *kernel)?,
                Rt::GlobalAvgPool => tape.global_avg_pool(x)?,
                Rt::Flatten => tape.flatten(x)?,
                Rt::ShortcutSave => {
                    shortcuts.push(x);
                    x
                }
                Rt::ShortcutAdd { downsample } => {
                    let saved = shortcuts
                        .pop()
                        .ok_or_else(|| BinetError::InvalidModel("shortcut underflow".into()))?;
                    let saved = match downsample {
                        Some(d) => {
                            let sub = tape.subsample(saved, d.stride)?;
                            if d.pad_channels > 0 {
                                tape.channel_pad(sub, d.pad_channels)?
                            } else {
                                sub
                            }
                        }
                        None => saved,
                    };
                    tape.add(x, saved)?
                }
            };
        }
        Ok(ForwardPass { logits: x, param_leaves })
    }
}

/// Put the binarized weight on the tape: forward value B_w = sign tensor,
/// backward multiplier g'(basis). The 2^s scale is applied by the caller to
/// the conv output, so the gradient reaching the weight leaf is
/// dL/dQ_w · g'(ŵ_std) · 2^s.
fn binarize_on_tape(
    tape: &mut Tape,
    weight_leaf: Var,
    weight: &Tensor,
    binarizer: Binarizer,
    mode: EstimatorMode,
    state: &EstimatorState,
) -> Result<(Var, i32)> {
    let (signs, shift, basis) = match binarizer {
        Binarizer::Imb => {
            let q = binarize_weights(weight)?;
            let basis = standardize_balance(weight)?;
            (q.signs, q.shift, basis)
        }
        Binarizer::Vanilla => (weight.map(sign_value), 0, weight.clone()),
    };
    let deriv = estimator_derivative(&basis, mode, state);
    let bw = tape.custom_node(weight_leaf, signs, deriv.into_data())?;
    Ok((bw, shift))
}

/// Q_a = sign(a) with backward multiplier g'(a).
fn binarize_input_on_tape(
    tape: &mut Tape,
    input: Var,
    mode: EstimatorMode,
    state: &EstimatorState,
) -> Result<Var> {
    let value = binarize_activations(tape.value(input));
    let deriv = estimator_derivative(tape.value(input), mode, state);
    tape.custom_node(input, value, deriv.into_data())
}
