use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::softmax;
use super::ops::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool2d_backward,
    maxpool2d_forward, same_pool_geometry,
};
use super::{shape_err, CnnError, Real, Tensor};
use crate::spectrogram::{Label, Spectrogram};

pub const CLASS_OTHER: usize = 0;
pub const CLASS_DRUMMING: usize = 1;

pub const REFERENCE_INPUT_SHAPE: [usize; 3] = [600, 7, 1];
pub const REFERENCE_PARAM_COUNTS: [usize; 11] = [0, 40, 0, 296, 0, 1168, 0, 0, 0, 11808, 66];
pub const REFERENCE_TOTAL_PARAMS: usize = 13_378;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Multiplies by `scale`; the input already carries the channel axis.
    Rescale { scale: f64 },
    Conv2d {
        filters: usize,
        kernel: [usize; 2],
        activation: Activation,
    },
    MaxPool2d { pool: [usize; 2], stride: [usize; 2] },
    Dropout { rate: f64 },
    Flatten,
    Dense { units: usize, activation: Activation },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Rescale { .. } => "rescaling",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "max_pooling2d",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, CnnError> {
        let spatial = || match *input {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(shape_err(format!("{} needs an HxWxC input, got {input:?}", self.name()))),
        };
        Ok(match self {
            LayerSpec::Rescale { .. } | LayerSpec::Dropout { .. } => input.to_vec(),
            LayerSpec::Conv2d { filters, kernel, .. } => {
                let (h, w, _) = spatial()?;
                if kernel[0] % 2 == 0 || kernel[1] % 2 == 0 || *filters == 0 {
                    return Err(shape_err("conv needs odd kernels and at least one filter"));
                }
                vec![h, w, *filters]
            }
            LayerSpec::MaxPool2d { pool, stride } => {
                let (h, w, c) = spatial()?;
                if pool.contains(&0) || stride.contains(&0) {
                    return Err(shape_err("pool and stride must be positive"));
                }
                vec![
                    same_pool_geometry(h, pool[0], stride[0]).0,
                    same_pool_geometry(w, pool[1], stride[1]).0,
                    c,
                ]
            }
            LayerSpec::Flatten => vec![input.iter().product()],
            LayerSpec::Dense { units, .. } => {
                if input.len() != 1 {
                    return Err(shape_err(format!("dense needs a flat input, got {input:?}")));
                }
                vec![*units]
            }
        })
    }

    fn param_shapes(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        match self {
            LayerSpec::Conv2d { filters, kernel, .. } => {
                Some((vec![kernel[0], kernel[1], input[2], *filters], vec![*filters]))
            }
            LayerSpec::Dense { units, .. } => Some((vec![input[0], *units], vec![*units])),
            _ => None,
        }
    }
}

/// Architecture: input shape plus ordered layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn reference(dropout_rate: f64) -> Self {
        let conv = |filters| LayerSpec::Conv2d {
            filters,
            kernel: [3, 3],
            activation: Activation::Relu,
        };
        let pool = LayerSpec::MaxPool2d {
            pool: [3, 3],
            stride: [3, 3],
        };
        Self {
            input_shape: REFERENCE_INPUT_SHAPE.to_vec(),
            layers: vec![
                LayerSpec::Rescale { scale: 1.0 },
                conv(4),
                pool.clone(),
                conv(8),
                pool.clone(),
                conv(16),
                pool,
                LayerSpec::Dropout { rate: dropout_rate },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 32,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    units: 2,
                    activation: Activation::Linear,
                },
            ],
        }
    }

    /// Output shape of every layer, in order.
    pub fn output_shapes(&self) -> Result<Vec<Vec<usize>>, CnnError> {
        let mut shape = self.input_shape.clone();
        self.layers
            .iter()
            .map(|l| {
                shape = l.output_shape(&shape)?;
                Ok(shape.clone())
            })
            .collect()
    }

    pub(crate) fn input_shapes(&self) -> Result<Vec<Vec<usize>>, CnnError> {
        let mut shapes = vec![self.input_shape.clone()];
        shapes.extend(self.output_shapes()?);
        shapes.pop();
        Ok(shapes)
    }

    /// Same architecture ignoring dropout rates.
    pub fn same_topology(&self, other: &ModelSpec) -> bool {
        let strip = |s: &ModelSpec| {
            s.layers
                .iter()
                .map(|l| match l {
                    LayerSpec::Dropout { .. } => LayerSpec::Dropout { rate: 0.0 },
                    other => other.clone(),
                })
                .collect::<Vec<_>>()
        };
        self.input_shape == other.input_shape && strip(self) == strip(other)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Params<T> {
    pub fn count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Per-layer parameter gradients, `None` for parameterless layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Option<Params<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a, b) {
                a.weights.add_assign(&b.weights);
                a.bias.add_assign(&b.bias);
            }
        }
    }

    pub fn scale(&mut self, k: T) {
        for p in self.layers.iter_mut().flatten() {
            p.weights.scale(k);
            p.bias.scale(k);
        }
    }

    /// All gradient values in declaration order (weights then bias per layer).
    pub fn flatten(&self) -> Vec<T> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|p| p.weights.data().iter().chain(p.bias.data()).copied())
            .collect()
    }
}

/// Explicit dropout keep-masks (already scaled by `1 / (1 - rate)`), one per
/// dropout layer. Absent masks mean identity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DropoutMasks<T> {
    pub layers: Vec<Option<Vec<T>>>,
}

impl<T: Real> DropoutMasks<T> {
    pub fn none() -> Self {
        Self { layers: Vec::new() }
    }

    fn get(&self, layer: usize) -> Option<&[T]> {
        self.layers.get(layer).and_then(|m| m.as_deref())
    }
}

/// Activations recorded by a training forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    /// `activations[i]` is the input of layer `i`; the last entry is the logits.
    pub activations: Vec<Tensor<T>>,
    pool_argmax: Vec<Option<Vec<usize>>>,
    masks: DropoutMasks<T>,
}

impl<T: Real> Trace<T> {
    pub fn logits(&self) -> &[T] {
        self.activations.last().expect("trace has output").data()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: Label,
    /// Probability of `class`.
    pub probability: f64,
    pub p_drumming: f64,
}

/// A sequential model assembled from the six supported layer types.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    spec: ModelSpec,
    params: Vec<Option<Params<T>>>,
}

/// The reference drumming classifier with dropout 0.2 and seeded
/// Glorot-uniform weights.
pub fn build_reference_model(seed: u64) -> Model<f32> {
    build_reference_model_with_dropout(seed, 0.2)
}

pub fn build_reference_model_with_dropout(seed: u64, dropout_rate: f64) -> Model<f32> {
    Model::new(ModelSpec::reference(dropout_rate), seed).expect("reference spec is valid")
}

fn activate<T: Real>(act: Activation, data: &mut [T]) {
    if act == Activation::Relu {
        for v in data {
            if *v < T::ZERO {
                *v = T::ZERO;
            }
        }
    }
}

fn activation_backward<T: Real>(act: Activation, output: &[T], grad: &mut [T]) {
    if act == Activation::Relu {
        for (g, &y) in grad.iter_mut().zip(output) {
            if y <= T::ZERO {
                *g = T::ZERO;
            }
        }
    }
}

impl<T: Real> Model<T> {
    /// Glorot-uniform weights and zero biases from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, CnnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = spec.input_shapes()?;
        let params = spec
            .layers
            .iter()
            .zip(&inputs)
            .map(|(layer, input)| {
                layer.param_shapes(input).map(|(ws, bs)| {
                    let (fan_in, fan_out) = match ws.as_slice() {
                        [kh, kw, c, f] => (kh * kw * c, kh * kw * f),
                        [n, m] => (*n, *m),
                        _ => unreachable!(),
                    };
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let n = ws.iter().product();
                    let data = (0..n).map(|_| T::from_f64(rng.random_range(-limit..limit))).collect();
                    Params {
                        weights: Tensor::new(ws, data).expect("shape"),
                        bias: Tensor::zeros(&bs),
                    }
                })
            })
            .collect();
        Ok(Self { spec, params })
    }

    pub fn from_parts(spec: ModelSpec, params: Vec<Option<Params<T>>>) -> Result<Self, CnnError> {
        let inputs = spec.input_shapes()?;
        if params.len() != spec.layers.len() {
            return Err(CnnError::ArchitectureMismatch("parameter list length".into()));
        }
        for ((layer, input), p) in spec.layers.iter().zip(&inputs).zip(&params) {
            match (layer.param_shapes(input), p) {
                (None, None) => {}
                (Some((ws, bs)), Some(p)) if p.weights.shape() == ws && p.bias.shape() == bs => {}
                _ => {
                    return Err(CnnError::ArchitectureMismatch(format!(
                        "parameters do not fit layer {}",
                        layer.name()
                    )))
                }
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Option<Params<T>>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Option<Params<T>>] {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            params: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| Params {
                        weights: p.weights.cast(),
                        bias: p.bias.cast(),
                    })
                })
                .collect(),
        }
    }

    pub fn set_dropout_rate(&mut self, rate: f64) {
        for l in &mut self.spec.layers {
            if let LayerSpec::Dropout { rate: r } = l {
                *r = rate;
            }
        }
    }

    pub fn param_counts(&self) -> Vec<usize> {
        self.params.iter().map(|p| p.as_ref().map_or(0, Params::count)).collect()
    }

    pub fn total_params(&self) -> usize {
        self.param_counts().iter().sum()
    }

    pub fn output_shapes(&self) -> Vec<Vec<usize>> {
        self.spec.output_shapes().expect("validated at construction")
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            layers: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| Params {
                        weights: Tensor::zeros(p.weights.shape()),
                        bias: Tensor::zeros(p.bias.shape()),
                    })
                })
                .collect(),
        }
    }

    /// Fresh Bernoulli keep-masks for every dropout layer.
    pub fn sample_dropout_masks<R: Rng>(&self, rng: &mut R) -> DropoutMasks<T> {
        let inputs = self.spec.input_shapes().expect("validated");
        DropoutMasks {
            layers: self
                .spec
                .layers
                .iter()
                .zip(&inputs)
                .map(|(l, shape)| match l {
                    LayerSpec::Dropout { rate } if *rate > 0.0 => {
                        let keep = T::from_f64(1.0 / (1.0 - rate));
                        let n: usize = shape.iter().product();
                        Some(
                            (0..n)
                                .map(|_| if rng.random::<f64>() < *rate { T::ZERO } else { keep })
                                .collect(),
                        )
                    }
                    _ => None,
                })
                .collect(),
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(), CnnError> {
        if input.shape() != self.spec.input_shape.as_slice() {
            return Err(shape_err(format!(
                "model input is {:?}, got {:?}",
                self.spec.input_shape,
                input.shape()
            )));
        }
        Ok(())
    }

    fn layer_forward(
        &self,
        i: usize,
        x: &Tensor<T>,
        mask: Option<&[T]>,
    ) -> Result<(Tensor<T>, Option<Vec<usize>>), CnnError> {
        let params = self.params[i].as_ref();
        Ok(match &self.spec.layers[i] {
            LayerSpec::Rescale { scale } => {
                let k = T::from_f64(*scale);
                (x.map(|v| v * k), None)
            }
            LayerSpec::Conv2d { activation, .. } => {
                let p = params.expect("conv params");
                let mut y = conv2d_forward(x, &p.weights, &p.bias)?;
                activate(*activation, y.data_mut());
                (y, None)
            }
            LayerSpec::MaxPool2d { pool, stride } => {
                let (y, arg) = maxpool2d_forward(x, *pool, *stride)?;
                (y, Some(arg))
            }
            LayerSpec::Dropout { .. } => match mask {
                Some(m) => {
                    let mut y = x.clone();
                    for (v, &k) in y.data_mut().iter_mut().zip(m) {
                        *v *= k;
                    }
                    (y, None)
                }
                None => (x.clone(), None),
            },
            LayerSpec::Flatten => (x.clone().reshape(vec![x.len()])?, None),
            LayerSpec::Dense { activation, units } => {
                let p = params.expect("dense params");
                let mut y = dense_forward(x.data(), &p.weights, &p.bias)?;
                activate(*activation, &mut y);
                (Tensor::new(vec![*units], y)?, None)
            }
        })
    }

    /// Inference forward pass (dropout disabled); returns logits.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Vec<T>, CnnError> {
        self.check_input(input)?;
        let mut x = input.clone();
        for i in 0..self.spec.layers.len() {
            x = self.layer_forward(i, &x, None)?.0;
        }
        Ok(x.into_data())
    }

    /// Forward pass with explicit dropout masks, keeping what backprop needs.
    pub fn forward_train(&self, input: &Tensor<T>, masks: &DropoutMasks<T>) -> Result<Trace<T>, CnnError> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.spec.layers.len() + 1);
        let mut pool_argmax = Vec::with_capacity(self.spec.layers.len());
        activations.push(input.clone());
        for i in 0..self.spec.layers.len() {
            let (y, arg) = self.layer_forward(i, activations.last().expect("input"), masks.get(i))?;
            activations.push(y);
            pool_argmax.push(arg);
        }
        Ok(Trace {
            activations,
            pool_argmax,
            masks: masks.clone(),
        })
    }

    /// Reverse-mode gradients of a scalar loss given `d loss / d logits`.
    pub fn backward(&self, trace: &Trace<T>, grad_logits: &[T]) -> Result<Gradients<T>, CnnError> {
        let mut grads = Gradients {
            layers: vec![None; self.spec.layers.len()],
        };
        let out_shape = trace.activations.last().expect("output").shape().to_vec();
        let mut g = Tensor::new(out_shape, grad_logits.to_vec())?;
        for i in (0..self.spec.layers.len()).rev() {
            let x = &trace.activations[i];
            let y = &trace.activations[i + 1];
            g = match &self.spec.layers[i] {
                LayerSpec::Rescale { scale } => {
                    let k = T::from_f64(*scale);
                    g.map(|v| v * k)
                }
                LayerSpec::Conv2d { activation, .. } => {
                    let p = self.params[i].as_ref().expect("conv params");
                    activation_backward(*activation, y.data(), g.data_mut());
                    let (dx, dw, db) = conv2d_backward(x, &p.weights, &g)?;
                    grads.layers[i] = Some(Params { weights: dw, bias: db });
                    dx
                }
                LayerSpec::MaxPool2d { .. } => {
                    let arg = trace.pool_argmax[i].as_ref().expect("pool argmax");
                    maxpool2d_backward(x.shape(), arg, &g)?
                }
                LayerSpec::Dropout { .. } => {
                    if let Some(m) = trace.masks.get(i) {
                        for (v, &k) in g.data_mut().iter_mut().zip(m) {
                            *v *= k;
                        }
                    }
                    g
                }
                LayerSpec::Flatten => g.reshape(x.shape().to_vec())?,
                LayerSpec::Dense { activation, .. } => {
                    let p = self.params[i].as_ref().expect("dense params");
                    activation_backward(*activation, y.data(), g.data_mut());
                    let (dx, dw, db) = dense_backward(x.data(), &p.weights, g.data())?;
                    grads.layers[i] = Some(Params { weights: dw, bias: db });
                    Tensor::new(x.shape().to_vec(), dx)?
                }
            };
        }
        Ok(grads)
    }

    pub fn predict_tensor(&self, input: &Tensor<T>) -> Result<Prediction, CnnError> {
        let logits: Vec<f64> = self.forward(input)?.iter().map(|v| v.to_f64()).collect();
        if logits.len() != 2 {
            return Err(shape_err(format!("classifier head must have 2 logits, got {}", logits.len())));
        }
        let probs = softmax(&logits);
        let p_drumming = probs[CLASS_DRUMMING];
        let (class, probability) = if p_drumming > probs[CLASS_OTHER] {
            (Label::Drumming, p_drumming)
        } else {
            (Label::Other, probs[CLASS_OTHER])
        };
        Ok(Prediction {
            class,
            probability,
            p_drumming,
        })
    }

    /// Classifies one normalized spectrogram.
    pub fn predict(&self, s: &Spectrogram) -> Result<Prediction, CnnError> {
        self.predict_tensor(&spectrogram_tensor(s))
    }
}

/// Views a 600×7 spectrogram as a (600, 7, 1) input tensor.
pub fn spectrogram_tensor<T: Real>(s: &Spectrogram) -> Tensor<T> {
    Tensor::new(
        REFERENCE_INPUT_SHAPE.to_vec(),
        s.values.as_slice().iter().map(|&v| T::from_f64(f64::from(v))).collect(),
    )
    .expect("spectrogram is 600x7")
}
