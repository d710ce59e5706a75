//! Model description, shape validation, JSON persistence and the forward
//! pass.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{conv1d_flat, dense_flat, leaky_relu_in_place, max_pool1d, softmax, Tensor1d};
use super::{ClassProbs, InferenceError, ModelError, AMPLITUDE_SCALE, SEGMENT_LEN};

/// One layer as stored in the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        /// `[out_channels][in_channels][kernel_size]`
        weights: Vec<Vec<Vec<f32>>>,
        bias: Vec<f32>,
    },
    LeakyRelu {
        alpha: f32,
    },
    MaxPool1d {
        size: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        out_dim: usize,
        /// `[out_dim][in_dim]`
        weights: Vec<Vec<f32>>,
        bias: Vec<f32>,
    },
    Softmax,
}

/// Serialized form of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_length: usize,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Map { channels: usize, length: usize },
    Flat(usize),
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shape::Map { channels, length } => write!(f, "{channels}x{length}"),
            Shape::Flat(n) => write!(f, "[{n}]"),
        }
    }
}

#[derive(Debug, Clone)]
enum Layer {
    Conv {
        weights: Vec<f32>,
        bias: Vec<f32>,
        kernel: usize,
        stride: usize,
    },
    LeakyRelu(f32),
    MaxPool {
        size: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        weights: Vec<f32>,
        bias: Vec<f32>,
    },
    Softmax,
}

/// A validated model. Shapes are checked once, when the model is built;
/// the forward pass cannot fail on shape grounds afterwards.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<Layer>,
    shapes: Vec<Shape>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

fn shape_err(layer: usize, message: String) -> ModelError {
    ModelError::Shape { layer, message }
}

impl Model {
    pub fn from_spec(spec: ModelSpec) -> Result<Self, ModelError> {
        if spec.input_channels != 1 || spec.input_length != SEGMENT_LEN {
            return Err(ModelError::Invalid(format!(
                "input must be 1x{SEGMENT_LEN}, model declares {}x{}",
                spec.input_channels, spec.input_length
            )));
        }
        let mut shape = Shape::Map {
            channels: spec.input_channels,
            length: spec.input_length,
        };
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut shapes = Vec::with_capacity(spec.layers.len());
        for (i, l) in spec.layers.iter().enumerate() {
            let (layer, next) = compile(i, l, shape)?;
            layers.push(layer);
            shapes.push(next);
            shape = next;
        }
        match (spec.layers.last(), shape) {
            (Some(LayerSpec::Softmax), Shape::Flat(2)) => {}
            _ => {
                return Err(ModelError::Invalid(format!(
                    "model must end in a softmax over 2 classes, final shape is {shape}"
                )))
            }
        }
        if let Some(pos) = spec.layers.iter().position(|l| matches!(l, LayerSpec::Softmax)) {
            if pos + 1 != spec.layers.len() {
                return Err(shape_err(pos, "softmax is only allowed as the last layer".into()));
            }
        }
        Ok(Self { spec, layers, shapes })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Output shape after each layer.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn input_length(&self) -> usize {
        self.spec.input_length
    }

    pub fn forward(&self, segment: &[i32]) -> Result<ClassProbs, InferenceError> {
        if segment.len() != self.spec.input_length {
            return Err(InferenceError::InvalidArgument(format!(
                "segment has {} samples, model expects {}",
                segment.len(),
                self.spec.input_length
            )));
        }
        let input: Vec<f32> = segment.iter().map(|&v| (v as f64 / AMPLITUDE_SCALE) as f32).collect();
        let mut value = Value::Map(Tensor1d::from_signal(&input).expect("non-empty segment"));
        for layer in &self.layers {
            value = match (layer, value) {
                (
                    Layer::Conv {
                        weights,
                        bias,
                        kernel,
                        stride,
                    },
                    Value::Map(x),
                ) => Value::Map(conv1d_flat(&x, weights, bias, *kernel, *stride)?),
                (Layer::LeakyRelu(alpha), Value::Map(x)) => {
                    let (c, l) = (x.channels(), x.length());
                    let mut data = x.into_data();
                    leaky_relu_in_place(&mut data, *alpha);
                    Value::Map(Tensor1d::new(c, l, data)?)
                }
                (Layer::LeakyRelu(alpha), Value::Flat(mut v)) => {
                    leaky_relu_in_place(&mut v, *alpha);
                    Value::Flat(v)
                }
                (Layer::MaxPool { size, stride }, Value::Map(x)) => Value::Map(max_pool1d(&x, *size, *stride)?),
                (Layer::Flatten, Value::Map(x)) => Value::Flat(x.into_data()),
                (Layer::Dense { weights, bias }, Value::Flat(v)) => Value::Flat(dense_flat(&v, weights, bias)?),
                (Layer::Softmax, Value::Flat(v)) => {
                    let logits: Vec<f64> = v.iter().map(|&x| x as f64).collect();
                    Value::Probs(softmax(&logits))
                }
                _ => unreachable!("layer kinds are checked against shapes at load"),
            };
        }
        match value {
            Value::Probs(p) => Ok(ClassProbs {
                p_mi: p[0],
                p_normal: p[1],
            }),
            _ => unreachable!("validated model ends in softmax"),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ModelError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let spec: ModelSpec = serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        Self::from_spec(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.spec).expect("model specs serialize")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        fs::write(path.as_ref(), self.to_json())
            .map_err(|e| ModelError::Parse(format!("{}: {e}", path.as_ref().display())))
    }
}

enum Value {
    Map(Tensor1d),
    Flat(Vec<f32>),
    Probs(Vec<f64>),
}

fn compile(i: usize, l: &LayerSpec, input: Shape) -> Result<(Layer, Shape), ModelError> {
    match (l, input) {
        (
            LayerSpec::Conv1d {
                out_channels,
                kernel_size,
                stride,
                weights,
                bias,
            },
            Shape::Map { channels, length },
        ) => {
            if *out_channels == 0 || *kernel_size == 0 || *stride == 0 {
                return Err(shape_err(i, "conv sizes must be positive".into()));
            }
            if weights.len() != *out_channels || bias.len() != *out_channels {
                return Err(shape_err(
                    i,
                    format!(
                        "conv declares {out_channels} filters but has {} weight rows and {} biases",
                        weights.len(),
                        bias.len()
                    ),
                ));
            }
            let mut flat = Vec::with_capacity(out_channels * channels * kernel_size);
            for (o, per_out) in weights.iter().enumerate() {
                if per_out.len() != channels {
                    return Err(shape_err(
                        i,
                        format!("filter {o} has {} input channels, input is {}", per_out.len(), input),
                    ));
                }
                for k in per_out {
                    if k.len() != *kernel_size {
                        return Err(shape_err(
                            i,
                            format!("filter {o} kernel has {} taps, expected {kernel_size}", k.len()),
                        ));
                    }
                    flat.extend_from_slice(k);
                }
            }
            if length < *kernel_size {
                return Err(shape_err(i, format!("input {input} shorter than kernel {kernel_size}")));
            }
            let out_len = (length - kernel_size) / stride + 1;
            Ok((
                Layer::Conv {
                    weights: flat,
                    bias: bias.clone(),
                    kernel: *kernel_size,
                    stride: *stride,
                },
                Shape::Map {
                    channels: *out_channels,
                    length: out_len,
                },
            ))
        }
        (LayerSpec::LeakyRelu { alpha }, s) => {
            if !alpha.is_finite() {
                return Err(shape_err(i, "alpha must be finite".into()));
            }
            Ok((Layer::LeakyRelu(*alpha), s))
        }
        (LayerSpec::MaxPool1d { size, stride }, Shape::Map { channels, length }) => {
            if *size == 0 || *stride == 0 || length < *size {
                return Err(shape_err(
                    i,
                    format!("pool size {size} stride {stride} invalid for input {input}"),
                ));
            }
            Ok((
                Layer::MaxPool {
                    size: *size,
                    stride: *stride,
                },
                Shape::Map {
                    channels,
                    length: (length - size) / stride + 1,
                },
            ))
        }
        (LayerSpec::Flatten, Shape::Map { channels, length }) => Ok((Layer::Flatten, Shape::Flat(channels * length))),
        (LayerSpec::Dense { out_dim, weights, bias }, Shape::Flat(n)) => {
            if *out_dim == 0 || weights.len() != *out_dim || bias.len() != *out_dim {
                return Err(shape_err(
                    i,
                    format!(
                        "dense declares {out_dim} outputs but has {} weight rows and {} biases",
                        weights.len(),
                        bias.len()
                    ),
                ));
            }
            if let Some((r, row)) = weights.iter().enumerate().find(|(_, r)| r.len() != n) {
                return Err(shape_err(
                    i,
                    format!("dense row {r} has {} inputs, input is {input}", row.len()),
                ));
            }
            Ok((
                Layer::Dense {
                    weights: weights.iter().flatten().copied().collect(),
                    bias: bias.clone(),
                },
                Shape::Flat(*out_dim),
            ))
        }
        (LayerSpec::Softmax, Shape::Flat(n)) => Ok((Layer::Softmax, Shape::Flat(n))),
        (l, s) => Err(shape_err(
            i,
            format!("{} cannot take input of shape {s}", layer_name(l)),
        )),
    }
}

fn layer_name(l: &LayerSpec) -> &'static str {
    match l {
        LayerSpec::Conv1d { .. } => "conv1d",
        LayerSpec::LeakyRelu { .. } => "leaky_relu",
        LayerSpec::MaxPool1d { .. } => "max_pool1d",
        LayerSpec::Flatten => "flatten",
        LayerSpec::Dense { .. } => "dense",
        LayerSpec::Softmax => "softmax",
    }
}

/// Layer sizes of the default architecture: four conv/pool stages
/// (3, 10, 10, 10 filters, kernel 5, pool 2/2) and dense 30 -> 10 -> 2.
pub const DEFAULT_CONV_FILTERS: [usize; 4] = [3, 10, 10, 10];
pub const DEFAULT_KERNEL: usize = 5;
pub const DEFAULT_DENSE: [usize; 3] = [30, 10, 2];
pub const DEFAULT_LEAK: f32 = 0.01;

fn uniform_fill<R: Rng>(rng: &mut R, n: usize, fan_in: usize) -> Vec<f32> {
    let limit = (6.0 / fan_in as f64).sqrt() as f32;
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

/// The default conv-pool-dense network with seeded random weights.
pub fn default_spec(seed: u64) -> ModelSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut channels = 1;
    let mut length = SEGMENT_LEN;
    for &filters in &DEFAULT_CONV_FILTERS {
        let fan_in = channels * DEFAULT_KERNEL;
        let weights = (0..filters)
            .map(|_| {
                (0..channels)
                    .map(|_| uniform_fill(&mut rng, DEFAULT_KERNEL, fan_in))
                    .collect()
            })
            .collect();
        layers.push(LayerSpec::Conv1d {
            out_channels: filters,
            kernel_size: DEFAULT_KERNEL,
            stride: 1,
            weights,
            bias: uniform_fill(&mut rng, filters, fan_in),
        });
        layers.push(LayerSpec::LeakyRelu { alpha: DEFAULT_LEAK });
        layers.push(LayerSpec::MaxPool1d { size: 2, stride: 2 });
        channels = filters;
        length = (length - DEFAULT_KERNEL + 1 - 2) / 2 + 1;
    }
    layers.push(LayerSpec::Flatten);
    let mut inputs = channels * length;
    for (k, &out) in DEFAULT_DENSE.iter().enumerate() {
        layers.push(LayerSpec::Dense {
            out_dim: out,
            weights: (0..out).map(|_| uniform_fill(&mut rng, inputs, inputs)).collect(),
            bias: uniform_fill(&mut rng, out, inputs),
        });
        if k + 1 < DEFAULT_DENSE.len() {
            layers.push(LayerSpec::LeakyRelu { alpha: DEFAULT_LEAK });
        }
        inputs = out;
    }
    layers.push(LayerSpec::Softmax);
    ModelSpec {
        input_length: SEGMENT_LEN,
        input_channels: 1,
        layers,
    }
}

pub fn default_model(seed: u64) -> Model {
    Model::from_spec(default_spec(seed)).expect("default architecture composes")
}
