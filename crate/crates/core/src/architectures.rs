//! Declarative model topologies and their instantiation.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{
    Conv1d, Conv2d, Dense, Dropout, Flatten, LastStep, Layer, Lstm, MaxPool1d, MaxPool2d,
    MultiHeadAttention, Network, NnError, Relu, Scalar, SelfAttention,
};
use crate::signal_io::ArrhythmiaClass;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("unknown model {0:?} (expected one of cnn2d, cnn_sa, cnn_mha, cnn1d, cnn1d_lstm)")]
    UnknownModel(String),
    #[error("layer {layer}: {msg}")]
    ShapeMismatch { layer: usize, msg: String },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Cnn2d,
    CnnSa,
    CnnMha,
    Cnn1d,
    Cnn1dLstm,
}

impl ModelName {
    pub const ALL: [ModelName; 5] = [
        ModelName::Cnn2d,
        ModelName::CnnSa,
        ModelName::CnnMha,
        ModelName::Cnn1d,
        ModelName::Cnn1dLstm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::Cnn2d => "cnn2d",
            ModelName::CnnSa => "cnn_sa",
            ModelName::CnnMha => "cnn_mha",
            ModelName::Cnn1d => "cnn1d",
            ModelName::Cnn1dLstm => "cnn1d_lstm",
        }
    }

    /// Whether the model consumes the wrapped 1D vector instead of the image.
    pub fn is_1d(self) -> bool {
        matches!(self, ModelName::Cnn1d | ModelName::Cnn1dLstm)
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelName {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ModelError::UnknownModel(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d { kernel: usize, filters: usize, stride: usize, relu: bool },
    MaxPool2d { size: usize, stride: usize },
    Conv1d { kernel: usize, filters: usize, stride: usize, relu: bool },
    MaxPool1d { size: usize, stride: usize },
    Flatten,
    Dense { units: usize, relu: bool },
    Dropout { rate: f64 },
    SelfAttention,
    MultiHeadAttention { heads: usize },
    Lstm { layers: usize, hidden: usize },
    LastStep,
}

impl LayerSpec {
    pub fn describe(&self) -> String {
        match self {
            LayerSpec::Conv2d { kernel, filters, stride, .. } => {
                format!("Conv2D {kernel}x{kernel}x{filters} /{stride}")
            }
            LayerSpec::MaxPool2d { size, .. } => format!("MaxPool2D {size}x{size}"),
            LayerSpec::Conv1d { kernel, filters, stride, .. } => {
                format!("Conv1D {kernel}x{filters} /{stride}")
            }
            LayerSpec::MaxPool1d { size, .. } => format!("MaxPool1D {size}"),
            LayerSpec::Flatten => "Flatten".into(),
            LayerSpec::Dense { units, .. } => format!("Dense {units}"),
            LayerSpec::Dropout { rate } => format!("Dropout {rate}"),
            LayerSpec::SelfAttention => "SelfAttention".into(),
            LayerSpec::MultiHeadAttention { heads } => format!("MultiHeadAttention h={heads}"),
            LayerSpec::Lstm { layers, hidden } => format!("LSTM {layers}x{hidden}"),
            LayerSpec::LastStep => "LastStep".into(),
        }
    }

    /// Per-sample output dims and parameter count for the given input dims.
    pub fn infer(&self, input: &[usize]) -> Result<(Vec<usize>, usize), String> {
        let bad = |what: &str| Err(format!("{} expects {what}, got {input:?}", self.describe()));
        let extent = |n: usize, k: usize, s: usize| -> Result<usize, String> {
            if s == 0 || k == 0 {
                return Err("kernel and stride must be positive".into());
            }
            if k > n {
                return Err(format!("window {k} larger than input extent {n}"));
            }
            Ok((n - k) / s + 1)
        };
        match *self {
            LayerSpec::Conv2d { kernel, filters, stride, .. } => match *input {
                [h, w, c] => Ok((
                    vec![extent(h, kernel, stride)?, extent(w, kernel, stride)?, filters],
                    filters * (kernel * kernel * c + 1),
                )),
                _ => bad("[h, w, c]"),
            },
            LayerSpec::MaxPool2d { size, stride } => match *input {
                [h, w, c] => Ok((vec![extent(h, size, stride)?, extent(w, size, stride)?, c], 0)),
                _ => bad("[h, w, c]"),
            },
            LayerSpec::Conv1d { kernel, filters, stride, .. } => match *input {
                [l, c] => Ok((vec![extent(l, kernel, stride)?, filters], filters * (kernel * c + 1))),
                _ => bad("[length, c]"),
            },
            LayerSpec::MaxPool1d { size, stride } => match *input {
                [l, c] => Ok((vec![extent(l, size, stride)?, c], 0)),
                _ => bad("[length, c]"),
            },
            LayerSpec::Flatten => Ok((vec![input.iter().product()], 0)),
            LayerSpec::Dense { units, .. } => match *input {
                [n] => Ok((vec![units], units * (n + 1))),
                _ => bad("a flat vector"),
            },
            LayerSpec::Dropout { .. } => Ok((input.to_vec(), 0)),
            LayerSpec::SelfAttention | LayerSpec::MultiHeadAttention { .. } => {
                let heads = match *self {
                    LayerSpec::MultiHeadAttention { heads } => heads,
                    _ => 1,
                };
                let c = match input.split_last() {
                    Some((&c, rest)) if !rest.is_empty() => c,
                    _ => return bad("[..., c]"),
                };
                if c % 8 != 0 || c == 0 {
                    return Err(format!("channels {c} not divisible by 8"));
                }
                if heads == 0 || (c / 8) % heads != 0 {
                    return Err(format!("{c} channels cannot be split across {heads} heads"));
                }
                let proj = if matches!(self, LayerSpec::MultiHeadAttention { .. }) { c * c } else { 0 };
                Ok((input.to_vec(), 2 * c * (c / 8) + c * c + proj + 1))
            }
            LayerSpec::Lstm { layers, hidden } => match *input {
                [t, d] if t > 0 && layers > 0 => {
                    let first = 4 * hidden * (d + hidden + 1);
                    let rest = 4 * hidden * (2 * hidden + 1) * (layers - 1);
                    Ok((vec![t, hidden], first + rest))
                }
                _ => bad("[time, features]"),
            },
            LayerSpec::LastStep => match *input {
                [t, f] if t > 0 => Ok((vec![f], 0)),
                _ => bad("[time, features]"),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionPlacement {
    AfterPool1,
    #[default]
    AfterPool2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildOptions {
    pub heads: usize,
    pub attention_placement: AttentionPlacement,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { heads: 4, attention_placement: AttentionPlacement::AfterPool2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: ModelName,
    pub input_shape: Vec<usize>,
    pub n_classes: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub index: usize,
    pub description: String,
    pub output_dims: Vec<usize>,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCount {
    pub layers: Vec<LayerReport>,
    pub total: usize,
}

fn cnn2d_layers(attention: Option<(LayerSpec, AttentionPlacement)>) -> Vec<LayerSpec> {
    let mut v = vec![
        LayerSpec::Conv2d { kernel: 5, filters: 32, stride: 1, relu: true },
        LayerSpec::MaxPool2d { size: 2, stride: 2 },
        LayerSpec::Conv2d { kernel: 5, filters: 64, stride: 1, relu: true },
        LayerSpec::MaxPool2d { size: 2, stride: 2 },
    ];
    if let Some((layer, placement)) = attention {
        let at = match placement {
            AttentionPlacement::AfterPool1 => 2,
            AttentionPlacement::AfterPool2 => 4,
        };
        v.insert(at, layer);
    }
    v.extend([
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 500, relu: true },
        LayerSpec::Dropout { rate: 0.5 },
        LayerSpec::Dense { units: 256, relu: true },
        LayerSpec::Dense { units: 64, relu: true },
        LayerSpec::Dense { units: ArrhythmiaClass::COUNT, relu: false },
    ]);
    v
}

fn cnn1d_stem() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv1d { kernel: 9, filters: 16, stride: 2, relu: true },
        LayerSpec::MaxPool1d { size: 2, stride: 2 },
        LayerSpec::Conv1d { kernel: 9, filters: 32, stride: 2, relu: true },
        LayerSpec::MaxPool1d { size: 2, stride: 2 },
    ]
}

/// Builds `name` with default options. 2D models take `[h, w, 3]`; 1D
/// models take `[length]` or `[length, 1]`.
pub fn build(name: ModelName, input_shape: &[usize]) -> Result<ModelSpec, ModelError> {
    build_with(name, input_shape, &BuildOptions::default())
}

pub fn build_with(
    name: ModelName,
    input_shape: &[usize],
    options: &BuildOptions,
) -> Result<ModelSpec, ModelError> {
    let layers = match name {
        ModelName::Cnn2d => cnn2d_layers(None),
        ModelName::CnnSa => cnn2d_layers(Some((LayerSpec::SelfAttention, options.attention_placement))),
        ModelName::CnnMha => cnn2d_layers(Some((
            LayerSpec::MultiHeadAttention { heads: options.heads },
            options.attention_placement,
        ))),
        ModelName::Cnn1d => {
            let mut v = cnn1d_stem();
            v.extend([
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 128, relu: true },
                LayerSpec::Dense { units: ArrhythmiaClass::COUNT, relu: false },
            ]);
            v
        }
        ModelName::Cnn1dLstm => {
            let mut v = cnn1d_stem();
            v.extend([
                LayerSpec::Lstm { layers: 3, hidden: 128 },
                LayerSpec::LastStep,
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::Dense { units: ArrhythmiaClass::COUNT, relu: false },
            ]);
            v
        }
    };
    let input_shape = match (name.is_1d(), input_shape) {
        (true, [l]) => vec![*l, 1],
        (true, [l, 1]) => vec![*l, 1],
        (false, [h, w, 3]) => vec![*h, *w, 3],
        _ => {
            return Err(ModelError::ShapeMismatch {
                layer: 0,
                msg: format!("{name} cannot take input {input_shape:?}"),
            })
        }
    };
    let spec = ModelSpec { name, input_shape, n_classes: ArrhythmiaClass::COUNT, layers };
    spec.validate()?;
    Ok(spec)
}

impl ModelSpec {
    /// Checks shape conformance and the final width.
    pub fn validate(&self) -> Result<(), ModelError> {
        let counts = param_count(self)?;
        let last = counts.layers.last().map(|l| l.output_dims.clone()).unwrap_or_default();
        if last != [self.n_classes] {
            return Err(ModelError::InvalidSpec(format!(
                "final output {last:?} is not [{}]",
                self.n_classes
            )));
        }
        Ok(())
    }

    pub fn output_dims(&self) -> Result<Vec<usize>, ModelError> {
        let counts = param_count(self)?;
        Ok(counts.layers.last().map(|l| l.output_dims.clone()).unwrap_or_else(|| self.input_shape.clone()))
    }
}

/// Analytic per-layer output dims and parameter counts.
pub fn param_count(spec: &ModelSpec) -> Result<ParamCount, ModelError> {
    let mut dims = spec.input_shape.clone();
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (index, layer) in spec.layers.iter().enumerate() {
        let (out, params) = layer
            .infer(&dims)
            .map_err(|msg| ModelError::ShapeMismatch { layer: index, msg })?;
        layers.push(LayerReport { index, description: layer.describe(), output_dims: out.clone(), params });
        dims = out;
    }
    let total = layers.iter().map(|l| l.params).sum();
    Ok(ParamCount { layers, total })
}

fn nn_err(layer: usize) -> impl Fn(NnError) -> ModelError {
    move |e| ModelError::ShapeMismatch { layer, msg: e.to_string() }
}

/// Creates a freshly initialized network for `spec`. Layers are initialized
/// in order from a ChaCha8 stream seeded with `seed`.
pub fn instantiate<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<Network<T>, ModelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::new(spec.input_shape.clone());
    let mut dims = spec.input_shape.clone();
    for (i, layer) in spec.layers.iter().enumerate() {
        let err = nn_err(i);
        let mut push = |l: Box<dyn Layer<T>>| net.push(l).map_err(nn_err(i));
        match *layer {
            LayerSpec::Conv2d { kernel, filters, stride, relu } => {
                push(Box::new(Conv2d::new(kernel, dims[2], filters, stride, &mut rng).map_err(&err)?))?;
                if relu {
                    push(Box::new(Relu::new()))?;
                }
            }
            LayerSpec::MaxPool2d { size, stride } => {
                push(Box::new(MaxPool2d::new(size, stride).map_err(&err)?))?
            }
            LayerSpec::Conv1d { kernel, filters, stride, relu } => {
                push(Box::new(Conv1d::new(kernel, dims[1], filters, stride, &mut rng).map_err(&err)?))?;
                if relu {
                    push(Box::new(Relu::new()))?;
                }
            }
            LayerSpec::MaxPool1d { size, stride } => {
                push(Box::new(MaxPool1d::new(size, stride).map_err(&err)?))?
            }
            LayerSpec::Flatten => push(Box::new(Flatten::new()))?,
            LayerSpec::Dense { units, relu } => {
                push(Box::new(Dense::new(dims[0], units, &mut rng).map_err(&err)?))?;
                if relu {
                    push(Box::new(Relu::new()))?;
                }
            }
            LayerSpec::Dropout { rate } => push(Box::new(Dropout::new(rate).map_err(&err)?))?,
            LayerSpec::SelfAttention => {
                let c = *dims.last().expect("validated dims");
                push(Box::new(SelfAttention::new(c, &mut rng).map_err(&err)?))?
            }
            LayerSpec::MultiHeadAttention { heads } => {
                let c = *dims.last().expect("validated dims");
                push(Box::new(MultiHeadAttention::new(c, heads, &mut rng).map_err(&err)?))?
            }
            LayerSpec::Lstm { layers, hidden } => {
                push(Box::new(Lstm::new(dims[1], hidden, layers, &mut rng).map_err(&err)?))?
            }
            LayerSpec::LastStep => push(Box::new(LastStep::new()))?,
        }
        dims = layer.infer(&dims).map_err(|msg| ModelError::ShapeMismatch { layer: i, msg })?.0;
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in ModelName::ALL {
            assert_eq!(m.as_str().parse::<ModelName>().unwrap(), m);
        }
        assert!(matches!("resnet50".parse::<ModelName>(), Err(ModelError::UnknownModel(_))));
    }

    #[test]
    fn cnn2d_conv_rows() {
        let spec = build(ModelName::Cnn2d, &[227, 227, 3]).unwrap();
        let pc = param_count(&spec).unwrap();
        let dims: Vec<_> = pc.layers[..4].iter().map(|l| l.output_dims.clone()).collect();
        assert_eq!(dims, vec![vec![223, 223, 32], vec![111, 111, 32], vec![107, 107, 64], vec![53, 53, 64]]);
        assert_eq!(pc.layers[0].params, 2_432);
        assert_eq!(pc.layers[1].params, 0);
        assert_eq!(pc.layers[2].params, 51_264);
        assert_eq!(pc.layers[8].params, 16_448);
    }

    #[test]
    fn attention_widths() {
        let spec = build(ModelName::CnnSa, &[227, 227, 3]).unwrap();
        assert_eq!(spec.layers[4], LayerSpec::SelfAttention);
        let pc = param_count(&spec).unwrap();
        assert_eq!(pc.layers[4].params, 2 * 64 * 8 + 64 * 64 + 1);
        let opts = BuildOptions { heads: 3, ..Default::default() };
        assert!(build_with(ModelName::CnnMha, &[227, 227, 3], &opts).is_err());
    }

    #[test]
    fn lstm_model_shapes() {
        let spec = build(ModelName::Cnn1dLstm, &[3136]).unwrap();
        assert!(spec.layers.contains(&LayerSpec::Lstm { layers: 3, hidden: 128 }));
        let pc = param_count(&spec).unwrap();
        assert_eq!(pc.layers[3].output_dims, vec![193, 32]);
        assert_eq!(spec.output_dims().unwrap(), vec![4]);
        assert!(build(ModelName::Cnn1d, &[20, 20, 3]).is_err());
        assert!(build(ModelName::Cnn2d, &[8, 8, 3]).is_err());
    }

    #[test]
    fn instantiated_counts_match_analytic() {
        for (name, shape) in [
            (ModelName::Cnn2d, vec![31, 31, 3]),
            (ModelName::CnnSa, vec![31, 31, 3]),
            (ModelName::CnnMha, vec![31, 31, 3]),
            (ModelName::Cnn1d, vec![200]),
            (ModelName::Cnn1dLstm, vec![200]),
        ] {
            let spec = build(name, &shape).unwrap();
            let net = instantiate::<f32>(&spec, 1).unwrap();
            assert_eq!(net.param_count(), param_count(&spec).unwrap().total, "{name}");
            assert_eq!(net.output_dims().unwrap(), vec![4]);
        }
    }
}
