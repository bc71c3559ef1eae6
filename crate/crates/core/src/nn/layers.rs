use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamSet};
use super::{NnError, Tensor};
use crate::rng::SeededRng;
use crate::Scalar;

/// Weights and biases start uniform on `[-INIT_SCALE / sqrt(fan_in), INIT_SCALE / sqrt(fan_in))`.
pub const INIT_SCALE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        input: usize,
        output: usize,
    },
    Relu,
    Flatten,
}

/// Ordered layers plus the per-sample input shape (`[h, w, c]` for a
/// convolutional front, `[features]` for a dense one).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

impl NetworkSpec {
    /// Per-sample output shape; errors if adjacent layers disagree.
    pub fn output_shape(&self) -> Result<Vec<usize>, NnError> {
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match (layer, shape.as_slice()) {
                (
                    Layer::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    },
                    &[h, w, c],
                ) if c == *in_channels && *stride > 0 && h + 2 * padding >= *kernel && w + 2 * padding >= *kernel => {
                    vec![
                        (h + 2 * padding - kernel) / stride + 1,
                        (w + 2 * padding - kernel) / stride + 1,
                        *out_channels,
                    ]
                }
                (Layer::Dense { input, output }, &[f]) if f == *input => vec![*output],
                (Layer::Relu, s) => s.to_vec(),
                (Layer::Flatten, s) => vec![s.iter().product()],
                (l, s) => {
                    return Err(NnError::Shape(format!(
                        "layer {i} ({l:?}) cannot take input of shape {s:?}"
                    )))
                }
            };
        }
        Ok(shape)
    }

    fn param_shapes(layer: &Layer) -> Option<(Vec<usize>, Vec<usize>, usize)> {
        match *layer {
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![kernel, kernel, in_channels, out_channels],
                vec![out_channels],
                kernel * kernel * in_channels,
            )),
            Layer::Dense { input, output } => Some((vec![input, output], vec![output], input)),
            _ => None,
        }
    }
}

/// A [`NetworkSpec`] bound to tensors in a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Sequential {
    spec: NetworkSpec,
    prefix: String,
    bindings: Vec<Option<(ParamId, ParamId)>>,
}

impl Sequential {
    /// Register freshly initialized parameters named `{prefix}.{layer}.weight|bias`.
    pub fn init<T: Scalar>(
        spec: NetworkSpec,
        prefix: &str,
        params: &mut ParamSet<T>,
        rng: &mut SeededRng,
    ) -> Result<Self, NnError> {
        spec.output_shape()?;
        let mut bindings = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            bindings.push(NetworkSpec::param_shapes(layer).map(|(ws, bs, fan_in)| {
                let bound = INIT_SCALE / (fan_in as f64).sqrt();
                let mut draw = |shape: Vec<usize>| {
                    let n: usize = shape.iter().product();
                    let data = (0..n).map(|_| T::lit(rng.uniform(-bound, bound))).collect();
                    Tensor::new(shape, data).expect("sized")
                };
                let w = params.add(format!("{prefix}.{i}.weight"), draw(ws));
                let b = params.add(format!("{prefix}.{i}.bias"), draw(bs));
                (w, b)
            }));
        }
        Ok(Self {
            spec,
            prefix: prefix.to_string(),
            bindings,
        })
    }

    /// Bind to parameters already present in `params`, checking names and shapes.
    pub fn bind<T: Scalar>(spec: NetworkSpec, prefix: &str, params: &ParamSet<T>) -> Result<Self, NnError> {
        spec.output_shape()?;
        let mut bindings = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let Some((ws, bs, _)) = NetworkSpec::param_shapes(layer) else {
                bindings.push(None);
                continue;
            };
            let find = |suffix: &str, shape: Vec<usize>| {
                let name = format!("{prefix}.{i}.{suffix}");
                let id = params.id(&name).ok_or_else(|| NnError::MissingParam(name.clone()))?;
                if params.get(id).shape() != shape.as_slice() {
                    return Err(NnError::ParamShape {
                        name,
                        expected: shape,
                        got: params.get(id).shape().to_vec(),
                    });
                }
                Ok(id)
            };
            let w = find("weight", ws)?;
            let b = find("bias", bs)?;
            bindings.push(Some((w, b)));
        }
        Ok(Self {
            spec,
            prefix: prefix.to_string(),
            bindings,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    /// `x` must be `[batch, input_shape...]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, NnError> {
        let shape = g.value(x).shape();
        if shape.len() != self.spec.input_shape.len() + 1 || shape[1..] != self.spec.input_shape[..] {
            return Err(NnError::Shape(format!(
                "network expects [batch, {:?}], got {shape:?}",
                self.spec.input_shape
            )));
        }
        let mut h = x;
        for (layer, binding) in self.spec.layers.iter().zip(&self.bindings) {
            h = match (layer, binding) {
                (Layer::Conv2d { stride, padding, .. }, Some((w, b))) => {
                    let (wv, bv) = (g.param(*w), g.param(*b));
                    g.conv2d(h, wv, bv, *stride, *padding)?
                }
                (Layer::Dense { .. }, Some((w, b))) => {
                    let (wv, bv) = (g.param(*w), g.param(*b));
                    let y = g.matmul(h, wv, false)?;
                    g.add_bias(y, bv)?
                }
                (Layer::Relu, _) => g.relu(h),
                (Layer::Flatten, _) => g.flatten(h)?,
                _ => unreachable!("parametric layers are always bound"),
            };
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_shapes() {
        let spec = NetworkSpec {
            input_shape: vec![9, 9, 6],
            layers: vec![
                Layer::Conv2d { in_channels: 6, out_channels: 16, kernel: 3, stride: 1, padding: 1 },
                Layer::Relu,
                Layer::Conv2d { in_channels: 16, out_channels: 32, kernel: 3, stride: 2, padding: 0 },
                Layer::Flatten,
                Layer::Dense { input: 512, output: 8 },
            ],
        };
        assert_eq!(spec.output_shape().unwrap(), vec![8]);
        let bad = NetworkSpec {
            input_shape: vec![4],
            layers: vec![Layer::Dense { input: 5, output: 2 }],
        };
        assert!(bad.output_shape().is_err());
    }

    #[test]
    fn bind_detects_missing_and_misshaped() {
        let spec = NetworkSpec {
            input_shape: vec![3],
            layers: vec![Layer::Dense { input: 3, output: 2 }],
        };
        let mut params = ParamSet::<f64>::new();
        let mut rng = SeededRng::new(0);
        Sequential::init(spec.clone(), "net", &mut params, &mut rng).unwrap();
        assert!(Sequential::bind(spec.clone(), "net", &params).is_ok());
        assert!(matches!(
            Sequential::bind(spec, "other", &params),
            Err(NnError::MissingParam(n)) if n == "other.0.weight"
        ));
        let wider = NetworkSpec {
            input_shape: vec![3],
            layers: vec![Layer::Dense { input: 3, output: 4 }],
        };
        assert!(matches!(Sequential::bind(wider, "net", &params), Err(NnError::ParamShape { .. })));
    }
}
