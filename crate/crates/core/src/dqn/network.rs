use std::path::Path;

use super::config::{EncoderKind, NetworkConfig};
use super::DqnError;
use crate::gridworld::Action;
use crate::nn::{self, Graph, Layer, NetworkSpec, ParamId, ParamSet, Sequential, Tensor, Var, INIT_SCALE};
use crate::observation::{ObservationTensor, CHANNELS};
use crate::rng::SeededRng;
use crate::sheaf::RestrictionMap;
use crate::Scalar;

/// Name of the restriction-map parameter, stored `[edge_dim, node_dim]`.
pub const PARAM_MAP: &str = "section.map";

/// Parameter bindings of the three sub-networks and the restriction map.
#[derive(Debug, Clone)]
pub struct Layout {
    encoder: Sequential,
    value: Sequential,
    advantage: Sequential,
    map: ParamId,
    section_input: bool,
}

/// Graph nodes produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// Encoder output `e`, `[rows, node_dim]`.
    pub stalks: Var,
    /// `M e`, `[rows, edge_dim]`.
    pub mapped: Var,
    pub value: Var,
    pub advantage: Var,
    pub q: Var,
}

fn network_specs(config: &NetworkConfig) -> (NetworkSpec, NetworkSpec, NetworkSpec) {
    let f = config.fov;
    let encoder = match config.encoder {
        EncoderKind::Conv => NetworkSpec {
            input_shape: vec![f, f, CHANNELS],
            layers: vec![
                Layer::Conv2d { in_channels: CHANNELS, out_channels: 16, kernel: 3, stride: 1, padding: 1 },
                Layer::Relu,
                Layer::Conv2d { in_channels: 16, out_channels: 32, kernel: 3, stride: 1, padding: 1 },
                Layer::Relu,
                Layer::Flatten,
                Layer::Dense { input: f * f * 32, output: config.node_dim },
            ],
        },
        EncoderKind::Dense { hidden } => NetworkSpec {
            input_shape: vec![f * f * CHANNELS],
            layers: vec![
                Layer::Dense { input: f * f * CHANNELS, output: hidden },
                Layer::Relu,
                Layer::Dense { input: hidden, output: config.node_dim },
            ],
        },
    };
    let head = |input: usize, output: usize| NetworkSpec {
        input_shape: vec![input],
        layers: vec![
            Layer::Dense { input, output: config.head_hidden },
            Layer::Relu,
            Layer::Dense { input: config.head_hidden, output },
        ],
    };
    let adv_in = if config.section_input {
        config.edge_dim + config.node_dim
    } else {
        config.node_dim
    };
    (encoder, head(config.node_dim, 1), head(adv_in, Action::COUNT))
}

impl Layout {
    /// Run the network on `x` inside `g`. With `detach_section`, the
    /// returned `mapped` is computed from a stop-gradient copy of the stalks
    /// (the advantage head still sees the attached one).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, detach_section: bool) -> Result<(ForwardVars, Var), DqnError> {
        let stalks = self.encoder.forward(g, x)?;
        let m = g.param(self.map);
        let mapped = g.matmul(stalks, m, true)?;
        let section_mapped = if detach_section {
            let e = g.detach(stalks);
            g.matmul(e, m, true)?
        } else {
            mapped
        };
        let adv_in = if self.section_input {
            g.concat_cols(mapped, stalks)?
        } else {
            stalks
        };
        let value = self.value.forward(g, stalks)?;
        let advantage = self.advantage.forward(g, adv_in)?;
        let q = g.dueling(value, advantage)?;
        Ok((
            ForwardVars {
                stalks,
                mapped,
                value,
                advantage,
                q,
            },
            section_mapped,
        ))
    }
}

/// Per-row outputs of a forward pass, detached from any graph.
#[derive(Debug, Clone, PartialEq)]
pub struct QParts<T> {
    pub q: Vec<[T; 5]>,
    pub value: Vec<T>,
    pub advantage: Vec<[T; 5]>,
    pub stalks: Vec<Vec<T>>,
}

/// Dueling Q-network with a learned restriction map, shared by all agents.
#[derive(Debug, Clone)]
pub struct QNetwork<T: Scalar> {
    config: NetworkConfig,
    params: ParamSet<T>,
    layout: Layout,
}

fn rows5<T: Scalar>(data: &[T]) -> Vec<[T; 5]> {
    data.chunks_exact(5).map(|c| [c[0], c[1], c[2], c[3], c[4]]).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl<T: Scalar> QNetwork<T> {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self, DqnError> {
        config.validate()?;
        let (enc, val, adv) = network_specs(&config);
        let mut rng = SeededRng::new(seed);
        let mut params = ParamSet::new();
        let encoder = Sequential::init(enc, "encoder", &mut params, &mut rng)?;
        let bound = INIT_SCALE / (config.node_dim as f64).sqrt();
        let m: Vec<T> = (0..config.edge_dim * config.node_dim)
            .map(|_| T::lit(rng.uniform(-bound, bound)))
            .collect();
        let map = params.add(PARAM_MAP, Tensor::new(vec![config.edge_dim, config.node_dim], m)?);
        let value = Sequential::init(val, "value", &mut params, &mut rng)?;
        let advantage = Sequential::init(adv, "advantage", &mut params, &mut rng)?;
        let section_input = config.section_input;
        Ok(Self {
            config,
            params,
            layout: Layout {
                encoder,
                value,
                advantage,
                map,
                section_input,
            },
        })
    }

    /// Bind an existing parameter set (e.g. loaded from disk).
    pub fn from_params(config: NetworkConfig, params: ParamSet<T>) -> Result<Self, DqnError> {
        config.validate()?;
        let (enc, val, adv) = network_specs(&config);
        let encoder = Sequential::bind(enc, "encoder", &params)?;
        let map = params
            .id(PARAM_MAP)
            .ok_or_else(|| nn::NnError::MissingParam(PARAM_MAP.into()))?;
        let want = [config.edge_dim, config.node_dim];
        if params.get(map).shape() != want {
            return Err(nn::NnError::ParamShape {
                name: PARAM_MAP.into(),
                expected: want.to_vec(),
                got: params.get(map).shape().to_vec(),
            }
            .into());
        }
        let value = Sequential::bind(val, "value", &params)?;
        let advantage = Sequential::bind(adv, "advantage", &params)?;
        let section_input = config.section_input;
        Ok(Self {
            config,
            params,
            layout: Layout {
                encoder,
                value,
                advantage,
                map,
                section_input,
            },
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn restriction_map(&self) -> RestrictionMap<T> {
        RestrictionMap::new(
            self.config.edge_dim,
            self.config.node_dim,
            self.params.get(self.layout.map).data().to_vec(),
        )
        .expect("shape checked at construction")
    }

    /// Stack observations into the encoder's input layout (channels-last).
    pub fn input_tensor(&self, obs: &[&ObservationTensor]) -> Result<Tensor<T>, DqnError> {
        let f = self.config.fov;
        let plane = f * f;
        let mut data = Vec::with_capacity(obs.len() * plane * CHANNELS);
        for o in obs {
            if o.fov() != f {
                return Err(DqnError::Observation(format!("observation fov {} but network expects {f}", o.fov())));
            }
            let raw = o.as_slice();
            for cell in 0..plane {
                for ch in 0..CHANNELS {
                    data.push(if raw[ch * plane + cell] != 0 { T::one() } else { T::zero() });
                }
            }
        }
        let shape = match self.config.encoder {
            EncoderKind::Conv => vec![obs.len(), f, f, CHANNELS],
            EncoderKind::Dense { .. } => vec![obs.len(), plane * CHANNELS],
        };
        Ok(Tensor::new(shape, data)?)
    }

    pub fn evaluate_parts(&self, obs: &[&ObservationTensor]) -> Result<QParts<T>, DqnError> {
        let mut g = Graph::new(&self.params);
        let x = g.input(self.input_tensor(obs)?);
        let (v, _) = self.layout.forward(&mut g, x, false)?;
        let d = self.config.node_dim;
        Ok(QParts {
            q: rows5(g.value(v.q).data()),
            value: g.value(v.value).data().to_vec(),
            advantage: rows5(g.value(v.advantage).data()),
            stalks: g.value(v.stalks).data().chunks_exact(d).map(<[T]>::to_vec).collect(),
        })
    }

    pub fn compute_q_batch(&self, obs: &[&ObservationTensor]) -> Result<Vec<[T; 5]>, DqnError> {
        if obs.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new(&self.params);
        let x = g.input(self.input_tensor(obs)?);
        let (v, _) = self.layout.forward(&mut g, x, false)?;
        Ok(rows5(g.value(v.q).data()))
    }

    pub fn compute_q(&self, obs: &ObservationTensor) -> Result<[T; 5], DqnError> {
        Ok(self.compute_q_batch(&[obs])?[0])
    }

    /// Epsilon-greedy choice; the greedy branch breaks ties by lowest action index.
    pub fn select_action(&self, obs: &ObservationTensor, epsilon: f64, rng: &mut SeededRng) -> Result<Action, DqnError> {
        if rng.unit() < epsilon {
            return Ok(Action::ALL[rng.below(Action::COUNT)]);
        }
        Ok(Action::ALL[argmax(&self.compute_q(obs)?)])
    }

    /// Greedy actions for a batch, in one forward pass.
    pub fn greedy_actions(&self, obs: &[&ObservationTensor]) -> Result<Vec<Action>, DqnError> {
        Ok(self
            .compute_q_batch(obs)?
            .iter()
            .map(|q| Action::ALL[argmax(q)])
            .collect())
    }

    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({ "network": self.config })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DqnError> {
        nn::save_weights(path, &self.metadata(), &self.params)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DqnError> {
        let file = nn::load_weights::<T>(path)?;
        let config: NetworkConfig = serde_json::from_value(
            file.metadata
                .get("network")
                .cloned()
                .ok_or_else(|| nn::NnError::Corrupt("metadata lacks a network description".into()))?,
        )
        .map_err(|e| nn::NnError::Corrupt(format!("network description: {e}")))?;
        Self::from_params(config, file.params)
    }
}
