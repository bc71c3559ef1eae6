use serde::{Deserialize, Serialize};

use super::DqnError;
use crate::mapgen::MapStyle;
use crate::observation::DEFAULT_FOV;

/// Observation encoder producing the node stalk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderKind {
    /// Two 3x3 same-padded convolutions (16 and 32 channels), flatten, dense.
    Conv,
    /// Flatten, one hidden dense layer, dense.
    Dense { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub fov: usize,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub encoder: EncoderKind,
    pub head_hidden: usize,
    /// Feed `[M(e), e]` to the advantage head; when false it sees `e` only.
    pub section_input: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            fov: DEFAULT_FOV,
            node_dim: 64,
            edge_dim: 32,
            encoder: EncoderKind::Conv,
            head_hidden: 64,
            section_input: true,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), DqnError> {
        if self.fov < 3 || self.fov % 2 == 0 {
            return Err(DqnError::Config(format!("fov must be odd and >= 3, got {}", self.fov)));
        }
        if self.node_dim == 0 || self.edge_dim == 0 || self.head_hidden == 0 {
            return Err(DqnError::Config("network dimensions must be positive".into()));
        }
        if let EncoderKind::Dense { hidden: 0 } = self.encoder {
            return Err(DqnError::Config("dense encoder hidden width must be positive".into()));
        }
        Ok(())
    }
}

/// Named toggles for the loss/architecture ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Section loss and `M(e)` in the advantage input.
    Full,
    /// No section loss.
    Wp,
    /// No `M(e)` in the advantage input.
    Fi,
    /// Neither.
    Es,
}

impl std::str::FromStr for Preset {
    type Err = DqnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Preset::Full),
            "wp" => Ok(Preset::Wp),
            "fi" => Ok(Preset::Fi),
            "es" => Ok(Preset::Es),
            _ => Err(DqnError::Config(format!("unknown preset {s:?} (full, wp, fi, es)"))),
        }
    }
}

/// Every knob of a training run. Missing JSON fields take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub gamma: f64,
    /// Weight of the section loss in the combined objective.
    pub section_weight: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Environment steps over which epsilon decays linearly; `None` means half of `total_steps`.
    pub epsilon_decay_steps: Option<u64>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub target_sync: u64,
    pub buffer_capacity: usize,
    /// Joint environment steps (each advances every agent once).
    pub total_steps: u64,
    /// Environment steps between optimizer steps.
    pub train_every: u64,
    /// Transitions to collect before the first optimizer step.
    pub learning_starts: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub double_dqn: bool,
    /// Block section-loss gradients from reaching the encoder (only `M` learns from it).
    pub section_detach_encoder: bool,
    /// Environment steps between log rows (and evaluations).
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    /// Environment steps between checkpoints; 0 disables.
    pub checkpoint_every: u64,
    pub map_size_min: usize,
    pub map_size_max: usize,
    pub map_style: MapStyle,
    pub obstacle_density: f64,
    pub n_agents: usize,
    /// Step cap for training episodes.
    pub episode_step_limit: usize,
    /// Step cap for evaluation episodes.
    pub eval_step_limit: usize,
    pub network: NetworkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            gamma: 0.99,
            section_weight: 0.1,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: None,
            learning_rate: 1e-4,
            batch_size: 128,
            target_sync: 1000,
            buffer_capacity: 50_000,
            total_steps: 200_000,
            train_every: 1,
            learning_starts: 1000,
            grad_clip: Some(10.0),
            double_dqn: false,
            section_detach_encoder: false,
            eval_every: 10_000,
            eval_episodes: 20,
            eval_seed: 1_000_003,
            checkpoint_every: 0,
            map_size_min: 10,
            map_size_max: 40,
            map_style: MapStyle::Room,
            obstacle_density: 0.1,
            n_agents: 5,
            episode_step_limit: 256,
            eval_step_limit: 512,
            network: NetworkConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn with_preset(mut self, preset: Preset) -> Self {
        let (sec, input) = match preset {
            Preset::Full => (0.1, true),
            Preset::Wp => (0.0, true),
            Preset::Fi => (0.1, false),
            Preset::Es => (0.0, false),
        };
        self.section_weight = sec;
        self.network.section_input = input;
        self
    }

    pub fn validate(&self) -> Result<(), DqnError> {
        let bad = |msg: String| Err(DqnError::Config(msg));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must be in (0, 1), got {}", self.gamma));
        }
        if !(self.section_weight >= 0.0) {
            return bad(format!("section_weight must be >= 0, got {}", self.section_weight));
        }
        for (name, e) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&e) {
                return bad(format!("{name} must be in [0, 1], got {e}"));
            }
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("batch_size and buffer_capacity must be positive".into());
        }
        if self.target_sync == 0 || self.train_every == 0 || self.eval_every == 0 {
            return bad("target_sync, train_every and eval_every must be positive".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        if self.map_size_min < 10 || self.map_size_min > self.map_size_max {
            return bad(format!(
                "map size range {}..={} invalid (minimum 10)",
                self.map_size_min, self.map_size_max
            ));
        }
        if !(0.0..=0.5).contains(&self.obstacle_density) {
            return bad(format!("obstacle_density must be in [0, 0.5], got {}", self.obstacle_density));
        }
        if self.n_agents == 0 || self.episode_step_limit == 0 || self.eval_step_limit == 0 {
            return bad("n_agents and step limits must be positive".into());
        }
        self.network.validate()
    }

    /// Linear schedule from `epsilon_start` to `epsilon_end`, flat afterwards.
    pub fn epsilon_at(&self, step: u64) -> f64 {
        let decay = self.epsilon_decay_steps.unwrap_or(self.total_steps / 2);
        if decay == 0 || step >= decay {
            return self.epsilon_end;
        }
        let frac = step as f64 / decay as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}
