use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::env::{EnvConfig, JointState};
use super::map::{GridMap, Pos};
use super::GridError;

/// Scenario document (JSON).
///
/// `map` is either a path to a map file, resolved relative to the scenario
/// file's directory, or the map text itself (any value containing a newline
/// is treated as inline text).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub map: String,
    pub starts: Vec<Pos>,
    pub goals: Vec<Pos>,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn inline(map: &GridMap, starts: Vec<Pos>, goals: Vec<Pos>, seed: u64) -> Self {
        Self {
            map: map.to_text(&[]),
            starts,
            goals,
            seed,
        }
    }

    pub fn is_inline(&self) -> bool {
        self.map.contains('\n')
    }

    pub fn from_json(text: &str) -> Result<Self, GridError> {
        serde_json::from_str(text).map_err(|e| GridError::Scenario(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn load(path: &Path) -> Result<(Self, GridMap), GridError> {
        let text = std::fs::read_to_string(path)?;
        let scen = Self::from_json(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let map = scen.resolve_map(&base)?;
        Ok((scen, map))
    }

    /// Load the referenced map, reading relative paths against `base`.
    pub fn resolve_map(&self, base: &Path) -> Result<GridMap, GridError> {
        if self.is_inline() {
            GridMap::parse(&self.map)
        } else {
            let p = PathBuf::from(&self.map);
            let p = if p.is_absolute() { p } else { base.join(p) };
            GridMap::parse(&std::fs::read_to_string(p)?)
        }
    }

    pub fn instantiate(&self, map: Arc<GridMap>, config: EnvConfig) -> Result<JointState, GridError> {
        JointState::reset(map, &self.starts, &self.goals, self.seed, config)
    }
}
