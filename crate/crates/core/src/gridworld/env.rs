use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::map::{compute_distance_field, DistanceField, GridMap, Pos};
use super::GridError;

pub const REWARD_MOVE: f64 = -0.075;
pub const REWARD_STAY_ON_GOAL: f64 = 0.0;
pub const REWARD_COLLISION: f64 = -0.5;
pub const REWARD_FINISH: f64 = 3.0;

/// Per-agent action, encoded `0..=4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Stay = 4,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; 5] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Stay,
    ];
    /// The four moves, in channel order of the heuristic observation.
    pub const MOVES: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Stay => (0, 0),
        }
    }

    /// Action carrying `from` to the adjacent-or-equal cell `to`.
    pub fn between(from: Pos, to: Pos) -> Option<Action> {
        Self::ALL.into_iter().find(|a| {
            let (dr, dc) = a.delta();
            from.offset(dr, dc) == Some(to)
        })
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a as u8
    }
}

impl TryFrom<u8> for Action {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        Action::from_index(v as usize).ok_or_else(|| format!("action index {v} out of range"))
    }
}

/// When the +3 finish reward is paid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishRewardMode {
    /// Every agent receives it on the step at which all agents stand on their goals.
    #[default]
    EpisodeSuccess,
    /// An agent receives it the first time it moves onto its own goal.
    OnArrival,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub step_limit: usize,
    pub finish_reward_mode: FinishRewardMode,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            step_limit: 512,
            finish_reward_mode: FinishRewardMode::EpisodeSuccess,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentState {
    pub id: usize,
    pub position: Pos,
    pub goal: Pos,
    pub done: bool,
}

/// Result of conflict resolution for one joint move.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub positions: Vec<Pos>,
    pub collided: Vec<bool>,
}

/// Resolve a joint move.
///
/// Moves off the map or into obstacles are reverted first. Then, repeatedly,
/// every mover involved in a vertex conflict (two agents on one cell) or an
/// edge conflict (two movers swapping cells) is reverted; all conflicts of a
/// round are collected before any reversion is applied. The loop stops when
/// a round finds nothing; the mover set shrinks every round so it terminates.
pub fn resolve_moves(map: &GridMap, current: &[Pos], actions: &[Action]) -> Resolution {
    let n = current.len();
    debug_assert_eq!(actions.len(), n);
    let mut target = current.to_vec();
    let mut moving = vec![false; n];
    let mut collided = vec![false; n];

    for i in 0..n {
        if actions[i] == Action::Stay {
            continue;
        }
        let (dr, dc) = actions[i].delta();
        match current[i].offset(dr, dc) {
            Some(p) if map.is_free(p) => {
                target[i] = p;
                moving[i] = true;
            }
            _ => collided[i] = true,
        }
    }

    let at_start: HashMap<Pos, usize> = current.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let mut occupancy: HashMap<Pos, u32> = HashMap::with_capacity(n);
    let mut revert = Vec::new();
    loop {
        occupancy.clear();
        for &t in &target {
            *occupancy.entry(t).or_insert(0) += 1;
        }
        revert.clear();
        for i in (0..n).filter(|&i| moving[i]) {
            let vertex = occupancy[&target[i]] > 1;
            let swap = at_start
                .get(&target[i])
                .is_some_and(|&j| j != i && moving[j] && target[j] == current[i]);
            if vertex || swap {
                revert.push(i);
            }
        }
        if revert.is_empty() {
            break;
        }
        for &i in &revert {
            moving[i] = false;
            target[i] = current[i];
            collided[i] = true;
        }
    }
    Resolution {
        positions: target,
        collided,
    }
}

/// All vertex and edge conflicts between two consecutive joint positions,
/// as `(i, j)` pairs with `i < j`. Brute force over pairs.
pub fn conflicts_between(before: &[Pos], after: &[Pos]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..after.len() {
        for j in i + 1..after.len() {
            let vertex = after[i] == after[j];
            let edge = after[i] == before[j] && after[j] == before[i] && after[i] != before[i];
            if vertex || edge {
                out.push((i, j));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub positions: Vec<Pos>,
    pub rewards: Vec<f64>,
    pub collided: Vec<bool>,
    pub episode_done: bool,
    pub success: bool,
    pub timestep: usize,
}

/// Full environment state for one episode.
#[derive(Debug, Clone)]
pub struct JointState {
    map: Arc<GridMap>,
    fields: Arc<Vec<DistanceField>>,
    goals: Vec<Pos>,
    positions: Vec<Pos>,
    arrived_once: Vec<bool>,
    timestep: usize,
    done: bool,
    success: bool,
    seed: u64,
    config: EnvConfig,
}

impl JointState {
    /// Start an episode. Starts must be distinct free cells, goals distinct
    /// free cells, and each goal reachable from its start.
    pub fn reset(
        map: Arc<GridMap>,
        starts: &[Pos],
        goals: &[Pos],
        seed: u64,
        config: EnvConfig,
    ) -> Result<Self, GridError> {
        if starts.len() != goals.len() {
            return Err(GridError::InvalidInstance(format!(
                "{} starts but {} goals",
                starts.len(),
                goals.len()
            )));
        }
        for (i, (&s, &g)) in starts.iter().zip(goals).enumerate() {
            if !map.is_free(s) {
                return Err(GridError::InvalidInstance(format!("start {s} of agent {i} is not free")));
            }
            if !map.is_free(g) {
                return Err(GridError::InvalidInstance(format!("goal {g} of agent {i} is not free")));
            }
        }
        check_distinct(starts, "start")?;
        check_distinct(goals, "goal")?;
        let fields = goals
            .iter()
            .map(|&g| compute_distance_field(&map, g))
            .collect::<Result<Vec<_>, _>>()?;
        for (i, (s, f)) in starts.iter().zip(&fields).enumerate() {
            if f.get(*s).is_none() {
                return Err(GridError::InvalidInstance(format!(
                    "goal of agent {i} is unreachable from its start"
                )));
            }
        }
        let positions = starts.to_vec();
        let all_home = positions.iter().zip(goals).all(|(p, g)| p == g);
        Ok(Self {
            map,
            fields: Arc::new(fields),
            goals: goals.to_vec(),
            arrived_once: positions.iter().zip(goals).map(|(p, g)| p == g).collect(),
            positions,
            timestep: 0,
            done: all_home,
            success: all_home,
            seed,
            config,
        })
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn map_arc(&self) -> &Arc<GridMap> {
        &self.map
    }

    pub fn num_agents(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Pos] {
        &self.positions
    }

    pub fn goals(&self) -> &[Pos] {
        &self.goals
    }

    pub fn distance_field(&self, agent: usize) -> &DistanceField {
        &self.fields[agent]
    }

    pub fn timestep(&self) -> usize {
        self.timestep
    }

    pub fn is_terminal(&self) -> bool {
        self.done
    }

    pub fn success(&self) -> bool {
        self.success
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn on_goal(&self, agent: usize) -> bool {
        self.positions[agent] == self.goals[agent]
    }

    pub fn arrived_count(&self) -> usize {
        (0..self.num_agents()).filter(|&i| self.on_goal(i)).count()
    }

    pub fn agents(&self) -> impl Iterator<Item = AgentState> + '_ {
        (0..self.num_agents()).map(move |id| AgentState {
            id,
            position: self.positions[id],
            goal: self.goals[id],
            done: self.success,
        })
    }

    pub fn step(&mut self, actions: &[Action]) -> Result<StepOutcome, GridError> {
        if self.done {
            return Err(GridError::Terminal);
        }
        if actions.len() != self.num_agents() {
            return Err(GridError::ActionCount {
                expected: self.num_agents(),
                got: actions.len(),
            });
        }
        let Resolution { positions, collided } = resolve_moves(&self.map, &self.positions, actions);

        let mut rewards: Vec<f64> = (0..positions.len())
            .map(|i| {
                if collided[i] {
                    REWARD_COLLISION
                } else if actions[i] != Action::Stay {
                    REWARD_MOVE
                } else if positions[i] == self.goals[i] {
                    REWARD_STAY_ON_GOAL
                } else {
                    REWARD_MOVE
                }
            })
            .collect();

        self.timestep += 1;
        let success = positions.iter().zip(&self.goals).all(|(p, g)| p == g);
        match self.config.finish_reward_mode {
            FinishRewardMode::EpisodeSuccess => {
                if success {
                    rewards.iter_mut().for_each(|r| *r = REWARD_FINISH);
                }
            }
            FinishRewardMode::OnArrival => {
                for i in 0..positions.len() {
                    let moved = positions[i] != self.positions[i];
                    if moved && positions[i] == self.goals[i] && !self.arrived_once[i] {
                        rewards[i] = REWARD_FINISH;
                        self.arrived_once[i] = true;
                    }
                }
            }
        }
        self.positions = positions;
        self.success = success;
        self.done = success || self.timestep >= self.config.step_limit;

        Ok(StepOutcome {
            positions: self.positions.clone(),
            rewards,
            collided,
            episode_done: self.done,
            success,
            timestep: self.timestep,
        })
    }
}

fn check_distinct(cells: &[Pos], what: &str) -> Result<(), GridError> {
    let mut seen = std::collections::HashSet::with_capacity(cells.len());
    for (i, c) in cells.iter().enumerate() {
        if !seen.insert(*c) {
            return Err(GridError::InvalidInstance(format!(
                "agent {i} shares its {what} cell {c} with another agent"
            )));
        }
    }
    Ok(())
}
