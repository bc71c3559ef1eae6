//! Per-agent local observations.
//!
//! Each agent sees an `fov x fov` window centred on itself, as six binary
//! channels: obstacles (off-map cells count as obstacles), other agents, and
//! one heuristic channel per move (Up, Down, Left, Right) that is set at a
//! free cell when that move from the cell strictly reduces the BFS distance
//! to the observing agent's goal.

use thiserror::Error;

use crate::gridworld::{Action, JointState, Pos};

pub const CHANNELS: usize = 6;
pub const CH_OBSTACLE: usize = 0;
pub const CH_AGENT: usize = 1;
/// First heuristic channel; the four follow in [`Action::MOVES`] order.
pub const CH_HEURISTIC: usize = 2;

pub const DEFAULT_FOV: usize = 9;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ObservationError {
    #[error("agent index {index} out of range for {count} agents")]
    BadAgent { index: usize, count: usize },
    #[error("field of view must be odd and at least 3, got {0}")]
    BadFov(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ObservationTensor {
    fov: usize,
    data: Vec<u8>,
}

impl ObservationTensor {
    pub fn zeros(fov: usize) -> Self {
        Self {
            fov,
            data: vec![0; CHANNELS * fov * fov],
        }
    }

    pub fn from_raw(fov: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), CHANNELS * fov * fov);
        Self { fov, data }
    }

    pub fn fov(&self) -> usize {
        self.fov
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> u8 {
        self.data[(channel * self.fov + row) * self.fov + col]
    }

    fn set(&mut self, channel: usize, row: usize, col: usize) {
        self.data[(channel * self.fov + row) * self.fov + col] = 1;
    }

    /// Channel-major `[channel][row][col]` values.
    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn center(&self) -> usize {
        (self.fov - 1) / 2
    }

    /// ASCII dump: one labelled grid per channel.
    pub fn dump(&self) -> String {
        const NAMES: [&str; CHANNELS] = ["obstacles", "agents", "up", "down", "left", "right"];
        let mut out = String::new();
        for (ch, name) in NAMES.iter().enumerate() {
            out.push_str(&format!("[{name}]\n"));
            for r in 0..self.fov {
                for c in 0..self.fov {
                    out.push(if self.get(ch, r, c) == 1 { '1' } else { '.' });
                }
                out.push('\n');
            }
        }
        out
    }
}

fn check_fov(fov: usize) -> Result<(), ObservationError> {
    if fov < 3 || fov % 2 == 0 {
        Err(ObservationError::BadFov(fov))
    } else {
        Ok(())
    }
}

pub fn extract_observation(
    state: &JointState,
    agent: usize,
    fov: usize,
) -> Result<ObservationTensor, ObservationError> {
    check_fov(fov)?;
    if agent >= state.num_agents() {
        return Err(ObservationError::BadAgent {
            index: agent,
            count: state.num_agents(),
        });
    }
    let occupants = agent_occupancy(state);
    Ok(observe(state, &occupants, agent, fov))
}

/// Observations of every agent, in id order.
pub fn batch_observations(
    state: &JointState,
    fov: usize,
) -> Result<Vec<ObservationTensor>, ObservationError> {
    check_fov(fov)?;
    let occupants = agent_occupancy(state);
    Ok((0..state.num_agents())
        .map(|i| observe(state, &occupants, i, fov))
        .collect())
}

fn agent_occupancy(state: &JointState) -> Vec<u32> {
    let map = state.map();
    let mut occ = vec![u32::MAX; map.cell_count()];
    for (i, &p) in state.positions().iter().enumerate() {
        occ[map.index(p)] = i as u32;
    }
    occ
}

fn observe(state: &JointState, occupants: &[u32], agent: usize, fov: usize) -> ObservationTensor {
    let map = state.map();
    let field = state.distance_field(agent);
    let me = state.positions()[agent];
    let half = (fov - 1) / 2;
    let mut obs = ObservationTensor::zeros(fov);
    for r in 0..fov {
        for c in 0..fov {
            let cell = me.offset(r as isize - half as isize, c as isize - half as isize);
            let Some(cell) = cell.filter(|&p| map.in_bounds(p)) else {
                obs.set(CH_OBSTACLE, r, c);
                continue;
            };
            if map.is_blocked(cell) {
                obs.set(CH_OBSTACLE, r, c);
                continue;
            }
            let who = occupants[map.index(cell)];
            if who != u32::MAX && who as usize != agent {
                obs.set(CH_AGENT, r, c);
            }
            let Some(d) = field.get(cell) else { continue };
            for (k, mv) in Action::MOVES.iter().enumerate() {
                let (dr, dc) = mv.delta();
                let closer = cell
                    .offset(dr, dc)
                    .and_then(|n: Pos| field.get(n))
                    .is_some_and(|dn| dn < d);
                if closer {
                    obs.set(CH_HEURISTIC + k, r, c);
                }
            }
        }
    }
    obs
}
