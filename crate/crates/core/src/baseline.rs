//! Prioritized space-time A* planning and a plan validator.
//!
//! Agents are planned one at a time in priority order. Each path avoids the
//! vertex and edge reservations of the agents planned before it, and once
//! an agent reaches its goal it parks there for the rest of time, so later
//! agents route around it. The planner is complete for neither ordering nor
//! instance; failures are reported, not raised.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bench::{BenchError, Controller, Instance, Policy};
use crate::gridworld::{compute_distance_field, Action, DistanceField, GridMap, JointState, Pos};
use crate::rng::SeededRng;

pub const DEFAULT_HORIZON: usize = 512;
pub const DEFAULT_RETRIES: usize = 8;

/// Space-time claims of already planned agents.
#[derive(Debug, Clone, Default)]
pub struct ReservationTable {
    vertex: HashSet<(Pos, usize)>,
    /// `(from, to, t)`: a move leaving `from` at `t` and entering `to` at `t + 1`.
    edge: HashSet<(Pos, Pos, usize)>,
    /// Cell occupied from the given time onwards.
    parked: HashMap<Pos, usize>,
    /// Latest vertex reservation per cell.
    latest: HashMap<Pos, usize>,
}

impl ReservationTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reserve_vertex(&mut self, cell: Pos, t: usize) {
        self.vertex.insert((cell, t));
        let e = self.latest.entry(cell).or_insert(t);
        *e = (*e).max(t);
    }

    pub fn reserve_edge(&mut self, from: Pos, to: Pos, t: usize) {
        self.edge.insert((from, to, t));
    }

    /// Occupy `cell` at every time `>= from_t`.
    pub fn park(&mut self, cell: Pos, from_t: usize) {
        let e = self.parked.entry(cell).or_insert(from_t);
        *e = (*e).min(from_t);
    }

    pub fn vertex_taken(&self, cell: Pos, t: usize) -> bool {
        self.vertex.contains(&(cell, t)) || self.parked.get(&cell).is_some_and(|&p| t >= p)
    }

    pub fn edge_taken(&self, from: Pos, to: Pos, t: usize) -> bool {
        self.edge.contains(&(from, to, t))
    }

    /// True if nobody else needs `cell` at any time `>= t`.
    pub fn free_from(&self, cell: Pos, t: usize) -> bool {
        !self.parked.contains_key(&cell) && self.latest.get(&cell).map_or(true, |&l| l < t)
    }

    /// Reserve a path (position at each time) and park at its last cell.
    pub fn reserve_path(&mut self, path: &[Pos]) {
        for (t, &c) in path.iter().enumerate() {
            self.reserve_vertex(c, t);
        }
        for (t, w) in path.windows(2).enumerate() {
            if w[0] != w[1] {
                self.reserve_edge(w[0], w[1], t);
            }
        }
        if let Some(&last) = path.last() {
            self.park(last, path.len() - 1);
        }
    }

    /// Whether moving `from -> to` between `t` and `t + 1` clashes with a reservation.
    pub fn blocks(&self, from: Pos, to: Pos, t: usize) -> bool {
        self.vertex_taken(to, t + 1) || (from != to && self.edge_taken(to, from, t))
    }
}

/// Shortest path in (cell, time) from `start` to `goal` that respects
/// `reservations` and can stay at `goal` forever. Cost is the arrival time.
/// Returns the position at every time `0..=arrival`, or `None` if no such
/// path arrives by `horizon`.
pub fn space_time_astar(
    map: &GridMap,
    start: Pos,
    goal: Pos,
    reservations: &ReservationTable,
    horizon: usize,
) -> Option<Vec<Pos>> {
    let field = compute_distance_field(map, goal).ok()?;
    astar_with_field(map, start, goal, &field, reservations, horizon)
}

fn astar_with_field(
    map: &GridMap,
    start: Pos,
    goal: Pos,
    field: &DistanceField,
    res: &ReservationTable,
    horizon: usize,
) -> Option<Vec<Pos>> {
    if !map.is_free(start) || !map.is_free(goal) {
        return None;
    }
    let h0 = field.get(start)? as usize;
    if res.vertex_taken(start, 0) {
        return None;
    }
    // Node storage; parents index into it.
    let mut nodes: Vec<(Pos, usize, usize)> = vec![(start, 0, usize::MAX)];
    let mut seen: HashSet<(Pos, usize)> = HashSet::from([(start, 0)]);
    // (f, t, action index, insertion counter, node)
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((h0, 0usize, 0usize, 0usize, 0usize)));
    let mut counter = 1;
    while let Some(Reverse((_, t, _, _, id))) = heap.pop() {
        let (cell, _, _) = nodes[id];
        if cell == goal && res.free_from(goal, t) {
            let mut path = Vec::with_capacity(t + 1);
            let mut k = id;
            while k != usize::MAX {
                path.push(nodes[k].0);
                k = nodes[k].2;
            }
            path.reverse();
            return Some(path);
        }
        if t >= horizon {
            continue;
        }
        for (ai, a) in Action::ALL.iter().enumerate() {
            let (dr, dc) = a.delta();
            let Some(next) = cell.offset(dr, dc).filter(|&p| map.is_free(p)) else {
                continue;
            };
            let Some(h) = field.get(next) else { continue };
            let nt = t + 1;
            if nt + h as usize > horizon || res.blocks(cell, next, t) || !seen.insert((next, nt)) {
                continue;
            }
            nodes.push((next, nt, id));
            heap.push(Reverse((nt + h as usize, nt, ai, counter, nodes.len() - 1)));
            counter += 1;
        }
    }
    None
}

/// Per-agent positions over a common horizon (shorter paths padded with goal waits).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub paths: Vec<Vec<Pos>>,
}

impl Plan {
    pub fn from_paths(mut paths: Vec<Vec<Pos>>) -> Self {
        let len = paths.iter().map(Vec::len).max().unwrap_or(0);
        for p in &mut paths {
            if let Some(&last) = p.last() {
                p.resize(len, last);
            }
        }
        Self { paths }
    }

    pub fn num_agents(&self) -> usize {
        self.paths.len()
    }

    /// Last timestep index (paths have `horizon + 1` entries).
    pub fn horizon(&self) -> usize {
        self.paths.first().map_or(0, |p| p.len().saturating_sub(1))
    }

    pub fn position(&self, agent: usize, t: usize) -> Pos {
        let p = &self.paths[agent];
        p[t.min(p.len() - 1)]
    }

    /// Drop trailing timesteps in which every agent merely waits.
    pub fn trimmed(&self) -> Plan {
        let mut len = self.horizon() + 1;
        while len > 1 && self.paths.iter().all(|p| p[len - 1] == p[len - 2]) {
            len -= 1;
        }
        Plan {
            paths: self.paths.iter().map(|p| p[..len].to_vec()).collect(),
        }
    }

    /// Sum over agents of the last time each one arrives at its final cell.
    pub fn sum_of_costs(&self) -> usize {
        self.paths
            .iter()
            .map(|p| {
                let last = *p.last().expect("non-empty");
                p.iter().rposition(|&c| c != last).map_or(0, |i| i + 1)
            })
            .sum()
    }

    /// First time at which every agent is on its final cell simultaneously.
    pub fn first_all_at_goal(&self) -> usize {
        let goals: Vec<Pos> = self.paths.iter().map(|p| *p.last().expect("non-empty")).collect();
        (0..=self.horizon())
            .find(|&t| (0..self.num_agents()).all(|i| self.position(i, t) == goals[i]))
            .unwrap_or(self.horizon())
    }

    /// Action of `agent` moving from time `t` to `t + 1`; `Stay` past the end.
    pub fn action(&self, agent: usize, t: usize) -> Action {
        Action::between(self.position(agent, t), self.position(agent, t + 1)).unwrap_or(Action::Stay)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanFailure {
    /// First agent (by id) that could not be planned.
    pub agent: usize,
    /// Priority order of the last attempt.
    pub order: Vec<usize>,
}

impl fmt::Display for PlanFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "no path for agent {} under order {:?}", self.agent, self.order)
    }
}

/// Plan agents in `order`, each avoiding the ones before it.
pub fn prioritized_plan(
    map: &GridMap,
    starts: &[Pos],
    goals: &[Pos],
    order: &[usize],
    horizon: usize,
) -> Result<Plan, PlanFailure> {
    let n = starts.len();
    assert_eq!(goals.len(), n, "starts and goals differ in length");
    let fields: Vec<Option<DistanceField>> = goals.iter().map(|&g| compute_distance_field(map, g).ok()).collect();
    plan_order(map, starts, goals, &fields, order, horizon)
}

fn plan_order(
    map: &GridMap,
    starts: &[Pos],
    goals: &[Pos],
    fields: &[Option<DistanceField>],
    order: &[usize],
    horizon: usize,
) -> Result<Plan, PlanFailure> {
    let n = starts.len();
    let fail = |agent| PlanFailure {
        agent,
        order: order.to_vec(),
    };
    let mut res = ReservationTable::new();
    // Unplanned agents still sit on their starts at t = 0.
    for &s in starts {
        res.reserve_vertex(s, 0);
    }
    let mut paths = vec![Vec::new(); n];
    for &i in order {
        res.vertex.remove(&(starts[i], 0));
        let field = fields[i].as_ref().ok_or_else(|| fail(i))?;
        let path = astar_with_field(map, starts[i], goals[i], field, &res, horizon).ok_or_else(|| fail(i))?;
        res.reserve_path(&path);
        paths[i] = path;
    }
    Ok(Plan::from_paths(paths))
}

/// Ascending BFS start-goal distance, ties by agent id.
pub fn default_order(map: &GridMap, starts: &[Pos], goals: &[Pos]) -> Vec<usize> {
    let dist: Vec<u32> = starts
        .iter()
        .zip(goals)
        .map(|(&s, &g)| {
            compute_distance_field(map, g)
                .ok()
                .and_then(|f| f.get(s))
                .unwrap_or(u32::MAX)
        })
        .collect();
    let mut order: Vec<usize> = (0..starts.len()).collect();
    order.sort_by_key(|&i| (dist[i], i));
    order
}

/// Default order first, then up to `retries` seeded random reorderings.
pub fn plan_with_restarts(
    map: &GridMap,
    starts: &[Pos],
    goals: &[Pos],
    horizon: usize,
    retries: usize,
    seed: u64,
) -> Result<Plan, PlanFailure> {
    let fields: Vec<Option<DistanceField>> = goals.iter().map(|&g| compute_distance_field(map, g).ok()).collect();
    let mut order = default_order(map, starts, goals);
    let mut rng = SeededRng::new(seed);
    let mut last = plan_order(map, starts, goals, &fields, &order, horizon);
    for _ in 0..retries {
        let Err(failure) = &last else { break };
        // Move the failing agent to the front, shuffle the rest.
        let stuck = failure.agent;
        order.retain(|&i| i != stuck);
        rng.shuffle(&mut order);
        order.insert(0, stuck);
        last = plan_order(map, starts, goals, &fields, &order, horizon);
    }
    last
}

/// First problem found by [`validate_plan`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanConflict {
    /// Paths of different lengths, or an empty path.
    Shape { agent: usize },
    OutOfBounds { agent: usize, t: usize, pos: Pos },
    Obstacle { agent: usize, t: usize, pos: Pos },
    /// Consecutive cells are neither equal nor 4-adjacent.
    Jump { agent: usize, t: usize, from: Pos, to: Pos },
    /// Two agents on one cell at time `t`.
    Vertex { a: usize, b: usize, t: usize, pos: Pos },
    /// Two agents swap cells between `t - 1` and `t`.
    Edge { a: usize, b: usize, t: usize },
    /// Path does not start/end where the instance says.
    Endpoint { agent: usize },
}

impl fmt::Display for PlanConflict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Exhaustive check, in time order, of bounds, obstacles, adjacency and
/// vertex/edge conflicts.
pub fn validate_plan(map: &GridMap, plan: &Plan) -> Result<(), PlanConflict> {
    let n = plan.num_agents();
    let len = plan.paths.first().map_or(0, Vec::len);
    for (agent, p) in plan.paths.iter().enumerate() {
        if p.is_empty() || p.len() != len {
            return Err(PlanConflict::Shape { agent });
        }
    }
    let mut occupied: HashMap<Pos, usize> = HashMap::with_capacity(n);
    for t in 0..len {
        occupied.clear();
        for (agent, p) in plan.paths.iter().enumerate() {
            let pos = p[t];
            if !map.in_bounds(pos) {
                return Err(PlanConflict::OutOfBounds { agent, t, pos });
            }
            if map.is_blocked(pos) {
                return Err(PlanConflict::Obstacle { agent, t, pos });
            }
            if t > 0 && p[t - 1].manhattan(pos) > 1 {
                return Err(PlanConflict::Jump {
                    agent,
                    t,
                    from: p[t - 1],
                    to: pos,
                });
            }
            if let Some(&a) = occupied.get(&pos) {
                return Err(PlanConflict::Vertex { a, b: agent, t, pos });
            }
            occupied.insert(pos, agent);
        }
        if t > 0 {
            for a in 0..n {
                for b in a + 1..n {
                    let (pa, pb) = (&plan.paths[a], &plan.paths[b]);
                    if pa[t] == pb[t - 1] && pb[t] == pa[t - 1] && pa[t] != pa[t - 1] {
                        return Err(PlanConflict::Edge { a, b, t });
                    }
                }
            }
        }
    }
    Ok(())
}

/// [`validate_plan`] plus start/goal agreement with an instance.
pub fn validate_plan_for(map: &GridMap, plan: &Plan, starts: &[Pos], goals: &[Pos]) -> Result<(), PlanConflict> {
    if plan.num_agents() != starts.len() {
        return Err(PlanConflict::Shape { agent: plan.num_agents().min(starts.len()) });
    }
    validate_plan(map, plan)?;
    for (agent, p) in plan.paths.iter().enumerate() {
        if p[0] != starts[agent] || *p.last().expect("non-empty") != goals[agent] {
            return Err(PlanConflict::Endpoint { agent });
        }
    }
    Ok(())
}

/// Plans each instance with [`plan_with_restarts`] and replays the plan;
/// if planning fails every agent stays put.
#[derive(Debug, Clone, Copy)]
pub struct PlannerPolicy {
    pub horizon: usize,
    pub retries: usize,
}

impl Default for PlannerPolicy {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            retries: DEFAULT_RETRIES,
        }
    }
}

struct Replay {
    plan: Option<Plan>,
}

impl Controller for Replay {
    fn act(&mut self, state: &JointState) -> Result<Vec<Action>, BenchError> {
        let n = state.num_agents();
        Ok(match &self.plan {
            Some(p) => (0..n).map(|i| p.action(i, state.timestep())).collect(),
            None => vec![Action::Stay; n],
        })
    }
}

impl Policy for PlannerPolicy {
    fn controller<'a>(&'a self, inst: &Instance) -> Result<Box<dyn Controller + 'a>, BenchError> {
        let plan = plan_with_restarts(&inst.map, &inst.starts, &inst.goals, self.horizon, self.retries, inst.seed).ok();
        Ok(Box::new(Replay { plan }))
    }
}

/// Replays a fixed plan.
pub struct PlanReplayPolicy {
    pub plan: Plan,
}

impl Policy for PlanReplayPolicy {
    fn controller<'a>(&'a self, _: &Instance) -> Result<Box<dyn Controller + 'a>, BenchError> {
        Ok(Box::new(Replay {
            plan: Some(self.plan.clone()),
        }))
    }
}
