//! Episode metrics, seeded benchmark suites and CSV reports.
//!
//! A suite is a pure function of its [`SuiteConfig`]: one map per
//! (size, episode) shared by every agent count, with start/goal placements
//! redrawn per agent count. Every episode derives its own RNG stream from
//! (suite seed, size, episode, agent count), so parallel and serial runs
//! agree.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dqn::QNetwork;
use crate::gridworld::{Action, EnvConfig, GridError, GridMap, JointState, Pos, Scenario};
use crate::mapgen::{place_agents, MapGenConfig, MapGenError, MapStyle};
use crate::observation::batch_observations;
use crate::rng::derive_seed;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    MapGen(#[from] MapGenError),
    #[error("policy failed: {0}")]
    Policy(String),
    #[error("invalid suite: {0}")]
    Suite(String),
    #[error("report line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode_length: usize,
    /// Agents on their goals at termination.
    pub arrived: usize,
    pub n: usize,
    pub success: bool,
}

impl EpisodeMetrics {
    pub fn from_state(state: &JointState) -> Self {
        Self {
            episode_length: if state.success() {
                state.timestep()
            } else {
                state.config().step_limit
            },
            arrived: state.arrived_count(),
            n: state.num_agents(),
            success: state.success(),
        }
    }
}

/// Aggregate over a set of episodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub episodes: usize,
    pub mean_el: f64,
    /// Total arrivals over total agents.
    pub ar: f64,
    /// Successes over episodes.
    pub sr: f64,
}

pub fn summarize(metrics: &[EpisodeMetrics]) -> Summary {
    let episodes = metrics.len();
    if episodes == 0 {
        return Summary {
            episodes,
            mean_el: f64::NAN,
            ar: f64::NAN,
            sr: f64::NAN,
        };
    }
    let el: usize = metrics.iter().map(|m| m.episode_length).sum();
    let arrived: usize = metrics.iter().map(|m| m.arrived).sum();
    let agents: usize = metrics.iter().map(|m| m.n).sum();
    let wins = metrics.iter().filter(|m| m.success).count();
    Summary {
        episodes,
        mean_el: el as f64 / episodes as f64,
        ar: if agents == 0 { f64::NAN } else { arrived as f64 / agents as f64 },
        sr: wins as f64 / episodes as f64,
    }
}

/// A concrete problem: map, starts, goals and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub map: Arc<GridMap>,
    pub starts: Vec<Pos>,
    pub goals: Vec<Pos>,
    pub map_size: usize,
    pub n_agents: usize,
    pub suite_seed: u64,
    pub episode: usize,
    /// Seed recorded on the environment.
    pub seed: u64,
}

impl Instance {
    pub fn reset(&self, config: EnvConfig) -> Result<JointState, GridError> {
        JointState::reset(Arc::clone(&self.map), &self.starts, &self.goals, self.seed, config)
    }

    pub fn to_scenario(&self) -> Scenario {
        Scenario::inline(&self.map, self.starts.clone(), self.goals.clone(), self.seed)
    }

    pub fn from_scenario(scenario: &Scenario, map: GridMap) -> Self {
        Self {
            map_size: map.width().max(map.height()),
            n_agents: scenario.starts.len(),
            map: Arc::new(map),
            starts: scenario.starts.clone(),
            goals: scenario.goals.clone(),
            suite_seed: 0,
            episode: 0,
            seed: scenario.seed,
        }
    }
}

/// Per-episode decision maker.
pub trait Controller {
    fn act(&mut self, state: &JointState) -> Result<Vec<Action>, BenchError>;
}

/// Something that can drive episodes; shared across worker threads.
pub trait Policy: Sync {
    fn controller<'a>(&'a self, instance: &Instance) -> Result<Box<dyn Controller + 'a>, BenchError>;
}

/// Every agent stays put forever.
#[derive(Debug, Clone, Copy, Default)]
pub struct StationaryPolicy;

struct Stationary;

impl Controller for Stationary {
    fn act(&mut self, state: &JointState) -> Result<Vec<Action>, BenchError> {
        Ok(vec![Action::Stay; state.num_agents()])
    }
}

impl Policy for StationaryPolicy {
    fn controller<'a>(&'a self, _: &Instance) -> Result<Box<dyn Controller + 'a>, BenchError> {
        Ok(Box::new(Stationary))
    }
}

/// Decentralized greedy execution of a Q-network: each agent picks the
/// argmax of its own observation's Q-values.
pub struct GreedyPolicy<'n, T: Scalar> {
    net: &'n QNetwork<T>,
}

impl<'n, T: Scalar> GreedyPolicy<'n, T> {
    pub fn new(net: &'n QNetwork<T>) -> Self {
        Self { net }
    }
}

struct Greedy<'n, T: Scalar> {
    net: &'n QNetwork<T>,
}

impl<T: Scalar> Controller for Greedy<'_, T> {
    fn act(&mut self, state: &JointState) -> Result<Vec<Action>, BenchError> {
        let obs = batch_observations(state, self.net.config().fov).map_err(|e| BenchError::Policy(e.to_string()))?;
        let refs: Vec<_> = obs.iter().collect();
        self.net
            .greedy_actions(&refs)
            .map_err(|e| BenchError::Policy(e.to_string()))
    }
}

impl<T: Scalar> Policy for GreedyPolicy<'_, T> {
    fn controller<'a>(&'a self, _: &Instance) -> Result<Box<dyn Controller + 'a>, BenchError> {
        Ok(Box::new(Greedy { net: self.net }))
    }
}

/// Per-step record of an episode, for `replay`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub actions: Vec<Action>,
    pub positions: Vec<Pos>,
    pub rewards: Vec<f64>,
    pub collided: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// Map in the text format.
    pub map: String,
    pub starts: Vec<Pos>,
    pub goals: Vec<Pos>,
    pub steps: Vec<TraceStep>,
    pub metrics: EpisodeMetrics,
}

impl Trace {
    /// ASCII frames: `#` obstacle, `.` free, agents as `0-9a-zA-Z` (cycled),
    /// goals without their agent as `*`.
    pub fn render(&self) -> Result<String, GridError> {
        let map = GridMap::parse(&self.map)?;
        let mut out = String::new();
        let glyph = |i: usize| {
            const G: &[u8] = b"0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
            G[i % G.len()] as char
        };
        let frame = |out: &mut String, t: usize, positions: &[Pos], actions: Option<&[Action]>| {
            let _ = write!(out, "t={t}");
            if let Some(a) = actions {
                let names: Vec<String> = a.iter().map(|x| format!("{x:?}")).collect();
                let _ = write!(out, " actions=[{}]", names.join(","));
            }
            out.push('\n');
            for r in 0..map.height() {
                for c in 0..map.width() {
                    let p = Pos::new(r, c);
                    let ch = if let Some(i) = positions.iter().position(|&q| q == p) {
                        glyph(i)
                    } else if map.is_blocked(p) {
                        '#'
                    } else if self.goals.contains(&p) {
                        '*'
                    } else {
                        '.'
                    };
                    out.push(ch);
                }
                out.push('\n');
            }
            out.push('\n');
        };
        frame(&mut out, 0, &self.starts, None);
        for s in &self.steps {
            frame(&mut out, s.t, &s.positions, Some(&s.actions));
        }
        let m = &self.metrics;
        let _ = writeln!(
            out,
            "EL={} arrived={}/{} success={}",
            m.episode_length, m.arrived, m.n, m.success
        );
        Ok(out)
    }
}

/// Roll `policy` on `instance` until success or `step_limit`.
pub fn run_episode(
    policy: &dyn Policy,
    instance: &Instance,
    step_limit: usize,
    record: bool,
) -> Result<(EpisodeMetrics, Option<Trace>), BenchError> {
    let mut state = instance.reset(EnvConfig {
        step_limit,
        ..EnvConfig::default()
    })?;
    let mut controller = policy.controller(instance)?;
    let mut steps = Vec::new();
    while !state.is_terminal() {
        let actions = controller.act(&state)?;
        let out = state.step(&actions)?;
        if record {
            steps.push(TraceStep {
                t: out.timestep,
                actions,
                positions: out.positions,
                rewards: out.rewards,
                collided: out.collided,
            });
        }
    }
    let metrics = EpisodeMetrics::from_state(&state);
    let trace = record.then(|| Trace {
        map: instance.map.to_text(&[]),
        starts: instance.starts.clone(),
        goals: instance.goals.clone(),
        steps,
        metrics,
    });
    Ok((metrics, trace))
}

/// Metrics for each instance, in input order.
pub fn run_instances(policy: &dyn Policy, instances: &[Instance], step_limit: usize) -> Result<Vec<EpisodeMetrics>, BenchError> {
    instances
        .par_iter()
        .map(|inst| run_episode(policy, inst, step_limit, false).map(|(m, _)| m))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub sizes: Vec<usize>,
    pub agent_counts: Vec<usize>,
    pub episodes: usize,
    pub seed: u64,
    pub style: MapStyle,
    pub obstacle_density: f64,
    pub room_min: usize,
    pub corridor_widths: Vec<usize>,
    pub step_limit: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            sizes: vec![10, 20, 40],
            agent_counts: vec![4, 8, 16, 32],
            episodes: 50,
            seed: 0,
            style: MapStyle::Room,
            obstacle_density: 0.1,
            room_min: 3,
            corridor_widths: vec![1, 2],
            step_limit: 512,
        }
    }
}

impl SuiteConfig {
    /// The large grid: sizes up to 60, up to 128 agents, 200 episodes each.
    pub fn full() -> Self {
        Self {
            sizes: vec![10, 20, 40, 60],
            agent_counts: vec![4, 8, 16, 32, 64, 128],
            episodes: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.sizes.is_empty() || self.agent_counts.is_empty() || self.episodes == 0 {
            return Err(BenchError::Suite("sizes, agent counts and episodes must be non-empty".into()));
        }
        if self.agent_counts.contains(&0) || self.step_limit == 0 {
            return Err(BenchError::Suite("agent counts and step limit must be positive".into()));
        }
        self.map_config(self.sizes[0], 0).validate()?;
        for &s in &self.sizes {
            self.map_config(s, 0).validate()?;
        }
        Ok(())
    }

    fn map_config(&self, size: usize, seed: u64) -> MapGenConfig {
        MapGenConfig {
            size,
            style: self.style,
            obstacle_density: self.obstacle_density,
            room_min: self.room_min,
            corridor_widths: self.corridor_widths.clone(),
            seed,
        }
    }

    /// Comment lines describing the suite (written at the top of reports).
    pub fn header(&self) -> Vec<String> {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        vec![
            format!(
                "suite: sizes={} agents={} episodes={} seed={} step_limit={}",
                list(&self.sizes),
                list(&self.agent_counts),
                self.episodes,
                self.seed,
                self.step_limit
            ),
            format!(
                "maps: style={} density={} room_min={} corridor_widths={}",
                self.style,
                self.obstacle_density,
                self.room_min,
                list(&self.corridor_widths)
            ),
            "instances: one map per (size, episode) shared across agent counts; placements redrawn per agent count"
                .to_string(),
        ]
    }
}

/// Every instance of the suite, ordered by size, agent count, episode.
pub fn build_suite(config: &SuiteConfig) -> Result<Vec<Instance>, BenchError> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.sizes.len() * config.agent_counts.len() * config.episodes);
    for &size in &config.sizes {
        let maps = (0..config.episodes)
            .map(|ep| {
                let seed = derive_seed(config.seed, &[size as u64, ep as u64]);
                config.map_config(size, seed).generate().map(Arc::new)
            })
            .collect::<Result<Vec<_>, _>>()?;
        for &n in &config.agent_counts {
            for (ep, map) in maps.iter().enumerate() {
                let seed = derive_seed(config.seed, &[size as u64, ep as u64, n as u64]);
                let (starts, goals) = place_agents(map, n, seed)?;
                out.push(Instance {
                    map: Arc::clone(map),
                    starts,
                    goals,
                    map_size: size,
                    n_agents: n,
                    suite_seed: config.seed,
                    episode: ep,
                    seed,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeRow {
    pub map_size: usize,
    pub n_agents: usize,
    pub seed: u64,
    pub episode: usize,
    pub metrics: EpisodeMetrics,
}

pub const REPORT_COLUMNS: &str = "map_size,n_agents,seed,episode,el,arrived,n,success";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub header: Vec<String>,
    pub rows: Vec<EpisodeRow>,
}

impl BenchmarkReport {
    /// Per (map size, agent count) aggregates, recomputed from the rows.
    pub fn aggregates(&self) -> Vec<((usize, usize), Summary)> {
        let mut groups: BTreeMap<(usize, usize), Vec<EpisodeMetrics>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry((r.map_size, r.n_agents)).or_default().push(r.metrics);
        }
        groups.into_iter().map(|(k, v)| (k, summarize(&v))).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for h in &self.header {
            let _ = writeln!(out, "# {h}");
        }
        out.push_str(REPORT_COLUMNS);
        out.push('\n');
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.map_size, r.n_agents, r.seed, r.episode, m.episode_length, m.arrived, m.n, m.success as u8
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, BenchError> {
        let mut header = Vec::new();
        let mut rows = Vec::new();
        let mut seen_columns = false;
        for (i, line) in text.lines().enumerate() {
            let err = |msg: String| BenchError::Parse { line: i + 1, msg };
            if let Some(h) = line.strip_prefix('#') {
                header.push(h.trim_start().to_string());
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !seen_columns {
                if line.trim() != REPORT_COLUMNS {
                    return Err(err(format!("expected column header {REPORT_COLUMNS:?}")));
                }
                seen_columns = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 8 {
                return Err(err(format!("expected 8 fields, got {}", f.len())));
            }
            let num = |k: usize| f[k].parse::<u64>().map_err(|e| err(format!("field {}: {e}", k + 1)));
            let success = match f[7] {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(err(format!("bad success flag {other:?}"))),
            };
            rows.push(EpisodeRow {
                map_size: num(0)? as usize,
                n_agents: num(1)? as usize,
                seed: num(2)?,
                episode: num(3)? as usize,
                metrics: EpisodeMetrics {
                    episode_length: num(4)? as usize,
                    arrived: num(5)? as usize,
                    n: num(6)? as usize,
                    success,
                },
            });
        }
        if !seen_columns {
            return Err(BenchError::Parse {
                line: 0,
                msg: "missing column header".into(),
            });
        }
        Ok(Self { header, rows })
    }

    /// Human-readable aggregate table.
    pub fn summary_table(&self) -> String {
        let mut out = String::from("map_size n_agents episodes    EL      AR      SR\n");
        for ((size, n), s) in self.aggregates() {
            let _ = writeln!(
                out,
                "{size:>8} {n:>8} {:>8} {:>7.2} {:>6.1}% {:>6.1}%",
                s.episodes,
                s.mean_el,
                100.0 * s.ar,
                100.0 * s.sr
            );
        }
        out
    }
}

/// Evaluate `policy` on every instance of the suite.
pub fn run_benchmark(policy: &dyn Policy, suite: &SuiteConfig) -> Result<BenchmarkReport, BenchError> {
    let instances = build_suite(suite)?;
    let metrics = run_instances(policy, &instances, suite.step_limit)?;
    Ok(report_from(suite, &instances, metrics))
}

pub fn report_from(suite: &SuiteConfig, instances: &[Instance], metrics: Vec<EpisodeMetrics>) -> BenchmarkReport {
    let rows = instances
        .iter()
        .zip(metrics)
        .map(|(inst, metrics)| EpisodeRow {
            map_size: inst.map_size,
            n_agents: inst.n_agents,
            seed: inst.suite_seed,
            episode: inst.episode,
            metrics,
        })
        .collect();
    BenchmarkReport {
        header: suite.header(),
        rows,
    }
}
