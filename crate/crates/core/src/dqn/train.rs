use std::sync::Arc;

use super::config::TrainConfig;
use super::network::{argmax, QNetwork};
use super::replay::{ReplayBuffer, Transition};
use super::DqnError;
use crate::agentgraph::build_graph;
use crate::bench::{self, EpisodeMetrics, GreedyPolicy, Instance};
use crate::gridworld::{Action, EnvConfig, JointState};
use crate::mapgen::{place_agents, MapGenConfig};
use crate::nn::{Adam, AdamConfig, Gradients, Graph, SectionGroup, Tensor};
use crate::observation::{batch_observations, ObservationTensor};
use crate::rng::{derive_seed, SeededRng};
use crate::Scalar;

/// Settings that shape the loss, independent of the rollout schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub gamma: f64,
    pub section_weight: f64,
    pub double_dqn: bool,
    pub section_detach_encoder: bool,
}

impl LossOptions {
    pub fn from_config(c: &TrainConfig) -> Self {
        Self {
            gamma: c.gamma,
            section_weight: c.section_weight,
            double_dqn: c.double_dqn,
            section_detach_encoder: c.section_detach_encoder,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub td: T,
    pub section: T,
}

fn stacked<'a>(batch: &[&'a Transition], next: bool) -> Vec<&'a ObservationTensor> {
    batch
        .iter()
        .flat_map(|t| if next { &t.next_observations } else { &t.observations })
        .collect()
}

/// Bootstrapped targets `y` for every (transition, agent) row.
pub fn td_targets<T: Scalar>(
    net: &QNetwork<T>,
    target: &QNetwork<T>,
    batch: &[&Transition],
    gamma: f64,
    double_dqn: bool,
) -> Result<Vec<T>, DqnError> {
    let next = stacked(batch, true);
    let q_target = target.compute_q_batch(&next)?;
    let q_online = if double_dqn {
        Some(net.compute_q_batch(&next)?)
    } else {
        None
    };
    let gamma = T::lit(gamma);
    let mut y = Vec::with_capacity(next.len());
    let mut row = 0;
    for t in batch {
        for (&r, &done) in t.rewards.iter().zip(&t.dones) {
            let r = T::lit(r);
            y.push(if done {
                r
            } else {
                let qt = &q_target[row];
                let boot = match &q_online {
                    Some(qo) => qt[argmax(&qo[row])],
                    None => qt.iter().copied().fold(T::neg_infinity(), T::max),
                };
                r + gamma * boot
            });
            row += 1;
        }
    }
    Ok(y)
}

/// Forward and backward pass of `L_Q + section_weight * l_sec` on a batch.
pub fn loss_and_grad<T: Scalar>(
    net: &QNetwork<T>,
    target: &QNetwork<T>,
    batch: &[&Transition],
    opts: &LossOptions,
) -> Result<(LossBreakdown<T>, Gradients<T>), DqnError> {
    if batch.is_empty() {
        return Err(DqnError::Config("empty batch".into()));
    }
    let y = td_targets(net, target, batch, opts.gamma, opts.double_dqn)?;
    let obs = stacked(batch, false);
    let mut groups = Vec::with_capacity(batch.len());
    let mut actions = Vec::with_capacity(obs.len());
    let mut offset = 0;
    for t in batch {
        groups.push(SectionGroup {
            offset,
            count: t.agents(),
            edges: t.edges.clone(),
        });
        offset += t.agents();
        actions.extend(t.actions.iter().map(|a| a.index()));
    }
    let mut g = Graph::new(net.params());
    let x = g.input(net.input_tensor(&obs)?);
    let (fw, section_mapped) = net.layout().forward(&mut g, x, opts.section_detach_encoder)?;
    let qa = g.gather(fw.q, actions)?;
    let td = g.mse(qa, y)?;
    let sec = g.section_loss(section_mapped, groups)?;
    let total = if opts.section_weight > 0.0 {
        let weighted = g.scale(sec, T::lit(opts.section_weight));
        g.add(td, weighted)?
    } else {
        td
    };
    let grads = g.backward(total, &Tensor::scalar(T::one()))?;
    Ok((
        LossBreakdown {
            total: g.value(total).item(),
            td: g.value(td).item(),
            section: g.value(sec).item(),
        },
        grads,
    ))
}

/// Mean over rows of `(Q(s, a) - y)^2`, bootstrapping from `target`.
pub fn td_loss<T: Scalar>(net: &QNetwork<T>, target: &QNetwork<T>, batch: &[&Transition], gamma: f64) -> Result<T, DqnError> {
    let opts = LossOptions {
        gamma,
        section_weight: 0.0,
        double_dqn: false,
        section_detach_encoder: false,
    };
    Ok(loss_and_grad(net, target, batch, &opts)?.0.td)
}

/// `td_loss + section_weight * l_sec`, with `l_sec` on the current observations.
pub fn combined_loss<T: Scalar>(
    net: &QNetwork<T>,
    target: &QNetwork<T>,
    batch: &[&Transition],
    gamma: f64,
    section_weight: f64,
) -> Result<T, DqnError> {
    let opts = LossOptions {
        gamma,
        section_weight,
        double_dqn: false,
        section_detach_encoder: false,
    };
    Ok(loss_and_grad(net, target, batch, &opts)?.0.total)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    /// Environment steps taken so far.
    pub step: u64,
    /// Mean TD loss over the optimizer steps of this interval (NaN if none).
    pub l_q: f64,
    /// Mean section loss over the same steps.
    pub l_sec: f64,
    pub epsilon: f64,
    pub eval_sr: f64,
    pub eval_ar: f64,
    pub eval_el: f64,
}

pub const LOG_HEADER: &str = "step,L_Q,l_sec,epsilon,eval_SR,eval_AR,eval_EL";

impl LogRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.l_q, self.l_sec, self.epsilon, self.eval_sr, self.eval_ar, self.eval_el
        )
    }
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// Progress notifications from [`train_with`].
pub enum TrainEvent<'a, T: Scalar> {
    Log(&'a LogRow),
    Checkpoint { step: u64, net: &'a QNetwork<T> },
}

pub struct TrainOutcome<T: Scalar> {
    /// Weights at the end of training.
    pub net: QNetwork<T>,
    pub log: Vec<LogRow>,
    pub optimizer_steps: u64,
    /// Snapshot with the highest evaluation SR (latest on ties), if any
    /// evaluation ran.
    pub best: Option<BestSnapshot<T>>,
}

pub struct BestSnapshot<T: Scalar> {
    pub step: u64,
    pub eval_sr: f64,
    pub net: QNetwork<T>,
}

/// Draw one training/evaluation instance the way `config` describes.
pub fn sample_instance(config: &TrainConfig, rng: &mut SeededRng) -> Result<Instance, DqnError> {
    for _ in 0..100 {
        let size = rng.range_inclusive(config.map_size_min, config.map_size_max);
        let gen = MapGenConfig {
            size,
            style: config.map_style,
            obstacle_density: config.obstacle_density,
            seed: rng.next_u64(),
            ..MapGenConfig::default()
        };
        let Ok(map) = gen.generate() else { continue };
        let Ok((starts, goals)) = place_agents(&map, config.n_agents, rng.next_u64()) else {
            continue;
        };
        return Ok(Instance {
            map: Arc::new(map),
            starts,
            goals,
            map_size: size,
            n_agents: config.n_agents,
            suite_seed: 0,
            episode: 0,
            seed: rng.next_u64(),
        });
    }
    Err(DqnError::Config("could not generate a valid instance in 100 attempts".into()))
}

/// Held-out evaluation instances for `config` (a pure function of `eval_seed`).
pub fn eval_instances(config: &TrainConfig) -> Result<Vec<Instance>, DqnError> {
    (0..config.eval_episodes)
        .map(|k| {
            let mut rng = SeededRng::new(derive_seed(config.eval_seed, &[k as u64]));
            let mut inst = sample_instance(config, &mut rng)?;
            inst.suite_seed = config.eval_seed;
            inst.episode = k;
            Ok(inst)
        })
        .collect()
}

/// Greedy (epsilon = 0) rollouts of `net` on each instance.
pub fn evaluate<T: Scalar>(net: &QNetwork<T>, instances: &[Instance], step_limit: usize) -> Result<Vec<EpisodeMetrics>, DqnError> {
    let policy = GreedyPolicy::new(net);
    let out = bench::run_instances(&policy, instances, step_limit)?;
    Ok(out)
}

/// [`train_with`] on random instances and no event handling.
pub fn train<T: Scalar>(config: &TrainConfig) -> Result<TrainOutcome<T>, DqnError> {
    let c = config.clone();
    train_with(config, &mut |rng| sample_instance(&c, rng), &mut |_| Ok(()))
}

struct Episode {
    env: JointState,
    obs: Vec<ObservationTensor>,
    edges: Vec<(usize, usize)>,
}

fn start_episode(
    config: &TrainConfig,
    source: &mut dyn FnMut(&mut SeededRng) -> Result<Instance, DqnError>,
    rng: &mut SeededRng,
) -> Result<Episode, DqnError> {
    let env_config = EnvConfig {
        step_limit: config.episode_step_limit,
        ..EnvConfig::default()
    };
    loop {
        let inst = source(rng)?;
        let env = inst.reset(env_config)?;
        if env.is_terminal() {
            continue;
        }
        let obs = batch_observations(&env, config.network.fov)?;
        let edges = build_graph(env.positions(), config.network.fov).edges().to_vec();
        return Ok(Episode { env, obs, edges });
    }
}

/// Self-play training loop. `source` supplies fresh instances; `on_event`
/// sees every log row and checkpoint.
pub fn train_with<T: Scalar>(
    config: &TrainConfig,
    source: &mut dyn FnMut(&mut SeededRng) -> Result<Instance, DqnError>,
    on_event: &mut dyn FnMut(TrainEvent<'_, T>) -> Result<(), DqnError>,
) -> Result<TrainOutcome<T>, DqnError> {
    config.validate()?;
    let mut net = QNetwork::<T>::new(config.network.clone(), derive_seed(config.seed, &[1]))?;
    let mut log = Vec::new();
    if config.total_steps == 0 {
        return Ok(TrainOutcome {
            net,
            log,
            optimizer_steps: 0,
            best: None,
        });
    }
    let mut target = net.clone();
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
        net.params(),
    );
    let mut buffer = ReplayBuffer::new(config.buffer_capacity, derive_seed(config.seed, &[2]));
    let mut env_rng = SeededRng::new(derive_seed(config.seed, &[3]));
    let mut act_rng = SeededRng::new(derive_seed(config.seed, &[4]));
    let opts = LossOptions::from_config(config);
    let eval_set = eval_instances(config)?;
    let fov = config.network.fov;
    let warmup = config.learning_starts.max(1);

    let mut ep = start_episode(config, source, &mut env_rng)?;
    let mut optimizer_steps = 0u64;
    let mut best: Option<BestSnapshot<T>> = None;
    let (mut sum_q, mut sum_sec, mut count) = (0.0, 0.0, 0u64);

    for step in 0..config.total_steps {
        let epsilon = config.epsilon_at(step);
        let n = ep.env.num_agents();
        let explore: Vec<bool> = (0..n).map(|_| act_rng.unit() < epsilon).collect();
        let greedy = if explore.iter().all(|&e| e) {
            Vec::new()
        } else {
            let refs: Vec<_> = ep.obs.iter().collect();
            net.greedy_actions(&refs)?
        };
        let actions: Vec<Action> = explore
            .iter()
            .enumerate()
            .map(|(i, &e)| if e { Action::ALL[act_rng.below(Action::COUNT)] } else { greedy[i] })
            .collect();
        let outcome = ep.env.step(&actions)?;
        let next_obs = batch_observations(&ep.env, fov)?;
        let next_edges = build_graph(ep.env.positions(), fov).edges().to_vec();
        let finished = outcome.episode_done;
        buffer.push(Transition {
            observations: std::mem::take(&mut ep.obs),
            edges: std::mem::take(&mut ep.edges),
            actions,
            rewards: outcome.rewards,
            next_observations: next_obs.clone(),
            next_edges: next_edges.clone(),
            dones: vec![outcome.success; n],
        });
        if finished {
            ep = start_episode(config, source, &mut env_rng)?;
        } else {
            ep.obs = next_obs;
            ep.edges = next_edges;
        }

        if buffer.len() >= warmup.max(config.batch_size) && (step + 1) % config.train_every == 0 {
            let batch = buffer.sample(config.batch_size);
            let (loss, mut grads) = loss_and_grad(&net, &target, &batch, &opts)?;
            if let Some(clip) = config.grad_clip {
                let norm = grads.global_norm().as_f64();
                if norm > clip {
                    grads.scale(T::lit(clip / norm));
                }
            }
            adam.step(net.params_mut(), &grads);
            optimizer_steps += 1;
            sum_q += loss.td.as_f64();
            sum_sec += loss.section.as_f64();
            count += 1;
            if optimizer_steps % config.target_sync == 0 {
                target.params_mut().assign_from(net.params())?;
            }
        }

        let done_steps = step + 1;
        if done_steps % config.eval_every == 0 || done_steps == config.total_steps {
            let metrics = evaluate(&net, &eval_set, config.eval_step_limit)?;
            let summary = bench::summarize(&metrics);
            let mean = |s: f64| if count > 0 { s / count as f64 } else { f64::NAN };
            let row = LogRow {
                step: done_steps,
                l_q: mean(sum_q),
                l_sec: mean(sum_sec),
                epsilon,
                eval_sr: summary.sr,
                eval_ar: summary.ar,
                eval_el: summary.mean_el,
            };
            if best.as_ref().map_or(true, |b| summary.sr >= b.eval_sr) {
                best = Some(BestSnapshot {
                    step: done_steps,
                    eval_sr: summary.sr,
                    net: net.clone(),
                });
            }
            on_event(TrainEvent::Log(&row))?;
            log.push(row);
            (sum_q, sum_sec, count) = (0.0, 0.0, 0);
        }
        if config.checkpoint_every > 0 && done_steps % config.checkpoint_every == 0 {
            on_event(TrainEvent::Checkpoint {
                step: done_steps,
                net: &net,
            })?;
        }
    }
    Ok(TrainOutcome {
        net,
        log,
        optimizer_steps,
        best,
    })
}
