//! Randomized invariant suites run by the `selfcheck` command.
//!
//! * gradient: analytic gradients of the combined loss against central
//!   finite differences on small seeded networks (f64)
//! * section: section loss vanishes exactly on the computed section space
//! * collision: resolved joint moves never conflict and do not depend on
//!   the order in which agents are listed

use crate::agentgraph::AgentGraph;
use crate::dqn::{loss_and_grad, EncoderKind, LossOptions, NetworkConfig, QNetwork, Transition};
use crate::gridworld::{conflicts_between, resolve_moves, Action, GridMap, Pos};
use crate::mapgen::{MapGenConfig, MapStyle};
use crate::observation::{ObservationTensor, CHANNELS};
use crate::rng::{derive_seed, SeededRng};
use crate::sheaf::{global_section_loss, global_sections_basis, RestrictionMap, SheafBundle};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest error statistic observed (suite-specific).
    pub worst: f64,
    pub first_failure: Option<String>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {} cases, {} failures, worst {:.3e}{}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.failures,
            self.worst,
            self.first_failure
                .as_ref()
                .map(|f| format!(" (first: {f})"))
                .unwrap_or_default()
        )
    }
}

fn random_obs(fov: usize, rng: &mut SeededRng) -> ObservationTensor {
    ObservationTensor::from_raw(
        fov,
        (0..CHANNELS * fov * fov).map(|_| rng.bernoulli(0.35) as u8).collect(),
    )
}

fn random_edges(n: usize, p: f64, rng: &mut SeededRng) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.bernoulli(p) {
                e.push((i, j));
            }
        }
    }
    e
}

/// A random batch of joint transitions for a network with field of view `fov`.
pub fn random_batch(fov: usize, transitions: usize, max_agents: usize, rng: &mut SeededRng) -> Vec<Transition> {
    (0..transitions)
        .map(|_| {
            let n = rng.range_inclusive(1, max_agents);
            Transition {
                observations: (0..n).map(|_| random_obs(fov, rng)).collect(),
                edges: random_edges(n, 0.6, rng),
                actions: (0..n).map(|_| Action::ALL[rng.below(5)]).collect(),
                rewards: (0..n).map(|_| [-0.075, 0.0, -0.5, 3.0][rng.below(4)]).collect(),
                next_observations: (0..n).map(|_| random_obs(fov, rng)).collect(),
                next_edges: random_edges(n, 0.6, rng),
                dones: vec![rng.bernoulli(0.3); n],
            }
        })
        .collect()
}

/// Small random network configuration for gradient checks.
pub fn random_small_config(rng: &mut SeededRng) -> NetworkConfig {
    NetworkConfig {
        fov: 3,
        node_dim: rng.range_inclusive(2, 4),
        edge_dim: rng.range_inclusive(1, 3),
        encoder: if rng.bernoulli(0.5) {
            EncoderKind::Conv
        } else {
            EncoderKind::Dense {
                hidden: rng.range_inclusive(3, 6),
            }
        },
        head_hidden: rng.range_inclusive(3, 6),
        section_input: rng.bernoulli(0.8),
    }
}

/// Norm-wise relative error `|a - f| / max(|a| + |f|, 1e-12)` between the
/// analytic gradient and central differences with step `h`.
pub fn gradient_error(seed: u64, h: f64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let config = random_small_config(&mut rng);
    let net = QNetwork::<f64>::new(config.clone(), rng.next_u64()).expect("valid config");
    let target = QNetwork::<f64>::new(config.clone(), rng.next_u64()).expect("valid config");
    let batch = random_batch(config.fov, 3, 4, &mut rng);
    let refs: Vec<&Transition> = batch.iter().collect();
    let opts = LossOptions {
        gamma: 0.9,
        section_weight: rng.uniform(0.1, 1.0),
        double_dqn: false,
        section_detach_encoder: false,
    };
    let (_, grads) = loss_and_grad(&net, &target, &refs, &opts).expect("loss");
    let mut probe = net.clone();
    let (mut diff, mut scale) = (0.0, 0.0);
    for k in 0..grads.params().len() {
        for e in 0..grads.params()[k].len() {
            let orig = probe.params().iter().nth(k).expect("param").2.data()[e];
            let mut eval = |v: f64| {
                probe.params_mut().tensors_mut()[k].data_mut()[e] = v;
                loss_and_grad(&probe, &target, &refs, &opts).expect("loss").0.total
            };
            let fd = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
            probe.params_mut().tensors_mut()[k].data_mut()[e] = orig;
            let a = grads.params()[k].data()[e];
            diff += (a - fd) * (a - fd);
            scale += a * a + fd * fd;
        }
    }
    diff.sqrt() / scale.sqrt().max(1e-12)
}

pub fn gradient_suite(cases: usize, seed: u64) -> SuiteResult {
    let mut r = SuiteResult {
        name: "gradient",
        cases,
        failures: 0,
        worst: 0.0,
        first_failure: None,
    };
    for k in 0..cases {
        let s = derive_seed(seed, &[k as u64]);
        let err = gradient_error(s, 1e-5);
        r.worst = r.worst.max(err);
        if !(err <= 1e-4) {
            r.failures += 1;
            r.first_failure.get_or_insert(format!("seed {s}: relative error {err:.3e}"));
        }
    }
    r
}

/// One fuzzed section case: returns (loss, residual against the basis).
pub fn section_case(seed: u64) -> (f64, f64, bool) {
    let mut rng = SeededRng::new(seed);
    let n = rng.range_inclusive(1, 5);
    let dv = rng.range_inclusive(1, 4);
    let de = rng.range_inclusive(1, 4);
    let graph = AgentGraph::from_edges(n, random_edges(n, 0.5, &mut rng));
    let map = RestrictionMap::<f64>::random(de, dv, &mut rng);
    let basis = global_sections_basis(&graph, &map);
    let on_section = rng.bernoulli(0.5);
    let stalks: Vec<f64> = if on_section {
        let coeffs: Vec<f64> = (0..basis.dim()).map(|_| rng.uniform(-2.0, 2.0)).collect();
        basis.combine(&coeffs)
    } else {
        (0..n * dv).map(|_| rng.uniform(-2.0, 2.0)).collect()
    };
    let residual = basis.residual_sq(&stalks);
    let bundle = SheafBundle::new(graph, stalks, map).expect("consistent dims");
    (global_section_loss(&bundle), residual, on_section)
}

pub fn section_suite(cases: usize, seed: u64) -> SuiteResult {
    const TOL: f64 = 1e-9;
    let mut r = SuiteResult {
        name: "section",
        cases,
        failures: 0,
        worst: 0.0,
        first_failure: None,
    };
    for k in 0..cases {
        let s = derive_seed(seed, &[k as u64]);
        let (loss, residual, on_section) = section_case(s);
        let zero = loss.abs() <= TOL;
        let inside = residual <= TOL;
        if on_section {
            r.worst = r.worst.max(loss.abs()).max(residual);
        }
        if zero != inside || (on_section && !zero) {
            r.failures += 1;
            r.first_failure
                .get_or_insert(format!("seed {s}: loss {loss:.3e}, residual {residual:.3e}"));
        }
    }
    r
}

fn random_map(rng: &mut SeededRng) -> GridMap {
    let size = rng.range_inclusive(10, 16);
    let style = if rng.bernoulli(0.5) { MapStyle::Room } else { MapStyle::Random };
    MapGenConfig {
        size,
        style,
        obstacle_density: rng.uniform(0.0, 0.3),
        seed: rng.next_u64(),
        ..MapGenConfig::default()
    }
    .generate()
    .expect("valid generator settings")
}

/// Random distinct free cells.
fn random_positions(map: &GridMap, n: usize, rng: &mut SeededRng) -> Vec<Pos> {
    let mut free = map.free_cells();
    rng.shuffle(&mut free);
    free.truncate(n);
    free
}

pub fn collision_suite(steps: usize, seed: u64) -> SuiteResult {
    let mut r = SuiteResult {
        name: "collision",
        cases: steps,
        failures: 0,
        worst: 0.0,
        first_failure: None,
    };
    let mut rng = SeededRng::new(seed);
    let mut done = 0;
    while done < steps {
        let map = random_map(&mut rng);
        let n = rng.range_inclusive(2, 32).min(map.free_count());
        let mut positions = random_positions(&map, n, &mut rng);
        for _ in 0..50.min(steps - done) {
            done += 1;
            // Bias towards crowded moves: mostly real moves, some stays.
            let actions: Vec<Action> = (0..n)
                .map(|_| Action::ALL[if rng.bernoulli(0.15) { 4 } else { rng.below(4) }])
                .collect();
            let res = resolve_moves(&map, &positions, &actions);
            let mut fail = |msg: String| {
                r.failures += 1;
                r.first_failure.get_or_insert(msg);
            };
            let conflicts = conflicts_between(&positions, &res.positions);
            if !conflicts.is_empty() {
                fail(format!("conflicts {conflicts:?} after {actions:?} from {positions:?}"));
            }
            if res.positions.iter().any(|&p| !map.is_free(p)) {
                fail("agent resolved onto a blocked cell".into());
            }
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);
            let p_pos: Vec<Pos> = perm.iter().map(|&i| positions[i]).collect();
            let p_act: Vec<Action> = perm.iter().map(|&i| actions[i]).collect();
            let pres = resolve_moves(&map, &p_pos, &p_act);
            for (k, &i) in perm.iter().enumerate() {
                if pres.positions[k] != res.positions[i] || pres.collided[k] != res.collided[i] {
                    fail(format!("order dependence for agent {i}"));
                    break;
                }
            }
            positions = res.positions;
        }
    }
    r
}

/// Run every suite; `quick` shrinks case counts for a fast smoke run.
pub fn run_all(quick: bool, seed: u64) -> Vec<SuiteResult> {
    let (g, s, c) = if quick { (5, 200, 5_000) } else { (20, 1_000, 100_000) };
    vec![
        gradient_suite(g, derive_seed(seed, &[1])),
        section_suite(s, derive_seed(seed, &[2])),
        collision_suite(c, derive_seed(seed, &[3])),
    ]
}
