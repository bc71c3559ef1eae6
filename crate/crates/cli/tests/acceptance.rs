//! Acceptance suite. Every test prints one `PASS`/`FAIL` line to the real
//! stderr (bypassing the harness capture) and then asserts.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, Mutex, OnceLock};

use sheaf_mapf::agentgraph::AgentGraph;
use sheaf_mapf::baseline::{plan_with_restarts, validate_plan_for, PlanReplayPolicy, DEFAULT_HORIZON, DEFAULT_RETRIES};
use sheaf_mapf::bench::{build_suite, run_episode, summarize, EpisodeMetrics, SuiteConfig};
use sheaf_mapf::dqn::{self, EncoderKind, NetworkConfig, Preset, QNetwork, TrainConfig};
use sheaf_mapf::gridworld::{resolve_moves, Action, EnvConfig, GridMap, JointState, Pos};
use sheaf_mapf::mapgen::{MapGenConfig, MapStyle};
use sheaf_mapf::observation::{ObservationTensor, CHANNELS};
use sheaf_mapf::rng::{derive_seed, SeededRng};
use sheaf_mapf::selfcheck::{gradient_suite, section_suite};
use sheaf_mapf::sheaf::{global_sections_basis, RestrictionMap};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "[acceptance {id:>2}] {} {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

#[test]
fn c01_gradient_matches_finite_differences() {
    let r = gradient_suite(20, 0xC01);
    report(1, "gradient check", r.passed(), &r.line());
}

#[test]
fn c02_section_loss_zero_iff_in_section_space() {
    let r = section_suite(1000, 0xC02);
    report(2, "section oracle", r.passed(), &r.line());
}

#[test]
fn c03_constant_sheaf_dimension() {
    let mut bad = Vec::new();
    for n in 1..=6 {
        for dv in 1..=4 {
            let id = RestrictionMap::<f64>::identity(dv);
            let path = AgentGraph::from_edges(n, (1..n).map(|i| (i - 1, i)));
            let complete = AgentGraph::from_edges(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))));
            let empty = AgentGraph::empty(n);
            for (g, want) in [(path, dv), (complete, dv), (empty, n * dv)] {
                let got = global_sections_basis(&g, &id).dim();
                if got != want {
                    bad.push(format!("n={n} dv={dv} edges={} got {got} want {want}", g.edge_count()));
                }
            }
        }
    }
    report(3, "constant sheaf dimension", bad.is_empty(), &format!("72 graphs, mismatches {bad:?}"));
}

#[test]
fn c04_dueling_identity() {
    let config = NetworkConfig::default();
    let fov = config.fov;
    let mut net = QNetwork::<f64>::new(config, 4).unwrap();
    let mut rng = SeededRng::new(0xC04);
    let obs: Vec<ObservationTensor> = (0..10_000)
        .map(|_| {
            let p = rng.uniform(0.05, 0.6);
            ObservationTensor::from_raw(fov, (0..CHANNELS * fov * fov).map(|_| rng.bernoulli(p) as u8).collect())
        })
        .collect();
    let refs: Vec<&ObservationTensor> = obs.iter().collect();
    let mut worst = 0.0f64;
    let mut before = Vec::new();
    for chunk in refs.chunks(500) {
        let parts = net.evaluate_parts(chunk).unwrap();
        for (q, v) in parts.q.iter().zip(&parts.value) {
            let mean: f64 = q.iter().map(|x| x - v).sum::<f64>() / 5.0;
            worst = worst.max(mean.abs());
            before.push(sheaf_mapf::dqn::argmax(q));
        }
    }
    // Shift every advantage output by the same constant through the last bias.
    let id = net.params().id("advantage.2.bias").unwrap();
    for b in net.params_mut().get_mut(id).data_mut() {
        *b += 37.5;
    }
    let mut changed = 0;
    let mut k = 0;
    for chunk in refs.chunks(500) {
        for q in net.compute_q_batch(chunk).unwrap() {
            if sheaf_mapf::dqn::argmax(&q) != before[k] {
                changed += 1;
            }
            k += 1;
        }
    }
    let pass = worst <= 1e-12 && changed == 0;
    report(
        4,
        "dueling identity",
        pass,
        &format!("10000 observations, max |mean(Q - V)| {worst:.2e}, argmax changes after shift {changed}"),
    );
}

/// Brute-force conflict check written independently of the environment.
fn conflicts(before: &[Pos], after: &[Pos]) -> usize {
    let mut count = 0;
    for i in 0..after.len() {
        for j in i + 1..after.len() {
            if after[i] == after[j] {
                count += 1;
            }
            if after[i] == before[j] && after[j] == before[i] && before[i] != before[j] {
                count += 1;
            }
        }
    }
    count
}

#[test]
fn c05_collision_fuzz() {
    let mut rng = SeededRng::new(0xC05);
    let (mut steps, mut bad, mut order_bad, mut on_blocked) = (0usize, 0usize, 0usize, 0usize);
    while steps < 100_000 {
        let map = MapGenConfig {
            size: rng.range_inclusive(10, 20),
            style: if rng.bernoulli(0.5) { MapStyle::Room } else { MapStyle::Random },
            obstacle_density: rng.uniform(0.0, 0.35),
            seed: rng.next_u64(),
            ..MapGenConfig::default()
        }
        .generate()
        .unwrap();
        let mut free = map.free_cells();
        rng.shuffle(&mut free);
        let n = rng.range_inclusive(1, 32).min(free.len());
        let mut pos: Vec<Pos> = free[..n].to_vec();
        for _ in 0..100 {
            steps += 1;
            let acts: Vec<Action> = (0..n).map(|_| Action::ALL[rng.below(5)]).collect();
            let res = resolve_moves(&map, &pos, &acts);
            bad += conflicts(&pos, &res.positions);
            on_blocked += res.positions.iter().filter(|&&p| !map.is_free(p)).count();
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);
            let pp: Vec<Pos> = perm.iter().map(|&i| pos[i]).collect();
            let pa: Vec<Action> = perm.iter().map(|&i| acts[i]).collect();
            let pres = resolve_moves(&map, &pp, &pa);
            if perm.iter().enumerate().any(|(k, &i)| pres.positions[k] != res.positions[i] || pres.collided[k] != res.collided[i]) {
                order_bad += 1;
            }
            pos = res.positions;
        }
    }
    let pass = bad == 0 && order_bad == 0 && on_blocked == 0;
    report(
        5,
        "collision fuzz",
        pass,
        &format!("{steps} steps, conflicts {bad}, blocked cells {on_blocked}, order-dependent steps {order_bad}"),
    );
}

struct RewardCase {
    name: &'static str,
    rows: &'static [&'static str],
    starts: &'static [(usize, usize)],
    goals: &'static [(usize, usize)],
    actions: &'static [Action],
    expect: &'static [f64],
}

#[test]
fn c06_reward_table() {
    use Action::*;
    let open = &["....", "....", "....", "...."][..];
    let cases = [
        RewardCase { name: "move", rows: open, starts: &[(1, 1)], goals: &[(3, 3)], actions: &[Right], expect: &[-0.075] },
        RewardCase { name: "stay on goal", rows: open, starts: &[(1, 1), (0, 0)], goals: &[(1, 1), (3, 3)], actions: &[Stay, Stay], expect: &[0.0, -0.075] },
        RewardCase { name: "stay off goal", rows: open, starts: &[(1, 1)], goals: &[(3, 3)], actions: &[Stay], expect: &[-0.075] },
        RewardCase { name: "obstacle bump", rows: &[".@..", "....", "....", "...."], starts: &[(0, 0)], goals: &[(3, 3)], actions: &[Right], expect: &[-0.5] },
        RewardCase { name: "border bump", rows: open, starts: &[(0, 0)], goals: &[(3, 3)], actions: &[Up], expect: &[-0.5] },
        RewardCase { name: "vertex conflict", rows: open, starts: &[(0, 0), (0, 2)], goals: &[(3, 3), (3, 0)], actions: &[Right, Left], expect: &[-0.5, -0.5] },
        RewardCase { name: "edge conflict", rows: open, starts: &[(0, 0), (0, 1)], goals: &[(3, 3), (3, 0)], actions: &[Right, Left], expect: &[-0.5, -0.5] },
        RewardCase { name: "finish", rows: open, starts: &[(0, 0)], goals: &[(0, 1)], actions: &[Right], expect: &[3.0] },
        RewardCase { name: "finish shared", rows: open, starts: &[(0, 0), (2, 2)], goals: &[(0, 1), (2, 2)], actions: &[Right, Stay], expect: &[3.0, 3.0] },
        RewardCase { name: "chain reversion", rows: open, starts: &[(0, 0), (0, 1), (0, 2)], goals: &[(3, 3), (3, 2), (3, 1)], actions: &[Right, Right, Stay], expect: &[-0.5, -0.5, -0.075] },
        RewardCase { name: "conflict beside free move and parked agent", rows: open, starts: &[(0, 0), (0, 2), (2, 0), (3, 3)], goals: &[(3, 0), (3, 1), (2, 3), (3, 3)], actions: &[Right, Left, Right, Stay], expect: &[-0.5, -0.5, -0.075, 0.0] },
        RewardCase { name: "leave goal and arrive without success", rows: open, starts: &[(1, 1), (0, 0)], goals: &[(1, 1), (0, 1)], actions: &[Down, Right], expect: &[-0.075, -0.075] },
    ];
    let allowed = [-0.075, 0.0, -0.5, 3.0];
    let mut bad = Vec::new();
    for c in &cases {
        let starts: Vec<Pos> = c.starts.iter().map(|&p| p.into()).collect();
        let goals: Vec<Pos> = c.goals.iter().map(|&p| p.into()).collect();
        let mut s = JointState::reset(Arc::new(GridMap::from_rows(c.rows)), &starts, &goals, 0, EnvConfig::default()).unwrap();
        let out = s.step(c.actions).unwrap();
        if out.rewards != c.expect || out.rewards.iter().any(|r| !allowed.contains(r)) {
            bad.push(format!("{}: got {:?} want {:?}", c.name, out.rewards, c.expect));
        }
    }
    report(6, "reward table", bad.is_empty(), &format!("{} cases, mismatches {bad:?}", cases.len()));
}

#[test]
fn c07_baseline_soundness() {
    let suite = SuiteConfig {
        sizes: vec![20],
        agent_counts: vec![8],
        episodes: 100,
        seed: 0xC07,
        style: MapStyle::Room,
        ..SuiteConfig::default()
    };
    let instances = build_suite(&suite).unwrap();
    let (mut solved, mut invalid, mut replay_bad) = (0, 0, 0);
    for inst in &instances {
        let Ok(plan) = plan_with_restarts(&inst.map, &inst.starts, &inst.goals, DEFAULT_HORIZON, DEFAULT_RETRIES, inst.seed) else {
            continue;
        };
        solved += 1;
        if validate_plan_for(&inst.map, &plan, &inst.starts, &inst.goals).is_err() {
            invalid += 1;
        }
        let policy = PlanReplayPolicy { plan };
        let (m, trace) = run_episode(&policy, inst, DEFAULT_HORIZON, true).unwrap();
        let collided = trace.unwrap().steps.iter().any(|s| s.collided.iter().any(|&c| c));
        if !m.success || collided {
            replay_bad += 1;
        }
    }
    let pass = solved >= 95 && invalid == 0 && replay_bad == 0;
    report(
        7,
        "baseline soundness",
        pass,
        &format!("solved {solved}/100, invalid plans {invalid}, bad replays {replay_bad}"),
    );
}

// ---- toy training (criteria 8 and 9) ----

const TOY_STEPS: u64 = 500_000;
const TOY_SEEDS: [u64; 3] = [0, 1, 2];
/// Instances for the periodic evaluations in the training log.
const TOY_VALIDATION_SEED: u64 = 1_000_003;
/// Instances used only for the final score.
const TOY_HELDOUT_SEED: u64 = 0x7E57;

fn toy_config(seed: u64, preset: Preset) -> TrainConfig {
    TrainConfig {
        seed,
        total_steps: TOY_STEPS,
        train_every: 8,
        double_dqn: true,
        map_size_min: 10,
        map_size_max: 10,
        map_style: MapStyle::Random,
        obstacle_density: 0.1,
        n_agents: 4,
        episode_step_limit: 128,
        eval_every: TOY_STEPS / 10,
        eval_episodes: 100,
        eval_seed: TOY_VALIDATION_SEED,
        network: NetworkConfig {
            encoder: EncoderKind::Dense { hidden: 128 },
            ..NetworkConfig::default()
        },
        ..TrainConfig::default()
    }
    .with_preset(preset)
}

#[derive(Debug, Clone, Copy)]
struct ToyResult {
    sr: f64,
    l_sec_first: f64,
    l_sec_last: f64,
}

type Cache = HashMap<(u64, bool), ToyResult>;

/// Train (once per key, shared between tests) and score the final weights
/// greedily on the held-out suite. `full` selects the default preset,
/// otherwise the no-section-loss preset.
fn toy_run(seed: u64, full: bool) -> ToyResult {
    static CACHE: OnceLock<Mutex<Cache>> = OnceLock::new();
    let mut cache = CACHE.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    if let Some(r) = cache.get(&(seed, full)) {
        return *r;
    }
    let config = toy_config(seed, if full { Preset::Full } else { Preset::Wp });
    let start = std::time::Instant::now();
    let outcome = dqn::train::<f32>(&config).unwrap();
    let heldout = dqn::eval_instances(&TrainConfig {
        eval_seed: TOY_HELDOUT_SEED,
        ..config.clone()
    })
    .unwrap();
    let sr = summarize(&dqn::evaluate(&outcome.net, &heldout, config.eval_step_limit).unwrap()).sr;
    let r = ToyResult {
        sr,
        l_sec_first: outcome.log.first().unwrap().l_sec,
        l_sec_last: outcome.log.last().unwrap().l_sec,
    };
    let _ = writeln!(
        std::io::stderr(),
        "    toy run seed {seed} {}: held-out SR {:.2} (last validation SR {:.2}), l_sec {:.2e} -> {:.2e} ({:.0}s)",
        if full { "full" } else { "wp" },
        r.sr,
        outcome.log.last().unwrap().eval_sr,
        r.l_sec_first,
        r.l_sec_last,
        start.elapsed().as_secs_f64()
    );
    cache.insert((seed, full), r);
    r
}

fn criterion8_ok(r: &ToyResult) -> bool {
    r.sr >= 0.8 && r.l_sec_last <= 0.5 * r.l_sec_first
}

#[test]
fn c08_toy_training() {
    let mut runs = Vec::new();
    for seed in TOY_SEEDS {
        let r = toy_run(seed, true);
        runs.push(format!("seed {seed}: SR {:.2} l_sec {:.2e}->{:.2e}", r.sr, r.l_sec_first, r.l_sec_last));
        if criterion8_ok(&r) {
            break;
        }
    }
    let pass = TOY_SEEDS.iter().any(|&s| criterion8_ok(&toy_run(s, true)));
    report(
        8,
        "toy training",
        pass,
        &format!("{} agent steps per run; {}", TOY_STEPS * 4, runs.join("; ")),
    );
}

#[test]
fn c09_ablation_direction() {
    // A best-of-seeds value only grows as seeds are added. Without-loss runs
    // are all needed unless the with-loss side already clears 0.95. Extra
    // with-loss seeds are needed only while the inequality still fails.
    let mut best_full = toy_run(TOY_SEEDS[0], true).sr;
    let mut full_runs = 1;
    let mut best_wp = 0.0f64;
    let mut wp_runs = 0;
    if best_full < 0.95 {
        for seed in TOY_SEEDS {
            best_wp = best_wp.max(toy_run(seed, false).sr);
            wp_runs += 1;
        }
    }
    while best_full < best_wp - 0.05 && full_runs < TOY_SEEDS.len() {
        best_full = best_full.max(toy_run(TOY_SEEDS[full_runs], true).sr);
        full_runs += 1;
    }
    let pass = best_full >= best_wp - 0.05;
    report(
        9,
        "ablation direction",
        pass,
        &format!("best held-out SR with section loss {best_full:.2} ({full_runs} runs), without {best_wp:.2} ({wp_runs} runs)"),
    );
}

// ---- determinism (criterion 10) ----

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sheaf-mapf"))
}

fn run_ok(cmd: &mut Command) {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// All files under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn c10_cli_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "total_steps": 400,
        "learning_starts": 64,
        "batch_size": 16,
        "target_sync": 50,
        "eval_every": 200,
        "eval_episodes": 3,
        "checkpoint_every": 200,
        "map_size_min": 10,
        "map_size_max": 10,
        "map_style": "random",
        "n_agents": 3,
        "episode_step_limit": 64,
        "eval_step_limit": 64,
        "network": {"encoder": {"kind": "dense", "hidden": 16}, "node_dim": 8, "edge_dim": 4, "head_hidden": 16}
    });
    let cfg_path = tmp.path().join("config.json");
    std::fs::write(&cfg_path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();

    let mut same = Vec::new();
    let mut snaps = Vec::new();
    for k in 0..2 {
        let root = tmp.path().join(format!("run{k}"));
        run_ok(bin().args(["train", "--seed", "3", "--config"]).arg(&cfg_path).arg("--out").arg(root.join("train")));
        let weights = root.join("train/weights.bin");
        let suite = ["--sizes", "10", "--agents", "2,4", "--episodes", "3", "--seed", "5", "--step-limit", "64"];
        std::fs::create_dir_all(root.join("evaluate")).unwrap();
        run_ok(
            bin()
                .arg("evaluate")
                .arg("--weights")
                .arg(&weights)
                .args(suite)
                .arg("--trace")
                .arg(root.join("evaluate/trace.json"))
                .arg("--out")
                .arg(root.join("evaluate/report.csv")),
        );
        std::fs::create_dir_all(root.join("baseline")).unwrap();
        run_ok(
            bin()
                .arg("baseline")
                .args(suite)
                .arg("--plan-out")
                .arg(root.join("baseline/plan.json"))
                .arg("--out")
                .arg(root.join("baseline/report.csv")),
        );
        run_ok(
            bin()
                .args(["genmaps", "--style", "room", "--size", "20", "--seed", "7", "--count", "3", "--agents", "8", "--out"])
                .arg(root.join("genmaps")),
        );
        let mut by_cmd = Vec::new();
        for sub in ["train", "evaluate", "baseline", "genmaps"] {
            by_cmd.push((sub, snapshot(&root.join(sub))));
        }
        snaps.push(by_cmd);
    }
    for ((name, a), (_, b)) in snaps[0].iter().zip(&snaps[1]) {
        same.push(format!("{name} {} files {}", a.len(), if a == b && !a.is_empty() { "identical" } else { "DIFFER" }));
    }
    let pass = snaps[0] == snaps[1] && snaps[0].iter().all(|(_, f)| !f.is_empty());
    report(10, "CLI determinism", pass, &same.join(", "));
}

// ---- metrics arithmetic (criterion 11) ----

fn ep(el: usize, arrived: usize, n: usize, success: bool) -> EpisodeMetrics {
    EpisodeMetrics {
        episode_length: el,
        arrived,
        n,
        success,
    }
}

#[test]
fn c11_metrics_arithmetic() {
    let mut bad = Vec::new();
    // [S, F, S, S] with 4 agents each.
    let a = summarize(&[ep(20, 4, 4, true), ep(512, 2, 4, false), ep(30, 4, 4, true), ep(10, 4, 4, true)]);
    if a.sr != 0.75 || a.ar != 14.0 / 16.0 || a.mean_el != 143.0 {
        bad.push(format!("set A {a:?}"));
    }
    // Two failures with 3 of 4 arrivals each.
    let b = summarize(&[ep(512, 3, 4, false), ep(512, 3, 4, false)]);
    if b.ar != 0.75 || b.sr != 0.0 || b.mean_el != 512.0 {
        bad.push(format!("set B {b:?}"));
    }
    // Mixed agent counts: AR pools agents, not episodes.
    let c = summarize(&[ep(0, 2, 2, true), ep(512, 1, 8, false), ep(64, 6, 6, true)]);
    if c.ar != 9.0 / 16.0 || c.sr != 2.0 / 3.0 || c.mean_el != 192.0 {
        bad.push(format!("set C {c:?}"));
    }
    // A stationary policy fails with EL at the limit.
    let inst = &build_suite(&SuiteConfig {
        sizes: vec![10],
        agent_counts: vec![4],
        episodes: 1,
        seed: derive_seed(0xC11, &[0]),
        ..SuiteConfig::default()
    })
    .unwrap()[0];
    let (m, _) = run_episode(&sheaf_mapf::bench::StationaryPolicy, inst, 512, false).unwrap();
    if m.success || m.episode_length != 512 {
        bad.push(format!("stationary {m:?}"));
    }
    report(11, "metrics arithmetic", bad.is_empty(), &format!("3 synthetic sets + failed episode, mismatches {bad:?}"));
}
