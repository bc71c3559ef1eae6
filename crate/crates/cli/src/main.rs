use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sheaf_mapf::baseline::{plan_with_restarts, PlannerPolicy, DEFAULT_HORIZON, DEFAULT_RETRIES};
use sheaf_mapf::bench::{self, build_suite, report_from, run_episode, run_instances, GreedyPolicy, Policy, SuiteConfig, Trace};
use sheaf_mapf::dqn::{self, Preset, TrainConfig, TrainEvent};
use sheaf_mapf::gridworld::Scenario;
use sheaf_mapf::mapgen::{place_agents, MapGenConfig, MapStyle};
use sheaf_mapf::{selfcheck, QNetworkF32};

#[derive(Parser)]
#[command(name = "sheaf-mapf", version, about = "Decentralized multi-agent path finding with sheaf-consensus Q-learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate map files (and optionally scenarios).
    Genmaps(GenmapsArgs),
    /// Train a Q-network from a JSON config.
    Train(TrainArgs),
    /// Evaluate trained weights on a benchmark suite.
    Evaluate(EvaluateArgs),
    /// Run the prioritized planner on a benchmark suite.
    Baseline(BaselineArgs),
    /// Render a trace file as ASCII frames.
    Replay(ReplayArgs),
    /// Run the gradient, section and collision invariant suites.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args)]
struct GenmapsArgs {
    #[arg(long, default_value = "room")]
    style: MapStyle,
    #[arg(long, default_value_t = 20)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    density: f64,
    #[arg(long, default_value_t = 3)]
    room_min: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    corridor_widths: Vec<usize>,
    /// Also write a scenario with this many agents per map.
    #[arg(long, default_value_t = 0)]
    agents: usize,
    /// Number of maps; map k uses seed + k.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// TrainConfig JSON; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ablation preset applied on top of the config (full, wp, fi, es).
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct SuiteArgs {
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    agents: Option<Vec<usize>>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "room")]
    style: MapStyle,
    #[arg(long, default_value_t = 0.1)]
    density: f64,
    #[arg(long, default_value_t = 512)]
    step_limit: usize,
    /// Use the large suite (sizes to 60, up to 128 agents, 200 episodes).
    #[arg(long)]
    full: bool,
    /// Write the first instance's episode trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

impl SuiteArgs {
    fn suite(&self) -> SuiteConfig {
        let mut s = if self.full {
            eprintln!("warning: --full runs the large suite; expect a long runtime");
            SuiteConfig::full()
        } else {
            SuiteConfig::default()
        };
        if let Some(v) = &self.sizes {
            s.sizes = v.clone();
        }
        if let Some(v) = &self.agents {
            s.agent_counts = v.clone();
        }
        if let Some(e) = self.episodes {
            s.episodes = e;
        }
        s.seed = self.seed;
        s.style = self.style;
        s.obstacle_density = self.density;
        s.step_limit = self.step_limit;
        s
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    weights: PathBuf,
    #[command(flatten)]
    suite: SuiteArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    suite: SuiteArgs,
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: usize,
    #[arg(long, default_value_t = DEFAULT_RETRIES)]
    retries: usize,
    /// Write the plan of the first instance as JSON.
    #[arg(long)]
    plan_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Args)]
struct SelfcheckArgs {
    /// Smaller case counts.
    #[arg(long)]
    quick: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Write via a temp file in the same directory, then rename.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, contents).with_context(|| format!("writing {}", PathBuf::from(&tmp).display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn genmaps(a: GenmapsArgs) -> Result<()> {
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for k in 0..a.count {
        let cfg = MapGenConfig {
            size: a.size,
            style: a.style,
            obstacle_density: a.density,
            room_min: a.room_min,
            corridor_widths: a.corridor_widths.clone(),
            seed: a.seed + k as u64,
        };
        let map = cfg.generate()?;
        let stem = format!("{}_{}_{}", cfg.style, cfg.size, cfg.seed);
        let map_name = format!("{stem}.map");
        write_atomic(&a.out.join(&map_name), map.to_text(&[cfg.header()]).as_bytes())?;
        if a.agents > 0 {
            let (starts, goals) = place_agents(&map, a.agents, cfg.seed)?;
            let scen = Scenario {
                map: map_name.clone(),
                starts,
                goals,
                seed: cfg.seed,
            };
            write_atomic(
                &a.out.join(format!("{stem}_{}agents.json", a.agents)),
                scen.to_json().as_bytes(),
            )?;
        }
        println!("{}", a.out.join(&map_name).display());
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut config: TrainConfig = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(p) = a.preset {
        config = config.with_preset(p);
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(s) = a.steps {
        config.total_steps = s;
    }
    config.validate()?;
    let ckpt_dir = a.out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).with_context(|| format!("creating {}", ckpt_dir.display()))?;
    write_atomic(
        &a.out.join("config.json"),
        serde_json::to_string_pretty(&config)?.as_bytes(),
    )?;
    let log_path = a.out.join("train_log.csv");
    let mut log = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    writeln!(log, "{}", dqn::LOG_HEADER)?;
    let source_cfg = config.clone();
    let outcome = dqn::train_with::<f32>(
        &config,
        &mut |rng| dqn::sample_instance(&source_cfg, rng),
        &mut |event| {
            match event {
                TrainEvent::Log(row) => {
                    writeln!(log, "{}", row.to_csv()).and_then(|_| log.flush()).map_err(nn_io)?;
                    eprintln!(
                        "step {:>9}  L_Q {:.5}  l_sec {:.5}  eps {:.3}  SR {:.2}  AR {:.2}  EL {:.1}",
                        row.step, row.l_q, row.l_sec, row.epsilon, row.eval_sr, row.eval_ar, row.eval_el
                    );
                }
                TrainEvent::Checkpoint { step, net } => {
                    net.save(ckpt_dir.join(format!("step_{step:09}.weights")))?;
                }
            }
            Ok(())
        },
    )?;
    outcome.net.save(a.out.join("weights.bin"))?;
    if let Some(best) = &outcome.best {
        best.net.save(a.out.join("best.weights"))?;
        eprintln!("best evaluation SR {:.2} at step {}", best.eval_sr, best.step);
    }
    eprintln!(
        "done: {} optimizer steps; weights in {}",
        outcome.optimizer_steps,
        a.out.join("weights.bin").display()
    );
    Ok(())
}

fn nn_io(e: std::io::Error) -> dqn::DqnError {
    dqn::DqnError::Nn(e.into())
}

fn write_trace(policy: &dyn Policy, first: &bench::Instance, step_limit: usize, path: &Path) -> Result<()> {
    let (_, trace) = run_episode(policy, first, step_limit, true)?;
    let trace: Trace = trace.expect("recorded");
    write_atomic(path, serde_json::to_string(&trace)?.as_bytes())
}

fn run_suite(policy: &dyn Policy, suite_args: &SuiteArgs, out: &Path) -> Result<()> {
    let suite = suite_args.suite();
    let instances = build_suite(&suite)?;
    let metrics = run_instances(policy, &instances, suite.step_limit)?;
    let report = report_from(&suite, &instances, metrics);
    write_atomic(out, report.to_csv().as_bytes())?;
    if let (Some(path), Some(first)) = (&suite_args.trace, instances.first()) {
        write_trace(policy, first, suite.step_limit, path)?;
    }
    print!("{}", report.summary_table());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let net = QNetworkF32::load(&a.weights).with_context(|| format!("loading weights {}", a.weights.display()))?;
    run_suite(&GreedyPolicy::new(&net), &a.suite, &a.out)
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let policy = PlannerPolicy {
        horizon: a.horizon,
        retries: a.retries,
    };
    if let Some(path) = &a.plan_out {
        let suite = a.suite.suite();
        let instances = build_suite(&suite)?;
        let Some(first) = instances.first() else { bail!("empty suite") };
        match plan_with_restarts(&first.map, &first.starts, &first.goals, a.horizon, a.retries, first.seed) {
            Ok(plan) => write_atomic(path, plan.to_json().as_bytes())?,
            Err(f) => eprintln!("warning: first instance not planned: {f}"),
        }
    }
    run_suite(&policy, &a.suite, &a.out)
}

fn replay(a: ReplayArgs) -> Result<()> {
    let text = fs::read_to_string(&a.trace).with_context(|| format!("reading {}", a.trace.display()))?;
    let trace: Trace = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.trace.display()))?;
    print!("{}", trace.render()?);
    Ok(())
}

fn selfcheck_cmd(a: SelfcheckArgs) -> Result<bool> {
    let mut ok = true;
    for r in selfcheck::run_all(a.quick, a.seed) {
        println!("{}", r.line());
        ok &= r.passed();
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Genmaps(a) => genmaps(a).map(|_| true),
        Command::Train(a) => train(a).map(|_| true),
        Command::Evaluate(a) => evaluate(a).map(|_| true),
        Command::Baseline(a) => baseline(a).map(|_| true),
        Command::Replay(a) => replay(a).map(|_| true),
        Command::Selfcheck(a) => selfcheck_cmd(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
