use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use vguide_core::session::{read_frames, write_frame, ReplanMode};
use vguide_core::{plan_scenario, GuideMixture, Preset, Scenario};
use vguide_harness::report::{self, Metric};
use vguide_harness::{batch_compare, rows_to_csv, run_episode, BatchRow, EpisodeConfig, Mode, OperatorScript};
use vguide_service::{port_from_env, Server, ServerConfig};

#[derive(Parser)]
#[command(name = "vguide", version, about = "Learned haptic guidance: planning, simulation and a live service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a guide mixture for a scenario.
    Plan {
        #[command(flatten)]
        source: Source,
        /// Mixture output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-iteration learner report (CSV).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run scripted-operator episodes and compare modes.
    Simulate(SimulateArgs),
    /// Serve live guidance over WebSocket.
    Serve {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Defaults to $VGUIDE_PORT, then 8765.
        #[arg(long)]
        port: Option<u16>,
    },
    /// Turn a frame log and/or a results table into exports.
    Replay {
        /// Frame log written by `simulate` (one JSON frame per line).
        #[arg(long)]
        frames: Option<PathBuf>,
        /// Results table written by `simulate`.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Source {
    /// Scenario file (JSON).
    #[arg(long, conflicts_with = "preset")]
    scenario: Option<PathBuf>,
    /// Built-in scenario.
    #[arg(long)]
    preset: Option<PresetArg>,
    /// Previously learned mixture; learned on the fly when omitted.
    #[arg(long)]
    mixture: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Pickplace3d,
    Pole6d,
    Maze2d,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Guided,
    GuidedNoReplan,
    Unguided,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum OperatorArg {
    Follower,
    Defector,
    Passive,
    Wanderer,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_enum, default_value = "all")]
    mode: ModeArg,
    /// `N` for seeds 0..N, `a..b`, or a comma-separated list.
    #[arg(long, default_value = "10")]
    seeds: String,
    #[arg(long, value_enum, default_value = "follower")]
    operator: OperatorArg,
    /// Aiming noise in meters (follower) or diffusion (wanderer).
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    /// Phase units per second for plan-based operators.
    #[arg(long, default_value_t = 0.05)]
    speed: f64,
    /// Plan to follow; the heaviest one when omitted.
    #[arg(long)]
    plan: Option<usize>,
    /// Phase at which the defector leaves its plan.
    #[arg(long, default_value_t = 0.3)]
    defect_phase: f64,
    /// Simulated seconds before an episode times out.
    #[arg(long, default_value_t = vguide_harness::episode::DEFAULT_TIMEOUT_S)]
    timeout: f64,
    /// Output directory; the results table goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Plan { source, out, report } => plan(&source, out.as_deref(), report.as_deref()),
        Command::Simulate(args) => simulate(&args),
        Command::Serve { source, host, port } => serve(&source, &host, port),
        Command::Replay { frames, table, out } => replay(frames.as_deref(), table.as_deref(), &out),
    }
}

fn load_scenario(source: &Source) -> Result<Scenario> {
    match (&source.scenario, source.preset) {
        (Some(path), _) => Scenario::load(path).with_context(|| format!("loading {}", path.display())),
        (None, Some(p)) => Ok(match p {
            PresetArg::Pickplace3d => Preset::PickPlace3d,
            PresetArg::Pole6d => Preset::Pole6d,
            PresetArg::Maze2d => Preset::Maze2d,
        }
        .scenario()),
        (None, None) => bail!("either --scenario or --preset is required"),
    }
}

fn load_mixture(source: &Source, scenario: &Scenario) -> Result<GuideMixture> {
    match &source.mixture {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mix = GuideMixture::from_json(&text)?;
            if *mix.basis() != scenario.basis {
                bail!("mixture basis does not match the scenario");
            }
            Ok(mix)
        }
        None => {
            eprintln!("learning guides for {}", scenario.name);
            Ok(plan_scenario(scenario)?.0)
        }
    }
}

fn plan(source: &Source, out: Option<&Path>, report_path: Option<&Path>) -> Result<()> {
    let scenario = load_scenario(source)?;
    let (mix, rep) = plan_scenario(&scenario)?;
    let json = mix.to_json()?;
    match out {
        Some(p) => fs::write(p, json).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    if let Some(p) = report_path {
        fs::write(p, rep.to_csv())?;
    }
    Ok(())
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let spec = spec.trim();
    let seeds: Vec<u64> = if let Some((a, b)) = spec.split_once("..") {
        (a.parse()?..b.parse()?).collect()
    } else if spec.contains(',') {
        spec.split(',').map(|s| s.trim().parse()).collect::<std::result::Result<_, _>>()?
    } else {
        (0..spec.parse()?).collect()
    };
    if seeds.is_empty() {
        bail!("no seeds in {spec:?}");
    }
    Ok(seeds)
}

fn script_for(args: &SimulateArgs, scenario: &Scenario, mix: &GuideMixture) -> OperatorScript {
    let w = mix.weights();
    let heaviest = (0..mix.n_plans()).max_by(|a, b| w[*a].total_cmp(&w[*b])).unwrap_or(0);
    let plan = args.plan.unwrap_or(heaviest);
    match args.operator {
        OperatorArg::Follower => OperatorScript::PlanFollower { plan, noise: args.noise, speed: args.speed },
        OperatorArg::Defector => {
            // a point well inside the workspace, away from the start
            let ws = &scenario.workspace;
            let alternate =
                ws.min.iter().zip(&ws.max).map(|(lo, hi)| lo + 0.2 * (hi - lo)).collect();
            OperatorScript::Defector { plan, defect_phase: args.defect_phase, alternate, speed: args.speed }
        }
        OperatorArg::Passive => OperatorScript::PassiveMass { mass: 1.0, initial: None },
        OperatorArg::Wanderer => OperatorScript::Wanderer { sigma: args.noise },
    }
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let scenario = load_scenario(&args.source)?;
    let mix = load_mixture(&args.source, &scenario)?;
    let seeds = parse_seeds(&args.seeds)?;
    let modes: Vec<Mode> = match args.mode {
        ModeArg::Guided => vec![Mode::Guided],
        ModeArg::GuidedNoReplan => vec![Mode::GuidedNoReplan],
        ModeArg::Unguided => vec![Mode::Unguided],
        ModeArg::All => Mode::ALL.to_vec(),
    };
    let script = script_for(args, &scenario, &mix);
    let cfg = EpisodeConfig { timeout_s: args.timeout, record_frames: false };
    let rows = batch_compare(&scenario, &mix, &script, &modes, &seeds, &cfg)?;
    let table = rows_to_csv(&rows);
    let Some(dir) = &args.out else {
        std::io::stdout().write_all(table.as_bytes())?;
        return Ok(());
    };
    fs::create_dir_all(dir)?;
    fs::write(dir.join("results.csv"), &table)?;
    write_summaries(&rows, dir)?;
    // one frame log per guided mode, for the first seed
    let rec = EpisodeConfig { record_frames: true, ..cfg };
    for mode in modes.iter().filter(|m| **m != Mode::Unguided) {
        let ep = run_episode(&scenario, &mix, &script, *mode, seeds[0], &rec)?;
        let mut f = std::io::BufWriter::new(fs::File::create(dir.join(format!("frames-{mode}-{}.ndjson", seeds[0])))?);
        for frame in &ep.frames {
            write_frame(&mut f, frame)?;
        }
        f.flush()?;
    }
    eprintln!("wrote {} rows to {}", rows.len(), dir.display());
    Ok(())
}

fn write_summaries(rows: &[BatchRow], dir: &Path) -> Result<()> {
    let summaries = report::summarize(rows)?;
    fs::write(dir.join("summary.csv"), report::summary_csv(&summaries))?;
    fs::write(dir.join("collisions.svg"), report::box_plot_svg(&summaries, Metric::Collisions)?)?;
    fs::write(dir.join("time.svg"), report::box_plot_svg(&summaries, Metric::Time)?)?;
    Ok(())
}

fn serve(source: &Source, host: &str, port: Option<u16>) -> Result<()> {
    let scenario = load_scenario(source)?;
    let mixture = load_mixture(source, &scenario)?;
    let port = port.unwrap_or_else(port_from_env);
    let server = Server::bind((host, port), ServerConfig { scenario, mixture, replan_mode: ReplanMode::Threaded })?;
    eprintln!("listening on ws://{}", server.local_addr()?);
    server.run()?;
    Ok(())
}

fn replay(frames: Option<&Path>, table: Option<&Path>, out: &Path) -> Result<()> {
    if frames.is_none() && table.is_none() {
        bail!("nothing to replay: pass --frames and/or --table");
    }
    fs::create_dir_all(out)?;
    if let Some(path) = frames {
        let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let frames = read_frames(BufReader::new(file))?;
        let snaps = report::guide_snapshots(&frames)?;
        fs::write(out.join("guides.csv"), report::ellipse_csv(&snaps))?;
        fs::write(out.join("guides.json"), serde_json::to_string_pretty(&snaps)?)?;
        fs::write(out.join("trajectory.csv"), report::trajectory_csv(&frames)?)?;
    }
    if let Some(path) = table {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        write_summaries(&report::parse_rows(&text)?, out)?;
    }
    Ok(())
}
