//! Command-line front end: single episodes, benchmark suites, PID probes
//! and config inspection. Exit codes: 0 success, 1 episode failure or an
//! inconclusive probe, 2 usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use urbansim::bench::{builtin_suite, run_benchmark, score_episode, Suite, BUILTIN_SUITES};
use urbansim::config::RunConfig;
use urbansim::control::{oscillation_probe, ziegler_nichols, ziegler_nichols_classic, ProbePlant};
use urbansim::perception::PerceptionModel;
use urbansim::planner::TopoGraph;
use urbansim::sim::{
    apply_overrides, builtin_scenario, run_episode, Scenario, BUILTIN_SCENARIOS,
};
use urbansim::town::Town;

#[derive(Parser)]
#[command(
    name = "urbansim",
    version,
    about = "Deterministic urban driving simulator and benchmark runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario episode and write its trace.
    RunEpisode(RunEpisodeArgs),
    /// Run a benchmark suite and write its report.
    RunBenchmark(RunBenchmarkArgs),
    /// Evaluate or measure Ziegler-Nichols PID gains.
    TuneProbe(TuneProbeArgs),
    /// Inspect configuration.
    Config(ConfigArgs),
}

#[derive(Args)]
struct RunEpisodeArgs {
    /// Bundled scenario name or path to a scenario file.
    #[arg(long)]
    scenario: String,
    /// Town file overriding the scenario's town.
    #[arg(long)]
    town: Option<String>,
    /// Perception preset (clean|train|test) or a perception config path.
    #[arg(long)]
    perception: Option<String>,
    /// Seed for the perception noise stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Config file applied over the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single override, section.key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Cruise speed cap, km/h.
    #[arg(long = "cruise-cap", value_name = "KMH")]
    cruise_cap: Option<f64>,
    /// Output directory for the trace and the effective config.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct RunBenchmarkArgs {
    /// Bundled suite name or path to a suite file.
    #[arg(long)]
    suite: String,
    /// Extra town file the suite may refer to. Repeatable; bundled towns
    /// are always available.
    #[arg(long)]
    town: Vec<String>,
    /// Config file applied over the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single override, section.key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Replaces the suite's episode seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the episode grid; defaults to all cores.
    #[arg(long, value_name = "N")]
    parallel: Option<usize>,
    /// Output directory for the report files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct TuneProbeArgs {
    /// Known ultimate gain; together with --tu skips the sweep.
    #[arg(long)]
    ku: Option<f64>,
    /// Known oscillation period, s.
    #[arg(long)]
    tu: Option<f64>,
    /// Probe target speed, km/h.
    #[arg(long, default_value_t = 36.0)]
    target_kmh: f64,
    /// First proportional gain tried by the sweep.
    #[arg(long, default_value_t = 0.2)]
    kp_start: f64,
    /// Multiplicative step between sweep candidates.
    #[arg(long, default_value_t = 1.5)]
    kp_factor: f64,
    /// Sweep ceiling; past it the probe reports inconclusive.
    #[arg(long, default_value_t = 200.0)]
    kp_max: f64,
}

#[derive(Args)]
struct ConfigArgs {
    #[command(subcommand)]
    action: ConfigAction,
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Print the effective config as a loadable document.
    Dump {
        /// Config file applied over the built-in defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Single override, section.key=value. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

/// A bad invocation: the message goes to stderr and the process exits 2.
struct UsageError(String);

impl<E: std::error::Error> From<E> for UsageError {
    fn from(err: E) -> Self {
        UsageError(err.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match cli.command {
        Command::RunEpisode(args) => cmd_run_episode(args),
        Command::RunBenchmark(args) => cmd_run_benchmark(args),
        Command::TuneProbe(args) => cmd_tune_probe(args),
        Command::Config(args) => cmd_config(args),
    };
    match run {
        Ok(code) => code,
        Err(UsageError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Reads a file, naming it in the error message.
fn read_file(path: &Path) -> Result<String, UsageError> {
    fs::read_to_string(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))
}

/// Bundled scenario by name, or the scenario file at that path.
fn load_scenario(name: &str) -> Result<Scenario, UsageError> {
    let text = match builtin_scenario(name) {
        Some(text) => text.to_owned(),
        None if Path::new(name).exists() => read_file(Path::new(name))?,
        None => {
            return Err(UsageError(format!(
                "unknown scenario `{name}`; bundled: {}",
                BUILTIN_SCENARIOS.join(", ")
            )))
        }
    };
    Ok(Scenario::parse(&text)?)
}

/// Bundled town by name, or the town file at that path.
fn load_town(name: &str) -> Result<Town, UsageError> {
    if let Some(town) = Town::builtin(name) {
        return Ok(town);
    }
    if !Path::new(name).exists() {
        return Err(UsageError(format!("no bundled town or town file `{name}`")));
    }
    Ok(Town::parse(&read_file(Path::new(name))?)?)
}

/// Defaults, then the config file, then the scenario's overrides, then the
/// command line. Later sources win.
fn merge_config(
    config_file: Option<&PathBuf>,
    scenario: Option<&Scenario>,
    sets: &[String],
    cruise_cap: Option<f64>,
) -> Result<RunConfig, UsageError> {
    let mut config = RunConfig::default();
    if let Some(path) = config_file {
        config.apply_document(&read_file(path)?)?;
    }
    if let Some(scenario) = scenario {
        apply_overrides(&mut config, &scenario.overrides)?;
    }
    for pair in sets {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| UsageError(format!("--set needs key=value, got `{pair}`")))?;
        config.set(key.trim(), value.trim())?;
    }
    if let Some(cap) = cruise_cap {
        config.controller.cruise_cap_kmh = Some(cap);
    }
    Ok(config)
}

/// Preset by name, or the perception block of the file at that path.
fn load_perception(spec: &str) -> Result<PerceptionModel, UsageError> {
    if let Some(model) = PerceptionModel::preset(spec) {
        return Ok(model);
    }
    if !Path::new(spec).exists() {
        return Err(UsageError(format!(
            "unknown perception preset or file `{spec}`; presets: clean, train, test"
        )));
    }
    urbansim::config::perception_from_document(&read_file(Path::new(spec))?)?
        .ok_or_else(|| UsageError(format!("`{spec}` has no perception block")))
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, UsageError> {
    fs::create_dir_all(dir).map_err(|e| UsageError(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn cmd_run_episode(args: RunEpisodeArgs) -> Result<ExitCode, UsageError> {
    let scenario = load_scenario(&args.scenario)?;
    let town_name = match (&args.town, &scenario.town) {
        (Some(name), _) => name.clone(),
        (None, Some(name)) => name.clone(),
        (None, None) => return Err(UsageError("scenario names no town; pass --town".into())),
    };
    let mut town = load_town(&town_name)?;
    scenario.apply_lights(&mut town)?;

    let config = merge_config(
        args.config.as_ref(),
        Some(&scenario),
        &args.set,
        args.cruise_cap,
    )?;
    let graph = TopoGraph::from_town(&town)?;
    let spec = scenario.resolve(&town, &graph, &config.episode)?;

    let mut perception = match &args.perception {
        Some(spec) => load_perception(spec)?,
        None => scenario
            .perception
            .clone()
            .unwrap_or_else(PerceptionModel::clean),
    };
    if let Some(seed) = args.seed {
        perception = perception.with_seed(seed);
    }

    write_out(&args.out, "config.txt", &config.dump())?;
    let result = run_episode(&town, &config, &perception, &spec);
    let trace_path = write_out(&args.out, "trace.csv", &result.trace.to_csv())?;

    let score = score_episode(&town, &spec.actors, &config, &result);
    let infractions: usize = score.infractions.iter().sum();
    println!(
        "{}: drove {:.1} m of {:.1} m in {:.1} s, {} infraction{} ({})",
        result.outcome.as_str(),
        result.distance_driven_m,
        result.route_length_m,
        result.final_time_s,
        infractions,
        if infractions == 1 { "" } else { "s" },
        trace_path.display(),
    );
    Ok(if result.outcome.is_success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_run_benchmark(args: RunBenchmarkArgs) -> Result<ExitCode, UsageError> {
    let text = match builtin_suite(&args.suite) {
        Some(text) => text.to_owned(),
        None if Path::new(&args.suite).exists() => read_file(Path::new(&args.suite))?,
        None => {
            return Err(UsageError(format!(
                "unknown suite `{}`; bundled: {}",
                args.suite,
                BUILTIN_SUITES.join(", ")
            )))
        }
    };
    let mut suite = Suite::parse(&text)?;
    if let Some(seed) = args.seed {
        suite.seed = seed;
    }

    let mut towns: Vec<Town> = Vec::new();
    for path in &args.town {
        towns.push(load_town(path)?);
    }
    for name in &suite.towns {
        if towns.iter().any(|t| &t.name == name) {
            continue;
        }
        if let Some(town) = Town::builtin(name) {
            towns.push(town);
        }
    }

    let config = merge_config(args.config.as_ref(), None, &args.set, None)?;
    write_out(&args.out, "config.txt", &config.dump())?;

    let report = match args.parallel {
        None => run_benchmark(&suite, &config, &towns)?,
        Some(0) => return Err(UsageError("--parallel must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| UsageError(e.to_string()))?
            .install(|| run_benchmark(&suite, &config, &towns))?,
    };

    write_out(&args.out, "report.json", &report.to_json())?;
    let text_path = write_out(&args.out, "report.txt", &report.render_text())?;
    print!("{}", report.render_text());
    println!("report written to {}", text_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_tune_probe(args: TuneProbeArgs) -> Result<ExitCode, UsageError> {
    let (ku, tu) = match (args.ku, args.tu) {
        (Some(ku), Some(tu)) => (ku, tu),
        (Some(_), None) | (None, Some(_)) => {
            return Err(UsageError("--ku and --tu go together".into()))
        }
        (None, None) => {
            let plant = ProbePlant::default();
            match oscillation_probe(
                &plant,
                args.target_kmh / 3.6,
                args.kp_start,
                args.kp_factor,
                args.kp_max,
            ) {
                Some(r) => {
                    println!("measured ku {:.6} tu {:.6} s", r.ku, r.tu);
                    (r.ku, r.tu)
                }
                None => {
                    println!(
                        "inconclusive: no sustained oscillation up to kp {}",
                        args.kp_max
                    );
                    return Ok(ExitCode::from(1));
                }
            }
        }
    };
    let gains = ziegler_nichols(ku, tu)?;
    let classic = ziegler_nichols_classic(ku, tu)?;
    println!("gains   kp {:.6} ki {:.6} kd {:.6}", gains.kp, gains.ki, gains.kd);
    println!(
        "classic kp {:.6} ki {:.6} kd {:.6}",
        classic.kp, classic.ki, classic.kd
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_config(args: ConfigArgs) -> Result<ExitCode, UsageError> {
    match args.action {
        ConfigAction::Dump { config, set } => {
            let merged = merge_config(config.as_ref(), None, &set, None)?;
            print!("{}", merged.dump());
            Ok(ExitCode::SUCCESS)
        }
    }
}
