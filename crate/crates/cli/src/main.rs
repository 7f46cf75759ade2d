//! `khop`: run scenarios, inspect graphs and export plot series.

mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use khop_ppo::config::{LoadedConfig, Profile};
use khop_ppo::graph::{Graph, NeighborhoodMode, Topology};
use khop_ppo::sim::{run, write_outputs, Scenario};
use khop_ppo::Error;

/// Exit codes, stable across releases.
mod exit {
    pub const OK: u8 = 0;
    pub const VIOLATIONS: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const INFEASIBLE: u8 = 3;
    pub const NON_FINITE: u8 = 4;
}

#[derive(Parser, Debug)]
#[command(name = "khop", version, about = "Decentralized k-hop prescribed performance observers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProfileArg {
    /// Euler, dt = 1e-5.
    Paper,
    /// RK4, dt = 1e-4.
    Desk,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Paper => Profile::Paper,
            ProfileArg::Desk => Profile::Desk,
        }
    }
}

#[derive(clap::Args, Debug)]
struct ScenarioArgs {
    /// Scenario file (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a scenario key, e.g. `--set controller.gain=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Integration profile applied before the overrides.
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
}

impl ScenarioArgs {
    fn load(&self) -> khop_ppo::Result<LoadedConfig> {
        LoadedConfig::load(&self.config, self.profile.map(Into::into), &self.overrides)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a scenario and write trajectory.csv, assertions.csv and summary.txt.
    ///
    /// Exit status: 0 all funnels respected, 1 violations or funnel contacts,
    /// 2 invalid scenario or I/O failure, 3 infeasible funnels,
    /// 4 non-finite state.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory. Defaults to the scenario's `output.dir`, then
        /// `out/<name>` next to the scenario file.
        #[arg(long, env = "KHOP_OUT_DIR")]
        out: Option<PathBuf>,
    },
    /// Report connectivity, k-hop neighborhoods and disagreement matrix
    /// spectra of an edge-list graph in both neighborhood modes.
    VerifyGraph {
        graph: PathBuf,
        #[arg(long, short, default_value_t = 2)]
        k: usize,
        /// Report a single agent (1-based).
        #[arg(long)]
        agent: Option<usize>,
    },
    /// Reduce a trajectory to the series plotted for estimation performance:
    /// per-target maximum absolute errors and disagreements with their bounds,
    /// and the consensus trajectories.
    PlotData {
        /// trajectory.csv written by `run`.
        #[arg(long)]
        trajectory: PathBuf,
        /// Scenario that produced the trajectory; the bounds are recomputed from it.
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Series to export: `agent<N>.state`, `agent<N>.input`, `agent<N>`
        /// or `consensus`. Repeatable; all series when absent.
        #[arg(long = "select")]
        selection: Vec<String>,
        /// Output directory; the trajectory's directory when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also draw each series as an SVG chart.
        #[arg(long)]
        svg: bool,
    },
}

fn error_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible { .. } | Error::InvalidFunnel(_) | Error::Certificate { .. } => {
            exit::INFEASIBLE
        }
        Error::NonFinite { .. } => exit::NON_FINITE,
        _ => exit::CONFIG,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, out } => cmd_run(&scenario, out),
        Command::VerifyGraph { graph, k, agent } => cmd_verify_graph(&graph, k, agent),
        Command::PlotData {
            trajectory,
            scenario,
            selection,
            out,
            svg,
        } => cmd_plot_data(&trajectory, &scenario, &selection, out, svg),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<Error>())
                .map_or(exit::CONFIG, error_code);
            ExitCode::from(code)
        }
    }
}

fn cmd_run(args: &ScenarioArgs, out: Option<PathBuf>) -> anyhow::Result<u8> {
    let loaded = args.load()?;
    let out_dir = out
        .or_else(|| loaded.config.output.dir.as_ref().map(|d| loaded.resolve(d)))
        .unwrap_or_else(|| loaded.resolve(&Path::new("out").join(&loaded.config.name)));
    let spec = loaded.to_spec()?;
    let scenario = Scenario::build(spec)?;
    let bound = scenario.stable_step_bound();
    if scenario.spec.dt > bound {
        eprintln!(
            "warning: dt = {:e} exceeds the estimated stable step {:.3e} of the observer corrections",
            scenario.spec.dt, bound
        );
    }
    let traj = run(&scenario)?;
    let paths = write_outputs(&out_dir, &scenario, &traj)
        .with_context(|| format!("writing results to {}", out_dir.display()))?;
    println!("{}", traj.summary);
    println!("wrote {}", paths.trajectory.display());
    println!("wrote {}", paths.assertions.display());
    println!("wrote {}", paths.summary.display());
    Ok(if traj.summary.is_certified() {
        exit::OK
    } else {
        exit::VIOLATIONS
    })
}

fn cmd_verify_graph(path: &Path, k: usize, agent: Option<usize>) -> anyhow::Result<u8> {
    let graph = Graph::read_edge_list(path)?;
    let n = graph.node_count();
    let connected = graph.is_connected();
    println!(
        "graph {}: {n} nodes, {} edges, connected: {}",
        path.display(),
        graph.edge_count(),
        if connected { "yes" } else { "no" }
    );
    if !connected {
        eprintln!("error: the graph is not connected; disagreement matrices may be singular");
        return Ok(exit::VIOLATIONS);
    }
    if let Some(a) = agent {
        graph.check_node(a.wrapping_sub(1))?;
    }
    for mode in [NeighborhoodMode::Standard, NeighborhoodMode::Extended] {
        let topo = Topology::new(graph.clone(), k, mode)?;
        println!();
        println!("mode {mode:?}, k = {k}");
        println!("{:>6} {:>4} {:>14} {:>14}  members", "agent", "eta", "lambda_min", "lambda_max");
        for (i, nbhd) in topo.neighborhoods.iter().enumerate() {
            if agent.is_some_and(|a| a != i + 1) {
                continue;
            }
            let members: Vec<String> = nbhd.members.iter().map(|m| (m + 1).to_string()).collect();
            match &topo.matrices[i] {
                Some(m) => println!(
                    "{:>6} {:>4} {:>14.9} {:>14.9}  {}",
                    i + 1,
                    nbhd.eta(),
                    m.lambda_min,
                    m.lambda_max,
                    members.join(" ")
                ),
                None => println!("{:>6} {:>4} {:>14} {:>14}  (nothing to estimate)", i + 1, 0, "-", "-"),
            }
        }
    }
    Ok(exit::OK)
}

fn cmd_plot_data(
    trajectory: &Path,
    args: &ScenarioArgs,
    selection: &[String],
    out: Option<PathBuf>,
    svg: bool,
) -> anyhow::Result<u8> {
    let loaded = args.load()?;
    let scenario = Scenario::build(loaded.to_spec()?)?;
    let table = plot::TrajectoryTable::read(trajectory)?;
    let selections = plot::parse_selection(selection, &scenario)?;
    let out_dir = out.unwrap_or_else(|| {
        trajectory
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    for sel in selections {
        let series = plot::reduce(&table, &scenario, sel)?;
        let path = out_dir.join(format!("{}.csv", sel.file_stem()));
        series.write_csv(&path)?;
        println!("wrote {}", path.display());
        if svg {
            let path = out_dir.join(format!("{}.svg", sel.file_stem()));
            std::fs::write(&path, series.to_svg())
                .with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
        }
    }
    Ok(exit::OK)
}
