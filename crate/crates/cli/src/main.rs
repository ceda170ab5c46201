use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use drlte::baselines::{num_action, num_solve, NumTolerances};
use drlte::harness::{
    apply_env_overrides, read_csv, run_experiment_with, write_outputs, Arm, ExperimentConfig, RunRecord,
};
use drlte::topology::{
    generate_random_topology, load_sessions, load_topology_file, make_sessions_with_paths, BundledTopology,
    DemandWindow, NetworkGraph, TopologyDoc,
};

#[derive(Parser)]
#[command(name = "drlte", version, about = "Traffic-engineering experiments with a DRL agent, baselines and a packet simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run(RunArgs),
    /// Solve the proportional-fair NUM program and print flows and certificates.
    SolveNum(SolveArgs),
    /// Generate a random connected topology document.
    GenTopology(GenArgs),
    /// Merge per-run CSVs into one plot-ready table of smoothed rewards.
    Export(ExportArgs),
    /// Print the default experiment config.
    InitConfig,
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Output directory (overrides DRLTE_OUTPUT_DIR and the config).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Worker threads (overrides DRLTE_JOBS).
    #[arg(short, long)]
    jobs: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated arms: DRL-TE, DDPG, SP, LB, NUM.
    #[arg(long, value_delimiter = ',')]
    arms: Option<Vec<Arm>>,
}

#[derive(Args)]
struct TopologyArgs {
    /// Bundled topology: nsfnet, arpanet or random20.
    #[arg(long, default_value = "nsfnet", conflicts_with = "topology_file")]
    topology: String,
    /// Topology document (JSON).
    #[arg(long)]
    topology_file: Option<PathBuf>,
}

impl TopologyArgs {
    fn load(&self) -> Result<NetworkGraph> {
        if let Some(p) = &self.topology_file {
            return load_topology_file(p).with_context(|| format!("loading {}", p.display()));
        }
        let which = match self.topology.to_ascii_lowercase().as_str() {
            "nsfnet" => BundledTopology::Nsfnet,
            "arpanet" => BundledTopology::Arpanet,
            "random20" => BundledTopology::Random20,
            other => bail!("unknown bundled topology {other:?}"),
        };
        Ok(which.load())
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    topology: TopologyArgs,
    /// Session document (JSON); otherwise sessions are drawn at random.
    #[arg(long)]
    sessions_file: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    sessions: usize,
    #[arg(long, default_value_t = 10.0)]
    window_lo: f64,
    #[arg(long, default_value_t = 30.0)]
    window_hi: f64,
    #[arg(long, default_value_t = 3)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    nodes: usize,
    #[arg(long)]
    links: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write to a file instead of stdout.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Directory holding per-run CSVs from `run`.
    input: PathBuf,
    #[arg(short, long, default_value = "curves.csv")]
    out: PathBuf,
    /// Column to collect from each run.
    #[arg(long, default_value = "reward_smooth")]
    column: String,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::SolveNum(a) => solve(a),
        Command::GenTopology(a) => gen(a),
        Command::Export(a) => export(a),
        Command::InitConfig => {
            print!("{}", ExperimentConfig::default().to_toml());
            Ok(())
        }
    }
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    let env_jobs = apply_env_overrides(&mut cfg)?;
    if let Some(o) = a.output {
        cfg.output_dir = o;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    if let Some(arms) = a.arms {
        cfg.arms = arms;
    }
    cfg.validate()?;
    let base = a.config.parent().filter(|p| !p.as_os_str().is_empty());
    let records = run_experiment_with(&cfg, base, a.jobs.or(env_jobs))?;
    let paths = write_outputs(&records, &cfg.output_dir)?;
    print_summary(&records);
    eprintln!("wrote {} files to {}", paths.len(), cfg.output_dir.display());
    Ok(())
}

fn print_summary(records: &[RunRecord]) {
    println!(
        "{:<7} {:>13} {:>6} {:>12} {:>14} {:>11} {:>8}",
        "arm", "window_mbps", "seed", "utility", "throughput_mbps", "delay_ms", "drops"
    );
    for r in records {
        let s = &r.summary;
        println!(
            "{:<7} {:>13} {:>6} {:>12.4} {:>14.4} {:>11.4} {:>8}",
            r.spec.arm.label(),
            format!("{}-{}", r.spec.window.lo / 1e6, r.spec.window.hi / 1e6),
            r.spec.seed,
            s.mean_utility,
            s.mean_throughput_mbps,
            s.mean_delay_ms,
            s.total_drops
        );
    }
}

fn solve(a: SolveArgs) -> Result<()> {
    let g = a.topology.load()?;
    let sessions = match &a.sessions_file {
        Some(p) => load_sessions(&g, &fs::read_to_string(p)?)?,
        None => {
            let window = DemandWindow::from_mbps(a.window_lo, a.window_hi);
            make_sessions_with_paths(&g, a.sessions, window, a.paths, a.seed)?
        }
    };
    let sol = num_solve(&g, &sessions, 1.0, &NumTolerances::default())?;
    let action = num_action(&sol);
    let report: Vec<_> = sessions
        .iter()
        .zip(&sol.throughput)
        .zip(action.ratios())
        .map(|((s, x), w)| {
            serde_json::json!({
                "id": s.id,
                "src": g.node_name(s.src),
                "dst": g.node_name(s.dst),
                "demand_mbps": s.demand_mean / 1e6,
                "throughput_mbps": x / 1e6,
                "paths": s.paths.iter().map(|p| p.node_names(&g).join("-")).collect::<Vec<_>>(),
                "split": w,
            })
        })
        .collect();
    let out = serde_json::json!({
        "objective": sol.objective,
        "sessions": report,
        "certificate": sol.diagnostics,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn gen(a: GenArgs) -> Result<()> {
    let g = generate_random_topology(a.nodes, a.links, a.seed)?;
    let text = serde_json::to_string_pretty(&TopologyDoc::from_graph(&g))? + "\n";
    match a.out {
        Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let mut runs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for entry in fs::read_dir(&a.input).with_context(|| format!("reading {}", a.input.display()))? {
        let path = entry?.path();
        let Some(name) = run_name(&path) else { continue };
        let rows = read_csv(&path).with_context(|| format!("parsing {}", path.display()))?;
        let values = rows
            .iter()
            .map(|r| match a.column.as_str() {
                "reward" => Ok(r.reward),
                "reward_norm" => Ok(r.reward_norm),
                "reward_smooth" => Ok(r.reward_smooth),
                "drops" => Ok(r.drops as f64),
                "epsilon" => Ok(r.epsilon),
                "mean_abs_td" => Ok(r.mean_abs_td),
                other => bail!("unsupported column {other:?}"),
            })
            .collect::<Result<Vec<f64>>>()?;
        runs.insert(name, values);
    }
    if runs.is_empty() {
        bail!("no run CSVs found in {}", a.input.display());
    }
    let len = runs.values().map(Vec::len).max().unwrap_or(0);
    let mut out = String::from("epoch");
    for name in runs.keys() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..len {
        out.push_str(&(i + 1).to_string());
        for v in runs.values() {
            out.push(',');
            if let Some(x) = v.get(i) {
                out.push_str(&x.to_string());
            }
        }
        out.push('\n');
    }
    fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("wrote {} runs to {}", runs.len(), a.out.display());
    Ok(())
}

/// Per-run CSVs are every `.csv` except the summary.
fn run_name(path: &Path) -> Option<String> {
    if path.extension()? != "csv" {
        return None;
    }
    let stem = path.file_stem()?.to_str()?;
    (stem != "summary").then(|| stem.to_string())
}
