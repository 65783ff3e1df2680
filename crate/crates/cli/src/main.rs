use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use spde2d::harness::config::ModelBlock;
use spde2d::harness::output::write_outputs;
use spde2d::harness::{estimate_dataset, run_replicates, ExperimentConfig};
use spde2d::{Error, GridSpec, ObservationGrid, SeedPath, SimulationPlan};

/// Simulation and small-noise estimation for a 2-D linear parabolic SPDE.
#[derive(Parser)]
#[command(name = "spde2d", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration file (`section.key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (file or directory depending on the command).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `run.threads`.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one dataset and write the surface dump CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
    /// Estimate from one surface dump and print the report as JSON.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Surface dump produced by `simulate`.
        #[arg(long)]
        data: PathBuf,
    },
    /// SPDE Monte Carlo: writes replicates.csv and summary.json.
    Mc {
        #[command(flatten)]
        common: Common,
    },
    /// Ornstein-Uhlenbeck Monte Carlo: writes replicates.csv and summary.json.
    OuMc {
        #[command(flatten)]
        common: Common,
    },
    /// Cross-sections of one simulated field at a fixed t, y or z.
    Paths {
        #[command(flatten)]
        common: Common,
        /// `t=<value>`, `y=<value>` or `z=<value>`; snapped to the nearest grid point.
        #[arg(long)]
        section: String,
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
}

fn load(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.run.out = out.clone();
    }
    if let Some(t) = common.threads {
        cfg.run.threads = t;
    }
    if cfg.run.threads > 0 {
        // keeps the simulator's inner parallelism within the limit as well
        spde2d::harness::run::init_global_pool(cfg.run.threads)?;
    }
    Ok(cfg)
}

fn simulate_one(cfg: &ExperimentConfig, replicate: u64) -> anyhow::Result<ObservationGrid> {
    let ModelBlock::Spde(b) = &cfg.model else {
        bail!(Error::Config("this command needs model.type = spde".into()));
    };
    let g = &cfg.grid;
    let plan = SimulationPlan::new(
        &b.params,
        &b.noise,
        &b.xi.build(&b.params),
        b.epsilon,
        GridSpec::new(g.n_obs, g.m1, g.m2)?,
        &g.simulation,
    )?;
    Ok(plan.simulate(SeedPath::new(cfg.run.seed, replicate)))
}

fn writer(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_section(obs: &ObservationGrid, section: &str, out: &mut impl Write) -> anyhow::Result<()> {
    let (axis, value) = section
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--section must look like t=0.5, got {section}")))?;
    let value: f64 = value.trim().parse().map_err(|_| Error::Config(format!("bad section value {value}")))?;
    let (n1, m1p, m2p) = obs.field.dim();
    let snap = |count: usize| ((value * (count - 1) as f64).round() as usize).min(count - 1);
    writeln!(out, "t,y,z,value")?;
    let mut row = |i: usize, j1: usize, j2: usize| -> std::io::Result<()> {
        writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e}", obs.t(i), obs.y(j1), obs.z(j2), obs.field[[i, j1, j2]])
    };
    match axis.trim() {
        "t" => {
            let i = snap(n1);
            for j1 in 0..m1p {
                for j2 in 0..m2p {
                    row(i, j1, j2)?;
                }
            }
        }
        "y" => {
            let j1 = snap(m1p);
            for i in 0..n1 {
                for j2 in 0..m2p {
                    row(i, j1, j2)?;
                }
            }
        }
        "z" => {
            let j2 = snap(m2p);
            for i in 0..n1 {
                for j1 in 0..m1p {
                    row(i, j1, j2)?;
                }
            }
        }
        other => bail!(Error::Config(format!("section axis must be t, y or z, got {other}"))),
    }
    Ok(())
}

fn run_mc(cfg: &ExperimentConfig, want_ou: bool) -> anyhow::Result<ExitCode> {
    let is_ou = matches!(cfg.model, ModelBlock::Ou(_));
    if is_ou != want_ou {
        bail!(Error::Config(format!("this command needs model.type = {}", if want_ou { "ou" } else { "spde" })));
    }
    let table = run_replicates(cfg)?;
    let summary = write_outputs(&cfg.run.out, cfg, &table)?;
    eprintln!("{} replicates, {} failed; outputs in {}", table.len(), table.failures(), cfg.run.out.display());
    if table.experiment_failed() || summary.is_none() {
        eprintln!("experiment failed");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Simulate { common, replicate } => {
            let cfg = load(&common)?;
            let obs = simulate_one(&cfg, replicate)?;
            let path = common.out.unwrap_or_else(|| cfg.run.out.join("surface.csv"));
            let mut w = writer(&path)?;
            obs.write_csv(&mut w)?;
            w.flush()?;
        }
        Command::Estimate { common, data } => {
            let cfg = load(&common)?;
            let ModelBlock::Spde(b) = &cfg.model else {
                bail!(Error::Config("estimate needs model.type = spde".into()));
            };
            let file = File::open(&data).with_context(|| format!("opening {}", data.display()))?;
            let obs = ObservationGrid::read_csv(BufReader::new(file), b.epsilon)?;
            let report = estimate_dataset(&cfg, &obs)?;
            let json = serde_json::to_string_pretty(&report)?;
            match common.out {
                Some(p) => {
                    let mut w = writer(&p)?;
                    writeln!(w, "{json}")?;
                }
                None => println!("{json}"),
            }
        }
        Command::Mc { common } => return run_mc(&load(&common)?, false),
        Command::OuMc { common } => return run_mc(&load(&common)?, true),
        Command::Paths { common, section, replicate } => {
            let cfg = load(&common)?;
            let obs = simulate_one(&cfg, replicate)?;
            let path = common.out.unwrap_or_else(|| cfg.run.out.join("paths.csv"));
            let mut w = writer(&path)?;
            write_section(&obs, &section, &mut w)?;
            w.flush()?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Config(_)) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
