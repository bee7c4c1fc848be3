use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use patchforest::driver::{run_strategy, strategy_matrix, Simulation, StrategyRow};
use patchforest::io::{write_strategy_report_file, ConfigFile, FieldSnapshot, OutputFormat};
use patchforest::{Error, Result};

/// Overrides `output.dir` from the config; `--out` overrides both.
const OUT_DIR_ENV: &str = "PATCHFOREST_OUT_DIR";

#[derive(Parser)]
#[command(name = "patchforest", version, about = "Adaptive patch-based advection on a forest of quadtrees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation, writing snapshots and a stats table.
    Run {
        #[arg(long, value_name = "PATH", required_unless_present = "strategies")]
        config: Option<PathBuf>,
        /// Run the strategy matrix for this config instead.
        #[arg(long, value_name = "PATH", conflicts_with = "config")]
        strategies: Option<PathBuf>,
        #[arg(long, value_name = "P")]
        ranks: Option<usize>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Record every message and write trace.csv.
        #[arg(long)]
        trace: bool,
    },
    /// Run the seven-strategy comparison and write the report.
    Strategies {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[arg(long, value_name = "P")]
        ranks: Option<usize>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config without running it.
    Check {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
    },
}

fn load(path: &Path, ranks: Option<usize>, out: Option<PathBuf>) -> Result<ConfigFile> {
    let mut cfg = ConfigFile::load(path)?;
    if let Some(p) = ranks {
        cfg.run.ranks = p;
    }
    if let Some(dir) = out.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from)) {
        cfg.output.dir = dir;
    }
    cfg.run.validate().map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        e => e,
    })?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = fs::File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))?;
    f(&mut w).and_then(|()| w.flush()).map_err(|e| Error::io(path, e))
}

fn snapshot(sim: &Simulation, cfg: &ConfigFile) -> Result<PathBuf> {
    let snap = FieldSnapshot::capture(sim);
    let stem = format!("snapshot_{:05}", sim.steps());
    match cfg.output.format {
        OutputFormat::Csv => {
            let path = cfg.output.dir.join(format!("{stem}.csv"));
            snap.write_csv_file(&path)?;
            Ok(path)
        }
        OutputFormat::Vtk => snap.write_vtk(&cfg.output.dir, &stem),
    }
}

fn run(cfg: ConfigFile, trace: bool) -> Result<()> {
    create_dir(&cfg.output.dir)?;
    let mut sim = Simulation::new(cfg.run.clone())?;
    if trace {
        sim.cluster_mut().trace = Some(Vec::new());
    }
    let interval = cfg.output.interval;
    let mut written = Vec::new();
    if interval > 0 {
        written.push(snapshot(&sim, &cfg)?);
    }
    sim.run(|s| {
        if (interval > 0 && s.steps() % interval == 0) || s.is_finished() {
            written.push(snapshot(s, &cfg)?);
        }
        Ok(())
    })?;
    if sim.steps() == 0 && interval == 0 {
        written.push(snapshot(&sim, &cfg)?);
    }

    let dir = &cfg.output.dir;
    let owners: Vec<usize> = (0..sim.forest().num_leaves()).map(|i| sim.cluster().partition.owner(i)).collect();
    write_with(&dir.join("leaves.csv"), |w| sim.forest().write_leaf_csv(w, Some(&owners)))?;
    if trace {
        write_with(&dir.join("trace.csv"), |w| sim.cluster().write_trace_csv(w))?;
    }
    let stats = sim.stats();
    let seconds = stats.seconds_advance + stats.seconds_exchange + stats.seconds_regrid;
    let row = StrategyRow::describe(&cfg.run, stats.clone(), seconds);
    write_strategy_report_file(&[row], dir.join("stats.tsv"))?;

    println!("time            {:.6}", sim.time());
    println!("coarse steps    {}", stats.coarse_steps);
    println!("leaves          {}", sim.forest().num_leaves());
    println!("cell updates    {}", stats.cell_updates);
    println!("exchanges       {}", stats.exchanges);
    println!("ghost messages  {}", stats.ghost_messages);
    println!("ghost bytes     {}", stats.ghost_bytes);
    println!("regrids         {}", stats.regrids);
    println!("migrations      {}", stats.migrations);
    println!("max cfl         {:.4}", stats.max_cfl);
    println!("total mass      {:.16e}", sim.total_mass());
    println!("snapshots       {}", written.len());
    if let Some(last) = written.last() {
        println!("last snapshot   {}", last.display());
    }
    Ok(())
}

fn strategies(cfg: ConfigFile) -> Result<()> {
    let rows: Vec<StrategyRow> = strategy_matrix(&cfg.run).iter().map(run_strategy).collect::<Result<_>>()?;
    let path = cfg.report_path();
    write_strategy_report_file(&rows, &path)?;
    patchforest::io::write_strategy_report(&rows, std::io::stdout().lock()).map_err(|e| Error::io("<stdout>", e))?;
    println!("report          {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            strategies: table,
            ranks,
            out,
            trace,
        } => match (config, table) {
            (Some(path), _) => load(&path, ranks, out).and_then(|c| run(c, trace)),
            (None, Some(path)) => load(&path, ranks, out).and_then(strategies),
            (None, None) => unreachable!("clap requires one of them"),
        },
        Command::Strategies { config, ranks, out } => load(&config, ranks, out).and_then(strategies),
        Command::Check { config } => load(&config, None, None).map(|c| {
            let (lo, hi) = c.run.effective_resolutions();
            println!("{}: ok ({lo}x{lo} to {hi}x{hi} per block, {} ranks)", config.display(), c.run.ranks);
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
