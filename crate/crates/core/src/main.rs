use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use etcsim::acceptance::run_all;
use etcsim::design::design;
use etcsim::io::{write_plot, write_run, REPORT_TXT};
use etcsim::scenario::Scenario;
use etcsim::sim::Simulator;
use etcsim::{Error, Result};

#[derive(Parser)]
#[command(name = "etcsim", version, about = "Event-triggered quantized output feedback: design and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file, or a directory holding `scenario.toml`.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long, env = "ETCSIM_OUT")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the design report.
    Design {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate the closed loop and write CSVs plus a summary.
    Run {
        #[command(flatten)]
        common: Common,
        /// Integration step (default T/1000).
        #[arg(long)]
        step: Option<f64>,
        /// Abort on the first invariant warning.
        #[arg(long)]
        strict: bool,
    },
    /// Write a gnuplot script and data files for a finished run.
    Plot {
        /// Run directory.
        #[arg(long, env = "ETCSIM_OUT")]
        out: PathBuf,
    },
    /// Run the acceptance criteria.
    Selftest,
}

fn load(path: &Path) -> Result<Scenario> {
    if path.is_dir() {
        Scenario::load(&path.join("scenario.toml"))
    } else {
        Scenario::load(path)
    }
}

fn out_dir(common: &Common, scenario: &Scenario) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| scenario.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(&scenario.name))
}

fn cmd_design(common: &Common) -> Result<()> {
    let s = load(&common.scenario)?;
    let d = design(&s.inputs)?;
    let text = d.report(&s.reference).to_text();
    print!("{text}");
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(REPORT_TXT), &text)?;
    }
    Ok(())
}

fn cmd_run(common: &Common, step: Option<f64>, strict: bool) -> Result<()> {
    let s = load(&common.scenario)?;
    let d = design(&s.inputs)?;
    let mut cfg = s.sim_config(d.suggested_t_end(1e-4));
    if step.is_some() {
        cfg.h = step;
    }
    cfg.strict = strict;
    let started = Instant::now();
    let traj = Simulator::new(&d, &cfg)?.run()?;
    let elapsed = started.elapsed();
    let dir = out_dir(common, &s);
    let summary = write_run(&dir, &d, &d.report(&s.reference), &traj)?;
    print!("{}", summary.to_text());
    eprintln!("wrote {} in {:.2} s", dir.display(), elapsed.as_secs_f64());
    Ok(())
}

fn cmd_plot(dir: &Path) -> Result<()> {
    let data = write_plot(dir)?;
    eprintln!(
        "wrote {} ({} output samples, {} input samples)",
        dir.join(etcsim::io::PLOT_SCRIPT).display(),
        data.ysamples.1.len(),
        data.ustairs.1.len()
    );
    Ok(())
}

fn cmd_selftest() -> Result<bool> {
    let outcomes = run_all();
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    Ok(failed == 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<bool> = match &cli.command {
        Command::Design { common } => cmd_design(common).map(|_| true),
        Command::Run { common, step, strict } => cmd_run(common, *step, *strict).map(|_| true),
        Command::Plot { out } => cmd_plot(out).map(|_| true),
        Command::Selftest => cmd_selftest(),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Invariant { .. } = e {
                eprintln!("hint: rerun without --strict to log warnings instead");
            }
            ExitCode::from(2)
        }
    }
}
