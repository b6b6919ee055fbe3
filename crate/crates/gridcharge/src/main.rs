use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;
use gridcharge::experiment::run_experiment;
use gridcharge::report::write_all;
use gridcharge::scenario::{Scenario, PRESETS};

/// Simulates scheduled EV charging on a radial distribution grid.
#[derive(Debug, Parser)]
#[command(name = "gridcharge", version)]
struct Args {
    /// Scenario file (JSON).
    #[arg(long, conflicts_with = "preset")]
    scenario: Option<PathBuf>,
    /// Built-in scenario; see --list-presets.
    #[arg(long)]
    preset: Option<String>,
    /// Number of seeds (overrides the scenario).
    #[arg(long)]
    seeds: Option<u32>,
    /// First seed (overrides the scenario).
    #[arg(long)]
    base_seed: Option<u64>,
    /// Simulated days including warm-up.
    #[arg(long)]
    days: Option<u32>,
    /// Warm-up days excluded from statistics.
    #[arg(long)]
    warmup: Option<u32>,
    /// Spots per lot on default and copperplate networks.
    #[arg(long)]
    spots: Option<u32>,
    /// Solar peak per lot (kW) on default and copperplate networks.
    #[arg(long)]
    solar_peak: Option<f64>,
    /// Re-check every generated schedule; a failing check aborts the run.
    #[arg(long)]
    audit_schedules: bool,
    /// Save the first schedule generated at or after this time (seconds).
    #[arg(long)]
    dump_schedule_at: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0: all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Also write SVG figures.
    #[arg(long)]
    emit_plots: bool,
    /// List the built-in scenarios and exit.
    #[arg(long)]
    list_presets: bool,
    /// Print a built-in scenario as JSON and exit.
    #[arg(long, value_name = "NAME")]
    print_preset: Option<String>,
}

fn preset(name: &str) -> Result<Scenario> {
    match Scenario::preset(name) {
        Some(s) => Ok(s),
        None => bail!("unknown preset `{name}`; known: {}", PRESETS.join(", ")),
    }
}

fn scenario(args: &Args) -> Result<Scenario> {
    let mut s = match (&args.scenario, &args.preset) {
        (Some(path), _) => Scenario::load(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => bail!("give --scenario FILE or --preset NAME"),
    };
    if let Some(n) = args.seeds {
        s.seeds = n;
    }
    if let Some(b) = args.base_seed {
        s.base_seed = b;
    }
    if let Some(d) = args.days {
        s.days = d;
    }
    if let Some(w) = args.warmup {
        s.warmup_days = w;
    }
    s.override_network(args.spots, args.solar_peak);
    s.audit_schedules |= args.audit_schedules;
    s.validate()?;
    Ok(s)
}

fn main_inner(args: Args) -> Result<ExitCode> {
    if args.list_presets {
        for name in PRESETS {
            let s = preset(name)?;
            println!("{name:14} {}", s.description);
        }
        return Ok(ExitCode::SUCCESS);
    }
    if let Some(name) = &args.print_preset {
        println!("{}", serde_json::to_string_pretty(&preset(name)?)?);
        return Ok(ExitCode::SUCCESS);
    }
    let s = scenario(&args)?;
    let mut config = s.sim_config();
    config.dump_schedule_at = args.dump_schedule_at;
    let runs: usize = s.blocks.iter().map(|b| b.variants.len()).sum::<usize>() * s.seeds as usize;
    eprintln!("{}: {runs} runs of {} days", s.name, s.days);
    let exp = run_experiment(&s, args.jobs, Some(config))?;
    write_all(&exp, &args.out, args.emit_plots).with_context(|| format!("writing {}", args.out.display()))?;
    print!("{}", std::fs::read_to_string(args.out.join("summary.md"))?);
    let failed = exp.failures().count();
    if failed > 0 {
        eprintln!("{failed} of {runs} runs failed; see summary.md and the error.txt files");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match main_inner(Args::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
