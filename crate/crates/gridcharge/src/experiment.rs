//! Runs every (block, variant, seed) combination of a scenario and averages
//! the metrics over seeds.

use std::time::Instant;

use anyhow::{Context, Result};
use gridcharge_core::grid::GridTree;
use gridcharge_core::metrics::{summarize, Metrics};
use gridcharge_core::sampler::{Instance, Sampler};
use gridcharge_core::sim::{run, SimConfig, SimOutcome};
use rayon::prelude::*;
use serde::Serialize;

use crate::scenario::{Rates, Scenario};
use crate::tables::{default_tables, load_tables};

/// One simulation run.
#[derive(Debug)]
pub struct RunResult {
    pub block: usize,
    pub variant: usize,
    pub seed: u64,
    pub runtime_s: f64,
    pub outcome: Result<(SimOutcome, Metrics), String>,
}

/// Mean over the successful seeds of one block and variant.
#[derive(Clone, Debug, Serialize)]
pub struct Aggregate {
    pub block: String,
    pub variant: String,
    pub runs: usize,
    pub failed: usize,
    pub max_delay_s: f64,
    pub avg_delay_s: f64,
    pub delayed_pct: f64,
    pub long_delays: f64,
    pub evs_counted: f64,
    pub rejected: f64,
    pub parked_at_end: f64,
    pub regenerations: f64,
    pub runtime_s: f64,
    /// Per cable: name, mean manageable and mean problematic fraction.
    pub overload: Vec<(String, f64, f64)>,
    pub audit_clean: bool,
}

pub struct Experiment {
    pub scenario: Scenario,
    pub grids: Vec<GridTree>,
    pub results: Vec<RunResult>,
}

impl Experiment {
    pub fn block_label(&self, b: usize) -> &str {
        &self.scenario.blocks[b].label
    }

    pub fn variant_name(&self, b: usize, v: usize) -> String {
        self.scenario.blocks[b].variants[v].name()
    }

    pub fn failures(&self) -> impl Iterator<Item = &RunResult> {
        self.results.iter().filter(|r| r.outcome.is_err())
    }

    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut out = Vec::new();
        for (b, block) in self.scenario.blocks.iter().enumerate() {
            for v in 0..block.variants.len() {
                let runs: Vec<&RunResult> = self.results.iter().filter(|r| r.block == b && r.variant == v).collect();
                let ok: Vec<(&SimOutcome, &Metrics, f64)> = runs
                    .iter()
                    .filter_map(|r| r.outcome.as_ref().ok().map(|(o, m)| (o, m, r.runtime_s)))
                    .collect();
                let avg = |f: &dyn Fn(&Metrics) -> f64| mean(ok.iter().map(|(_, m, _)| f(m)));
                let cables = ok.first().map_or(0, |(_, m, _)| m.overload.len());
                let overload = (0..cables)
                    .map(|c| {
                        (
                            ok[0].1.overload[c].cable.clone(),
                            avg(&|m| m.overload[c].manageable),
                            avg(&|m| m.overload[c].problematic),
                        )
                    })
                    .collect();
                out.push(Aggregate {
                    block: block.label.clone(),
                    variant: self.variant_name(b, v),
                    runs: ok.len(),
                    failed: runs.len() - ok.len(),
                    max_delay_s: avg(&|m| m.delay.max_s),
                    avg_delay_s: avg(&|m| m.delay.avg_s),
                    delayed_pct: avg(&|m| m.delay.delayed_pct),
                    long_delays: avg(&|m| m.delay.long_delays as f64),
                    evs_counted: avg(&|m| m.delay.count as f64),
                    rejected: avg(&|m| m.rejected as f64),
                    parked_at_end: avg(&|m| m.parked_at_end as f64),
                    regenerations: avg(&|m| m.regenerations as f64),
                    runtime_s: mean(ok.iter().map(|(_, _, t)| *t)),
                    overload,
                    audit_clean: ok.iter().all(|(o, _, _)| o.audit.is_clean()),
                });
            }
        }
        out
    }
}

pub fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// The EVs and solar output every variant of `block` sees under `seed`.
pub fn block_instance(scenario: &Scenario, sampler: &Sampler<'_>, grid: &GridTree, block: usize, seed: u64) -> Instance {
    let b = &scenario.blocks[block];
    let mut inst = Instance::generate(sampler, grid, seed, scenario.days);
    if let Rates::Fixed { kw } = b.rates {
        inst = inst.with_fixed_rate(kw);
    }
    if !b.solar {
        inst = inst.without_solar();
    }
    inst
}

/// Executes all runs of `scenario` on up to `jobs` threads (0: all cores).
/// Faulting runs are kept as errors; they do not abort the others.
pub fn run_experiment(scenario: &Scenario, jobs: usize, config: Option<SimConfig>) -> Result<Experiment> {
    scenario.validate()?;
    let tables = match &scenario.tables_dir {
        Some(dir) => load_tables(dir)?,
        None => default_tables(),
    };
    let sampler = Sampler::new(&tables, scenario.sampler).context("sampler configuration")?;
    let grids = scenario
        .blocks
        .iter()
        .map(|b| b.grid.build())
        .collect::<Result<Vec<_>>>()?;
    let config = config.unwrap_or_else(|| scenario.sim_config());
    let seeds = scenario.seed_list();

    let mut tasks = Vec::new();
    for (b, block) in scenario.blocks.iter().enumerate() {
        for &seed in &seeds {
            for v in 0..block.variants.len() {
                tasks.push((b, v, seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let results = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(b, v, seed)| {
                let started = Instant::now();
                let inst = block_instance(scenario, &sampler, &grids[b], b, seed);
                let control = scenario.blocks[b].variants[v].control().expect("validated");
                let outcome = run(&grids[b], &inst, &control, &config, seed)
                    .map(|o| {
                        let m = summarize(&o);
                        (o, m)
                    })
                    .map_err(|e| e.to_string());
                RunResult {
                    block: b,
                    variant: v,
                    seed,
                    runtime_s: started.elapsed().as_secs_f64(),
                    outcome,
                }
            })
            .collect()
    });
    Ok(Experiment {
        scenario: scenario.clone(),
        grids,
        results,
    })
}
