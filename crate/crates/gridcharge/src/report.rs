//! Output files of an experiment.
//!
//! ```text
//! <out>/summary.csv, summary.md, metadata.json, scenario.json
//! <out>/runs/<block>/<variant>/seed-<n>/{evs.csv, trace.csv, metrics.json[, schedule.csv]}
//! <out>/plots/*.svg                       (with plots enabled)
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gridcharge_core::metrics::Metrics;
use gridcharge_core::sim::{CableTrace, EvRecord, ScheduleDump, SimOutcome};
use serde::Serialize;

use crate::experiment::{Aggregate, Experiment};
use crate::scenario::{GridChoice, DEFAULT_SPOTS};

/// Directory-safe version of a label.
pub fn slug(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c.to_ascii_lowercase() } else { '-' })
        .collect();
    s.trim_matches('-').to_owned()
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.3}")).unwrap_or_default()
}

pub fn write_evs_csv<W: Write>(records: &[EvRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "ev_id",
        "arrival_s",
        "lot",
        "due_s",
        "completion_s",
        "departure_s",
        "tardiness_s",
        "rejected",
    ])?;
    for r in records {
        out.write_record([
            r.id.0.to_string(),
            format!("{:.3}", r.arrival),
            r.lot.map(|l| l.0.to_string()).unwrap_or_default(),
            format!("{:.3}", r.due),
            opt(r.completion),
            opt(r.departure),
            opt(r.tardiness()),
            r.rejected.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trace_csv<W: Write>(trace: &CableTrace, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["time_s".to_owned()];
    header.extend(trace.cables.iter().map(|c| format!("{c}_kw")));
    out.write_record(&header)?;
    for (t, flows) in trace.times.iter().zip(&trace.flows) {
        let mut row = vec![format!("{t:.3}")];
        row.extend(flows.iter().map(|f| format!("{f:.4}")));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_schedule_csv<W: Write>(dump: &ScheduleDump, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["job_id", "lot", "from_s", "to_s", "rate_kw"])?;
    for s in &dump.segments {
        out.write_record([
            s.job.0.to_string(),
            s.lot.0.to_string(),
            format!("{:.3}", s.from),
            format!("{:.3}", s.to),
            format!("{:.4}", s.rate),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RunFile<'a> {
    block: &'a str,
    variant: &'a str,
    seed: u64,
    runtime_s: f64,
    metrics: &'a Metrics,
    audit: &'a gridcharge_core::sim::AuditReport,
    lns_iterations: u64,
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

pub fn run_dir(out: &Path, block: &str, variant: &str, seed: u64) -> PathBuf {
    out.join("runs").join(slug(block)).join(slug(variant)).join(format!("seed-{seed}"))
}

fn write_run(dir: &Path, file: &RunFile<'_>, outcome: &SimOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_evs_csv(&outcome.records, create(&dir.join("evs.csv"))?)?;
    write_trace_csv(&outcome.trace, create(&dir.join("trace.csv"))?)?;
    if let Some(dump) = &outcome.schedule_dump {
        write_schedule_csv(dump, create(&dir.join("schedule.csv"))?)?;
    }
    serde_json::to_writer_pretty(create(&dir.join("metrics.json"))?, file)?;
    Ok(())
}

pub fn summary_csv(rows: &[Aggregate]) -> Result<String> {
    let mut out = csv::Writer::from_writer(Vec::new());
    let cables: Vec<String> = rows.first().map_or(Vec::new(), |r| r.overload.iter().map(|o| o.0.clone()).collect());
    let mut header: Vec<String> = [
        "block",
        "variant",
        "runs",
        "failed",
        "max_delay_s",
        "avg_delay_s",
        "delayed_pct",
        "long_delays",
        "evs_counted",
        "rejected",
        "parked_at_end",
        "regenerations",
        "runtime_s",
        "audit_clean",
    ]
    .map(String::from)
    .to_vec();
    for c in &cables {
        header.push(format!("{c}_manageable"));
        header.push(format!("{c}_problematic"));
    }
    out.write_record(&header)?;
    for r in rows {
        let mut row = vec![
            r.block.clone(),
            r.variant.clone(),
            r.runs.to_string(),
            r.failed.to_string(),
            format!("{:.2}", r.max_delay_s),
            format!("{:.2}", r.avg_delay_s),
            format!("{:.2}", r.delayed_pct),
            format!("{:.2}", r.long_delays),
            format!("{:.1}", r.evs_counted),
            format!("{:.1}", r.rejected),
            format!("{:.1}", r.parked_at_end),
            format!("{:.1}", r.regenerations),
            format!("{:.2}", r.runtime_s),
            r.audit_clean.to_string(),
        ];
        for c in 0..cables.len() {
            let (m, p) = r.overload.get(c).map_or((f64::NAN, f64::NAN), |o| (o.1, o.2));
            row.push(format!("{:.4}", m));
            row.push(format!("{:.4}", p));
        }
        out.write_record(&row)?;
    }
    Ok(String::from_utf8(out.into_inner()?)?)
}

/// One table per block with metrics as rows and variants as columns.
pub fn summary_markdown(exp: &Experiment, rows: &[Aggregate]) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# {}\n", exp.scenario.name);
    if !exp.scenario.description.is_empty() {
        let _ = writeln!(md, "{}\n", exp.scenario.description);
    }
    let _ = writeln!(
        md,
        "Means over {} seeds, {} days of which the first {} are warm-up.\n",
        exp.scenario.seeds, exp.scenario.days, exp.scenario.warmup_days
    );
    for block in &exp.scenario.blocks {
        let cols: Vec<&Aggregate> = rows.iter().filter(|r| r.block == block.label).collect();
        let _ = writeln!(md, "## {}\n", block.label);
        let _ = write!(md, "| Metric |");
        for c in &cols {
            let _ = write!(md, " {} |", c.variant);
        }
        let _ = write!(md, "\n|---|");
        for _ in &cols {
            let _ = write!(md, "---:|");
        }
        md.push('\n');
        let metric = |md: &mut String, name: &str, f: &dyn Fn(&Aggregate) -> String| {
            let _ = write!(md, "| {name} |");
            for c in &cols {
                let _ = write!(md, " {} |", f(c));
            }
            md.push('\n');
        };
        metric(&mut md, "Max. delay (s)", &|a| format!("{:.2}", a.max_delay_s));
        metric(&mut md, "Avg. delay (s)", &|a| format!("{:.2}", a.avg_delay_s));
        metric(&mut md, "EVs delayed (%)", &|a| format!("{:.2}", a.delayed_pct));
        metric(&mut md, "Delay >= 15 min", &|a| format!("{:.2}", a.long_delays));
        metric(&mut md, "EVs counted", &|a| format!("{:.1}", a.evs_counted));
        metric(&mut md, "Rejected EVs", &|a| format!("{:.1}", a.rejected));
        metric(&mut md, "Runtime (s)", &|a| format!("{:.2}", a.runtime_s));
        let uncontrolled = block.variants.iter().any(|v| v.uncontrolled_kw.is_some());
        if uncontrolled {
            if let Some(first) = cols.first() {
                for (c, (name, _, _)) in first.overload.iter().enumerate() {
                    if !name.ends_with("-T") && first.overload[c].1 + first.overload[c].2 == 0.0 {
                        continue;
                    }
                    metric(&mut md, &format!("{name} manageable (%)"), &|a| {
                        format!("{:.1}", 100.0 * a.overload[c].1)
                    });
                    metric(&mut md, &format!("{name} problematic (%)"), &|a| {
                        format!("{:.1}", 100.0 * a.overload[c].2)
                    });
                }
            }
        }
        md.push('\n');
    }
    let failures: Vec<String> = exp
        .failures()
        .map(|r| {
            format!(
                "- {} / {} / seed {}: {}",
                exp.block_label(r.block),
                exp.variant_name(r.block, r.variant),
                r.seed,
                r.outcome.as_ref().err().map_or("", String::as_str)
            )
        })
        .collect();
    if !failures.is_empty() {
        let _ = writeln!(md, "## Failed runs\n\n{}\n", failures.join("\n"));
    }
    md
}

/// Modelling choices that are not fixed by the source data.
#[derive(Serialize)]
pub struct Metadata {
    pub scenario: String,
    pub seeds: Vec<u64>,
    pub assumptions: Vec<String>,
    pub failed_runs: usize,
}

pub fn metadata(exp: &Experiment) -> Metadata {
    let s = &exp.scenario;
    let mut assumptions = vec![
        format!("Spots per lot default to {DEFAULT_SPOTS}; the source data does not give them."),
        "Every lot is equally likely in a parking preference unless a custom grid sets weights.".to_owned(),
        "Every lot of the default network carries a solar array unless configured otherwise.".to_owned(),
        "Connection times shorter than volume / minimum rate are redrawn; this lengthens connections slightly."
            .to_owned(),
        "Solar output is drawn from a normal distribution with a standard deviation relative to the hourly mean, clamped to [0, peak].".to_owned(),
        "Surplus solar that would overload a cable in the reverse direction is curtailed.".to_owned(),
        format!(
            "Schedules count on the hourly mean solar output for {} hours beyond the current hour.",
            s.forecast_horizon_h
        ),
        "EVs still parked when the simulation ends are excluded from delay statistics and counted separately."
            .to_owned(),
    ];
    for b in &s.blocks {
        if let GridChoice::Copperplate { capacity_kw, .. } = b.grid {
            assumptions.push(format!(
                "Block `{}`: the copperplate cable carries {capacity_kw} kW.",
                b.label
            ));
        }
    }
    Metadata {
        scenario: s.name.clone(),
        seeds: s.seed_list(),
        assumptions,
        failed_runs: exp.failures().count(),
    }
}

/// Writes every output file. Returns the aggregated rows.
pub fn write_all(exp: &Experiment, out: &Path, plots: bool) -> Result<Vec<Aggregate>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for r in &exp.results {
        let block = exp.block_label(r.block);
        let variant = exp.variant_name(r.block, r.variant);
        let dir = run_dir(out, block, &variant, r.seed);
        match &r.outcome {
            Ok((outcome, metrics)) => {
                let file = RunFile {
                    block,
                    variant: &variant,
                    seed: r.seed,
                    runtime_s: r.runtime_s,
                    metrics,
                    audit: &outcome.audit,
                    lns_iterations: outcome.lns_iterations,
                };
                write_run(&dir, &file, outcome)?;
            }
            Err(e) => {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("error.txt"), e)?;
            }
        }
    }
    let rows = exp.aggregates();
    fs::write(out.join("summary.csv"), summary_csv(&rows)?)?;
    fs::write(out.join("summary.md"), summary_markdown(exp, &rows))?;
    serde_json::to_writer_pretty(create(&out.join("metadata.json"))?, &metadata(exp))?;
    serde_json::to_writer_pretty(create(&out.join("scenario.json"))?, &exp.scenario)?;
    if plots {
        crate::plots::write_plots(exp, &out.join("plots"))?;
    }
    Ok(rows)
}
