//! SVG figures: delay histograms and cable load over time.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, Result};
use gridcharge_core::sim::SimOutcome;
use plotters::prelude::*;

use crate::experiment::Experiment;
use crate::report::slug;

const SIZE: (u32, u32) = (900, 480);

fn err<E: std::fmt::Display>(e: E) -> anyhow::Error {
    anyhow!("plotting: {e}")
}

/// Histogram of the positive delays, in minutes, of one run.
pub fn delay_histogram(outcome: &SimOutcome, title: &str, path: &Path) -> Result<()> {
    let delays: Vec<f64> = outcome
        .records
        .iter()
        .filter(|r| r.arrival >= outcome.warmup_end && r.departed())
        .filter_map(|r| r.tardiness())
        .filter(|&t| t > 1e-6)
        .map(|t| t / 60.0)
        .collect();
    let bin = 5.0;
    let top = delays.iter().copied().fold(0.0, f64::max);
    let bins = ((top / bin).ceil() as usize).max(1);
    let mut counts = vec![0u32; bins];
    for d in &delays {
        counts[((d / bin) as usize).min(bins - 1)] += 1;
    }
    let ymax = counts.iter().copied().max().unwrap_or(0).max(1);

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(45)
        .build_cartesian_2d(0.0..(bins as f64 * bin), 0u32..ymax + 1)
        .map_err(err)?;
    chart
        .configure_mesh()
        .x_desc("delay (min)")
        .y_desc("EVs")
        .draw()
        .map_err(err)?;
    chart
        .draw_series(counts.iter().enumerate().map(|(i, &c)| {
            let x0 = i as f64 * bin;
            Rectangle::new([(x0, 0), (x0 + bin, c)], BLUE.mix(0.6).filled())
        }))
        .map_err(err)?;
    root.present().map_err(err)?;
    Ok(())
}

/// Load of every cable over the counted period, with capacity lines.
pub fn load_over_time(outcome: &SimOutcome, title: &str, path: &Path) -> Result<()> {
    let trace = &outcome.trace;
    let from = outcome.warmup_end;
    let hours = |t: f64| (t - from) / 3600.0;
    let span = hours(trace.end).max(1e-9);
    let peak = trace
        .flows
        .iter()
        .flat_map(|f| f.iter().map(|x| x.abs()))
        .chain(trace.capacities.iter().map(|c| 1.1 * c))
        .fold(1.0, f64::max);

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..span, 0.0..peak * 1.05)
        .map_err(err)?;
    chart
        .configure_mesh()
        .x_desc("hours after warm-up")
        .y_desc("|load| (kW)")
        .draw()
        .map_err(err)?;
    for c in 0..trace.cables.len() {
        let color = Palette99::pick(c).to_rgba();
        let mut points = Vec::new();
        let mut last: Option<f64> = None;
        for (k, &t) in trace.times.iter().enumerate() {
            let load = trace.flows[k][c].abs();
            let x = hours(t);
            if x < 0.0 {
                last = Some(load);
                continue;
            }
            if let Some(prev) = last {
                points.push((x, prev));
            }
            points.push((x, load));
            last = Some(load);
        }
        if let Some(prev) = last {
            points.push((span, prev));
        }
        chart
            .draw_series(LineSeries::new(points, color.stroke_width(1)))
            .map_err(err)?
            .label(trace.cables[c].clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], color));
        let cap = trace.capacities[c];
        chart
            .draw_series(LineSeries::new(vec![(0.0, cap), (span, cap)], BLACK.mix(0.3)))
            .map_err(err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(err)?;
    root.present().map_err(err)?;
    Ok(())
}

/// Both figures for the first successful seed of every block and variant.
pub fn write_plots(exp: &Experiment, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (b, block) in exp.scenario.blocks.iter().enumerate() {
        for v in 0..block.variants.len() {
            let Some((outcome, _)) = exp
                .results
                .iter()
                .filter(|r| r.block == b && r.variant == v)
                .find_map(|r| r.outcome.as_ref().ok())
            else {
                continue;
            };
            let name = format!("{}-{}", slug(&block.label), slug(&exp.variant_name(b, v)));
            let title = format!("{} / {}", block.label, exp.variant_name(b, v));
            delay_histogram(outcome, &title, &dir.join(format!("{name}-delays.svg")))?;
            load_over_time(outcome, &title, &dir.join(format!("{name}-load.svg")))?;
        }
    }
    Ok(())
}
