//! Distribution tables as CSV files: the shipped defaults or a directory
//! holding replacements with the same file names and headers.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gridcharge_core::sampler::{Bin, DistributionTables, RatePair};
use serde::Deserialize;

pub const FILES: [&str; 5] = [
    "solar_availability.csv",
    "arrival_fractions.csv",
    "rate_pairs.csv",
    "volume_bins.csv",
    "connection_bins.csv",
];

const DEFAULTS: [&str; 5] = [
    include_str!("../data/solar_availability.csv"),
    include_str!("../data/arrival_fractions.csv"),
    include_str!("../data/rate_pairs.csv"),
    include_str!("../data/volume_bins.csv"),
    include_str!("../data/connection_bins.csv"),
];

/// Weight sums in the shipped tables are off by rounding up to this much.
pub const SUM_TOLERANCE: f64 = 1e-3;

#[derive(Deserialize)]
struct HourRow {
    hour: usize,
    fraction: f64,
}

#[derive(Deserialize)]
struct RateRow {
    min_kw: f64,
    max_kw: f64,
    probability: f64,
}

#[derive(Deserialize)]
struct VolumeRow {
    lo_kwh: f64,
    hi_kwh: f64,
    weight: f64,
}

#[derive(Deserialize)]
struct ConnectionRow {
    lo_h: f64,
    hi_h: f64,
    weight: f64,
}

fn rows<T: for<'de> Deserialize<'de>>(name: &str, text: &str) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.with_context(|| format!("{name}: row {}", i + 2)))
        .collect()
}

fn hourly(name: &str, text: &str) -> Result<[f64; 24]> {
    let mut out = [f64::NAN; 24];
    for r in rows::<HourRow>(name, text)? {
        if r.hour >= 24 {
            bail!("{name}: hour {} out of range", r.hour);
        }
        out[r.hour] = r.fraction;
    }
    if let Some(h) = out.iter().position(|x| x.is_nan()) {
        bail!("{name}: hour {h} missing");
    }
    Ok(out)
}

/// Parses the five tables (in the order of [`FILES`]), checks them and
/// rescales the weights to sum to one.
pub fn parse(texts: [&str; 5]) -> Result<DistributionTables> {
    let tables = DistributionTables {
        solar_availability: hourly(FILES[0], texts[0])?,
        arrival_fractions: hourly(FILES[1], texts[1])?,
        rate_pairs: rows::<RateRow>(FILES[2], texts[2])?
            .into_iter()
            .map(|r| RatePair {
                min: r.min_kw,
                max: r.max_kw,
                probability: r.probability,
            })
            .collect(),
        volume_bins: rows::<VolumeRow>(FILES[3], texts[3])?
            .into_iter()
            .map(|r| Bin {
                lo: r.lo_kwh,
                hi: r.hi_kwh,
                weight: r.weight,
            })
            .collect(),
        connection_bins: rows::<ConnectionRow>(FILES[4], texts[4])?
            .into_iter()
            .map(|r| Bin {
                lo: r.lo_h,
                hi: r.hi_h,
                weight: r.weight,
            })
            .collect(),
    };
    tables.validate(SUM_TOLERANCE)?;
    Ok(tables.normalized())
}

pub fn default_tables() -> DistributionTables {
    parse(DEFAULTS).expect("shipped tables are valid")
}

/// Tables from `dir`; files that are absent fall back to the defaults.
pub fn load_tables(dir: &Path) -> Result<DistributionTables> {
    let mut owned: Vec<String> = Vec::new();
    for (name, default) in FILES.iter().zip(DEFAULTS) {
        let path = dir.join(name);
        if path.exists() {
            owned.push(fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?);
        } else {
            owned.push(default.to_owned());
        }
    }
    parse(core::array::from_fn(|i| owned[i].as_str()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let t = default_tables();
        assert_eq!(t.rate_pairs.len(), 16);
        assert_eq!(t.volume_bins.len(), 102);
        assert_eq!(t.connection_bins.len(), 71);
        let sum: f64 = t.arrival_fractions.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert_eq!(t.volume_bins.last().unwrap().hi, 102.0);
    }

    #[test]
    fn missing_hour_is_reported() {
        let mut texts = DEFAULTS;
        texts[0] = "hour,fraction\n0,0.1\n";
        let err = parse(texts).unwrap_err().to_string();
        assert!(err.contains("hour 1 missing"), "{err}");
    }

    #[test]
    fn bad_row_names_line() {
        let mut texts = DEFAULTS;
        texts[2] = "min_kw,max_kw,probability\n3,6,0.5\n3,x,0.5\n";
        let err = format!("{:#}", parse(texts).unwrap_err());
        assert!(err.contains("rate_pairs.csv: row 3"), "{err}");
    }
}
