//! JSON scenario files and the built-in presets.
//!
//! A scenario is a list of blocks. Every block fixes a network, the rate
//! regime and whether solar is on, and lists the control variants to
//! compare. All variants of a block see the same EVs and solar output for a
//! given seed.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gridcharge_core::fleet::PriorityRule;
use gridcharge_core::grid::{GridSpec, GridTree};
use gridcharge_core::lns::RepairParams;
use gridcharge_core::sampler::SamplerConfig;
use gridcharge_core::sim::{Control, Mode, SchedulerKind, SimConfig, Strategy};
use serde::{Deserialize, Serialize};

pub const PRESETS: [&str; 5] = ["table2", "table3", "table4", "table5", "uncontrolled"];

/// Spots per lot in the default network; the source data does not say.
pub const DEFAULT_SPOTS: u32 = 70;
/// Solar peak per lot in the default network, kW.
pub const DEFAULT_SOLAR_PEAK_KW: f64 = 200.0;
/// Capacity of the single cable of the copperplate network, kW.
pub const DEFAULT_COPPERPLATE_KW: f64 = 400.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_seeds")]
    pub seeds: u32,
    #[serde(default = "default_base_seed")]
    pub base_seed: u64,
    #[serde(default = "default_days")]
    pub days: u32,
    #[serde(default = "default_warmup")]
    pub warmup_days: u32,
    #[serde(default = "default_horizon")]
    pub forecast_horizon_h: u32,
    /// Re-check every generated schedule with an independent sweep.
    #[serde(default)]
    pub audit_schedules: bool,
    /// Directory with replacement distribution tables.
    #[serde(default)]
    pub tables_dir: Option<PathBuf>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    pub blocks: Vec<Block>,
}

fn default_seeds() -> u32 {
    5
}
fn default_base_seed() -> u64 {
    1
}
fn default_days() -> u32 {
    9
}
fn default_warmup() -> u32 {
    2
}
fn default_horizon() -> u32 {
    48
}
fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub label: String,
    pub grid: GridChoice,
    #[serde(default)]
    pub rates: Rates,
    #[serde(default = "yes")]
    pub solar: bool,
    pub variants: Vec<Variant>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum GridChoice {
    /// Two 200 kW feeders with three and four lots behind 200 kW cables.
    Default {
        #[serde(default = "default_spots")]
        spots: u32,
        #[serde(default = "default_peak")]
        solar_peak_kw: f64,
    },
    /// One lot with the spots and panels of `lots` lots behind one cable.
    Copperplate {
        #[serde(default = "default_lots")]
        lots: u32,
        #[serde(default = "default_spots")]
        spots_per_lot: u32,
        #[serde(default = "default_peak")]
        solar_peak_per_lot_kw: f64,
        #[serde(default = "default_copperplate")]
        capacity_kw: f64,
    },
    Custom(GridSpec),
}

fn default_spots() -> u32 {
    DEFAULT_SPOTS
}
fn default_peak() -> f64 {
    DEFAULT_SOLAR_PEAK_KW
}
fn default_lots() -> u32 {
    7
}
fn default_copperplate() -> f64 {
    DEFAULT_COPPERPLATE_KW
}

impl GridChoice {
    pub fn default_grid() -> Self {
        Self::Default {
            spots: DEFAULT_SPOTS,
            solar_peak_kw: DEFAULT_SOLAR_PEAK_KW,
        }
    }

    pub fn copperplate() -> Self {
        Self::Copperplate {
            lots: 7,
            spots_per_lot: DEFAULT_SPOTS,
            solar_peak_per_lot_kw: DEFAULT_SOLAR_PEAK_KW,
            capacity_kw: DEFAULT_COPPERPLATE_KW,
        }
    }

    pub fn spec(&self) -> GridSpec {
        match self {
            Self::Default { spots, solar_peak_kw } => GridSpec::default_case(*spots, *solar_peak_kw),
            Self::Copperplate {
                lots,
                spots_per_lot,
                solar_peak_per_lot_kw,
                capacity_kw,
            } => GridSpec::copperplate(*lots, *spots_per_lot, *solar_peak_per_lot_kw, *capacity_kw),
            Self::Custom(spec) => spec.clone(),
        }
    }

    pub fn build(&self) -> Result<GridTree> {
        Ok(self.spec().validate()?)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum Rates {
    /// Rate pairs as sampled.
    #[default]
    Flexible,
    /// Every EV charges at exactly this many kW.
    Fixed { kw: f64 },
}

/// One control variant. Either `scheduler` or `uncontrolled_kw` is set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub scheduler: Option<SchedulerKind>,
    /// Rule for the initial schedule; defaults per scheduler.
    #[serde(default)]
    pub rule: Option<PriorityRule>,
    #[serde(default)]
    pub repair: Option<RepairParams>,
    /// Periodic regeneration interval; absent means on new information.
    #[serde(default)]
    pub interval_min: Option<f64>,
    #[serde(default)]
    pub high_priority_quantile: Option<f64>,
    #[serde(default)]
    pub reschedule_on_stop: Option<bool>,
    /// Charge every EV at this rate on arrival, ignoring the grid.
    #[serde(default)]
    pub uncontrolled_kw: Option<f64>,
}

impl Variant {
    pub fn scheduled(kind: SchedulerKind) -> Self {
        Self {
            scheduler: Some(kind),
            ..Self::default()
        }
    }

    pub fn every(mut self, minutes: f64) -> Self {
        self.interval_min = Some(minutes);
        self
    }

    pub fn labelled(mut self, label: &str) -> Self {
        self.label = Some(label.to_owned());
        self
    }

    pub fn uncontrolled(kw: f64) -> Self {
        Self {
            uncontrolled_kw: Some(kw),
            ..Self::default()
        }
    }

    pub fn control(&self) -> Result<Control> {
        match (self.scheduler, self.uncontrolled_kw) {
            (Some(_), Some(_)) => bail!("variant sets both `scheduler` and `uncontrolled_kw`"),
            (None, None) => bail!("variant needs `scheduler` or `uncontrolled_kw`"),
            (None, Some(kw)) => Ok(Control::Uncontrolled { rate_kw: kw }),
            (Some(kind), None) => {
                let mut s = Strategy::new(kind);
                if let Some(rule) = self.rule {
                    s.rule = rule;
                }
                if let Some(repair) = self.repair {
                    s.repair = repair;
                }
                if let Some(m) = self.interval_min {
                    s.mode = Mode::Periodic { interval_s: m * 60.0 };
                }
                if let Some(q) = self.high_priority_quantile {
                    s.high_priority_quantile = q;
                }
                if let Some(b) = self.reschedule_on_stop {
                    s.reschedule_on_stop = b;
                }
                s.validate()?;
                Ok(Control::Scheduled(s))
            }
        }
    }

    pub fn name(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        match (self.scheduler, self.uncontrolled_kw) {
            (Some(k), _) => match self.interval_min {
                Some(m) => format!("{}-{m}min", k.name()),
                None => k.name().to_owned(),
            },
            (None, Some(kw)) => format!("uncontrolled-{kw}kW"),
            (None, None) => "invalid".to_owned(),
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            anyhow::anyhow!("field `{path}` (line {}, column {}): {inner}", inner.line(), inner.column())
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut s = Self::from_json(&text).with_context(|| format!("in {}", path.display()))?;
        if let Some(dir) = &s.tables_dir {
            if dir.is_relative() {
                s.tables_dir = Some(path.parent().unwrap_or(Path::new(".")).join(dir));
            }
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.days <= self.warmup_days {
            bail!("`days` ({}) must exceed `warmup_days` ({})", self.days, self.warmup_days);
        }
        if self.seeds == 0 {
            bail!("`seeds` must be at least 1");
        }
        if self.blocks.is_empty() {
            bail!("`blocks` is empty");
        }
        for (b, block) in self.blocks.iter().enumerate() {
            block.grid.build().with_context(|| format!("blocks[{b}].grid"))?;
            if let Rates::Fixed { kw } = block.rates {
                if !(kw > 0.0 && kw.is_finite()) {
                    bail!("blocks[{b}].rates: fixed rate must be positive");
                }
            }
            if block.variants.is_empty() {
                bail!("blocks[{b}].variants is empty");
            }
            for (v, variant) in block.variants.iter().enumerate() {
                variant.control().with_context(|| format!("blocks[{b}].variants[{v}]"))?;
            }
        }
        Ok(())
    }

    /// Overrides spots per lot and solar peak per lot on every default and
    /// copperplate block.
    pub fn override_network(&mut self, spots: Option<u32>, solar_peak_kw: Option<f64>) {
        for b in &mut self.blocks {
            match &mut b.grid {
                GridChoice::Default { spots: s, solar_peak_kw: p } => {
                    *s = spots.unwrap_or(*s);
                    *p = solar_peak_kw.unwrap_or(*p);
                }
                GridChoice::Copperplate {
                    spots_per_lot,
                    solar_peak_per_lot_kw,
                    ..
                } => {
                    *spots_per_lot = spots.unwrap_or(*spots_per_lot);
                    *solar_peak_per_lot_kw = solar_peak_kw.unwrap_or(*solar_peak_per_lot_kw);
                }
                GridChoice::Custom(_) => {}
            }
        }
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..u64::from(self.seeds)).map(|k| self.base_seed + k).collect()
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            days: self.days,
            warmup_days: self.warmup_days,
            forecast_horizon_h: self.forecast_horizon_h,
            audit_schedules: self.audit_schedules,
            dump_schedule_at: None,
        }
    }

    fn with_blocks(name: &str, description: &str, blocks: Vec<Block>) -> Self {
        Self {
            name: name.to_owned(),
            description: description.to_owned(),
            seeds: default_seeds(),
            base_seed: default_base_seed(),
            days: default_days(),
            warmup_days: default_warmup(),
            forecast_horizon_h: default_horizon(),
            audit_schedules: false,
            tables_dir: None,
            sampler: SamplerConfig::default(),
            blocks,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        use SchedulerKind::*;
        let main = || [S, P, SR, PR].map(Variant::scheduled).to_vec();
        let block = |label: &str, grid: GridChoice, rates: Rates, solar: bool, variants: Vec<Variant>| Block {
            label: label.to_owned(),
            grid,
            rates,
            solar,
            variants,
        };
        let s = match name {
            "table2" => Self::with_blocks(
                name,
                "Default network versus a copperplate network without internal limits",
                vec![
                    block("Grid", GridChoice::default_grid(), Rates::Flexible, true, main()),
                    block("No Grid", GridChoice::copperplate(), Rates::Flexible, true, main()),
                ],
            ),
            "table3" => {
                let all = || [Fcfs, S, P, SR, PR].map(Variant::scheduled).to_vec();
                Self::with_blocks(
                    name,
                    "Fixed 9 kW versus flexible rates, solar off",
                    vec![
                        block("Fixed", GridChoice::default_grid(), Rates::Fixed { kw: 9.0 }, false, all()),
                        block("Flexible", GridChoice::default_grid(), Rates::Flexible, false, all()),
                    ],
                )
            }
            "table4" => {
                let every = |m: f64| [S, P, SR, PR].map(|k| Variant::scheduled(k).every(m)).to_vec();
                Self::with_blocks(
                    name,
                    "Regeneration on new information versus every 15 and 60 minutes",
                    vec![
                        block("New information", GridChoice::default_grid(), Rates::Flexible, true, main()),
                        block("15 min.", GridChoice::default_grid(), Rates::Flexible, true, every(15.0)),
                        block("1 hour", GridChoice::default_grid(), Rates::Flexible, true, every(60.0)),
                    ],
                )
            }
            "table5" => Self::with_blocks(
                name,
                "First come first serve, parallel EDD and parallel repair every 15 minutes",
                vec![block(
                    "Default",
                    GridChoice::default_grid(),
                    Rates::Flexible,
                    true,
                    vec![
                        Variant::scheduled(Fcfs),
                        Variant::scheduled(P).labelled("P-EDD"),
                        Variant::scheduled(PR).every(15.0).labelled("PR-15min"),
                    ],
                )],
            ),
            "uncontrolled" => Self::with_blocks(
                name,
                "Every EV charges at 9 kW on arrival; cable overload fractions",
                vec![block(
                    "Uncontrolled",
                    GridChoice::default_grid(),
                    Rates::Flexible,
                    true,
                    vec![Variant::uncontrolled(9.0)],
                )],
            ),
            _ => return None,
        };
        Some(s)
    }
}
