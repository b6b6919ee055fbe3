//! Experiment harness for the `gridcharge-core` simulator: distribution
//! tables, JSON scenarios and presets, parallel runs over seeds and
//! variants, and CSV, JSON, Markdown and SVG reports.

pub mod experiment;
pub mod plots;
pub mod report;
pub mod scenario;
pub mod tables;
