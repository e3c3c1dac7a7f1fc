//! The study report: one in-memory structure rendered as JSON and markdown.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Result, Stage, StudyError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl ToolInfo {
    pub fn current() -> Self {
        Self { name: env!("CARGO_PKG_NAME").to_string(), version: env!("CARGO_PKG_VERSION").to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub data_file: String,
    pub data_sha256: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyInfo {
    pub treated_unit: String,
    pub first_treated_period: i32,
    pub outcome_mode: String,
    pub donors: Vec<String>,
    pub pre_periods: Vec<i32>,
    pub post_periods: Vec<i32>,
    pub covariates: Vec<String>,
    pub ci_level: f64,
    pub inference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullRow {
    pub period: i32,
    pub treated: f64,
    pub donor_min: f64,
    pub donor_max: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitNote {
    pub unit: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub convex_hull_ok: bool,
    pub hull: Vec<HullRow>,
    /// Pre-period RMSPE of the equally weighted donor average.
    pub pre_rmspe_equal_weights: f64,
    pub balance_ok: bool,
    pub n_donors: usize,
    pub excluded_units: Vec<UnitNote>,
    /// Series removed during ingestion (Eurostat balance and size rules).
    pub dropped_units: Vec<UnitNote>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub method: String,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    /// Re-estimated effect per donor (placebo: donor treated in place;
    /// jackknife: donor left out).
    pub replicates: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MspeTest {
    pub p_value: f64,
    pub rank: usize,
    pub n_units: usize,
    /// `None` stands for an infinite ratio (zero pre-period MSPE).
    pub ratios: BTreeMap<String, Option<f64>>,
    pub placebo_effects: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub period: i32,
    pub actual: f64,
    pub synthetic: f64,
    pub gap: f64,
}

impl SeriesRow {
    pub fn new(period: i32, actual: f64, synthetic: f64) -> Self {
        Self { period, actual, synthetic, gap: actual - synthetic }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub estimator: String,
    /// Average post-treatment effect.
    pub effect: f64,
    pub inference: Vec<Inference>,
    pub pre_rmspe: f64,
    pub donor_weights: BTreeMap<String, f64>,
    pub predictor_weights: Option<BTreeMap<String, f64>>,
    pub unit_intercept: Option<f64>,
    pub time_weights: Option<BTreeMap<i32, f64>>,
    pub time_intercept: Option<f64>,
    pub zeta: Option<f64>,
    pub mspe_test: Option<MspeTest>,
    pub series: Vec<SeriesRow>,
}

impl EstimatorReport {
    /// The inference entry that drives the headline interval.
    pub fn primary(&self) -> Option<&Inference> {
        self.inference.first()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub tool: ToolInfo,
    pub provenance: Provenance,
    pub study: StudyInfo,
    pub diagnostics: Diagnostics,
    pub estimates: Vec<EstimatorReport>,
    pub warnings: Vec<String>,
}

/// Shortest round-trip formatting shared by every output, so a number in
/// the markdown is textually identical to its JSON counterpart.
pub fn fmt_num(x: f64) -> String {
    serde_json::to_string(&x).unwrap_or_else(|_| "null".to_string())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "null".to_string(), fmt_num)
}

impl StudyReport {
    pub fn estimate(&self, name: &str) -> Option<&EstimatorReport> {
        self.estimates.iter().find(|e| e.estimator == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).unwrap_or_else(|e| unreachable!("report serializes: {e}"));
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| StudyError::validation(Stage::Plot, format!("unreadable report: {e}")))
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        self.write_markdown(&mut md).unwrap_or_else(|_| unreachable!("writing to a String"));
        md
    }

    fn write_markdown(&self, md: &mut String) -> std::fmt::Result {
        let s = &self.study;
        writeln!(md, "# Study report: {}\n", s.treated_unit)?;
        writeln!(md, "Generated by {} {}.\n", self.tool.name, self.tool.version)?;

        writeln!(md, "## Provenance\n")?;
        writeln!(md, "- config sha256: `{}`", self.provenance.config_sha256)?;
        writeln!(md, "- data file: `{}`", self.provenance.data_file)?;
        writeln!(md, "- data sha256: `{}`", self.provenance.data_sha256)?;
        writeln!(md, "- seed: {}\n", self.provenance.seed)?;

        writeln!(md, "## Design\n")?;
        writeln!(md, "- treated unit: {}", s.treated_unit)?;
        writeln!(md, "- first treated period: {}", s.first_treated_period)?;
        writeln!(md, "- outcome: {}", s.outcome_mode)?;
        writeln!(md, "- donors: {}", s.donors.join(", "))?;
        let periods = |ps: &[i32]| ps.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(", ");
        writeln!(md, "- pre-treatment periods: {}", periods(&s.pre_periods))?;
        writeln!(md, "- post-treatment periods: {}", periods(&s.post_periods))?;
        if !s.covariates.is_empty() {
            writeln!(md, "- covariates: {}", s.covariates.join(", "))?;
        }
        writeln!(md, "- inference: {} at level {}\n", s.inference, fmt_num(s.ci_level))?;

        let d = &self.diagnostics;
        writeln!(md, "## Diagnostics\n")?;
        writeln!(md, "- convex hull condition holds in every pre-period: {}", d.convex_hull_ok)?;
        writeln!(md, "- balanced panel: {}", d.balance_ok)?;
        writeln!(md, "- donors: {}", d.n_donors)?;
        writeln!(md, "- pre-period RMSPE of the equal-weight donor average: {}\n", fmt_num(d.pre_rmspe_equal_weights))?;
        writeln!(md, "| period | treated | donor min | donor max | inside |")?;
        writeln!(md, "|---|---|---|---|---|")?;
        for h in &d.hull {
            writeln!(
                md,
                "| {} | {} | {} | {} | {} |",
                h.period,
                fmt_num(h.treated),
                fmt_num(h.donor_min),
                fmt_num(h.donor_max),
                h.ok
            )?;
        }
        writeln!(md)?;
        for (title, notes) in [("Excluded units", &d.excluded_units), ("Dropped at ingestion", &d.dropped_units)] {
            if !notes.is_empty() {
                writeln!(md, "{title}:\n")?;
                for n in notes {
                    writeln!(md, "- {}: {}", n.unit, n.reason)?;
                }
                writeln!(md)?;
            }
        }

        writeln!(md, "## Estimates\n")?;
        writeln!(md, "| estimator | effect | method | se | ci low | ci high |")?;
        writeln!(md, "|---|---|---|---|---|---|")?;
        for e in &self.estimates {
            if e.inference.is_empty() {
                writeln!(md, "| {} | {} | | | | |", e.estimator, fmt_num(e.effect))?;
            }
            for inf in &e.inference {
                writeln!(
                    md,
                    "| {} | {} | {} | {} | {} | {} |",
                    e.estimator,
                    fmt_num(e.effect),
                    inf.method,
                    fmt_num(inf.se),
                    fmt_num(inf.ci_low),
                    fmt_num(inf.ci_high)
                )?;
            }
        }
        writeln!(md)?;
        for e in &self.estimates {
            write_estimator(md, e)?;
        }

        writeln!(md, "## Warnings\n")?;
        if self.warnings.is_empty() {
            writeln!(md, "None.")?;
        }
        for w in &self.warnings {
            writeln!(md, "- {w}")?;
        }
        Ok(())
    }
}

fn write_estimator(md: &mut String, e: &EstimatorReport) -> std::fmt::Result {
    writeln!(md, "### {}\n", e.estimator)?;
    writeln!(md, "- average post-treatment effect: {}", fmt_num(e.effect))?;
    writeln!(md, "- pre-period RMSPE: {}", fmt_num(e.pre_rmspe))?;
    if let Some(z) = e.zeta {
        writeln!(md, "- zeta: {}", fmt_num(z))?;
    }
    if let Some(c) = e.unit_intercept {
        writeln!(md, "- unit-weight intercept: {}", fmt_num(c))?;
    }
    if let Some(c) = e.time_intercept {
        writeln!(md, "- time-weight intercept: {}", fmt_num(c))?;
    }
    writeln!(md, "\n| donor | weight |\n|---|---|")?;
    for (unit, w) in &e.donor_weights {
        writeln!(md, "| {unit} | {} |", fmt_num(*w))?;
    }
    writeln!(md)?;
    if let Some(v) = &e.predictor_weights {
        writeln!(md, "| predictor | importance |\n|---|---|")?;
        for (label, w) in v {
            writeln!(md, "| {label} | {} |", fmt_num(*w))?;
        }
        writeln!(md)?;
    }
    if let Some(tw) = &e.time_weights {
        writeln!(md, "| pre-period | time weight |\n|---|---|")?;
        for (p, w) in tw {
            writeln!(md, "| {p} | {} |", fmt_num(*w))?;
        }
        writeln!(md)?;
    }
    writeln!(md, "| period | actual | synthetic | gap |\n|---|---|---|---|")?;
    for r in &e.series {
        writeln!(md, "| {} | {} | {} | {} |", r.period, fmt_num(r.actual), fmt_num(r.synthetic), fmt_num(r.gap))?;
    }
    writeln!(md)?;
    for inf in &e.inference {
        writeln!(md, "{} replicates:\n\n| donor | effect |\n|---|---|", inf.method)?;
        for (unit, v) in &inf.replicates {
            writeln!(md, "| {unit} | {} |", fmt_num(*v))?;
        }
        writeln!(md)?;
    }
    if let Some(t) = &e.mspe_test {
        writeln!(md, "MSPE ratio test: p = {} (rank {} of {})\n", fmt_num(t.p_value), t.rank, t.n_units)?;
        writeln!(md, "| unit | post/pre MSPE | placebo effect |\n|---|---|---|")?;
        for (unit, r) in &t.ratios {
            let effect = t.placebo_effects.get(unit).map_or_else(|| "(treated)".to_string(), |v| fmt_num(*v));
            writeln!(md, "| {unit} | {} | {effect} |", fmt_opt(*r))?;
        }
        writeln!(md)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_format_like_json() {
        assert_eq!(fmt_num(6.35), "6.35");
        assert_eq!(fmt_num(5.0), "5.0");
        assert_eq!(fmt_num(1e-5), "0.00001");
        assert_eq!(fmt_num(1e-5).parse::<f64>().unwrap(), 1e-5);
        assert_eq!(fmt_num(f64::INFINITY), "null");
    }

    #[test]
    fn series_gap_is_exact() {
        let r = SeriesRow::new(2021, 0.3, 0.1);
        assert_eq!(r.gap, 0.3 - 0.1);
    }
}
