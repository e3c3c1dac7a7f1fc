//! Balanced unit-by-period panels with a single treated unit.
//!
//! The treated unit always sits at the last row of the outcome matrix; the
//! remaining rows form the donor pool in lexicographic order of their labels
//! (when built from records).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeKind {
    Level,
    GrowthPercent,
}

/// How covariates are treated when the outcome is converted to growth rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovariateTransform {
    #[default]
    Growth,
    /// Keep covariates in levels; only the dropped first period is removed.
    Level,
}

/// One observed cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub unit: String,
    pub period: i32,
    pub outcome: f64,
    pub covariates: BTreeMap<String, f64>,
}

impl Record {
    pub fn new(unit: impl Into<String>, period: i32, outcome: f64) -> Self {
        Self {
            unit: unit.into(),
            period,
            outcome,
            covariates: BTreeMap::new(),
        }
    }

    pub fn with_covariate(mut self, name: impl Into<String>, value: f64) -> Self {
        self.covariates.insert(name.into(), value);
        self
    }
}

/// A unit removed from the donor pool and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exclusion {
    pub unit: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    units: Vec<String>,
    periods: Vec<i32>,
    outcomes: DMatrix<f64>,
    covariates: BTreeMap<String, DMatrix<f64>>,
    first_treated_period: i32,
    outcome_kind: OutcomeKind,
    exclusions: Vec<Exclusion>,
}

impl PanelDataset {
    /// Builds a panel from dense matrices. The last unit is the treated one.
    pub fn new(
        units: Vec<String>,
        periods: Vec<i32>,
        outcomes: DMatrix<f64>,
        covariates: BTreeMap<String, DMatrix<f64>>,
        first_treated_period: i32,
        outcome_kind: OutcomeKind,
    ) -> Result<Self> {
        let panel = Self {
            units,
            periods,
            outcomes,
            covariates,
            first_treated_period,
            outcome_kind,
            exclusions: Vec::new(),
        };
        panel.validate()?;
        Ok(panel)
    }

    fn validate(&self) -> Result<()> {
        let (n, t) = self.outcomes.shape();
        if n != self.units.len() || t != self.periods.len() {
            return Err(Error::DimensionMismatch(alloc::format!(
                "outcome matrix is {n}x{t} for {} units and {} periods",
                self.units.len(),
                self.periods.len()
            )));
        }
        if n < 2 {
            return Err(Error::TooFewDonors {
                required: 1,
                found: n.saturating_sub(1),
            });
        }
        let mut seen = BTreeSet::new();
        for u in &self.units {
            if !seen.insert(u.as_str()) {
                return Err(Error::DuplicateUnit(u.clone()));
            }
        }
        if self.periods.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidTreatmentPeriod {
                period: self.first_treated_period,
                reason: "periods must be strictly increasing",
            });
        }
        let first = self.first_treated_period;
        if first <= self.periods[0] || first > self.periods[t - 1] {
            return Err(Error::InvalidTreatmentPeriod {
                period: first,
                reason: "must lie after the first and no later than the last period",
            });
        }
        let n_pre = self.periods.iter().filter(|&&p| p < first).count();
        if n_pre < 2 {
            return Err(Error::TooFewPrePeriods {
                required: 2,
                found: n_pre,
            });
        }
        for i in 0..n {
            for j in 0..t {
                if !self.outcomes[(i, j)].is_finite() {
                    return Err(Error::NonFinite {
                        unit: self.units[i].clone(),
                        period: self.periods[j],
                    });
                }
            }
        }
        for (name, m) in &self.covariates {
            if m.shape() != (n, t) {
                return Err(Error::DimensionMismatch(alloc::format!(
                    "covariate `{name}` has shape {:?}",
                    m.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn periods(&self) -> &[i32] {
        &self.periods
    }

    /// Outcome matrix, units in rows and periods in columns.
    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.outcomes
    }

    pub fn covariates(&self) -> &BTreeMap<String, DMatrix<f64>> {
        &self.covariates
    }

    pub fn covariate(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.covariates.get(name)
    }

    pub fn first_treated_period(&self) -> i32 {
        self.first_treated_period
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    pub fn exclusions(&self) -> &[Exclusion] {
        &self.exclusions
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn n_donors(&self) -> usize {
        self.units.len() - 1
    }

    pub fn treated_index(&self) -> usize {
        self.units.len() - 1
    }

    pub fn treated_unit(&self) -> &str {
        &self.units[self.treated_index()]
    }

    pub fn donor_units(&self) -> &[String] {
        &self.units[..self.n_donors()]
    }

    /// Number of pre-treatment periods (T0).
    pub fn n_pre(&self) -> usize {
        self.periods
            .iter()
            .filter(|&&p| p < self.first_treated_period)
            .count()
    }

    pub fn n_post(&self) -> usize {
        self.n_periods() - self.n_pre()
    }

    pub fn pre_periods(&self) -> &[i32] {
        &self.periods[..self.n_pre()]
    }

    pub fn post_periods(&self) -> &[i32] {
        &self.periods[self.n_pre()..]
    }

    pub fn period_index(&self, period: i32) -> Option<usize> {
        self.periods.binary_search(&period).ok()
    }

    pub fn unit_index(&self, unit: &str) -> Option<usize> {
        self.units.iter().position(|u| u == unit)
    }

    pub fn outcome(&self, unit: usize, period: usize) -> f64 {
        self.outcomes[(unit, period)]
    }

    pub fn treated_series(&self) -> Vec<f64> {
        self.outcomes.row(self.treated_index()).iter().copied().collect()
    }

    /// Same panel with a replaced outcome matrix.
    pub fn with_outcomes(&self, outcomes: DMatrix<f64>) -> Result<Self> {
        let mut out = self.clone();
        out.outcomes = outcomes;
        out.validate()?;
        Ok(out)
    }

    /// Drops the treated unit and lets donor `donor` play the treated role
    /// (moved to the last row). Used for in-space placebos.
    pub fn placebo_for(&self, donor: usize) -> Result<Self> {
        assert!(donor < self.n_donors(), "placebo index out of range");
        let mut order: Vec<usize> = (0..self.n_donors()).filter(|&i| i != donor).collect();
        order.push(donor);
        self.select_units(&order)
    }

    /// Same panel without donor `donor`.
    pub fn without_donor(&self, donor: usize) -> Result<Self> {
        assert!(donor < self.n_donors(), "donor index out of range");
        let order: Vec<usize> = (0..self.n_units()).filter(|&i| i != donor).collect();
        self.select_units(&order)
    }

    /// Panel restricted to the given rows, in the given order (last is treated).
    pub fn select_units(&self, order: &[usize]) -> Result<Self> {
        let pick = |m: &DMatrix<f64>| {
            DMatrix::from_fn(order.len(), m.ncols(), |r, c| m[(order[r], c)])
        };
        let out = Self {
            units: order.iter().map(|&i| self.units[i].clone()).collect(),
            periods: self.periods.clone(),
            outcomes: pick(&self.outcomes),
            covariates: self
                .covariates
                .iter()
                .map(|(k, m)| (k.clone(), pick(m)))
                .collect(),
            first_treated_period: self.first_treated_period,
            outcome_kind: self.outcome_kind,
            exclusions: self.exclusions.clone(),
        };
        out.validate()?;
        Ok(out)
    }

    /// Flattens the panel back into records, units in panel order.
    pub fn to_records(&self) -> Vec<Record> {
        let mut out = Vec::with_capacity(self.n_units() * self.n_periods());
        for (i, unit) in self.units.iter().enumerate() {
            for (j, &period) in self.periods.iter().enumerate() {
                out.push(Record {
                    unit: unit.clone(),
                    period,
                    outcome: self.outcomes[(i, j)],
                    covariates: self
                        .covariates
                        .iter()
                        .map(|(k, m)| (k.clone(), m[(i, j)]))
                        .collect(),
                });
            }
        }
        out
    }

    /// Percent growth rates, `(Y[t] - Y[t-1]) / Y[t-1] * 100`, dropping the
    /// first period. Covariates are converted the same way.
    pub fn growth_transform(&self) -> Result<Self> {
        self.growth_transform_with(CovariateTransform::Growth)
    }

    pub fn growth_transform_with(&self, covariates: CovariateTransform) -> Result<Self> {
        if self.outcome_kind == OutcomeKind::GrowthPercent {
            return Err(Error::AlreadyGrowth);
        }
        let outcomes = growth_matrix(&self.outcomes, &self.units, &self.periods)?;
        let mut covs = BTreeMap::new();
        for (name, m) in &self.covariates {
            let converted = match covariates {
                CovariateTransform::Growth => growth_matrix(m, &self.units, &self.periods)?,
                CovariateTransform::Level => m.columns(1, m.ncols() - 1).into_owned(),
            };
            covs.insert(name.clone(), converted);
        }
        let out = Self {
            units: self.units.clone(),
            periods: self.periods[1..].to_vec(),
            outcomes,
            covariates: covs,
            first_treated_period: self.first_treated_period,
            outcome_kind: OutcomeKind::GrowthPercent,
            exclusions: self.exclusions.clone(),
        };
        out.validate()?;
        Ok(out)
    }

    /// Removes donors from the panel, recording `reason` for each.
    pub fn exclude_units<S: AsRef<str>>(&self, ids: &[S], reason: &str) -> Result<Self> {
        let mut drop = BTreeSet::new();
        for id in ids {
            let id = id.as_ref();
            let idx = self
                .unit_index(id)
                .ok_or_else(|| Error::UnknownUnit(id.to_string()))?;
            if idx == self.treated_index() {
                return Err(Error::ExcludeTreated(id.to_string()));
            }
            drop.insert(idx);
        }
        if drop.is_empty() {
            return Ok(self.clone());
        }
        let order: Vec<usize> = (0..self.n_units()).filter(|i| !drop.contains(i)).collect();
        let mut out = self.select_units(&order)?;
        for &idx in &drop {
            out.exclusions.push(Exclusion {
                unit: self.units[idx].clone(),
                reason: reason.to_string(),
            });
        }
        Ok(out)
    }
}

fn growth_matrix(m: &DMatrix<f64>, units: &[String], periods: &[i32]) -> Result<DMatrix<f64>> {
    let (n, t) = m.shape();
    let mut out = DMatrix::zeros(n, t - 1);
    for i in 0..n {
        for j in 1..t {
            let prev = m[(i, j - 1)];
            if prev <= 0.0 {
                return Err(Error::NonPositiveLevel {
                    unit: units[i].clone(),
                    period: periods[j - 1],
                    value: prev,
                });
            }
            out[(i, j - 1)] = (m[(i, j)] - prev) / prev * 100.0;
        }
    }
    Ok(out)
}

/// Assembles a balanced panel from long-format records.
///
/// Units are ordered lexicographically with `treated` moved last; periods
/// ascend. Every (unit, period) cell must appear exactly once and carry the
/// same covariate names.
pub fn build_panel(
    records: &[Record],
    treated: &str,
    first_treated_period: i32,
    outcome_kind: OutcomeKind,
) -> Result<PanelDataset> {
    if records.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let unit_set: BTreeSet<&str> = records.iter().map(|r| r.unit.as_str()).collect();
    if !unit_set.contains(treated) {
        return Err(Error::UnknownTreatedUnit(treated.to_string()));
    }
    let mut units: Vec<String> = unit_set
        .iter()
        .filter(|&&u| u != treated)
        .map(|u| u.to_string())
        .collect();
    units.push(treated.to_string());
    let periods: Vec<i32> = records
        .iter()
        .map(|r| r.period)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let cov_names: BTreeSet<&str> = records
        .iter()
        .flat_map(|r| r.covariates.keys().map(String::as_str))
        .collect();

    let unit_pos: BTreeMap<&str, usize> = units
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i))
        .collect();
    let (n, t) = (units.len(), periods.len());
    let mut cells: Vec<Option<&Record>> = alloc::vec![None; n * t];
    for r in records {
        let i = unit_pos[r.unit.as_str()];
        let j = periods.binary_search(&r.period).unwrap_or_else(|_| unreachable!());
        if cells[i * t + j].is_some() {
            return Err(Error::DuplicateCell {
                unit: r.unit.clone(),
                period: r.period,
            });
        }
        cells[i * t + j] = Some(r);
    }
    let missing: Vec<(String, i32)> = (0..n * t)
        .filter(|&k| cells[k].is_none())
        .map(|k| (units[k / t].clone(), periods[k % t]))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCells(missing));
    }

    let cell = |i: usize, j: usize| cells[i * t + j].unwrap_or_else(|| unreachable!());
    let outcomes = DMatrix::from_fn(n, t, |i, j| cell(i, j).outcome);
    let mut covariates = BTreeMap::new();
    for name in cov_names {
        let mut m = DMatrix::zeros(n, t);
        for i in 0..n {
            for j in 0..t {
                let r = cell(i, j);
                m[(i, j)] = *r.covariates.get(name).ok_or_else(|| Error::MissingCovariate {
                    unit: r.unit.clone(),
                    period: r.period,
                    covariate: name.to_string(),
                })?;
            }
        }
        covariates.insert(name.to_string(), m);
    }
    PanelDataset::new(units, periods, outcomes, covariates, first_treated_period, outcome_kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn two_by_three() -> Vec<Record> {
        vec![
            Record::new("B", 2001, 2.0),
            Record::new("A", 2000, 1.0),
            Record::new("A", 2001, 1.5),
            Record::new("B", 2000, 1.8),
            Record::new("A", 2002, 1.7),
            Record::new("B", 2002, 2.2),
        ]
    }

    #[test]
    fn minimal_balanced_panel() {
        let p = build_panel(&two_by_three(), "A", 2002, OutcomeKind::Level).unwrap();
        assert_eq!(p.outcomes().shape(), (2, 3));
        assert_eq!(p.units(), &["B".to_string(), "A".to_string()]);
        assert_eq!(p.treated_unit(), "A");
        assert_eq!(p.periods(), &[2000, 2001, 2002]);
        assert_eq!(p.outcome(1, 1), 1.5);
        assert_eq!(p.n_pre(), 2);
    }

    #[test]
    fn missing_cell_is_named() {
        let mut recs = two_by_three();
        recs.retain(|r| !(r.unit == "B" && r.period == 2001));
        let err = build_panel(&recs, "A", 2002, OutcomeKind::Level).unwrap_err();
        assert_eq!(err, Error::MissingCells(vec![("B".into(), 2001)]));
        assert!(alloc::format!("{err}").contains("(B, 2001)"));
    }

    #[test]
    fn duplicate_cell_rejected() {
        let mut recs = two_by_three();
        recs.push(Record::new("A", 2000, 9.0));
        assert!(matches!(
            build_panel(&recs, "A", 2002, OutcomeKind::Level),
            Err(Error::DuplicateCell { period: 2000, .. })
        ));
    }

    #[test]
    fn treated_unit_must_exist() {
        assert_eq!(
            build_panel(&two_by_three(), "Z", 2002, OutcomeKind::Level).unwrap_err(),
            Error::UnknownTreatedUnit("Z".into())
        );
        assert_eq!(
            build_panel(&[], "Z", 2002, OutcomeKind::Level).unwrap_err(),
            Error::EmptyPanel
        );
    }

    #[test]
    fn treatment_period_needs_two_pre_periods() {
        assert!(matches!(
            build_panel(&two_by_three(), "A", 2001, OutcomeKind::Level),
            Err(Error::TooFewPrePeriods { found: 1, .. })
        ));
        assert!(matches!(
            build_panel(&two_by_three(), "A", 2003, OutcomeKind::Level),
            Err(Error::InvalidTreatmentPeriod { .. })
        ));
    }

    #[test]
    fn company_panel_shape() {
        let companies = ["DB", "HZPP", "MAV", "OBB", "SBB", "VR", "ZSSK"];
        let mut recs = Vec::new();
        for (k, c) in companies.iter().enumerate() {
            for year in 2015..=2022 {
                recs.push(Record::new(*c, year, 100.0 + (k * 10) as f64 + (year - 2015) as f64));
            }
        }
        let p = build_panel(&recs, "OBB", 2021, OutcomeKind::Level).unwrap();
        assert_eq!(p.outcomes().shape(), (7, 8));
        assert_eq!(p.treated_unit(), "OBB");
        assert_eq!(p.pre_periods(), &[2015, 2016, 2017, 2018, 2019, 2020]);
        assert_eq!(p.post_periods(), &[2021, 2022]);
        let q = p.exclude_units(&["DB"], "external shock").unwrap();
        assert_eq!(q.n_units(), 6);
        assert_eq!(q.n_donors(), 5);
        assert_eq!(q.exclusions()[0].unit, "DB");
    }

    fn series(values: &[f64]) -> PanelDataset {
        let t = values.len();
        let outcomes = DMatrix::from_fn(2, t, |i, j| values[j] * (i + 1) as f64);
        PanelDataset::new(
            vec!["d".into(), "tr".into()],
            (0..t as i32).collect(),
            outcomes,
            BTreeMap::new(),
            t as i32 - 1,
            OutcomeKind::Level,
        )
        .unwrap()
    }

    #[test]
    fn growth_examples() {
        let g = series(&[100.0, 110.0, 99.0, 99.0]).growth_transform().unwrap();
        let row: Vec<f64> = g.outcomes().row(0).iter().copied().collect();
        assert!((row[0] - 10.0).abs() < 1e-12);
        assert!((row[1] + 10.0).abs() < 1e-12);
        assert_eq!(row[2], 0.0);
        assert_eq!(g.periods(), &[1, 2, 3]);
        assert_eq!(g.outcome_kind(), OutcomeKind::GrowthPercent);

        let flat = series(&[5.0, 5.0, 5.0, 5.0]).growth_transform().unwrap();
        assert!(flat.outcomes().iter().all(|&x| x == 0.0));

        let half = series(&[200.0, 100.0, 100.0, 100.0]).growth_transform().unwrap();
        assert_eq!(half.outcome(0, 0), -50.0);
    }

    #[test]
    fn growth_rejects_nonpositive_denominator() {
        let err = series(&[100.0, 0.0, 5.0, 5.0]).growth_transform().unwrap_err();
        assert!(matches!(err, Error::NonPositiveLevel { period: 1, .. }));
        let g = series(&[1.0, 2.0, 3.0, 4.0]).growth_transform().unwrap();
        assert_eq!(g.growth_transform().unwrap_err(), Error::AlreadyGrowth);
    }

    #[test]
    fn exclusion_rules() {
        let p = build_panel(&two_by_three(), "A", 2002, OutcomeKind::Level).unwrap();
        assert_eq!(p.exclude_units(&["A"], "x").unwrap_err(), Error::ExcludeTreated("A".into()));
        assert_eq!(p.exclude_units(&["Q"], "x").unwrap_err(), Error::UnknownUnit("Q".into()));
        let empty: [&str; 0] = [];
        assert_eq!(p.exclude_units(&empty, "x").unwrap(), p);
    }

    #[test]
    fn covariates_follow_cells() {
        let recs: Vec<Record> = two_by_three()
            .into_iter()
            .map(|r| {
                let v = r.outcome * 2.0;
                r.with_covariate("cov_gdp", v)
            })
            .collect();
        let p = build_panel(&recs, "A", 2002, OutcomeKind::Level).unwrap();
        assert_eq!(p.covariate("cov_gdp").unwrap()[(1, 1)], 3.0);

        let mut broken = recs.clone();
        broken[0].covariates.clear();
        assert!(matches!(
            build_panel(&broken, "A", 2002, OutcomeKind::Level),
            Err(Error::MissingCovariate { .. })
        ));
    }

    #[test]
    fn placebo_moves_donor_last() {
        let recs: Vec<Record> = ["A", "B", "C", "T"]
            .iter()
            .flat_map(|u| (0..4).map(move |t| Record::new(*u, t, t as f64)))
            .collect();
        let p = build_panel(&recs, "T", 2, OutcomeKind::Level).unwrap();
        let q = p.placebo_for(0).unwrap();
        assert_eq!(q.units(), &["B".to_string(), "C".into(), "A".into()]);
        let r = p.without_donor(1).unwrap();
        assert_eq!(r.units(), &["A".to_string(), "C".into(), "T".into()]);
    }
}
