//! Pre-estimation checks on the donor pool. Nothing here blocks estimation;
//! problems surface as flags and warnings.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::panel::{Exclusion, PanelDataset};

/// Position of the treated outcome relative to the donor range in one period.
#[derive(Debug, Clone, PartialEq)]
pub struct HullCheck {
    pub period: i32,
    pub treated: f64,
    pub donor_min: f64,
    pub donor_max: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    /// One entry per pre-treatment period.
    pub hull: Vec<HullCheck>,
    pub convex_hull_ok: bool,
    /// RMSPE of the equally weighted donor average over the pre-period.
    pub pre_rmspe: f64,
    pub excluded_units: Vec<Exclusion>,
    pub balance_ok: bool,
    pub n_donors: usize,
    pub warnings: Vec<String>,
}

pub fn diagnose(panel: &PanelDataset) -> DiagnosticsReport {
    let y = panel.outcomes();
    let treated = panel.treated_index();
    let donors = panel.n_donors();
    let mut warnings = Vec::new();

    let mut hull = Vec::with_capacity(panel.n_pre());
    let mut sq = 0.0;
    for (t, &period) in panel.pre_periods().iter().enumerate() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut avg = 0.0;
        for i in 0..donors {
            lo = lo.min(y[(i, t)]);
            hi = hi.max(y[(i, t)]);
            avg += y[(i, t)] / donors as f64;
        }
        let value = y[(treated, t)];
        let ok = lo <= value && value <= hi;
        if !ok {
            warnings.push(format!(
                "convex hull: treated outcome {value} in {period} outside donor range [{lo}, {hi}]"
            ));
        }
        sq += (value - avg) * (value - avg);
        hull.push(HullCheck {
            period,
            treated: value,
            donor_min: lo,
            donor_max: hi,
            ok,
        });
    }
    if donors < 2 {
        warnings.push(format!("comparison group has only {donors} donor unit(s)"));
    }
    for ex in panel.exclusions() {
        warnings.push(format!("excluded unit {}: {}", ex.unit, ex.reason));
    }

    DiagnosticsReport {
        convex_hull_ok: hull.iter().all(|h| h.ok),
        hull,
        pre_rmspe: libm::sqrt(sq / panel.n_pre() as f64),
        excluded_units: panel.exclusions().to_vec(),
        // a constructed PanelDataset is balanced by invariant
        balance_ok: true,
        n_donors: donors,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{build_panel, OutcomeKind, Record};
    use alloc::vec;

    fn panel(rows: &[(&str, [f64; 4])]) -> PanelDataset {
        let recs: Vec<Record> = rows
            .iter()
            .flat_map(|(u, ys)| ys.iter().enumerate().map(move |(t, y)| Record::new(*u, t as i32, *y)))
            .collect();
        build_panel(&recs, "T", 3, OutcomeKind::GrowthPercent).unwrap()
    }

    #[test]
    fn inside_hull_everywhere() {
        let p = panel(&[("A", [0.0, 0.0, 0.0, 0.0]), ("B", [2.0, 2.0, 2.0, 2.0]), ("T", [1.0, 0.0, 2.0, 9.0])]);
        let d = diagnose(&p);
        assert!(d.convex_hull_ok);
        assert_eq!(d.hull.len(), 3);
        assert!(d.warnings.is_empty());
    }

    #[test]
    fn flags_single_year_above_donors() {
        let p = panel(&[("A", [0.0, 0.0, 0.0, 0.0]), ("B", [2.0, 2.0, 2.0, 2.0]), ("T", [1.0, 2.5, 1.0, 1.0])]);
        let d = diagnose(&p);
        assert!(!d.convex_hull_ok);
        let flags: Vec<bool> = d.hull.iter().map(|h| h.ok).collect();
        assert_eq!(flags, vec![true, false, true]);
        assert_eq!(d.warnings.len(), 1);
    }

    #[test]
    fn single_donor_is_an_equality_band() {
        let p = panel(&[("A", [1.0, 2.0, 3.0, 4.0]), ("T", [1.0, 2.0 + 1e-12, 3.0, 0.0])]);
        let d = diagnose(&p);
        let flags: Vec<bool> = d.hull.iter().map(|h| h.ok).collect();
        assert_eq!(flags, vec![true, false, true]);
        assert!(d.warnings.iter().any(|w| w.contains("only 1 donor")));
    }

    #[test]
    fn exclusions_are_reported() {
        let p = panel(&[("A", [0.0; 4]), ("B", [1.0; 4]), ("C", [2.0; 4]), ("T", [1.0; 4])]);
        let q = p.exclude_units(&["C"], "external shock").unwrap();
        let d = diagnose(&q);
        assert_eq!(d.excluded_units.len(), 1);
        assert_eq!(d.excluded_units[0].reason, "external shock");
        assert_eq!(d.n_donors, 2);
    }
}
