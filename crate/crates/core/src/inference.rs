//! Placebo and jackknife uncertainty for single-treated-unit estimators.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::panel::PanelDataset;
use crate::scm::{scm_fit, PredictorSpec, ScmOptions};
use crate::sdid::{did_estimate, sdid_estimate_with, SdidOptions};
use crate::stats;

/// Anything that maps a panel to a scalar effect for its treated unit.
pub trait EffectEstimator: Sync {
    fn name(&self) -> &'static str;
    fn estimate(&self, panel: &PanelDataset) -> Result<f64>;
}

/// Synthetic control, effect averaged over all post-treatment periods.
#[derive(Debug, Clone)]
pub struct ScmEstimator {
    pub predictors: PredictorSpec,
    pub options: ScmOptions,
}

impl EffectEstimator for ScmEstimator {
    fn name(&self) -> &'static str {
        "scm"
    }

    fn estimate(&self, panel: &PanelDataset) -> Result<f64> {
        Ok(scm_fit(panel, &self.predictors, &self.options, &Sequential)?.average_post_effect())
    }
}

#[derive(Debug, Clone, Default)]
pub struct SdidEstimator {
    pub options: SdidOptions,
}

impl EffectEstimator for SdidEstimator {
    fn name(&self) -> &'static str {
        "sdid"
    }

    fn estimate(&self, panel: &PanelDataset) -> Result<f64> {
        Ok(sdid_estimate_with(panel, &self.options)?.tau_hat)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DidEstimator;

impl EffectEstimator for DidEstimator {
    fn name(&self) -> &'static str {
        "did"
    }

    fn estimate(&self, panel: &PanelDataset) -> Result<f64> {
        Ok(did_estimate(panel))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceMethod {
    Placebo,
    Jackknife,
}

impl InferenceMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Placebo => "placebo",
            Self::Jackknife => "jackknife",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate {
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub method: InferenceMethod,
    /// Re-estimates keyed by the donor that was reassigned or left out.
    pub replicates: BTreeMap<String, f64>,
}

/// `point -/+ z(level) * se`.
pub fn confidence_interval(point: f64, se: f64, level: f64) -> (f64, f64) {
    let z = stats::critical_value(level);
    (point - z * se, point + z * se)
}

impl EffectEstimate {
    fn new(point: f64, se: f64, level: f64, method: InferenceMethod, replicates: BTreeMap<String, f64>) -> Self {
        let (ci_low, ci_high) = confidence_interval(point, se, level);
        Self {
            point,
            se,
            ci_low,
            ci_high,
            level,
            method,
            replicates,
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("confidence level {level} outside (0, 1)")));
    }
    Ok(())
}

/// Replicates sorted by unit label so reductions do not depend on donor order.
fn sorted_values(replicates: &BTreeMap<String, f64>) -> Vec<f64> {
    replicates.values().copied().collect()
}

fn collect_replicates(
    labels: &[String],
    results: Vec<Result<f64>>,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (label, r) in labels.iter().zip(results) {
        out.insert(label.clone(), r?);
    }
    Ok(out)
}

/// Placebo variance: each donor in turn plays the treated unit (the actual
/// treated unit is removed) and `se` is the population standard deviation
/// of those placebo effects.
pub fn placebo_se<F: EffectEstimator + ?Sized, E: Executor>(
    panel: &PanelDataset,
    estimator: &F,
    level: f64,
    exec: &E,
) -> Result<EffectEstimate> {
    check_level(level)?;
    let donors = panel.n_donors();
    if donors < 2 {
        return Err(Error::TooFewDonors { required: 2, found: donors });
    }
    let point = estimator.estimate(panel)?;
    let results = exec.map_indexed(donors, |j| estimator.estimate(&panel.placebo_for(j)?));
    let replicates = collect_replicates(panel.donor_units(), results)?;
    let se = stats::population_sd(&sorted_values(&replicates));
    Ok(EffectEstimate::new(point, se, level, InferenceMethod::Placebo, replicates))
}

/// Leave-one-donor-out jackknife, `se^2 = (N-1)/N * sum (tau_(-j) - mean)^2`.
pub fn jackknife_se<F: EffectEstimator + ?Sized, E: Executor>(
    panel: &PanelDataset,
    estimator: &F,
    level: f64,
    exec: &E,
) -> Result<EffectEstimate> {
    check_level(level)?;
    let donors = panel.n_donors();
    if donors < 3 {
        return Err(Error::TooFewDonors { required: 3, found: donors });
    }
    let point = estimator.estimate(panel)?;
    let results = exec.map_indexed(donors, |j| estimator.estimate(&panel.without_donor(j)?));
    let replicates = collect_replicates(panel.donor_units(), results)?;
    let values = sorted_values(&replicates);
    let n = values.len() as f64;
    let m = stats::mean(&values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    let se = libm::sqrt((n - 1.0) / n * ss);
    Ok(EffectEstimate::new(point, se, level, InferenceMethod::Jackknife, replicates))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceboDistribution {
    /// Average post-period gap with each donor treated in place.
    pub placebo_effects: BTreeMap<String, f64>,
    pub actual_effect: f64,
    /// Post-MSPE over pre-MSPE for every unit, treated included.
    pub mspe_ratios: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MspeRatioTest {
    pub distribution: PlaceboDistribution,
    pub p_value: f64,
    /// Rank of the treated ratio, 1 being the largest.
    pub rank: usize,
    pub warnings: Vec<String>,
}

fn mspe_ratio(pre: f64, post: f64) -> f64 {
    if pre == 0.0 {
        f64::INFINITY
    } else {
        post / pre
    }
}

/// Abadie-style in-space placebo test on the ratio of post- to
/// pre-treatment MSPE. `p = rank / (N_donors + 1)`, ties counted against
/// the treated unit.
pub fn mspe_ratio_test<E: Executor>(
    panel: &PanelDataset,
    predictors: &PredictorSpec,
    options: &ScmOptions,
    exec: &E,
) -> Result<MspeRatioTest> {
    let donors = panel.n_donors();
    if donors < 2 {
        return Err(Error::TooFewDonors { required: 2, found: donors });
    }
    let actual = scm_fit(panel, predictors, options, &Sequential)?;
    let placebo_fits = exec.map_indexed(donors, |j| {
        scm_fit(&panel.placebo_for(j)?, predictors, options, &Sequential)
    });

    let mut warnings = Vec::new();
    let mut placebo_effects = BTreeMap::new();
    let mut mspe_ratios = BTreeMap::new();
    let mut ratio_of = |unit: &str, pre: f64, post: f64| {
        if pre == 0.0 {
            warnings.push(format!("mspe ratio: {unit} has zero pre-treatment MSPE, ratio set to infinity"));
        }
        mspe_ratio(pre, post)
    };
    let (pre, post) = actual.mspe_split();
    let treated_ratio = ratio_of(panel.treated_unit(), pre, post);
    mspe_ratios.insert(String::from(panel.treated_unit()), treated_ratio);
    for (unit, fit) in panel.donor_units().iter().zip(placebo_fits) {
        let fit = fit?;
        let (pre, post) = fit.mspe_split();
        mspe_ratios.insert(unit.clone(), ratio_of(unit, pre, post));
        placebo_effects.insert(unit.clone(), fit.average_post_effect());
    }
    let rank = mspe_ratios.values().filter(|&&r| r >= treated_ratio).count();
    Ok(MspeRatioTest {
        distribution: PlaceboDistribution {
            placebo_effects,
            actual_effect: actual.average_post_effect(),
            mspe_ratios,
        },
        p_value: rank as f64 / (donors + 1) as f64,
        rank,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{build_panel, OutcomeKind, Record};
    use alloc::vec;

    fn panel_from(rows: &[(&str, &[f64])], first_treated: i32) -> PanelDataset {
        let recs: Vec<Record> = rows
            .iter()
            .flat_map(|(u, ys)| ys.iter().enumerate().map(move |(t, y)| Record::new(*u, t as i32, *y)))
            .collect();
        build_panel(&recs, "T", first_treated, OutcomeKind::GrowthPercent).unwrap()
    }

    #[test]
    fn paper_style_interval_arithmetic() {
        let (lo, hi) = confidence_interval(6.3, 3.0, 0.95);
        assert!((lo - 0.42).abs() < 1e-12 && (hi - 12.18).abs() < 1e-12);
        let (lo, hi) = confidence_interval(3.3, 4.1, 0.95);
        assert!((lo + 4.736).abs() < 1e-12 && (hi - 11.336).abs() < 1e-12);
    }

    #[test]
    fn identical_donors_give_zero_placebo_se() {
        let d = [1.0, 2.0, 4.0, 3.0, 5.0];
        let p = panel_from(&[("A", &d), ("B", &d), ("C", &d), ("T", &[1.0, 2.5, 4.0, 6.0, 9.0])], 3);
        let est = placebo_se(&p, &DidEstimator, 0.95, &Sequential).unwrap();
        assert_eq!(est.se, 0.0);
        assert_eq!(est.ci_low, est.point);
        assert_eq!(est.ci_high, est.point);
        assert_eq!(est.replicates.len(), 3);
    }

    #[test]
    fn too_few_donors() {
        let p = panel_from(&[("A", &[1.0, 2.0, 3.0]), ("T", &[1.0, 2.0, 3.0])], 2);
        assert!(matches!(
            placebo_se(&p, &DidEstimator, 0.95, &Sequential),
            Err(Error::TooFewDonors { required: 2, found: 1 })
        ));
        let p = panel_from(&[("A", &[1.0, 2.0, 3.0]), ("B", &[1.0, 2.0, 4.0]), ("T", &[1.0, 2.0, 3.0])], 2);
        assert!(matches!(
            jackknife_se(&p, &DidEstimator, 0.95, &Sequential),
            Err(Error::TooFewDonors { required: 3, found: 2 })
        ));
    }

    #[test]
    fn jackknife_zero_when_estimator_ignores_donors() {
        struct Constant;
        impl EffectEstimator for Constant {
            fn name(&self) -> &'static str {
                "constant"
            }
            fn estimate(&self, _: &PanelDataset) -> Result<f64> {
                Ok(2.5)
            }
        }
        let p = panel_from(
            &[("A", &[1.0, 2.0, 3.0]), ("B", &[1.0, 2.0, 4.0]), ("C", &[0.0, 2.0, 4.0]), ("T", &[1.0, 2.0, 3.0])],
            2,
        );
        let est = jackknife_se(&p, &Constant, 0.95, &Sequential).unwrap();
        assert_eq!(est.se, 0.0);
        assert_eq!(est.point, 2.5);
    }

    #[test]
    fn jackknife_formula_on_did() {
        let rows: [(&str, &[f64]); 4] = [
            ("A", &[1.0, 2.0, 3.0, 7.0]),
            ("B", &[1.0, 3.0, 4.0, 4.0]),
            ("C", &[0.0, 2.0, 4.0, 1.0]),
            ("T", &[1.0, 2.0, 6.0, 6.0]),
        ];
        let p = panel_from(&rows, 2);
        let est = jackknife_se(&p, &DidEstimator, 0.95, &Sequential).unwrap();
        // leave-one-out DiD values computed by hand from the four averages
        let loo = [
            (6.0 - 1.5) - ((4.0 + 4.0 + 4.0 + 1.0) / 4.0 - (1.0 + 3.0 + 0.0 + 2.0) / 4.0),
            (6.0 - 1.5) - ((3.0 + 7.0 + 4.0 + 1.0) / 4.0 - (1.0 + 2.0 + 0.0 + 2.0) / 4.0),
            (6.0 - 1.5) - ((3.0 + 7.0 + 4.0 + 4.0) / 4.0 - (1.0 + 2.0 + 1.0 + 3.0) / 4.0),
        ];
        let m = loo.iter().sum::<f64>() / 3.0;
        let se = libm::sqrt(2.0 / 3.0 * loo.iter().map(|v| (v - m) * (v - m)).sum::<f64>());
        assert!((est.se - se).abs() < 1e-12);
    }

    #[test]
    fn mspe_rank_arithmetic() {
        // treated jumps after treatment while donors continue smoothly
        let rows: [(&str, &[f64]); 6] = [
            ("A", &[1.0, 2.0, 1.5, 2.2, 1.9, 2.1]),
            ("B", &[3.0, 2.5, 3.1, 2.8, 3.0, 2.9]),
            ("C", &[0.5, 1.0, 0.7, 1.1, 0.9, 1.0]),
            ("D", &[2.0, 1.0, 2.4, 1.5, 2.2, 1.8]),
            ("E", &[4.0, 3.5, 3.9, 3.6, 3.8, 3.7]),
            ("T", &[2.1, 1.9, 2.2, 2.0, 9.0, 10.0]),
        ];
        let p = panel_from(&rows, 4);
        let test = mspe_ratio_test(&p, &PredictorSpec::default(), &ScmOptions::default(), &Sequential).unwrap();
        assert_eq!(test.rank, 1);
        assert!((test.p_value - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(test.distribution.placebo_effects.len(), 5);
        assert!(test.distribution.mspe_ratios.values().all(|&r| r >= 0.0));
    }

    #[test]
    fn mspe_smallest_ratio_gives_p_one() {
        // treated is followed perfectly in the post period by donor A, but not before
        let rows: [(&str, &[f64]); 4] = [
            ("A", &[1.0, 2.0, 1.0, 5.0, 6.0]),
            ("B", &[3.0, 1.0, 4.0, 1.0, 9.0]),
            ("C", &[0.0, 5.0, 2.0, 9.0, 0.0]),
            ("T", &[9.0, 9.0, 9.0, 5.0, 6.0]),
        ];
        let p = panel_from(&rows, 3);
        let test = mspe_ratio_test(&p, &PredictorSpec::default(), &ScmOptions::default(), &Sequential).unwrap();
        assert_eq!(test.p_value, 1.0, "{:?}", test.distribution.mspe_ratios);
        assert_eq!(vec![test.rank], vec![4]);
    }
}
