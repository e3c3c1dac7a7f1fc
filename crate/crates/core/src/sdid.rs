//! Synthetic difference-in-differences with a single treated unit.
//!
//! Unit weights solve a ridge-penalised fit of the treated pre-period
//! trajectory with a free intercept; time weights balance each donor's
//! pre-period outcomes against its post-period mean, again with an intercept
//! and an infinitesimal ridge that selects the minimum-norm solution when the
//! optimum is not unique. The effect is the weighted two-way fixed effects
//! coefficient, which for these product weights equals the weighted double
//! difference.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::simplex::{QpOptions, SimplexLsq, WeightVector};
use crate::stats;

/// Ridge on the time weights, relative to the mean squared column norm of
/// the centred design, that picks a near minimum-norm optimum.
pub const TIME_WEIGHT_RIDGE: f64 = 1e-12;
/// Floor for the time-weight ridge when the design is identically zero.
const TIME_WEIGHT_RIDGE_FLOOR: f64 = 1e-12;

/// Weights with an exact weight below this are left out of the regression.
const ZERO_WEIGHT: f64 = 1e-14;

/// Standard deviation of donor first differences over the pre-period.
pub fn noise_level(panel: &PanelDataset) -> f64 {
    let y = panel.outcomes();
    let mut diffs = Vec::with_capacity(panel.n_donors() * panel.n_pre());
    for i in 0..panel.n_donors() {
        for t in 1..panel.n_pre() {
            diffs.push(y[(i, t)] - y[(i, t - 1)]);
        }
    }
    stats::sample_sd(&diffs)
}

/// `(N_treated * T_post)^(1/4) * noise_level`, with one treated unit.
pub fn regularization_zeta(panel: &PanelDataset) -> Result<f64> {
    if panel.n_pre() < 2 {
        return Err(Error::TooFewPrePeriods {
            required: 2,
            found: panel.n_pre(),
        });
    }
    Ok(libm::pow(panel.n_post() as f64, 0.25) * noise_level(panel))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterceptWeights {
    pub intercept: f64,
    pub weights: WeightVector,
    pub objective: f64,
}

/// Unit weights from a `T_pre x donors` matrix and the treated pre-series.
///
/// Minimises `sum_t (w0 + sum_i w_i Y_it - Y_t)^2 + zeta^2 T_pre |w|^2`.
/// Without an intercept `w0` is fixed at zero.
pub fn unit_weights_from(
    donors_pre: &DMatrix<f64>,
    treated_pre: &[f64],
    zeta: f64,
    intercept: bool,
    qp: &QpOptions,
) -> InterceptWeights {
    let (t_pre, n_donors) = donors_pre.shape();
    // sum(w) = 1 folds the target into the design: Y_it - Y_t
    let mut design = DMatrix::from_fn(t_pre, n_donors, |t, i| donors_pre[(t, i)] - treated_pre[t]);
    if intercept {
        center_columns(&mut design);
    }
    let target = DVector::zeros(t_pre);
    let problem = SimplexLsq {
        design: &design,
        target: &target,
        row_weights: None,
        ridge: zeta * zeta * t_pre as f64,
    };
    let sol = problem.solve(qp);
    let w0 = if intercept {
        let w = sol.weights.as_slice();
        (0..t_pre)
            .map(|t| treated_pre[t] - (0..n_donors).map(|i| w[i] * donors_pre[(t, i)]).sum::<f64>())
            .sum::<f64>()
            / t_pre as f64
    } else {
        0.0
    };
    InterceptWeights {
        intercept: w0,
        weights: sol.weights,
        objective: sol.objective,
    }
}

pub fn solve_unit_weights(panel: &PanelDataset, zeta: f64, intercept: bool, qp: &QpOptions) -> InterceptWeights {
    let y = panel.outcomes();
    let t_pre = panel.n_pre();
    let donors_pre = DMatrix::from_fn(t_pre, panel.n_donors(), |t, i| y[(i, t)]);
    let tr = panel.treated_index();
    let treated_pre: Vec<f64> = (0..t_pre).map(|t| y[(tr, t)]).collect();
    unit_weights_from(&donors_pre, &treated_pre, zeta, intercept, qp)
}

/// Time weights from a `donors x T_pre` matrix and each donor's post mean.
///
/// Minimises `sum_i (l0 + sum_t l_t Y_it - Ybar_i,post)^2` plus the
/// tie-breaking ridge.
pub fn time_weights_from(donors_pre: &DMatrix<f64>, post_means: &[f64], qp: &QpOptions) -> InterceptWeights {
    let (n_donors, t_pre) = donors_pre.shape();
    let mut design = DMatrix::from_fn(n_donors, t_pre, |i, t| donors_pre[(i, t)] - post_means[i]);
    center_columns(&mut design);
    let target = DVector::zeros(n_donors);
    let sol = SimplexLsq {
        design: &design,
        target: &target,
        row_weights: None,
        ridge: time_weight_ridge(&design),
    }
    .solve(qp);
    let l = sol.weights.as_slice();
    let l0 = (0..n_donors)
        .map(|i| post_means[i] - (0..t_pre).map(|t| l[t] * donors_pre[(i, t)]).sum::<f64>())
        .sum::<f64>()
        / n_donors as f64;
    InterceptWeights {
        intercept: l0,
        weights: sol.weights,
        objective: sol.objective,
    }
}

pub fn solve_time_weights(panel: &PanelDataset, qp: &QpOptions) -> InterceptWeights {
    let y = panel.outcomes();
    let (t_pre, n_donors) = (panel.n_pre(), panel.n_donors());
    let donors_pre = DMatrix::from_fn(n_donors, t_pre, |i, t| y[(i, t)]);
    let post_means: Vec<f64> = (0..n_donors).map(|i| post_mean(panel, i)).collect();
    time_weights_from(&donors_pre, &post_means, qp)
}

fn time_weight_ridge(design: &DMatrix<f64>) -> f64 {
    let mean_sq = design.norm_squared() / design.ncols() as f64;
    (TIME_WEIGHT_RIDGE * mean_sq).max(TIME_WEIGHT_RIDGE_FLOOR * design.nrows() as f64)
}

fn center_columns(m: &mut DMatrix<f64>) {
    let rows = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / rows;
        col.add_scalar_mut(-mean);
    }
}

fn post_mean(panel: &PanelDataset, unit: usize) -> f64 {
    let y = panel.outcomes();
    (panel.n_pre()..panel.n_periods()).map(|t| y[(unit, t)]).sum::<f64>() / panel.n_post() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub enum UnitWeighting {
    Optimized,
    Uniform,
    Fixed(WeightVector),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TimeWeighting {
    Optimized,
    Uniform,
    Fixed(WeightVector),
    /// No pre-period differencing at all (all time weights zero). This is
    /// the synthetic control special case.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdidOptions {
    pub unit_weights: UnitWeighting,
    pub unit_intercept: bool,
    pub time_weights: TimeWeighting,
    /// Override the data-driven regularization strength.
    pub zeta: Option<f64>,
    pub qp: QpOptions,
}

impl Default for SdidOptions {
    fn default() -> Self {
        Self {
            unit_weights: UnitWeighting::Optimized,
            unit_intercept: true,
            time_weights: TimeWeighting::Optimized,
            zeta: None,
            qp: QpOptions::default(),
        }
    }
}

impl SdidOptions {
    /// Uniform unit and time weights: the classical difference in differences.
    pub fn did() -> Self {
        Self {
            unit_weights: UnitWeighting::Uniform,
            time_weights: TimeWeighting::Uniform,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdidFit {
    pub donors: Vec<String>,
    pub unit_weights: WeightVector,
    pub unit_intercept: f64,
    pub pre_periods: Vec<i32>,
    /// `None` when pre-period differencing was switched off.
    pub time_weights: Option<WeightVector>,
    pub time_intercept: f64,
    pub tau_hat: f64,
    pub zeta: f64,
    pub first_treated_period: i32,
    /// Intercept-shifted weighted donor average, every period.
    pub synthetic: BTreeMap<i32, f64>,
    pub actual: BTreeMap<i32, f64>,
}

impl SdidFit {
    pub fn gaps(&self) -> BTreeMap<i32, f64> {
        self.actual
            .iter()
            .map(|(p, a)| (*p, a - self.synthetic[p]))
            .collect()
    }
}

pub fn sdid_estimate(panel: &PanelDataset) -> Result<SdidFit> {
    sdid_estimate_with(panel, &SdidOptions::default())
}

pub fn sdid_estimate_with(panel: &PanelDataset, opts: &SdidOptions) -> Result<SdidFit> {
    let n_donors = panel.n_donors();
    let t_pre = panel.n_pre();
    let zeta = match opts.zeta {
        Some(z) => z,
        None => regularization_zeta(panel)?,
    };

    let (unit_weights, unit_intercept) = match &opts.unit_weights {
        UnitWeighting::Optimized => {
            let uw = solve_unit_weights(panel, zeta, opts.unit_intercept, &opts.qp);
            (uw.weights, uw.intercept)
        }
        UnitWeighting::Uniform => {
            let w = WeightVector::uniform(n_donors);
            let b0 = fitted_unit_intercept(panel, &w, opts.unit_intercept);
            (w, b0)
        }
        UnitWeighting::Fixed(w) => {
            check_len(w, n_donors, "unit")?;
            let b0 = fitted_unit_intercept(panel, w, opts.unit_intercept);
            (w.clone(), b0)
        }
    };

    let (time_weights, time_intercept) = match &opts.time_weights {
        TimeWeighting::Optimized => {
            let tw = solve_time_weights(panel, &opts.qp);
            (Some(tw.weights), tw.intercept)
        }
        TimeWeighting::Uniform => {
            let l = WeightVector::uniform(t_pre);
            let l0 = fitted_time_intercept(panel, &l);
            (Some(l), l0)
        }
        TimeWeighting::Fixed(l) => {
            check_len(l, t_pre, "time")?;
            let l0 = fitted_time_intercept(panel, l);
            (Some(l.clone()), l0)
        }
        TimeWeighting::None => (None, 0.0),
    };

    let tau_hat = match &time_weights {
        Some(l) => weighted_twfe_effect(panel, unit_weights.as_slice(), l.as_slice())?,
        None => {
            let y = panel.outcomes();
            let tr = panel.treated_index();
            let w = unit_weights.as_slice();
            (t_pre..panel.n_periods())
                .map(|t| y[(tr, t)] - (0..n_donors).map(|i| w[i] * y[(i, t)]).sum::<f64>())
                .sum::<f64>()
                / panel.n_post() as f64
        }
    };

    let y = panel.outcomes();
    let tr = panel.treated_index();
    let mut synthetic = BTreeMap::new();
    let mut actual = BTreeMap::new();
    for (t, &p) in panel.periods().iter().enumerate() {
        let s: f64 = unit_weights.iter().enumerate().map(|(i, w)| w * y[(i, t)]).sum();
        synthetic.insert(p, unit_intercept + s);
        actual.insert(p, y[(tr, t)]);
    }

    Ok(SdidFit {
        donors: panel.donor_units().to_vec(),
        unit_weights,
        unit_intercept,
        pre_periods: panel.pre_periods().to_vec(),
        time_weights,
        time_intercept,
        tau_hat,
        zeta,
        first_treated_period: panel.first_treated_period(),
        synthetic,
        actual,
    })
}

fn check_len(w: &WeightVector, expected: usize, what: &str) -> Result<()> {
    if w.len() != expected {
        return Err(Error::DimensionMismatch(alloc::format!(
            "{} {what} weights for {expected} entries",
            w.len()
        )));
    }
    Ok(())
}

fn fitted_unit_intercept(panel: &PanelDataset, w: &WeightVector, intercept: bool) -> f64 {
    if !intercept {
        return 0.0;
    }
    let y = panel.outcomes();
    let tr = panel.treated_index();
    let t_pre = panel.n_pre();
    (0..t_pre)
        .map(|t| y[(tr, t)] - w.iter().enumerate().map(|(i, wi)| wi * y[(i, t)]).sum::<f64>())
        .sum::<f64>()
        / t_pre as f64
}

fn fitted_time_intercept(panel: &PanelDataset, l: &WeightVector) -> f64 {
    let y = panel.outcomes();
    let n = panel.n_donors();
    (0..n)
        .map(|i| post_mean(panel, i) - l.iter().enumerate().map(|(t, lt)| lt * y[(i, t)]).sum::<f64>())
        .sum::<f64>()
        / n as f64
}

/// Effect from the weighted two-way fixed effects regression
///
/// `Y_it = mu + alpha_i + beta_t + tau D_it`, cell weight `u_i s_t`,
///
/// where donors get their unit weight and the treated unit weight one,
/// pre-periods get their time weight and post-periods `1 / T_post`. Units and
/// periods with zero weight drop out.
pub fn weighted_twfe_effect(panel: &PanelDataset, unit_weights: &[f64], time_weights: &[f64]) -> Result<f64> {
    let n_donors = panel.n_donors();
    let t_pre = panel.n_pre();
    if unit_weights.len() != n_donors || time_weights.len() != t_pre {
        return Err(Error::DimensionMismatch("weights do not match the panel".into()));
    }
    let tr = panel.treated_index();
    let post_weight = 1.0 / panel.n_post() as f64;

    let mut units: Vec<(usize, f64)> = unit_weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > ZERO_WEIGHT)
        .map(|(i, &w)| (i, w))
        .collect();
    units.push((tr, 1.0));
    let mut periods: Vec<(usize, f64)> = time_weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > ZERO_WEIGHT)
        .map(|(t, &w)| (t, w))
        .collect();
    periods.extend((t_pre..panel.n_periods()).map(|t| (t, post_weight)));

    let (nu, np) = (units.len(), periods.len());
    // intercept, nu - 1 unit dummies, np - 1 period dummies, treatment
    let cols = 1 + (nu - 1) + (np - 1) + 1;
    let rows = nu * np;
    let y = panel.outcomes();
    let mut x = DMatrix::zeros(rows, cols);
    let mut b = DVector::zeros(rows);
    for (a, &(i, wu)) in units.iter().enumerate() {
        for (c, &(t, wt)) in periods.iter().enumerate() {
            let r = a * np + c;
            let s = libm::sqrt(wu * wt);
            x[(r, 0)] = s;
            if a > 0 {
                x[(r, a)] = s;
            }
            if c > 0 {
                x[(r, nu - 1 + c)] = s;
            }
            if i == tr && t >= t_pre {
                x[(r, cols - 1)] = s;
            }
            b[r] = s * y[(i, t)];
        }
    }
    let qr = x.qr();
    let qtb = qr.q().transpose() * b;
    let coef = qr
        .r()
        .solve_upper_triangular(&qtb)
        .ok_or(Error::SingularSystem)?;
    Ok(coef[cols - 1])
}

/// Classical difference in differences from four averages.
pub fn did_estimate(panel: &PanelDataset) -> f64 {
    let y = panel.outcomes();
    let (t_pre, t_all) = (panel.n_pre(), panel.n_periods());
    let tr = panel.treated_index();
    let avg = |rows: &mut dyn Iterator<Item = usize>, cols: core::ops::Range<usize>| {
        let mut total = 0.0;
        let mut count = 0usize;
        for i in rows {
            for t in cols.clone() {
                total += y[(i, t)];
                count += 1;
            }
        }
        total / count as f64
    };
    let treated_post = avg(&mut core::iter::once(tr), t_pre..t_all);
    let treated_pre = avg(&mut core::iter::once(tr), 0..t_pre);
    let donor_post = avg(&mut (0..panel.n_donors()), t_pre..t_all);
    let donor_pre = avg(&mut (0..panel.n_donors()), 0..t_pre);
    (treated_post - treated_pre) - (donor_post - donor_pre)
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
        build_panel(&recs, "T", first_treated, OutcomeKind::Level).unwrap()
    }

    #[test]
    fn zeta_zero_for_constant_donors() {
        let p = panel_from(&[("A", &[3.0; 5]), ("B", &[1.0; 5]), ("T", &[1.0, 2.0, 3.0, 4.0, 5.0])], 3);
        assert_eq!(regularization_zeta(&p).unwrap(), 0.0);
    }

    #[test]
    fn zeta_scales_with_post_length() {
        // donor first differences over the pre-period: +1, -1, +1, -1 -> sd = sqrt(4/3)
        let p = panel_from(&[("A", &[0.0, 1.0, 0.0, 9.0, 9.0]), ("B", &[0.0, -1.0, 0.0, 9.0, 9.0]), ("T", &[0.0; 5])], 3);
        let sigma = noise_level(&p);
        assert!((sigma - libm::sqrt(4.0 / 3.0)).abs() < 1e-15);
        let z = regularization_zeta(&p).unwrap();
        assert!((z - libm::pow(2.0, 0.25) * sigma).abs() < 1e-15);
        assert!((libm::pow(2.0, 0.25) - 1.189_207_115_002_721).abs() < 1e-15);
    }

    #[test]
    fn four_averages_example() {
        let p = panel_from(&[("C", &[1.0, 2.0, 3.0, 4.0]), ("T", &[2.0, 3.0, 5.0, 6.0])], 2);
        assert!((did_estimate(&p) - 1.0).abs() < 1e-15);
        let fit = sdid_estimate_with(&p, &SdidOptions::did()).unwrap();
        assert!((fit.tau_hat - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_trend_gives_zero_did() {
        let p = panel_from(&[("A", &[1.0, 3.0, 2.0, 5.0]), ("B", &[3.0, 5.0, 8.0, 1.0]), ("T", &[4.5, 6.5, 7.5, 5.5])], 2);
        assert!(did_estimate(&p).abs() < 1e-12);
    }

    #[test]
    fn unit_weights_recover_donor_and_shift() {
        let a = [1.0, 4.0, 2.0, 8.0, 3.0];
        let b = [5.0, 1.0, 6.0, 2.0, 7.0];
        let shifted: Vec<f64> = a.iter().map(|x| x + 2.5).collect();
        let p = panel_from(&[("A", &a), ("B", &b), ("T", &shifted)], 4);
        let uw = solve_unit_weights(&p, 0.0, true, &QpOptions::default());
        assert!((uw.weights[0] - 1.0).abs() < 1e-10);
        assert!((uw.intercept - 2.5).abs() < 1e-10);
        assert!(uw.objective < 1e-18);

        let p = panel_from(&[("A", &a), ("B", &b), ("T", &a)], 4);
        let uw = solve_unit_weights(&p, 0.0, true, &QpOptions::default());
        assert!((uw.weights[0] - 1.0).abs() < 1e-10 && uw.intercept.abs() < 1e-10);
    }

    #[test]
    fn constant_donors_give_uniform_time_weights() {
        let p = panel_from(&[("A", &[2.0; 6]), ("B", &[7.0; 6]), ("T", &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])], 4);
        let tw = solve_time_weights(&p, &QpOptions::default());
        for l in tw.weights.iter() {
            assert!((l - 0.25).abs() < 1e-12);
        }
        assert!(tw.intercept.abs() < 1e-12);
    }

    #[test]
    fn single_pre_period_time_weight() {
        let donors = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let tw = time_weights_from(&donors, &[4.0, 1.0, 0.0], &QpOptions::default());
        assert_eq!(tw.weights.as_slice(), &[1.0]);
    }

    #[test]
    fn treated_equal_to_donor_without_ridge_gives_zero_effect() {
        let a = [1.0, 4.0, 2.0, 8.0, 3.0];
        let b = [5.0, 1.0, 6.0, 2.0, 7.5];
        let c = [0.0, 2.0, 1.0, 1.0, 0.5];
        let p = panel_from(&[("A", &a), ("B", &b), ("C", &c), ("T", &a)], 3);
        let opts = SdidOptions { zeta: Some(0.0), ..SdidOptions::default() };
        let fit = sdid_estimate_with(&p, &opts).unwrap();
        assert!(fit.tau_hat.abs() < 1e-8, "{}", fit.tau_hat);
    }

    #[test]
    fn sc_special_case_is_mean_post_gap() {
        let p = panel_from(&[("A", &[1.0, 2.0, 3.0, 4.0]), ("B", &[0.0, 2.0, 1.0, 3.0]), ("T", &[0.5, 2.0, 9.0, 1.0])], 2);
        let w = WeightVector::new(vec![0.25, 0.75]).unwrap();
        let opts = SdidOptions {
            unit_weights: UnitWeighting::Fixed(w),
            unit_intercept: false,
            time_weights: TimeWeighting::None,
            ..SdidOptions::default()
        };
        let fit = sdid_estimate_with(&p, &opts).unwrap();
        let expected = ((9.0 - (0.25 * 3.0 + 0.75 * 1.0)) + (1.0 - (0.25 * 4.0 + 0.75 * 3.0))) / 2.0;
        assert!((fit.tau_hat - expected).abs() < 1e-14);
        assert_eq!(fit.unit_intercept, 0.0);
    }

    #[test]
    fn wrong_fixed_weight_length_is_rejected() {
        let p = panel_from(&[("A", &[1.0, 2.0, 3.0]), ("T", &[1.0, 2.0, 3.0])], 2);
        let opts = SdidOptions {
            unit_weights: UnitWeighting::Fixed(WeightVector::uniform(3)),
            ..SdidOptions::default()
        };
        assert!(matches!(sdid_estimate_with(&p, &opts), Err(Error::DimensionMismatch(_))));
    }
}
