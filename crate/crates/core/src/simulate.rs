//! Simulated panels with a known effect.
//!
//! ```text
//!   Y_it = mu + alpha_i + beta_t + sum_f L_if F_tf + eps_it + tau * 1[i treated, t post]
//! ```
//!
//! The treated unit's `alpha` and loadings are a Dirichlet(1) mixture of the
//! donors', so its noiseless path lies inside the donor hull every period.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::inference::{placebo_se, EffectEstimator};
use crate::panel::{OutcomeKind, PanelDataset};
use crate::rng::{stream_rng, Stream};
use crate::stats;

const MU: f64 = 10.0;
const FIRST_PERIOD: i32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DgpConfig {
    pub n_donors: usize,
    pub n_pre: usize,
    pub n_post: usize,
    pub n_factors: usize,
    pub noise_sd: f64,
    pub true_tau: f64,
    pub seed: u64,
    pub loading_scale: f64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n_donors: 20,
            n_pre: 10,
            n_post: 3,
            n_factors: 2,
            noise_sd: 1.0,
            true_tau: 5.0,
            seed: 0,
            loading_scale: 1.0,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_donors < 2 {
            return Err(Error::TooFewDonors { required: 2, found: self.n_donors });
        }
        if self.n_pre < 2 {
            return Err(Error::TooFewPrePeriods { required: 2, found: self.n_pre });
        }
        if self.n_post < 1 {
            return Err(Error::InvalidConfig(String::from("n_post must be at least 1")));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise_sd must be finite and >= 0, got {}", self.noise_sd)));
        }
        if !self.true_tau.is_finite() || !self.loading_scale.is_finite() {
            return Err(Error::InvalidConfig(String::from("true_tau and loading_scale must be finite")));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn first_treated_period(&self) -> i32 {
        FIRST_PERIOD + self.n_pre as i32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPanel {
    pub panel: PanelDataset,
    pub true_tau: f64,
    /// Donor weights that generated the treated unit's effects.
    pub treated_mix: Vec<f64>,
}

fn normal(seed: u64, stream: Stream, a: usize, b: usize) -> f64 {
    stream_rng(seed, stream, a as u32, b as u32).sample(StandardNormal)
}

pub fn donor_label(i: usize) -> String {
    format!("D{:03}", i + 1)
}

pub const TREATED_LABEL: &str = "TREATED";

struct Components {
    /// (n_donors + 1) x T, treated row last, without noise or effect.
    systematic: DMatrix<f64>,
    mix: Vec<f64>,
}

fn components(cfg: &DgpConfig) -> Components {
    let (n, t, k, seed) = (cfg.n_donors, cfg.n_pre + cfg.n_post, cfg.n_factors, cfg.seed);

    let alpha: Vec<f64> = (0..n).map(|i| cfg.loading_scale * normal(seed, Stream::UnitEffect, i, 0)).collect();
    let beta: Vec<f64> = (0..t).map(|s| normal(seed, Stream::PeriodEffect, 0, s)).collect();
    let loadings = DMatrix::from_fn(n, k, |i, f| cfg.loading_scale * normal(seed, Stream::Loading, i, f));
    let mut factors = DMatrix::zeros(t, k);
    for f in 0..k {
        let mut level = 0.0;
        let mut walk = Vec::with_capacity(t);
        for s in 0..t {
            level += normal(seed, Stream::FactorShock, f, s);
            walk.push(level);
        }
        let m = stats::mean(&walk);
        let sd = stats::sample_sd(&walk);
        for s in 0..t {
            factors[(s, f)] = if sd > 0.0 { (walk[s] - m) / sd } else { walk[s] - m };
        }
    }

    let raw: Vec<f64> = (0..n)
        .map(|i| stream_rng(seed, Stream::Mixing, i as u32, 0).sample::<f64, _>(Exp1))
        .collect();
    let total: f64 = raw.iter().sum();
    let mix: Vec<f64> = raw.iter().map(|r| r / total).collect();

    let mut systematic = DMatrix::zeros(n + 1, t);
    for i in 0..n {
        for s in 0..t {
            let common: f64 = (0..k).map(|f| loadings[(i, f)] * factors[(s, f)]).sum();
            systematic[(i, s)] = MU + alpha[i] + beta[s] + common;
        }
    }
    for s in 0..t {
        systematic[(n, s)] = (0..n).map(|i| mix[i] * systematic[(i, s)]).sum();
    }
    Components { systematic, mix }
}

fn assemble(cfg: &DgpConfig, mut y: DMatrix<f64>, mix: Vec<f64>) -> Result<SimulatedPanel> {
    let (n, t) = y.shape();
    for i in 0..n {
        for s in 0..t {
            if cfg.noise_sd > 0.0 {
                y[(i, s)] += cfg.noise_sd * normal(cfg.seed, Stream::Noise, i, s);
            }
        }
    }
    for s in cfg.n_pre..t {
        y[(n - 1, s)] += cfg.true_tau;
    }
    let mut units: Vec<String> = (0..n - 1).map(donor_label).collect();
    units.push(String::from(TREATED_LABEL));
    let periods = (0..t).map(|s| FIRST_PERIOD + s as i32).collect();
    let panel = PanelDataset::new(
        units,
        periods,
        y,
        BTreeMap::new(),
        cfg.first_treated_period(),
        OutcomeKind::Level,
    )?;
    Ok(SimulatedPanel { panel, true_tau: cfg.true_tau, treated_mix: mix })
}

/// Draws one panel. Identical configs give bit-identical panels.
pub fn generate_panel(cfg: &DgpConfig) -> Result<SimulatedPanel> {
    cfg.validate()?;
    let c = components(cfg);
    assemble(cfg, c.systematic, c.mix)
}

/// Same draw as [`generate_panel`], but the treated unit is shifted up so
/// that its noiseless pre-period path sits at least one unit above every
/// donor in every pre-period.
pub fn hull_violation_panel(cfg: &DgpConfig) -> Result<SimulatedPanel> {
    cfg.validate()?;
    let c = components(cfg);
    let mut y = c.systematic;
    let n = cfg.n_donors;
    let mut shift = f64::NEG_INFINITY;
    for s in 0..cfg.n_pre {
        let donor_max = (0..n).map(|i| y[(i, s)]).fold(f64::NEG_INFINITY, f64::max);
        shift = shift.max(donor_max - y[(n, s)]);
    }
    // the noise is added afterwards, so leave room for it
    let margin = 1.0 + 8.0 * cfg.noise_sd;
    for s in 0..y.ncols() {
        y[(n, s)] += shift + margin;
    }
    assemble(cfg, y, c.mix)
}

/// One estimator on one simulated panel.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRow {
    pub seed: u64,
    pub estimator: String,
    pub true_tau: f64,
    pub tau_hat: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub covered: bool,
}

/// Generates a panel per seed and runs placebo inference with every
/// estimator. Rows come back ordered by seed, then estimator.
pub fn run_replications<E: Executor>(
    base: &DgpConfig,
    seeds: &[u64],
    estimators: &[&dyn EffectEstimator],
    level: f64,
    exec: &E,
) -> Result<Vec<ReplicationRow>> {
    base.validate()?;
    let per_seed = exec.map_indexed(seeds.len(), |r| -> Result<Vec<ReplicationRow>> {
        let sim = generate_panel(&base.with_seed(seeds[r]))?;
        estimators
            .iter()
            .map(|est| {
                let e = placebo_se(&sim.panel, *est, level, &Sequential)?;
                Ok(ReplicationRow {
                    seed: seeds[r],
                    estimator: String::from(est.name()),
                    true_tau: sim.true_tau,
                    tau_hat: e.point,
                    se: e.se,
                    ci_low: e.ci_low,
                    ci_high: e.ci_high,
                    covered: e.covers(sim.true_tau),
                })
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(seeds.len() * estimators.len());
    for r in per_seed {
        rows.extend(r?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageSummary {
    pub estimator: String,
    pub replications: usize,
    pub coverage: f64,
    pub mean_tau_hat: f64,
    pub bias: f64,
    /// Standard error of `mean_tau_hat` across replications.
    pub monte_carlo_se: f64,
    pub mean_se: f64,
}

/// Per-estimator aggregates, ordered by estimator name.
pub fn summarize(rows: &[ReplicationRow]) -> Vec<CoverageSummary> {
    let mut groups: BTreeMap<&str, Vec<&ReplicationRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.estimator.as_str()).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(name, rs)| {
            let n = rs.len();
            let taus: Vec<f64> = rs.iter().map(|r| r.tau_hat).collect();
            let mean_tau_hat = stats::mean(&taus);
            let truth = stats::mean(&rs.iter().map(|r| r.true_tau).collect::<Vec<_>>());
            CoverageSummary {
                estimator: String::from(name),
                replications: n,
                coverage: rs.iter().filter(|r| r.covered).count() as f64 / n as f64,
                mean_tau_hat,
                bias: mean_tau_hat - truth,
                monte_carlo_se: stats::sample_sd(&taus) / libm::sqrt(n as f64),
                mean_se: stats::mean(&rs.iter().map(|r| r.se).collect::<Vec<_>>()),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::diagnose;
    use crate::inference::{DidEstimator, SdidEstimator};
    use crate::scm::{scm_fit, PredictorSpec, ScmOptions};
    use crate::sdid::sdid_estimate;

    fn noiseless(tau: f64, factors: usize) -> DgpConfig {
        DgpConfig {
            n_donors: 6,
            n_pre: 6,
            n_post: 2,
            n_factors: factors,
            noise_sd: 0.0,
            true_tau: tau,
            seed: 11,
            loading_scale: 1.0,
        }
    }

    #[test]
    fn reproducible() {
        let cfg = DgpConfig { seed: 3, ..DgpConfig::default() };
        assert_eq!(generate_panel(&cfg).unwrap(), generate_panel(&cfg).unwrap());
        assert_ne!(generate_panel(&cfg).unwrap(), generate_panel(&cfg.with_seed(4)).unwrap());
    }

    #[test]
    fn treated_is_mixture_without_noise() {
        let sim = generate_panel(&noiseless(0.0, 2)).unwrap();
        let y = sim.panel.outcomes();
        for t in 0..y.ncols() {
            let synth: f64 = sim.treated_mix.iter().enumerate().map(|(i, w)| w * y[(i, t)]).sum();
            assert!((y[(6, t)] - synth).abs() < 1e-12);
        }
        assert!((sim.treated_mix.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_null() {
        let sim = generate_panel(&noiseless(0.0, 0)).unwrap();
        let fit = scm_fit(&sim.panel, &PredictorSpec::default(), &ScmOptions::default(), &Sequential).unwrap();
        assert!(fit.gaps.values().all(|g| g.abs() < 1e-6), "{:?}", fit.gaps);
        assert!(sdid_estimate(&sim.panel).unwrap().tau_hat.abs() < 1e-8);
    }

    #[test]
    fn noiseless_recovery() {
        let sim = generate_panel(&noiseless(5.0, 0)).unwrap();
        assert!((sdid_estimate(&sim.panel).unwrap().tau_hat - 5.0).abs() < 1e-8);
    }

    #[test]
    fn hull_violation_is_flagged_and_fits_worse() {
        let cfg = noiseless(0.0, 1);
        let good = generate_panel(&cfg).unwrap();
        let bad = hull_violation_panel(&cfg).unwrap();
        assert!(diagnose(&good.panel).convex_hull_ok);
        let report = diagnose(&bad.panel);
        assert!(!report.convex_hull_ok);
        assert!(report.hull.iter().all(|h| h.treated >= h.donor_max + 1.0));
        let opts = ScmOptions::default();
        let a = scm_fit(&good.panel, &PredictorSpec::default(), &opts, &Sequential).unwrap();
        let b = scm_fit(&bad.panel, &PredictorSpec::default(), &opts, &Sequential).unwrap();
        assert!(b.pre_rmspe >= a.pre_rmspe);
        assert!(b.pre_rmspe >= 1.0);
    }

    #[test]
    fn two_donor_minimum() {
        let cfg = DgpConfig { n_donors: 2, ..noiseless(1.0, 1) };
        hull_violation_panel(&cfg).unwrap();
        generate_panel(&cfg).unwrap();
    }

    #[test]
    fn config_validation() {
        assert!(generate_panel(&DgpConfig { n_donors: 1, ..DgpConfig::default() }).is_err());
        assert!(generate_panel(&DgpConfig { n_post: 0, ..DgpConfig::default() }).is_err());
        assert!(generate_panel(&DgpConfig { noise_sd: -1.0, ..DgpConfig::default() }).is_err());
    }

    #[test]
    fn replication_rows_and_summary() {
        let cfg = DgpConfig { n_donors: 5, n_pre: 4, n_post: 2, ..DgpConfig::default() };
        let sdid = SdidEstimator::default();
        let rows = run_replications(&cfg, &[1, 2, 3], &[&DidEstimator, &sdid], 0.95, &Sequential).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].seed, 1);
        assert_eq!(rows[0].estimator, "did");
        assert_eq!(rows[1].estimator, "sdid");
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 2);
        assert_eq!(summary[0].estimator, "did");
        assert_eq!(summary[1].replications, 3);
    }
}
