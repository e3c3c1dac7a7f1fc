//! Synthetic control: donor weights on the simplex chosen so that the
//! weighted donor predictors match the treated unit, with predictor
//! importance weights picked by minimising the pre-treatment outcome fit.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::panel::PanelDataset;
use crate::rng::{stream_rng, Stream};
use crate::simplex::{QpOptions, QpSolution, SimplexLsq, WeightVector, SUM_TOLERANCE};
use crate::stats;

/// Which rows enter the predictor matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorSpec {
    /// Pre-treatment periods whose outcomes are predictors; `None` uses all.
    pub outcome_periods: Option<Vec<i32>>,
    /// Covariates, each aggregated as its pre-treatment mean.
    pub covariates: Vec<String>,
    /// Scale each predictor row by its standard deviation across units.
    pub standardize: bool,
}

impl Default for PredictorSpec {
    fn default() -> Self {
        Self {
            outcome_periods: None,
            covariates: Vec::new(),
            standardize: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PredictorMatrix {
    pub labels: Vec<String>,
    /// Treated predictors after centring and scaling (k).
    pub treated: DVector<f64>,
    /// Donor predictors after centring and scaling (k x donors).
    pub donors: DMatrix<f64>,
    pub raw_treated: DVector<f64>,
    pub raw_donors: DMatrix<f64>,
    pub dropped: Vec<String>,
    pub warnings: Vec<String>,
}

impl PredictorMatrix {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn build_predictor_matrix(panel: &PanelDataset, spec: &PredictorSpec) -> Result<PredictorMatrix> {
    let y = panel.outcomes();
    let n = panel.n_units();
    let pre = panel.pre_periods();

    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    let periods: Vec<i32> = match &spec.outcome_periods {
        Some(ps) => ps.clone(),
        None => pre.to_vec(),
    };
    for p in periods {
        let t = match panel.period_index(p) {
            Some(t) if p < panel.first_treated_period() => t,
            _ => return Err(Error::NotPrePeriod(p)),
        };
        rows.push((format!("outcome:{p}"), (0..n).map(|i| y[(i, t)]).collect()));
    }
    for name in &spec.covariates {
        let m = panel
            .covariate(name)
            .ok_or_else(|| Error::UnknownCovariate(name.clone()))?;
        let values = (0..n)
            .map(|i| (0..pre.len()).map(|t| m[(i, t)]).sum::<f64>() / pre.len() as f64)
            .collect();
        rows.push((format!("{name}:mean"), values));
    }

    let mut labels = Vec::new();
    let mut kept: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut dropped = Vec::new();
    let mut warnings = Vec::new();
    for (label, values) in rows {
        let mean = stats::mean(&values);
        let sd = stats::sample_sd(&values);
        if sd <= 1e-14 * (1.0 + mean.abs()) {
            warnings.push(format!("predictor {label} has zero variance across units and was dropped"));
            dropped.push(label);
            continue;
        }
        let scaled = if spec.standardize {
            values.iter().map(|v| (v - mean) / sd).collect()
        } else {
            values.clone()
        };
        labels.push(label);
        kept.push((values, scaled));
    }
    if kept.is_empty() {
        return Err(Error::NoPredictors);
    }

    let k = kept.len();
    let donors = panel.n_donors();
    let treated = panel.treated_index();
    Ok(PredictorMatrix {
        labels,
        treated: DVector::from_fn(k, |r, _| kept[r].1[treated]),
        donors: DMatrix::from_fn(k, donors, |r, c| kept[r].1[c]),
        raw_treated: DVector::from_fn(k, |r, _| kept[r].0[treated]),
        raw_donors: DMatrix::from_fn(k, donors, |r, c| kept[r].0[c]),
        dropped,
        warnings,
    })
}

/// Importance weights on predictor rows, nonnegative and summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorWeights(Vec<f64>);

impl PredictorWeights {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.is_empty() || v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidWeights("predictor weights must be nonnegative".into()));
        }
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidWeights(format!("predictor weights sum to {sum}")));
        }
        Ok(Self(v))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    /// Softmax of `(params, 0)`; `params` has one entry fewer than the result.
    pub fn from_logits(params: &[f64]) -> Self {
        let max = params.iter().fold(0.0f64, |m, &x| m.max(x));
        let mut v: Vec<f64> = params.iter().map(|&x| libm::exp(x - max)).collect();
        v.push(libm::exp(-max));
        let sum: f64 = v.iter().sum();
        for x in v.iter_mut() {
            *x /= sum;
        }
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Inner problem: `min_w sum_k v_k (x1_k - (X0 w)_k)^2` over the simplex.
pub fn solve_weights_fixed_v(
    treated: &DVector<f64>,
    donors: &DMatrix<f64>,
    v: &PredictorWeights,
    opts: &QpOptions,
) -> QpSolution {
    SimplexLsq {
        design: donors,
        target: treated,
        row_weights: Some(v.as_slice()),
        ridge: 0.0,
    }
    .solve(opts)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorWeighting {
    /// Nelder–Mead over softmax-parameterised weights from several seeded
    /// starting points. Start 0 is always the uniform vector.
    Search {
        multistarts: usize,
        max_evaluations: usize,
    },
    Uniform,
    Fixed(PredictorWeights),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScmOptions {
    pub weighting: PredictorWeighting,
    pub seed: u64,
    pub qp: QpOptions,
}

impl Default for ScmOptions {
    fn default() -> Self {
        Self {
            weighting: PredictorWeighting::Search {
                multistarts: 10,
                max_evaluations: 2000,
            },
            seed: 0,
            qp: QpOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PredictorWeightSelection {
    pub predictor_weights: PredictorWeights,
    pub donor_weights: WeightVector,
    /// Mean squared pre-treatment outcome gap at the selected weights.
    pub pre_mspe: f64,
    /// Index of the winning start (0 when no search was run).
    pub start: usize,
}

/// Sum of squared pre-treatment outcome gaps for donor weights `w`.
fn pre_outcome_loss(panel: &PanelDataset, w: &[f64]) -> f64 {
    let y = panel.outcomes();
    let tr = panel.treated_index();
    (0..panel.n_pre())
        .map(|t| {
            let synth: f64 = w.iter().enumerate().map(|(i, wi)| wi * y[(i, t)]).sum();
            let gap = y[(tr, t)] - synth;
            gap * gap
        })
        .sum()
}

pub fn select_predictor_weights<E: Executor>(
    panel: &PanelDataset,
    predictors: &PredictorMatrix,
    opts: &ScmOptions,
    exec: &E,
) -> Result<PredictorWeightSelection> {
    let k = predictors.len();
    let n_pre = panel.n_pre() as f64;
    let inner = |v: &PredictorWeights| {
        solve_weights_fixed_v(&predictors.treated, &predictors.donors, v, &opts.qp).weights
    };
    let finish = |v: PredictorWeights, start: usize| {
        let w = inner(&v);
        let pre_mspe = pre_outcome_loss(panel, w.as_slice()) / n_pre;
        PredictorWeightSelection {
            predictor_weights: v,
            donor_weights: w,
            pre_mspe,
            start,
        }
    };

    let (multistarts, max_evaluations) = match &opts.weighting {
        PredictorWeighting::Uniform => return Ok(finish(PredictorWeights::uniform(k), 0)),
        PredictorWeighting::Fixed(v) => {
            if v.len() != k {
                return Err(Error::DimensionMismatch(format!(
                    "{} predictor weights for {k} predictors",
                    v.len()
                )));
            }
            return Ok(finish(v.clone(), 0));
        }
        PredictorWeighting::Search { multistarts, max_evaluations } => {
            (*multistarts.max(&1), *max_evaluations)
        }
    };
    if k == 1 {
        return Ok(finish(PredictorWeights::uniform(1), 0));
    }

    let nm = NelderMeadOptions {
        initial_step: 1.0,
        max_evaluations,
        f_tolerance: 1e-12,
        x_tolerance: 1e-8,
    };
    let runs = exec.map_indexed(multistarts, |start| {
        let x0: Vec<f64> = if start == 0 {
            vec![0.0; k - 1]
        } else {
            let mut rng = stream_rng(opts.seed, Stream::Multistart, start as u32, 0);
            (0..k - 1).map(|_| StandardNormal.sample(&mut rng)).collect()
        };
        let loss = |params: &[f64]| {
            let w = inner(&PredictorWeights::from_logits(params));
            pre_outcome_loss(panel, w.as_slice())
        };
        let m = nelder_mead(loss, &x0, &nm);
        (m.value, m.x)
    });
    let (start, (_, params)) = runs
        .into_iter()
        .enumerate()
        .min_by(|(ia, (fa, _)), (ib, (fb, _))| fa.total_cmp(fb).then(ia.cmp(ib)))
        .unwrap_or_else(|| unreachable!("at least one start"));
    Ok(finish(PredictorWeights::from_logits(&params), start))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScmFit {
    pub donors: Vec<String>,
    pub donor_weights: WeightVector,
    pub predictor_labels: Vec<String>,
    pub predictor_weights: PredictorWeights,
    pub pre_rmspe: f64,
    pub first_treated_period: i32,
    /// Treated minus synthetic, every period.
    pub gaps: BTreeMap<i32, f64>,
    pub synthetic: BTreeMap<i32, f64>,
    pub actual: BTreeMap<i32, f64>,
    /// The weighted donor Gram matrix is singular; other weight vectors may
    /// fit equally well.
    pub weights_non_unique: bool,
    pub warnings: Vec<String>,
}

impl ScmFit {
    pub fn post_periods(&self) -> Vec<i32> {
        self.gaps
            .keys()
            .copied()
            .filter(|&p| p >= self.first_treated_period)
            .collect()
    }

    /// Mean gap over every post-treatment period.
    pub fn average_post_effect(&self) -> f64 {
        let post = self.post_periods();
        post.iter().map(|p| self.gaps[p]).sum::<f64>() / post.len() as f64
    }

    /// Mean squared gap over pre- and post-treatment periods.
    pub fn mspe_split(&self) -> (f64, f64) {
        let (mut pre, mut npre, mut post, mut npost) = (0.0, 0usize, 0.0, 0usize);
        for (&p, &g) in &self.gaps {
            if p < self.first_treated_period {
                pre += g * g;
                npre += 1;
            } else {
                post += g * g;
                npost += 1;
            }
        }
        (pre / npre as f64, post / npost as f64)
    }
}

pub fn scm_fit<E: Executor>(
    panel: &PanelDataset,
    spec: &PredictorSpec,
    opts: &ScmOptions,
    exec: &E,
) -> Result<ScmFit> {
    let predictors = build_predictor_matrix(panel, spec)?;
    let selection = select_predictor_weights(panel, &predictors, opts, exec)?;
    let w = selection.donor_weights.as_slice();
    let y = panel.outcomes();
    let tr = panel.treated_index();

    let mut gaps = BTreeMap::new();
    let mut synthetic = BTreeMap::new();
    let mut actual = BTreeMap::new();
    let mut pre_sq = 0.0;
    for (t, &period) in panel.periods().iter().enumerate() {
        let synth: f64 = w.iter().enumerate().map(|(i, wi)| wi * y[(i, t)]).sum();
        let gap = y[(tr, t)] - synth;
        if period < panel.first_treated_period() {
            pre_sq += gap * gap;
        }
        gaps.insert(period, gap);
        synthetic.insert(period, synth);
        actual.insert(period, y[(tr, t)]);
    }

    let weights_non_unique = SimplexLsq {
        design: &predictors.donors,
        target: &predictors.treated,
        row_weights: Some(selection.predictor_weights.as_slice()),
        ridge: 0.0,
    }
    .is_singular();
    let mut warnings = predictors.warnings.clone();
    if weights_non_unique {
        warnings.push(
            "synthetic control: donor Gram matrix is singular, donor weights are not unique".to_string(),
        );
    }

    Ok(ScmFit {
        donors: panel.donor_units().to_vec(),
        donor_weights: selection.donor_weights,
        predictor_labels: predictors.labels,
        predictor_weights: selection.predictor_weights,
        pre_rmspe: libm::sqrt(pre_sq / panel.n_pre() as f64),
        first_treated_period: panel.first_treated_period(),
        gaps,
        synthetic,
        actual,
        weights_non_unique,
        warnings,
    })
}

/// Unweighted mean of the gaps over `post_periods`.
pub fn average_effect(fit: &ScmFit, post_periods: &[i32]) -> Result<f64> {
    if post_periods.is_empty() {
        return Err(Error::EmptyPostPeriods);
    }
    let mut total = 0.0;
    for &p in post_periods {
        match fit.gaps.get(&p) {
            Some(g) if p >= fit.first_treated_period => total += g,
            _ => return Err(Error::NotPostPeriod(p)),
        }
    }
    Ok(total / post_periods.len() as f64)
}
