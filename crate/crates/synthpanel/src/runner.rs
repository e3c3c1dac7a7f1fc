//! The study pipeline: ingest, exclude, transform, diagnose, estimate,
//! infer, report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use synthpanel_core::{
    build_panel, diagnose, jackknife_se, mspe_ratio_test, placebo_se, scm_fit, scm::build_predictor_matrix,
    sdid_estimate_with, DiagnosticsReport, DidEstimator, EffectEstimate, EffectEstimator, Error as CoreError,
    Executor, OutcomeKind, PanelDataset, PredictorSpec, PredictorWeighting, ScmEstimator, ScmOptions, SdidEstimator,
    SdidFit, SdidOptions,
};

use crate::config::{DataSource, Estimator, InferenceChoice, OutcomeMode, StudyConfig};
use crate::csv_panel::parse_panel_csv_bytes;
use crate::error::{read_file, CoreResultExt, Result, Stage, StudyError};
use crate::eurostat::{parse_eurostat_str, select};
use crate::plot::{series_csv, series_svg};
use crate::report::{
    fmt_num, Diagnostics, EstimatorReport, HullRow, Inference, MspeTest, Provenance, SeriesRow, StudyInfo,
    StudyReport, ToolInfo, UnitNote,
};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A panel ready for estimation plus what happened on the way in.
#[derive(Debug, Clone)]
pub struct LoadedPanel {
    pub panel: PanelDataset,
    pub data_file: String,
    pub data_sha256: String,
    pub dropped: Vec<UnitNote>,
    pub warnings: Vec<String>,
}

pub fn load_panel(cfg: &StudyConfig) -> Result<LoadedPanel> {
    let path = &cfg.data.path;
    let bytes = read_file(Stage::Ingest, path)?;
    let in_file = |e: StudyError| StudyError { message: format!("{}: {}", path.display(), e.message), ..e };
    let mut dropped = Vec::new();
    let mut warnings = Vec::new();
    let records = match cfg.data.source {
        DataSource::Csv => parse_panel_csv_bytes(&bytes).map_err(in_file)?,
        DataSource::Eurostat => {
            let text = std::str::from_utf8(&bytes)
                .map_err(|e| StudyError::validation(Stage::Ingest, format!("{}: not UTF-8: {e}", path.display())))?;
            let table = parse_eurostat_str(text).map_err(in_file)?;
            let filter = cfg.data.eurostat.as_ref().ok_or_else(|| {
                StudyError::validation(Stage::Config, "data.eurostat is required for source = \"eurostat\"")
            })?;
            let selection = select(&table, filter)?;
            dropped.extend(selection.dropped.into_iter().map(|(unit, reason)| UnitNote { unit, reason }));
            warnings.extend(selection.warnings);
            selection.records
        }
    };

    let s = &cfg.study;
    let mut panel = build_panel(&records, &s.treated_unit, s.first_treated_period, OutcomeKind::Level).at(Stage::Ingest)?;
    for ex in &s.exclude {
        panel = panel.exclude_units(&[ex.unit.as_str()], &ex.reason).at(Stage::Transform)?;
    }
    if s.outcome_mode == OutcomeMode::GrowthPercent {
        panel = panel.growth_transform_with(s.covariate_transform.into()).at(Stage::Transform)?;
    }
    let data_file = path.file_name().map_or_else(|| path.display().to_string(), |f| f.to_string_lossy().into_owned());
    Ok(LoadedPanel { panel, data_file, data_sha256: sha256_hex(&bytes), dropped, warnings })
}

pub fn predictor_spec(cfg: &StudyConfig) -> PredictorSpec {
    PredictorSpec {
        outcome_periods: cfg.predictors.outcome_periods.clone(),
        covariates: cfg.predictors.covariates.clone(),
        standardize: cfg.predictors.standardize,
    }
}

pub fn scm_options(cfg: &StudyConfig) -> ScmOptions {
    ScmOptions {
        weighting: PredictorWeighting::Search {
            multistarts: cfg.estimation.multistarts,
            max_evaluations: cfg.estimation.max_evaluations,
        },
        seed: cfg.estimation.seed,
        ..ScmOptions::default()
    }
}

/// Output of `validate`: ingestion and diagnostics, no estimation.
#[derive(Debug, Clone)]
pub struct Validation {
    pub loaded: LoadedPanel,
    pub diagnostics: DiagnosticsReport,
    pub predictor_warnings: Vec<String>,
}

pub fn validate_study(cfg: &StudyConfig) -> Result<Validation> {
    let loaded = load_panel(cfg)?;
    let predictors = build_predictor_matrix(&loaded.panel, &predictor_spec(cfg)).at(Stage::Diagnose)?;
    let diagnostics = diagnose(&loaded.panel);
    Ok(Validation { loaded, diagnostics, predictor_warnings: predictors.warnings })
}

fn inference_entry(e: EffectEstimate) -> Inference {
    Inference {
        method: e.method.as_str().to_string(),
        se: e.se,
        ci_low: e.ci_low,
        ci_high: e.ci_high,
        level: e.level,
        replicates: e.replicates,
    }
}

fn run_inference<F: EffectEstimator + ?Sized, E: Executor>(
    panel: &PanelDataset,
    estimator: &F,
    choice: InferenceChoice,
    level: f64,
    exec: &E,
    warnings: &mut Vec<String>,
) -> Result<Vec<Inference>> {
    let mut out = Vec::new();
    if choice.placebo() {
        out.push(inference_entry(placebo_se(panel, estimator, level, exec).at(Stage::Inference)?));
    }
    if choice.jackknife() {
        match jackknife_se(panel, estimator, level, exec) {
            Ok(e) => out.push(inference_entry(e)),
            Err(e @ CoreError::TooFewDonors { .. }) if choice == InferenceChoice::Both => {
                warnings.push(format!("{}: jackknife skipped: {e}", estimator.name()));
            }
            Err(e) => return Err(StudyError::from_core(Stage::Inference, e)),
        }
    }
    Ok(out)
}

fn sdid_report(name: &str, fit: &SdidFit, with_zeta: bool, inference: Vec<Inference>) -> EstimatorReport {
    let series = fit.actual.iter().map(|(p, a)| SeriesRow::new(*p, *a, fit.synthetic[p])).collect::<Vec<_>>();
    let pre: Vec<f64> = series.iter().filter(|r| r.period < fit.first_treated_period).map(|r| r.gap).collect();
    let pre_rmspe = (pre.iter().map(|g| g * g).sum::<f64>() / pre.len().max(1) as f64).sqrt();
    EstimatorReport {
        estimator: name.to_string(),
        effect: fit.tau_hat,
        inference,
        pre_rmspe,
        donor_weights: fit.donors.iter().cloned().zip(fit.unit_weights.iter().copied()).collect(),
        predictor_weights: None,
        unit_intercept: Some(fit.unit_intercept),
        time_weights: fit
            .time_weights
            .as_ref()
            .map(|w| fit.pre_periods.iter().copied().zip(w.iter().copied()).collect()),
        time_intercept: fit.time_weights.as_ref().map(|_| fit.time_intercept),
        zeta: with_zeta.then_some(fit.zeta),
        mspe_test: None,
        series,
    }
}

pub fn run_study<E: Executor>(cfg: &StudyConfig, config_bytes: &[u8], exec: &E) -> Result<StudyReport> {
    let Validation { loaded, diagnostics: diag, predictor_warnings: _ } = validate_study(cfg)?;
    let panel = &loaded.panel;
    let spec = predictor_spec(cfg);
    let scm_opts = scm_options(cfg);
    let est = &cfg.estimation;
    let level = est.ci_level;

    let mut warnings = loaded.warnings.clone();
    warnings.extend(diag.warnings.iter().cloned());
    if !spec.covariates.is_empty() && est.estimators.iter().any(|e| *e != Estimator::Scm) {
        warnings.push("covariates enter the synthetic control only; sdid and did use outcomes alone".to_string());
    }

    let mut estimates = Vec::new();
    for kind in &est.estimators {
        let report = match kind {
            Estimator::Scm => {
                let fit = scm_fit(panel, &spec, &scm_opts, exec).at(Stage::Estimate)?;
                warnings.extend(fit.warnings.iter().map(|w| format!("scm: {w}")));
                let estimator = ScmEstimator { predictors: spec.clone(), options: scm_opts.clone() };
                let inference = run_inference(panel, &estimator, est.inference, level, exec, &mut warnings)?;
                let mspe_test = if est.mspe_test {
                    let t = mspe_ratio_test(panel, &spec, &scm_opts, exec).at(Stage::Inference)?;
                    warnings.extend(t.warnings.iter().cloned());
                    Some(MspeTest {
                        p_value: t.p_value,
                        rank: t.rank,
                        n_units: panel.n_units(),
                        ratios: t
                            .distribution
                            .mspe_ratios
                            .into_iter()
                            .map(|(u, r)| (u, r.is_finite().then_some(r)))
                            .collect(),
                        placebo_effects: t.distribution.placebo_effects,
                    })
                } else {
                    None
                };
                EstimatorReport {
                    estimator: "scm".to_string(),
                    effect: fit.average_post_effect(),
                    inference,
                    pre_rmspe: fit.pre_rmspe,
                    donor_weights: fit.donors.iter().cloned().zip(fit.donor_weights.iter().copied()).collect(),
                    predictor_weights: Some(
                        fit.predictor_labels.iter().cloned().zip(fit.predictor_weights.as_slice().iter().copied()).collect(),
                    ),
                    unit_intercept: None,
                    time_weights: None,
                    time_intercept: None,
                    zeta: None,
                    mspe_test,
                    series: fit.actual.iter().map(|(p, a)| SeriesRow::new(*p, *a, fit.synthetic[p])).collect(),
                }
            }
            Estimator::Sdid => {
                let estimator = SdidEstimator::default();
                let fit = sdid_estimate_with(panel, &estimator.options).at(Stage::Estimate)?;
                let inference = run_inference(panel, &estimator, est.inference, level, exec, &mut warnings)?;
                sdid_report("sdid", &fit, true, inference)
            }
            Estimator::Did => {
                let fit = sdid_estimate_with(panel, &SdidOptions::did()).at(Stage::Estimate)?;
                let inference = run_inference(panel, &DidEstimator, est.inference, level, exec, &mut warnings)?;
                sdid_report("did", &fit, false, inference)
            }
        };
        if !report.effect.is_finite() {
            return Err(StudyError::estimation(Stage::Estimate, format!("{}: non-finite effect", report.estimator)));
        }
        estimates.push(report);
    }

    let s = &cfg.study;
    Ok(StudyReport {
        tool: ToolInfo::current(),
        provenance: Provenance {
            config_sha256: sha256_hex(config_bytes),
            data_file: loaded.data_file.clone(),
            data_sha256: loaded.data_sha256.clone(),
            seed: est.seed,
        },
        study: StudyInfo {
            treated_unit: s.treated_unit.clone(),
            first_treated_period: s.first_treated_period,
            outcome_mode: match s.outcome_mode {
                OutcomeMode::Level => "level",
                OutcomeMode::GrowthPercent => "growth_percent",
            }
            .to_string(),
            donors: panel.donor_units().to_vec(),
            pre_periods: panel.pre_periods().to_vec(),
            post_periods: panel.post_periods().to_vec(),
            covariates: spec.covariates.clone(),
            ci_level: level,
            inference: match est.inference {
                InferenceChoice::Placebo => "placebo",
                InferenceChoice::Jackknife => "jackknife",
                InferenceChoice::Both => "both",
            }
            .to_string(),
        },
        diagnostics: Diagnostics {
            convex_hull_ok: diag.convex_hull_ok,
            hull: diag
                .hull
                .iter()
                .map(|h| HullRow { period: h.period, treated: h.treated, donor_min: h.donor_min, donor_max: h.donor_max, ok: h.ok })
                .collect(),
            pre_rmspe_equal_weights: diag.pre_rmspe,
            balance_ok: diag.balance_ok,
            n_donors: diag.n_donors,
            excluded_units: diag
                .excluded_units
                .iter()
                .map(|e| UnitNote { unit: e.unit.clone(), reason: e.reason.clone() })
                .collect(),
            dropped_units: loaded.dropped.clone(),
        },
        estimates,
        warnings,
    })
}

/// File name and contents, written together or not at all.
pub type OutputFile = (String, String);

pub fn plot_files(report: &StudyReport, svg: bool) -> Vec<OutputFile> {
    let mut files = Vec::new();
    for e in &report.estimates {
        files.push((format!("series_{}.csv", e.estimator), series_csv(&e.series)));
        if svg {
            files.push((
                format!("series_{}.svg", e.estimator),
                series_svg(e, &report.study.treated_unit, report.study.first_treated_period),
            ));
        }
    }
    files
}

pub fn report_files(report: &StudyReport, svg: bool) -> Vec<OutputFile> {
    let mut files = vec![("report.json".to_string(), report.to_json()), ("report.md".to_string(), report.to_markdown())];
    files.extend(plot_files(report, svg));
    files
}

#[derive(Serialize)]
struct PlaceboDump<'a> {
    estimator: &'a str,
    effect: f64,
    inference: &'a [Inference],
    mspe_test: &'a Option<MspeTest>,
}

/// Inference detail: `placebo.json` plus a flat `placebo.csv` with one row
/// per estimator, method and donor.
pub fn placebo_files(report: &StudyReport) -> Vec<OutputFile> {
    let dump: Vec<PlaceboDump> = report
        .estimates
        .iter()
        .map(|e| PlaceboDump { estimator: &e.estimator, effect: e.effect, inference: &e.inference, mspe_test: &e.mspe_test })
        .collect();
    let mut json = serde_json::to_string_pretty(&dump).unwrap_or_else(|e| unreachable!("dump serializes: {e}"));
    json.push('\n');
    let mut csv = String::from("estimator,method,unit,value\n");
    for e in &report.estimates {
        for inf in &e.inference {
            for (unit, v) in &inf.replicates {
                csv.push_str(&format!("{},{},{},{}\n", e.estimator, inf.method, unit, fmt_num(*v)));
            }
        }
        if let Some(t) = &e.mspe_test {
            for (unit, r) in &t.ratios {
                let v = r.map_or_else(|| "inf".to_string(), fmt_num);
                csv.push_str(&format!("{},mspe_ratio,{},{}\n", e.estimator, unit, v));
            }
        }
    }
    vec![("placebo.json".to_string(), json), ("placebo.csv".to_string(), csv)]
}

/// Stages every file in a temporary directory inside `dir`, then renames
/// them into place.
pub fn write_files(dir: &Path, files: &[OutputFile], stage: Stage) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| StudyError::io(stage, dir, e))?;
    let staging = tempfile::Builder::new()
        .prefix(".synthpanel-")
        .tempdir_in(dir)
        .map_err(|e| StudyError::io(stage, dir, e))?;
    for (name, contents) in files {
        let p = staging.path().join(name);
        std::fs::write(&p, contents).map_err(|e| StudyError::io(stage, &p, e))?;
    }
    let mut written = Vec::with_capacity(files.len());
    for (name, _) in files {
        let target = dir.join(name);
        std::fs::rename(staging.path().join(name), &target).map_err(|e| StudyError::io(stage, &target, e))?;
        written.push(target);
    }
    Ok(written)
}

/// Per-unit and per-period values for quick inspection in `validate`.
pub fn validation_summary(v: &Validation) -> String {
    let p = &v.loaded.panel;
    let d = &v.diagnostics;
    let mut out = format!(
        "panel: {} donors, treated {}, periods {}..={}, first treated period {}\n",
        p.n_donors(),
        p.treated_unit(),
        p.periods().first().copied().unwrap_or_default(),
        p.periods().last().copied().unwrap_or_default(),
        p.first_treated_period()
    );
    out.push_str(&format!("data sha256: {}\n", v.loaded.data_sha256));
    let flags: BTreeMap<i32, bool> = d.hull.iter().map(|h| (h.period, h.ok)).collect();
    out.push_str(&format!("convex hull ok: {} {:?}\n", d.convex_hull_ok, flags));
    for w in v.loaded.warnings.iter().chain(&d.warnings).chain(&v.predictor_warnings) {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}
