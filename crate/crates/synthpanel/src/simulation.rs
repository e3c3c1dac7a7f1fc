//! Monte-Carlo harness: one row per seed and estimator, plus a summary.

use synthpanel_core::simulate::{run_replications, summarize, CoverageSummary, ReplicationRow};
use synthpanel_core::{DidEstimator, EffectEstimator, Executor, ScmEstimator, SdidEstimator};

use crate::config::{Estimator, SimulationConfig};
use crate::error::{CoreResultExt, Result, Stage};
use crate::report::fmt_num;
use crate::runner::OutputFile;

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub rows: Vec<ReplicationRow>,
    pub summary: Vec<CoverageSummary>,
}

pub fn run_simulation<E: Executor>(cfg: &SimulationConfig, exec: &E) -> Result<SimulationOutput> {
    let sim = &cfg.simulation;
    let seeds: Vec<u64> = (0..sim.replications as u64).map(|r| sim.first_seed.wrapping_add(r)).collect();
    let scm = ScmEstimator { predictors: Default::default(), options: Default::default() };
    let sdid = SdidEstimator::default();
    let estimators: Vec<&dyn EffectEstimator> = sim
        .estimators
        .iter()
        .map(|e| -> &dyn EffectEstimator {
            match e {
                Estimator::Scm => &scm,
                Estimator::Sdid => &sdid,
                Estimator::Did => &DidEstimator,
            }
        })
        .collect();
    let rows = run_replications(&cfg.dgp.to_dgp(sim.first_seed), &seeds, &estimators, sim.ci_level, exec)
        .at(Stage::Simulate)?;
    let summary = summarize(&rows);
    Ok(SimulationOutput { rows, summary })
}

pub fn replications_csv(rows: &[ReplicationRow]) -> String {
    let mut out = String::from("seed,estimator,true_tau,tau_hat,se,ci_low,ci_high,covered\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.seed,
            r.estimator,
            fmt_num(r.true_tau),
            fmt_num(r.tau_hat),
            fmt_num(r.se),
            fmt_num(r.ci_low),
            fmt_num(r.ci_high),
            r.covered
        ));
    }
    out
}

pub fn summary_csv(summary: &[CoverageSummary]) -> String {
    let mut out = String::from("estimator,replications,coverage,mean_tau_hat,bias,monte_carlo_se,mean_se\n");
    for s in summary {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.estimator,
            s.replications,
            fmt_num(s.coverage),
            fmt_num(s.mean_tau_hat),
            fmt_num(s.bias),
            fmt_num(s.monte_carlo_se),
            fmt_num(s.mean_se)
        ));
    }
    out
}

pub fn simulation_files(out: &SimulationOutput) -> Vec<OutputFile> {
    vec![
        ("replications.csv".to_string(), replications_csv(&out.rows)),
        ("summary.csv".to_string(), summary_csv(&out.summary)),
    ]
}
