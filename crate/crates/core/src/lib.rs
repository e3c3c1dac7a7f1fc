//! Synthetic control and synthetic difference-in-differences estimators for
//! panels with a single treated unit.
//!
//! The crate is `no_std` (with `alloc`) and performs no IO. File formats,
//! configuration and the command line live in the `synthpanel` crate.

#![no_std]

extern crate alloc;

pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod inference;
pub mod optim;
pub mod panel;
pub mod rng;
pub mod scm;
pub mod sdid;
pub mod simplex;
pub mod simulate;
pub mod stats;

pub use diagnostics::{diagnose, DiagnosticsReport, HullCheck};
pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use inference::{
    confidence_interval, jackknife_se, mspe_ratio_test, placebo_se, DidEstimator, EffectEstimate,
    EffectEstimator, InferenceMethod, MspeRatioTest, PlaceboDistribution, ScmEstimator, SdidEstimator,
};
pub use panel::{build_panel, CovariateTransform, Exclusion, OutcomeKind, PanelDataset, Record};
pub use scm::{average_effect, scm_fit, PredictorSpec, PredictorWeighting, ScmFit, ScmOptions};
pub use sdid::{did_estimate, sdid_estimate, sdid_estimate_with, SdidFit, SdidOptions, TimeWeighting, UnitWeighting};
pub use simplex::{QpOptions, WeightVector};
pub use simulate::{generate_panel, hull_violation_panel, DgpConfig, SimulatedPanel};
