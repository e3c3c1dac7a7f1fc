use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("panel has no records")]
    EmptyPanel,
    #[error("unbalanced panel, missing cells: {}", format_cells(.0))]
    MissingCells(Vec<(String, i32)>),
    #[error("duplicate cell ({unit}, {period})")]
    DuplicateCell { unit: String, period: i32 },
    #[error("unit `{0}` appears twice")]
    DuplicateUnit(String),
    #[error("covariate `{covariate}` missing for ({unit}, {period})")]
    MissingCovariate {
        unit: String,
        period: i32,
        covariate: String,
    },
    #[error("non-finite value at ({unit}, {period})")]
    NonFinite { unit: String, period: i32 },
    #[error("treated unit `{0}` not found in records")]
    UnknownTreatedUnit(String),
    #[error("invalid first treated period {period}: {reason}")]
    InvalidTreatmentPeriod { period: i32, reason: &'static str },
    #[error("non-positive level {value} at ({unit}, {period}) cannot be a growth denominator")]
    NonPositiveLevel {
        unit: String,
        period: i32,
        value: f64,
    },
    #[error("outcome is already expressed as growth rates")]
    AlreadyGrowth,
    #[error("unit `{0}` is not in the panel")]
    UnknownUnit(String),
    #[error("the treated unit `{0}` cannot be excluded")]
    ExcludeTreated(String),
    #[error("covariate `{0}` is not in the panel")]
    UnknownCovariate(String),
    #[error("period {0} is not a pre-treatment period")]
    NotPrePeriod(i32),
    #[error("period {0} is not a post-treatment period")]
    NotPostPeriod(i32),
    #[error("no post-treatment periods given")]
    EmptyPostPeriods,
    #[error("every predictor row has zero variance")]
    NoPredictors,
    #[error("need at least {required} donor units, found {found}")]
    TooFewDonors { required: usize, found: usize },
    #[error("need at least {required} pre-treatment periods, found {found}")]
    TooFewPrePeriods { required: usize, found: usize },
    #[error("invalid weight vector: {0}")]
    InvalidWeights(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("weighted least squares system is singular")]
    SingularSystem,
}

fn format_cells(cells: &[(String, i32)]) -> String {
    let mut out = String::new();
    for (k, (unit, period)) in cells.iter().enumerate() {
        if k > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "({unit}, {period})");
    }
    out
}
