//! Panel VAR estimation with external-instrument identification, impulse
//! responses and weak-instrument-robust confidence sets.

pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod inference;
pub mod irf;
pub mod iv;
pub mod lagselect;
pub mod linalg;
pub mod montecarlo;
pub mod panel;
pub mod pvar;
pub mod stats;
pub mod swilk;

pub use error::{PvarError, Result};
pub use exec::Exec;
pub use inference::{
    ar_confidence_set, irf_bands, plug_in_confidence_set, variance_lambda, ArProblem,
    ConfidenceSet, DerivativeMethod, GridSpec, InferenceOptions, IrfMoments, Target,
};
pub use irf::{cumulative, irf_point, IrfBands, IrfResult, DEFAULT_SHOCK_SIZE};
pub use iv::{
    ar_statistic_point, first_stage, identify, iv_ratio, reduced_form, FirstStage,
    IdentifyOptions, IvEstimate, Normalization, StructuralColumn, VarianceMode,
};
pub use lagselect::{select_lag, LagSelectionReport};
pub use montecarlo::{coverage_experiment, McConfig, McReport};
pub use panel::{
    build_instrument, growth_transform, load_csv, read_csv, CsvSchema, GrowthSpec,
    InstrumentMode, InstrumentSeries, PanelDataset,
};
pub use pvar::{fit_pvar, fit_pvar_with, FitOptions, PvarModel};
