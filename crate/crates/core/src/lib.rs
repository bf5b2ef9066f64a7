//! Detection of covariate shift and concept drift in tabular data.
//!
//! * [`scan`]: fast generalized subset scan over empirical p-value ranges
//!   ([`baseline`]) to find records whose feature distribution has shifted.
//! * [`forest`]: honest causal forests estimating the per-record change in
//!   outcome probability between a control and a treatment period.
//! * [`simulate`]: demand-shock simulator producing datasets with known shift.
//! * [`monitor`]: windowed pipeline that confirms a persistent shift with the
//!   scanner and then hands the shifted data to the forest.

pub mod baseline;
pub mod data;
pub mod error;
pub mod forest;
pub mod monitor;
pub mod report;
pub mod rng;
pub mod scan;
pub mod simulate;

pub use baseline::{
    build_prange_matrix, fit_baseline, fit_baseline_with, p_range, significance_weight, BaselineModel,
    CategoryOrder, PRange, PRangeMatrix,
};
pub use data::{
    apply_bins, fit_quartile_bins, load_table, split_by_timestamp, Attribute, AttributeKind, AttributeRole,
    DiscretizationSpec, ObservationTable, Schema, Value,
};
pub use error::{Error, Result};
pub use forest::{
    assemble_treatment_data, classify_dataset, fit_forest, predict_cate, CateEstimate, Classification,
    EffectLabel, ForestModel, ForestParams, TreatmentDataset, VarianceCorrection,
};
pub use simulate::{
    generate_dataset, leak_split, sample_price, sim_schema, simulate_arrivals, simulate_choice, ChoiceParams,
    FlightConfig, IntensityFunction, LeakSplit, Scenario,
};
pub use monitor::{
    maybe_train_forest, process_window, run_pipeline, FrozenBaseline, MonitorConfig, MonitorState, Phase,
    PipelineReport, WindowReport,
};
pub use report::{emit_histograms, FeatureHistogram, ReportBundle};
pub use scan::{
    alpha_grid, berk_jones, best_attributes_given, best_records_given, flag_shifted_records,
    randomization_test, scan, score_subset, FlagOutcome, NullModel, ScanConfig, ScanResult, ShiftLabel, Subset,
    WeightMode,
};
