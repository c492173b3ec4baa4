//! Hierarchy operators on the mass grid, the explicit finite-system solution
//! and the truncated series for the rescaled limit hierarchy.

mod duhamel;
mod explicit;
mod operators;

pub use duhamel::{
    default_n_max, duhamel_series, duhamel_windowed, hierarchy_report, tail_bound, window_length,
    write_hierarchy_report_csv, HierarchyReportConfig, HierarchyReportRow, HierarchyTruncation, SeriesEvaluation,
    DEFAULT_TAIL_TOLERANCE, DEFAULT_WINDOW_TERMS, MAX_SERIES_DEPTH,
};
pub use explicit::{
    correlation_from_pn, explicit_pn_solution, explicit_pn_trajectory, hierarchy_residual, FiniteSystemState,
    DEFAULT_SUBSTEPS, MAX_EXPLICIT_N0,
};
pub use operators::{gain_operator, w_operator, Gain};
