//! Post-hoc analysis of PPO curves and reward-model calibration.

mod calibration;
mod curve;
mod overopt;

pub use calibration::{
    bin_index, calibration_from_predictions, calibration_report, predicted_preference,
    predicted_preferences, CalibrationBin, CalibrationReport, DEFAULT_BINS,
};
pub use curve::{
    curve_to_csv, read_curve_csv, split_runs, write_curve_csv, CurvePoint, CurveWriter,
    CURVE_COLUMNS,
};
pub use overopt::{
    aggregate_runs, aggregate_runs_on_grid, common_kl_grid, overopt_stats, smooth3,
    smoothed_gold_range, AggregatedCurve, OveroptStats, DEFAULT_GRID_POINTS,
};
