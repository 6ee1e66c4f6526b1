//! Picture-level time error and time saving, in percent.

/// `|total − budget| / budget · 100`.
pub fn time_error_pct(total_real_ms: f64, pic_budget_ms: f64) -> f64 {
    (total_real_ms - pic_budget_ms).abs() / pic_budget_ms * 100.0
}

/// `(baseline − actual) / baseline · 100`. Negative when the run was slower.
pub fn time_saving_pct(baseline_ms: f64, actual_ms: f64) -> f64 {
    (baseline_ms - actual_ms) / baseline_ms * 100.0
}
