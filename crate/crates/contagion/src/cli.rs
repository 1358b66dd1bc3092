//! Command-line pipelines (under construction).

/// Formats a float with 17 significant digits, locale-independent.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
