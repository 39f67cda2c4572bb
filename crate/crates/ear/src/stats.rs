use ear_core::eval::paired_t_statistic;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p_value: f64,
}

/// Paired two-sided t-test of `a − b`. `None` below two pairs or when the
/// differences are constant (the statistic is then degenerate).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Option<TTest> {
    let (t, df) = paired_t_statistic(a, b).ok()?;
    if !t.is_finite() {
        return None;
    }
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    let p_value = (2.0 * dist.sf(t.abs())).min(1.0);
    Some(TTest { t, df, p_value })
}
