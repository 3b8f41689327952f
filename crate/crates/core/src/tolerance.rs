//! Floating-point policy shared by every inequality check.

/// Relative slack applied to the right-hand side of `lhs <= rhs`.
pub const REL_SLACK: f64 = 1e-12;
/// Absolute slack applied to the right-hand side of `lhs <= rhs`.
pub const ABS_SLACK: f64 = 1e-12;

/// Returns `true` when `lhs <= rhs` is violated beyond round-off.
///
/// Slack is `1e-12 * |rhs| + 1e-12`. Non-finite operands always count as a
/// violation.
pub fn violates(lhs: f64, rhs: f64) -> bool {
    if !lhs.is_finite() || !rhs.is_finite() {
        return true;
    }
    lhs > rhs + REL_SLACK * rhs.abs() + ABS_SLACK
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equality_is_not_a_violation() {
        assert!(!violates(2.0, 2.0));
        assert!(!violates(-7.0, -7.0));
        assert!(!violates(2.0 + 1e-13, 2.0));
    }

    #[test]
    fn clear_violations() {
        assert!(violates(100.0, 11.0));
        assert!(violates(-7.0, -10.0));
        assert!(violates(f64::NAN, 1.0));
        assert!(violates(0.0, f64::INFINITY));
    }
}
