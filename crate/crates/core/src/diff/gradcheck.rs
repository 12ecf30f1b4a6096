/// Denominator floor for relative errors; keeps coordinates whose true
/// gradient is (near) zero from dominating the report.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: Option<usize>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the analytic gradient returned by `f` against central
/// differences `(f(θ+ε) - f(θ-ε)) / 2ε` on every coordinate.
pub fn grad_check<F>(f: F, theta: &[f64], eps: f64, tol: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let coords: Vec<usize> = (0..theta.len()).collect();
    grad_check_coords(f, theta, &coords, eps, tol)
}

/// As [`grad_check`], restricted to `coords`.
pub fn grad_check_coords<F>(mut f: F, theta: &[f64], coords: &[usize], eps: f64, tol: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(theta);
    assert_eq!(analytic.len(), theta.len(), "gradient length must match parameters");
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        tolerance: tol,
        passed: true,
    };
    let mut probe = theta.to_vec();
    for &i in coords {
        probe[i] = theta[i] + eps;
        let (plus, _) = f(&probe);
        probe[i] = theta[i] - eps;
        let (minus, _) = f(&probe);
        probe[i] = theta[i];
        let numeric = (plus - minus) / (2.0 * eps);
        let abs = (numeric - analytic[i]).abs();
        let rel = abs / numeric.abs().max(analytic[i].abs()).max(REL_ERROR_FLOOR);
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
            report.analytic_at_worst = analytic[i];
            report.numeric_at_worst = numeric;
        }
    }
    report.passed = report.max_rel_error < tol;
    report
}
