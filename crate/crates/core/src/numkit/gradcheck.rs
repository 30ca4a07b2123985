use super::Rng;

/// Parameters above this count are checked on a seeded subsample.
pub const FULL_CHECK_LIMIT: usize = 10_000;
const SUBSAMPLE: usize = 1_000;

/// Denominator floor of the relative error. Gradient entries smaller than
/// this are effectively compared on absolute error `< tol · REL_FLOOR`, which
/// keeps round-off in `f(θ ± h)` from dominating near-zero components.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares an analytic gradient against central differences of `loss`.
pub fn grad_check<F>(mut loss: F, params: &[f64], analytic: &[f64], h: f64, rng: &mut Rng) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient shape must match parameters");
    let indices: Vec<usize> = if params.len() > FULL_CHECK_LIMIT {
        (0..SUBSAMPLE).map(|_| rng.index(params.len())).collect()
    } else {
        (0..params.len()).collect()
    };
    let mut theta = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: indices.len(),
    };
    for &i in &indices {
        let orig = theta[i];
        theta[i] = orig + h;
        let plus = loss(&theta);
        theta[i] = orig - h;
        let minus = loss(&theta);
        theta[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        if err.is_nan() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
            if err.is_nan() {
                break;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let mut rng = Rng::new(0);
        let r = grad_check(|p| 0.5 * p[0] * p[0], &[3.0], &[3.0], 1e-6, &mut rng);
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_reported() {
        let mut rng = Rng::new(0);
        let r = grad_check(|p| p[0] * p[1], &[2.0, 5.0], &[5.0, 1.0], 1e-6, &mut rng);
        assert_eq!(r.worst_index, 1);
        assert!(r.max_rel_error > 0.5);
    }

    #[test]
    fn large_parameter_vectors_are_subsampled() {
        let mut rng = Rng::new(0);
        let p = vec![1.0; FULL_CHECK_LIMIT + 1];
        let r = grad_check(|p| p.iter().sum(), &p, &vec![1.0; p.len()], 1e-6, &mut rng);
        assert_eq!(r.checked, SUBSAMPLE);
    }

    #[test]
    fn nan_numeric_counts_as_failure() {
        let mut rng = Rng::new(0);
        let r = grad_check(|_| f64::NAN, &[1.0], &[1.0], 1e-6, &mut rng);
        assert!(r.max_rel_error.is_nan());
    }
}
