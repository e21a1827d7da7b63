/// Gradients smaller than this are compared on an absolute scale.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares an analytic gradient with central finite differences and returns
/// the worst relative error `|a − n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
///
/// `loss` must be deterministic in its argument.
pub fn grad_check<F>(mut loss: F, params: &[f64], analytic: &[f64], perturbation: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + perturbation;
        let up = loss(&p);
        p[i] = orig - perturbation;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * perturbation);
        let a = analytic[i];
        let scale = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max((a - numeric).abs() / scale);
    }
    worst
}
