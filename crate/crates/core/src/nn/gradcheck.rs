/// Central-difference gradient check. Returns the largest
/// `|a - n| / (|a| + |n| + 1e-12)` over all coordinates.
pub fn grad_check(loss: &dyn Fn(&[f64]) -> f64, analytic: &[f64], params: &[f64], eps: f64) -> f64 {
    assert_eq!(analytic.len(), params.len(), "gradient length mismatch");
    let mut x = params.to_vec();
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        let orig = x[k];
        x[k] = orig + eps;
        let up = loss(&x);
        x[k] = orig - eps;
        let down = loss(&x);
        x[k] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[k];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        worst = worst.max(rel);
    }
    worst
}
