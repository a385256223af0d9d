/// Compares an analytic gradient against central finite differences.
///
/// `f` returns the value and the analytic gradient at a point. The result is
/// the largest discrepancy over coordinates, `|fd_i - g_i| / max(1e-8, |g_i|)`.
pub fn grad_check<F>(f: F, theta: &[f64], h: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, grad) = f(theta);
    assert_eq!(grad.len(), theta.len(), "gradient length differs from parameters");
    let mut x = theta.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        x[i] = theta[i] + h;
        let up = f(&x).0;
        x[i] = theta[i] - h;
        let down = f(&x).0;
        x[i] = theta[i];
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / grad[i].abs().max(1e-8));
    }
    worst
}
