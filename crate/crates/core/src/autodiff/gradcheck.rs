use super::tensor::Tensor;

/// Central-difference gradient of a scalar function:
/// `(f(x + eps·eᵢ) - f(x - eps·eᵢ)) / (2·eps)` for every element `i`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, eps: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Largest elementwise relative error `|a-b| / max(|a|, |b|, floor)`.
pub fn max_rel_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
