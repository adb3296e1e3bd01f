//! Central finite differences, used as the independent oracle for the tape.

use super::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every coordinate.
///
/// `f` must be deterministic: callers disable dropout and pin any RNG
/// before handing the closure over.
pub fn finite_difference_gradient<F>(mut f: F, x: &Tensor, epsilon: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut probe = x.clone();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + epsilon;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - epsilon;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad[i] = (plus - minus) / (2.0 * epsilon);
    }
    Tensor::new(x.shape().to_vec(), grad).expect("same shape as input")
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
