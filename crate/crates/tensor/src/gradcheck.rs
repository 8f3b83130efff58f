//! Central finite differences, used as the oracle for [`crate::Tape::backward`].

use crate::error::TensorError;

/// `(f(x + εeᵢ) − f(x − εeᵢ)) / 2ε` for every coordinate `i`.
pub fn finite_diff_gradient<E>(
    mut f: impl FnMut(&[f64]) -> std::result::Result<f64, E>,
    point: &[f64],
    epsilon: f64,
) -> std::result::Result<Vec<f64>, E>
where
    E: From<TensorError>,
{
    if !(epsilon > 0.0) {
        return Err(TensorError::Invalid {
            op: "finite_diff_gradient",
            detail: format!("epsilon must be > 0, got {epsilon}"),
        }
        .into());
    }
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + epsilon;
        let up = f(&x)?;
        x[i] = orig - epsilon;
        let down = f(&x)?;
        x[i] = orig;
        grad.push((up - down) / (2.0 * epsilon));
    }
    Ok(grad)
}

/// Largest `|a − b| / max(|a|, |b|, floor)` over paired entries.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
