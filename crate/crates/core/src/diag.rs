//! Search diagnostics: the dominant Hessian eigenvalue of a loss with respect
//! to architecture parameters, and Pearson correlation between series.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config, CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenEstimate {
    /// Magnitude of the dominant eigenvalue.
    pub value: f64,
    /// Rayleigh quotient at the final iterate; carries the sign.
    pub rayleigh: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Finite-difference step used for Hessian-vector products at `theta`.
pub fn hvp_epsilon(theta: &[f64]) -> f64 {
    1e-3 * norm(theta).max(1.0)
}

/// `(∇L(θ + εv) − ∇L(θ − εv)) / 2ε`.
pub fn hvp<F>(grad: &mut F, theta: &[f64], v: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let shifted = |s: f64| theta.iter().zip(v).map(|(t, d)| t + s * d).collect::<Vec<_>>();
    let up = grad(&shifted(eps))?;
    let down = grad(&shifted(-eps))?;
    if up.len() != theta.len() || down.len() != theta.len() {
        return config(format!("gradient of length {} for {} parameters", up.len(), theta.len()));
    }
    let out: Vec<f64> = up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::Numerical("non-finite Hessian-vector product".into()));
    }
    Ok(out)
}

/// Power iteration on finite-difference Hessian-vector products from a
/// seeded random start. The estimate is `‖Hv‖` for unit `v`, which tends to
/// the largest |eigenvalue| even when that magnitude is shared by a positive
/// and a negative eigenvalue. Stops when the residual `‖Hv − ρv‖` or the
/// change between iterates drops below `tol · max(|λ|, 1)`.
pub fn hessian_max_eigenvalue<F>(mut grad: F, theta: &[f64], iters: usize, tol: f64, seed: u64) -> Result<EigenEstimate>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let m = theta.len();
    if m == 0 {
        return config("no architecture parameters to differentiate");
    }
    if iters == 0 {
        return config("power iteration needs at least one iteration");
    }
    let eps = hvp_epsilon(theta);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    let mut prev: Option<f64> = None;
    let mut est = EigenEstimate {
        value: 0.0,
        rayleigh: 0.0,
        iterations: 0,
        converged: false,
    };
    for it in 1..=iters {
        let hv = hvp(&mut grad, theta, &v, eps)?;
        let lambda = norm(&hv);
        let rho: f64 = hv.iter().zip(&v).map(|(a, b)| a * b).sum();
        let residual = norm(&hv.iter().zip(&v).map(|(a, b)| a - rho * b).collect::<Vec<_>>());
        let scale = lambda.max(1.0);
        est = EigenEstimate {
            value: lambda,
            rayleigh: rho,
            iterations: it,
            converged: false,
        };
        if residual <= tol * scale || prev.is_some_and(|p| (lambda - p).abs() < tol * scale) {
            est.converged = true;
            break;
        }
        if lambda == 0.0 {
            // v lies in the null space; zero is the answer only if H is zero,
            // which a fresh direction would not change.
            est.converged = true;
            break;
        }
        v = hv.iter().map(|x| x / lambda).collect();
        prev = Some(lambda);
    }
    Ok(est)
}

/// Product-moment correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return config(format!("series lengths differ: {} and {}", xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return config("correlation needs at least two points");
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    for (name, s) in [("xs", sxx), ("ys", syy)] {
        if s <= 0.0 {
            return Err(CoreError::Numerical(format!("series {name} has zero variance")));
        }
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
