//! Central finite differences, the oracle for every analytic gradient.

use crate::error::Result;
use crate::network::{Network, ParamAddress};

/// `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, step: f64) -> f64 {
    assert!(step > 0.0, "finite-difference step must be positive");
    (f(x + step) - f(x - step)) / (2.0 * step)
}

/// Numeric derivative of `objective(network)` with respect to one scalar
/// parameter. The network is restored bit-for-bit afterwards.
pub fn finite_diff_grad<F>(net: &mut Network, objective: F, at: ParamAddress, step: f64) -> Result<f64>
where
    F: Fn(&Network) -> Result<f64>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let original = net.param_value(at);
    net.set_param_value(at, original + step);
    let plus = objective(net);
    net.set_param_value(at, original - step);
    let minus = objective(net);
    net.set_param_value(at, original);
    Ok((plus? - minus?) / (2.0 * step))
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_a_quadratic() {
        let d = central_difference(|p| p * p, 3.0, 1e-5);
        assert!((d - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_has_zero_slope() {
        assert_eq!(central_difference(|_| 4.2, 1.0, 1e-3), 0.0);
    }
}
