//! Dimension-dependent constants.

use std::f64::consts::PI;

/// Γ(n/2) for a positive integer n, by the integer / half-integer recursions.
pub fn gamma_half(n: usize) -> f64 {
    assert!(n >= 1, "gamma_half needs n >= 1");
    if n.is_multiple_of(2) {
        (1..n / 2).map(|k| k as f64).product()
    } else {
        // Γ(k + 1/2) = (k - 1/2)(k - 3/2)...(1/2)·√π
        let k = (n - 1) / 2;
        (0..k).map(|j| j as f64 + 0.5).product::<f64>() * PI.sqrt()
    }
}

/// Surface measure of the unit sphere S^{N-1} ⊂ R^N.
pub fn unit_sphere_measure(n_dim: usize) -> f64 {
    2.0 * PI.powf(n_dim as f64 / 2.0) / gamma_half(n_dim)
}

/// Normalization constant of the logarithmic Riesz kernel,
/// C_N = 1 / (2^{N-1} π^{N/2} Γ(N/2)).
pub fn riesz_log_constant(n_dim: usize) -> f64 {
    let n = n_dim as f64;
    1.0 / (2f64.powf(n - 1.0) * PI.powf(n / 2.0) * gamma_half(n_dim))
}

/// ∫_0^π sin^{N-2}θ dθ, the polar-angle weight of the spherical mean.
pub fn polar_weight_total(n_dim: usize) -> f64 {
    if n_dim == 1 {
        return 1.0;
    }
    PI.sqrt() * gamma_half(n_dim - 1) / gamma_half(n_dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_measures() {
        assert!((unit_sphere_measure(2) - 2.0 * PI).abs() < 1e-15);
        assert!((unit_sphere_measure(3) - 4.0 * PI).abs() < 1e-14);
        assert!((unit_sphere_measure(4) - 2.0 * PI * PI).abs() < 1e-13);
    }

    #[test]
    fn polar_weights() {
        assert!((polar_weight_total(2) - PI).abs() < 1e-15);
        assert!((polar_weight_total(3) - 2.0).abs() < 1e-15);
        assert!((polar_weight_total(4) - PI / 2.0).abs() < 1e-15);
    }
}
