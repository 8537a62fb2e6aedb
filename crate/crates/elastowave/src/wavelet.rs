//! Source time functions.

use std::f64::consts::PI;

/// Ricker wavelet g(t) = (1 − 2π²ν₀²t²) exp(−π²ν₀²t²), unit peak at t = 0.
pub fn ricker(nu0: f64, t: f64) -> f64 {
    let a = (PI * nu0 * t) * (PI * nu0 * t);
    (1.0 - 2.0 * a) * (-a).exp()
}

/// Onset delay t₀ = 1.5/ν₀. Shifting the wavelet by this amount leaves
/// |g(0)| < 1e−8, so zero initial data is consistent with the source.
pub fn onset_delay(nu0: f64) -> f64 {
    1.5 / nu0
}

/// Ricker wavelet delayed so that it is effectively causal: peak at t₀.
pub fn delayed_ricker(nu0: f64, t: f64) -> f64 {
    ricker(nu0, t - onset_delay(nu0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn peak_and_symmetry() {
        assert_eq!(ricker(10.0, 0.0), 1.0);
        for &t in &[0.01, 0.03, 0.11] {
            assert_abs_diff_eq!(ricker(10.0, t), ricker(10.0, -t), epsilon = 1e-16);
            assert!(ricker(10.0, t) < 1.0);
        }
    }

    #[test]
    fn zero_crossing_location() {
        // g vanishes where 2π²ν₀²t² = 1
        let nu0 = 7.0;
        let t = 1.0 / (2.0_f64.sqrt() * PI * nu0);
        assert_abs_diff_eq!(ricker(nu0, t), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn delayed_start_is_negligible() {
        for &nu0 in &[5.0, 10.0, 25.0] {
            let g0 = delayed_ricker(nu0, 0.0);
            assert!(g0.abs() < 1e-8, "onset value {g0} too large");
            assert_abs_diff_eq!(delayed_ricker(nu0, onset_delay(nu0)), 1.0, epsilon = 1e-16);
        }
    }
}
