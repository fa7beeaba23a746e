use std::f64::consts::FRAC_PI_2;

use crate::error::FieldError;

/// Complete elliptic integrals (K(m), E(m)) of parameter m = k^2, by the
/// arithmetic-geometric mean.
pub fn complete_elliptic_pair(m: f64) -> Result<(f64, f64), FieldError> {
    if !(0.0..1.0).contains(&m) {
        return Err(FieldError::EllipticDomain(m));
    }
    let mut a = 1.0_f64;
    let mut b = (1.0 - m).sqrt();
    // E = K (1 - sum 2^(n-1) c_n^2), with c_0^2 = m
    let mut sum = 0.5 * m;
    let mut weight = 0.5;
    for _ in 0..32 {
        let c = 0.5 * (a - b);
        let next = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = next;
        weight *= 2.0;
        sum += weight * c * c;
        if c.abs() <= 1e-17 * a {
            break;
        }
    }
    let k = FRAC_PI_2 / a;
    Ok((k, k * (1.0 - sum)))
}

/// E(m) on the closed interval [0, 1], with E(1) = 1.
pub fn elliptic_e(m: f64) -> Result<f64, FieldError> {
    if m == 1.0 {
        return Ok(1.0);
    }
    complete_elliptic_pair(m).map(|(_, e)| e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn m_zero() {
        let (k, e) = complete_elliptic_pair(0.0).unwrap();
        assert_eq!(k, FRAC_PI_2);
        assert_eq!(e, FRAC_PI_2);
    }

    #[test]
    fn e_tends_to_one() {
        let (_, e) = complete_elliptic_pair(1.0 - 1e-12).unwrap();
        assert!((e - 1.0).abs() < 1e-10);
        assert_eq!(elliptic_e(1.0).unwrap(), 1.0);
    }

    #[test]
    fn reference_values() {
        // K(0.5), E(0.5) to 17 digits (Abramowitz & Stegun table 17.1)
        let (k, e) = complete_elliptic_pair(0.5).unwrap();
        assert_relative_eq!(k, 1.854_074_677_301_372, max_relative = 1e-15);
        assert_relative_eq!(e, 1.350_643_881_047_675_5, max_relative = 1e-15);
    }

    #[test]
    fn legendre_relation() {
        for m in [0.1, 0.5, 0.9] {
            let (k, e) = complete_elliptic_pair(m).unwrap();
            let (kc, ec) = complete_elliptic_pair(1.0 - m).unwrap();
            let lhs = e * kc + ec * k - k * kc;
            assert!((lhs - FRAC_PI_2).abs() < 1e-12, "m = {m}: {lhs}");
        }
    }

    #[test]
    fn domain() {
        assert!(complete_elliptic_pair(-0.1).is_err());
        assert!(complete_elliptic_pair(1.0).is_err());
        assert!(complete_elliptic_pair(f64::NAN).is_err());
    }
}
