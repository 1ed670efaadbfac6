//! Scalar error metrics for impedances and pressure fields.

use crate::{Complex, Error, Real, Result};

/// Reference pressure for sound pressure levels, Pa (RMS).
pub const P_REF: f64 = 2e-5;

/// Mean over frequencies of `|Z_est - Z_ref| / |Z_ref|`.
pub fn relative_l2<T: Real>(z_est: &[Complex<T>], z_ref: &[Complex<T>], freqs: &[T]) -> Result<T> {
    if z_est.is_empty() || z_est.len() != z_ref.len() {
        return Err(Error::Validation(format!(
            "relative_l2 needs equal non-empty sequences, got {} and {}",
            z_est.len(),
            z_ref.len()
        )));
    }
    let mut acc = T::zero();
    for (i, (e, r)) in z_est.iter().zip(z_ref).enumerate() {
        let nr = r.norm();
        if nr == T::zero() {
            let f = freqs.get(i).map_or(String::from("?"), |f| format!("{f:?}"));
            return Err(Error::Domain(format!("reference impedance is zero at {f} Hz")));
        }
        acc = acc + (e - r).norm() / nr;
    }
    Ok(acc / T::from_usize(z_est.len()).unwrap())
}

/// Modal assurance criterion `|a^H b|^2 / ((a^H a)(b^H b))`.
pub fn mac<T: Real>(p_ref: &[Complex<T>], p_est: &[Complex<T>]) -> Result<T> {
    if p_ref.is_empty() || p_ref.len() != p_est.len() {
        return Err(Error::Validation(format!(
            "mac needs equal non-empty vectors, got {} and {}",
            p_ref.len(),
            p_est.len()
        )));
    }
    let mut cross = Complex::new(T::zero(), T::zero());
    let (mut na, mut nb) = (T::zero(), T::zero());
    for (a, b) in p_ref.iter().zip(p_est) {
        cross = cross + a.conj() * b;
        na = na + a.norm_sqr();
        nb = nb + b.norm_sqr();
    }
    if na == T::zero() || nb == T::zero() {
        return Err(Error::Domain("mac of a zero-norm field".into()));
    }
    Ok((cross.norm_sqr() / (na * nb)).min(T::one()))
}

/// Sound pressure level in dB of a peak complex amplitude; `-inf` for zero.
pub fn spl<T: Real>(p: Complex<T>) -> T {
    let mag = p.norm();
    if mag == T::zero() {
        return T::neg_infinity();
    }
    T::lit(20.0) * (mag / (T::SQRT_2() * T::lit(P_REF))).log10()
}

/// SPL of a real magnitude.
pub fn spl_of_magnitude(mag: f64) -> f64 {
    spl(Complex::new(mag, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::C64;
    use proptest::prelude::*;

    #[test]
    fn relative_l2_examples() {
        let r = vec![C64::new(1.0, -2.0), C64::new(0.5, 0.3)];
        let f = [100.0, 200.0];
        assert_eq!(relative_l2(&r, &r, &f).unwrap(), 0.0);
        let scaled: Vec<C64> = r.iter().map(|z| z * 1.1).collect();
        assert!((relative_l2(&scaled, &r, &f).unwrap() - 0.1).abs() < 1e-12);
        let zero = vec![C64::new(0.0, 0.0); 2];
        assert!((relative_l2(&zero, &r, &f).unwrap() - 1.0).abs() < 1e-15);
        let err = relative_l2(&r, &zero, &f).unwrap_err();
        assert!(err.to_string().contains("100"));
    }

    #[test]
    fn mac_examples() {
        let a = vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
        let b = vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)];
        assert_eq!(mac(&a, &b).unwrap(), 0.0);
        let c = vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)];
        assert!((mac(&a, &c).unwrap() - 0.5).abs() < 1e-15);
        let s = C64::from_polar(2.0, std::f64::consts::FRAC_PI_3);
        let v = vec![C64::new(0.3, -1.0), C64::new(2.0, 0.5), C64::new(-0.7, 0.1)];
        let sv: Vec<C64> = v.iter().map(|x| x * s).collect();
        assert!((mac(&v, &sv).unwrap() - 1.0).abs() < 1e-12);
        assert!(mac(&a, &vec![C64::new(0.0, 0.0); 2]).is_err());
    }

    #[test]
    fn spl_examples() {
        let r = std::f64::consts::SQRT_2 * 2e-5;
        assert!(spl(C64::new(r, 0.0)).abs() < 1e-12);
        assert!((spl(C64::new(10.0 * r, 0.0)) - 20.0).abs() < 1e-12);
        assert!((spl(C64::new(0.0, 1.0)) - 90.97).abs() < 0.005);
        assert_eq!(spl(C64::new(0.0, 0.0)), f64::NEG_INFINITY);
        assert!((spl(num_complex::Complex32::new(1.0, 0.0)) - 90.97).abs() < 0.01);
    }

    fn cvec(n: usize) -> impl Strategy<Value = Vec<C64>> {
        prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64).prop_map(|(a, b)| C64::new(a, b)), n)
    }

    proptest! {
        #[test]
        fn mac_bounded_and_scale_invariant(a in cvec(6), b in cvec(6), s in (0.1..4.0f64, -3.0..3.0f64), t in (0.1..4.0f64, -3.0..3.0f64)) {
            let na: f64 = a.iter().map(|v| v.norm_sqr()).sum();
            let nb: f64 = b.iter().map(|v| v.norm_sqr()).sum();
            prop_assume!(na > 1e-6 && nb > 1e-6);
            let m = mac(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&m));
            let sa: Vec<C64> = a.iter().map(|v| v * C64::from_polar(s.0, s.1)).collect();
            let tb: Vec<C64> = b.iter().map(|v| v * C64::from_polar(t.0, t.1)).collect();
            prop_assert!((mac(&sa, &tb).unwrap() - m).abs() < 1e-12);
        }

        #[test]
        fn relative_l2_homogeneous(r in cvec(5), d in cvec(5), s in 0.0..5.0f64) {
            prop_assume!(r.iter().all(|v| v.norm() > 1e-3));
            let f = [1.0; 5];
            let est: Vec<C64> = r.iter().zip(&d).map(|(a, b)| a + b).collect();
            let est_s: Vec<C64> = r.iter().zip(&d).map(|(a, b)| a + b * s).collect();
            let e1 = relative_l2(&est, &r, &f).unwrap();
            let es = relative_l2(&est_s, &r, &f).unwrap();
            prop_assert!((es - s * e1).abs() < 1e-9 * (1.0 + s * e1));
        }
    }
}
