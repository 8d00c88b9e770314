//! Scalar distribution kernels for the normal, logistic and Student t families.

use crate::error::{Error, Result};
use statrs::distribution::{Continuous, ContinuousCDF, StudentsT};
use statrs::function::erf;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

pub fn norm_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal cdf through erfc (libm port, sub-ulp), accurate in both
/// tails.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Standard normal survival function 1 - Phi(z) without cancellation.
pub fn norm_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / SQRT_2)
}

/// Inverse standard normal cdf. Newton corrections on top of a ~1e-11 seed
/// keep the cdf round trip at machine precision.
pub fn norm_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "normal quantile requires p in (0,1), got {p}"
        )));
    }
    let mut z = -SQRT_2 * erf::erfc_inv(2.0 * p);
    if !z.is_finite() {
        // far-tail fallback seed
        let q = p.min(1.0 - p);
        z = -(-2.0 * q.ln()).sqrt() * (p - 0.5).signum() * -1.0;
    }
    for _ in 0..2 {
        let density = norm_pdf(z);
        if density <= 1e-300 {
            break;
        }
        let err = if z < 0.0 {
            norm_cdf(z) - p
        } else {
            // work on the survival side to preserve relative accuracy
            p + norm_sf(z) - 1.0
        };
        z -= err / density;
    }
    Ok(z)
}

pub fn logistic_cdf(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Logistic density written symmetrically so large |z| does not overflow.
pub fn logistic_pdf(z: f64) -> f64 {
    let e = (-z.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

pub fn logistic_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "logistic quantile requires p in (0,1), got {p}"
        )));
    }
    Ok((p / (1.0 - p)).ln())
}

fn student_t(nu: f64) -> Result<StudentsT> {
    StudentsT::new(0.0, 1.0, nu)
        .map_err(|e| Error::domain(format!("student t with {nu} degrees of freedom: {e}")))
}

pub fn student_t_cdf(z: f64, nu: f64) -> Result<f64> {
    Ok(student_t(nu)?.cdf(z))
}

pub fn student_t_pdf(z: f64, nu: f64) -> Result<f64> {
    Ok(student_t(nu)?.pdf(z))
}

pub fn student_t_quantile(p: f64, nu: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "student t quantile requires p in (0,1), got {p}"
        )));
    }
    Ok(student_t(nu)?.inverse_cdf(p))
}
