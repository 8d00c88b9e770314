//! Latent-margin link families behind a common trait, selected by name.
//!
//! The regression code only ever sees `dyn Link`, so families are
//! interchangeable at runtime. `link_by_name` is the registry the CLI and
//! config layers use.

use crate::error::{Error, Result};
use crate::gauss;
use std::sync::Arc;

/// Cdf family for the latent margin of the ordinal model.
pub trait Link: Send + Sync {
    fn name(&self) -> &'static str;
    fn cdf(&self, z: f64) -> f64;
    fn pdf(&self, z: f64) -> f64;
    /// Inverse cdf; p must lie in (0, 1).
    fn quantile(&self, p: f64) -> Result<f64>;
    /// Normal score of a cutpoint: Phi^-1(F(z)). The probit family overrides
    /// this with the identity so repeated transforms cannot drift.
    fn gauss_z(&self, z: f64) -> f64 {
        let p = self.cdf(z);
        if p <= 0.0 {
            f64::NEG_INFINITY
        } else if p >= 1.0 {
            f64::INFINITY
        } else {
            gauss::norm_quantile(p).expect("p in (0,1)")
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Probit;

impl Link for Probit {
    fn name(&self) -> &'static str {
        "probit"
    }
    fn cdf(&self, z: f64) -> f64 {
        gauss::norm_cdf(z)
    }
    fn pdf(&self, z: f64) -> f64 {
        gauss::norm_pdf(z)
    }
    fn quantile(&self, p: f64) -> Result<f64> {
        gauss::norm_quantile(p)
    }
    fn gauss_z(&self, z: f64) -> f64 {
        z
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Logit;

impl Link for Logit {
    fn name(&self) -> &'static str {
        "logit"
    }
    fn cdf(&self, z: f64) -> f64 {
        gauss::logistic_cdf(z)
    }
    fn pdf(&self, z: f64) -> f64 {
        gauss::logistic_pdf(z)
    }
    fn quantile(&self, p: f64) -> Result<f64> {
        gauss::logistic_quantile(p)
    }
}

/// Student t margin; mostly of interest for sensitivity checks.
#[derive(Debug, Clone, Copy)]
pub struct StudentT {
    nu: f64,
}

impl StudentT {
    pub fn new(nu: f64) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::domain(format!(
                "student t link needs positive degrees of freedom, got {nu}"
            )));
        }
        Ok(StudentT { nu })
    }
    pub fn nu(&self) -> f64 {
        self.nu
    }
}

impl Link for StudentT {
    fn name(&self) -> &'static str {
        "student_t"
    }
    fn cdf(&self, z: f64) -> f64 {
        gauss::student_t_cdf(z, self.nu).expect("nu validated")
    }
    fn pdf(&self, z: f64) -> f64 {
        gauss::student_t_pdf(z, self.nu).expect("nu validated")
    }
    fn quantile(&self, p: f64) -> Result<f64> {
        gauss::student_t_quantile(p, self.nu)
    }
}

/// Registry lookup for the link families exposed to configuration.
pub fn link_by_name(name: &str) -> Result<Arc<dyn Link>> {
    match name {
        "probit" => Ok(Arc::new(Probit)),
        "logit" => Ok(Arc::new(Logit)),
        _ => Err(Error::UnknownName {
            kind: "link",
            name: name.to_string(),
            available: "probit, logit",
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn registry_resolves_known_names_only() {
        assert_eq!(link_by_name("probit").unwrap().name(), "probit");
        assert_eq!(link_by_name("logit").unwrap().name(), "logit");
        assert!(link_by_name("cloglog").is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        let links: Vec<Arc<dyn Link>> = vec![
            Arc::new(Probit),
            Arc::new(Logit),
            Arc::new(StudentT::new(5.0).unwrap()),
        ];
        for link in links {
            for &p in &[0.01, 0.2, 0.5, 0.8, 0.99] {
                let z = link.quantile(p).unwrap();
                assert_abs_diff_eq!(link.cdf(z), p, epsilon = 1e-8);
            }
            assert!(link.quantile(0.0).is_err());
            assert!(link.quantile(1.0).is_err());
        }
    }

    #[test]
    fn gauss_z_agrees_with_direct_transform() {
        let logit = Logit;
        for &z in &[-3.0, -0.5, 0.0, 1.2, 4.0] {
            let direct = gauss::norm_quantile(logit.cdf(z)).unwrap();
            assert_abs_diff_eq!(logit.gauss_z(z), direct, epsilon = 1e-10);
        }
        let probit = Probit;
        assert_eq!(probit.gauss_z(1.7), 1.7);
        assert_eq!(probit.gauss_z(f64::NEG_INFINITY), f64::NEG_INFINITY);
    }
}
