//! Copula samplers used as simulation truths. Each sampler draws one
//! cluster-length vector of dependent uniform(0,1) coordinates; margins are
//! exactly uniform, only the dependence differs between families.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{ChiSquared, Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{norm_cdf, student_t_cdf};

/// A copula on the unit hypercube, sampled one row at a time.
pub trait CopulaSampler: Send + Sync {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    /// One draw of `dim` dependent uniforms.
    fn sample_row(&self, rng: &mut dyn RngCore) -> Vec<f64>;
}

/// Archimedean copula with generator exp(-t^{1/theta}); theta = 1 is
/// independence, larger theta gives stronger upper-tail dependence with
/// Kendall tau 1 - 1/theta.
pub struct GumbelCopula {
    d: usize,
    theta: f64,
}

impl GumbelCopula {
    pub fn new(d: usize, theta: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::input("copula dimension must be positive"));
        }
        if !theta.is_finite() || theta < 1.0 {
            return Err(Error::domain(format!(
                "Gumbel dependence parameter must be >= 1, got {theta}"
            )));
        }
        Ok(GumbelCopula { d, theta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Positive stable draw with Laplace transform exp(-t^alpha), via the
    /// Chambers-Mallows-Stuck angular representation. The uniform angle is
    /// kept away from {0, pi} where the trigonometric ratio degenerates.
    fn sample_stable(alpha: f64, rng: &mut dyn RngCore) -> f64 {
        let u = PI * rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
        let w: f64 = Exp1.sample(&mut *rng);
        (alpha * u).sin() / u.sin().powf(1.0 / alpha)
            * (((1.0 - alpha) * u).sin() / w).powf((1.0 - alpha) / alpha)
    }
}

impl CopulaSampler for GumbelCopula {
    fn name(&self) -> &'static str {
        "gumbel"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn sample_row(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        if self.theta == 1.0 {
            return (0..self.d).map(|_| rng.random::<f64>()).collect();
        }
        // shared frailty: U_j = psi(E_j / V) with psi the generator inverse
        let alpha = 1.0 / self.theta;
        let v = Self::sample_stable(alpha, rng);
        (0..self.d)
            .map(|_| {
                let e: f64 = Exp1.sample(&mut *rng);
                (-(e / v).powf(alpha)).exp()
            })
            .collect()
    }
}

fn cholesky_of(corr: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = corr.nrows();
    if d == 0 || corr.ncols() != d {
        return Err(Error::input("copula correlation matrix must be square and non-empty"));
    }
    for i in 0..d {
        if (corr[(i, i)] - 1.0).abs() > 1e-10 {
            return Err(Error::input("copula correlation matrix must have unit diagonal"));
        }
        for j in 0..i {
            if (corr[(i, j)] - corr[(j, i)]).abs() > 1e-10 {
                return Err(Error::input("copula correlation matrix must be symmetric"));
            }
        }
    }
    corr.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::numerical("copula correlation matrix is not positive definite"))
}

/// Gaussian copula: normal-scores dependence given by a correlation matrix.
pub struct MvnCopula {
    l: DMatrix<f64>,
}

impl MvnCopula {
    pub fn new(corr: &DMatrix<f64>) -> Result<Self> {
        Ok(MvnCopula { l: cholesky_of(corr)? })
    }
}

impl CopulaSampler for MvnCopula {
    fn name(&self) -> &'static str {
        "mvn"
    }

    fn dim(&self) -> usize {
        self.l.nrows()
    }

    fn sample_row(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let d = self.l.nrows();
        let eps: DVector<f64> = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut *rng));
        let z = &self.l * eps;
        z.iter().map(|&zj| norm_cdf(zj)).collect()
    }
}

/// Student t copula: the Gaussian vector is divided by a shared chi-square
/// mixing variable, giving symmetric tail dependence that the Gaussian
/// copula lacks.
pub struct MvtCopula {
    l: DMatrix<f64>,
    nu: f64,
    chi: ChiSquared<f64>,
}

impl MvtCopula {
    pub fn new(corr: &DMatrix<f64>, nu: f64) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::domain(format!(
                "t copula degrees of freedom must be positive, got {nu}"
            )));
        }
        let chi = ChiSquared::new(nu)
            .map_err(|e| Error::domain(format!("t copula mixing distribution: {e}")))?;
        Ok(MvtCopula { l: cholesky_of(corr)?, nu, chi })
    }
}

impl CopulaSampler for MvtCopula {
    fn name(&self) -> &'static str {
        "mvt"
    }

    fn dim(&self) -> usize {
        self.l.nrows()
    }

    fn sample_row(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let d = self.l.nrows();
        let eps: DVector<f64> = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut *rng));
        let z = &self.l * eps;
        let w: f64 = self.chi.sample(&mut *rng);
        let scale = (self.nu / w.max(f64::MIN_POSITIVE)).sqrt();
        // nu was validated in new, so the cdf cannot fail
        z.iter().map(|&zj| student_t_cdf(zj * scale, self.nu).unwrap()).collect()
    }
}

/// Serializable copula description for design files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum CopulaSpec {
    Gumbel { theta: f64 },
    Mvn { corr: Vec<Vec<f64>> },
    Mvt { corr: Vec<Vec<f64>>, nu: f64 },
}

impl CopulaSpec {
    pub fn build(&self, d: usize) -> Result<Arc<dyn CopulaSampler>> {
        match self {
            CopulaSpec::Gumbel { theta } => Ok(Arc::new(GumbelCopula::new(d, *theta)?)),
            CopulaSpec::Mvn { corr } => {
                Ok(Arc::new(MvnCopula::new(&corr_from_rows(corr, d)?)?))
            }
            CopulaSpec::Mvt { corr, nu } => {
                Ok(Arc::new(MvtCopula::new(&corr_from_rows(corr, d)?, *nu)?))
            }
        }
    }
}

fn corr_from_rows(rows: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::input(format!(
            "copula correlation matrix must be {d} x {d} to match the cluster size"
        )));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}
