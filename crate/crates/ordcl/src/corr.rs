//! Latent correlation structures behind a common trait, selected by name.
//!
//! A structure maps its free parameter vector theta to a correlation for any
//! position pair, with the Jacobian d rho / d theta the selection criteria
//! need. Structures are registered in `structure_by_name`.

use crate::data::OrdinalDataset;
use crate::error::{Error, Result};
use crate::gauss::RHO_CAP;
use nalgebra::DMatrix;
use std::sync::Arc;

/// Time grid and observed pair set a structure is parameterized against.
#[derive(Debug, Clone)]
pub struct CorrContext {
    /// Sorted distinct within-cluster index values; AR(1) lags are
    /// differences of these.
    pub times: Vec<i64>,
    /// Position pairs (a < b) observed together in at least one cluster.
    pub observed_pairs: Vec<(usize, usize)>,
}

impl CorrContext {
    pub fn from_dataset(data: &OrdinalDataset) -> Self {
        CorrContext { times: data.times().to_vec(), observed_pairs: data.observed_pairs() }
    }

    pub fn d(&self) -> usize {
        self.times.len()
    }

    pub fn pair_index(&self, pair: (usize, usize)) -> Option<usize> {
        self.observed_pairs.iter().position(|&p| p == pair)
    }
}

/// Parametric family for the latent correlation matrix.
pub trait CorrStructure: Send + Sync {
    fn name(&self) -> &'static str;
    fn param_count(&self, ctx: &CorrContext) -> usize;
    /// Starting values inside the feasible box.
    fn init(&self, ctx: &CorrContext) -> Vec<f64>;
    /// Open box (lo, hi) for each free parameter.
    fn bounds(&self, ctx: &CorrContext) -> Vec<(f64, f64)>;
    /// Correlation of a position pair (a < b).
    fn pair_rho(&self, theta: &[f64], pair: (usize, usize), ctx: &CorrContext) -> f64;
    /// d pair_rho / d theta, length param_count.
    fn pair_jacobian(&self, theta: &[f64], pair: (usize, usize), ctx: &CorrContext) -> Vec<f64>;

    /// Full d x d matrix; pairs the family does not cover stay at zero.
    fn corr_matrix(&self, theta: &[f64], ctx: &CorrContext) -> DMatrix<f64> {
        let d = ctx.d();
        let mut r = DMatrix::identity(d, d);
        for a in 0..d {
            for b in (a + 1)..d {
                let rho = self.pair_rho(theta, (a, b), ctx);
                r[(a, b)] = rho;
                r[(b, a)] = rho;
            }
        }
        r
    }
}

/// No dependence: the identity working correlation.
#[derive(Debug, Default)]
pub struct Independence;

impl CorrStructure for Independence {
    fn name(&self) -> &'static str {
        "independence"
    }
    fn param_count(&self, _ctx: &CorrContext) -> usize {
        0
    }
    fn init(&self, _ctx: &CorrContext) -> Vec<f64> {
        Vec::new()
    }
    fn bounds(&self, _ctx: &CorrContext) -> Vec<(f64, f64)> {
        Vec::new()
    }
    fn pair_rho(&self, _theta: &[f64], _pair: (usize, usize), _ctx: &CorrContext) -> f64 {
        0.0
    }
    fn pair_jacobian(&self, _t: &[f64], _p: (usize, usize), _c: &CorrContext) -> Vec<f64> {
        Vec::new()
    }
}

/// Common correlation for every pair. Positive definiteness of the d x d
/// matrix requires rho > -1/(d-1).
#[derive(Debug, Default)]
pub struct Exchangeable;

impl CorrStructure for Exchangeable {
    fn name(&self) -> &'static str {
        "exch"
    }
    fn param_count(&self, _ctx: &CorrContext) -> usize {
        1
    }
    fn init(&self, _ctx: &CorrContext) -> Vec<f64> {
        vec![0.1]
    }
    fn bounds(&self, ctx: &CorrContext) -> Vec<(f64, f64)> {
        let d = ctx.d().max(2) as f64;
        let lo = (-1.0 / (d - 1.0)) + 1e-6;
        vec![(lo.max(-RHO_CAP), RHO_CAP)]
    }
    fn pair_rho(&self, theta: &[f64], _pair: (usize, usize), _ctx: &CorrContext) -> f64 {
        theta[0]
    }
    fn pair_jacobian(&self, _t: &[f64], _p: (usize, usize), _c: &CorrContext) -> Vec<f64> {
        vec![1.0]
    }
}

/// Correlation rho^lag with lag the within-index difference, so gaps in a
/// cluster's schedule decay the dependence accordingly.
#[derive(Debug, Default)]
pub struct Ar1;

fn lag(pair: (usize, usize), ctx: &CorrContext) -> i32 {
    (ctx.times[pair.1] - ctx.times[pair.0]) as i32
}

impl CorrStructure for Ar1 {
    fn name(&self) -> &'static str {
        "ar1"
    }
    fn param_count(&self, _ctx: &CorrContext) -> usize {
        1
    }
    fn init(&self, _ctx: &CorrContext) -> Vec<f64> {
        vec![0.1]
    }
    fn bounds(&self, _ctx: &CorrContext) -> Vec<(f64, f64)> {
        vec![(-RHO_CAP, RHO_CAP)]
    }
    fn pair_rho(&self, theta: &[f64], pair: (usize, usize), ctx: &CorrContext) -> f64 {
        theta[0].powi(lag(pair, ctx))
    }
    fn pair_jacobian(&self, theta: &[f64], pair: (usize, usize), ctx: &CorrContext) -> Vec<f64> {
        let l = lag(pair, ctx);
        vec![l as f64 * theta[0].powi(l - 1)]
    }
}

/// One free correlation per observed pair; pairs never seen together are
/// pinned at zero.
#[derive(Debug, Default)]
pub struct Unstructured;

impl CorrStructure for Unstructured {
    fn name(&self) -> &'static str {
        "unstr"
    }
    fn param_count(&self, ctx: &CorrContext) -> usize {
        ctx.observed_pairs.len()
    }
    fn init(&self, ctx: &CorrContext) -> Vec<f64> {
        vec![0.1; ctx.observed_pairs.len()]
    }
    fn bounds(&self, ctx: &CorrContext) -> Vec<(f64, f64)> {
        vec![(-RHO_CAP, RHO_CAP); ctx.observed_pairs.len()]
    }
    fn pair_rho(&self, theta: &[f64], pair: (usize, usize), ctx: &CorrContext) -> f64 {
        ctx.pair_index(pair).map_or(0.0, |i| theta[i])
    }
    fn pair_jacobian(&self, theta: &[f64], pair: (usize, usize), ctx: &CorrContext) -> Vec<f64> {
        let mut j = vec![0.0; theta.len()];
        if let Some(i) = ctx.pair_index(pair) {
            j[i] = 1.0;
        }
        j
    }
}

/// Registry lookup for correlation structures exposed to configuration.
pub fn structure_by_name(name: &str) -> Result<Arc<dyn CorrStructure>> {
    match name {
        "exch" | "exchangeable" => Ok(Arc::new(Exchangeable)),
        "ar1" => Ok(Arc::new(Ar1)),
        "unstr" | "unstructured" => Ok(Arc::new(Unstructured)),
        "independence" | "ind" => Ok(Arc::new(Independence)),
        _ => Err(Error::UnknownName {
            kind: "correlation structure",
            name: name.to_string(),
            available: "exch, ar1, unstr, independence",
        }),
    }
}

/// Eigenvalue floor used when repairing an indefinite unstructured estimate.
pub const PD_EIGEN_FLOOR: f64 = 1e-6;

/// Clip eigenvalues at `PD_EIGEN_FLOOR` and rescale to unit diagonal.
/// Returns the (possibly unchanged) matrix and whether repair was needed.
pub fn repair_pd(r: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    if r.clone().cholesky().is_some() {
        return (r.clone(), false);
    }
    let eig = r.clone().symmetric_eigen();
    let d = r.nrows();
    let mut fixed = DMatrix::zeros(d, d);
    for i in 0..d {
        let lam = eig.eigenvalues[i].max(PD_EIGEN_FLOOR);
        let v = eig.eigenvectors.column(i);
        fixed += v * v.transpose() * lam;
    }
    let scale: Vec<f64> = (0..d).map(|i| fixed[(i, i)].sqrt()).collect();
    for i in 0..d {
        for j in 0..d {
            fixed[(i, j)] /= scale[i] * scale[j];
        }
    }
    (fixed, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ctx() -> CorrContext {
        // times 1, 3, 4: the first lag is 2
        CorrContext { times: vec![1, 3, 4], observed_pairs: vec![(0, 1), (0, 2), (1, 2)] }
    }

    #[test]
    fn registry_resolves_known_names_only() {
        for name in ["exch", "ar1", "unstr", "independence"] {
            assert_eq!(
                structure_by_name(name).unwrap().name(),
                if name == "independence" { "independence" } else { name }
            );
        }
        assert_eq!(structure_by_name("exchangeable").unwrap().name(), "exch");
        assert!(structure_by_name("toeplitz").is_err());
    }

    #[test]
    fn ar1_respects_time_gaps() {
        let c = ctx();
        let s = Ar1;
        let theta = [0.6];
        assert_abs_diff_eq!(s.pair_rho(&theta, (0, 1), &c), 0.36, epsilon = 1e-15);
        assert_abs_diff_eq!(s.pair_rho(&theta, (1, 2), &c), 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(s.pair_rho(&theta, (0, 2), &c), 0.6f64.powi(3), epsilon = 1e-15);
        // jacobian by finite difference
        let h = 1e-7;
        for pair in [(0, 1), (0, 2), (1, 2)] {
            let up = s.pair_rho(&[0.6 + h], pair, &c);
            let dn = s.pair_rho(&[0.6 - h], pair, &c);
            assert_abs_diff_eq!(
                s.pair_jacobian(&theta, pair, &c)[0],
                (up - dn) / (2.0 * h),
                epsilon = 1e-7
            );
        }
    }

    #[test]
    fn exchangeable_bounds_shrink_with_dimension() {
        let c = ctx();
        let b = Exchangeable.bounds(&c);
        assert_abs_diff_eq!(b[0].0, -0.5 + 1e-6, epsilon = 1e-12);
        assert!(b[0].1 < 1.0);
        // matrix at the lower bound is still positive definite
        let m = Exchangeable.corr_matrix(&[b[0].0], &c);
        assert!(m.cholesky().is_some());
    }

    #[test]
    fn unstructured_maps_pairs_and_ignores_unseen() {
        let c = CorrContext { times: vec![1, 2, 3], observed_pairs: vec![(0, 1), (1, 2)] };
        let s = Unstructured;
        assert_eq!(s.param_count(&c), 2);
        let theta = [0.4, -0.2];
        assert_eq!(s.pair_rho(&theta, (0, 1), &c), 0.4);
        assert_eq!(s.pair_rho(&theta, (1, 2), &c), -0.2);
        assert_eq!(s.pair_rho(&theta, (0, 2), &c), 0.0);
        assert_eq!(s.pair_jacobian(&theta, (0, 2), &c), vec![0.0, 0.0]);
        let m = s.corr_matrix(&theta, &c);
        assert_eq!(m[(0, 2)], 0.0);
        assert_eq!(m[(1, 0)], 0.4);
    }

    #[test]
    fn repair_pd_fixes_indefinite_matrices() {
        // rho12 = rho13 = 0.9, rho23 = -0.5 is not positive definite
        let mut r = DMatrix::identity(3, 3);
        r[(0, 1)] = 0.9;
        r[(1, 0)] = 0.9;
        r[(0, 2)] = 0.9;
        r[(2, 0)] = 0.9;
        r[(1, 2)] = -0.5;
        r[(2, 1)] = -0.5;
        assert!(r.clone().cholesky().is_none());
        let (fixed, repaired) = repair_pd(&r);
        assert!(repaired);
        assert!(fixed.clone().cholesky().is_some());
        for i in 0..3 {
            assert_abs_diff_eq!(fixed[(i, i)], 1.0, epsilon = 1e-12);
        }
        // an already valid matrix passes through untouched
        let ok = Exchangeable.corr_matrix(&[0.3], &ctx());
        let (same, flag) = repair_pd(&ok);
        assert!(!flag);
        assert_eq!(same, ok);
    }

    #[test]
    fn independence_is_parameter_free() {
        let c = ctx();
        assert_eq!(Independence.param_count(&c), 0);
        assert_eq!(Independence.corr_matrix(&[], &c), DMatrix::identity(3, 3));
    }
}
