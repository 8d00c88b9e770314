//! Univariate ordinal regression under the independence working model:
//! category probabilities, cutpoint scores, Fisher information blocks, and
//! the first-stage maximum likelihood fit.
//!
//! The model for one observation with covariate row x is
//! P(Y <= m) = F(gamma_m + nu), nu = x' beta, with strictly increasing
//! cutpoints gamma_1 < ... < gamma_{K-1}. Increasing nu therefore raises the
//! cdf at every category, moving mass toward lower categories.

use crate::data::OrdinalDataset;
use crate::error::{Error, Result};
use crate::link::Link;
use nalgebra::{DMatrix, DVector};

/// Marginal regression parameters. Invariant: gamma strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateParams {
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
}

impl UnivariateParams {
    pub fn new(beta: DVector<f64>, gamma: DVector<f64>) -> Result<Self> {
        if gamma.len() == 0 {
            return Err(Error::domain("need at least one cutpoint"));
        }
        if !ordered(gamma.as_slice()) {
            return Err(Error::domain(format!("cutpoints must be strictly increasing: {gamma}")));
        }
        Ok(UnivariateParams { beta, gamma })
    }

    pub fn k(&self) -> usize {
        self.gamma.len() + 1
    }
    pub fn p(&self) -> usize {
        self.beta.len()
    }
    /// Parameter count r = p + K - 1.
    pub fn dim(&self) -> usize {
        self.beta.len() + self.gamma.len()
    }

    /// Flatten as (beta, gamma).
    pub fn to_vec(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        v.rows_mut(0, self.p()).copy_from(&self.beta);
        v.rows_mut(self.p(), self.gamma.len()).copy_from(&self.gamma);
        v
    }

    pub fn from_vec(v: &DVector<f64>, p: usize) -> Result<Self> {
        UnivariateParams::new(
            DVector::from_iterator(p, v.iter().take(p).cloned()),
            DVector::from_iterator(v.len() - p, v.iter().skip(p).cloned()),
        )
    }
}

fn ordered(g: &[f64]) -> bool {
    g.iter().all(|v| v.is_finite()) && g.windows(2).all(|w| w[0] < w[1])
}

/// Per-observation tables every later stage consumes: shifted cutpoints,
/// category pmf and cdf, link densities at the cutpoints, and normal scores
/// of the cdf values.
#[derive(Debug, Clone)]
pub struct ObsTables {
    pub nu: f64,
    /// gamma_m + nu for m = 1..K-1.
    pub cuts: Vec<f64>,
    /// P(Y = m), length K; floored away from zero for safe division.
    pub pmf: Vec<f64>,
    /// P(Y <= m) for m = 0..K; cdf[0] = 0, cdf[K] = 1.
    pub cdf: Vec<f64>,
    /// Phi^-1(cdf[m]) for m = 0..K with infinite ends.
    pub z: Vec<f64>,
    /// Link density at each shifted cutpoint, length K-1.
    pub dens: Vec<f64>,
}

const PMF_FLOOR: f64 = 1e-300;

/// Evaluate the per-observation tables at covariate row x.
pub fn obs_tables(link: &dyn Link, params: &UnivariateParams, x: &[f64]) -> ObsTables {
    let q = params.gamma.len();
    debug_assert_eq!(x.len(), params.beta.len());
    let nu: f64 = x.iter().zip(params.beta.iter()).map(|(a, b)| a * b).sum();
    let mut cuts = Vec::with_capacity(q);
    let mut cdf = Vec::with_capacity(q + 2);
    let mut z = Vec::with_capacity(q + 2);
    let mut dens = Vec::with_capacity(q);
    cdf.push(0.0);
    z.push(f64::NEG_INFINITY);
    for m in 0..q {
        let c = params.gamma[m] + nu;
        cuts.push(c);
        cdf.push(link.cdf(c));
        z.push(link.gauss_z(c));
        dens.push(link.pdf(c));
    }
    cdf.push(1.0);
    z.push(f64::INFINITY);
    let pmf: Vec<f64> = (0..=q).map(|m| (cdf[m + 1] - cdf[m]).max(PMF_FLOOR)).collect();
    ObsTables { nu, cuts, pmf, cdf, z, dens }
}

/// Category probabilities P(Y = 1..K) at covariate row x.
pub fn ordinal_pmf(link: &dyn Link, params: &UnivariateParams, x: &[f64]) -> Vec<f64> {
    obs_tables(link, params, x).pmf
}

/// Per-observation tables for every row of a cluster's covariate matrix.
pub fn cluster_tables(
    link: &dyn Link,
    params: &UnivariateParams,
    xs: &DMatrix<f64>,
) -> Vec<ObsTables> {
    (0..xs.nrows())
        .map(|j| {
            let row: Vec<f64> = xs.row(j).iter().copied().collect();
            obs_tables(link, params, &row)
        })
        .collect()
}

/// Score of log P(Y = y) with respect to the shifted cutpoints, length K-1.
/// At most two entries are nonzero.
pub fn score_gamma(tables: &ObsTables, y: usize) -> DVector<f64> {
    let mut s = DVector::zeros(tables.dens.len());
    for (m, v) in score_entries(tables, y) {
        s[m] = v;
    }
    s
}

/// Sparse form of the cutpoint score: (index, value) pairs, at most two.
pub fn score_entries(tables: &ObsTables, y: usize) -> impl Iterator<Item = (usize, f64)> {
    let q = tables.dens.len();
    debug_assert!(y >= 1 && y <= q + 1);
    let p = tables.pmf[y - 1];
    let mut out = [None, None];
    if y <= q {
        out[0] = Some((y - 1, tables.dens[y - 1] / p));
    }
    if y >= 2 {
        out[1] = Some((y - 2, -tables.dens[y - 2] / p));
    }
    out.into_iter().flatten()
}

/// Fisher information of one observation in shifted-cutpoint coordinates:
/// sum over categories of pmf * score * score'. Tridiagonal and positive
/// semidefinite.
pub fn fisher_block(tables: &ObsTables) -> DMatrix<f64> {
    let q = tables.dens.len();
    let mut delta = DMatrix::zeros(q, q);
    for y in 1..=(q + 1) {
        let w = tables.pmf[y - 1];
        let entries: Vec<(usize, f64)> = score_entries(tables, y).collect();
        for &(a, va) in &entries {
            for &(b, vb) in &entries {
                delta[(a, b)] += w * va * vb;
            }
        }
    }
    delta
}

/// Jacobian rows of the shifted cutpoints with respect to (beta, gamma):
/// row m of X is (x', e_m'). Returned dense, q x (p + q).
pub fn design_block(x: &[f64], q: usize) -> DMatrix<f64> {
    let p = x.len();
    let mut xb = DMatrix::zeros(q, p + q);
    for m in 0..q {
        for c in 0..p {
            xb[(m, c)] = x[c];
        }
        xb[(m, p + m)] = 1.0;
    }
    xb
}

/// Options shared by the likelihood and estimating-equation solvers.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub score_tol: f64,
    pub step_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { score_tol: 1e-6, step_tol: 1e-8, max_iter: 100, max_halvings: 30 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub max_score: f64,
    pub step_norm: f64,
    pub halvings: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// First-stage fit: maximum likelihood under the independence working model.
///
/// Newton-Raphson with Fisher scoring. A step is halved (up to
/// `max_halvings`) whenever it would break the cutpoint ordering or decrease
/// the log likelihood. Initial values: beta = 0, gamma at link quantiles of
/// the pooled cumulative category frequencies.
pub fn fit_independent(
    data: &OrdinalDataset,
    link: &dyn Link,
    cols: &[usize],
    opts: &FitOptions,
) -> Result<(UnivariateParams, FitDiagnostics)> {
    let k = data.k();
    let q = k - 1;
    let p = cols.len();

    // pooled cumulative frequencies for the cutpoint start
    let mut counts = vec![0usize; k];
    for cl in data.clusters() {
        for &y in &cl.y {
            counts[y - 1] += 1;
        }
    }
    let n_obs = data.n_obs() as f64;
    let mut cum = 0.0;
    let mut gamma0 = Vec::with_capacity(q);
    for m in 0..q {
        cum += counts[m] as f64;
        gamma0.push(link.quantile(cum / n_obs)?);
    }
    let mut params =
        UnivariateParams::new(DVector::zeros(p), DVector::from_vec(gamma0)).expect("ordered start");

    let designs: Vec<DMatrix<f64>> = data.clusters().iter().map(|c| c.x_subset(cols)).collect();

    let loglik = |pr: &UnivariateParams| -> f64 {
        let mut ll = 0.0;
        for (ci, cl) in data.clusters().iter().enumerate() {
            for (j, &y) in cl.y.iter().enumerate() {
                let t = obs_tables(link, pr, designs[ci].row(j).transpose().as_slice());
                ll += t.pmf[y - 1].ln();
            }
        }
        ll
    };

    let mut diag = FitDiagnostics::default();
    let mut ll = loglik(&params);
    for iter in 1..=opts.max_iter {
        diag.iterations = iter;
        let (g, info) = score_and_info(data, link, &params, &designs);
        diag.max_score = g.amax();
        let chol = info.clone().cholesky().ok_or_else(|| {
            Error::numerical("independence-fit information matrix is singular; check covariates")
        })?;
        let step = chol.solve(&g);
        diag.step_norm = step.amax();
        if diag.max_score <= opts.score_tol && diag.step_norm <= opts.step_tol {
            diag.converged = true;
            return Ok((params, diag));
        }

        // step halving on ordering and log-likelihood ascent
        let base = params.to_vec();
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial = &base + &step * scale;
            if let Ok(tp) = UnivariateParams::from_vec(&trial, p) {
                let tll = loglik(&tp);
                // slack scales with |ll|: summing the likelihood over many
                // observations leaves rounding noise far above 1e-12, and a
                // noise-bound comparison must not veto the final Newton steps
                if tll.is_finite() && tll >= ll - 1e-10 * (1.0 + ll.abs()) {
                    params = tp;
                    ll = tll;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
            diag.halvings += 1;
        }
        if !accepted {
            return Err(Error::numerical(format!(
                "independence fit stalled at iteration {iter}: max|score| = {:.3e}",
                diag.max_score
            )));
        }
    }
    Err(Error::numerical(format!(
        "independence fit did not converge in {} iterations: max|score| = {:.3e}",
        opts.max_iter, diag.max_score
    )))
}

/// Total score and expected information of the independence log likelihood
/// at `params`, in (beta, gamma) coordinates.
pub fn score_and_info(
    data: &OrdinalDataset,
    link: &dyn Link,
    params: &UnivariateParams,
    designs: &[DMatrix<f64>],
) -> (DVector<f64>, DMatrix<f64>) {
    let p = params.p();
    let q = params.gamma.len();
    let r = p + q;
    let mut g = DVector::zeros(r);
    let mut info = DMatrix::zeros(r, r);
    for (ci, cl) in data.clusters().iter().enumerate() {
        for (j, &y) in cl.y.iter().enumerate() {
            let xrow = designs[ci].row(j).transpose();
            let x = xrow.as_slice();
            let t = obs_tables(link, params, x);
            // score: beta part (sum of entries) * x, gamma part sparse
            let mut ssum = 0.0;
            for (m, v) in score_entries(&t, y) {
                g[p + m] += v;
                ssum += v;
            }
            for c in 0..p {
                g[c] += ssum * x[c];
            }
            // information: [[x t0 x', x w'], [w x', Delta]] with w = Delta 1
            let delta = fisher_block(&t);
            let mut w = vec![0.0; q];
            let mut t0 = 0.0;
            for a in 0..q {
                for b in 0..q {
                    w[a] += delta[(a, b)];
                }
                t0 += w[a];
            }
            for a in 0..p {
                for b in 0..p {
                    info[(a, b)] += t0 * x[a] * x[b];
                }
                for m in 0..q {
                    info[(a, p + m)] += x[a] * w[m];
                    info[(p + m, a)] += x[a] * w[m];
                }
            }
            for a in 0..q {
                for b in 0..q {
                    info[(p + a, p + b)] += delta[(a, b)];
                }
            }
        }
    }
    (g, info)
}
