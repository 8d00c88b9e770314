//! Weighted scores estimation. The working weight for each cluster is
//! Winv = Delta(a~) Omega(a~, R~)^{-1}, built from the first-stage margins
//! and the second-stage correlations and then held fixed while the weighted
//! estimating equations are solved for (beta, gamma). Inference is by the
//! sandwich covariance with empirical score outer products.

use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

use crate::cl1::{estimate_correlations, Cl1Options, CorrelationFit};
use crate::corr::CorrStructure;
use crate::data::OrdinalDataset;
use crate::error::{Error, Result};
use crate::gauss::{bvn_cell_table, norm_sf};
use crate::link::Link;
use crate::margins::{
    cluster_tables, design_block, fisher_block, fit_independent, score_entries, FitDiagnostics,
    FitOptions, ObsTables, UnivariateParams,
};

/// Ridge added to a numerically singular working covariance, relative to its
/// mean diagonal entry.
const OMEGA_RIDGE: f64 = 1e-10;

/// Frozen per-cluster pieces of the weighted estimating equations.
pub struct ClusterWeights {
    /// Stacked cutpoint jacobians, one q-row block per observation.
    pub x: DMatrix<f64>,
    /// Covariance of the stacked cutpoint scores under the working model at
    /// the first-stage fit. Block (j,j) is the Fisher block of margin j.
    pub omega: DMatrix<f64>,
    /// Delta(a~) Omega^{-1}; the identity when the working correlation is I.
    pub winv: DMatrix<f64>,
    pub ridged: bool,
}

pub struct WorkingWeights {
    pub clusters: Vec<ClusterWeights>,
    pub q: usize,
    pub cols: Vec<usize>,
    pub ridged_clusters: usize,
}

/// Covariance of the cutpoint scores of two margins under a bivariate normal
/// copula with the given latent correlation: sum over the joint category
/// table of pair probability times the score outer product.
pub(crate) fn score_cross_block(tj: &ObsTables, tk: &ObsTables, rho: f64) -> Result<DMatrix<f64>> {
    let q = tj.dens.len();
    let tab = bvn_cell_table(&tj.z, &tk.z, rho)?;
    let mut b = DMatrix::zeros(q, q);
    for yj in 1..=(q + 1) {
        for (m, v) in score_entries(tj, yj) {
            for yk in 1..=(q + 1) {
                for (mk, vk) in score_entries(tk, yk) {
                    b[(m, mk)] += v * vk * tab[yj - 1][yk - 1];
                }
            }
        }
    }
    Ok(b)
}

/// Assemble the frozen weights at the first-stage estimates and the fitted
/// working correlation matrix (indexed by time-grid positions).
pub fn build_weights(
    data: &OrdinalDataset,
    link: &dyn Link,
    params: &UnivariateParams,
    cols: &[usize],
    rmat: &DMatrix<f64>,
) -> Result<WorkingWeights> {
    let q = data.k() - 1;
    let r = cols.len() + q;
    let mut clusters = Vec::with_capacity(data.n_clusters());
    let mut ridged_clusters = 0;
    for cl in data.clusters() {
        let d = cl.size();
        let dim = d * q;
        let xs = cl.x_subset(cols);
        let tables = cluster_tables(link, params, &xs);

        let mut x = DMatrix::zeros(dim, r);
        let mut omega = DMatrix::zeros(dim, dim);
        let mut delta = DMatrix::zeros(dim, dim);
        for j in 0..d {
            let row: Vec<f64> = xs.row(j).iter().copied().collect();
            x.view_mut((j * q, 0), (q, r)).copy_from(&design_block(&row, q));
            let dj = fisher_block(&tables[j]);
            omega.view_mut((j * q, j * q), (q, q)).copy_from(&dj);
            delta.view_mut((j * q, j * q), (q, q)).copy_from(&dj);
        }
        for j in 0..d {
            for k in (j + 1)..d {
                let rho = rmat[(cl.positions[j], cl.positions[k])];
                let b = score_cross_block(&tables[j], &tables[k], rho)?;
                omega.view_mut((j * q, k * q), (q, q)).copy_from(&b);
                omega.view_mut((k * q, j * q), (q, q)).copy_from(&b.transpose());
            }
        }

        let mut ridged = false;
        let chol = match omega.clone().cholesky() {
            Some(c) => c,
            None => {
                ridged = true;
                let ridge = OMEGA_RIDGE * omega.trace() / dim as f64;
                let mut patched = omega.clone();
                for i in 0..dim {
                    patched[(i, i)] += ridge;
                }
                patched.cholesky().ok_or_else(|| {
                    Error::numerical(format!(
                        "working covariance for cluster {} is singular even after ridging",
                        cl.id
                    ))
                })?
            }
        };
        if ridged {
            ridged_clusters += 1;
        }
        // Winv = Delta Omega^{-1} = (Omega^{-1} Delta)' since both factors
        // are symmetric.
        let winv = chol.solve(&delta).transpose();
        clusters.push(ClusterWeights { x, omega, winv, ridged });
    }
    Ok(WorkingWeights { clusters, q, cols: cols.to_vec(), ridged_clusters })
}

/// One cluster's weighted score contribution and its expected negative
/// jacobian X' Winv Delta(a) X, with Delta refreshed at the current iterate.
fn cluster_contrib(
    link: &dyn Link,
    params: &UnivariateParams,
    xs: &DMatrix<f64>,
    y: &[usize],
    cw: &ClusterWeights,
) -> (DVector<f64>, DMatrix<f64>) {
    let q = params.gamma.len();
    let d = y.len();
    let tables = cluster_tables(link, params, xs);
    let mut s = DVector::zeros(d * q);
    let mut delta = DMatrix::zeros(d * q, d * q);
    for j in 0..d {
        for (m, v) in score_entries(&tables[j], y[j]) {
            s[j * q + m] = v;
        }
        delta
            .view_mut((j * q, j * q), (q, q))
            .copy_from(&fisher_block(&tables[j]));
    }
    let xtw = cw.x.transpose() * &cw.winv;
    let g = &xtw * s;
    let h = xtw * delta * &cw.x;
    (g, h)
}

/// Total weighted score and its expected negative jacobian at `params`.
pub fn ws_score_info(
    data: &OrdinalDataset,
    link: &dyn Link,
    weights: &WorkingWeights,
    params: &UnivariateParams,
) -> (DVector<f64>, DMatrix<f64>) {
    let r = weights.cols.len() + weights.q;
    let mut g = DVector::zeros(r);
    let mut h = DMatrix::zeros(r, r);
    for (cl, cw) in data.clusters().iter().zip(&weights.clusters) {
        let xs = cl.x_subset(&weights.cols);
        let (gi, hi) = cluster_contrib(link, params, &xs, &cl.y, cw);
        g += gi;
        h += hi;
    }
    (g, h)
}

/// Solve the weighted estimating equations by Newton steps with the weights
/// frozen, starting from the first-stage estimates. Steps that would break
/// the cutpoint ordering are halved.
pub fn solve_weighted_scores(
    data: &OrdinalDataset,
    link: &dyn Link,
    weights: &WorkingWeights,
    start: &UnivariateParams,
    opts: &FitOptions,
) -> Result<(UnivariateParams, FitDiagnostics)> {
    let p = start.p();
    let mut a = start.clone();
    let mut diag = FitDiagnostics::default();
    let mut history = Vec::new();
    let mut step_norm = 0.0_f64;
    for iter in 1..=opts.max_iter {
        diag.iterations = iter;
        let (g, h) = ws_score_info(data, link, weights, &a);
        let max_score = g.amax();
        if !max_score.is_finite() {
            return Err(Error::numerical(
                "weighted score is not finite; data and weights are inconsistent",
            ));
        }
        diag.max_score = max_score;
        history.push(max_score);
        if max_score <= opts.score_tol {
            diag.converged = true;
            diag.step_norm = step_norm;
            return Ok((a, diag));
        }
        let dir = h.lu().solve(&g).ok_or_else(|| {
            Error::numerical(
                "weighted information matrix is singular; check for collinear covariates",
            )
        })?;
        let base = a.to_vec();
        let mut scale = 1.0;
        let mut halvings = 0;
        loop {
            let cand = &base + &dir * scale;
            match UnivariateParams::from_vec(&cand, p) {
                Ok(next) => {
                    a = next;
                    break;
                }
                Err(_) => {
                    halvings += 1;
                    if halvings > opts.max_halvings {
                        return Err(Error::numerical(
                            "weighted step keeps violating the cutpoint ordering",
                        ));
                    }
                    scale *= 0.5;
                }
            }
        }
        diag.halvings += halvings;
        step_norm = dir.amax() * scale;
        diag.step_norm = step_norm;
    }
    let tail: Vec<String> = history
        .iter()
        .rev()
        .take(8)
        .rev()
        .map(|v| format!("{v:.3e}"))
        .collect();
    Err(Error::numerical(format!(
        "weighted solve did not converge in {} iterations; max|score| trail: {}",
        opts.max_iter,
        tail.join(", ")
    )))
}

/// Robust covariance of the weighted scores solution.
#[derive(Debug, Clone)]
pub struct SandwichCovariance {
    /// Sum over clusters of X' Winv Delta(a^) X.
    pub neg_h: DMatrix<f64>,
    /// Sum over clusters of the weighted score outer products at a^.
    pub j: DMatrix<f64>,
    /// neg_h^{-1} j neg_h^{-T}, symmetrized.
    pub v: DMatrix<f64>,
    /// sqrt of diag(v), internal order (beta, gamma).
    pub se: DVector<f64>,
}

pub fn sandwich_covariance(
    data: &OrdinalDataset,
    link: &dyn Link,
    weights: &WorkingWeights,
    a_hat: &UnivariateParams,
) -> Result<SandwichCovariance> {
    let r = weights.cols.len() + weights.q;
    let mut neg_h = DMatrix::zeros(r, r);
    let mut j = DMatrix::zeros(r, r);
    for (cl, cw) in data.clusters().iter().zip(&weights.clusters) {
        let xs = cl.x_subset(&weights.cols);
        let (gi, hi) = cluster_contrib(link, a_hat, &xs, &cl.y, cw);
        j += &gi * gi.transpose();
        neg_h += hi;
    }
    let lu = neg_h.clone().lu();
    let collinear = || {
        let names: Vec<&str> = weights
            .cols
            .iter()
            .map(|&c| data.covariate_names()[c].as_str())
            .collect();
        Error::numerical(format!(
            "weighted information matrix is singular; check covariates [{}] for collinearity",
            names.join(", ")
        ))
    };
    let hinv_j = lu.solve(&j).ok_or_else(collinear)?;
    let v_raw = lu.solve(&hinv_j.transpose()).ok_or_else(collinear)?;
    let v = (&v_raw + v_raw.transpose()) * 0.5;
    let mut se = DVector::zeros(r);
    for i in 0..r {
        let d = v[(i, i)];
        if d < -1e-10 {
            return Err(Error::numerical(format!(
                "sandwich covariance has negative variance {d:.3e} at coordinate {i}"
            )));
        }
        se[i] = d.max(0.0).sqrt();
    }
    Ok(SandwichCovariance { neg_h, j, v, se })
}

/// Wald statistic and two-sided normal p-value for a single coefficient.
pub fn wald_test(estimate: f64, se: f64) -> Result<(f64, f64)> {
    if !(se > 0.0) {
        return Err(Error::input(format!(
            "Wald test requires a positive standard error, got {se}"
        )));
    }
    let z = estimate / se;
    Ok((z, 2.0 * norm_sf(z.abs())))
}

/// One line of the estimates table.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EstimateRow {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
}

/// Full result of the three-stage fit.
pub struct FitReport {
    pub link_name: String,
    pub params: UnivariateParams,
    pub cov: SandwichCovariance,
    pub corr: CorrelationFit,
    pub stage1: UnivariateParams,
    pub stage1_diag: FitDiagnostics,
    pub diag: FitDiagnostics,
    pub cols: Vec<usize>,
    pub covariate_names: Vec<String>,
    pub ridged_clusters: usize,
}

impl FitReport {
    /// Estimates in display order: cutpoints first, then covariates.
    pub fn rows(&self) -> Result<Vec<EstimateRow>> {
        let p = self.params.p();
        let q = self.params.gamma.len();
        let mut order: Vec<(String, usize)> = (0..q)
            .map(|m| (format!("cut{}", m + 1), p + m))
            .collect();
        for (j, name) in self.covariate_names.iter().enumerate() {
            order.push((name.clone(), j));
        }
        let vec = self.params.to_vec();
        order
            .into_iter()
            .map(|(name, idx)| {
                let estimate = vec[idx];
                let se = self.cov.se[idx];
                let (z, p_value) = wald_test(estimate, se)?;
                Ok(EstimateRow { name, estimate, se, z, p: p_value })
            })
            .collect()
    }
}

/// Three-stage pipeline: independence MLE, pairwise-likelihood correlations,
/// weighted solve with sandwich covariance.
pub fn fit_weighted_scores(
    data: &OrdinalDataset,
    link: &dyn Link,
    structure: Arc<dyn CorrStructure>,
    cols: &[usize],
    fit_opts: &FitOptions,
    cl1_opts: &Cl1Options,
) -> Result<FitReport> {
    let (stage1, stage1_diag) = fit_independent(data, link, cols, fit_opts)?;
    let corr = estimate_correlations(data, link, &stage1, cols, structure, cl1_opts)?;
    let weights = build_weights(data, link, &stage1, cols, &corr.matrix)?;
    let (params, mut diag) = solve_weighted_scores(data, link, &weights, &stage1, fit_opts)?;
    if weights.ridged_clusters > 0 {
        diag.warnings.push(format!(
            "working covariance ridged in {} cluster(s)",
            weights.ridged_clusters
        ));
    }
    let cov = sandwich_covariance(data, link, &weights, &params)?;
    let covariate_names: Vec<String> = cols
        .iter()
        .map(|&c| data.covariate_names()[c].clone())
        .collect();
    Ok(FitReport {
        link_name: link.name().to_string(),
        params,
        cov,
        corr,
        stage1,
        stage1_diag,
        diag,
        cols: cols.to_vec(),
        covariate_names,
        ridged_clusters: weights.ridged_clusters,
    })
}
