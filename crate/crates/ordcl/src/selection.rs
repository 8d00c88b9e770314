//! Composite-likelihood information criteria. The joint estimating functions
//! stack the univariate scores in (beta, gamma) and the per-pair correlation
//! scores; the criteria penalize -2 L2 by the trace of J H^{-1}, where H is
//! the negative expected jacobian of the stack and J its covariance. Both
//! matrices live in free-parameter space: rows and columns belonging to a
//! structured correlation model are mapped through the structure jacobian.
//!
//! All expectations here are evaluated at the first-stage margins and the
//! second-stage correlation fit, matching the estimates the criteria judge.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::sync::Arc;

use crate::cl1::{estimate_correlations, Cl1Options, CorrelationFit, PROB_FLOOR};
use crate::corr::CorrStructure;
use crate::data::OrdinalDataset;
use crate::error::{Error, Result};
use crate::gauss::{
    bvn_cell_table, bvn_pdf, bvn_rect, bvn_rect_drho, clamp_rho, mvn_cell_array, norm_cdf, Rect2,
};
use crate::link::Link;
use crate::margins::{
    cluster_tables, design_block, fisher_block, fit_independent, score_entries, FitOptions,
    ObsTables, UnivariateParams,
};
use crate::wscore::score_cross_block;

/// Quadrature tolerance for the 3- and 4-dimensional cell arrays used by the
/// model-based variability matrix.
const MVN_TOL: f64 = 1e-9;

/// How the variability matrix J is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JMode {
    /// Per-cluster outer products of the observed estimating functions.
    #[default]
    Empirical,
    /// Expectations under the working model; needs 3- and 4-dimensional
    /// rectangle probabilities for the cross terms.
    Model,
}

/// Joint category table of one within-cluster pair together with every
/// derivative the criteria need: the correlation derivative per cell and the
/// shifted-cutpoint derivatives of each cell probability.
///
/// The cutpoint derivative follows the chain through the normal scores
/// z_m = Phi^{-1}(F(cut_m)): d z_m / d cut_m = f(cut_m) / phi(z_m), and the
/// phi factors cancel against the normal density of the rectangle bound, so
/// each cell derivative is just the link density times a difference of
/// conditional normal cdfs.
struct PairTables {
    k: usize,
    /// K x K cell probabilities.
    cells: Vec<Vec<f64>>,
    /// K x K cell derivatives with respect to the latent correlation.
    drho: Vec<Vec<f64>>,
    /// cond_jk[m][mk] = Phi((z_k[mk] - rho * z_j[m]) / s), the conditional
    /// cdf of margin k's node given margin j's node. Rows at infinite nodes
    /// are unused.
    cond_jk: Vec<Vec<f64>>,
    cond_kj: Vec<Vec<f64>>,
    dens_j: Vec<f64>,
    dens_k: Vec<f64>,
}

fn pair_tables(tj: &ObsTables, tk: &ObsTables, rho: f64) -> Result<PairTables> {
    let (r, _) = clamp_rho(rho);
    let k = tj.pmf.len();
    let cells = bvn_cell_table(&tj.z, &tk.z, r)?;
    let mut node_pdf = vec![vec![0.0; k + 1]; k + 1];
    for m in 0..=k {
        for mk in 0..=k {
            node_pdf[m][mk] = bvn_pdf(tj.z[m], tk.z[mk], r);
        }
    }
    let mut drho = vec![vec![0.0; k]; k];
    for (y, row) in drho.iter_mut().enumerate() {
        for (yk, v) in row.iter_mut().enumerate() {
            *v = node_pdf[y + 1][yk + 1] - node_pdf[y][yk + 1] - node_pdf[y + 1][yk]
                + node_pdf[y][yk];
        }
    }
    let s = (1.0 - r * r).sqrt().max(1e-154);
    let cond = |za: &[f64], zb: &[f64]| -> Vec<Vec<f64>> {
        (0..=k)
            .map(|m| {
                (0..=k)
                    .map(|mb| {
                        if !za[m].is_finite() {
                            0.0
                        } else if zb[mb] == f64::INFINITY {
                            1.0
                        } else if zb[mb] == f64::NEG_INFINITY {
                            0.0
                        } else {
                            norm_cdf((zb[mb] - r * za[m]) / s)
                        }
                    })
                    .collect()
            })
            .collect()
    };
    let cond_jk = cond(&tj.z, &tk.z);
    let cond_kj = cond(&tk.z, &tj.z);
    Ok(PairTables {
        k,
        cells,
        drho,
        cond_jk,
        cond_kj,
        dens_j: tj.dens.clone(),
        dens_k: tk.dens.clone(),
    })
}

impl PairTables {
    fn prob(&self, yj: usize, yk: usize) -> f64 {
        self.cells[yj - 1][yk - 1].max(PROB_FLOOR)
    }

    fn drho(&self, yj: usize, yk: usize) -> f64 {
        self.drho[yj - 1][yk - 1]
    }

    /// Correlation score of the cell: d log f2 / d rho.
    fn u(&self, yj: usize, yk: usize) -> f64 {
        self.drho(yj, yk) / self.prob(yj, yk)
    }

    /// d f2(yj, yk) / d (shifted cutpoints of margin j), sparse: at most the
    /// coordinates yj-1 (upper bound) and yj-2 (lower bound) are nonzero.
    fn dgamma_j(&self, yj: usize, yk: usize) -> [Option<(usize, f64)>; 2] {
        let q = self.k - 1;
        let mut out = [None, None];
        if yj <= q {
            let v = self.dens_j[yj - 1] * (self.cond_jk[yj][yk] - self.cond_jk[yj][yk - 1]);
            out[0] = Some((yj - 1, v));
        }
        if yj >= 2 {
            let v = -self.dens_j[yj - 2] * (self.cond_jk[yj - 1][yk] - self.cond_jk[yj - 1][yk - 1]);
            out[1] = Some((yj - 2, v));
        }
        out
    }

    fn dgamma_k(&self, yj: usize, yk: usize) -> [Option<(usize, f64)>; 2] {
        let q = self.k - 1;
        let mut out = [None, None];
        if yk <= q {
            let v = self.dens_k[yk - 1] * (self.cond_kj[yk][yj] - self.cond_kj[yk][yj - 1]);
            out[0] = Some((yk - 1, v));
        }
        if yk >= 2 {
            let v = -self.dens_k[yk - 2] * (self.cond_kj[yk - 1][yj] - self.cond_kj[yk - 1][yj - 1]);
            out[1] = Some((yk - 2, v));
        }
        out
    }
}

/// Correlation score of one observed pair via the rectangle primitives.
fn observed_u(tj: &ObsTables, tk: &ObsTables, rho: f64, yj: usize, yk: usize) -> Result<f64> {
    let rect = Rect2::new(
        [tj.z[yj - 1], tk.z[yk - 1]],
        [tj.z[yj], tk.z[yk]],
        rho,
    )?;
    let p = bvn_rect(&rect).max(PROB_FLOOR);
    Ok(bvn_rect_drho(&rect) / p)
}

fn combined_dims(data: &OrdinalDataset, cols: &[usize]) -> (usize, usize) {
    let q = data.k() - 1;
    (cols.len() + q, q)
}

/// Negative expected jacobian of the stacked estimating functions, averaged
/// over clusters. Block layout: univariate r x r, then the correlation rows;
/// the upper-right block is exactly zero because the univariate score does
/// not involve the correlations.
pub fn assemble_h(
    data: &OrdinalDataset,
    link: &dyn Link,
    params: &UnivariateParams,
    cols: &[usize],
    fit: &CorrelationFit,
) -> Result<DMatrix<f64>> {
    let (r, q) = combined_dims(data, cols);
    let kk = data.k();
    let m = fit.structure.param_count(&fit.ctx);
    let t = r + m;
    let n = data.n_clusters() as f64;

    let mut h11 = DMatrix::zeros(r, r);
    let mut h21 = DMatrix::zeros(m, r);
    let mut h22 = DMatrix::zeros(m, m);

    for cl in data.clusters() {
        let xs = cl.x_subset(cols);
        let tables = cluster_tables(link, params, &xs);
        let d = cl.size();
        let xblocks: Vec<DMatrix<f64>> = (0..d)
            .map(|j| {
                let row: Vec<f64> = xs.row(j).iter().copied().collect();
                design_block(&row, q)
            })
            .collect();
        for j in 0..d {
            h11 += xblocks[j].transpose() * fisher_block(&tables[j]) * &xblocks[j];
        }
        if m == 0 {
            continue;
        }
        for j in 0..d {
            for k in (j + 1)..d {
                let pair = (cl.positions[j], cl.positions[k]);
                let jac = fit.structure.pair_jacobian(&fit.theta, pair, &fit.ctx);
                if jac.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let rho = fit.matrix[(pair.0, pair.1)];
                let pt = pair_tables(&tables[j], &tables[k], rho)?;
                let mut e_dr2 = 0.0;
                let mut e_da_dr = DVector::zeros(r);
                for yj in 1..=kk {
                    for yk in 1..=kk {
                        let w = pt.drho(yj, yk) / pt.prob(yj, yk);
                        if w == 0.0 {
                            continue;
                        }
                        e_dr2 += pt.drho(yj, yk) * w;
                        for (c, v) in pt.dgamma_j(yj, yk).iter().flatten() {
                            e_da_dr += xblocks[j].row(*c).transpose() * (v * w);
                        }
                        for (c, v) in pt.dgamma_k(yj, yk).iter().flatten() {
                            e_da_dr += xblocks[k].row(*c).transpose() * (v * w);
                        }
                    }
                }
                for (l, &jl) in jac.iter().enumerate() {
                    if jl == 0.0 {
                        continue;
                    }
                    for c in 0..r {
                        h21[(l, c)] += jl * e_da_dr[c];
                    }
                    for (l2, &jl2) in jac.iter().enumerate() {
                        h22[(l, l2)] += jl * jl2 * e_dr2;
                    }
                }
            }
        }
    }

    let mut h = DMatrix::zeros(t, t);
    h.view_mut((0, 0), (r, r)).copy_from(&(h11 / n));
    if m > 0 {
        h.view_mut((r, 0), (m, r)).copy_from(&(h21 / n));
        h.view_mut((r, r), (m, m)).copy_from(&(h22 / n));
    }
    Ok(h)
}

/// Covariance of the stacked estimating functions, averaged over clusters.
pub fn assemble_j(
    data: &OrdinalDataset,
    link: &dyn Link,
    params: &UnivariateParams,
    cols: &[usize],
    fit: &CorrelationFit,
    mode: JMode,
) -> Result<DMatrix<f64>> {
    match mode {
        JMode::Empirical => assemble_j_empirical(data, link, params, cols, fit),
        JMode::Model => assemble_j_model(data, link, params, cols, fit),
    }
}

fn assemble_j_empirical(
    data: &OrdinalDataset,
    link: &dyn Link,
    params: &UnivariateParams,
    cols: &[usize],
    fit: &CorrelationFit,
) -> Result<DMatrix<f64>> {
    let (r, q) = combined_dims(data, cols);
    let m = fit.structure.param_count(&fit.ctx);
    let t = r + m;
    let n = data.n_clusters() as f64;
    let mut j_mat = DMatrix::zeros(t, t);
    for cl in data.clusters() {
        let xs = cl.x_subset(cols);
        let tables = cluster_tables(link, params, &xs);
        let d = cl.size();
        let mut g: DVector<f64> = DVector::zeros(t);
        for j in 0..d {
            let row: Vec<f64> = xs.row(j).iter().copied().collect();
            let xb = design_block(&row, q);
            for (c, v) in score_entries(&tables[j], cl.y[j]) {
                for col in 0..r {
                    g[col] += v * xb[(c, col)];
                }
            }
        }
        if m > 0 {
            for j in 0..d {
                for k in (j + 1)..d {
                    let pair = (cl.positions[j], cl.positions[k]);
                    let jac = fit.structure.pair_jacobian(&fit.theta, pair, &fit.ctx);
                    if jac.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let rho = fit.matrix[(pair.0, pair.1)];
                    let u = observed_u(&tables[j], &tables[k], rho, cl.y[j], cl.y[k])?;
                    for (l, &jl) in jac.iter().enumerate() {
                        g[r + l] += jl * u;
                    }
                }
            }
        }
        j_mat += &g * g.transpose();
    }
    Ok(j_mat / n)
}

/// Model-based J: every block is an expectation under the working model.
/// Univariate x univariate terms need bivariate margins, pair x univariate
/// and shared-index pair x pair terms need trivariate margins, and disjoint
/// pair x pair terms need four-variate margins; margins never exceed four
/// dimensions no matter how large the cluster is.
/// Decode a row-major flat cell index into 1-based category labels.
fn decode_cells(flat: usize, dim: usize, kk: usize, ys: &mut [usize; 4]) {
    let mut f = flat;
    for pos in (0..dim).rev() {
        ys[pos] = f % kk + 1;
        f /= kk;
    }
}

fn assemble_j_model(
    data: &OrdinalDataset,
    link: &dyn Link,
    params: &UnivariateParams,
    cols: &[usize],
    fit: &CorrelationFit,
) -> Result<DMatrix<f64>> {
    let (r, q) = combined_dims(data, cols);
    let kk = data.k();
    let m = fit.structure.param_count(&fit.ctx);
    let t = r + m;
    let n = data.n_clusters() as f64;
    let mut j11 = DMatrix::zeros(r, r);
    let mut j21 = DMatrix::zeros(m, r);
    let mut j22 = DMatrix::zeros(m, m);

    struct LocalPair {
        j: usize,
        k: usize,
        jac: Vec<f64>,
        pt: PairTables,
    }

    for cl in data.clusters() {
        let xs = cl.x_subset(cols);
        let tables = cluster_tables(link, params, &xs);
        let d = cl.size();
        let xblocks: Vec<DMatrix<f64>> = (0..d)
            .map(|j| {
                let row: Vec<f64> = xs.row(j).iter().copied().collect();
                design_block(&row, q)
            })
            .collect();
        let rho_of = |a: usize, b: usize| fit.matrix[(cl.positions[a], cl.positions[b])];

        // Univariate block: X' Omega X with Omega the score covariance.
        for j in 0..d {
            j11 += xblocks[j].transpose() * fisher_block(&tables[j]) * &xblocks[j];
            for k in (j + 1)..d {
                let b = score_cross_block(&tables[j], &tables[k], rho_of(j, k))?;
                let cross = xblocks[j].transpose() * &b * &xblocks[k];
                j11 += &cross;
                j11 += cross.transpose();
            }
        }
        if m == 0 {
            continue;
        }

        let mut pairs = Vec::new();
        for j in 0..d {
            for k in (j + 1)..d {
                let pair = (cl.positions[j], cl.positions[k]);
                let jac = fit.structure.pair_jacobian(&fit.theta, pair, &fit.ctx);
                if jac.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let pt = pair_tables(&tables[j], &tables[k], rho_of(j, k))?;
                pairs.push(LocalPair { j, k, jac, pt });
            }
        }

        // Joint cell arrays over 3 or 4 margins are shared between the cross
        // and pair-pair terms through this memoized lookup.
        let mut arrays: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
        let mut joint_cells = |idx: &[usize]| -> Result<Vec<f64>> {
            if let Some((_, a)) = arrays.iter().find(|(i, _)| i == idx) {
                return Ok(a.clone());
            }
            let levels: Vec<Vec<f64>> = idx.iter().map(|&j| tables[j].z.clone()).collect();
            let dim = idx.len();
            let corr = DMatrix::from_fn(dim, dim, |a, b| {
                if a == b {
                    1.0
                } else {
                    rho_of(idx[a].min(idx[b]), idx[a].max(idx[b]))
                }
            });
            let cells = mvn_cell_array(&levels, &corr, MVN_TOL)?;
            arrays.push((idx.to_vec(), cells.clone()));
            Ok(cells)
        };

        // Pair x univariate cross block: for margins inside the pair the
        // expectation is bivariate (sum of drho times score); for outside
        // margins it needs the trivariate joint cells.
        for lp in &pairs {
            let mut row = DVector::zeros(r);
            let mut wj = DVector::zeros(q);
            let mut wk = DVector::zeros(q);
            for yj in 1..=kk {
                for yk in 1..=kk {
                    let dr = lp.pt.drho(yj, yk);
                    if dr == 0.0 {
                        continue;
                    }
                    for (c, v) in score_entries(&tables[lp.j], yj) {
                        wj[c] += dr * v;
                    }
                    for (c, v) in score_entries(&tables[lp.k], yk) {
                        wk[c] += dr * v;
                    }
                }
            }
            row += xblocks[lp.j].transpose() * wj;
            row += xblocks[lp.k].transpose() * wk;
            for l in 0..d {
                if l == lp.j || l == lp.k {
                    continue;
                }
                let mut idx = [lp.j, lp.k, l];
                idx.sort_unstable();
                let cells = joint_cells(&idx)?;
                let slot = |margin: usize| idx.iter().position(|&v| v == margin).unwrap();
                let (sj, sk, sl) = (slot(lp.j), slot(lp.k), slot(l));
                let mut wl = DVector::zeros(q);
                let mut ys = [1usize; 4];
                for (flat, &p3) in cells.iter().enumerate() {
                    if p3 == 0.0 {
                        continue;
                    }
                    decode_cells(flat, 3, kk, &mut ys);
                    let u = lp.pt.u(ys[sj], ys[sk]);
                    for (c, v) in score_entries(&tables[l], ys[sl]) {
                        wl[c] += p3 * u * v;
                    }
                }
                row += xblocks[l].transpose() * wl;
            }
            for (l, &jl) in lp.jac.iter().enumerate() {
                if jl == 0.0 {
                    continue;
                }
                for c in 0..r {
                    j21[(l, c)] += jl * row[c];
                }
            }
        }

        // Pair x pair block. The ordered sum over pair combinations maps to
        // jac_a e jac_b' for (a, b) plus the transpose for (b, a).
        for (a, pa) in pairs.iter().enumerate() {
            for pb in &pairs[a..] {
                let same = pa.j == pb.j && pa.k == pb.k;
                let e = if same {
                    let mut acc = 0.0;
                    for yj in 1..=kk {
                        for yk in 1..=kk {
                            let dr = pa.pt.drho(yj, yk);
                            acc += dr * dr / pa.pt.prob(yj, yk);
                        }
                    }
                    acc
                } else {
                    let mut idx: Vec<usize> = vec![pa.j, pa.k, pb.j, pb.k];
                    idx.sort_unstable();
                    idx.dedup();
                    let cells = joint_cells(&idx)?;
                    let slot = |margin: usize| idx.iter().position(|&v| v == margin).unwrap();
                    let (aj, ak, bj, bk) = (slot(pa.j), slot(pa.k), slot(pb.j), slot(pb.k));
                    let dim = idx.len();
                    let mut acc = 0.0;
                    let mut ys = [1usize; 4];
                    for (flat, &p) in cells.iter().enumerate() {
                        if p == 0.0 {
                            continue;
                        }
                        decode_cells(flat, dim, kk, &mut ys);
                        acc += p * pa.pt.u(ys[aj], ys[ak]) * pb.pt.u(ys[bj], ys[bk]);
                    }
                    acc
                };
                for (l, &jl) in pa.jac.iter().enumerate() {
                    if jl == 0.0 {
                        continue;
                    }
                    for (l2, &jl2) in pb.jac.iter().enumerate() {
                        if jl2 == 0.0 {
                            continue;
                        }
                        j22[(l, l2)] += jl * jl2 * e;
                        if !same {
                            j22[(l2, l)] += jl * jl2 * e;
                        }
                    }
                }
            }
        }
    }

    let mut j_mat = DMatrix::zeros(t, t);
    j_mat.view_mut((0, 0), (r, r)).copy_from(&(j11 / n));
    if m > 0 {
        let j21 = j21 / n;
        j_mat.view_mut((r, 0), (m, r)).copy_from(&j21);
        j_mat.view_mut((0, r), (r, m)).copy_from(&j21.transpose());
        j_mat.view_mut((r, r), (m, m)).copy_from(&(j22 / n));
    }
    Ok(j_mat)
}

/// One scored candidate model.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CriteriaReport {
    pub link: String,
    pub structure: String,
    pub covariates: Vec<String>,
    pub cols: Vec<usize>,
    pub theta: Vec<f64>,
    pub l2: f64,
    pub penalty_trace: f64,
    pub cl1aic: f64,
    pub cl1bic: f64,
    /// Free parameters: regression + cutpoints + correlation.
    pub t_params: usize,
    pub corr_converged: bool,
    pub warnings: Vec<String>,
}

impl CriteriaReport {
    pub fn descriptor(&self) -> String {
        let cov = if self.covariates.is_empty() {
            "none".to_string()
        } else {
            self.covariates.join("+")
        };
        format!("{}/{}/{}", self.link, self.structure, cov)
    }

    pub fn value(&self, by: Criterion) -> f64 {
        match by {
            Criterion::Cl1Aic => self.cl1aic,
            Criterion::Cl1Bic => self.cl1bic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Cl1Aic,
    Cl1Bic,
}

/// Criteria for one fitted model: -2 L2 plus 2 (or log n) times
/// tr(J H^{-1}).
pub fn cl1_criteria(
    data: &OrdinalDataset,
    link: &dyn Link,
    params: &UnivariateParams,
    cols: &[usize],
    fit: &CorrelationFit,
    mode: JMode,
) -> Result<CriteriaReport> {
    let h = assemble_h(data, link, params, cols, fit)?;
    let j = assemble_j(data, link, params, cols, fit, mode)?;
    let t = h.nrows();
    let lu = h.lu();
    let hinv_j = lu.solve(&j).ok_or_else(|| {
        Error::numerical("sensitivity matrix is singular; the model is not identified at this fit")
    })?;
    let penalty_trace = hinv_j.trace();
    let n = data.n_clusters() as f64;
    let l2 = fit.l2;
    let cl1aic = -2.0 * l2 + 2.0 * penalty_trace;
    let cl1bic = -2.0 * l2 + n.ln() * penalty_trace;
    if !cl1aic.is_finite() || !cl1bic.is_finite() {
        return Err(Error::numerical("information criteria are not finite"));
    }
    Ok(CriteriaReport {
        link: link.name().to_string(),
        structure: fit.structure.name().to_string(),
        covariates: cols
            .iter()
            .map(|&c| data.covariate_names()[c].clone())
            .collect(),
        cols: cols.to_vec(),
        theta: fit.theta.clone(),
        l2,
        penalty_trace,
        cl1aic,
        cl1bic,
        t_params: t,
        corr_converged: fit.converged,
        warnings: fit.warnings.clone(),
    })
}

/// A candidate model for the search: a correlation structure plus a
/// covariate column subset.
#[derive(Clone)]
pub struct Candidate {
    pub structure: Arc<dyn CorrStructure>,
    pub cols: Vec<usize>,
}

pub struct SearchOutcome {
    /// Scored candidates sorted ascending by the chosen criterion; ties go
    /// to fewer parameters, then to the lexicographic descriptor.
    pub ranked: Vec<CriteriaReport>,
    /// Candidates that failed to fit, with the error text.
    pub failures: Vec<(String, String)>,
}

/// Fit and score every candidate. Candidates are independent, so they run
/// in parallel; the output order is deterministic.
pub fn model_search(
    data: &OrdinalDataset,
    link: &dyn Link,
    candidates: &[Candidate],
    mode: JMode,
    by: Criterion,
    fit_opts: &FitOptions,
    cl1_opts: &Cl1Options,
) -> Result<SearchOutcome> {
    if candidates.is_empty() {
        return Err(Error::input("model search needs at least one candidate"));
    }
    let results: Vec<std::result::Result<CriteriaReport, (String, String)>> = candidates
        .par_iter()
        .map(|cand| {
            let describe = || {
                let cov: Vec<&str> = cand
                    .cols
                    .iter()
                    .map(|&c| data.covariate_names()[c].as_str())
                    .collect();
                format!(
                    "{}/{}/{}",
                    link.name(),
                    cand.structure.name(),
                    if cov.is_empty() { "none".into() } else { cov.join("+") }
                )
            };
            let run = || -> Result<CriteriaReport> {
                let (params, _) = fit_independent(data, link, &cand.cols, fit_opts)?;
                let fit = estimate_correlations(
                    data,
                    link,
                    &params,
                    &cand.cols,
                    cand.structure.clone(),
                    cl1_opts,
                )?;
                cl1_criteria(data, link, &params, &cand.cols, &fit, mode)
            };
            run().map_err(|e| (describe(), e.to_string()))
        })
        .collect();
    let mut ranked = Vec::new();
    let mut failures = Vec::new();
    for res in results {
        match res {
            Ok(rep) => ranked.push(rep),
            Err(fail) => failures.push(fail),
        }
    }
    sort_reports(&mut ranked, by);
    Ok(SearchOutcome { ranked, failures })
}

/// Rank scored candidates ascending by the chosen criterion; ties go to
/// fewer parameters, then to the lexicographic descriptor.
pub fn sort_reports(reports: &mut [CriteriaReport], by: Criterion) {
    reports.sort_by(|a, b| {
        a.value(by)
            .partial_cmp(&b.value(by))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.t_params.cmp(&b.t_params))
            .then(a.descriptor().cmp(&b.descriptor()))
    });
}
