//! Second stage: pairwise likelihood for the latent correlation structure.
//!
//! With the marginal parameters frozen at the first-stage fit, each observed
//! category becomes a normal-score interval. The probability of a pair of
//! observations is a bivariate normal rectangle, and the sum of log pair
//! probabilities over all within-cluster pairs is maximized over the
//! structure's free parameters, one safeguarded line search per coordinate.

use crate::corr::{repair_pd, CorrContext, CorrStructure};
use crate::data::OrdinalDataset;
use crate::error::{Error, Result};
use crate::gauss::{bvn_rect, bvn_rect_drho, Rect2};
use crate::link::Link;
use crate::margins::{obs_tables, UnivariateParams};
use crate::optim::maximize_scored;
use nalgebra::DMatrix;
use std::sync::Arc;

/// Pair probabilities below this floor are clamped before logs and division.
pub const PROB_FLOOR: f64 = 1e-12;

/// Probability of an observed pair of categories under the working model.
pub fn pair_prob(
    link: &dyn Link,
    params: &UnivariateParams,
    x_j: &[f64],
    x_k: &[f64],
    y_j: usize,
    y_k: usize,
    rho: f64,
) -> Result<f64> {
    let k = params.k();
    if y_j < 1 || y_j > k || y_k < 1 || y_k > k {
        return Err(Error::domain(format!("categories must lie in 1..={k}")));
    }
    let tj = obs_tables(link, params, x_j);
    let tk = obs_tables(link, params, x_k);
    let rect = Rect2::new(
        [tj.z[y_j - 1], tk.z[y_k - 1]],
        [tj.z[y_j], tk.z[y_k]],
        rho,
    )?;
    Ok(bvn_rect(&rect))
}

/// Normal-score interval of each observation at the first-stage fit; the
/// only margin information the second stage needs.
#[derive(Debug, Clone)]
pub struct BoundsCache {
    /// Per cluster, per observation: (z_lower, z_upper).
    pub bounds: Vec<Vec<(f64, f64)>>,
}

impl BoundsCache {
    pub fn build(
        data: &OrdinalDataset,
        link: &dyn Link,
        params: &UnivariateParams,
        cols: &[usize],
    ) -> Self {
        let bounds = data
            .clusters()
            .iter()
            .map(|cl| {
                let x = cl.x_subset(cols);
                cl.y
                    .iter()
                    .enumerate()
                    .map(|(j, &y)| {
                        let t = obs_tables(link, params, x.row(j).transpose().as_slice());
                        (t.z[y - 1], t.z[y])
                    })
                    .collect()
            })
            .collect();
        BoundsCache { bounds }
    }
}

fn rect_for(b_j: (f64, f64), b_k: (f64, f64), rho: f64) -> Rect2 {
    Rect2::new([b_j.0, b_k.0], [b_j.1, b_k.1], rho).expect("cached bounds are ordered")
}

/// Pairwise log likelihood at theta; also reports how many pair
/// probabilities were floored.
pub fn cl1_loglik(
    cache: &BoundsCache,
    data: &OrdinalDataset,
    structure: &dyn CorrStructure,
    theta: &[f64],
    ctx: &CorrContext,
) -> (f64, usize) {
    let mut ll = 0.0;
    let mut floored = 0;
    for (ci, cl) in data.clusters().iter().enumerate() {
        let bs = &cache.bounds[ci];
        for a in 0..cl.positions.len() {
            for b in (a + 1)..cl.positions.len() {
                let pair = (cl.positions[a], cl.positions[b]);
                let rho = structure.pair_rho(theta, pair, ctx);
                let p = bvn_rect(&rect_for(bs[a], bs[b], rho));
                if p < PROB_FLOOR {
                    floored += 1;
                }
                ll += p.max(PROB_FLOOR).ln();
            }
        }
    }
    (ll, floored)
}

/// Gradient of the pairwise log likelihood in the free parameters.
pub fn cl1_score(
    cache: &BoundsCache,
    data: &OrdinalDataset,
    structure: &dyn CorrStructure,
    theta: &[f64],
    ctx: &CorrContext,
) -> Vec<f64> {
    let m = theta.len();
    let mut g = vec![0.0; m];
    for (ci, cl) in data.clusters().iter().enumerate() {
        let bs = &cache.bounds[ci];
        for a in 0..cl.positions.len() {
            for b in (a + 1)..cl.positions.len() {
                let pair = (cl.positions[a], cl.positions[b]);
                let jac = structure.pair_jacobian(theta, pair, ctx);
                if jac.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let rho = structure.pair_rho(theta, pair, ctx);
                let rect = rect_for(bs[a], bs[b], rho);
                let p = bvn_rect(&rect).max(PROB_FLOOR);
                let u = bvn_rect_drho(&rect) / p;
                for c in 0..m {
                    g[c] += u * jac[c];
                }
            }
        }
    }
    g
}

#[derive(Debug, Clone, Copy)]
pub struct Cl1Options {
    /// Componentwise tolerance on the pairwise-likelihood score.
    pub score_tol: f64,
    /// Grid points for bracketing each line search.
    pub grid: usize,
    pub max_sweeps: usize,
}

impl Default for Cl1Options {
    fn default() -> Self {
        Cl1Options { score_tol: 1e-6, grid: 32, max_sweeps: 12 }
    }
}

/// Fitted correlation structure at the first-stage margins.
#[derive(Clone)]
pub struct CorrelationFit {
    pub structure: Arc<dyn CorrStructure>,
    pub theta: Vec<f64>,
    pub ctx: CorrContext,
    /// Full working correlation matrix, positive definite (repaired if the
    /// raw unstructured estimate was not).
    pub matrix: DMatrix<f64>,
    pub l2: f64,
    pub floored_pairs: usize,
    pub pd_repaired: bool,
    pub converged: bool,
    pub max_score: f64,
    pub warnings: Vec<String>,
}

impl std::fmt::Debug for CorrelationFit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CorrelationFit")
            .field("structure", &self.structure.name())
            .field("theta", &self.theta)
            .field("l2", &self.l2)
            .field("converged", &self.converged)
            .finish()
    }
}

/// Maximize the pairwise likelihood over the structure parameters by cyclic
/// safeguarded line searches; coordinates of separable structures converge
/// in a single sweep.
pub fn estimate_correlations(
    data: &OrdinalDataset,
    link: &dyn Link,
    params: &UnivariateParams,
    cols: &[usize],
    structure: Arc<dyn CorrStructure>,
    opts: &Cl1Options,
) -> Result<CorrelationFit> {
    let ctx = CorrContext::from_dataset(data);
    let cache = BoundsCache::build(data, link, params, cols);
    let m = structure.param_count(&ctx);
    let mut warnings = Vec::new();

    let n_pairs: usize = data
        .clusters()
        .iter()
        .map(|c| c.size() * (c.size().saturating_sub(1)) / 2)
        .sum();
    if m > 0 && n_pairs == 0 {
        warnings.push("no within-cluster pairs; correlation parameters not estimable".into());
        let theta = vec![0.0; m];
        let matrix = structure.corr_matrix(&theta, &ctx);
        return Ok(CorrelationFit {
            structure,
            theta,
            ctx,
            matrix,
            l2: 0.0,
            floored_pairs: 0,
            pd_repaired: false,
            converged: true,
            max_score: 0.0,
            warnings,
        });
    }

    let bounds = structure.bounds(&ctx);
    let mut theta = structure.init(&ctx);
    let mut converged = m == 0;
    let mut max_score = 0.0;
    for _sweep in 0..opts.max_sweeps {
        if m == 0 {
            break;
        }
        for c in 0..m {
            let (lo, hi) = bounds[c];
            let mut th = theta.clone();
            let line = maximize_scored(
                |t| {
                    th[c] = t;
                    cl1_score(&cache, data, structure.as_ref(), &th, &ctx)[c]
                },
                lo,
                hi,
                opts.grid,
                opts.score_tol,
            );
            theta[c] = line.theta;
            if line.at_boundary {
                warnings.push(format!(
                    "correlation parameter {c} clamped at boundary {:.6}",
                    line.theta
                ));
            }
            if !line.converged {
                warnings.push(format!("line search for correlation parameter {c} stalled"));
            }
        }
        let score = cl1_score(&cache, data, structure.as_ref(), &theta, &ctx);
        max_score = score.iter().fold(0.0f64, |acc, s| acc.max(s.abs()));
        let at_edge = (0..m).any(|c| theta[c] <= bounds[c].0 || theta[c] >= bounds[c].1);
        if max_score <= opts.score_tol || at_edge {
            converged = true;
            break;
        }
    }
    if !converged {
        warnings.push(format!(
            "pairwise likelihood score {max_score:.3e} above tolerance after sweeps"
        ));
    }

    let raw = structure.corr_matrix(&theta, &ctx);
    let (matrix, pd_repaired) = repair_pd(&raw);
    if pd_repaired {
        warnings.push("unstructured correlation estimate repaired to positive definite".into());
    }
    let (l2, floored_pairs) = cl1_loglik(&cache, data, structure.as_ref(), &theta, &ctx);
    Ok(CorrelationFit {
        structure,
        theta,
        ctx,
        matrix,
        l2,
        floored_pairs,
        pd_repaired,
        converged,
        max_score,
        warnings,
    })
}
