//! Exact maximum likelihood for the exchangeable Gumbel model in low
//! dimensions. Cluster cell probabilities come from coordinatewise
//! differencing of the Archimedean cdf, so the cost doubles with every extra
//! occasion; the fit is only offered for clusters of size up to three, where
//! it serves as a gold standard for the estimating-equation methods.

use nalgebra::{DMatrix, DVector};

use crate::data::OrdinalDataset;
use crate::error::{Error, Result};
use crate::link::Link;
use crate::margins::{fit_independent, obs_tables, FitOptions, UnivariateParams};
use crate::optim::nelder_mead;

/// Archimedean cdf with generator t -> exp(-t^{1/theta}) at uniform
/// coordinates. Any zero coordinate collapses the value to zero; unit
/// coordinates drop out.
pub fn gumbel_cdf(u: &[f64], theta: f64) -> f64 {
    let mut s = 0.0;
    for &ui in u {
        if ui <= 0.0 {
            return 0.0;
        }
        if ui < 1.0 {
            s += (-ui.ln()).powf(theta);
        }
    }
    if s == 0.0 {
        return 1.0;
    }
    (-s.powf(1.0 / theta)).exp()
}

/// Joint probability of one cell by recursive coordinatewise differencing of
/// the cdf between the cumulative bounds cum[j] = [F(y_j - 1), F(y_j)].
pub fn gumbel_cell_pmf(cum: &[[f64; 2]], theta: f64) -> f64 {
    fn diff(cum: &[[f64; 2]], j: usize, point: &mut Vec<f64>, theta: f64) -> f64 {
        if j == cum.len() {
            return gumbel_cdf(point, theta);
        }
        point.push(cum[j][1]);
        let hi = diff(cum, j + 1, point, theta);
        point.pop();
        point.push(cum[j][0]);
        let lo = diff(cum, j + 1, point, theta);
        point.pop();
        hi - lo
    }
    diff(cum, 0, &mut Vec::with_capacity(cum.len()), theta)
}

fn negative_loglik(
    data: &OrdinalDataset,
    link: &dyn Link,
    cols: &[usize],
    params: &UnivariateParams,
    theta: f64,
) -> f64 {
    let mut nll = 0.0;
    for cl in data.clusters() {
        let xs = cl.x_subset(cols);
        let mut cum = Vec::with_capacity(cl.y.len());
        for (j, &y) in cl.y.iter().enumerate() {
            let row: Vec<f64> = xs.row(j).iter().copied().collect();
            let t = obs_tables(link, params, &row);
            cum.push([t.cdf[y - 1], t.cdf[y]]);
        }
        nll -= gumbel_cell_pmf(&cum, theta).max(1e-300).ln();
    }
    nll
}

/// Maximum likelihood estimates for the exchangeable Gumbel model.
#[derive(Debug)]
pub struct GumbelMlFit {
    pub params: UnivariateParams,
    pub theta: f64,
    /// Delta-method standard errors in the order (beta, gamma, theta). At
    /// the independence boundary theta = 1 the theta entry degenerates.
    pub se: Vec<f64>,
    pub loglik: f64,
    pub nll_evaluations: usize,
}

/// Fit by simplex search over free coordinates: beta, the first cutpoint,
/// log cutpoint increments, and log(theta - 1). The transform keeps every
/// iterate admissible, so no penalty bookkeeping is needed.
pub fn gumbel_ml_oracle(
    data: &OrdinalDataset,
    link: &dyn Link,
    cols: &[usize],
) -> Result<GumbelMlFit> {
    let dmax = data.clusters().iter().map(|c| c.y.len()).max().unwrap_or(0);
    if dmax > 3 {
        return Err(Error::input(format!(
            "the exact likelihood oracle handles clusters of size at most 3, got {dmax}"
        )));
    }
    let (start, _) = fit_independent(data, link, cols, &FitOptions::default())?;
    let p = start.p();
    let q = start.gamma.len();

    let unpack = |v: &[f64]| -> (UnivariateParams, f64) {
        let beta = DVector::from_iterator(p, v[..p].iter().copied());
        let mut gamma = Vec::with_capacity(q);
        gamma.push(v[p]);
        for m in 1..q {
            gamma.push(gamma[m - 1] + v[p + m].exp());
        }
        let params = UnivariateParams::new(beta, DVector::from_vec(gamma))
            .expect("positive increments keep cutpoints ordered");
        (params, 1.0 + v[p + q].exp())
    };
    let mut start_v: Vec<f64> = start.beta.iter().copied().collect();
    start_v.push(start.gamma[0]);
    for m in 1..q {
        start_v.push((start.gamma[m] - start.gamma[m - 1]).ln());
    }
    start_v.push(0.5_f64.ln()); // theta = 1.5

    let mut evals = 0usize;
    let mut obj = |v: &[f64]| -> f64 {
        evals += 1;
        let (params, theta) = unpack(v);
        negative_loglik(data, link, cols, &params, theta)
    };
    let (sol, _) = nelder_mead(&mut obj, &start_v, 0.2, 1e-10, 3000);
    let (sol, nll) = nelder_mead(&mut obj, &sol, 0.02, 1e-12, 3000);
    let (params, theta) = unpack(&sol);

    // numeric Hessian in the free coordinates, then the delta method back to
    // the natural ones
    let t = sol.len();
    let h: Vec<f64> = sol.iter().map(|x| 1e-4 * (1.0 + x.abs())).collect();
    let mut hess = DMatrix::zeros(t, t);
    let f0 = {
        let (pr, th) = unpack(&sol);
        negative_loglik(data, link, cols, &pr, th)
    };
    let eval_at = |v: &[f64]| -> f64 {
        let (pr, th) = unpack(v);
        negative_loglik(data, link, cols, &pr, th)
    };
    for i in 0..t {
        let mut vp = sol.clone();
        let mut vm = sol.clone();
        vp[i] += h[i];
        vm[i] -= h[i];
        hess[(i, i)] = (eval_at(&vp) - 2.0 * f0 + eval_at(&vm)) / (h[i] * h[i]);
        for j in 0..i {
            let mut vpp = sol.clone();
            let mut vpm = sol.clone();
            let mut vmp = sol.clone();
            let mut vmm = sol.clone();
            vpp[i] += h[i];
            vpp[j] += h[j];
            vpm[i] += h[i];
            vpm[j] -= h[j];
            vmp[i] -= h[i];
            vmp[j] += h[j];
            vmm[i] -= h[i];
            vmm[j] -= h[j];
            let v = (eval_at(&vpp) - eval_at(&vpm) - eval_at(&vmp) + eval_at(&vmm))
                / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let cov_free = match hess.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => hess
            .svd(true, true)
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::numerical(format!("oracle Hessian inversion failed: {e}")))?,
    };
    // jacobian of (beta, gamma, theta) with respect to the free coordinates
    let mut jac = DMatrix::zeros(t, t);
    for i in 0..p {
        jac[(i, i)] = 1.0;
    }
    for m in 0..q {
        jac[(p + m, p)] = 1.0;
        for l in 1..=m {
            jac[(p + m, p + l)] = sol[p + l].exp();
        }
    }
    jac[(p + q, p + q)] = sol[p + q].exp();
    let cov = &jac * cov_free * jac.transpose();
    let se: Vec<f64> = (0..t).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();

    Ok(GumbelMlFit { params, theta, se, loglik: -nll, nll_evaluations: evals })
}
