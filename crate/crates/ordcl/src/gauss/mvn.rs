//! Multivariate normal rectangle probabilities in dimensions up to four.
//!
//! A rectangle of dimension m is reduced by conditioning on one coordinate:
//! the integrand phi(z) * P(conditional rectangle of dimension m-1) is smooth,
//! so adaptive Gauss-Kronrod brings the whole computation down to bivariate
//! kernel calls. Fully unbounded coordinates are marginalized out first.

use super::bvn::{bvn_rect, Rect2};
use super::quad::adaptive_gk;
use super::univariate::{norm_cdf, norm_pdf};
use crate::error::{Error, Result};
use nalgebra::DMatrix;

const INF: f64 = f64::INFINITY;
/// Conditioning variable is truncated here; the discarded normal mass is
/// below 1e-17.
const Z_TRUNC: f64 = 8.5;

/// Axis-aligned rectangle for a standard MVN with correlation matrix `corr`.
/// Invariants: matching dimensions in 1..=4, lower <= upper, corr symmetric
/// with unit diagonal and positive definite.
#[derive(Debug, Clone)]
pub struct RectD {
    lower: Vec<f64>,
    upper: Vec<f64>,
    corr: DMatrix<f64>,
}

impl RectD {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, corr: DMatrix<f64>) -> Result<Self> {
        let dim = lower.len();
        if dim == 0 || dim > 4 {
            return Err(Error::domain(format!(
                "RectD supports dimensions 1..=4, got {dim}"
            )));
        }
        if upper.len() != dim || corr.nrows() != dim || corr.ncols() != dim {
            return Err(Error::domain("RectD dimension mismatch"));
        }
        for i in 0..dim {
            if lower[i].is_nan() || upper[i].is_nan() {
                return Err(Error::domain("RectD bound is NaN"));
            }
            if lower[i] > upper[i] {
                return Err(Error::domain(format!(
                    "RectD lower {} exceeds upper {} in margin {i}",
                    lower[i], upper[i]
                )));
            }
        }
        check_corr(&corr)?;
        Ok(RectD { lower, upper, corr })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }
    pub fn upper(&self) -> &[f64] {
        &self.upper
    }
    pub fn corr(&self) -> &DMatrix<f64> {
        &self.corr
    }
}

fn check_corr(corr: &DMatrix<f64>) -> Result<()> {
    let dim = corr.nrows();
    for i in 0..dim {
        if (corr[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(Error::domain("correlation matrix must have unit diagonal"));
        }
        for j in 0..i {
            if (corr[(i, j)] - corr[(j, i)]).abs() > 1e-12 {
                return Err(Error::domain("correlation matrix must be symmetric"));
            }
        }
    }
    if dim > 1 && corr.clone().cholesky().is_none() {
        return Err(Error::domain("correlation matrix must be positive definite"));
    }
    Ok(())
}

/// P(lower < Z <= rect.upper) for the rectangle, to absolute tolerance `tol`.
pub fn mvn_rect(rect: &RectD, tol: f64) -> f64 {
    rect_prob(&rect.lower, &rect.upper, &rect.corr, tol.max(1e-13))
}

/// MVN cdf P(Z <= upper); a rectangle with all lower bounds at -inf.
pub fn mvn_cdf(upper: &[f64], corr: &DMatrix<f64>, tol: f64) -> Result<f64> {
    if upper.len() != corr.nrows() {
        return Err(Error::domain("mvn_cdf dimension mismatch"));
    }
    check_corr(corr)?;
    Ok(rect_prob(&vec![-INF; upper.len()], upper, corr, tol.max(1e-13)))
}

fn rect_prob(lower: &[f64], upper: &[f64], corr: &DMatrix<f64>, tol: f64) -> f64 {
    // marginalize coordinates that span the whole line
    let keep: Vec<usize> = (0..lower.len())
        .filter(|&i| !(lower[i] == -INF && upper[i] == INF))
        .collect();
    if keep.len() < lower.len() {
        if keep.is_empty() {
            return 1.0;
        }
        let l: Vec<f64> = keep.iter().map(|&i| lower[i]).collect();
        let u: Vec<f64> = keep.iter().map(|&i| upper[i]).collect();
        let c = corr.select_rows(keep.iter()).select_columns(keep.iter());
        return rect_prob(&l, &u, &c, tol);
    }
    match lower.len() {
        0 => 1.0,
        1 => (cdf_inf(upper[0]) - cdf_inf(lower[0])).clamp(0.0, 1.0),
        2 => {
            let rect = Rect2::new([lower[0], lower[1]], [upper[0], upper[1]], corr[(0, 1)])
                .expect("validated rectangle");
            bvn_rect(&rect)
        }
        _ => condition_once(lower, upper, corr, tol),
    }
}

fn cdf_inf(z: f64) -> f64 {
    if z == INF {
        1.0
    } else if z == -INF {
        0.0
    } else {
        norm_cdf(z)
    }
}

/// Integrate out the coordinate with the smallest marginal probability; the
/// remaining rectangle is conditioned on its value.
fn condition_once(lower: &[f64], upper: &[f64], corr: &DMatrix<f64>, tol: f64) -> f64 {
    let dim = lower.len();
    let c = (0..dim)
        .min_by(|&a, &b| {
            let pa = cdf_inf(upper[a]) - cdf_inf(lower[a]);
            let pb = cdf_inf(upper[b]) - cdf_inf(lower[b]);
            pa.partial_cmp(&pb).unwrap()
        })
        .unwrap();
    let rest: Vec<usize> = (0..dim).filter(|&i| i != c).collect();

    let scale: Vec<f64> = rest
        .iter()
        .map(|&j| {
            let r = corr[(j, c)];
            ((1.0 - r) * (1.0 + r)).max(1e-12).sqrt()
        })
        .collect();
    let m = rest.len();
    let mut cond_corr = DMatrix::identity(m, m);
    for a in 0..m {
        for b in 0..a {
            let (ja, jb) = (rest[a], rest[b]);
            let r = (corr[(ja, jb)] - corr[(ja, c)] * corr[(jb, c)]) / (scale[a] * scale[b]);
            let r = r.clamp(-(1.0 - 1e-12), 1.0 - 1e-12);
            cond_corr[(a, b)] = r;
            cond_corr[(b, a)] = r;
        }
    }

    let a = lower[c].max(-Z_TRUNC);
    let b = upper[c].min(Z_TRUNC);
    if a >= b {
        return 0.0;
    }
    let inner_tol = (tol / 8.0).max(1e-14);
    let mut integrand = |z: f64| {
        let mut l = Vec::with_capacity(m);
        let mut u = Vec::with_capacity(m);
        for a_idx in 0..m {
            let j = rest[a_idx];
            let r = corr[(j, c)];
            let s = scale[a_idx];
            l.push(if lower[j] == -INF { -INF } else { (lower[j] - r * z) / s });
            u.push(if upper[j] == INF { INF } else { (upper[j] - r * z) / s });
        }
        norm_pdf(z) * rect_prob(&l, &u, &cond_corr, inner_tol)
    };
    adaptive_gk(&mut integrand, a, b, 0.9 * tol).clamp(0.0, 1.0)
}

/// All cell probabilities of a lattice in up to four dimensions.
///
/// `levels[i]` holds the cuts of axis i, from -inf to +inf strictly
/// increasing; axis i then has levels[i].len() - 1 cells. The result is
/// row-major over cell indices. Node cdf values are computed once and
/// differenced along each axis, so the cost is one cdf per lattice node
/// rather than one rectangle per cell.
pub fn mvn_cell_array(levels: &[Vec<f64>], corr: &DMatrix<f64>, tol: f64) -> Result<Vec<f64>> {
    let dim = levels.len();
    if dim == 0 || dim > 4 {
        return Err(Error::domain(format!(
            "mvn_cell_array supports dimensions 1..=4, got {dim}"
        )));
    }
    if corr.nrows() != dim || corr.ncols() != dim {
        return Err(Error::domain("mvn_cell_array dimension mismatch"));
    }
    check_corr(corr)?;
    for cuts in levels {
        if cuts.len() < 2 || cuts[0] != -INF || *cuts.last().unwrap() != INF {
            return Err(Error::domain(
                "cut vector must run from -inf to +inf with at least one cell",
            ));
        }
        for w in cuts.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::domain("cut vector must be strictly increasing"));
            }
        }
    }

    let node_dims: Vec<usize> = levels.iter().map(|c| c.len()).collect();
    let node_tol = (tol / (1 << dim) as f64).max(1e-13);
    let total: usize = node_dims.iter().product();
    let mut nodes = vec![0.0f64; total];
    let mut idx = vec![0usize; dim];
    for node in nodes.iter_mut() {
        let upper: Vec<f64> = (0..dim).map(|i| levels[i][idx[i]]).collect();
        *node = if upper.iter().any(|&z| z == -INF) {
            0.0
        } else {
            rect_prob(&vec![-INF; dim], &upper, corr, node_tol)
        };
        advance(&mut idx, &node_dims);
    }

    // difference along each axis in turn
    let mut dims = node_dims;
    let mut vals = nodes;
    for axis in 0..dim {
        let mut out_dims = dims.clone();
        out_dims[axis] -= 1;
        let out_total: usize = out_dims.iter().product();
        let mut out = vec![0.0f64; out_total];
        let strides = strides_of(&dims);
        let out_strides = strides_of(&out_dims);
        let mut oidx = vec![0usize; dim];
        for slot in out.iter_mut() {
            let base: usize = (0..dim).map(|i| oidx[i] * strides[i]).sum();
            *slot = vals[base + strides[axis]] - vals[base];
            advance(&mut oidx, &out_dims);
        }
        let _ = out_strides;
        dims = out_dims;
        vals = out;
    }
    for v in vals.iter_mut() {
        *v = v.max(0.0);
    }
    Ok(vals)
}

fn strides_of(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

fn advance(idx: &mut [usize], dims: &[usize]) {
    for i in (0..idx.len()).rev() {
        idx[i] += 1;
        if idx[i] < dims[i] {
            return;
        }
        idx[i] = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn exch_corr(dim: usize, rho: f64) -> DMatrix<f64> {
        DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { rho })
    }

    #[test]
    fn trivariate_orthant_closed_form() {
        // P(Z <= 0 componentwise) = 1/8 + (asin r12 + asin r13 + asin r23)/(4 pi)
        let cases: [(f64, f64, f64); 4] =
            [(0.5, 0.5, 0.5), (0.3, -0.2, 0.4), (0.0, 0.0, 0.0), (0.8, 0.1, 0.2)];
        for &(r12, r13, r23) in &cases {
            let mut corr = DMatrix::identity(3, 3);
            corr[(0, 1)] = r12;
            corr[(1, 0)] = r12;
            corr[(0, 2)] = r13;
            corr[(2, 0)] = r13;
            corr[(1, 2)] = r23;
            corr[(2, 1)] = r23;
            let exact =
                0.125 + (r12.asin() + r13.asin() + r23.asin()) / (4.0 * PI);
            let got = mvn_cdf(&[0.0, 0.0, 0.0], &corr, 1e-10).unwrap();
            assert_abs_diff_eq!(got, exact, epsilon = 1e-8);
        }
        // the exchangeable rho = 1/2 case is exactly 1/4
        let got = mvn_cdf(&[0.0, 0.0, 0.0], &exch_corr(3, 0.5), 1e-10).unwrap();
        assert_abs_diff_eq!(got, 0.25, epsilon = 1e-9);
    }

    #[test]
    fn independence_factorizes_dim3_and_dim4() {
        let l = [-1.0, -0.5, 0.0, -2.0];
        let u = [0.5, 1.5, 2.0, 0.3];
        for dim in [3usize, 4] {
            let corr = DMatrix::identity(dim, dim);
            let rect = RectD::new(l[..dim].to_vec(), u[..dim].to_vec(), corr).unwrap();
            let got = mvn_rect(&rect, 1e-10);
            let exact: f64 = (0..dim).map(|i| norm_cdf(u[i]) - norm_cdf(l[i])).product();
            assert_abs_diff_eq!(got, exact, epsilon = 1e-9);
        }
    }

    #[test]
    fn unbounded_margin_collapses_to_bvn() {
        let mut corr = exch_corr(3, 0.4);
        corr[(0, 2)] = -0.1;
        corr[(2, 0)] = -0.1;
        let rect3 = RectD::new(
            vec![-1.0, -f64::INFINITY, -0.8],
            vec![0.7, f64::INFINITY, 1.2],
            corr,
        )
        .unwrap();
        let rect2 = Rect2::new([-1.0, -0.8], [0.7, 1.2], -0.1).unwrap();
        assert_abs_diff_eq!(mvn_rect(&rect3, 1e-10), bvn_rect(&rect2), epsilon = 1e-12);
    }

    /// Tensor Gauss-Legendre oracle for finite boxes using the raw density.
    fn gl_box_oracle(l: &[f64], u: &[f64], corr: &DMatrix<f64>) -> f64 {
        let dim = l.len();
        let prec = corr.clone().try_inverse().unwrap();
        let det = corr.determinant();
        let norm = 1.0 / ((2.0 * PI).powi(dim as i32) * det).sqrt();
        // 20-point Gauss-Legendre nodes/weights on [-1, 1]
        let half: [(f64, f64); 10] = [
            (0.01761400713915212, 0.9931285991850949),
            (0.04060142980038694, 0.9639719272779138),
            (0.06267204833410906, 0.9122344282513259),
            (0.08327674157670475, 0.8391169718222188),
            (0.1019301198172404, 0.7463319064601508),
            (0.1181945319615184, 0.6360536807265150),
            (0.1316886384491766, 0.5108670019508271),
            (0.1420961093183820, 0.3737060887154195),
            (0.1491729864726037, 0.2277858511416451),
            (0.1527533871307258, 0.07652652113349734),
        ];
        let mut nodes = Vec::with_capacity(20);
        for &(w, x) in &half {
            nodes.push((w, -x));
            nodes.push((w, x));
        }
        let mut total = 0.0;
        let mut idx = vec![0usize; dim];
        let counts = vec![20usize; dim];
        loop {
            let mut wt = 1.0;
            let mut z = vec![0.0; dim];
            for i in 0..dim {
                let (w, x) = nodes[idx[i]];
                let h = 0.5 * (u[i] - l[i]);
                wt *= w * h;
                z[i] = 0.5 * (u[i] + l[i]) + h * x;
            }
            let zv = nalgebra::DVector::from_vec(z);
            let q = (&prec * &zv).dot(&zv);
            total += wt * norm * (-0.5 * q).exp();
            // advance multi-index
            let mut done = true;
            for i in (0..dim).rev() {
                idx[i] += 1;
                if idx[i] < counts[i] {
                    done = false;
                    break;
                }
                idx[i] = 0;
            }
            if done {
                break;
            }
        }
        total
    }

    #[test]
    fn dim3_matches_tensor_quadrature() {
        let mut corr = DMatrix::identity(3, 3);
        let rs = [(0, 1, 0.55), (0, 2, -0.3), (1, 2, 0.2)];
        for &(i, j, r) in &rs {
            corr[(i, j)] = r;
            corr[(j, i)] = r;
        }
        let l = vec![-1.5, -1.0, -2.0];
        let u = vec![0.8, 1.7, 0.4];
        let rect = RectD::new(l.clone(), u.clone(), corr.clone()).unwrap();
        assert_abs_diff_eq!(
            mvn_rect(&rect, 1e-9),
            gl_box_oracle(&l, &u, &corr),
            epsilon = 1e-8
        );
    }

    #[test]
    fn dim4_matches_tensor_quadrature_and_product_rule() {
        let mut corr = DMatrix::identity(4, 4);
        for &(i, j, r) in &[
            (0usize, 1usize, 0.5),
            (0, 2, 0.25),
            (0, 3, -0.15),
            (1, 2, 0.3),
            (1, 3, 0.1),
            (2, 3, 0.45),
        ] {
            corr[(i, j)] = r;
            corr[(j, i)] = r;
        }
        let l = vec![-1.2, -0.8, -1.5, -1.0];
        let u = vec![0.6, 1.1, 0.9, 1.4];
        let rect = RectD::new(l.clone(), u.clone(), corr.clone()).unwrap();
        assert_abs_diff_eq!(
            mvn_rect(&rect, 1e-8),
            gl_box_oracle(&l, &u, &corr),
            epsilon = 1e-6
        );

        // block diagonal correlation factorizes into two bivariate rectangles
        let mut block = DMatrix::identity(4, 4);
        block[(0, 1)] = 0.6;
        block[(1, 0)] = 0.6;
        block[(2, 3)] = -0.4;
        block[(3, 2)] = -0.4;
        let rect4 = RectD::new(l.clone(), u.clone(), block).unwrap();
        let pa = bvn_rect(&Rect2::new([l[0], l[1]], [u[0], u[1]], 0.6).unwrap());
        let pb = bvn_rect(&Rect2::new([l[2], l[3]], [u[2], u[3]], -0.4).unwrap());
        assert_abs_diff_eq!(mvn_rect(&rect4, 1e-8), pa * pb, epsilon = 1e-7);
    }

    #[test]
    fn additivity_when_split_along_an_axis() {
        let corr = exch_corr(3, 0.35);
        let l = vec![-1.0, -1.0, -1.0];
        let u = vec![1.0, 1.5, 2.0];
        let whole = mvn_rect(&RectD::new(l.clone(), u.clone(), corr.clone()).unwrap(), 1e-9);
        let mut u_left = u.clone();
        u_left[1] = 0.2;
        let mut l_right = l.clone();
        l_right[1] = 0.2;
        let left = mvn_rect(&RectD::new(l.clone(), u_left, corr.clone()).unwrap(), 1e-9);
        let right = mvn_rect(&RectD::new(l_right, u.clone(), corr).unwrap(), 1e-9);
        assert_abs_diff_eq!(whole, left + right, epsilon = 1e-8);
    }

    #[test]
    fn permutation_invariance() {
        let mut corr = DMatrix::identity(3, 3);
        for &(i, j, r) in &[(0usize, 1usize, 0.45), (0, 2, -0.25), (1, 2, 0.15)] {
            corr[(i, j)] = r;
            corr[(j, i)] = r;
        }
        let l = vec![-0.9, -1.4, -0.3];
        let u = vec![1.3, 0.6, 1.9];
        let p = mvn_rect(&RectD::new(l.clone(), u.clone(), corr.clone()).unwrap(), 1e-10);
        let perm = [2usize, 0, 1];
        let lp: Vec<f64> = perm.iter().map(|&i| l[i]).collect();
        let up: Vec<f64> = perm.iter().map(|&i| u[i]).collect();
        let cp = DMatrix::from_fn(3, 3, |a, b| corr[(perm[a], perm[b])]);
        let q = mvn_rect(&RectD::new(lp, up, cp).unwrap(), 1e-10);
        assert_abs_diff_eq!(p, q, epsilon = 1e-9);
    }

    #[test]
    fn cell_array_sums_to_one_and_matches_rects() {
        let inf = f64::INFINITY;
        let levels = vec![
            vec![-inf, -0.5, 0.5, inf],
            vec![-inf, 0.0, inf],
            vec![-inf, -1.0, 1.0, inf],
        ];
        let corr = exch_corr(3, 0.3);
        let cells = mvn_cell_array(&levels, &corr, 1e-8).unwrap();
        assert_eq!(cells.len(), 3 * 2 * 3);
        let total: f64 = cells.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-7);
        // spot check one interior cell against a direct rectangle
        let rect = RectD::new(vec![-0.5, 0.0, -1.0], vec![0.5, inf, 1.0], corr).unwrap();
        // cell index (1, 1, 1) in row-major over dims (3, 2, 3)
        let got = cells[1 * 6 + 1 * 3 + 1];
        assert_abs_diff_eq!(got, mvn_rect(&rect, 1e-9), epsilon = 1e-7);
    }

    #[test]
    fn rejects_bad_inputs() {
        let corr_bad = DMatrix::from_row_slice(2, 2, &[1.0, 1.2, 1.2, 1.0]);
        assert!(RectD::new(vec![-1.0, -1.0], vec![1.0, 1.0], corr_bad).is_err());
        let corr = DMatrix::identity(2, 2);
        assert!(RectD::new(vec![1.0, -1.0], vec![0.0, 1.0], corr.clone()).is_err());
        assert!(RectD::new(vec![-1.0], vec![1.0], corr.clone()).is_err());
        assert!(mvn_cell_array(&[vec![-f64::INFINITY, 0.0]], &DMatrix::identity(1, 1), 1e-8).is_err());
    }
}
