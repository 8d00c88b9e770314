//! Covariate layouts for the simulation experiments and the inverse-cdf
//! discretization that turns copula uniforms into ordinal responses.

use nalgebra::DMatrix;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::Link;
use crate::margins::UnivariateParams;

use super::copula::{CopulaSampler, GumbelCopula};

/// Named covariate layouts. None of them carries an intercept column: a
/// constant regression term is absorbed into the cutpoints, so designs that
/// conceptually include one fold it into gamma instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    /// x1: cluster-level group indicator in {0,1}; x2: time-varying uniform
    /// with serial Gumbel dependence (tau 0.5) within the cluster;
    /// x3 = x1 * x2; x4: cluster-level noise uniform on [-1,1].
    Efficiency,
    /// x1: time-varying Bernoulli(1/2); time: the index j-1 of the repeated
    /// measurement.
    SelectionStructure,
    /// The structure layout plus two observation-level noise uniforms on
    /// [-1,1], independent of everything else.
    SelectionVariables,
}

impl DesignKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "efficiency" => Ok(DesignKind::Efficiency),
            "selection_structure" => Ok(DesignKind::SelectionStructure),
            "selection_variables" => Ok(DesignKind::SelectionVariables),
            _ => Err(Error::input(format!("unknown covariate design '{s}'"))),
        }
    }

    pub fn names(&self) -> Vec<String> {
        let names: &[&str] = match self {
            DesignKind::Efficiency => &["x1", "x2", "x3", "x4"],
            DesignKind::SelectionStructure => &["x1", "time"],
            DesignKind::SelectionVariables => &["x1", "time", "x3", "x4"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    pub fn p(&self) -> usize {
        self.names().len()
    }
}

/// Draw per-cluster covariate matrices (d rows, one column per name).
pub fn covariate_design(
    kind: DesignKind,
    n: usize,
    d: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<DMatrix<f64>>> {
    let mut out = Vec::with_capacity(n);
    match kind {
        DesignKind::Efficiency => {
            let serial = GumbelCopula::new(d, 2.0)?;
            for _ in 0..n {
                let g = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
                let u = serial.sample_row(&mut *rng);
                let noise = 2.0 * rng.random::<f64>() - 1.0;
                out.push(DMatrix::from_fn(d, 4, |j, c| match c {
                    0 => g,
                    1 => u[j],
                    2 => g * u[j],
                    _ => noise,
                }));
            }
        }
        DesignKind::SelectionStructure => {
            for _ in 0..n {
                let b: Vec<f64> = (0..d)
                    .map(|_| if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 })
                    .collect();
                out.push(DMatrix::from_fn(d, 2, |j, c| if c == 0 { b[j] } else { j as f64 }));
            }
        }
        DesignKind::SelectionVariables => {
            for _ in 0..n {
                let b: Vec<f64> = (0..d)
                    .map(|_| if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 })
                    .collect();
                let u3: Vec<f64> = (0..d).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
                let u4: Vec<f64> = (0..d).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
                out.push(DMatrix::from_fn(d, 4, |j, c| match c {
                    0 => b[j],
                    1 => j as f64,
                    2 => u3[j],
                    _ => u4[j],
                }));
            }
        }
    }
    Ok(out)
}

/// Inverse-cdf discretization: for each row of x, the response is the
/// smallest category whose cumulative marginal probability reaches the
/// uniform coordinate. Larger u never yields a smaller category.
pub fn ordinalize(
    link: &dyn Link,
    params: &UnivariateParams,
    x: &DMatrix<f64>,
    u: &[f64],
) -> Vec<usize> {
    debug_assert_eq!(x.nrows(), u.len());
    debug_assert_eq!(x.ncols(), params.p());
    let q = params.gamma.len();
    u.iter()
        .enumerate()
        .map(|(j, &uj)| {
            let nu: f64 = x.row(j).iter().zip(params.beta.iter()).map(|(a, b)| a * b).sum();
            for m in 0..q {
                if uj <= link.cdf(params.gamma[m] + nu) {
                    return m + 1;
                }
            }
            q + 1
        })
        .collect()
}

/// Cutpoints making the K categories equiprobable at linear predictor zero:
/// the link quantiles of m/K.
pub fn equiprobable_cutpoints(link: &dyn Link, k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::input(format!("need at least two categories, got {k}")));
    }
    (1..k).map(|m| link.quantile(m as f64 / k as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::norm_quantile;
    use crate::link::link_by_name;
    use crate::simulate::testutil::kendall_tau;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn parse_round_trips_and_rejects_unknown() {
        for kind in [
            DesignKind::Efficiency,
            DesignKind::SelectionStructure,
            DesignKind::SelectionVariables,
        ] {
            let s = serde_json::to_string(&kind).unwrap();
            let back: DesignKind = serde_json::from_str(&s).unwrap();
            assert_eq!(back, kind);
            assert_eq!(kind.p(), kind.names().len());
        }
        assert!(DesignKind::parse("nope").is_err());
        assert_eq!(DesignKind::parse("efficiency").unwrap(), DesignKind::Efficiency);
    }

    #[test]
    fn equiprobable_cutpoints_are_the_quantile_grid() {
        let link = link_by_name("probit").unwrap();
        let g = equiprobable_cutpoints(link.as_ref(), 5).unwrap();
        for (m, &gm) in g.iter().enumerate() {
            let target = norm_quantile((m + 1) as f64 / 5.0).unwrap();
            assert!((gm - target).abs() < 1e-12);
        }
        // symmetric grid around zero
        assert!((g[0] + g[3]).abs() < 1e-12);
        assert!((g[1] + g[2]).abs() < 1e-12);
        assert!(equiprobable_cutpoints(link.as_ref(), 1).is_err());
    }

    #[test]
    fn efficiency_layout_matches_its_contract() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let n = 2000;
        let d = 3;
        let xs = covariate_design(DesignKind::Efficiency, n, d, &mut rng).unwrap();
        assert_eq!(xs.len(), n);
        let mut ones = 0usize;
        let mut pair01 = (Vec::new(), Vec::new());
        for x in &xs {
            assert_eq!((x.nrows(), x.ncols()), (d, 4));
            let g = x[(0, 0)];
            assert!(g == 0.0 || g == 1.0);
            ones += g as usize;
            for j in 0..d {
                // group and noise are cluster-level, the interaction is exact
                assert_eq!(x[(j, 0)], g);
                assert_eq!(x[(j, 3)], x[(0, 3)]);
                assert!((x[(j, 2)] - x[(j, 0)] * x[(j, 1)]).abs() == 0.0);
                assert!(x[(j, 1)] > 0.0 && x[(j, 1)] < 1.0);
                assert!(x[(j, 3)] >= -1.0 && x[(j, 3)] <= 1.0);
            }
            pair01.0.push(x[(0, 1)]);
            pair01.1.push(x[(1, 1)]);
        }
        let phat = ones as f64 / n as f64;
        assert!((phat - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt());
        // serial covariate carries Kendall tau 1 - 1/2 across occasions
        let tau = kendall_tau(&pair01.0, &pair01.1);
        assert!((tau - 0.5).abs() < 0.05, "serial tau {tau}");
    }

    #[test]
    fn selection_layouts_match_their_contracts() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let n = 3000;
        let d = 3;
        let xs = covariate_design(DesignKind::SelectionStructure, n, d, &mut rng).unwrap();
        let mut time_varying = 0usize;
        for x in &xs {
            assert_eq!(x.ncols(), 2);
            for j in 0..d {
                assert!(x[(j, 0)] == 0.0 || x[(j, 0)] == 1.0);
                assert_eq!(x[(j, 1)], j as f64);
            }
            if (0..d).any(|j| x[(j, 0)] != x[(0, 0)]) {
                time_varying += 1;
            }
        }
        // Bernoulli redrawn per occasion: most clusters are not constant
        assert!(time_varying as f64 > 0.6 * n as f64);

        let xs = covariate_design(DesignKind::SelectionVariables, n, d, &mut rng).unwrap();
        let mut x1 = Vec::new();
        let mut x3 = Vec::new();
        let mut x4 = Vec::new();
        for x in &xs {
            assert_eq!(x.ncols(), 4);
            for j in 0..d {
                assert_eq!(x[(j, 1)], j as f64);
                assert!(x[(j, 2)].abs() <= 1.0 && x[(j, 3)].abs() <= 1.0);
                x1.push(x[(j, 0)]);
                x3.push(x[(j, 2)]);
                x4.push(x[(j, 3)]);
            }
        }
        let m = x1.len() as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / m;
        let (m1, m3, m4) = (mean(&x1), mean(&x3), mean(&x4));
        let corr = |a: &[f64], ma: f64, b: &[f64], mb: f64| {
            let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
            for i in 0..a.len() {
                saa += (a[i] - ma) * (a[i] - ma);
                sbb += (b[i] - mb) * (b[i] - mb);
                sab += (a[i] - ma) * (b[i] - mb);
            }
            sab / (saa * sbb).sqrt()
        };
        // noise columns are independent of the Bernoulli and of each other
        assert!(corr(&x1, m1, &x3, m3).abs() < 3.0 / m.sqrt());
        assert!(corr(&x1, m1, &x4, m4).abs() < 3.0 / m.sqrt());
        assert!(corr(&x3, m3, &x4, m4).abs() < 3.0 / m.sqrt());
    }

    #[test]
    fn ordinalize_edges_and_monotonicity() {
        let link = link_by_name("probit").unwrap();
        let params = UnivariateParams::new(
            DVector::from_vec(vec![0.3]),
            DVector::from_vec(vec![-0.5, 0.6]),
        )
        .unwrap();
        let x = DMatrix::from_row_slice(1, 1, &[0.8]);
        let nu = 0.3 * 0.8;
        let f1 = link.cdf(-0.5 + nu);
        let f2 = link.cdf(0.6 + nu);
        assert_eq!(ordinalize(link.as_ref(), &params, &x, &[f1 - 1e-12]), vec![1]);
        assert_eq!(ordinalize(link.as_ref(), &params, &x, &[f1 + 1e-12]), vec![2]);
        assert_eq!(ordinalize(link.as_ref(), &params, &x, &[f2 - 1e-12]), vec![2]);
        assert_eq!(ordinalize(link.as_ref(), &params, &x, &[f2 + 1e-12]), vec![3]);
        let mut last = 0usize;
        for i in 0..=1000 {
            let u = i as f64 / 1000.0;
            let y = ordinalize(link.as_ref(), &params, &x, &[u])[0];
            assert!(y >= last);
            last = y;
        }
    }

    #[test]
    fn ordinalize_without_covariates_hits_equiprobable_frequencies() {
        let link = link_by_name("probit").unwrap();
        let k = 5;
        let gamma = equiprobable_cutpoints(link.as_ref(), k).unwrap();
        let params = UnivariateParams::new(
            DVector::zeros(0),
            DVector::from_vec(gamma),
        )
        .unwrap();
        let n = 50_000;
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let x = DMatrix::zeros(1, 0);
        let mut counts = vec![0usize; k];
        for _ in 0..n {
            let u: f64 = rng.random();
            counts[ordinalize(link.as_ref(), &params, &x, &[u])[0] - 1] += 1;
        }
        let se = (0.2_f64 * 0.8 / n as f64).sqrt();
        for &c in &counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.2).abs() < 3.0 * se, "freq {freq}");
        }
    }
}
