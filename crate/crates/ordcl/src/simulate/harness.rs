//! Seeded replication harness: generate, fit, and aggregate. Every
//! replication draws from its own RNG stream derived from (seed, index), so
//! results do not depend on execution order or worker count.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cl1::Cl1Options;
use crate::corr::structure_by_name;
use crate::data::{Cluster, OrdinalDataset};
use crate::error::{Error, Result};
use crate::gauss::norm_sf;
use crate::link::link_by_name;
use crate::margins::{FitOptions, UnivariateParams};
use crate::selection::{model_search, sort_reports, Candidate, Criterion, JMode};
use crate::wscore::fit_weighted_scores;

use super::copula::CopulaSpec;
use super::design::{covariate_design, ordinalize, DesignKind};

/// Nominal levels at which two-sided Wald rejection rates are tallied.
pub const REJECTION_LEVELS: [f64; 3] = [0.01, 0.05, 0.10];

/// A candidate model for per-replication selection runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateSpec {
    pub structure: String,
    pub cols: Vec<usize>,
}

/// Complete description of one simulation experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimDesign {
    /// Clusters per replication.
    pub n: usize,
    /// Cluster size.
    pub d: usize,
    /// Ordinal categories.
    pub k: usize,
    /// Replications.
    pub b: usize,
    pub link: String,
    pub copula: CopulaSpec,
    pub design: DesignKind,
    /// Generating regression coefficients, one per design column.
    pub beta: Vec<f64>,
    /// Generating cutpoints, strictly increasing, length k - 1.
    pub gamma: Vec<f64>,
    pub seed: u64,
    /// Correlation structure for a per-replication weighted-scores fit;
    /// absent disables the coefficient summaries.
    #[serde(default)]
    pub fit_structure: Option<String>,
    /// Covariate columns for that fit; defaults to all design columns.
    #[serde(default)]
    pub fit_cols: Option<Vec<usize>>,
    /// Candidate models scored per replication; empty disables the
    /// selection counts.
    #[serde(default)]
    pub candidates: Vec<CandidateSpec>,
    #[serde(default)]
    pub j_mode: JMode,
}

impl SimDesign {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.b == 0 {
            return Err(Error::input("replication counts must be positive"));
        }
        if self.d < 2 {
            return Err(Error::input("cluster size must be at least 2"));
        }
        if self.k < 2 || self.gamma.len() != self.k - 1 {
            return Err(Error::input(format!(
                "need k >= 2 categories and k - 1 cutpoints, got k = {} with {} cutpoints",
                self.k,
                self.gamma.len()
            )));
        }
        let p = self.design.p();
        if self.beta.len() != p {
            return Err(Error::input(format!(
                "design has {p} covariates but beta has length {}",
                self.beta.len()
            )));
        }
        self.generating_params()?;
        link_by_name(&self.link)?;
        self.copula.build(self.d)?;
        let check_cols = |cols: &[usize]| -> Result<()> {
            let mut seen = vec![false; p];
            for &c in cols {
                if c >= p || seen[c] {
                    return Err(Error::input(format!(
                        "covariate column {c} is out of range or repeated"
                    )));
                }
                seen[c] = true;
            }
            Ok(())
        };
        if let Some(s) = &self.fit_structure {
            structure_by_name(s)?;
        }
        if let Some(cols) = &self.fit_cols {
            if self.fit_structure.is_none() {
                return Err(Error::input("fit_cols given without fit_structure"));
            }
            check_cols(cols)?;
        }
        for cand in &self.candidates {
            structure_by_name(&cand.structure)?;
            check_cols(&cand.cols)?;
        }
        Ok(())
    }

    fn generating_params(&self) -> Result<UnivariateParams> {
        UnivariateParams::new(
            DVector::from_vec(self.beta.clone()),
            DVector::from_vec(self.gamma.clone()),
        )
    }

    fn effective_fit_cols(&self) -> Vec<usize> {
        self.fit_cols.clone().unwrap_or_else(|| (0..self.design.p()).collect())
    }
}

/// Replication r's RNG stream: a pure function of (seed, r).
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(rep as u64).to_le_bytes());
    ChaCha12Rng::from_seed(key)
}

/// Draw one dataset from the design's truth.
pub fn simulate_dataset(design: &SimDesign, rng: &mut ChaCha12Rng) -> Result<OrdinalDataset> {
    let copula = design.copula.build(design.d)?;
    let link = link_by_name(&design.link)?;
    let params = design.generating_params()?;
    let xs = covariate_design(design.design, design.n, design.d, rng)?;
    let mut clusters = Vec::with_capacity(design.n);
    for (i, x) in xs.into_iter().enumerate() {
        let u = copula.sample_row(rng);
        let y = ordinalize(link.as_ref(), &params, &x, &u);
        clusters.push(Cluster {
            id: format!("c{i}"),
            positions: (0..design.d).collect(),
            y,
            x,
        });
    }
    OrdinalDataset::new(clusters, design.k, design.design.names(), (0..design.d as i64).collect())
}

/// Per-coefficient aggregates over converged replications, scaled by the
/// number of clusters n. The SD uses divisor B - 1, so
/// n_rmse^2 = n_bias^2 + n_sd^2 (B - 1) / B exactly.
#[derive(Debug, Clone, Serialize)]
pub struct CoefficientSummary {
    pub name: String,
    pub truth: f64,
    pub n_bias: f64,
    pub n_sd: f64,
    pub n_rmse: f64,
    /// n times the root of the mean sandwich variance.
    pub n_mean_model_sd: f64,
    /// Two-sided Wald rejection rates of the true value at REJECTION_LEVELS.
    pub rejection: [f64; 3],
}

/// How often a candidate won each criterion across replications.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionCount {
    pub descriptor: String,
    pub cl1aic: usize,
    pub cl1bic: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimSummary {
    pub requested: usize,
    /// Replications that produced every requested output; all aggregates,
    /// including the selection counts, are over these only.
    pub converged: usize,
    pub failed: usize,
    pub coefficients: Vec<CoefficientSummary>,
    pub selection: Vec<SelectionCount>,
    /// Candidate fits that failed inside otherwise-converged selection runs.
    pub candidate_failures: usize,
    pub failure_notes: Vec<String>,
}

struct RepOutcome {
    estimates: Option<(Vec<f64>, Vec<f64>)>,
    winners: Option<(String, String)>,
    candidate_failures: usize,
    error: Option<String>,
}

fn run_one(design: &SimDesign, rep: usize) -> RepOutcome {
    let mut out = RepOutcome {
        estimates: None,
        winners: None,
        candidate_failures: 0,
        error: None,
    };
    let mut attempt = || -> Result<()> {
        let mut rng = replication_rng(design.seed, rep);
        let data = simulate_dataset(design, &mut rng)?;
        let link = link_by_name(&design.link)?;
        let fit_opts = FitOptions::default();
        let cl1_opts = Cl1Options::default();
        if let Some(name) = &design.fit_structure {
            let structure = structure_by_name(name)?;
            let cols = design.effective_fit_cols();
            let report =
                fit_weighted_scores(&data, link.as_ref(), structure, &cols, &fit_opts, &cl1_opts)?;
            let rows = report.rows()?;
            out.estimates = Some((
                rows.iter().map(|r| r.estimate).collect(),
                rows.iter().map(|r| r.se).collect(),
            ));
        }
        if !design.candidates.is_empty() {
            let cands: Vec<Candidate> = design
                .candidates
                .iter()
                .map(|c| {
                    Ok(Candidate {
                        structure: structure_by_name(&c.structure)?,
                        cols: c.cols.clone(),
                    })
                })
                .collect::<Result<_>>()?;
            let outcome = model_search(
                &data,
                link.as_ref(),
                &cands,
                design.j_mode,
                Criterion::Cl1Bic,
                &fit_opts,
                &cl1_opts,
            )?;
            out.candidate_failures = outcome.failures.len();
            let mut ranked = outcome.ranked;
            if ranked.is_empty() {
                let (desc, err) = &outcome.failures[0];
                return Err(Error::numerical(format!(
                    "every candidate failed; first: {desc}: {err}"
                )));
            }
            let bic = ranked[0].descriptor();
            sort_reports(&mut ranked, Criterion::Cl1Aic);
            out.winners = Some((ranked[0].descriptor(), bic));
        }
        Ok(())
    };
    if let Err(e) = attempt() {
        out.error = Some(e.to_string());
        out.estimates = None;
        out.winners = None;
    }
    out
}

/// Run every replication of the design and aggregate. Replications failing
/// anywhere (data draw, fit, or all candidates) are excluded and counted;
/// more than 5% of them is an error migrating noise into the aggregates.
pub fn run_replications(design: &SimDesign) -> Result<SimSummary> {
    design.validate()?;
    let outcomes: Vec<RepOutcome> =
        (0..design.b).into_par_iter().map(|r| run_one(design, r)).collect();

    let failed = outcomes.iter().filter(|o| o.error.is_some()).count();
    let failure_notes: Vec<String> = outcomes
        .iter()
        .filter_map(|o| o.error.clone())
        .take(5)
        .collect();
    if 20 * failed > design.b {
        return Err(Error::numerical(format!(
            "{failed} of {} replications failed (more than 5%); first errors: {}",
            design.b,
            failure_notes.join(" | ")
        )));
    }
    let converged = design.b - failed;

    let mut coefficients = Vec::new();
    if design.fit_structure.is_some() {
        let q = design.k - 1;
        let cols = design.effective_fit_cols();
        let names: Vec<String> = (0..q)
            .map(|m| format!("cut{}", m + 1))
            .chain(cols.iter().map(|&c| design.design.names()[c].clone()))
            .collect();
        let truth: Vec<f64> = design
            .gamma
            .iter()
            .copied()
            .chain(cols.iter().map(|&c| design.beta[c]))
            .collect();
        let reps: Vec<&(Vec<f64>, Vec<f64>)> =
            outcomes.iter().filter_map(|o| o.estimates.as_ref()).collect();
        let b_ok = reps.len();
        let nf = design.n as f64;
        for (c, name) in names.into_iter().enumerate() {
            let mean = reps.iter().map(|r| r.0[c]).sum::<f64>() / b_ok as f64;
            let ss = reps.iter().map(|r| (r.0[c] - mean) * (r.0[c] - mean)).sum::<f64>();
            let bias = mean - truth[c];
            let sd = if b_ok > 1 { (ss / (b_ok - 1) as f64).sqrt() } else { 0.0 };
            let vbar = reps.iter().map(|r| r.1[c] * r.1[c]).sum::<f64>() / b_ok as f64;
            let mut rejection = [0.0; 3];
            for r in &reps {
                let z = (r.0[c] - truth[c]) / r.1[c];
                let p = 2.0 * norm_sf(z.abs());
                for (i, &level) in REJECTION_LEVELS.iter().enumerate() {
                    if p < level {
                        rejection[i] += 1.0;
                    }
                }
            }
            for rate in &mut rejection {
                *rate /= b_ok as f64;
            }
            coefficients.push(CoefficientSummary {
                name,
                truth: truth[c],
                n_bias: nf * bias,
                n_sd: nf * sd,
                n_rmse: nf * (bias * bias + ss / b_ok as f64).sqrt(),
                n_mean_model_sd: nf * vbar.sqrt(),
                rejection,
            });
        }
    }

    let mut selection = Vec::new();
    let mut candidate_failures = 0usize;
    if !design.candidates.is_empty() {
        let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for o in &outcomes {
            candidate_failures += o.candidate_failures;
            if let Some((aic, bic)) = &o.winners {
                counts.entry(aic.clone()).or_default().0 += 1;
                counts.entry(bic.clone()).or_default().1 += 1;
            }
        }
        selection = counts
            .into_iter()
            .map(|(descriptor, (cl1aic, cl1bic))| SelectionCount { descriptor, cl1aic, cl1bic })
            .collect();
    }

    Ok(SimSummary {
        requested: design.b,
        converged,
        failed,
        coefficients,
        selection,
        candidate_failures,
        failure_notes,
    })
}

/// Aligned plain-text rendering of a summary.
pub fn summary_table(summary: &SimSummary) -> String {
    let mut out = format!(
        "replications: {} requested, {} converged, {} failed\n",
        summary.requested, summary.converged, summary.failed
    );
    if !summary.coefficients.is_empty() {
        let w = summary
            .coefficients
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap()
            .max("coefficient".len());
        out.push_str(&format!(
            "{:w$}  {:>9} {:>9} {:>9} {:>9} {:>12} {:>9} {:>9} {:>9}\n",
            "coefficient",
            "truth",
            "n*bias",
            "n*SD",
            "n*RMSE",
            "n*sqrt(Vbar)",
            "rej@0.01",
            "rej@0.05",
            "rej@0.10",
        ));
        for c in &summary.coefficients {
            out.push_str(&format!(
                "{:w$}  {:>9.4} {:>9.2} {:>9.2} {:>9.2} {:>12.2} {:>9.3} {:>9.3} {:>9.3}\n",
                c.name,
                c.truth,
                c.n_bias,
                c.n_sd,
                c.n_rmse,
                c.n_mean_model_sd,
                c.rejection[0],
                c.rejection[1],
                c.rejection[2],
            ));
        }
    }
    if !summary.selection.is_empty() {
        let w = summary
            .selection
            .iter()
            .map(|s| s.descriptor.len())
            .max()
            .unwrap()
            .max("candidate".len());
        out.push_str(&format!(
            "selection winners out of {} converged replications:\n{:w$}  {:>7} {:>7}\n",
            summary.converged, "candidate", "CL1AIC", "CL1BIC",
        ));
        for s in &summary.selection {
            out.push_str(&format!("{:w$}  {:>7} {:>7}\n", s.descriptor, s.cl1aic, s.cl1bic));
        }
        if summary.candidate_failures > 0 {
            out.push_str(&format!(
                "({} candidate fits failed inside converged replications)\n",
                summary.candidate_failures
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::design::equiprobable_cutpoints;
    use rand::RngCore;

    fn probit_cuts(k: usize) -> Vec<f64> {
        let link = link_by_name("probit").unwrap();
        equiprobable_cutpoints(link.as_ref(), k).unwrap()
    }

    fn small_design() -> SimDesign {
        SimDesign {
            n: 60,
            d: 3,
            k: 3,
            b: 12,
            link: "probit".into(),
            copula: CopulaSpec::Gumbel { theta: 2.0 },
            design: DesignKind::SelectionStructure,
            beta: vec![-0.25, -0.25],
            gamma: probit_cuts(3).iter().map(|g| g + 0.25).collect(),
            seed: 20260814,
            fit_structure: Some("exch".into()),
            fit_cols: None,
            candidates: Vec::new(),
            j_mode: JMode::Empirical,
        }
    }

    #[test]
    fn replication_streams_are_keyed_and_distinct() {
        let mut a = replication_rng(7, 0);
        let mut b = replication_rng(7, 0);
        let mut c = replication_rng(7, 1);
        let mut d = replication_rng(8, 0);
        let (xa, xb, xc, xd) = (a.next_u64(), b.next_u64(), c.next_u64(), d.next_u64());
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
        assert_ne!(xa, xd);
    }

    #[test]
    fn simulate_dataset_is_reproducible_per_stream() {
        let design = small_design();
        let mut rng = replication_rng(design.seed, 4);
        let da = simulate_dataset(&design, &mut rng).unwrap();
        let mut rng = replication_rng(design.seed, 4);
        let db = simulate_dataset(&design, &mut rng).unwrap();
        assert_eq!(da.clusters().len(), design.n);
        for (a, b) in da.clusters().iter().zip(db.clusters()) {
            assert_eq!(a.y, b.y);
            assert_eq!(a.x, b.x);
            assert!(a.y.iter().all(|&y| (1..=design.k).contains(&y)));
        }
        let mut rng = replication_rng(design.seed, 5);
        let dc = simulate_dataset(&design, &mut rng).unwrap();
        assert!(da.clusters().iter().zip(dc.clusters()).any(|(a, c)| a.y != c.y));
    }

    #[test]
    fn validate_catches_inconsistent_designs() {
        let mut d = small_design();
        d.beta = vec![0.1];
        assert!(d.validate().is_err());
        let mut d = small_design();
        d.gamma = vec![0.5, 0.5];
        assert!(d.validate().is_err());
        let mut d = small_design();
        d.copula = CopulaSpec::Gumbel { theta: 0.3 };
        assert!(d.validate().is_err());
        let mut d = small_design();
        d.fit_cols = Some(vec![0, 2]);
        assert!(d.validate().is_err());
        let mut d = small_design();
        d.fit_structure = None;
        d.fit_cols = Some(vec![0]);
        assert!(d.validate().is_err());
        let mut d = small_design();
        d.candidates = vec![CandidateSpec { structure: "spiral".into(), cols: vec![0] }];
        assert!(d.validate().is_err());
        assert!(small_design().validate().is_ok());
    }

    #[test]
    fn summary_is_deterministic_and_rmse_identity_holds() {
        let design = small_design();
        let s1 = run_replications(&design).unwrap();
        let s2 = run_replications(&design).unwrap();
        assert_eq!(
            serde_json::to_string(&s1).unwrap(),
            serde_json::to_string(&s2).unwrap()
        );
        assert_eq!(s1.requested, 12);
        assert!(s1.converged > 0);
        let b = s1.converged as f64;
        for c in &s1.coefficients {
            let lhs = c.n_rmse * c.n_rmse;
            let rhs = c.n_bias * c.n_bias + c.n_sd * c.n_sd * (b - 1.0) / b;
            assert!(
                (lhs - rhs).abs() <= 1e-8 * (1.0 + lhs.abs()),
                "{}: {lhs} vs {rhs}",
                c.name
            );
            for rate in c.rejection {
                assert!((0.0..=1.0).contains(&rate));
            }
        }
        let text = summary_table(&s1);
        assert!(text.contains("coefficient"));
        assert!(text.contains("cut1"));
    }

    #[test]
    fn selection_counts_sum_to_converged() {
        let mut design = small_design();
        design.b = 6;
        design.n = 80;
        design.fit_structure = None;
        design.candidates = vec![
            CandidateSpec { structure: "exch".into(), cols: vec![0, 1] },
            CandidateSpec { structure: "independence".into(), cols: vec![0, 1] },
        ];
        let s = run_replications(&design).unwrap();
        assert_eq!(s.failed + s.converged, 6);
        let aic: usize = s.selection.iter().map(|c| c.cl1aic).sum();
        let bic: usize = s.selection.iter().map(|c| c.cl1bic).sum();
        assert_eq!(aic, s.converged);
        assert_eq!(bic, s.converged);
        let text = summary_table(&s);
        assert!(text.contains("CL1BIC"));
    }

    #[test]
    fn harness_rejects_designs_that_cannot_converge() {
        let mut design = small_design();
        // categories 2 and 4 have probability ~ 1e-15 under these cutpoints,
        // so every replication fails dataset validation
        design.k = 5;
        design.b = 4;
        design.gamma = vec![-8.0, -7.9, 7.9, 8.0];
        let err = run_replications(&design).unwrap_err().to_string();
        assert!(err.contains("replications failed"), "{err}");
    }

    #[test]
    fn weighted_fit_recovers_generating_coefficients() {
        // consistency at desk scale: the mean estimate over replications
        // stays within three MC standard errors of the truth
        let link = link_by_name("probit").unwrap();
        let design = SimDesign {
            n: 300,
            d: 3,
            k: 5,
            b: 10,
            link: "probit".into(),
            copula: CopulaSpec::Gumbel { theta: 3.0 },
            design: DesignKind::Efficiency,
            beta: vec![-0.5, 0.5, 0.5, 0.0],
            gamma: equiprobable_cutpoints(link.as_ref(), 5).unwrap(),
            seed: 99,
            fit_structure: Some("exch".into()),
            fit_cols: None,
            candidates: Vec::new(),
            j_mode: JMode::Empirical,
        };
        let s = run_replications(&design).unwrap();
        assert!(s.converged >= 9);
        let b = s.converged as f64;
        for c in &s.coefficients {
            let mc_se = c.n_sd / design.n as f64 / b.sqrt();
            let bias = c.n_bias / design.n as f64;
            assert!(
                bias.abs() < 3.0 * mc_se + 0.01,
                "{}: bias {bias} vs mc se {mc_se}",
                c.name
            );
        }
    }
}
