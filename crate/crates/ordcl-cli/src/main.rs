//! Command line driver: `fit`, `select`, and `simulate` over long-format
//! clustered ordinal data.
//!
//! Tables on stdout round to four decimals (three for Z); the JSON written
//! by --out carries the same numbers at full precision. Exit codes: 0 on
//! success, 1 for input or configuration problems, 2 for numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use ordcl::cl1::Cl1Options;
use ordcl::corr::{structure_by_name, CorrStructure};
use ordcl::data::{ingest_csv, CovariateSpec, IngestReport, IngestSpec, OrdinalDataset};
use ordcl::link::link_by_name;
use ordcl::margins::FitOptions;
use ordcl::selection::{
    cl1_criteria, model_search, sort_reports, Candidate, Criterion, CriteriaReport, JMode,
};
use ordcl::simulate::{run_replications, summary_table, SimDesign};
use ordcl::wscore::fit_weighted_scores;
use ordcl::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ordcl",
    version,
    about = "Weighted-scores regression and pairwise-likelihood model selection \
             for clustered ordinal responses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model and print the estimates table.
    Fit(FitArgs),
    /// Score candidate models with CL1AIC and CL1BIC.
    Select(SelectArgs),
    /// Run a seeded simulation design and summarize the replications.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Long-format CSV file, one row per measurement, header required.
    #[arg(long)]
    data: PathBuf,
    /// Cluster id column.
    #[arg(long, default_value = "id")]
    id_col: String,
    /// Integer time column; within-cluster row order is used when omitted.
    #[arg(long)]
    time_col: Option<String>,
    /// Response column; integer categories are relabeled to 1..K.
    #[arg(long, default_value = "y")]
    y_col: String,
    /// Covariate columns in design order, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    covariates: Vec<String>,
    /// Covariates from --covariates to expand into cumulative indicator
    /// columns I(value >= level), one per level above the smallest.
    #[arg(long, value_delimiter = ',')]
    ordinal: Vec<String>,
}

#[derive(Args)]
struct TolArgs {
    /// Score tolerance for the Newton solves.
    #[arg(long, default_value_t = 1e-6)]
    score_tol: f64,
    /// Step tolerance for the Newton solves.
    #[arg(long, default_value_t = 1e-8)]
    step_tol: f64,
    /// Iteration cap for the Newton solves.
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Score tolerance for the pairwise-likelihood correlation fit.
    #[arg(long, default_value_t = 1e-6)]
    corr_tol: f64,
    /// Bracketing grid size for the pairwise-likelihood fit.
    #[arg(long, default_value_t = 32)]
    corr_grid: usize,
    /// Coordinate sweep cap for the pairwise-likelihood fit.
    #[arg(long, default_value_t = 12)]
    corr_sweeps: usize,
}

impl TolArgs {
    fn validate(&self) -> Result<()> {
        if !(self.score_tol > 0.0) || !(self.step_tol > 0.0) || !(self.corr_tol > 0.0) {
            return Err(Error::input("tolerances must be positive"));
        }
        if self.max_iter == 0 || self.corr_grid < 2 || self.corr_sweeps == 0 {
            return Err(Error::input("iteration and grid counts must be positive"));
        }
        Ok(())
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            score_tol: self.score_tol,
            step_tol: self.step_tol,
            max_iter: self.max_iter,
            ..FitOptions::default()
        }
    }

    fn cl1_options(&self) -> Cl1Options {
        Cl1Options {
            score_tol: self.corr_tol,
            grid: self.corr_grid,
            max_sweeps: self.corr_sweeps,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Link function: probit or logit.
    #[arg(long, default_value = "probit")]
    link: String,
    /// Working correlation structure: exch, ar1, unstr, or independence.
    #[arg(long, default_value = "exch")]
    corr: String,
    /// J matrix for the criteria: empirical or model.
    #[arg(long, default_value = "empirical")]
    jmat: String,
    /// Also report CL1AIC and CL1BIC for the fitted model.
    #[arg(long)]
    criteria: bool,
    #[command(flatten)]
    tol: TolArgs,
    /// Cap the worker pool; 1 guarantees bit-exact reproducibility.
    #[arg(long)]
    threads: Option<usize>,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Links to include, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "probit")]
    link: Vec<String>,
    /// Correlation structures to include, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "exch,ar1,unstr,independence")]
    corr: Vec<String>,
    /// Covariate subsets: semicolon-separated groups of comma-separated
    /// column names; a cumulative covariate's source name pulls in all of
    /// its indicator columns. Default is the full design.
    #[arg(long)]
    subsets: Option<String>,
    /// Criterion that orders the table: cl1aic or cl1bic.
    #[arg(long, default_value = "cl1bic")]
    by: String,
    /// J matrix for the criteria: empirical or model.
    #[arg(long, default_value = "empirical")]
    jmat: String,
    #[command(flatten)]
    tol: TolArgs,
    /// Cap the worker pool; 1 guarantees bit-exact reproducibility.
    #[arg(long)]
    threads: Option<usize>,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON file holding the simulation design.
    #[arg(long)]
    design: PathBuf,
    /// Override the seed in the design file.
    #[arg(long)]
    seed: Option<u64>,
    /// Cap the worker pool; 1 guarantees bit-exact reproducibility.
    #[arg(long)]
    threads: Option<usize>,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let run = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Select(args) => cmd_select(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    let Some(t) = threads else { return Ok(()) };
    if t == 0 {
        return Err(Error::input("--threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(t)
        .build_global()
        .map_err(|e| Error::input(format!("cannot configure the thread pool: {e}")))
}

fn load_data(args: &DataArgs) -> Result<(OrdinalDataset, IngestReport)> {
    for name in &args.ordinal {
        if !args.covariates.contains(name) {
            return Err(Error::input(format!(
                "--ordinal names '{name}', which is not among --covariates"
            )));
        }
    }
    let covariates = args
        .covariates
        .iter()
        .map(|c| {
            if args.ordinal.contains(c) {
                CovariateSpec::Cumulative(c.clone())
            } else {
                CovariateSpec::Numeric(c.clone())
            }
        })
        .collect();
    let spec = IngestSpec {
        id_col: args.id_col.clone(),
        time_col: args.time_col.clone(),
        y_col: args.y_col.clone(),
        covariates,
    };
    let file = fs::File::open(&args.data)
        .map_err(|e| Error::input(format!("cannot open {}: {e}", args.data.display())))?;
    ingest_csv(file, &spec)
}

fn print_ingest(report: &IngestReport) {
    println!(
        "data: {} clusters, {} observations, K = {}",
        report.n_clusters, report.n_obs, report.k
    );
    let map: Vec<String> = report
        .category_map
        .iter()
        .map(|(orig, code)| format!("{orig}->{code}"))
        .collect();
    println!("response categories: {}", map.join(", "));
    println!("design columns: {}", report.columns.join(", "));
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!();
}

fn data_config(args: &DataArgs) -> Value {
    json!({
        "data": args.data.display().to_string(),
        "id_col": args.id_col,
        "time_col": args.time_col,
        "y_col": args.y_col,
        "covariates": args.covariates,
        "ordinal": args.ordinal,
    })
}

fn tol_config(tol: &TolArgs) -> Value {
    json!({
        "score_tol": tol.score_tol,
        "step_tol": tol.step_tol,
        "max_iter": tol.max_iter,
        "corr_tol": tol.corr_tol,
        "corr_grid": tol.corr_grid,
        "corr_sweeps": tol.corr_sweeps,
    })
}

fn write_json(path: Option<&Path>, doc: &Value) -> Result<()> {
    let Some(path) = path else { return Ok(()) };
    let text = serde_json::to_string_pretty(doc)
        .map_err(|e| Error::input(format!("cannot serialize the report: {e}")))?;
    fs::write(path, text + "\n")
        .map_err(|e| Error::input(format!("cannot write {}: {e}", path.display())))
}

fn parse_jmode(s: &str) -> Result<JMode> {
    match s {
        "empirical" => Ok(JMode::Empirical),
        "model" => Ok(JMode::Model),
        other => Err(Error::input(format!(
            "unknown J matrix mode '{other}'; use empirical or model"
        ))),
    }
}

fn parse_criterion(s: &str) -> Result<Criterion> {
    match s {
        "cl1aic" => Ok(Criterion::Cl1Aic),
        "cl1bic" => Ok(Criterion::Cl1Bic),
        other => Err(Error::input(format!(
            "unknown criterion '{other}'; use cl1aic or cl1bic"
        ))),
    }
}

/// Map subset groups like "trt,base;trt,age" to design column indices. A
/// name matches its own design column or, for cumulative covariates, every
/// "name>=level" column it expanded to.
fn parse_subsets(spec: &str, columns: &[String]) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    for group in spec.split(';') {
        let group = group.trim();
        if group.is_empty() {
            return Err(Error::input("--subsets contains an empty group"));
        }
        let mut cols: Vec<usize> = Vec::new();
        for name in group.split(',') {
            let name = name.trim();
            let prefix = format!("{name}>=");
            let matched: Vec<usize> = columns
                .iter()
                .enumerate()
                .filter(|(_, c)| c.as_str() == name || c.starts_with(&prefix))
                .map(|(i, _)| i)
                .collect();
            if matched.is_empty() {
                return Err(Error::input(format!(
                    "--subsets names '{name}', which matches no design column"
                )));
            }
            for m in matched {
                if !cols.contains(&m) {
                    cols.push(m);
                }
            }
        }
        out.push(cols);
    }
    Ok(out)
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    args.tol.validate()?;
    configure_threads(args.threads)?;
    let (data, report) = load_data(&args.data)?;
    print_ingest(&report);

    let link = link_by_name(&args.link)?;
    let structure = structure_by_name(&args.corr)?;
    let jmode = parse_jmode(&args.jmat)?;
    let fit_opts = args.tol.fit_options();
    let cl1_opts = args.tol.cl1_options();
    let cols: Vec<usize> = (0..data.p()).collect();
    let fit = fit_weighted_scores(&data, link.as_ref(), structure, &cols, &fit_opts, &cl1_opts)?;
    let rows = fit.rows()?;

    let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    println!("{:<name_w$}  {:>10}  {:>10}  {:>8}  {:>8}", "", "Est.", "SE", "Z", "p-value");
    for r in &rows {
        println!(
            "{:<name_w$}  {:>10.4}  {:>10.4}  {:>8.3}  {:>8.4}",
            r.name, r.estimate, r.se, r.z, r.p
        );
    }
    println!();
    let theta_s: Vec<String> = fit.corr.theta.iter().map(|t| format!("{t:.4}")).collect();
    println!("correlation: {} [{}]", fit.corr.structure.name(), theta_s.join(", "));
    for i in 0..fit.corr.matrix.nrows() {
        let row: Vec<String> = (0..fit.corr.matrix.ncols())
            .map(|j| format!("{:>7.4}", fit.corr.matrix[(i, j)]))
            .collect();
        println!("  {}", row.join("  "));
    }

    let crit = if args.criteria {
        Some(cl1_criteria(&data, link.as_ref(), &fit.stage1, &cols, &fit.corr, jmode)?)
    } else {
        None
    };
    if let Some(c) = &crit {
        println!();
        println!(
            "CL1AIC = {:.2}  CL1BIC = {:.2}  (L2 = {:.2}, trace = {:.2})",
            c.cl1aic, c.cl1bic, c.l2, c.penalty_trace
        );
    }

    let mut warnings: Vec<String> = Vec::new();
    warnings.extend(fit.stage1_diag.warnings.iter().cloned());
    warnings.extend(fit.corr.warnings.iter().cloned());
    warnings.extend(fit.diag.warnings.iter().cloned());
    println!();
    println!(
        "converged: {} (stage 1: {} iterations; weighted solve: {} iterations, max |score| = {:.2e})",
        fit.diag.converged, fit.stage1_diag.iterations, fit.diag.iterations, fit.diag.max_score
    );
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    let estimates: Vec<Value> = rows
        .iter()
        .map(|r| json!({"name": r.name, "est": r.estimate, "se": r.se, "z": r.z, "p": r.p}))
        .collect();
    let mut config = data_config(&args.data);
    config["link"] = json!(args.link);
    config["corr"] = json!(args.corr);
    config["jmat"] = json!(args.jmat);
    config["criteria"] = json!(args.criteria);
    config["tolerances"] = tol_config(&args.tol);
    let doc = json!({
        "config": config,
        "estimates": estimates,
        "correlation": {
            "structure": fit.corr.structure.name(),
            "params": fit.corr.theta,
            "matrix": (0..fit.corr.matrix.nrows())
                .map(|i| (0..fit.corr.matrix.ncols()).map(|j| fit.corr.matrix[(i, j)]).collect())
                .collect::<Vec<Vec<f64>>>(),
        },
        "criteria": crit.as_ref().map(|c| {
            json!({"cl1aic": c.cl1aic, "cl1bic": c.cl1bic, "L2": c.l2, "trace": c.penalty_trace})
        }),
        "diagnostics": {
            "iterations": fit.diag.iterations,
            "max_score": fit.diag.max_score,
            "converged": fit.diag.converged,
            "warnings": warnings,
        },
    });
    write_json(args.out.as_deref(), &doc)
}

fn cmd_select(args: SelectArgs) -> Result<()> {
    args.tol.validate()?;
    configure_threads(args.threads)?;
    let (data, report) = load_data(&args.data)?;
    print_ingest(&report);

    let by = parse_criterion(&args.by)?;
    let jmode = parse_jmode(&args.jmat)?;
    let fit_opts = args.tol.fit_options();
    let cl1_opts = args.tol.cl1_options();
    let subsets: Vec<Vec<usize>> = match &args.subsets {
        None => vec![(0..data.p()).collect()],
        Some(s) => parse_subsets(s, &report.columns)?,
    };
    let structures: Vec<Arc<dyn CorrStructure>> =
        args.corr.iter().map(|s| structure_by_name(s)).collect::<Result<_>>()?;
    let mut candidates = Vec::new();
    for st in &structures {
        for cols in &subsets {
            candidates.push(Candidate { structure: st.clone(), cols: cols.clone() });
        }
    }

    let mut ranked: Vec<CriteriaReport> = Vec::new();
    let mut failures: Vec<(String, String)> = Vec::new();
    for lname in &args.link {
        let link = link_by_name(lname)?;
        let outcome =
            model_search(&data, link.as_ref(), &candidates, jmode, by, &fit_opts, &cl1_opts)?;
        ranked.extend(outcome.ranked);
        failures.extend(outcome.failures);
    }
    sort_reports(&mut ranked, by);
    if ranked.is_empty() {
        let (desc, err) = &failures[0];
        return Err(Error::numerical(format!("every candidate failed; first: {desc}: {err}")));
    }

    let best_by = |c: Criterion| {
        let mut copy = ranked.clone();
        sort_reports(&mut copy, c);
        copy[0].descriptor()
    };
    let best_aic = best_by(Criterion::Cl1Aic);
    let best_bic = best_by(Criterion::Cl1Bic);

    let desc_w = ranked
        .iter()
        .map(|r| r.descriptor().len())
        .chain(failures.iter().map(|(d, _)| d.len()))
        .max()
        .unwrap_or(9)
        .max(9);
    println!("{:<desc_w$}  {:>3}  {:>12}  {:>12}  {:>12}", "candidate", "t", "L2", "CL1AIC", "CL1BIC");
    for rep in &ranked {
        let desc = rep.descriptor();
        let aic = format!("{:.2}{}", rep.cl1aic, if desc == best_aic { "*" } else { "" });
        let bic = format!("{:.2}{}", rep.cl1bic, if desc == best_bic { "*" } else { "" });
        println!("{:<desc_w$}  {:>3}  {:>12.2}  {:>12}  {:>12}", desc, rep.t_params, rep.l2, aic, bic);
    }
    for (desc, err) in &failures {
        println!("{:<desc_w$}  FAILED: {}", desc, err);
    }
    println!();
    println!("minimum CL1AIC: {best_aic}");
    println!("minimum CL1BIC: {best_bic}");

    let mut config = data_config(&args.data);
    config["link"] = json!(args.link);
    config["corr"] = json!(args.corr);
    config["subsets"] = json!(args.subsets);
    config["by"] = json!(args.by);
    config["jmat"] = json!(args.jmat);
    config["tolerances"] = tol_config(&args.tol);
    let doc = json!({
        "config": config,
        "candidates": ranked,
        "failures": failures,
        "best": {"cl1aic": best_aic, "cl1bic": best_bic},
    });
    write_json(args.out.as_deref(), &doc)
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    configure_threads(args.threads)?;
    let text = fs::read_to_string(&args.design)
        .map_err(|e| Error::input(format!("cannot read {}: {e}", args.design.display())))?;
    let mut design: SimDesign = serde_json::from_str(&text)
        .map_err(|e| Error::input(format!("cannot parse the design file: {e}")))?;
    if let Some(seed) = args.seed {
        design.seed = seed;
    }
    println!("seed: {}", design.seed);
    let summary = run_replications(&design)?;
    print!("{}", summary_table(&summary));
    let doc = json!({"design": design, "summary": summary});
    write_json(args.out.as_deref(), &doc)
}
