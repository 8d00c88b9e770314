//! Clustered ordinal data: the in-memory layout every stage of the pipeline
//! consumes, plus CSV ingestion for the CLI.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use std::collections::BTreeMap;
use std::io::Read;

/// One cluster (subject): responses and covariate rows at a strictly
/// increasing subset of the dataset's time grid.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub id: String,
    /// Indices into `OrdinalDataset::times`, strictly increasing.
    pub positions: Vec<usize>,
    /// Categories coded 1..=K.
    pub y: Vec<usize>,
    /// One row per observation, full covariate set.
    pub x: DMatrix<f64>,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.y.len()
    }

    /// Covariate submatrix for a column subset, rows in observation order.
    pub fn x_subset(&self, cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.x.nrows(), cols.len(), |r, c| self.x[(r, cols[c])])
    }
}

/// Full dataset. Invariants: every category 1..=K observed at least once,
/// covariate columns named, cluster positions consistent with the time grid.
#[derive(Debug, Clone)]
pub struct OrdinalDataset {
    clusters: Vec<Cluster>,
    k: usize,
    covariate_names: Vec<String>,
    /// Sorted distinct within-cluster index values; AR(1) lags come from
    /// differences of these, so gaps are respected.
    times: Vec<i64>,
}

impl OrdinalDataset {
    pub fn new(
        clusters: Vec<Cluster>,
        k: usize,
        covariate_names: Vec<String>,
        times: Vec<i64>,
    ) -> Result<Self> {
        if k < 2 {
            return Err(Error::input(format!("need at least 2 categories, got {k}")));
        }
        if clusters.is_empty() {
            return Err(Error::input("dataset has no clusters"));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input("time grid must be strictly increasing"));
        }
        let p = covariate_names.len();
        let mut seen = vec![false; k];
        for cl in &clusters {
            if cl.y.is_empty() || cl.y.len() != cl.positions.len() || cl.x.nrows() != cl.y.len() {
                return Err(Error::input(format!("cluster {} has inconsistent sizes", cl.id)));
            }
            if cl.x.ncols() != p {
                return Err(Error::input(format!(
                    "cluster {} has {} covariate columns, expected {p}",
                    cl.id,
                    cl.x.ncols()
                )));
            }
            if cl.positions.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::input(format!(
                    "cluster {} positions are not strictly increasing",
                    cl.id
                )));
            }
            if cl.positions.iter().any(|&pos| pos >= times.len()) {
                return Err(Error::input(format!(
                    "cluster {} position outside the time grid",
                    cl.id
                )));
            }
            for &y in &cl.y {
                if y < 1 || y > k {
                    return Err(Error::input(format!(
                        "cluster {} has category {y} outside 1..={k}",
                        cl.id
                    )));
                }
                seen[y - 1] = true;
            }
        }
        if let Some(m) = seen.iter().position(|&s| !s) {
            return Err(Error::input(format!(
                "category {} is never observed; relabel the response",
                m + 1
            )));
        }
        Ok(OrdinalDataset { clusters, k, covariate_names, times })
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }
    pub fn n_obs(&self) -> usize {
        self.clusters.iter().map(|c| c.size()).sum()
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }
    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }
    pub fn times(&self) -> &[i64] {
        &self.times
    }
    /// Largest number of distinct positions any cluster can occupy.
    pub fn d_max(&self) -> usize {
        self.times.len()
    }

    /// Position pairs (a < b) observed together in at least one cluster,
    /// sorted lexicographically.
    pub fn observed_pairs(&self) -> Vec<(usize, usize)> {
        let d = self.d_max();
        let mut seen = vec![false; d * d];
        for cl in &self.clusters {
            for i in 0..cl.positions.len() {
                for j in (i + 1)..cl.positions.len() {
                    seen[cl.positions[i] * d + cl.positions[j]] = true;
                }
            }
        }
        let mut pairs = Vec::new();
        for a in 0..d {
            for b in (a + 1)..d {
                if seen[a * d + b] {
                    pairs.push((a, b));
                }
            }
        }
        pairs
    }

    /// Indices of covariate columns by name.
    pub fn columns_named(&self, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.covariate_names
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| Error::input(format!("unknown covariate '{n}'")))
            })
            .collect()
    }
}

/// How one source column enters the design matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CovariateSpec {
    /// Parsed as a number, used as-is.
    Numeric(String),
    /// Integer-coded ordinal source expanded into indicator columns
    /// I(value >= level) for every level above the smallest.
    Cumulative(String),
}

impl CovariateSpec {
    fn source(&self) -> &str {
        match self {
            CovariateSpec::Numeric(s) | CovariateSpec::Cumulative(s) => s,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestSpec {
    pub id_col: String,
    /// Optional integer time column; row order within cluster otherwise.
    pub time_col: Option<String>,
    pub y_col: String,
    pub covariates: Vec<CovariateSpec>,
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub n_clusters: usize,
    pub n_obs: usize,
    pub k: usize,
    /// Original response label -> category code 1..=K.
    pub category_map: Vec<(String, usize)>,
    /// Design column names after cumulative expansion.
    pub columns: Vec<String>,
    pub warnings: Vec<String>,
}

/// Read a delimited file into an `OrdinalDataset`.
///
/// Responses may carry arbitrary integer labels; they are relabeled to
/// 1..=K in sorted order and the mapping is reported. Rows are grouped by
/// the id column and clusters are ordered by id, so permuting input rows
/// leaves the dataset unchanged whenever a time column fixes the
/// within-cluster order.
pub fn ingest_csv<R: Read>(reader: R, spec: &IngestSpec) -> Result<(OrdinalDataset, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::input(format!("cannot read CSV header: {e}")))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::input(format!("column '{name}' not found in header")))
    };
    let id_idx = col(&spec.id_col)?;
    let y_idx = col(&spec.y_col)?;
    let time_idx = spec.time_col.as_deref().map(col).transpose()?;
    let cov_idx: Vec<usize> =
        spec.covariates.iter().map(|c| col(c.source())).collect::<Result<_>>()?;

    struct Row {
        id: String,
        time: Option<i64>,
        y_raw: i64,
        covs: Vec<f64>,
        line: u64,
    }
    let mut rows: Vec<Row> = Vec::new();
    for (ri, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::input(format!("CSV record error: {e}")))?;
        let line = ri as u64 + 2; // header is line 1
        let get = |idx: usize| -> Result<&str> {
            let v = rec
                .get(idx)
                .ok_or_else(|| Error::input(format!("line {line}: missing field")))?;
            if v.is_empty() {
                return Err(Error::input(format!(
                    "line {line}: empty value in column '{}'",
                    &headers[idx]
                )));
            }
            Ok(v)
        };
        let id = get(id_idx)?.to_string();
        let y_raw = parse_integer(get(y_idx)?, line, &spec.y_col)?;
        let time = time_idx
            .map(|ti| parse_integer(get(ti)?, line, spec.time_col.as_deref().unwrap()))
            .transpose()?;
        let mut covs = Vec::with_capacity(cov_idx.len());
        for (ci, &idx) in cov_idx.iter().enumerate() {
            let raw = get(idx)?;
            let v: f64 = raw.parse().map_err(|_| {
                Error::input(format!(
                    "line {line}: cannot parse '{raw}' in column '{}' as a number",
                    spec.covariates[ci].source()
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::input(format!(
                    "line {line}: non-finite value in column '{}'",
                    spec.covariates[ci].source()
                )));
            }
            covs.push(v);
        }
        rows.push(Row { id, time, y_raw, covs, line });
    }
    if rows.is_empty() {
        return Err(Error::input("no data rows"));
    }

    // response relabeling
    let mut levels: Vec<i64> = rows.iter().map(|r| r.y_raw).collect();
    levels.sort_unstable();
    levels.dedup();
    let k = levels.len();
    if k < 2 {
        return Err(Error::input("response takes fewer than 2 distinct values"));
    }
    let code_of = |v: i64| levels.binary_search(&v).unwrap() + 1;

    // cumulative expansion plan per covariate spec
    let mut columns: Vec<String> = Vec::new();
    let mut expansion: Vec<Vec<f64>> = Vec::new(); // thresholds for cumulative, empty for numeric
    for (ci, cspec) in spec.covariates.iter().enumerate() {
        match cspec {
            CovariateSpec::Numeric(name) => {
                columns.push(name.clone());
                expansion.push(Vec::new());
            }
            CovariateSpec::Cumulative(name) => {
                let mut lv: Vec<i64> = Vec::new();
                for r in &rows {
                    let v = r.covs[ci];
                    if v.fract() != 0.0 {
                        return Err(Error::input(format!(
                            "line {}: cumulative column '{name}' must be integer coded, got {v}",
                            r.line
                        )));
                    }
                    lv.push(v as i64);
                }
                lv.sort_unstable();
                lv.dedup();
                if lv.len() < 2 {
                    return Err(Error::input(format!(
                        "cumulative column '{name}' takes fewer than 2 levels"
                    )));
                }
                let thresholds: Vec<f64> = lv[1..].iter().map(|&v| v as f64).collect();
                for t in &thresholds {
                    columns.push(format!("{name}>={t}"));
                }
                expansion.push(thresholds);
            }
        }
    }

    // group rows by id; BTreeMap iteration gives the sorted cluster order
    let mut grouped: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        grouped.entry(r.id.clone()).or_default().push(i);
    }

    // time grid
    let mut times: Vec<i64> = if time_idx.is_some() {
        rows.iter().map(|r| r.time.unwrap()).collect()
    } else {
        let longest = grouped.values().map(|v| v.len()).max().unwrap();
        (1..=longest as i64).collect()
    };
    times.sort_unstable();
    times.dedup();

    let mut warnings = Vec::new();
    let mut clusters = Vec::with_capacity(grouped.len());
    for (id, idxs) in &grouped {
        let mut members: Vec<(i64, usize)> = idxs
            .iter()
            .enumerate()
            .map(|(j, &ri)| (rows[ri].time.unwrap_or(j as i64 + 1), ri))
            .collect();
        members.sort_by_key(|&(t, _)| t);
        for w in members.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::input(format!(
                    "cluster '{id}' has duplicate time {} (lines {} and {})",
                    w[0].0, rows[w[0].1].line, rows[w[1].1].line
                )));
            }
        }
        let d_i = members.len();
        let positions: Vec<usize> =
            members.iter().map(|&(t, _)| times.binary_search(&t).unwrap()).collect();
        let y: Vec<usize> = members.iter().map(|&(_, ri)| code_of(rows[ri].y_raw)).collect();
        let mut x = DMatrix::zeros(d_i, columns.len());
        for (r, &(_, ri)) in members.iter().enumerate() {
            let mut c = 0;
            for (ci, thresholds) in expansion.iter().enumerate() {
                let v = rows[ri].covs[ci];
                if thresholds.is_empty() {
                    x[(r, c)] = v;
                    c += 1;
                } else {
                    for t in thresholds {
                        x[(r, c)] = if v >= *t { 1.0 } else { 0.0 };
                        c += 1;
                    }
                }
            }
        }
        clusters.push(Cluster { id: id.clone(), positions, y, x });
    }

    // constant columns cannot be identified alongside free cutpoints
    for (c, name) in columns.iter().enumerate() {
        let first = clusters[0].x[(0, c)];
        let constant =
            clusters.iter().all(|cl| (0..cl.x.nrows()).all(|r| cl.x[(r, c)] == first));
        if constant {
            warnings.push(format!(
                "covariate '{name}' is constant; it is confounded with the cutpoints"
            ));
        }
    }

    let report = IngestReport {
        n_clusters: clusters.len(),
        n_obs: rows.len(),
        k,
        category_map: levels.iter().map(|&v| (v.to_string(), code_of(v))).collect(),
        columns: columns.clone(),
        warnings,
    };
    let data = OrdinalDataset::new(clusters, k, columns, times)?;
    Ok((data, report))
}

fn parse_integer(raw: &str, line: u64, col: &str) -> Result<i64> {
    let v: f64 = raw
        .parse()
        .map_err(|_| Error::input(format!("line {line}: cannot parse '{raw}' in column '{col}'")))?;
    if v.fract() != 0.0 || !v.is_finite() || v.abs() > 9e15 {
        return Err(Error::input(format!(
            "line {line}: column '{col}' must be integer valued, got '{raw}'"
        )));
    }
    Ok(v as i64)
}
