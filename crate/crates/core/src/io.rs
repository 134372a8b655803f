//! CSV input and output.
//!
//! Data files are UTF-8, comma separated, with a mandatory header. An empty
//! field is a missing value. Numbers are written in shortest round-trip form,
//! so a write/read cycle reproduces every value exactly.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{FocusTerm, PerformanceRow};
use crate::pooling::PooledEstimate;
use crate::scalar::Real;
use crate::simgen::ReplicateRecord;
use crate::tabular::{Dataset, ModelFormula, VarKind, VarRole, VariableSpec};

/// Parsed CSV before any typing: header plus optional numeric cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("expected {expected_len} fields, found {len}")
        }
        _ => e.to_string(),
    };
    Error::Csv { line, message }
}

pub fn read_table<R: Read>(reader: R) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(|h| h.trim().to_string()).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::Csv {
            line: 1,
            message: "missing header row".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row = rec
            .iter()
            .zip(&headers)
            .map(|(field, name)| {
                let f = field.trim();
                if f.is_empty() {
                    return Ok(None);
                }
                f.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some).ok_or_else(|| Error::Csv {
                    line,
                    message: format!("non-numeric value `{f}` in column `{name}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(RawTable { headers, rows })
}

impl RawTable {
    fn column(&self, j: usize) -> impl Iterator<Item = Option<f64>> + '_ {
        self.rows.iter().map(move |r| r[j])
    }

    fn is_binary(&self, j: usize) -> bool {
        self.column(j).flatten().all(|v| v == 0.0 || v == 1.0)
    }

    /// Column specs for `formula`: its outcome is the outcome, `a:b` headers
    /// are derived interactions, a partially observed formula variable is the
    /// exposure, and kinds come from the values.
    pub fn infer_specs(&self, formula: &ModelFormula) -> Result<Vec<VariableSpec>> {
        if !self.headers.contains(&formula.outcome) {
            return Err(Error::UnknownVariable(formula.outcome.clone()));
        }
        for v in &formula.main_terms {
            if !self.headers.contains(v) {
                return Err(Error::UnknownVariable(v.clone()));
            }
        }
        Ok(self
            .headers
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let kind = if self.is_binary(j) {
                    VarKind::Binary
                } else {
                    VarKind::Continuous
                };
                if let Some((a, b)) = name.split_once(':') {
                    return VariableSpec::interaction(a, b, kind);
                }
                let role = if *name == formula.outcome {
                    VarRole::Outcome
                } else if formula.main_terms.contains(name) && self.column(j).any(|v| v.is_none()) {
                    VarRole::Exposure
                } else {
                    VarRole::Covariate
                };
                VariableSpec::new(name.clone(), kind, role)
            })
            .collect())
    }

    /// Builds a dataset whose columns must be named exactly as `specs`.
    pub fn into_dataset<T: Real>(self, specs: Vec<VariableSpec>) -> Result<Dataset<T>> {
        let names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        if names != self.headers.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::HeaderMismatch(format!(
                "expected [{}], found [{}]",
                names.join(", "),
                self.headers.join(", ")
            )));
        }
        let p = specs.len();
        let mut values = vec![Vec::with_capacity(self.rows.len()); p];
        let mut mask = vec![Vec::with_capacity(self.rows.len()); p];
        for row in &self.rows {
            for j in 0..p {
                values[j].push(T::lit(row[j].unwrap_or(0.0)));
                mask[j].push(row[j].is_some());
            }
        }
        Dataset::new(specs, values, mask)
    }
}

/// Reads `path` with column roles inferred from `formula`, adding any
/// interaction column the formula needs but the file lacks.
pub fn read_csv<T: Real>(path: &Path, formula: &ModelFormula) -> Result<Dataset<T>> {
    read_csv_from(File::open(path)?, formula)
}

pub fn read_csv_from<T: Real, R: Read>(reader: R, formula: &ModelFormula) -> Result<Dataset<T>> {
    let table = read_table(reader)?;
    let specs = table.infer_specs(formula)?;
    let mut data: Dataset<T> = table.into_dataset(specs)?;
    for (a, b) in &formula.interaction_terms {
        if data.interaction_column(a, b).is_none() {
            let (ja, jb) = (data.index_of(a)?, data.index_of(b)?);
            let n = data.n_obs();
            let vals = (0..n).map(|i| data.column(ja)[i] * data.column(jb)[i]).collect();
            let mask = (0..n).map(|i| data.is_observed(i, ja) && data.is_observed(i, jb)).collect();
            let both_binary = data.spec(ja).kind == VarKind::Binary && data.spec(jb).kind == VarKind::Binary;
            let kind = if both_binary { VarKind::Binary } else { VarKind::Continuous };
            let at = data.n_vars();
            data = data.with_column(at, VariableSpec::interaction(a, b, kind), vals, mask)?;
        }
    }
    Ok(data)
}

/// Reads `path` against an explicit column specification.
pub fn read_csv_with_schema<T: Real>(path: &Path, specs: Vec<VariableSpec>) -> Result<Dataset<T>> {
    read_table(File::open(path)?)?.into_dataset(specs)
}

fn fmt_num<T: Real>(v: T) -> String {
    v.to_string()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite()).map(|x| x.to_string()).unwrap_or_default()
}

fn finish_writer<W: Write>(w: csv::Writer<W>) -> Result<()> {
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?
        .flush()?;
    Ok(())
}

pub fn write_csv<T: Real, W: Write>(data: &Dataset<T>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(data.columns().iter().map(|c| c.name.as_str())).map_err(csv_error)?;
    for i in 0..data.n_obs() {
        w.write_record((0..data.n_vars()).map(|j| data.value(i, j).map(fmt_num).unwrap_or_default()))
            .map_err(csv_error)?;
    }
    finish_writer(w)
}

pub fn write_csv_file<T: Real>(data: &Dataset<T>, path: &Path) -> Result<()> {
    write_csv(data, File::create(path)?)
}

pub const REPLICATE_HEADER: [&str; 10] = [
    "dgm", "replicate", "method", "term", "estimate", "se", "ci_low", "ci_high", "truth", "failed",
];

pub fn write_replicates<W: Write>(records: &[ReplicateRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPLICATE_HEADER).map_err(csv_error)?;
    for r in records {
        let num = |v: f64| if r.failed { String::new() } else { v.to_string() };
        w.write_record([
            r.dgm.to_string(),
            r.replicate.to_string(),
            r.method.to_string(),
            r.term.clone(),
            num(r.estimate),
            num(r.se),
            num(r.ci_low),
            num(r.ci_high),
            r.truth.to_string(),
            u8::from(r.failed).to_string(),
        ])
        .map_err(csv_error)?;
    }
    finish_writer(w)
}

pub fn read_replicates<R: Read>(reader: R) -> Result<Vec<ReplicateRecord>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    if headers.iter().collect::<Vec<_>>() != REPLICATE_HEADER {
        return Err(Error::HeaderMismatch(format!(
            "expected [{}], found [{}]",
            REPLICATE_HEADER.join(", "),
            headers.iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |col: &str, v: &str| Error::Csv {
            line,
            message: format!("invalid `{col}` value `{v}`"),
        };
        let num = |k: usize| -> Result<f64> {
            let v = rec[k].trim();
            if v.is_empty() {
                Ok(f64::NAN)
            } else {
                v.parse().map_err(|_| bad(REPLICATE_HEADER[k], v))
            }
        };
        out.push(ReplicateRecord {
            dgm: rec[0].parse().map_err(|_| bad("dgm", &rec[0]))?,
            replicate: rec[1].trim().parse().map_err(|_| bad("replicate", &rec[1]))?,
            method: rec[2].parse().map_err(|_| bad("method", &rec[2]))?,
            term: rec[3].to_string(),
            estimate: num(4)?,
            se: num(5)?,
            ci_low: num(6)?,
            ci_high: num(7)?,
            truth: num(8)?,
            failed: match rec[9].trim() {
                "0" => false,
                "1" => true,
                v => return Err(bad("failed", v)),
            },
        });
    }
    Ok(out)
}

pub const PERFORMANCE_HEADER: [&str; 17] = [
    "dgm",
    "method",
    "term",
    "term_name",
    "truth",
    "n_sim_effective",
    "mean_estimate",
    "bias",
    "mcse_bias",
    "relative_bias_pct",
    "mcse_relative_bias",
    "coverage_pct",
    "mcse_coverage",
    "mod_se",
    "emp_se",
    "relative_error_pct",
    "mcse_relative_error",
];

pub fn write_performance<W: Write>(rows: &[PerformanceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PERFORMANCE_HEADER).map_err(csv_error)?;
    for r in rows {
        w.write_record([
            r.dgm.to_string(),
            r.method.to_string(),
            r.term.label().to_string(),
            r.term.term(),
            r.truth.to_string(),
            r.n_sim_effective.to_string(),
            fmt_opt(Some(r.mean_estimate)),
            fmt_opt(Some(r.bias)),
            fmt_opt(r.mcse_bias),
            fmt_opt(r.relative_bias_pct),
            fmt_opt(r.mcse_relative_bias),
            fmt_opt(Some(r.coverage_pct)),
            fmt_opt(Some(r.mcse_coverage)),
            fmt_opt(Some(r.mod_se)),
            fmt_opt(r.emp_se),
            fmt_opt(r.relative_error_pct),
            fmt_opt(r.mcse_relative_error),
        ])
        .map_err(csv_error)?;
    }
    finish_writer(w)
}

/// Wide layout: one line per (mechanism, method), six columns per term.
pub fn write_wide_table<W: Write>(rows: &[PerformanceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["dgm".to_string(), "method".to_string()];
    for t in FocusTerm::ALL {
        for m in ["rel_bias", "mcse", "coverage", "mcse", "rel_error", "mcse"] {
            header.push(format!("{}_{m}", t.label()));
        }
    }
    w.write_record(&header).map_err(csv_error)?;
    let mut i = 0;
    while i < rows.len() {
        let (dgm, method) = (rows[i].dgm, rows[i].method);
        let mut line = vec![dgm.to_string(), method.label().to_string()];
        for t in FocusTerm::ALL {
            match rows[i..]
                .iter()
                .take_while(|r| r.dgm == dgm && r.method == method)
                .find(|r| r.term == t)
            {
                Some(r) => line.extend([
                    // zero truth has no relative bias; show the absolute bias
                    fmt_opt(r.relative_bias_pct.or(Some(r.bias))),
                    fmt_opt(r.mcse_relative_bias.or(r.mcse_bias)),
                    fmt_opt(Some(r.coverage_pct)),
                    fmt_opt(Some(r.mcse_coverage)),
                    fmt_opt(r.relative_error_pct),
                    fmt_opt(r.mcse_relative_error),
                ]),
                None => line.extend(std::iter::repeat_n(String::new(), 6)),
            }
        }
        w.write_record(&line).map_err(csv_error)?;
        while i < rows.len() && rows[i].dgm == dgm && rows[i].method == method {
            i += 1;
        }
    }
    finish_writer(w)
}

/// The nine per-figure series: bias, coverage and relative error for the
/// interaction, the partially observed and the fully observed coefficient.
pub fn figure_series() -> Vec<(String, FocusTerm, &'static str)> {
    let terms = [(FocusTerm::Xz, "interaction"), (FocusTerm::X, "partial"), (FocusTerm::Z, "full")];
    let mut out = Vec::new();
    for (k, measure) in ["bias", "coverage", "relative_error"].into_iter().enumerate() {
        for (t, (term, label)) in terms.iter().enumerate() {
            out.push((format!("figure_{}_{measure}_{label}.csv", 3 * k + t + 1), *term, measure));
        }
    }
    out
}

pub fn write_figure<W: Write>(rows: &[PerformanceRow], term: FocusTerm, measure: &str, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["dgm", "method", "value", "mcse", "n_sim_effective"]).map_err(csv_error)?;
    for r in rows.iter().filter(|r| r.term == term) {
        let (v, m) = match measure {
            "bias" => (Some(r.bias), r.mcse_bias),
            "coverage" => (Some(r.coverage_pct), Some(r.mcse_coverage)),
            _ => (r.relative_error_pct, r.mcse_relative_error),
        };
        w.write_record([
            r.dgm.to_string(),
            r.method.label().to_string(),
            fmt_opt(v),
            fmt_opt(m),
            r.n_sim_effective.to_string(),
        ])
        .map_err(csv_error)?;
    }
    finish_writer(w)
}

/// Pooled or complete-case results for one method, odds-ratio layout.
pub fn write_pooled<T: Real, W: Write>(rows: &[(String, Vec<PooledEstimate<T>>)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "method", "term", "estimate", "se", "df", "ci_low", "ci_high", "odds_ratio", "or_ci_low", "or_ci_high", "m",
    ])
    .map_err(csv_error)?;
    for (method, ests) in rows {
        for p in ests {
            w.write_record([
                method.clone(),
                p.term.clone(),
                fmt_num(p.estimate),
                fmt_num(p.std_error()),
                p.df.to_string(),
                fmt_num(p.ci_low),
                fmt_num(p.ci_high),
                fmt_num(p.or_estimate),
                fmt_num(p.or_ci_low),
                fmt_num(p.or_ci_high),
                p.m.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    finish_writer(w)
}
