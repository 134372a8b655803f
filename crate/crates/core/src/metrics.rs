//! Performance measures over replicate-level results.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::simgen::{DgmId, Method, ReplicateRecord, EXPOSURE, MODERATOR};
use crate::tabular::interaction_name;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v);
    Some(v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64)
}

pub fn bias(estimates: &[f64], theta: f64) -> f64 {
    mean(estimates) - theta
}

/// `100·(mean − θ)/θ`, on the coefficient scale.
pub fn relative_bias(estimates: &[f64], theta: f64) -> Result<f64> {
    if theta == 0.0 {
        return Err(Error::UndefinedRelativeBias);
    }
    Ok(100.0 * (mean(estimates) - theta) / theta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    pub pct: f64,
    /// `100·√(p(1 − p)/n)`.
    pub mcse: f64,
}

impl Coverage {
    /// Whether the coverage lies inside `95 ± 1.96·√(0.95·0.05/n)`.
    pub fn in_nominal_band(&self, n: usize) -> bool {
        let half = 100.0 * 1.96 * (0.95 * 0.05 / n as f64).sqrt();
        (self.pct - 95.0).abs() <= half
    }
}

pub fn coverage(ci_lows: &[f64], ci_highs: &[f64], theta: f64) -> Coverage {
    assert_eq!(ci_lows.len(), ci_highs.len(), "interval bounds differ in length");
    let n = ci_lows.len() as f64;
    let hits = ci_lows
        .iter()
        .zip(ci_highs)
        .filter(|&(&lo, &hi)| lo <= theta && theta <= hi)
        .count() as f64;
    let p = hits / n;
    Coverage {
        pct: 100.0 * p,
        mcse: 100.0 * (p * (1.0 - p) / n).sqrt(),
    }
}

/// Standard deviation of the estimates (divisor `n − 1`); `None` below two.
pub fn emp_se(estimates: &[f64]) -> Option<f64> {
    sample_var(estimates).map(f64::sqrt)
}

/// Square root of the mean model variance.
pub fn mod_se(variances: &[f64]) -> f64 {
    mean(variances).sqrt()
}

/// `100·(ModSE/EmpSE − 1)`.
pub fn relative_error(mod_se: f64, emp_se: f64) -> Result<f64> {
    if !(emp_se > 0.0) {
        return Err(Error::UndefinedRelativeError);
    }
    Ok(100.0 * (mod_se / emp_se - 1.0))
}

/// `EmpSE/√n`.
pub fn mcse_bias(estimates: &[f64]) -> Option<f64> {
    emp_se(estimates).map(|s| s / (estimates.len() as f64).sqrt())
}

/// `100·(ModSE/EmpSE)·√(Var(V̂)/(4·ModSE⁴·n) + 1/(2(n − 1)))`.
pub fn mcse_relative_error(estimates: &[f64], variances: &[f64]) -> Option<f64> {
    let emp = emp_se(estimates)?;
    let var_v = sample_var(variances)?;
    if !(emp > 0.0) {
        return None;
    }
    let n = estimates.len() as f64;
    let m = mod_se(variances);
    Some(100.0 * (m / emp) * (var_v / (4.0 * m.powi(4) * n) + 1.0 / (2.0 * (n - 1.0))).sqrt())
}

/// The three coefficients tabulated per mechanism and method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FocusTerm {
    Z,
    X,
    Xz,
}

impl FocusTerm {
    pub const ALL: [FocusTerm; 3] = [FocusTerm::Z, FocusTerm::X, FocusTerm::Xz];

    pub fn label(self) -> &'static str {
        match self {
            FocusTerm::Z => "Z",
            FocusTerm::X => "X",
            FocusTerm::Xz => "XZ",
        }
    }

    /// Model term name.
    pub fn term(self) -> String {
        match self {
            FocusTerm::Z => MODERATOR.to_string(),
            FocusTerm::X => EXPOSURE.to_string(),
            FocusTerm::Xz => interaction_name(EXPOSURE, MODERATOR),
        }
    }

    pub fn from_term(term: &str) -> Option<Self> {
        FocusTerm::ALL.into_iter().find(|f| f.term() == term)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceRow {
    pub dgm: DgmId,
    pub method: Method,
    pub term: FocusTerm,
    pub truth: f64,
    pub n_sim_effective: usize,
    pub mean_estimate: f64,
    pub bias: f64,
    /// `None` when the truth is zero.
    pub relative_bias_pct: Option<f64>,
    pub coverage_pct: f64,
    pub mod_se: f64,
    pub emp_se: Option<f64>,
    pub relative_error_pct: Option<f64>,
    pub mcse_bias: Option<f64>,
    pub mcse_relative_bias: Option<f64>,
    pub mcse_coverage: f64,
    pub mcse_relative_error: Option<f64>,
}

impl PerformanceRow {
    pub fn from_records(dgm: DgmId, method: Method, term: FocusTerm, records: &[&ReplicateRecord]) -> Self {
        let ok: Vec<&&ReplicateRecord> = records.iter().filter(|r| !r.failed).collect();
        let truth = records.first().map(|r| r.truth).unwrap_or(f64::NAN);
        let est: Vec<f64> = ok.iter().map(|r| r.estimate).collect();
        let var: Vec<f64> = ok.iter().map(|r| r.se * r.se).collect();
        let lo: Vec<f64> = ok.iter().map(|r| r.ci_low).collect();
        let hi: Vec<f64> = ok.iter().map(|r| r.ci_high).collect();
        let cov = coverage(&lo, &hi, truth);
        let emp = emp_se(&est);
        let mse = mod_se(&var);
        let mcse_b = mcse_bias(&est);
        PerformanceRow {
            dgm,
            method,
            term,
            truth,
            n_sim_effective: est.len(),
            mean_estimate: mean(&est),
            bias: bias(&est, truth),
            relative_bias_pct: relative_bias(&est, truth).ok(),
            coverage_pct: cov.pct,
            mod_se: mse,
            emp_se: emp,
            relative_error_pct: emp.and_then(|e| relative_error(mse, e).ok()),
            mcse_bias: mcse_b,
            mcse_relative_bias: mcse_b.filter(|_| truth != 0.0).map(|m| 100.0 * m / truth.abs()),
            mcse_coverage: cov.mcse,
            mcse_relative_error: mcse_relative_error(&est, &var),
        }
    }
}

/// One row per (mechanism, method, focus term), ordered by mechanism, then
/// method (Passive, JAV, SIA, SMCFCS, CC), then Z, X, XZ.
///
/// Every method present anywhere must have every focus term present for that
/// mechanism; otherwise the gap is reported.
pub fn build_table(records: &[ReplicateRecord]) -> Result<Vec<PerformanceRow>> {
    let methods: BTreeSet<Method> = records.iter().map(|r| r.method).collect();
    let mut cells: BTreeMap<(DgmId, Method, FocusTerm), Vec<&ReplicateRecord>> = BTreeMap::new();
    let mut terms_by_dgm: BTreeMap<DgmId, BTreeSet<FocusTerm>> = BTreeMap::new();
    for r in records {
        if let Some(f) = FocusTerm::from_term(&r.term) {
            terms_by_dgm.entry(r.dgm).or_default().insert(f);
            cells.entry((r.dgm, r.method, f)).or_default().push(r);
        }
    }
    let mut rows = Vec::new();
    for (dgm, terms) in &terms_by_dgm {
        for &method in &methods {
            for &term in terms {
                let cell = cells.get(&(*dgm, method, term)).ok_or_else(|| Error::MissingCell {
                    dgm: dgm.to_string(),
                    method: method.to_string(),
                    term: term.term(),
                })?;
                rows.push(PerformanceRow::from_records(*dgm, method, term, cell));
            }
        }
    }
    Ok(rows)
}
