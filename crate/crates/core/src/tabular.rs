//! Rectangular data with an explicit observation mask, variable metadata, and
//! the substantive-model formula shared by all imputation strategies.

use std::collections::HashSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Binary,
    Continuous,
}

impl VarKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VarKind::Binary => "binary",
            VarKind::Continuous => "continuous",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VarRole {
    Outcome,
    Covariate,
    Exposure,
    /// Materialised product of two parent columns.
    DerivedInteraction(String, String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VarKind,
    pub role: VarRole,
}

impl VariableSpec {
    pub fn new(name: impl Into<String>, kind: VarKind, role: VarRole) -> Self {
        Self {
            name: name.into(),
            kind,
            role,
        }
    }

    pub fn interaction(a: &str, b: &str, kind: VarKind) -> Self {
        Self::new(
            interaction_name(a, b),
            kind,
            VarRole::DerivedInteraction(a.to_string(), b.to_string()),
        )
    }

    pub fn parents(&self) -> Option<(&str, &str)> {
        match &self.role {
            VarRole::DerivedInteraction(a, b) => Some((a, b)),
            _ => None,
        }
    }

    pub fn is_derived(&self) -> bool {
        self.parents().is_some()
    }
}

/// Canonical column name of the product `a·b`.
pub fn interaction_name(a: &str, b: &str) -> String {
    format!("{a}:{b}")
}

/// Per-variable observation counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingnessReport {
    pub n_obs: usize,
    pub observed: Vec<(String, usize)>,
    pub n_complete_cases: usize,
}

impl MissingnessReport {
    pub fn observed_count(&self, name: &str) -> Option<usize> {
        self.observed
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, c)| c)
    }
}

/// Column-major table. Masked cells hold zero and are never read by fits.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    columns: Vec<VariableSpec>,
    n_obs: usize,
    values: Vec<Vec<T>>,
    mask: Vec<Vec<bool>>,
}

impl<T: Real> Dataset<T> {
    /// Validates and builds a dataset from per-column values and masks
    /// (`true` = observed).
    pub fn new(columns: Vec<VariableSpec>, values: Vec<Vec<T>>, mask: Vec<Vec<bool>>) -> Result<Self> {
        if columns.len() != values.len() || columns.len() != mask.len() {
            return Err(Error::InvalidDataset(format!(
                "{} specs, {} value columns, {} mask columns",
                columns.len(),
                values.len(),
                mask.len()
            )));
        }
        let n_obs = values.first().map_or(0, Vec::len);
        for (spec, (v, m)) in columns.iter().zip(values.iter().zip(&mask)) {
            if v.len() != n_obs || m.len() != n_obs {
                return Err(Error::InvalidDataset(format!(
                    "column `{}` has {} values and {} mask entries, expected {n_obs}",
                    spec.name,
                    v.len(),
                    m.len()
                )));
            }
        }
        let mut names = HashSet::new();
        for c in &columns {
            if !names.insert(c.name.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate column `{}`", c.name)));
            }
        }
        let outcomes = columns.iter().filter(|c| c.role == VarRole::Outcome).count();
        if outcomes > 1 {
            return Err(Error::InvalidDataset(format!("{outcomes} outcome columns")));
        }
        let mut ds = Self {
            columns,
            n_obs,
            values,
            mask,
        };
        for j in 0..ds.columns.len() {
            for i in 0..n_obs {
                if !ds.mask[j][i] {
                    ds.values[j][i] = T::zero();
                } else if ds.columns[j].kind == VarKind::Binary {
                    let v = ds.values[j][i];
                    if v != T::zero() && v != T::one() {
                        return Err(Error::InvalidDataset(format!(
                            "binary column `{}` has value {v} at row {i}",
                            ds.columns[j].name
                        )));
                    }
                } else if !ds.values[j][i].is_finite() {
                    return Err(Error::InvalidDataset(format!(
                        "non-finite value in `{}` at row {i}",
                        ds.columns[j].name
                    )));
                }
            }
        }
        for j in 0..ds.columns.len() {
            if let Some((a, b)) = ds.columns[j].parents() {
                let (ia, ib) = (ds.index_of(a)?, ds.index_of(b)?);
                if ia == j || ib == j {
                    return Err(Error::InvalidDataset(format!(
                        "interaction `{}` names itself as a parent",
                        ds.columns[j].name
                    )));
                }
                for i in 0..n_obs {
                    if ds.mask[j][i] != (ds.mask[ia][i] && ds.mask[ib][i]) {
                        return Err(Error::InvalidDataset(format!(
                            "interaction `{}` observation at row {i} disagrees with its parents",
                            ds.columns[j].name
                        )));
                    }
                }
            }
        }
        Ok(ds)
    }

    /// Fully observed dataset.
    pub fn from_columns(columns: Vec<VariableSpec>, values: Vec<Vec<T>>) -> Result<Self> {
        let mask = values.iter().map(|v| vec![true; v.len()]).collect();
        Self::new(columns, values, mask)
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_vars(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[VariableSpec] {
        &self.columns
    }

    pub fn spec(&self, j: usize) -> &VariableSpec {
        &self.columns[j]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn column(&self, j: usize) -> &[T] {
        &self.values[j]
    }

    pub fn column_mask(&self, j: usize) -> &[bool] {
        &self.mask[j]
    }

    pub fn column_by_name(&self, name: &str) -> Result<&[T]> {
        Ok(self.column(self.index_of(name)?))
    }

    pub fn value(&self, i: usize, j: usize) -> Option<T> {
        self.mask[j][i].then(|| self.values[j][i])
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[j][i]
    }

    pub fn outcome_index(&self) -> Option<usize> {
        self.columns.iter().position(|c| c.role == VarRole::Outcome)
    }

    pub fn is_fully_observed(&self) -> bool {
        self.mask.iter().all(|m| m.iter().all(|&b| b))
    }

    pub fn missing_rows(&self, j: usize) -> Vec<usize> {
        (0..self.n_obs).filter(|&i| !self.mask[j][i]).collect()
    }

    pub fn observed_rows(&self, j: usize) -> Vec<usize> {
        (0..self.n_obs).filter(|&i| self.mask[j][i]).collect()
    }

    pub fn is_complete_row(&self, i: usize) -> bool {
        self.mask.iter().all(|m| m[i])
    }

    /// Index of the derived column holding `a·b` (either order), if any.
    pub fn interaction_column(&self, a: &str, b: &str) -> Option<usize> {
        self.columns.iter().position(|c| match c.parents() {
            Some((x, y)) => (x == a && y == b) || (x == b && y == a),
            None => false,
        })
    }

    /// Imputation write: stores `v` and marks the cell observed. Derived
    /// columns are written independently of their parents (needed by JAV).
    pub fn set_imputed(&mut self, i: usize, j: usize, v: T) {
        debug_assert!(
            self.columns[j].kind != VarKind::Binary || v == T::zero() || v == T::one(),
            "non-binary value written to binary column"
        );
        self.values[j][i] = v;
        self.mask[j][i] = true;
    }

    /// Recomputes every derived interaction as the product of its parents;
    /// a cell is observed iff both parents are.
    pub fn recompute_interactions(&mut self) {
        for j in 0..self.columns.len() {
            let Some((a, b)) = self.columns[j].parents() else {
                continue;
            };
            let (ia, ib) = (
                self.index_of(a).expect("validated parent"),
                self.index_of(b).expect("validated parent"),
            );
            for i in 0..self.n_obs {
                let obs = self.mask[ia][i] && self.mask[ib][i];
                self.mask[j][i] = obs;
                self.values[j][i] = if obs {
                    self.values[ia][i] * self.values[ib][i]
                } else {
                    T::zero()
                };
            }
        }
    }

    /// Rows where a derived interaction disagrees with the product of its
    /// parents (only possible after a JAV-style write).
    pub fn interaction_inconsistencies(&self) -> usize {
        let mut n = 0;
        for (j, spec) in self.columns.iter().enumerate() {
            let Some((a, b)) = spec.parents() else { continue };
            let (ia, ib) = (self.index_of(a).unwrap(), self.index_of(b).unwrap());
            n += (0..self.n_obs)
                .filter(|&i| {
                    self.mask[j][i]
                        && self.mask[ia][i]
                        && self.mask[ib][i]
                        && self.values[j][i] != self.values[ia][i] * self.values[ib][i]
                })
                .count();
        }
        n
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            columns: self.columns.clone(),
            n_obs: rows.len(),
            values: self
                .values
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
            mask: self
                .mask
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
        }
    }

    /// Returns a copy with an extra column inserted at `at`.
    pub fn with_column(&self, at: usize, spec: VariableSpec, values: Vec<T>, mask: Vec<bool>) -> Result<Self> {
        let mut columns = self.columns.clone();
        let mut vals = self.values.clone();
        let mut masks = self.mask.clone();
        columns.insert(at, spec);
        vals.insert(at, values);
        masks.insert(at, mask);
        Self::new(columns, vals, masks)
    }

    /// Copy with the given cells of column `j` masked out.
    pub fn with_masked(&self, j: usize, rows: &[usize]) -> Self {
        let mut out = self.clone();
        for &i in rows {
            out.mask[j][i] = false;
            out.values[j][i] = T::zero();
        }
        out
    }

    pub fn missingness_report(&self) -> MissingnessReport {
        MissingnessReport {
            n_obs: self.n_obs,
            observed: self
                .columns
                .iter()
                .zip(&self.mask)
                .map(|(c, m)| (c.name.clone(), m.iter().filter(|&&b| b).count()))
                .collect(),
            n_complete_cases: (0..self.n_obs).filter(|&i| self.is_complete_row(i)).count(),
        }
    }
}

/// Restricts to fully observed rows.
pub fn complete_cases<T: Real>(data: &Dataset<T>) -> Result<(Dataset<T>, MissingnessReport)> {
    let rows: Vec<usize> = (0..data.n_obs()).filter(|&i| data.is_complete_row(i)).collect();
    if rows.is_empty() {
        return Err(Error::EmptyCompleteCases);
    }
    let cc = data.select_rows(&rows);
    let mut report = data.missingness_report();
    report.n_complete_cases = rows.len();
    Ok((cc, report))
}

/// `outcome ~ main terms + interaction pairs`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelFormula {
    pub outcome: String,
    pub main_terms: Vec<String>,
    pub interaction_terms: Vec<(String, String)>,
}

impl ModelFormula {
    pub fn new(
        outcome: impl Into<String>,
        main_terms: Vec<String>,
        interaction_terms: Vec<(String, String)>,
    ) -> Result<Self> {
        let outcome = outcome.into();
        let mut seen = HashSet::new();
        for t in &main_terms {
            if t == &outcome {
                return Err(Error::InvalidFormula(format!("outcome `{t}` used as a term")));
            }
            if !seen.insert(t.clone()) {
                return Err(Error::InvalidFormula(format!("duplicate term `{t}`")));
            }
        }
        let mut pairs = HashSet::new();
        for (a, b) in &interaction_terms {
            if a == b {
                return Err(Error::InvalidFormula(format!("self-interaction `{a}:{b}`")));
            }
            for v in [a, b] {
                if !seen.contains(v) {
                    return Err(Error::InvalidFormula(format!(
                        "interaction member `{v}` is not a main term"
                    )));
                }
            }
            let key = if a < b { (a, b) } else { (b, a) };
            if !pairs.insert(key) {
                return Err(Error::InvalidFormula(format!("duplicate interaction `{a}:{b}`")));
            }
        }
        Ok(Self {
            outcome,
            main_terms,
            interaction_terms,
        })
    }

    /// Parses `y ~ a + b + a:b`.
    pub fn parse(s: &str) -> Result<Self> {
        let (lhs, rhs) = s
            .split_once('~')
            .ok_or_else(|| Error::InvalidFormula(format!("missing `~` in `{s}`")))?;
        let outcome = lhs.trim();
        if outcome.is_empty() {
            return Err(Error::InvalidFormula("empty outcome".into()));
        }
        let mut mains = Vec::new();
        let mut inters = Vec::new();
        for term in rhs.split('+').map(str::trim) {
            if term.is_empty() {
                return Err(Error::InvalidFormula(format!("empty term in `{s}`")));
            }
            match term.split_once(':') {
                Some((a, b)) => inters.push((a.trim().to_string(), b.trim().to_string())),
                None => mains.push(term.to_string()),
            }
        }
        Self::new(outcome, mains, inters)
    }

    /// Coefficient names in design-column order.
    pub fn term_names(&self) -> Vec<String> {
        let mut names = vec![INTERCEPT.to_string()];
        names.extend(self.main_terms.iter().cloned());
        names.extend(self.interaction_terms.iter().map(|(a, b)| interaction_name(a, b)));
        names
    }

    pub fn n_terms(&self) -> usize {
        1 + self.main_terms.len() + self.interaction_terms.len()
    }

    /// Additive model `target ~ predictors`, as used by imputation steps.
    pub fn additive(target: &str, predictors: Vec<String>) -> Result<Self> {
        Self::new(target, predictors, Vec::new())
    }

    /// Main terms other than `exclude`.
    pub fn mains_except(&self, exclude: &[&str]) -> Vec<String> {
        self.main_terms
            .iter()
            .filter(|t| !exclude.contains(&t.as_str()))
            .cloned()
            .collect()
    }
}

impl fmt::Display for ModelFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut terms: Vec<String> = self.main_terms.clone();
        terms.extend(self.interaction_terms.iter().map(|(a, b)| interaction_name(a, b)));
        write!(f, "{} ~ {}", self.outcome, terms.join(" + "))
    }
}

pub const INTERCEPT: &str = "(Intercept)";

/// Which rows a design matrix is built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowSelector {
    All,
    /// Rows with every formula variable (outcome included) observed.
    Complete,
    Indices(Vec<usize>),
}

/// Column sources for one formula against one dataset.
struct DesignPlan {
    outcome: usize,
    mains: Vec<usize>,
    /// Either a materialised derived column, or the two parents to multiply.
    inters: Vec<InteractionSource>,
}

enum InteractionSource {
    Stored(usize),
    Product(usize, usize),
}

impl DesignPlan {
    fn new<T: Real>(data: &Dataset<T>, formula: &ModelFormula) -> Result<Self> {
        let outcome = data.index_of(&formula.outcome)?;
        let mains = formula
            .main_terms
            .iter()
            .map(|t| data.index_of(t))
            .collect::<Result<Vec<_>>>()?;
        let inters = formula
            .interaction_terms
            .iter()
            .map(|(a, b)| {
                let (ia, ib) = (data.index_of(a)?, data.index_of(b)?);
                Ok(match data.interaction_column(a, b) {
                    Some(j) => InteractionSource::Stored(j),
                    None => InteractionSource::Product(ia, ib),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { outcome, mains, inters })
    }

    fn design_columns(&self) -> Vec<usize> {
        let mut cols = self.mains.clone();
        for s in &self.inters {
            match *s {
                InteractionSource::Stored(j) => cols.push(j),
                InteractionSource::Product(a, b) => cols.extend([a, b]),
            }
        }
        cols
    }

    fn fill_row<T: Real>(&self, data: &Dataset<T>, i: usize, out: &mut [T]) {
        out[0] = T::one();
        let mut k = 1;
        for &j in &self.mains {
            out[k] = data.values[j][i];
            k += 1;
        }
        for s in &self.inters {
            out[k] = match *s {
                InteractionSource::Stored(j) => data.values[j][i],
                InteractionSource::Product(a, b) => data.values[a][i] * data.values[b][i],
            };
            k += 1;
        }
    }
}

fn resolve_rows<T: Real>(
    data: &Dataset<T>,
    needed: &[usize],
    rows: &RowSelector,
) -> Result<Vec<usize>> {
    Ok(match rows {
        RowSelector::All => (0..data.n_obs()).collect(),
        RowSelector::Complete => (0..data.n_obs())
            .filter(|&i| needed.iter().all(|&j| data.mask[j][i]))
            .collect(),
        RowSelector::Indices(ix) => {
            if let Some(&bad) = ix.iter().find(|&&i| i >= data.n_obs()) {
                return Err(Error::DimensionMismatch(format!(
                    "row index {bad} out of range for {} rows",
                    data.n_obs()
                )));
            }
            ix.clone()
        }
    })
}

/// Design matrix `[1, main terms..., interaction products...]` for the
/// selected rows. Interactions use the materialised derived column when the
/// dataset carries one (so a JAV-imputed column is analysed as imputed), and
/// the product of the parents otherwise.
pub fn build_design_matrix<T: Real>(
    data: &Dataset<T>,
    formula: &ModelFormula,
    rows: &RowSelector,
) -> Result<Matrix<T>> {
    let plan = DesignPlan::new(data, formula)?;
    let needed = plan.design_columns();
    let sel = match rows {
        // outcome is not part of the design
        RowSelector::Complete => (0..data.n_obs())
            .filter(|&i| needed.iter().all(|&j| data.mask[j][i]))
            .collect(),
        other => resolve_rows(data, &needed, other)?,
    };
    design_for_rows(data, &plan, &needed, &sel)
}

fn design_for_rows<T: Real>(
    data: &Dataset<T>,
    plan: &DesignPlan,
    needed: &[usize],
    rows: &[usize],
) -> Result<Matrix<T>> {
    let p = 1 + plan.mains.len() + plan.inters.len();
    let mut x = Matrix::zeros(rows.len(), p);
    for (r, &i) in rows.iter().enumerate() {
        if let Some(&j) = needed.iter().find(|&&j| !data.mask[j][i]) {
            return Err(Error::IncompleteRow {
                row: i,
                variable: data.columns[j].name.clone(),
            });
        }
        plan.fill_row(data, i, x.row_mut(r));
    }
    Ok(x)
}

/// Design matrix, response and the dataset rows they came from.
#[derive(Debug, Clone)]
pub struct ModelFrame<T> {
    pub x: Matrix<T>,
    pub y: Vec<T>,
    pub rows: Vec<usize>,
}

/// Like [`build_design_matrix`] but also extracts the response; with
/// [`RowSelector::Complete`] the outcome must be observed too.
pub fn model_frame<T: Real>(
    data: &Dataset<T>,
    formula: &ModelFormula,
    rows: &RowSelector,
) -> Result<ModelFrame<T>> {
    let plan = DesignPlan::new(data, formula)?;
    let mut needed = plan.design_columns();
    needed.push(plan.outcome);
    let sel = resolve_rows(data, &needed, rows)?;
    let x = design_for_rows(data, &plan, &needed, &sel)?;
    let y = sel.iter().map(|&i| data.values[plan.outcome][i]).collect();
    Ok(ModelFrame { x, y, rows: sel })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(name: &str, kind: VarKind, role: VarRole) -> VariableSpec {
        VariableSpec::new(name, kind, role)
    }

    fn toy(x: Vec<f64>, xmask: Vec<bool>, z: Vec<f64>) -> Dataset<f64> {
        let n = x.len();
        let y: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let xz: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a * b).collect();
        Dataset::new(
            vec![
                spec("y", VarKind::Binary, VarRole::Outcome),
                spec("x", VarKind::Binary, VarRole::Exposure),
                spec("z", VarKind::Continuous, VarRole::Covariate),
                VariableSpec::interaction("x", "z", VarKind::Continuous),
            ],
            vec![y, x, z, xz],
            vec![vec![true; n], xmask.clone(), vec![true; n], xmask],
        )
        .unwrap()
    }

    fn formula() -> ModelFormula {
        ModelFormula::parse("y ~ x + z + x:z").unwrap()
    }

    #[test]
    fn design_row_of_ones() {
        let d = toy(vec![1.0], vec![true], vec![1.0]);
        let m = build_design_matrix(&d, &formula(), &RowSelector::All).unwrap();
        assert_eq!(m.row(0), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_annihilates_product() {
        let d = toy(vec![0.0], vec![true], vec![5.0]);
        let m = build_design_matrix(&d, &formula(), &RowSelector::All).unwrap();
        assert_eq!(m.row(0), &[1.0, 0.0, 5.0, 0.0]);
    }

    #[test]
    fn complete_selector_filters_masked() {
        let d = toy(vec![1.0, 0.0, 1.0], vec![true, false, true], vec![1.0, 2.0, 3.0]);
        let m = build_design_matrix(&d, &formula(), &RowSelector::Complete).unwrap();
        assert_eq!(m.nrows(), 2);
        let err = build_design_matrix(&d, &formula(), &RowSelector::All).unwrap_err();
        assert!(matches!(err, Error::IncompleteRow { row: 1, .. }));
    }

    #[test]
    fn unknown_variable() {
        let d = toy(vec![1.0], vec![true], vec![1.0]);
        let f = ModelFormula::parse("y ~ x + w").unwrap();
        assert!(matches!(
            build_design_matrix(&d, &f, &RowSelector::All),
            Err(Error::UnknownVariable(v)) if v == "w"
        ));
    }

    #[test]
    fn product_used_without_stored_column() {
        let d = Dataset::from_columns(
            vec![
                spec("y", VarKind::Binary, VarRole::Outcome),
                spec("a", VarKind::Continuous, VarRole::Covariate),
                spec("b", VarKind::Continuous, VarRole::Covariate),
            ],
            vec![vec![1.0], vec![2.0], vec![3.0]],
        )
        .unwrap();
        let f = ModelFormula::parse("y ~ a + b + a:b").unwrap();
        let m = build_design_matrix(&d, &f, &RowSelector::All).unwrap();
        assert_eq!(m.row(0), &[1.0, 2.0, 3.0, 6.0]);
    }

    #[test]
    fn complete_cases_counts() {
        let d = toy(vec![1.0; 10], vec![true; 10], vec![0.5; 10]);
        let (cc, rep) = complete_cases(&d).unwrap();
        assert_eq!(cc.n_obs(), 10);
        assert_eq!(rep.n_complete_cases, 10);

        let mut mask = vec![true; 10];
        mask[3] = false;
        let d = toy(vec![1.0; 10], mask, vec![0.5; 10]);
        let (cc, rep) = complete_cases(&d).unwrap();
        assert_eq!(cc.n_obs(), 9);
        assert_eq!(rep.n_complete_cases, 9);
        assert_eq!(rep.observed_count("x"), Some(9));
        assert!(cc.is_fully_observed());
    }

    #[test]
    fn empty_complete_cases_is_error() {
        let d = toy(vec![1.0; 2], vec![false; 2], vec![0.5; 2]);
        assert!(matches!(complete_cases(&d), Err(Error::EmptyCompleteCases)));
    }

    #[test]
    fn validation_rejects_bad_binary_and_interaction_mask() {
        let bad = Dataset::from_columns(
            vec![spec("y", VarKind::Binary, VarRole::Outcome)],
            vec![vec![0.5]],
        );
        assert!(bad.is_err());
        let bad_mask = Dataset::new(
            vec![
                spec("x", VarKind::Binary, VarRole::Exposure),
                spec("z", VarKind::Binary, VarRole::Covariate),
                VariableSpec::interaction("x", "z", VarKind::Binary),
            ],
            vec![vec![1.0], vec![1.0], vec![1.0]],
            vec![vec![false], vec![true], vec![true]],
        );
        assert!(bad_mask.is_err());
        let two_outcomes = Dataset::from_columns(
            vec![
                spec("y", VarKind::Binary, VarRole::Outcome),
                spec("w", VarKind::Binary, VarRole::Outcome),
            ],
            vec![vec![1.0], vec![0.0]],
        );
        assert!(two_outcomes.is_err());
    }

    #[test]
    fn recompute_restores_product() {
        let mut d = toy(vec![1.0, 0.0], vec![true, false], vec![2.0, 3.0]);
        let x = d.index_of("x").unwrap();
        let xz = d.index_of("x:z").unwrap();
        d.set_imputed(1, x, 1.0);
        d.set_imputed(1, xz, 0.0);
        assert_eq!(d.interaction_inconsistencies(), 1);
        d.recompute_interactions();
        assert_eq!(d.interaction_inconsistencies(), 0);
        assert_eq!(d.column(xz), &[2.0, 3.0]);
    }

    #[test]
    fn formula_validation() {
        assert!(ModelFormula::parse("y ~ a + a").is_err());
        assert!(ModelFormula::parse("y ~ a + a:b").is_err());
        assert!(ModelFormula::parse("y a").is_err());
        let f = ModelFormula::parse(" y ~ a + b + a:b ").unwrap();
        assert_eq!(f.term_names(), vec!["(Intercept)", "a", "b", "a:b"]);
        assert_eq!(f.to_string(), "y ~ a + b + a:b");
    }

    #[test]
    fn model_frame_requires_outcome() {
        let n = 3;
        let d = Dataset::new(
            vec![
                spec("y", VarKind::Binary, VarRole::Outcome),
                spec("a", VarKind::Continuous, VarRole::Covariate),
            ],
            vec![vec![1.0, 0.0, 1.0], vec![1.0, 2.0, 3.0]],
            vec![vec![true, false, true], vec![true; n]],
        )
        .unwrap();
        let f = ModelFormula::parse("y ~ a").unwrap();
        let mf = model_frame(&d, &f, &RowSelector::Complete).unwrap();
        assert_eq!(mf.rows, vec![0, 2]);
        assert_eq!(mf.y, vec![1.0, 1.0]);
    }
}
