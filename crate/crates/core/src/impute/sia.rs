use super::{finish, identical_copies, initial_fill, univariate_step, dataset_rng, Diagnostics, ImputationConfig, ImputedSet, Problem};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tabular::{Dataset, ModelFormula, VarKind};

/// Minimum rows for a stratum to carry its own imputation model.
pub const MIN_STRATUM_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stratum {
    pub label: String,
    pub rows: Vec<usize>,
}

/// Type-7 empirical quantile of sorted data.
fn quantile_type7<T: Real>(sorted: &[T], p: f64) -> T {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + T::lit(h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Partitions rows by the moderator: by value for a binary column, by
/// `groups` empirical-quantile bins otherwise (a value equal to a cut point
/// goes to the lower bin). Every stratum must be non-empty.
pub fn stratify<T: Real>(data: &Dataset<T>, z_name: &str, groups: usize) -> Result<Vec<Stratum>> {
    let zc = data.index_of(z_name)?;
    if !data.missing_rows(zc).is_empty() {
        return Err(Error::UnsupportedProblem(format!(
            "stratification variable `{z_name}` must be fully observed"
        )));
    }
    let z = data.column(zc);
    let strata = match data.spec(zc).kind {
        VarKind::Binary => [0.0, 1.0]
            .iter()
            .map(|&v| Stratum {
                label: format!("{z_name}={v}"),
                rows: (0..z.len()).filter(|&i| z[i] == T::lit(v)).collect(),
            })
            .collect::<Vec<_>>(),
        VarKind::Continuous => {
            if groups < 2 {
                return Err(Error::InvalidConfig(format!("need at least 2 groups, got {groups}")));
            }
            let mut sorted = z.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite moderator"));
            let cuts: Vec<T> = (1..groups)
                .map(|k| quantile_type7(&sorted, k as f64 / groups as f64))
                .collect();
            let mut strata: Vec<Stratum> = (0..groups)
                .map(|k| Stratum {
                    label: format!("{z_name}:q{}", k + 1),
                    rows: Vec::new(),
                })
                .collect();
            for (i, &v) in z.iter().enumerate() {
                let s = cuts.iter().position(|&c| v <= c).unwrap_or(groups - 1);
                strata[s].rows.push(i);
            }
            strata
        }
    };
    if let Some(empty) = strata.iter().find(|s| s.rows.is_empty()) {
        return Err(Error::DegenerateStratum {
            label: empty.label.clone(),
            reason: "no rows".into(),
        });
    }
    Ok(strata)
}

/// A stratum must be large enough and have variation in both the outcome and
/// the observed covariate to support its own logistic model.
fn check_stratum<T: Real>(data: &Dataset<T>, s: &Stratum, outcome: usize, target: usize) -> Result<()> {
    let fail = |reason: String| Error::DegenerateStratum {
        label: s.label.clone(),
        reason,
    };
    if s.rows.len() < MIN_STRATUM_ROWS {
        return Err(fail(format!("{} rows, need {MIN_STRATUM_ROWS}", s.rows.len())));
    }
    let constant = |col: usize, rows: &mut dyn Iterator<Item = usize>| {
        let mut vals = rows.map(|i| data.column(col)[i]);
        match vals.next() {
            None => true,
            Some(first) => vals.all(|v| v == first),
        }
    };
    if constant(outcome, &mut s.rows.iter().copied()) {
        return Err(fail("constant outcome".into()));
    }
    if constant(target, &mut s.rows.iter().copied().filter(|&i| data.is_observed(i, target))) {
        return Err(fail("observed covariate constant or absent".into()));
    }
    Ok(())
}

/// Stratify-impute-append: `X` is imputed within each stratum of the
/// moderator from `Y` and the remaining main effects (the moderator itself is
/// left out), then `XZ` is recomputed from the original moderator values.
/// Rows stay in their original order.
pub fn impute_sia<T: Real>(
    data: &Dataset<T>,
    formula: &ModelFormula,
    cfg: &ImputationConfig,
) -> Result<ImputedSet<T>> {
    cfg.validate()?;
    let Some(problem) = Problem::analyse(data, formula, cfg)? else {
        return Ok(identical_copies(data, cfg));
    };
    let z = problem.moderator.clone().ok_or_else(|| {
        Error::UnsupportedProblem(format!(
            "no moderator for `{}`: formula has no interaction and none configured",
            problem.target
        ))
    })?;
    let strata = stratify(data, &z, cfg.sia_groups)?;
    let y = data.index_of(&problem.outcome)?;
    for s in &strata {
        check_stratum(data, s, y, problem.target_col)?;
    }
    let mut predictors = vec![problem.outcome.clone()];
    predictors.extend(formula.mains_except(&[&problem.target, &z]));
    let model = ModelFormula::additive(&problem.target, predictors)?;

    let xcol = problem.target_col;
    let split: Vec<(Vec<usize>, Vec<usize>)> = strata
        .iter()
        .map(|s| s.rows.iter().partition(|&&i| data.is_observed(i, xcol)))
        .collect();

    let mut diag = Diagnostics::new(cfg.m, cfg.iterations);
    let mut out = Vec::with_capacity(cfg.m);
    for l in 0..cfg.m {
        let mut rng = dataset_rng(cfg.seed, l);
        let mut d = initial_fill(data, &mut rng)?;
        d.recompute_interactions();
        let mut starts: Vec<Option<Vec<T>>> = vec![None; strata.len()];
        for it in 0..cfg.iterations {
            for ((obs, miss), start) in split.iter().zip(starts.iter_mut()) {
                univariate_step(&mut d, &model, obs, miss, start, &mut diag, (l, it), &mut rng)
                    .map_err(|e| e.in_imputation(l, it))?;
            }
            d.recompute_interactions();
        }
        out.push(d);
    }
    Ok(finish(out, cfg, diag))
}
