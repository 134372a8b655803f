use super::{finish, identical_copies, initial_fill, univariate_step, dataset_rng, Diagnostics, ImputationConfig, ImputedSet, Problem};
use crate::error::Result;
use crate::scalar::Real;
use crate::tabular::{Dataset, ModelFormula};

/// "Just another variable": `X` and the stored `XZ` column are imputed in turn,
/// each from `Y`, the other main effects and the other one. Logistic for a
/// binary `XZ`, linear for a continuous one. Imputed rows may have
/// `XZ ≠ X·Z`.
pub fn impute_jav<T: Real>(
    data: &Dataset<T>,
    formula: &ModelFormula,
    cfg: &ImputationConfig,
) -> Result<ImputedSet<T>> {
    cfg.validate()?;
    let Some(problem) = Problem::analyse(data, formula, cfg)? else {
        return Ok(identical_copies(data, cfg));
    };
    let others = formula.mains_except(&[&problem.target]);
    let inter = problem.interaction_col.map(|j| data.spec(j).name.clone());

    let mut x_predictors = vec![problem.outcome.clone()];
    x_predictors.extend(others.iter().cloned());
    x_predictors.extend(inter.iter().cloned());
    let x_model = ModelFormula::additive(&problem.target, x_predictors)?;

    let xz_model = match &inter {
        Some(name) => {
            let mut p = vec![problem.outcome.clone()];
            p.extend(others.iter().cloned());
            p.push(problem.target.clone());
            Some(ModelFormula::additive(name, p)?)
        }
        None => None,
    };
    // XZ is masked exactly where X is
    let xz_rows = problem
        .interaction_col
        .map(|j| (data.observed_rows(j), data.missing_rows(j)));

    let mut diag = Diagnostics::new(cfg.m, cfg.iterations);
    let mut out = Vec::with_capacity(cfg.m);
    for l in 0..cfg.m {
        let mut rng = dataset_rng(cfg.seed, l);
        let mut d = initial_fill(data, &mut rng)?;
        let (mut x_start, mut xz_start) = (None, None);
        for it in 0..cfg.iterations {
            univariate_step(
                &mut d,
                &x_model,
                &problem.observed_rows,
                &problem.missing_rows,
                &mut x_start,
                &mut diag,
                (l, it),
                &mut rng,
            )
            .map_err(|e| e.in_imputation(l, it))?;
            if let (Some(model), Some((obs, miss))) = (&xz_model, &xz_rows) {
                univariate_step(&mut d, model, obs, miss, &mut xz_start, &mut diag, (l, it), &mut rng)
                    .map_err(|e| e.in_imputation(l, it))?;
            }
        }
        out.push(d);
    }
    Ok(finish(out, cfg, diag))
}
