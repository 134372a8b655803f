use super::{finish, identical_copies, initial_fill, univariate_step, dataset_rng, Diagnostics, ImputationConfig, ImputedSet, Problem};
use crate::error::Result;
use crate::scalar::Real;
use crate::tabular::{Dataset, ModelFormula};

/// Imputes `X` from `Y` and every other main effect, then sets `XZ = X·Z`.
pub fn impute_passive<T: Real>(
    data: &Dataset<T>,
    formula: &ModelFormula,
    cfg: &ImputationConfig,
) -> Result<ImputedSet<T>> {
    cfg.validate()?;
    let Some(problem) = Problem::analyse(data, formula, cfg)? else {
        return Ok(identical_copies(data, cfg));
    };
    let mut predictors = vec![problem.outcome.clone()];
    predictors.extend(formula.mains_except(&[&problem.target]));
    let model = ModelFormula::additive(&problem.target, predictors)?;

    let mut diag = Diagnostics::new(cfg.m, cfg.iterations);
    let mut out = Vec::with_capacity(cfg.m);
    for l in 0..cfg.m {
        let mut rng = dataset_rng(cfg.seed, l);
        let mut d = initial_fill(data, &mut rng)?;
        d.recompute_interactions();
        let mut start = None;
        for it in 0..cfg.iterations {
            univariate_step(
                &mut d,
                &model,
                &problem.observed_rows,
                &problem.missing_rows,
                &mut start,
                &mut diag,
                (l, it),
                &mut rng,
            )
            .map_err(|e| e.in_imputation(l, it))?;
            d.recompute_interactions();
        }
        out.push(d);
    }
    Ok(finish(out, cfg, diag))
}
