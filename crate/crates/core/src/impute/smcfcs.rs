use rand::Rng;

use super::{finish, identical_copies, initial_fill, dataset_rng, working_fit, Diagnostics, ImputationConfig, ImputedSet, Problem};
use crate::error::{Error, Result};
use crate::glm::{draw_params, expit, ParamDraw};
use crate::linalg::{dot, Matrix};
use crate::scalar::Real;
use crate::tabular::{build_design_matrix, Dataset, ModelFormula, RowSelector, VarKind};

/// Per-cell ingredients of the substantive-model-compatible conditional for a
/// binary `X`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellModel<T> {
    /// `P(Y = 1 | X = 1, z)` under the substantive model.
    pub f1: T,
    /// `P(Y = 1 | X = 0, z)` under the substantive model.
    pub f0: T,
    /// `P(X = 1 | z)` under the covariate model.
    pub g1: T,
}

impl<T: Real> CellModel<T> {
    /// Evaluates both models for one row. `sub_x0`/`sub_x1` are the
    /// substantive design rows with `X` set to 0 and 1 (interactions
    /// recomputed), `cov_row` the covariate-model design row.
    pub fn from_draws(
        psi: &ParamDraw<T>,
        phi: &ParamDraw<T>,
        sub_x0: &[T],
        sub_x1: &[T],
        cov_row: &[T],
    ) -> Self {
        Self {
            f1: expit(dot(sub_x1, &psi.coefficients)),
            f0: expit(dot(sub_x0, &psi.coefficients)),
            g1: expit(dot(cov_row, &phi.coefficients)),
        }
    }

    /// Bernoulli likelihood of the observed outcome given `X = x`.
    pub fn likelihood(&self, y: bool, x: bool) -> T {
        let f = if x { self.f1 } else { self.f0 };
        if y {
            f
        } else {
            T::one() - f
        }
    }
}

/// `P(X = 1 | y, z) = f₁g₁ / (f₁g₁ + f₀g₀)`.
pub fn smcfcs_cell_prob<T: Real>(y: bool, cell: &CellModel<T>) -> T {
    let a = cell.likelihood(y, true) * cell.g1;
    let b = cell.likelihood(y, false) * (T::one() - cell.g1);
    let total = a + b;
    if total > T::zero() {
        a / total
    } else {
        cell.g1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RejectionOutcome {
    pub value: bool,
    /// Proposals drawn, including the accepted one.
    pub proposals: usize,
    /// The cap was hit and the value was drawn from the exact conditional.
    pub fell_back: bool,
}

/// Proposes `X* ~ Bernoulli(g₁)` and accepts with probability
/// `f(y | X*) / maxₓ f(y | x)`. After `max_rejections` rejections the value is
/// drawn directly from [`smcfcs_cell_prob`], which is the same distribution.
pub fn smcfcs_reject_sample<T: Real, R: Rng + ?Sized>(
    y: bool,
    cell: &CellModel<T>,
    rng: &mut R,
    max_rejections: usize,
) -> RejectionOutcome {
    let l0 = cell.likelihood(y, false).as_f64();
    let l1 = cell.likelihood(y, true).as_f64();
    let lmax = l0.max(l1);
    let g1 = cell.g1.as_f64();
    if lmax > 0.0 {
        for k in 1..=max_rejections {
            let x = rng.random::<f64>() < g1;
            let ratio = if x { l1 } else { l0 } / lmax;
            if rng.random::<f64>() < ratio {
                return RejectionOutcome {
                    value: x,
                    proposals: k,
                    fell_back: false,
                };
            }
        }
    }
    let p = smcfcs_cell_prob(y, cell).as_f64();
    RejectionOutcome {
        value: rng.random::<f64>() < p,
        proposals: max_rejections,
        fell_back: true,
    }
}

/// Substantive design rows for `rows` with the target forced to `value`.
fn design_with_target<T: Real>(
    d: &Dataset<T>,
    formula: &ModelFormula,
    rows: &[usize],
    target: usize,
    value: T,
) -> Result<Matrix<T>> {
    let mut sub = d.select_rows(rows);
    for i in 0..sub.n_obs() {
        sub.set_imputed(i, target, value);
    }
    sub.recompute_interactions();
    build_design_matrix(&sub, formula, &RowSelector::All)
}

/// Substantive-model-compatible FCS. Each cycle fits the analysis model and a
/// covariate model `X ~ other main effects` (no outcome) on the current
/// completed data, draws both parameter vectors, and redraws every missing
/// `X` by rejection sampling. `XZ` is recomputed after each cycle.
///
/// A cycle whose working fit fails is skipped and counted in the
/// diagnostics; the run fails only if no cycle succeeds for some dataset.
pub fn impute_smcfcs<T: Real>(
    data: &Dataset<T>,
    formula: &ModelFormula,
    cfg: &ImputationConfig,
) -> Result<ImputedSet<T>> {
    cfg.validate()?;
    let Some(problem) = Problem::analyse(data, formula, cfg)? else {
        return Ok(identical_copies(data, cfg));
    };
    let cov_model = ModelFormula::additive(&problem.target, formula.mains_except(&[&problem.target]))?;
    let y_col = data.index_of(&problem.outcome)?;
    let ys: Vec<bool> = problem
        .missing_rows
        .iter()
        .map(|&i| data.column(y_col)[i] == T::one())
        .collect();
    let all_rows: Vec<usize> = (0..data.n_obs()).collect();
    let xcol = problem.target_col;

    let mut diag = Diagnostics::new(cfg.m, cfg.iterations);
    let mut out = Vec::with_capacity(cfg.m);
    for l in 0..cfg.m {
        let mut rng = dataset_rng(cfg.seed, l);
        let mut d = initial_fill(data, &mut rng)?;
        d.recompute_interactions();
        let mut psi_start: Option<Vec<T>> = None;
        let mut phi_start: Option<Vec<T>> = None;
        let mut last_err = None;
        for it in 0..cfg.iterations {
            let cycle = (|| -> Result<usize> {
                let sub_fit = working_fit(&d, formula, &all_rows, VarKind::Binary, psi_start.as_deref())?;
                diag.record(l, it, &sub_fit);
                let psi = draw_params(&sub_fit, &mut rng)?;
                psi_start = Some(sub_fit.coefficients);

                let cov_fit = working_fit(&d, &cov_model, &all_rows, VarKind::Binary, phi_start.as_deref())?;
                diag.record(l, it, &cov_fit);
                let phi = draw_params(&cov_fit, &mut rng)?;
                phi_start = Some(cov_fit.coefficients);

                let miss = &problem.missing_rows;
                let x0 = design_with_target(&d, formula, miss, xcol, T::zero())?;
                let x1 = design_with_target(&d, formula, miss, xcol, T::one())?;
                let cz = build_design_matrix(&d, &cov_model, &RowSelector::Indices(miss.clone()))?;
                let mut fallbacks = 0;
                for (k, &i) in miss.iter().enumerate() {
                    let cell = CellModel::from_draws(&psi, &phi, x0.row(k), x1.row(k), cz.row(k));
                    let draw = smcfcs_reject_sample(ys[k], &cell, &mut rng, cfg.smcfcs_max_rejections);
                    fallbacks += usize::from(draw.fell_back);
                    d.set_imputed(i, xcol, T::from_bool(draw.value));
                }
                d.recompute_interactions();
                Ok(fallbacks)
            })();
            match cycle {
                Ok(f) => diag.rejection_fallbacks[l] += f,
                Err(e) => {
                    diag.skipped_iterations[l] += 1;
                    last_err = Some(e.in_imputation(l, it));
                }
            }
        }
        if diag.skipped_iterations[l] == cfg.iterations {
            return Err(last_err.unwrap_or_else(|| {
                Error::UnsupportedProblem("no SMCFCS cycle completed".into())
            }));
        }
        out.push(d);
    }
    Ok(finish(out, cfg, diag))
}
