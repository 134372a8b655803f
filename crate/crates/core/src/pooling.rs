//! Rubin's rules and the complete-case comparator.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::glm::{fit_logistic, GlmFit};
use crate::impute::ImputedSet;
use crate::scalar::Real;
use crate::tabular::{model_frame, Dataset, ModelFormula, RowSelector};

/// Upper limit on reported degrees of freedom.
pub const DF_CAP: f64 = 1e6;

/// Scalar part of a Rubin's-rules combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RubinCore<T> {
    pub estimate: T,
    pub within_var: T,
    pub between_var: T,
    pub total_var: T,
    pub df: f64,
    pub m: usize,
}

/// Pools `m` estimates and their variances.
///
/// With `df_complete` set the Barnard-Rubin small-sample degrees of freedom
/// are used, otherwise `(m − 1)/λ²` with `λ = (1 + 1/m)B/T`. Both are capped
/// at [`DF_CAP`], which also covers `B = 0`.
pub fn rubin_pool<T: Real>(estimates: &[T], variances: &[T], df_complete: Option<f64>) -> Result<RubinCore<T>> {
    let m = estimates.len();
    if m < 2 {
        return Err(Error::InsufficientImputations(m));
    }
    if variances.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{m} estimates but {} variances",
            variances.len()
        )));
    }
    if variances.iter().any(|v| !(*v >= T::zero())) {
        return Err(Error::DimensionMismatch("variances must be non-negative".into()));
    }
    let mf = T::from_count(m);
    let estimate = centred_mean(estimates);
    let within_var = centred_mean(variances);
    let between_var = estimates.iter().map(|&q| (q - estimate) * (q - estimate)).sum::<T>() / (mf - T::one());
    let inflated = (T::one() + T::one() / mf) * between_var;
    let total_var = within_var + inflated;

    let lambda = if total_var > T::zero() {
        (inflated / total_var).as_f64()
    } else {
        0.0
    };
    let df_old = if lambda > 0.0 {
        (m as f64 - 1.0) / (lambda * lambda)
    } else {
        f64::INFINITY
    };
    let df = match df_complete {
        Some(nu) if nu > 0.0 => {
            let df_obs = (nu + 1.0) / (nu + 3.0) * nu * (1.0 - lambda);
            if df_old.is_infinite() {
                df_obs
            } else {
                df_old * df_obs / (df_old + df_obs)
            }
        }
        _ => df_old,
    };
    Ok(RubinCore {
        estimate,
        within_var,
        between_var,
        total_var,
        df: df.min(DF_CAP),
        m,
    })
}

/// Mean taken about the first value, so identical inputs average exactly to
/// that value.
fn centred_mean<T: Real>(v: &[T]) -> T {
    let v0 = v[0];
    v0 + v.iter().map(|&x| x - v0).sum::<T>() / T::from_count(v.len())
}

/// 97.5% quantile of Student's t with `df` degrees of freedom.
pub fn t_quantile_975(df: f64) -> f64 {
    let df = df.min(DF_CAP);
    if df >= 1e4 {
        // incomplete-beta inversion loses accuracy here; the Cornish-Fisher
        // expansion around the normal quantile is exact to ~1e-13
        let z = Normal::standard().inverse_cdf(0.975);
        let (z3, z5) = (z.powi(3), z.powi(5));
        return z + (z3 + z) / (4.0 * df) + (5.0 * z5 + 16.0 * z3 + 3.0 * z) / (96.0 * df * df);
    }
    StudentsT::new(0.0, 1.0, df)
        .map(|t| t.inverse_cdf(0.975))
        .unwrap_or(f64::NAN)
}

/// Pooled result for one model term.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledEstimate<T> {
    pub term: String,
    /// Log-odds scale.
    pub estimate: T,
    pub within_var: T,
    pub between_var: T,
    pub total_var: T,
    pub df: f64,
    pub ci_low: T,
    pub ci_high: T,
    pub or_estimate: T,
    pub or_ci_low: T,
    pub or_ci_high: T,
    pub m: usize,
}

impl<T: Real> PooledEstimate<T> {
    pub fn from_core(term: impl Into<String>, core: RubinCore<T>) -> Self {
        let half = T::lit(t_quantile_975(core.df)) * core.total_var.sqrt();
        let ci_low = core.estimate - half;
        let ci_high = core.estimate + half;
        Self {
            term: term.into(),
            estimate: core.estimate,
            within_var: core.within_var,
            between_var: core.between_var,
            total_var: core.total_var,
            df: core.df,
            ci_low,
            ci_high,
            or_estimate: core.estimate.exp(),
            or_ci_low: ci_low.exp(),
            or_ci_high: ci_high.exp(),
            m: core.m,
        }
    }

    pub fn std_error(&self) -> T {
        self.total_var.sqrt()
    }

    pub fn covers(&self, theta: T) -> bool {
        self.ci_low <= theta && theta <= self.ci_high
    }

    pub fn or_covers(&self, theta: T) -> bool {
        self.or_ci_low <= theta.exp() && theta.exp() <= self.or_ci_high
    }
}

/// Pools per-dataset analysis fits term by term.
pub fn pool_fits<T: Real>(fits: &[GlmFit<T>], terms: &[String]) -> Result<Vec<PooledEstimate<T>>> {
    if fits.len() < 2 {
        return Err(Error::InsufficientImputations(fits.len()));
    }
    let p = terms.len();
    if let Some(bad) = fits.iter().find(|f| f.coefficients.len() != p) {
        return Err(Error::DimensionMismatch(format!(
            "fit has {} coefficients, formula has {p} terms",
            bad.coefficients.len()
        )));
    }
    let df_com = fits[0].df_residual() as f64;
    let ses: Vec<Vec<T>> = fits.iter().map(|f| f.std_errors()).collect();
    (0..p)
        .map(|j| {
            let q: Vec<T> = fits.iter().map(|f| f.coefficients[j]).collect();
            let u: Vec<T> = ses.iter().map(|s| s[j] * s[j]).collect();
            Ok(PooledEstimate::from_core(terms[j].clone(), rubin_pool(&q, &u, Some(df_com))?))
        })
        .collect()
}

/// Fits `formula` on every completed dataset and pools.
pub fn pooled_fit<T: Real>(imputed: &ImputedSet<T>, formula: &ModelFormula) -> Result<Vec<PooledEstimate<T>>> {
    let fits = analysis_fits(&imputed.datasets, formula)?;
    pool_fits(&fits, &formula.term_names())
}

/// The per-dataset analysis fits, errors naming the failing dataset.
pub fn analysis_fits<T: Real>(datasets: &[Dataset<T>], formula: &ModelFormula) -> Result<Vec<GlmFit<T>>> {
    datasets
        .iter()
        .enumerate()
        .map(|(l, d)| {
            model_frame(d, formula, &RowSelector::All)
                .and_then(|mf| fit_logistic(&mf.x, &mf.y))
                .map_err(|e| Error::PooledFit {
                    dataset: l,
                    source: Box::new(e),
                })
        })
        .collect()
}

/// Logistic fit of `formula` on the complete cases.
pub fn complete_case_model<T: Real>(data: &Dataset<T>, formula: &ModelFormula) -> Result<GlmFit<T>> {
    let mf = model_frame(data, formula, &RowSelector::Complete)?;
    let p = formula.n_terms();
    if mf.rows.is_empty() {
        return Err(Error::EmptyCompleteCases);
    }
    if mf.rows.len() < p + 1 {
        return Err(Error::InvalidDataset(format!(
            "{} complete cases for {p} coefficients",
            mf.rows.len()
        )));
    }
    fit_logistic(&mf.x, &mf.y)
}

/// A single fit shaped like a pooled result with `m = 1`, `B = 0` and
/// `df = n₁ − p`.
pub fn single_fit_estimates<T: Real>(fit: &GlmFit<T>, terms: &[String]) -> Vec<PooledEstimate<T>> {
    let df = fit.df_residual() as f64;
    let se = fit.std_errors();
    terms
        .iter()
        .enumerate()
        .map(|(j, term)| {
            let var = se[j] * se[j];
            PooledEstimate::from_core(
                term.clone(),
                RubinCore {
                    estimate: fit.coefficients[j],
                    within_var: var,
                    between_var: T::zero(),
                    total_var: var,
                    df: df.min(DF_CAP),
                    m: 1,
                },
            )
        })
        .collect()
}

/// Complete-case comparator: [`complete_case_model`] then
/// [`single_fit_estimates`].
pub fn complete_case_fit<T: Real>(data: &Dataset<T>, formula: &ModelFormula) -> Result<Vec<PooledEstimate<T>>> {
    let fit = complete_case_model(data, formula)?;
    Ok(single_fit_estimates(&fit, &formula.term_names()))
}
