//! Maximum-likelihood logistic and linear fits, approximate posterior
//! parameter draws, and predictive draws for imputation.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{dot, has_full_column_rank, psd_sqrt, weighted_gram, Cholesky, Matrix};
use crate::scalar::Real;

/// Numerically stable inverse logit.
#[inline]
pub fn expit<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn logit<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Logistic,
    Linear,
}

#[derive(Debug, Clone)]
pub struct GlmFit<T> {
    pub family: Family,
    pub coefficients: Vec<T>,
    /// Inverse observed information (logistic) or `σ²(XᵀX)⁻¹` (linear).
    pub covariance: Matrix<T>,
    pub converged: bool,
    pub iterations: usize,
    /// Zero for logistic fits.
    pub residual_variance: T,
    pub separation_flag: bool,
    /// Max-norm of the score `Xᵀ(y − μ̂)` at the returned coefficients.
    pub max_abs_score: T,
    pub n_obs: usize,
}

impl<T: Real> GlmFit<T> {
    pub fn std_errors(&self) -> Vec<T> {
        self.covariance.diagonal().into_iter().map(|v| v.max(T::zero()).sqrt()).collect()
    }

    pub fn df_residual(&self) -> usize {
        self.n_obs.saturating_sub(self.coefficients.len())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GlmOptions<T> {
    pub max_iter: usize,
    /// Convergence threshold on the score max-norm. `None` uses `1e-8`, raised
    /// to the rounding floor of the scalar type for very large or low-precision
    /// problems.
    pub score_tol: Option<T>,
    /// Standardised-coefficient magnitude that flags separation.
    pub separation_threshold: T,
    pub jitter: T,
}

impl<T: Real> Default for GlmOptions<T> {
    fn default() -> Self {
        Self {
            max_iter: 25,
            score_tol: None,
            separation_threshold: T::lit(15.0),
            jitter: T::lit(1e-10),
        }
    }
}

impl<T: Real> GlmOptions<T> {
    fn tolerance(&self, n: usize) -> T {
        self.score_tol.unwrap_or_else(|| {
            let floor = T::lit(64.0) * T::epsilon() * T::from_count(n.max(1));
            T::lit(1e-8).max(floor)
        })
    }
}

fn check_dims<T: Real>(x: &Matrix<T>, y: &[T]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows, response has {}",
            x.nrows(),
            y.len()
        )));
    }
    Ok(())
}

struct LogisticEval<T> {
    loglik: T,
    score: Vec<T>,
    weights: Vec<T>,
}

fn logistic_eval<T: Real>(x: &Matrix<T>, y: &[T], beta: &[T]) -> LogisticEval<T> {
    let n = x.nrows();
    let mut score = vec![T::zero(); x.ncols()];
    let mut weights = Vec::with_capacity(n);
    let mut loglik = T::zero();
    for i in 0..n {
        let row = x.row(i);
        let eta = dot(row, beta);
        let p = expit(eta);
        // y·η − log(1 + e^η), arranged to avoid overflow
        loglik += if eta > T::zero() {
            (y[i] - T::one()) * eta - (-eta).exp().ln_1p()
        } else {
            y[i] * eta - eta.exp().ln_1p()
        };
        let r = y[i] - p;
        for (s, &xv) in score.iter_mut().zip(row) {
            *s += xv * r;
        }
        weights.push(p * (T::one() - p));
    }
    LogisticEval { loglik, score, weights }
}

fn max_abs<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

fn norm2<T: Real>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

fn column_scales<T: Real>(x: &Matrix<T>) -> Vec<T> {
    let n = T::from_count(x.nrows().max(1));
    (0..x.ncols())
        .map(|j| {
            let col = x.column(j);
            let mean = col.iter().copied().sum::<T>() / n;
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            if var > T::zero() {
                var.sqrt()
            } else {
                T::one()
            }
        })
        .collect()
}

/// Logistic regression by Newton-Raphson (IRLS) with step halving.
pub fn fit_logistic<T: Real>(x: &Matrix<T>, y: &[T]) -> Result<GlmFit<T>> {
    fit_logistic_with(x, y, None, &GlmOptions::default())
}

/// As [`fit_logistic`], optionally warm-started from `start`.
pub fn fit_logistic_with<T: Real>(
    x: &Matrix<T>,
    y: &[T],
    start: Option<&[T]>,
    opts: &GlmOptions<T>,
) -> Result<GlmFit<T>> {
    check_dims(x, y)?;
    let n = y.len();
    let p = x.ncols();
    if y.iter().any(|&v| v != T::zero() && v != T::one()) {
        return Err(Error::DimensionMismatch("logistic response must be 0/1".into()));
    }
    let events = y.iter().filter(|&&v| v == T::one()).count();
    if events == 0 {
        return Err(Error::DegenerateOutcome(0));
    }
    if events == n {
        return Err(Error::DegenerateOutcome(1));
    }
    if !has_full_column_rank(x, T::lit(1e-10)) {
        return Err(Error::SingularDesign);
    }
    let tol = opts.tolerance(n);

    let mut beta = match start {
        Some(s) if s.len() == p && s.iter().all(|v| v.is_finite()) => s.to_vec(),
        _ => {
            let mut b = vec![T::zero(); p];
            // intercept at the marginal log-odds when column 0 is constant one
            if (0..n).all(|i| x[(i, 0)] == T::one()) {
                b[0] = logit(T::from_count(events) / T::from_count(n));
            }
            b
        }
    };

    let mut eval = logistic_eval(x, y, &beta);
    let mut iterations = 0;
    let mut step_norms: Vec<T> = Vec::new();
    let mut stalled = false;
    loop {
        if max_abs(&eval.score) < tol || iterations == opts.max_iter {
            break;
        }
        let info = weighted_gram(x, Some(&eval.weights));
        let (chol, _) = Cholesky::with_jitter(&info, opts.jitter).ok_or(Error::SingularDesign)?;
        let delta = chol.solve(&eval.score);
        let mut t = T::one();
        let mut accepted = None;
        for _ in 0..30 {
            let cand: Vec<T> = beta.iter().zip(&delta).map(|(&b, &d)| b + t * d).collect();
            let e = logistic_eval(x, y, &cand);
            let slack = T::lit(1e-12) * eval.loglik.abs().max(T::one());
            if e.loglik.is_finite() && e.loglik >= eval.loglik - slack {
                accepted = Some((cand, e));
                break;
            }
            t /= T::lit(2.0);
        }
        iterations += 1;
        match accepted {
            Some((cand, e)) => {
                step_norms.push(norm2(&delta) * t);
                beta = cand;
                eval = e;
            }
            None => {
                stalled = true;
                break;
            }
        }
    }
    let max_abs_score = max_abs(&eval.score);
    let converged = max_abs_score < tol;

    let info = weighted_gram(x, Some(&eval.weights));
    let (chol, _) = Cholesky::with_jitter(&info, opts.jitter).ok_or(Error::SingularDesign)?;
    let covariance = chol.inverse();

    let scales = column_scales(x);
    let big = beta
        .iter()
        .zip(&scales)
        .any(|(&b, &s)| (b * s).abs() > opts.separation_threshold);
    let diverging = !converged
        && (stalled
            || matches!(step_norms.as_slice(), [.., a, b] if *b >= *a));

    Ok(GlmFit {
        family: Family::Logistic,
        coefficients: beta,
        covariance,
        converged,
        iterations,
        residual_variance: T::zero(),
        separation_flag: big || diverging,
        max_abs_score,
        n_obs: n,
    })
}

/// Ordinary least squares.
pub fn fit_linear<T: Real>(x: &Matrix<T>, y: &[T]) -> Result<GlmFit<T>> {
    check_dims(x, y)?;
    let n = y.len();
    let p = x.ncols();
    if n <= p {
        return Err(Error::DimensionMismatch(format!(
            "linear fit needs more rows ({n}) than columns ({p})"
        )));
    }
    if !has_full_column_rank(x, T::lit(1e-10)) {
        return Err(Error::SingularDesign);
    }
    let xtx = weighted_gram(x, None);
    let chol = Cholesky::new(&xtx).ok_or(Error::SingularDesign)?;
    let beta = chol.solve(&x.tr_mul_vec(y));
    let resid: Vec<T> = (0..n).map(|i| y[i] - dot(x.row(i), &beta)).collect();
    let rss: T = resid.iter().map(|&r| r * r).sum();
    let sigma2 = rss / T::from_count(n - p);
    let covariance = chol.inverse().scale(sigma2);
    let max_abs_score = max_abs(&x.tr_mul_vec(&resid));
    Ok(GlmFit {
        family: Family::Linear,
        coefficients: beta,
        covariance,
        converged: true,
        iterations: 1,
        residual_variance: sigma2,
        separation_flag: false,
        max_abs_score,
        n_obs: n,
    })
}

/// One approximate-posterior parameter draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDraw<T> {
    pub family: Family,
    pub coefficients: Vec<T>,
    pub residual_variance: T,
    /// First word taken from the generator for this draw; identifies the
    /// stream position the draw came from.
    pub seed_state: u64,
}

fn std_normals<R: Rng + ?Sized, T: Real>(rng: &mut R, k: usize) -> Vec<T> {
    (0..k)
        .map(|_| T::lit(StandardNormal.sample(rng)))
        .collect()
}

/// Logistic: `β* ~ N(β̂, V̂)`. Linear: `σ²* = RSS/χ²_{n−p}` then
/// `β* ~ N(β̂, σ²*(XᵀX)⁻¹)`.
///
/// Fits that stopped on separation are still drawable; the caller sees the
/// flag on the fit.
pub fn draw_params<T: Real, R: Rng + ?Sized>(fit: &GlmFit<T>, rng: &mut R) -> Result<ParamDraw<T>> {
    if !fit.converged && !fit.separation_flag {
        return Err(Error::UnconvergedFit);
    }
    let seed_state = rng.next_u64();
    let p = fit.coefficients.len();
    let root = psd_sqrt(&fit.covariance);
    let (root, residual_variance) = match fit.family {
        Family::Logistic => (root, T::zero()),
        Family::Linear => {
            let df = fit.df_residual().max(1);
            let chi: f64 = ChiSquared::new(df as f64)
                .expect("positive degrees of freedom")
                .sample(rng);
            let rss = fit.residual_variance * T::from_count(df);
            let sigma2 = rss / T::lit(chi);
            let ratio = if fit.residual_variance > T::zero() {
                (sigma2 / fit.residual_variance).sqrt()
            } else {
                T::zero()
            };
            (root.scale(ratio), sigma2)
        }
    };
    let z: Vec<T> = std_normals(rng, p);
    let shift = root.mul_vec(&z);
    let coefficients = fit
        .coefficients
        .iter()
        .zip(&shift)
        .map(|(&b, &s)| b + s)
        .collect();
    Ok(ParamDraw {
        family: fit.family,
        coefficients,
        residual_variance,
        seed_state,
    })
}

/// Bernoulli draws with success probability `expit(row · β*)`, as 0/1.
pub fn impute_binary<T: Real, R: Rng + ?Sized>(
    draw: &ParamDraw<T>,
    x_rows: &Matrix<T>,
    rng: &mut R,
) -> Vec<T> {
    assert_eq!(x_rows.ncols(), draw.coefficients.len(), "design/draw dimension mismatch");
    (0..x_rows.nrows())
        .map(|i| {
            let p = expit(dot(x_rows.row(i), &draw.coefficients)).as_f64();
            let u: f64 = rng.random();
            T::from_bool(u < p)
        })
        .collect()
}

/// Normal draws around `row · β*` with variance `σ²*`.
pub fn impute_continuous<T: Real, R: Rng + ?Sized>(
    draw: &ParamDraw<T>,
    x_rows: &Matrix<T>,
    rng: &mut R,
) -> Vec<T> {
    assert_eq!(x_rows.ncols(), draw.coefficients.len(), "design/draw dimension mismatch");
    assert!(
        draw.residual_variance >= T::zero(),
        "negative residual variance in predictive draw"
    );
    let sd = draw.residual_variance.sqrt();
    (0..x_rows.nrows())
        .map(|i| {
            let z: f64 = StandardNormal.sample(rng);
            dot(x_rows.row(i), &draw.coefficients) + sd * T::lit(z)
        })
        .collect()
}
