//! Data-generating mechanisms, missingness, and the simulation driver.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::glm::{expit, logit, GlmFit};
use crate::impute::{impute, ImputationConfig, Strategy};
use crate::pooling::{analysis_fits, complete_case_model, pool_fits, single_fit_estimates, PooledEstimate};
use crate::scalar::Real;
use crate::tabular::{interaction_name, Dataset, ModelFormula, VarKind, VarRole, VariableSpec};

pub const OUTCOME: &str = "y";
pub const EXPOSURE: &str = "x";
pub const MODERATOR: &str = "z5";
pub const COVARIATES: [&str; 5] = ["z1", "z2", "z3", "z4", "z5"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DgmId {
    Null,
    D1,
    D2,
    D3,
    D4,
    D5,
    D6,
}

impl DgmId {
    pub const ALL: [DgmId; 7] = [DgmId::Null, DgmId::D1, DgmId::D2, DgmId::D3, DgmId::D4, DgmId::D5, DgmId::D6];

    pub fn as_str(self) -> &'static str {
        match self {
            DgmId::Null => "null",
            DgmId::D1 => "1",
            DgmId::D2 => "2",
            DgmId::D3 => "3",
            DgmId::D4 => "4",
            DgmId::D5 => "5",
            DgmId::D6 => "6",
        }
    }

    fn code(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for DgmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DgmId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let t = t.strip_prefix("dgm").unwrap_or(&t);
        DgmId::ALL
            .into_iter()
            .find(|d| d.as_str() == t || (t == "0" && *d == DgmId::Null))
            .ok_or_else(|| Error::UnknownDgm(s.to_string()))
    }
}

/// Analysis methods compared in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Passive,
    Jav,
    Sia,
    Smcfcs,
    CompleteCase,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Passive, Method::Jav, Method::Sia, Method::Smcfcs, Method::CompleteCase];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::CompleteCase => "cc",
            m => m.strategy().map(Strategy::as_str).unwrap_or("cc"),
        }
    }

    /// Label used in pivoted tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Passive => "Passive",
            Method::Jav => "JAV",
            Method::Sia => "SIA",
            Method::Smcfcs => "SMCFCS",
            Method::CompleteCase => "CC",
        }
    }

    pub fn strategy(self) -> Option<Strategy> {
        match self {
            Method::Passive => Some(Strategy::Passive),
            Method::Jav => Some(Strategy::Jav),
            Method::Sia => Some(Strategy::Sia),
            Method::Smcfcs => Some(Strategy::Smcfcs),
            Method::CompleteCase => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "cc" | "complete-case" | "complete_case" => Ok(Method::CompleteCase),
            _ => t.parse::<Strategy>().map(|st| match st {
                Strategy::Passive => Method::Passive,
                Strategy::Jav => Method::Jav,
                Strategy::Sia => Method::Sia,
                Strategy::Smcfcs => Method::Smcfcs,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    Mar,
    Mcar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Z5Mode {
    Binary,
    Continuous,
}

/// Full parameterisation of one data-generating mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct DgmSpec {
    pub id: DgmId,
    pub n_obs: usize,
    pub p_z1: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    pub p_z3: f64,
    pub z4_beta: (f64, f64),
    pub z5_mode: Z5Mode,
    pub z5_prevalence: f64,
    pub p_x: f64,
    /// Intercept, then Z1..Z5, then X.
    pub beta: [f64; 7],
    pub beta_xz: f64,
    /// Whether the analysis model and the data carry the `X·Z5` term.
    pub include_interaction: bool,
    pub mechanism: Mechanism,
    /// Coefficients of Z1..Z5 and Y in the observation model.
    pub alpha: [f64; 6],
    pub target_observed: f64,
}

/// Specification for `id` with the default 10,000 rows.
pub fn make_dgm(id: DgmId) -> DgmSpec {
    let mut s = DgmSpec {
        id,
        n_obs: 10_000,
        p_z1: 0.3,
        age_mean: 70.0,
        age_sd: 10.0,
        p_z3: 0.5,
        z4_beta: (1.0, 1.2),
        z5_mode: Z5Mode::Binary,
        z5_prevalence: 0.3,
        p_x: 0.4,
        beta: [-3.0, 0.85, 1.3, 0.9, 1.2, 0.9, 1.4],
        beta_xz: 1.3f64.ln(),
        include_interaction: true,
        mechanism: Mechanism::Mar,
        alpha: [1.0; 6],
        target_observed: 0.8,
    };
    match id {
        DgmId::Null => {
            s.beta_xz = 0.0;
            s.include_interaction = false;
        }
        DgmId::D1 => {}
        DgmId::D2 => s.beta_xz = 1.1f64.ln(),
        DgmId::D3 => s.beta_xz = 1.7f64.ln(),
        DgmId::D4 => {
            s.mechanism = Mechanism::Mcar;
            s.alpha = [0.0; 6];
        }
        DgmId::D5 => s.z5_mode = Z5Mode::Continuous,
        DgmId::D6 => s.z5_prevalence = 0.01,
    }
    s
}

impl DgmSpec {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_z1, self.p_z3, self.z5_prevalence, self.p_x];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("probabilities must lie in [0, 1]".into()));
        }
        if !(self.target_observed > 0.0 && self.target_observed < 1.0) {
            return Err(Error::InvalidConfig("target observed proportion must lie in (0, 1)".into()));
        }
        if self.mechanism == Mechanism::Mcar && self.alpha.iter().any(|&a| a != 0.0) {
            return Err(Error::InvalidConfig("MCAR requires all observation-model slopes to be 0".into()));
        }
        if self.n_obs == 0 {
            return Err(Error::InvalidConfig("n_obs must be positive".into()));
        }
        Ok(())
    }

    pub fn interaction_term(&self) -> String {
        interaction_name(EXPOSURE, MODERATOR)
    }

    /// The substantive analysis model.
    pub fn formula(&self) -> ModelFormula {
        let mains: Vec<String> = COVARIATES.iter().chain(&[EXPOSURE]).map(|s| s.to_string()).collect();
        let inter = if self.include_interaction {
            vec![(EXPOSURE.to_string(), MODERATOR.to_string())]
        } else {
            Vec::new()
        };
        ModelFormula::new(OUTCOME, mains, inter).expect("static formula is valid")
    }

    /// True coefficient for every term of [`Self::formula`], in order.
    pub fn truth(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self
            .formula()
            .term_names()
            .into_iter()
            .zip(self.beta)
            .collect();
        if self.include_interaction {
            out.push((self.interaction_term(), self.beta_xz));
        }
        out
    }

    fn moderator_kind(&self) -> VarKind {
        match self.z5_mode {
            Z5Mode::Binary => VarKind::Binary,
            Z5Mode::Continuous => VarKind::Continuous,
        }
    }
}

/// Draws the covariates (`z1`..`z5`, `x`, and `x:z5` when the spec has an
/// interaction), all fully observed. `z2` is stored as `(age − 70)/10`.
pub fn generate_covariates<T: Real, R: Rng + ?Sized>(spec: &DgmSpec, rng: &mut R) -> Result<Dataset<T>> {
    spec.validate()?;
    let n = spec.n_obs;
    let age = Normal::new(spec.age_mean, spec.age_sd).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let z4d = Beta::new(spec.z4_beta.0, spec.z4_beta.1).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut cols: Vec<Vec<T>> = vec![Vec::with_capacity(n); 6];
    for _ in 0..n {
        let z1 = f64::from(rng.random::<f64>() < spec.p_z1);
        let z2 = (age.sample(rng) - 70.0) / 10.0;
        let z3 = f64::from(rng.random::<f64>() < spec.p_z3);
        let z4 = z4d.sample(rng);
        let z5 = match spec.z5_mode {
            Z5Mode::Binary => f64::from(rng.random::<f64>() < spec.z5_prevalence),
            Z5Mode::Continuous => rand_distr::StandardNormal.sample(rng),
        };
        let x = f64::from(rng.random::<f64>() < spec.p_x);
        for (c, v) in cols.iter_mut().zip([z1, z2, z3, z4, z5, x]) {
            c.push(T::lit(v));
        }
    }
    let kinds = [VarKind::Binary, VarKind::Continuous, VarKind::Binary, VarKind::Continuous, spec.moderator_kind()];
    let mut specs: Vec<VariableSpec> = COVARIATES
        .iter()
        .zip(kinds)
        .map(|(name, k)| VariableSpec::new(*name, k, VarRole::Covariate))
        .collect();
    specs.push(VariableSpec::new(EXPOSURE, VarKind::Binary, VarRole::Exposure));
    if spec.include_interaction {
        let xz = cols[5].iter().zip(&cols[4]).map(|(&x, &z)| x * z).collect();
        cols.push(xz);
        specs.push(VariableSpec::interaction(EXPOSURE, MODERATOR, spec.moderator_kind()));
    }
    Dataset::from_columns(specs, cols)
}

/// Adds `y ~ Bernoulli(expit(β·(1, z, x) + β_XZ·x·z5))` as the first column.
pub fn generate_outcome<T: Real, R: Rng + ?Sized>(data: &Dataset<T>, spec: &DgmSpec, rng: &mut R) -> Result<Dataset<T>> {
    let cols: Vec<&[T]> = COVARIATES
        .iter()
        .chain(&[EXPOSURE])
        .map(|n| data.column_by_name(n))
        .collect::<Result<_>>()?;
    let n = data.n_obs();
    let y: Vec<T> = (0..n)
        .map(|i| {
            let mut lp = spec.beta[0];
            for (b, c) in spec.beta[1..].iter().zip(&cols) {
                lp += b * c[i].as_f64();
            }
            lp += spec.beta_xz * cols[5][i].as_f64() * cols[4][i].as_f64();
            T::from_bool(rng.random::<f64>() < expit(lp))
        })
        .collect();
    data.with_column(0, VariableSpec::new(OUTCOME, VarKind::Binary, VarRole::Outcome), y, vec![true; n])
}

/// `Σ α_k·z_k + α₆·y` for every row.
fn observation_offsets<T: Real>(data: &Dataset<T>, spec: &DgmSpec) -> Result<Vec<f64>> {
    let cols: Vec<&[T]> = COVARIATES
        .iter()
        .chain(&[OUTCOME])
        .map(|n| data.column_by_name(n))
        .collect::<Result<_>>()?;
    Ok((0..data.n_obs())
        .map(|i| spec.alpha.iter().zip(&cols).map(|(a, c)| a * c[i].as_f64()).sum())
        .collect())
}

/// Bisection for `α₀` on `[−20, 20]` so that `mean(expit(α₀ + offset))` hits
/// `target` within `tol`.
pub fn calibrate_intercept(offsets: &[f64], target: f64, tol: f64) -> Result<f64> {
    if offsets.iter().all(|&o| o == 0.0) {
        return Ok(logit(target));
    }
    let n = offsets.len() as f64;
    let mean_p = |a0: f64| offsets.iter().map(|&o| expit(a0 + o)).sum::<f64>() / n;
    let (mut lo, mut hi) = (-20.0, 20.0);
    if !(mean_p(lo) <= target && target <= mean_p(hi)) {
        return Err(Error::BracketFailure { target });
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let m = mean_p(mid);
        if (m - target).abs() < tol * 1e-3 || hi - lo < 1e-12 {
            break;
        }
        if m < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (mean_p(mid) - target).abs() > tol {
        return Err(Error::BracketFailure { target });
    }
    Ok(mid)
}

/// Calibrates `α₀` on a fresh probe sample of `n_probe` rows.
pub fn calibrate_alpha0<R: Rng + ?Sized>(spec: &DgmSpec, rng: &mut R, n_probe: usize, tol: f64) -> Result<f64> {
    spec.validate()?;
    if spec.alpha.iter().all(|&a| a == 0.0) {
        return Ok(logit(spec.target_observed));
    }
    let probe_spec = DgmSpec {
        n_obs: n_probe,
        ..spec.clone()
    };
    let cov = generate_covariates::<f64, _>(&probe_spec, rng)?;
    let full = generate_outcome(&cov, &probe_spec, rng)?;
    calibrate_intercept(&observation_offsets(&full, spec)?, spec.target_observed, tol)
}

/// Masks `x` (and `x:z5`) where `R ~ Bernoulli(expit(α₀ + α·(z, y)))` is 0.
pub fn impose_missingness<T: Real, R: Rng + ?Sized>(
    data: &Dataset<T>,
    spec: &DgmSpec,
    alpha0: f64,
    rng: &mut R,
) -> Result<Dataset<T>> {
    let offsets = observation_offsets(data, spec)?;
    let masked: Vec<usize> = offsets
        .iter()
        .enumerate()
        .filter(|&(_, &o)| rng.random::<f64>() >= expit(alpha0 + o))
        .map(|(i, _)| i)
        .collect();
    let mut out = data.with_masked(data.index_of(EXPOSURE)?, &masked);
    if let Ok(j) = out.index_of(&spec.interaction_term()) {
        out = out.with_masked(j, &masked);
    }
    Ok(out)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replicate `r` of `dgm`.
pub fn replicate_seed(base_seed: u64, dgm: DgmId, r: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base_seed) ^ dgm.code()) ^ r)
}

fn calibration_seed(base_seed: u64, dgm: DgmId) -> u64 {
    replicate_seed(base_seed, dgm, u64::MAX)
}

/// One generated replicate.
#[derive(Debug, Clone)]
pub struct SimReplicate<T> {
    pub dgm: DgmId,
    pub replicate: usize,
    pub seed: u64,
    pub data: Dataset<T>,
    pub truth: Vec<(String, f64)>,
}

/// Generates replicate `r` with a precomputed `α₀`.
pub fn generate_replicate<T: Real>(spec: &DgmSpec, alpha0: f64, base_seed: u64, r: usize) -> Result<SimReplicate<T>> {
    let seed = replicate_seed(base_seed, spec.id, r as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cov = generate_covariates::<T, _>(spec, &mut rng)?;
    let full = generate_outcome(&cov, spec, &mut rng)?;
    let data = impose_missingness(&full, spec, alpha0, &mut rng)?;
    Ok(SimReplicate {
        dgm: spec.id,
        replicate: r,
        seed,
        data,
        truth: spec.truth(),
    })
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub dgms: Vec<DgmId>,
    pub methods: Vec<Method>,
    pub n_sim: usize,
    pub n_obs: usize,
    pub base_seed: u64,
    /// `strategy` is overridden per method; the rest applies to all.
    pub imputation: ImputationConfig,
    pub n_probe: usize,
    pub calibration_tol: f64,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            dgms: vec![DgmId::D1],
            methods: Method::ALL.to_vec(),
            n_sim: 200,
            n_obs: 10_000,
            base_seed: 20_240_101,
            imputation: ImputationConfig::default(),
            n_probe: 1_000_000,
            calibration_tol: 1e-3,
            threads: None,
        }
    }
}

/// One row of the long results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub dgm: DgmId,
    pub replicate: usize,
    pub method: Method,
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub truth: f64,
    pub failed: bool,
}

impl ReplicateRecord {
    pub fn covers(&self) -> bool {
        !self.failed && self.ci_low <= self.truth && self.truth <= self.ci_high
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodFailure {
    pub dgm: DgmId,
    pub replicate: usize,
    pub method: Method,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StudyDiagnostics {
    /// Largest score max-norm over all converged fits (analysis and working).
    pub max_converged_score: f64,
    pub converged_fits: usize,
    pub nonconverged_fits: usize,
    pub separation_flags: usize,
    pub rejection_fallbacks: usize,
    pub skipped_iterations: usize,
    pub failures: Vec<MethodFailure>,
    /// `(dgm, α₀)` per simulated mechanism.
    pub alpha0: Vec<(DgmId, f64)>,
}

impl StudyDiagnostics {
    fn tally_fit<T: Real>(&mut self, fit: &GlmFit<T>) {
        if fit.converged {
            self.converged_fits += 1;
            self.max_converged_score = self.max_converged_score.max(fit.max_abs_score.as_f64());
        } else {
            self.nonconverged_fits += 1;
        }
    }

    fn merge(&mut self, o: StudyDiagnostics) {
        self.max_converged_score = self.max_converged_score.max(o.max_converged_score);
        self.converged_fits += o.converged_fits;
        self.nonconverged_fits += o.nonconverged_fits;
        self.separation_flags += o.separation_flags;
        self.rejection_fallbacks += o.rejection_fallbacks;
        self.skipped_iterations += o.skipped_iterations;
        self.failures.extend(o.failures);
    }
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub records: Vec<ReplicateRecord>,
    pub diagnostics: StudyDiagnostics,
}

fn records_from<T: Real>(
    rep: &SimReplicate<T>,
    method: Method,
    pooled: Option<&[PooledEstimate<T>]>,
) -> Vec<ReplicateRecord> {
    rep.truth
        .iter()
        .enumerate()
        .map(|(j, (term, truth))| {
            let base = ReplicateRecord {
                dgm: rep.dgm,
                replicate: rep.replicate,
                method,
                term: term.clone(),
                estimate: f64::NAN,
                se: f64::NAN,
                ci_low: f64::NAN,
                ci_high: f64::NAN,
                truth: *truth,
                failed: true,
            };
            match pooled.and_then(|p| p.get(j)) {
                Some(p) => ReplicateRecord {
                    estimate: p.estimate.as_f64(),
                    se: p.std_error().as_f64(),
                    ci_low: p.ci_low.as_f64(),
                    ci_high: p.ci_high.as_f64(),
                    failed: false,
                    ..base
                },
                None => base,
            }
        })
        .collect()
}

/// Runs every method on one replicate.
pub fn analyse_replicate<T: Real>(
    rep: &SimReplicate<T>,
    formula: &ModelFormula,
    methods: &[Method],
    base_cfg: &ImputationConfig,
) -> (Vec<ReplicateRecord>, StudyDiagnostics) {
    let mut diag = StudyDiagnostics::default();
    let mut records = Vec::new();
    let imp_seed = splitmix64(rep.seed ^ 0x5EED);
    for &method in methods {
        let result: Result<Vec<PooledEstimate<T>>> = match method.strategy() {
            None => complete_case_model(&rep.data, formula).map(|fit| {
                diag.tally_fit(&fit);
                single_fit_estimates(&fit, &formula.term_names())
            }),
            Some(strategy) => {
                let cfg = ImputationConfig {
                    strategy,
                    seed: imp_seed,
                    moderator: base_cfg.moderator.clone().or_else(|| Some(MODERATOR.to_string())),
                    ..base_cfg.clone()
                };
                impute(&rep.data, formula, &cfg).and_then(|set| {
                    let d = &set.diagnostics;
                    diag.max_converged_score = diag.max_converged_score.max(d.max_converged_score);
                    diag.converged_fits += d.working_fits - d.nonconverged_fits;
                    diag.nonconverged_fits += d.nonconverged_fits;
                    diag.separation_flags += d.separation_flags.iter().flatten().filter(|&&f| f).count();
                    diag.rejection_fallbacks += d.rejection_fallbacks.iter().sum::<usize>();
                    diag.skipped_iterations += d.skipped_iterations.iter().sum::<usize>();
                    let fits = analysis_fits(&set.datasets, formula)?;
                    fits.iter().for_each(|f| diag.tally_fit(f));
                    pool_fits(&fits, &formula.term_names())
                })
            }
        };
        match result {
            Ok(p) => records.extend(records_from(rep, method, Some(&p))),
            Err(e) => {
                diag.failures.push(MethodFailure {
                    dgm: rep.dgm,
                    replicate: rep.replicate,
                    method,
                    message: e.to_string(),
                });
                records.extend(records_from(rep, method, None));
            }
        }
    }
    (records, diag)
}

/// The full study: calibrate each mechanism once, then generate and analyse
/// every replicate. Output is sorted by (dgm, replicate, method, term order)
/// regardless of scheduling.
pub fn run_study<T: Real>(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.imputation.validate()?;
    if cfg.methods.is_empty() {
        return Err(Error::InvalidConfig("no methods selected".into()));
    }
    let mut specs = Vec::with_capacity(cfg.dgms.len());
    let mut diagnostics = StudyDiagnostics::default();
    for &id in &cfg.dgms {
        let spec = DgmSpec {
            n_obs: cfg.n_obs,
            ..make_dgm(id)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(calibration_seed(cfg.base_seed, id));
        let a0 = calibrate_alpha0(&spec, &mut rng, cfg.n_probe, cfg.calibration_tol)?;
        diagnostics.alpha0.push((id, a0));
        specs.push((spec, a0));
    }
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    let jobs: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|k| (0..cfg.n_sim).map(move |r| (k, r)))
        .collect();
    let work = || -> Result<Vec<(Vec<ReplicateRecord>, StudyDiagnostics)>> {
        jobs.par_iter()
            .map(|&(k, r)| {
                let (spec, a0) = &specs[k];
                let rep = generate_replicate::<T>(spec, *a0, cfg.base_seed, r)?;
                Ok(analyse_replicate(&rep, &spec.formula(), &methods, &cfg.imputation))
            })
            .collect()
    };
    let outputs = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let mut records = Vec::new();
    for (rec, d) in outputs {
        records.extend(rec);
        diagnostics.merge(d);
    }
    Ok(StudyResult { records, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::fit_logistic;
    use crate::tabular::{build_design_matrix, model_frame, RowSelector};

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn col(d: &Dataset<f64>, n: &str) -> Vec<f64> {
        d.column_by_name(n).unwrap().to_vec()
    }

    #[test]
    fn dgm_table() {
        assert_eq!(make_dgm(DgmId::D4).alpha, [0.0; 6]);
        assert_eq!(make_dgm(DgmId::D4).mechanism, Mechanism::Mcar);
        assert_eq!(make_dgm(DgmId::D6).z5_prevalence, 0.01);
        assert_eq!(make_dgm(DgmId::Null).beta_xz, 0.0);
        assert!((make_dgm(DgmId::D1).beta_xz - 0.262_364_264_467_491).abs() < 1e-12);
        assert_eq!(make_dgm(DgmId::D5).z5_mode, Z5Mode::Continuous);
        assert!("7".parse::<DgmId>().is_err());
        assert_eq!("dgm3".parse::<DgmId>().unwrap(), DgmId::D3);
        assert_eq!("null".parse::<DgmId>().unwrap(), DgmId::Null);
        assert_eq!(Method::ALL.map(|m| m.as_str().parse::<Method>().unwrap()), Method::ALL);
    }

    #[test]
    fn covariate_moments() {
        let spec = make_dgm(DgmId::D1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = generate_covariates::<f64, _>(&spec, &mut rng).unwrap();
        assert_eq!(d.n_obs(), 10_000);
        let z1 = mean(&col(&d, "z1"));
        assert!((0.285..=0.315).contains(&z1), "{z1}");
        let z2 = col(&d, "z2");
        let m2 = mean(&z2);
        let sd2 = (z2.iter().map(|v| (v - m2).powi(2)).sum::<f64>() / 9_999.0).sqrt();
        assert!(m2.abs() <= 0.04 && (0.96..=1.04).contains(&sd2), "{m2} {sd2}");
        assert!((mean(&col(&d, "z4")) - 1.0 / 2.2).abs() < 0.02);
        assert_eq!(d.interaction_inconsistencies(), 0);
    }

    #[test]
    fn outcome_prevalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut spec = make_dgm(DgmId::D1);
        spec.beta = [0.0; 7];
        spec.beta_xz = 0.0;
        let cov = generate_covariates::<f64, _>(&spec, &mut rng).unwrap();
        let y = mean(&col(&generate_outcome(&cov, &spec, &mut rng).unwrap(), "y"));
        assert!((y - 0.5).abs() < 0.02);
        spec.beta[0] = -3.0;
        let y = mean(&col(&generate_outcome(&cov, &spec, &mut rng).unwrap(), "y"));
        assert!((y - expit(-3.0)).abs() < 0.01);
    }

    #[test]
    fn refit_recovers_coefficients() {
        let spec = make_dgm(DgmId::D1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cov = generate_covariates::<f64, _>(&spec, &mut rng).unwrap();
        let d = generate_outcome(&cov, &spec, &mut rng).unwrap();
        let mf = model_frame(&d, &spec.formula(), &RowSelector::All).unwrap();
        let fit = fit_logistic(&mf.x, &mf.y).unwrap();
        let se = fit.std_errors();
        for (j, (term, truth)) in spec.truth().iter().enumerate() {
            assert!((fit.coefficients[j] - truth).abs() < 4.0 * se[j], "{term}");
        }
    }

    #[test]
    fn calibration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mcar = make_dgm(DgmId::D4);
        assert!((calibrate_alpha0(&mcar, &mut rng, 1000, 1e-3).unwrap() - 1.386_294).abs() < 1e-6);
        assert!((calibrate_intercept(&[0.0; 50], 0.8, 1e-3).unwrap() - 0.8f64.ln() + 0.2f64.ln()).abs() < 1e-12);
        let offs = [0.5, 1.5, -2.0, 3.0];
        let a0 = calibrate_intercept(&offs, 0.8, 1e-3).unwrap();
        assert!((mean(&offs.map(|o| expit(a0 + o))) - 0.8).abs() < 1e-3);
        assert!(matches!(
            calibrate_intercept(&[100.0, 100.0], 0.5, 1e-3),
            Err(Error::BracketFailure { .. })
        ));
    }

    #[test]
    fn dgm1_observed_fraction() {
        let spec = make_dgm(DgmId::D1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a0 = calibrate_alpha0(&spec, &mut rng, 200_000, 1e-3).unwrap();
        let rep = generate_replicate::<f64>(&spec, a0, 9, 0).unwrap();
        let report = rep.data.missingness_report();
        let obs = report.observed_count("x").unwrap() as f64 / 10_000.0;
        assert!((obs - 0.8).abs() < 0.01, "{obs}");
        assert_eq!(report.observed_count("x:z5"), report.observed_count("x"));
        assert_eq!(report.observed_count("y"), Some(10_000));
        assert_eq!(report.observed_count("z5"), Some(10_000));
        assert_eq!(report.n_complete_cases + (10_000 - report.observed_count("x").unwrap()), 10_000);
    }

    #[test]
    fn forced_probabilities() {
        let spec = DgmSpec {
            n_obs: 500,
            ..make_dgm(DgmId::D1)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cov = generate_covariates::<f64, _>(&spec, &mut rng).unwrap();
        let d = generate_outcome(&cov, &spec, &mut rng).unwrap();
        let all = impose_missingness(&d, &spec, 1e3, &mut rng).unwrap();
        assert!(all.is_fully_observed());
        let none = impose_missingness(&d, &spec, -1e3, &mut rng).unwrap();
        assert_eq!(none.missingness_report().observed_count("x"), Some(0));
    }

    #[test]
    fn mcar_independent_of_outcome() {
        let spec = make_dgm(DgmId::D4);
        let a0 = logit(0.8);
        let rep = generate_replicate::<f64>(&spec, a0, 11, 0).unwrap();
        let x = rep.data.index_of("x").unwrap();
        let r: Vec<f64> = rep.data.column_mask(x).iter().map(|&o| f64::from(o)).collect();
        let y = col(&rep.data, "y");
        let design = crate::linalg::Matrix::from_rows(&y.iter().map(|&v| vec![1.0, v]).collect::<Vec<_>>());
        let fit = fit_logistic(&design, &r).unwrap();
        assert!(fit.coefficients[1].abs() < 4.0 * fit.std_errors()[1]);
    }

    #[test]
    fn null_has_no_interaction() {
        let spec = make_dgm(DgmId::Null);
        assert_eq!(spec.formula().n_terms(), 7);
        let rep = generate_replicate::<f64>(&DgmSpec { n_obs: 200, ..spec.clone() }, 1.0, 1, 0).unwrap();
        assert!(rep.data.index_of("x:z5").is_err());
        assert_eq!(rep.truth.len(), 7);
        build_design_matrix(&rep.data, &spec.formula(), &RowSelector::Complete).unwrap();
    }

    #[test]
    fn continuous_moderator_interaction_kind() {
        let spec = DgmSpec {
            n_obs: 300,
            ..make_dgm(DgmId::D5)
        };
        let rep = generate_replicate::<f64>(&spec, 1.0, 2, 0).unwrap();
        let j = rep.data.index_of("x:z5").unwrap();
        assert_eq!(rep.data.spec(j).kind, VarKind::Continuous);
    }

    #[test]
    fn small_study_is_reproducible() {
        let cfg = StudyConfig {
            dgms: vec![DgmId::D1],
            n_sim: 2,
            n_obs: 600,
            n_probe: 20_000,
            imputation: ImputationConfig {
                m: 2,
                iterations: 2,
                ..Default::default()
            },
            threads: Some(2),
            ..Default::default()
        };
        let a = run_study::<f64>(&cfg).unwrap();
        let b = run_study::<f64>(&StudyConfig { threads: Some(1), ..cfg }).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.records.len(), 2 * 5 * 8);
        assert!(a.records.iter().all(|r| !r.failed), "{:?}", a.diagnostics.failures);
        // paired design: every method saw the same replicate seed
        assert_eq!(a.records[0].replicate, 0);
        assert_eq!(a.records.last().unwrap().replicate, 1);
    }
}
