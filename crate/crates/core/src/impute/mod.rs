//! Chained-equations imputation for one partially observed binary covariate
//! whose product with a fully observed moderator enters the analysis model.
//!
//! Four strategies share the driver here:
//!
//! * [`Strategy::Passive`]: impute `X` from `Y` and the main effects, then
//!   recompute `XZ = X·Z`.
//! * [`Strategy::Jav`]: treat `XZ` as one more incomplete variable and cycle
//!   between `X` and `XZ` with no consistency constraint.
//! * [`Strategy::Sia`]: impute `X` separately within strata of `Z` (quintiles
//!   when `Z` is continuous) and recompute `XZ`.
//! * [`Strategy::Smcfcs`]: draw `X` from the conditional implied by the
//!   analysis model and a covariate model, via rejection sampling.
//!
//! Every imputed dataset `ℓ` uses its own generator stream derived from
//! `(seed, ℓ)`, so results do not depend on how datasets are scheduled.

mod jav;
mod passive;
mod sia;
mod smcfcs;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::glm::{
    draw_params, fit_linear, fit_logistic_with, impute_binary, impute_continuous, GlmFit, GlmOptions,
};
use crate::scalar::Real;
use crate::tabular::{build_design_matrix, model_frame, Dataset, ModelFormula, RowSelector, VarKind};

pub use jav::impute_jav;
pub use passive::impute_passive;
pub use sia::{impute_sia, stratify, Stratum};
pub use smcfcs::{impute_smcfcs, smcfcs_cell_prob, smcfcs_reject_sample, CellModel, RejectionOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Passive,
    Jav,
    Sia,
    Smcfcs,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Passive, Strategy::Jav, Strategy::Sia, Strategy::Smcfcs];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Passive => "passive",
            Strategy::Jav => "jav",
            Strategy::Sia => "sia",
            Strategy::Smcfcs => "smcfcs",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "passive" => Ok(Strategy::Passive),
            "jav" => Ok(Strategy::Jav),
            "sia" => Ok(Strategy::Sia),
            "smcfcs" => Ok(Strategy::Smcfcs),
            other => Err(Error::InvalidConfig(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImputationConfig {
    pub strategy: Strategy,
    pub m: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Strata for a continuous moderator under SIA.
    pub sia_groups: usize,
    pub smcfcs_max_rejections: usize,
    /// Moderator to stratify on when the analysis formula has no interaction
    /// involving the incomplete covariate.
    pub moderator: Option<String>,
}

impl Default for ImputationConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Passive,
            m: 10,
            iterations: 10,
            seed: 0,
            sia_groups: 5,
            smcfcs_max_rejections: 1000,
            moderator: None,
        }
    }
}

impl ImputationConfig {
    pub fn with_strategy(strategy: Strategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidConfig(format!("m must be >= 2, got {}", self.m)));
        }
        if self.iterations < 1 {
            return Err(Error::InvalidConfig("iterations must be >= 1".into()));
        }
        if self.sia_groups < 2 {
            return Err(Error::InvalidConfig(format!(
                "sia_groups must be >= 2, got {}",
                self.sia_groups
            )));
        }
        if self.smcfcs_max_rejections < 1 {
            return Err(Error::InvalidConfig("smcfcs_max_rejections must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub strategy: Strategy,
    pub seed: u64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// `[dataset][iteration]`: any working fit in that cycle flagged separation.
    pub separation_flags: Vec<Vec<bool>>,
    /// Per dataset: SMCFCS cells that hit the rejection cap and were drawn
    /// directly.
    pub rejection_fallbacks: Vec<usize>,
    /// Per dataset: SMCFCS cycles skipped because a working fit failed.
    pub skipped_iterations: Vec<usize>,
    pub working_fits: usize,
    pub nonconverged_fits: usize,
    /// Largest score max-norm over converged working fits.
    pub max_converged_score: f64,
}

impl Diagnostics {
    fn new(m: usize, iterations: usize) -> Self {
        Self {
            separation_flags: vec![vec![false; iterations]; m],
            rejection_fallbacks: vec![0; m],
            skipped_iterations: vec![0; m],
            ..Self::default()
        }
    }

    pub fn any_separation(&self) -> bool {
        self.separation_flags.iter().flatten().any(|&b| b)
    }

    fn record<T: Real>(&mut self, dataset: usize, iteration: usize, fit: &GlmFit<T>) {
        self.working_fits += 1;
        if fit.converged {
            self.max_converged_score = self.max_converged_score.max(fit.max_abs_score.as_f64());
        } else {
            self.nonconverged_fits += 1;
        }
        if fit.separation_flag {
            self.separation_flags[dataset][iteration] = true;
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImputedSet<T> {
    pub datasets: Vec<Dataset<T>>,
    pub provenance: Provenance,
    pub diagnostics: Diagnostics,
}

/// Runs the configured strategy.
pub fn impute<T: Real>(data: &Dataset<T>, formula: &ModelFormula, cfg: &ImputationConfig) -> Result<ImputedSet<T>> {
    match cfg.strategy {
        Strategy::Passive => impute_passive(data, formula, cfg),
        Strategy::Jav => impute_jav(data, formula, cfg),
        Strategy::Sia => impute_sia(data, formula, cfg),
        Strategy::Smcfcs => impute_smcfcs(data, formula, cfg),
    }
}

/// Generator for imputed dataset `index`.
pub fn dataset_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Fills every missing cell with a uniformly chosen observed value of the same
/// column.
pub fn initial_fill<T: Real, R: Rng + ?Sized>(data: &Dataset<T>, rng: &mut R) -> Result<Dataset<T>> {
    let mut out = data.clone();
    for j in 0..data.n_vars() {
        let missing = data.missing_rows(j);
        if missing.is_empty() {
            continue;
        }
        let donors: Vec<T> = data
            .observed_rows(j)
            .into_iter()
            .map(|i| data.column(j)[i])
            .collect();
        if donors.is_empty() {
            return Err(Error::NoObservedDonors(data.spec(j).name.clone()));
        }
        for i in missing {
            let v = donors[rng.random_range(0..donors.len())];
            out.set_imputed(i, j, v);
        }
    }
    Ok(out)
}

/// Column layout of the single-incomplete-covariate problem.
#[derive(Debug, Clone)]
pub(crate) struct Problem {
    pub outcome: String,
    /// The incomplete covariate `X`.
    pub target: String,
    pub target_col: usize,
    /// The moderator `Z` it interacts with, if any.
    pub moderator: Option<String>,
    /// Stored `X·Z` column, if the dataset carries one.
    pub interaction_col: Option<usize>,
    pub observed_rows: Vec<usize>,
    pub missing_rows: Vec<usize>,
}

impl Problem {
    /// `None` when there is nothing to impute.
    pub fn analyse<T: Real>(
        data: &Dataset<T>,
        formula: &ModelFormula,
        cfg: &ImputationConfig,
    ) -> Result<Option<Self>> {
        let y = data.index_of(&formula.outcome)?;
        if !data.missing_rows(y).is_empty() {
            return Err(Error::UnsupportedProblem(format!(
                "outcome `{}` must be fully observed",
                formula.outcome
            )));
        }
        let incomplete: Vec<usize> = (0..data.n_vars())
            .filter(|&j| !data.spec(j).is_derived() && !data.missing_rows(j).is_empty())
            .collect();
        let target_col = match incomplete.as_slice() {
            [] => return Ok(None),
            [j] => *j,
            many => {
                let names: Vec<&str> = many.iter().map(|&j| data.spec(j).name.as_str()).collect();
                return Err(Error::UnsupportedProblem(format!(
                    "exactly one partially observed covariate supported, found {}",
                    names.join(", ")
                )));
            }
        };
        let target = data.spec(target_col).name.clone();
        if data.spec(target_col).kind != VarKind::Binary {
            return Err(Error::UnsupportedProblem(format!("`{target}` must be binary")));
        }
        if !formula.main_terms.contains(&target) {
            return Err(Error::UnsupportedProblem(format!(
                "incomplete covariate `{target}` is not in the analysis formula"
            )));
        }
        let moderator = formula
            .interaction_terms
            .iter()
            .find_map(|(a, b)| {
                if *a == target {
                    Some(b.clone())
                } else if *b == target {
                    Some(a.clone())
                } else {
                    None
                }
            })
            .or_else(|| cfg.moderator.clone());
        if let Some(z) = &moderator {
            let zc = data.index_of(z)?;
            if !data.missing_rows(zc).is_empty() {
                return Err(Error::UnsupportedProblem(format!("moderator `{z}` must be fully observed")));
            }
        }
        let interaction_col = moderator
            .as_ref()
            .and_then(|z| data.interaction_column(&target, z));
        Ok(Some(Self {
            outcome: formula.outcome.clone(),
            target,
            target_col,
            moderator,
            interaction_col,
            observed_rows: data.observed_rows(target_col),
            missing_rows: data.missing_rows(target_col),
        }))
    }
}

/// `m` untouched copies, returned when there is nothing to impute.
pub(crate) fn identical_copies<T: Real>(data: &Dataset<T>, cfg: &ImputationConfig) -> ImputedSet<T> {
    ImputedSet {
        datasets: vec![data.clone(); cfg.m],
        provenance: provenance(cfg),
        diagnostics: Diagnostics::new(cfg.m, cfg.iterations),
    }
}

pub(crate) fn provenance(cfg: &ImputationConfig) -> Provenance {
    Provenance {
        strategy: cfg.strategy,
        seed: cfg.seed,
        iterations: cfg.iterations,
    }
}

/// Working fit of one imputation model. Logistic fits warm-start from the
/// previous cycle.
pub(crate) fn working_fit<T: Real>(
    data: &Dataset<T>,
    model: &ModelFormula,
    rows: &[usize],
    kind: VarKind,
    start: Option<&[T]>,
) -> Result<GlmFit<T>> {
    let frame = model_frame(data, model, &RowSelector::Indices(rows.to_vec()))?;
    match kind {
        VarKind::Binary => fit_logistic_with(&frame.x, &frame.y, start, &GlmOptions::default()),
        VarKind::Continuous => fit_linear(&frame.x, &frame.y),
    }
}

/// One univariate chained-equations step: fit `model` on `fit_rows`, draw
/// parameters, and overwrite the target on `fill_rows` with predictive draws.
#[allow(clippy::too_many_arguments)]
pub(crate) fn univariate_step<T: Real, R: Rng + ?Sized>(
    data: &mut Dataset<T>,
    model: &ModelFormula,
    fit_rows: &[usize],
    fill_rows: &[usize],
    start: &mut Option<Vec<T>>,
    diag: &mut Diagnostics,
    (dataset, iteration): (usize, usize),
    rng: &mut R,
) -> Result<()> {
    let target = data.index_of(&model.outcome)?;
    let kind = data.spec(target).kind;
    let fit = working_fit(data, model, fit_rows, kind, start.as_deref())?;
    diag.record(dataset, iteration, &fit);
    let draw = draw_params(&fit, rng)?;
    *start = Some(fit.coefficients);
    if fill_rows.is_empty() {
        return Ok(());
    }
    let x = build_design_matrix(data, model, &RowSelector::Indices(fill_rows.to_vec()))?;
    let values = match kind {
        VarKind::Binary => impute_binary(&draw, &x, rng),
        VarKind::Continuous => impute_continuous(&draw, &x, rng),
    };
    for (&i, v) in fill_rows.iter().zip(values) {
        data.set_imputed(i, target, v);
    }
    Ok(())
}

pub(crate) fn finish<T: Real>(datasets: Vec<Dataset<T>>, cfg: &ImputationConfig, diagnostics: Diagnostics) -> ImputedSet<T> {
    debug_assert!(datasets.iter().all(Dataset::is_fully_observed));
    ImputedSet {
        datasets,
        provenance: provenance(cfg),
        diagnostics,
    }
}
