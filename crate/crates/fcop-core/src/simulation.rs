//! Exact sampling from the model and seeded study harnesses.
//!
//! Sampling is exact: each replicate is L·g + v₀·1 with L the cached
//! Cholesky factor of Σ_Z, g i.i.d. standard normal and v₀ an independent
//! factor draw. All randomness flows through explicitly seeded ChaCha
//! generators; a fixed seed reproduces byte-identical output, and per-task
//! seeds are derived from the master seed with a SplitMix64 step so parallel
//! and serial schedules agree.

use crate::copula::FactorCopulaModel;
use crate::error::{Error, Result};
use crate::factor::FactorSpec;
use crate::inference::{
    fit, FitConfig, FitData, FitFactorForm, MarginalModel, Procedure,
};
use crate::numerics::linalg::Matrix;
use crate::numerics::math::{cos, ln, sqrt};
use crate::spatial::{CorrelationModel, LocationSet};
use crate::tail::{delta_metrics, DeltaMetrics};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic per-task seed derivation (SplitMix64 finalizer).
pub fn derive_seed(master: u64, task_index: u64) -> u64 {
    let mut z = master ^ task_index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded generator used throughout the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One standard normal draw (Box–Muller, cosine branch).
pub fn draw_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        if u1 > 0.0 {
            let r = sqrt(-2.0 * ln(u1));
            let z = r * cos(2.0 * core::f64::consts::PI * u2);
            if z.is_finite() {
                return z;
            }
        }
    }
}

/// N independent replicates of W = (W_1, …, W_n); row i is one replicate.
pub fn sample_replicates(model: &FactorCopulaModel, n_replicates: usize, seed: u64) -> Matrix {
    let (m, _) = sample_replicates_with_factors(model, n_replicates, seed);
    m
}

/// Like [`sample_replicates`] but also returns the factor draw behind each
/// replicate (used by independence diagnostics).
pub fn sample_replicates_with_factors(
    model: &FactorCopulaModel,
    n_replicates: usize,
    seed: u64,
) -> (Matrix, Vec<f64>) {
    let n = model.n();
    let chol = model.sigma_z().factor();
    let mut rng = seeded_rng(seed);
    let mut out = Matrix::zeros(n_replicates, n);
    let mut factors = Vec::with_capacity(n_replicates);
    let mut g = alloc::vec![0.0f64; n];

    for i in 0..n_replicates {
        for gj in g.iter_mut() {
            *gj = draw_standard_normal(&mut rng);
        }
        let v0 = model.factor().sample(&mut rng);
        factors.push(v0);
        let row = out.row_mut(i);
        for j in 0..n {
            let mut acc = v0;
            for k in 0..=j {
                acc += chol[(j, k)] * g[k];
            }
            row[j] = acc;
        }
    }
    (out, factors)
}

/// Transform sampled W values to the uniform scale through the marginal.
pub fn to_uniform_scale(model: &FactorCopulaModel, w: &Matrix) -> Result<Matrix> {
    if w.cols() != model.n() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} columns, model has {} sites",
            w.cols(),
            model.n()
        )));
    }
    let marginal = model.marginal();
    let mut u = Matrix::zeros(w.rows(), w.cols());
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            u[(i, j)] = marginal.cdf(w[(i, j)]).clamp(f64::MIN_POSITIVE, 1.0 - 1e-16);
        }
    }
    Ok(u)
}

// ---------------------------------------------------------------------------
// Replicated bias/sd study (Table-1 style)
// ---------------------------------------------------------------------------

/// Design of one simulate-then-fit experiment for the exponential-difference
/// model with the powered-exponential correlation: true parameters
/// θ = (θ₁, θ₂, θ_Z, α) on a k×k unit-square grid.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct StudyDesign {
    pub grid_k: usize,
    /// Replicates per simulated data set (N).
    pub n_replicates: usize,
    /// Independent simulate-then-fit repetitions (R).
    pub repetitions: usize,
    /// (θ₁, θ₂, θ_Z, α).
    pub theta: [f64; 4],
    pub procedure: Procedure,
    pub seed: u64,
    /// Marginal used to generate observation-scale data for procedures 2–4.
    pub marginal: MarginalModel,
}

impl StudyDesign {
    pub fn table1(grid_k: usize, n_replicates: usize, repetitions: usize, procedure: Procedure, seed: u64) -> Self {
        Self {
            grid_k,
            n_replicates,
            repetitions,
            theta: [1.2, 2.5, 1.2, 1.5],
            procedure,
            seed,
            marginal: MarginalModel::ParametricStudentT { mean: 1.5, sd: 0.85, df: 8.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_k == 0 || self.n_replicates == 0 || self.repetitions == 0 {
            return Err(Error::InvalidParameter("study dimensions must be positive".into()));
        }
        self.marginal.validate()
    }

    fn true_model(&self) -> Result<FactorCopulaModel> {
        let corr = CorrelationModel::powered_exponential(self.theta[2], self.theta[3])?;
        let spec = FactorSpec::exponential_difference(self.theta[0], self.theta[1]);
        FactorCopulaModel::new(corr, spec, LocationSet::unit_square_grid(self.grid_k)?)
    }
}

/// Estimates from one repetition (copula parameters θ₁, θ₂, θ_Z, α).
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RepetitionOutcome {
    pub index: usize,
    pub estimates: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StudySummary {
    pub parameter_names: Vec<String>,
    pub truth: Vec<f64>,
    /// mean(θ̂) − θ per coordinate, over successful repetitions.
    pub bias: Vec<f64>,
    /// Sample standard deviation; `None` when fewer than two repetitions
    /// succeeded.
    pub sd: Option<Vec<f64>>,
    pub outcomes: Vec<RepetitionOutcome>,
    pub failed_repetitions: usize,
}

/// One simulate-then-fit cycle; repetition seeds derive from the master
/// seed, so serial and parallel schedules produce identical outcomes.
pub fn run_study_repetition(design: &StudyDesign, rep: usize) -> Result<RepetitionOutcome> {
    design.validate()?;
    let truth = design.true_model()?;
    let seed = derive_seed(design.seed, rep as u64);
    let w = sample_replicates(&truth, design.n_replicates, seed);

    let locations = LocationSet::unit_square_grid(design.grid_k)?;
    let corr0 = CorrelationModel::powered_exponential(1.0, 1.0)?;
    let mut cfg = FitConfig::new(design.procedure);
    cfg.compute_standard_errors = false;
    let result = match design.procedure {
        Procedure::KnownUniform => {
            let u = to_uniform_scale(&truth, &w)?;
            fit(FitData::Uniforms(&u), &locations, corr0, FitFactorForm::ExponentialDifference, &cfg)?
        }
        Procedure::RankPseudo => {
            // Ranks are invariant to the monotone marginal, so the W scale
            // serves directly as the observation scale.
            fit(FitData::Observations(&w), &locations, corr0, FitFactorForm::ExponentialDifference, &cfg)?
        }
        Procedure::TwoStepParametric | Procedure::JointParametric => {
            let u = to_uniform_scale(&truth, &w)?;
            let mut y = Matrix::zeros(u.rows(), u.cols());
            for i in 0..u.rows() {
                for j in 0..u.cols() {
                    y[(i, j)] = design.marginal.observation_from(u[(i, j)])?;
                }
            }
            fit(FitData::Observations(&y), &locations, corr0, FitFactorForm::ExponentialDifference, &cfg)?
        }
    };

    let mut estimates = result.theta_f.clone();
    estimates.extend_from_slice(&result.theta_sigma);
    Ok(RepetitionOutcome {
        index: rep,
        estimates,
        log_likelihood: result.log_likelihood,
        converged: result.converged,
    })
}

/// Aggregate per-parameter bias and standard deviation over the outcomes of
/// a study (order-independent: outcomes are sorted by repetition index).
pub fn summarize_study(
    design: &StudyDesign,
    mut outcomes: Vec<RepetitionOutcome>,
    failed: usize,
) -> StudySummary {
    outcomes.sort_by_key(|o| o.index);
    let k = 4usize;
    let truth = design.theta.to_vec();
    let m = outcomes.len();
    let mut mean = alloc::vec![0.0f64; k];
    for o in &outcomes {
        for j in 0..k {
            mean[j] += o.estimates[j];
        }
    }
    for v in mean.iter_mut() {
        *v /= m.max(1) as f64;
    }
    let bias: Vec<f64> = (0..k).map(|j| mean[j] - truth[j]).collect();
    let sd = if m >= 2 {
        let mut acc = alloc::vec![0.0f64; k];
        for o in &outcomes {
            for j in 0..k {
                let d = o.estimates[j] - mean[j];
                acc[j] += d * d;
            }
        }
        Some(acc.into_iter().map(|v| sqrt(v / (m - 1) as f64)).collect())
    } else {
        None
    };
    StudySummary {
        parameter_names: alloc::vec![
            "theta1".into(),
            "theta2".into(),
            "theta_z".into(),
            "alpha".into(),
        ],
        truth,
        bias,
        sd,
        outcomes,
        failed_repetitions: failed,
    }
}

/// R independent simulate-then-fit cycles, sequential driver.
pub fn run_bias_sd_study(design: &StudyDesign) -> Result<StudySummary> {
    design.validate()?;
    let mut outcomes = Vec::with_capacity(design.repetitions);
    let mut failed = 0usize;
    for rep in 0..design.repetitions {
        match run_study_repetition(design, rep) {
            Ok(o) => outcomes.push(o),
            Err(_) => failed += 1,
        }
    }
    if outcomes.is_empty() {
        return Err(Error::Domain("every repetition failed".into()));
    }
    Ok(summarize_study(design, outcomes, failed))
}

// ---------------------------------------------------------------------------
// Misspecification study (Table-2 style)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct MisspecDesign {
    pub grid_k: usize,
    /// Replicates in the fitted sample.
    pub n_fit: usize,
    /// Draws used for the model-based dependence matrices.
    pub model_draws: usize,
    pub seed: u64,
    /// Power of the tail-weighted measure.
    pub tw_power: u32,
}

impl Default for MisspecDesign {
    fn default() -> Self {
        Self { grid_k: 5, n_fit: 2000, model_draws: 100_000, seed: 0, tw_power: 6 }
    }
}

#[derive(Debug, Clone)]
pub struct CandidateOutcome {
    pub factor_form: FitFactorForm,
    pub estimates: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub delta: DeltaMetrics,
}

#[derive(Debug)]
pub struct MisspecResult {
    pub empirical: (Matrix, Matrix, Matrix),
    pub candidates: Vec<CandidateOutcome>,
}

/// Dependence matrices (Spearman, lower/upper tail-weighted) of a uniform
/// data matrix; diagonals are 1 by convention.
pub fn dependence_matrices(u: &Matrix, tw_power: u32) -> Result<(Matrix, Matrix, Matrix)> {
    let n = u.cols();
    let mut rho = Matrix::identity(n);
    let mut lower = Matrix::identity(n);
    let mut upper = Matrix::identity(n);
    let col = |j: usize| -> Vec<f64> { (0..u.rows()).map(|i| u[(i, j)]).collect() };
    let cols: Vec<Vec<f64>> = (0..n).map(col).collect();
    for j1 in 0..n {
        for j2 in 0..j1 {
            let r = crate::tail::spearman_rho_data(&cols[j1], &cols[j2])?;
            let l = crate::tail::tail_weighted_data(&cols[j1], &cols[j2], crate::tail::Tail::Lower, tw_power)?;
            let up = crate::tail::tail_weighted_data(&cols[j1], &cols[j2], crate::tail::Tail::Upper, tw_power)?;
            rho[(j1, j2)] = r;
            rho[(j2, j1)] = r;
            lower[(j1, j2)] = l;
            lower[(j2, j1)] = l;
            upper[(j1, j2)] = up;
            upper[(j2, j1)] = up;
        }
    }
    Ok((rho, lower, upper))
}

/// Simulate from a (typically misspecified-truth) model, fit each candidate
/// family by the rank pseudo-likelihood, and compare dependence summaries
/// through the six Δ metrics.
pub fn run_misspecification_study(
    truth_corr: CorrelationModel,
    truth_factor: FactorSpec,
    candidates: &[FitFactorForm],
    design: &MisspecDesign,
) -> Result<MisspecResult> {
    if !candidates.contains(&FitFactorForm::Gaussian) {
        return Err(Error::InvalidParameter(
            "candidate set must include the Gaussian baseline".into(),
        ));
    }
    let locations = LocationSet::unit_square_grid(design.grid_k)?;
    let truth = FactorCopulaModel::new(truth_corr, truth_factor, locations.clone())?;
    let w = sample_replicates(&truth, design.n_fit, derive_seed(design.seed, 0));
    let u = crate::inference::rank_transform(&w)?;
    let empirical = dependence_matrices(&u, design.tw_power)?;

    let corr0 = CorrelationModel::powered_exponential(1.0, 1.0)?;
    let mut cfg = FitConfig::new(Procedure::RankPseudo);
    cfg.compute_standard_errors = false;
    let mut rows = Vec::with_capacity(candidates.len());
    for (c_idx, cand) in candidates.iter().enumerate() {
        let fitres = fit(FitData::Observations(&w), &locations, corr0, *cand, &cfg)?;
        let fitted_corr = corr0.with_params(&fitres.theta_sigma)?;
        let fitted_spec = cand.spec(&fitres.theta_f)?;
        let fitted = FactorCopulaModel::new(fitted_corr, fitted_spec, locations.clone())?;
        let draws = sample_replicates(
            &fitted,
            design.model_draws,
            derive_seed(design.seed, 1000 + c_idx as u64),
        );
        let u_model = to_uniform_scale(&fitted, &draws)?;
        let model_mats = dependence_matrices(&u_model, design.tw_power)?;
        let delta = delta_metrics(
            (&empirical.0, &empirical.1, &empirical.2),
            (&model_mats.0, &model_mats.1, &model_mats.2),
        )?;
        let mut estimates = fitres.theta_f.clone();
        estimates.extend_from_slice(&fitres.theta_sigma);
        rows.push(CandidateOutcome {
            factor_form: *cand,
            estimates,
            log_likelihood: fitres.log_likelihood,
            converged: fitres.converged,
            delta,
        });
    }
    Ok(MisspecResult { empirical, candidates: rows })
}
