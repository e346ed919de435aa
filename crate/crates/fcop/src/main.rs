//! `fcop`: batch command-line front end for the factor copula spatial
//! model. Subcommands: simulate, fit, predict, diagnose, study.
//!
//! Exit codes: 0 ok, 2 configuration error, 3 numeric failure,
//! 4 non-convergence (outputs still written, flagged).

use clap::{Args, Parser, Subcommand};
use fcop::error::{CliError, CliResult};
use fcop::formats::{self, FitReport, Provenance};
use fcop::parallel::run_bias_sd_study_parallel;
use fcop_core::copula::FactorCopulaModel;
use fcop_core::inference::{
    fit, FitConfig, FitData, FitFactorForm, Procedure,
};
use fcop_core::prediction::{predict_grid, BackTransform, PredictionRequest};
use fcop_core::simulation::{sample_replicates, to_uniform_scale, StudyDesign};
use fcop_core::spatial::{CorrelationModel, LocationSet};
use fcop_core::tail::{lambda_q, tail_report, Tail};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "fcop", version, about = "Factor copula models for replicated spatial data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for parallel-capable commands.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate replicates from a model onto a CSV file.
    Simulate(SimulateArgs),
    /// Maximum-likelihood fit of a factor copula to replicated data.
    Fit(FitArgs),
    /// Conditional quantile/mean prediction on a target grid.
    Predict(PredictArgs),
    /// Tail-dependence diagnostics and model-vs-data Δ comparisons.
    Diagnose(DiagnoseArgs),
    /// Replicated simulate-then-fit study (bias and standard deviation).
    Study(StudyArgs),
}

fn main() {
    let cli = Cli::parse();
    let threads = cli.threads;
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Study(a) => cmd_study(a, threads),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

// ---------------------------------------------------------------------------
// Shared option plumbing
// ---------------------------------------------------------------------------

fn ensure_out_dir(out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn parse_grid_spec(spec: &str) -> CliResult<usize> {
    let lower = spec.to_ascii_lowercase();
    let parts: Vec<&str> = lower.split('x').collect();
    if parts.len() != 2 || parts[0] != parts[1] {
        return Err(CliError::Config(format!(
            "grid spec must look like `KxK` with equal sides, got `{spec}`"
        )));
    }
    parts[0]
        .parse::<usize>()
        .map_err(|e| CliError::Config(format!("bad grid spec `{spec}`: {e}")))
}

/// Resolve the observed-site layout from exactly one of --grid / --locations.
fn resolve_locations(
    grid: &Option<String>,
    locations: &Option<PathBuf>,
) -> CliResult<LocationSet> {
    match (grid, locations) {
        (Some(g), None) => {
            let k = parse_grid_spec(g)?;
            Ok(LocationSet::unit_square_grid(k)?)
        }
        (None, Some(path)) => formats::read_locations_csv(path),
        (Some(_), Some(_)) => {
            Err(CliError::Config("give either --grid or --locations, not both".into()))
        }
        (None, None) => Err(CliError::Config("one of --grid or --locations is required".into())),
    }
}

fn parse_list(text: &str, what: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("bad {what} `{t}`: {e}")))
        })
        .collect()
}

fn read_config_file<T: for<'de> Deserialize<'de> + Default>(
    path: &Option<PathBuf>,
) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SimulateArgs {
    /// Model JSON (correlation + factor specification).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Uniform grid spec, e.g. 3x3, on the unit square.
    #[arg(long)]
    grid: Option<String>,
    /// Locations CSV (header id,x,y[,z…]).
    #[arg(long)]
    locations: Option<PathBuf>,
    /// Number of replicates to draw.
    #[arg(short = 'n', long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional JSON config carrying the same keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct SimulateFileOpts {
    model: Option<PathBuf>,
    grid: Option<String>,
    locations: Option<PathBuf>,
    replicates: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let file: SimulateFileOpts = read_config_file(&args.config)?;
    let model_path = args
        .model
        .or(file.model)
        .ok_or_else(|| CliError::Config("--model is required".into()))?;
    let grid = args.grid.or(file.grid);
    let locations_path = args.locations.or(file.locations);
    let n = args
        .replicates
        .or(file.replicates)
        .ok_or_else(|| CliError::Config("--replicates is required".into()))?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let out = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("."));

    let cfg = formats::read_model_config(&model_path)?;
    let locations = resolve_locations(&grid, &locations_path)?;
    let model = FactorCopulaModel::new(cfg.correlation, cfg.factor, locations.clone())?;
    let data = sample_replicates(&model, n, seed);

    ensure_out_dir(&out)?;
    let header: Vec<String> = match locations.labels() {
        Some(l) => l.to_vec(),
        None => (0..locations.len()).map(|i| format!("s{i}")).collect(),
    };
    formats::write_replicates_csv(&out.join("replicates.csv"), &header, &data)?;
    formats::write_locations_csv(&out.join("locations.csv"), &locations)?;
    formats::write_json(
        &out.join("provenance.json"),
        &Provenance::new("simulate", Some(seed), Some(cfg)),
    )?;
    eprintln!("wrote {} replicates at {} sites to {}", n, locations.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[derive(Args)]
struct FitArgs {
    /// Replicates CSV (header of site ids, one row per replicate).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    locations: Option<PathBuf>,
    /// Factor family: gaussian | exp | exp_diff | pareto_diff | weibull_diff.
    #[arg(long)]
    factor: Option<String>,
    /// Fixed Pareto shapes `beta1,beta2` for --factor pareto_diff.
    #[arg(long)]
    pareto_betas: Option<String>,
    /// Fixed Weibull shapes `alpha1,alpha2` for --factor weibull_diff.
    #[arg(long)]
    weibull_alphas: Option<String>,
    /// Correlation family: powered_exponential | matern | damped_cosine.
    #[arg(long)]
    corr: Option<String>,
    /// Starting parameters of the correlation family.
    #[arg(long)]
    corr_start: Option<String>,
    /// Estimation procedure 1–4.
    #[arg(long)]
    procedure: Option<u8>,
    /// Marginal handling: none | t (required for procedures 3 and 4).
    #[arg(long)]
    marginal: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write an iteration trace CSV.
    #[arg(long, default_value_t = false)]
    trace: bool,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    gradient_tol: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct FitFileOpts {
    data: Option<PathBuf>,
    grid: Option<String>,
    locations: Option<PathBuf>,
    factor: Option<String>,
    pareto_betas: Option<String>,
    weibull_alphas: Option<String>,
    corr: Option<String>,
    corr_start: Option<String>,
    procedure: Option<u8>,
    marginal: Option<String>,
    out: Option<PathBuf>,
    max_iterations: Option<usize>,
    gradient_tol: Option<f64>,
}

fn parse_factor_form(
    name: &str,
    pareto_betas: &Option<String>,
    weibull_alphas: &Option<String>,
) -> CliResult<FitFactorForm> {
    match name {
        "gaussian" => Ok(FitFactorForm::Gaussian),
        "exp" | "exponential" => Ok(FitFactorForm::ExponentialOneSided),
        "exp_diff" | "exponential_difference" => Ok(FitFactorForm::ExponentialDifference),
        "pareto_diff" => {
            let betas = parse_list(
                pareto_betas.as_deref().unwrap_or("4,4"),
                "pareto beta",
            )?;
            if betas.len() != 2 {
                return Err(CliError::Config("--pareto-betas needs two values".into()));
            }
            Ok(FitFactorForm::ParetoDifference { beta1: betas[0], beta2: betas[1] })
        }
        "weibull_diff" => {
            let alphas = parse_list(
                weibull_alphas.as_deref().unwrap_or("1,1"),
                "weibull alpha",
            )?;
            if alphas.len() != 2 {
                return Err(CliError::Config("--weibull-alphas needs two values".into()));
            }
            Ok(FitFactorForm::WeibullDifference { alpha1: alphas[0], alpha2: alphas[1] })
        }
        other => Err(CliError::Config(format!(
            "unknown factor family `{other}` (gaussian | exp | exp_diff | pareto_diff | weibull_diff)"
        ))),
    }
}

fn parse_corr_proto(name: &str, start: &Option<String>) -> CliResult<CorrelationModel> {
    let params = match start {
        Some(s) => Some(parse_list(s, "correlation parameter")?),
        None => None,
    };
    let proto = match name {
        "powered_exponential" => {
            let p = params.unwrap_or_else(|| vec![1.0, 1.0]);
            if p.len() != 2 {
                return Err(CliError::Config("powered_exponential takes two parameters".into()));
            }
            CorrelationModel::powered_exponential(p[0], p[1])?
        }
        "matern" => {
            let p = params.unwrap_or_else(|| vec![0.5, 1.0]);
            if p.len() != 2 {
                return Err(CliError::Config("matern takes two parameters".into()));
            }
            CorrelationModel::matern(p[0], p[1])?
        }
        "damped_cosine" => {
            let p = params.unwrap_or_else(|| vec![1.0]);
            if p.len() != 1 {
                return Err(CliError::Config("damped_cosine takes one parameter".into()));
            }
            CorrelationModel::damped_cosine(p[0])?
        }
        other => {
            return Err(CliError::Config(format!("unknown correlation family `{other}`")));
        }
    };
    Ok(proto)
}

fn cmd_fit(args: FitArgs) -> CliResult<()> {
    let file: FitFileOpts = read_config_file(&args.config)?;
    let data_path = args
        .data
        .or(file.data)
        .ok_or_else(|| CliError::Config("--data is required".into()))?;
    let grid = args.grid.or(file.grid);
    let locations_path = args.locations.or(file.locations);
    let factor_name = args
        .factor
        .or(file.factor)
        .ok_or_else(|| CliError::Config("--factor is required".into()))?;
    let pareto_betas = args.pareto_betas.or(file.pareto_betas);
    let weibull_alphas = args.weibull_alphas.or(file.weibull_alphas);
    let corr_name = args.corr.or(file.corr).unwrap_or_else(|| "powered_exponential".into());
    let corr_start = args.corr_start.or(file.corr_start);
    let procedure_idx = args.procedure.or(file.procedure).unwrap_or(2);
    let marginal = args.marginal.or(file.marginal).unwrap_or_else(|| "none".into());
    let out = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("."));

    let procedure = Procedure::from_index(procedure_idx)?;
    if matches!(procedure, Procedure::TwoStepParametric | Procedure::JointParametric)
        && marginal != "t"
    {
        return Err(CliError::Config(format!(
            "procedure {procedure_idx} needs a parametric marginal: pass --marginal t"
        )));
    }

    let factor_form = parse_factor_form(&factor_name, &pareto_betas, &weibull_alphas)?;
    let corr_proto = parse_corr_proto(&corr_name, &corr_start)?;
    let locations = resolve_locations(&grid, &locations_path)?;
    let (_, data) = formats::read_replicates_csv(&data_path)?;
    if data.cols() != locations.len() {
        return Err(CliError::Config(format!(
            "data has {} columns but there are {} sites",
            data.cols(),
            locations.len()
        )));
    }

    let mut cfg = FitConfig::new(procedure);
    if let Some(m) = args.max_iterations.or(file.max_iterations) {
        cfg.max_iterations = m;
    }
    if let Some(g) = args.gradient_tol.or(file.gradient_tol) {
        cfg.gradient_tol = g;
    }
    cfg.keep_trace = args.trace;

    let fit_data = match procedure {
        Procedure::KnownUniform => FitData::Uniforms(&data),
        _ => FitData::Observations(&data),
    };
    let result = fit(fit_data, &locations, corr_proto, factor_form, &cfg)?;

    ensure_out_dir(&out)?;
    let report = FitReport::from_result(procedure, factor_form, corr_proto, &result)?;
    formats::write_json(&out.join("fit.json"), &report)?;
    if args.trace {
        let mut w = csv::Writer::from_path(out.join("trace.csv"))?;
        w.write_record(["iteration", "log_likelihood", "scaled_gradient_norm"])?;
        for (it, ll, g) in &result.trace {
            w.write_record([it.to_string(), ll.to_string(), g.to_string()])?;
        }
        w.flush()?;
    }
    formats::write_json(&out.join("provenance.json"), &Provenance::new("fit", None, None))?;
    eprintln!(
        "fit: log-likelihood {:.4}, {} iterations, converged = {}",
        result.log_likelihood, result.iterations, result.converged
    );
    if !result.converged {
        return Err(CliError::NonConvergence(format!(
            "scaled gradient norm {:.3e} above tolerance (results written to {})",
            result.gradient_norm,
            out.display()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

#[derive(Args)]
struct PredictArgs {
    /// Fit report JSON produced by `fcop fit`.
    #[arg(long)]
    fit: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    locations: Option<PathBuf>,
    /// Which replicate row conditions the prediction.
    #[arg(long)]
    row: Option<usize>,
    /// Target grid spec, e.g. 60x60, over the bounding box.
    #[arg(long)]
    target_grid: Option<String>,
    /// Target bounding box `x0,y0,x1,y1` (defaults to the observed box).
    #[arg(long)]
    bbox: Option<String>,
    /// Quantile levels, e.g. 0.05,0.5,0.95.
    #[arg(long)]
    quantiles: Option<String>,
    /// Back-transform: uniform | normal | t (t uses the fit's marginal).
    #[arg(long)]
    back_transform: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct PredictFileOpts {
    fit: Option<PathBuf>,
    data: Option<PathBuf>,
    grid: Option<String>,
    locations: Option<PathBuf>,
    row: Option<usize>,
    target_grid: Option<String>,
    bbox: Option<String>,
    quantiles: Option<String>,
    back_transform: Option<String>,
    out: Option<PathBuf>,
}

fn grid_over_bbox(k: usize, bbox: (f64, f64, f64, f64)) -> CliResult<LocationSet> {
    let (x0, y0, x1, y1) = bbox;
    if !(x1 > x0 && y1 > y0) || k == 0 {
        return Err(CliError::Config(format!("degenerate target grid bbox {bbox:?}")));
    }
    let mut sites = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            let fx = if k == 1 { 0.5 } else { i as f64 / (k - 1) as f64 };
            let fy = if k == 1 { 0.5 } else { j as f64 / (k - 1) as f64 };
            sites.push(vec![x0 + fx * (x1 - x0), y0 + fy * (y1 - y0)]);
        }
    }
    Ok(LocationSet::new(sites)?)
}

fn cmd_predict(args: PredictArgs) -> CliResult<()> {
    let file: PredictFileOpts = read_config_file(&args.config)?;
    let fit_path =
        args.fit.or(file.fit).ok_or_else(|| CliError::Config("--fit is required".into()))?;
    let data_path =
        args.data.or(file.data).ok_or_else(|| CliError::Config("--data is required".into()))?;
    let grid = args.grid.or(file.grid);
    let locations_path = args.locations.or(file.locations);
    let row = args.row.or(file.row).unwrap_or(0);
    let target_spec = args
        .target_grid
        .or(file.target_grid)
        .ok_or_else(|| CliError::Config("--target-grid is required".into()))?;
    let bbox_text = args.bbox.or(file.bbox);
    let quantile_text =
        args.quantiles.or(file.quantiles).unwrap_or_else(|| "0.05,0.5,0.95".into());
    let back_name = args.back_transform.or(file.back_transform).unwrap_or_else(|| "uniform".into());
    let out = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("."));

    let report = formats::read_fit_report(&fit_path)?;
    let locations = resolve_locations(&grid, &locations_path)?;
    let (_, data) = formats::read_replicates_csv(&data_path)?;
    if row >= data.rows() {
        return Err(CliError::Config(format!(
            "--row {row} out of range for {} replicates",
            data.rows()
        )));
    }

    // Uniform scores for the conditioning replicate come from the column
    // ranks of the whole data set (margins are handled nonparametrically).
    let u = fcop_core::inference::rank_transform(&data)?;
    let u_row: Vec<f64> = u.row(row).to_vec();

    let model =
        FactorCopulaModel::new(report.correlation, report.factor_spec()?, locations.clone())?;
    let request = PredictionRequest::new(&model, &u_row)?;

    let levels = parse_list(&quantile_text, "quantile level")?;
    let back = match back_name.as_str() {
        "uniform" => BackTransform::Uniform,
        "normal" => BackTransform::NormalScores,
        "t" => {
            if report.theta_g.len() != 3 {
                return Err(CliError::Config(
                    "back-transform `t` needs a fit with marginal parameters (procedure 3/4)"
                        .into(),
                ));
            }
            BackTransform::StudentT {
                mean: report.theta_g[0],
                sd: report.theta_g[1],
                df: report.theta_g[2],
            }
        }
        other => return Err(CliError::Config(format!("unknown back-transform `{other}`"))),
    };

    let k = parse_grid_spec(&target_spec)?;
    let bbox = match bbox_text {
        Some(t) => {
            let v = parse_list(&t, "bbox coordinate")?;
            if v.len() != 4 {
                return Err(CliError::Config("--bbox needs x0,y0,x1,y1".into()));
            }
            (v[0], v[1], v[2], v[3])
        }
        None => {
            let mut x0 = f64::INFINITY;
            let mut y0 = f64::INFINITY;
            let mut x1 = f64::NEG_INFINITY;
            let mut y1 = f64::NEG_INFINITY;
            for i in 0..locations.len() {
                let s = locations.site(i);
                x0 = x0.min(s[0]);
                x1 = x1.max(s[0]);
                y0 = y0.min(s.get(1).copied().unwrap_or(0.0));
                y1 = y1.max(s.get(1).copied().unwrap_or(0.0));
            }
            (x0, y0, x1, y1)
        }
    };
    let targets = grid_over_bbox(k, bbox)?;

    let surface = predict_grid(&request, &targets, &levels, &back)?;
    ensure_out_dir(&out)?;
    formats::write_prediction_csv(&out.join("prediction.csv"), &surface)?;
    formats::write_json(&out.join("provenance.json"), &Provenance::new("predict", None, None))?;
    eprintln!(
        "predicted {} of {} target sites ({} failures) to {}",
        surface.sites.len(),
        targets.len(),
        surface.failures.len(),
        out.display()
    );
    // Coincident-site rejections are reported but only genuine numeric
    // failures count toward the 1% abort rule.
    let numeric_failures = surface
        .failures
        .iter()
        .filter(|(_, e)| {
            matches!(
                e,
                fcop_core::Error::Domain(_)
                    | fcop_core::Error::QuadratureNonConvergence { .. }
                    | fcop_core::Error::BracketFailure(_)
                    | fcop_core::Error::NonFinite(_)
            )
        })
        .count();
    if numeric_failures * 100 > targets.len() {
        return Err(CliError::Numeric(format!(
            "{numeric_failures} of {} target sites failed numerically (over 1%)",
            targets.len()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    locations: Option<PathBuf>,
    /// Fit report JSON; repeat the flag to compare several models.
    #[arg(long = "fit")]
    fits: Vec<PathBuf>,
    /// Site pair for the tail report, e.g. 0,1.
    #[arg(long)]
    pair: Option<String>,
    /// Monte-Carlo draws for model-based measures.
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Optional q-grid for a λ^q CSV, e.g. 0.5,0.25,0.1,0.05,0.01,0.001.
    #[arg(long)]
    q_grid: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct DiagnoseFileOpts {
    data: Option<PathBuf>,
    grid: Option<String>,
    locations: Option<PathBuf>,
    fits: Option<Vec<PathBuf>>,
    pair: Option<String>,
    draws: Option<usize>,
    seed: Option<u64>,
    q_grid: Option<String>,
    out: Option<PathBuf>,
}

fn cmd_diagnose(args: DiagnoseArgs) -> CliResult<()> {
    let file: DiagnoseFileOpts = read_config_file(&args.config)?;
    let data_path =
        args.data.or(file.data).ok_or_else(|| CliError::Config("--data is required".into()))?;
    let grid = args.grid.or(file.grid);
    let locations_path = args.locations.or(file.locations);
    let fits = if args.fits.is_empty() { file.fits.unwrap_or_default() } else { args.fits };
    if fits.is_empty() {
        return Err(CliError::Config("at least one --fit is required".into()));
    }
    let pair_text = args.pair.or(file.pair).unwrap_or_else(|| "0,1".into());
    let draws = args.draws.or(file.draws).unwrap_or(100_000);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let q_grid_text = args.q_grid.or(file.q_grid);
    let out = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("."));

    let locations = resolve_locations(&grid, &locations_path)?;
    let (_, data) = formats::read_replicates_csv(&data_path)?;
    let u = fcop_core::inference::rank_transform(&data)?;

    // Shared empirical dependence matrices, computed once for all models.
    let empirical = fcop_core::simulation::dependence_matrices(&u, 6)?;

    ensure_out_dir(&out)?;
    let mut delta_rows = Vec::new();
    let mut first_model: Option<FactorCopulaModel> = None;
    for (idx, fpath) in fits.iter().enumerate() {
        let report = formats::read_fit_report(fpath)?;
        let model = FactorCopulaModel::new(
            report.correlation,
            report.factor_spec()?,
            locations.clone(),
        )?;
        let sim = sample_replicates(
            &model,
            draws,
            fcop_core::simulation::derive_seed(seed, 17 + idx as u64),
        );
        let u_model = to_uniform_scale(&model, &sim)?;
        let mats = fcop_core::simulation::dependence_matrices(&u_model, 6)?;
        let delta = fcop_core::tail::delta_metrics(
            (&empirical.0, &empirical.1, &empirical.2),
            (&mats.0, &mats.1, &mats.2),
        )?;
        delta_rows.push(formats::DeltaRow {
            model: fpath.display().to_string(),
            log_likelihood: report.log_likelihood,
            converged: report.converged,
            delta,
        });
        if first_model.is_none() {
            first_model = Some(model);
        }
    }
    formats::write_json(&out.join("delta.json"), &delta_rows)?;

    // Tail report for the requested pair of the first model.
    let pair_idx = parse_list(&pair_text, "pair index")?;
    if pair_idx.len() != 2 {
        return Err(CliError::Config("--pair needs two indices".into()));
    }
    let (j1, j2) = (pair_idx[0] as usize, pair_idx[1] as usize);
    let model = first_model.expect("at least one fit");
    let pair = model.pair(j1, j2)?;
    let q_grid: Vec<f64> = match &q_grid_text {
        Some(t) => parse_list(t, "q level")?,
        None => vec![0.5, 0.25, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001],
    };
    let mut rng = fcop_core::simulation::seeded_rng(fcop_core::simulation::derive_seed(seed, 5));
    let report = tail_report(&pair, &q_grid, draws, &mut rng)?;
    formats::write_json(&out.join("tail_report.json"), &report)?;
    if q_grid_text.is_some() {
        formats::write_qgrid_csv(
            &out.join("qgrid.csv"),
            &report.q_grid,
            &report.lambda_lower_q,
            &report.lambda_upper_q,
            &report.asymmetry_q,
        )?;
    }
    let _ = lambda_q(&pair, 0.01, Tail::Lower); // warm check that the pair is usable
    formats::write_json(&out.join("provenance.json"), &Provenance::new("diagnose", Some(seed), None))?;
    eprintln!("wrote delta.json and tail_report.json to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// study
// ---------------------------------------------------------------------------

#[derive(Args)]
struct StudyArgs {
    /// Study design JSON.
    #[arg(long)]
    design: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_study(args: StudyArgs, threads: usize) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.design)
        .map_err(|e| CliError::Config(format!("cannot read design {}: {e}", args.design.display())))?;
    let design: StudyDesign = serde_json::from_str(&text)?;
    design.validate()?;
    let out = args.out.unwrap_or_else(|| PathBuf::from("."));
    ensure_out_dir(&out)?;

    let summary = run_bias_sd_study_parallel(&design, threads)?;
    formats::write_study_outputs(&out, &design, &summary)?;
    formats::write_json(
        &out.join("provenance.json"),
        &Provenance::new("study", Some(design.seed), None),
    )?;
    eprintln!(
        "study: {} repetitions ({} failed), bias {:?}",
        design.repetitions, summary.failed_repetitions, summary.bias
    );
    if summary.failed_repetitions * 10 > design.repetitions {
        return Err(CliError::Numeric(format!(
            "{} of {} repetitions failed",
            summary.failed_repetitions, design.repetitions
        )));
    }
    Ok(())
}
