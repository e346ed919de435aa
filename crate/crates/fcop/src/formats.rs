//! On-disk formats: CSV for all matrices (plot-ready, interoperable) and
//! JSON for structured configuration and results. No binary formats.

use crate::error::{CliError, CliResult};
use fcop_core::factor::FactorSpec;
use fcop_core::inference::{FitFactorForm, FitResult, Procedure};
use fcop_core::numerics::linalg::Matrix;
use fcop_core::prediction::PredictionSurface;
use fcop_core::simulation::{StudyDesign, StudySummary};
use fcop_core::spatial::{CorrelationModel, LocationSet};
use fcop_core::tail::DeltaMetrics;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Model configuration: the JSON schema that `simulate` consumes and
/// provenance embeds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub correlation: CorrelationModel,
    pub factor: FactorSpec,
}

impl ModelConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.correlation.validate()?;
        self.factor.validate()?;
        Ok(())
    }
}

pub fn read_model_config(path: &Path) -> CliResult<ModelConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read model file {}: {e}", path.display())))?;
    let cfg: ModelConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Locations CSV: header `id,x,y[,z…]`, one row per site.
// ---------------------------------------------------------------------------

pub fn read_locations_csv(path: &Path) -> CliResult<LocationSet> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read locations {}: {e}", path.display())))?;
    let headers = reader.headers()?.clone();
    if headers.len() < 2 || headers.get(0) != Some("id") {
        return Err(CliError::Config(format!(
            "locations CSV must start with an `id` column followed by coordinates, got {headers:?}"
        )));
    }
    let mut sites = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        labels.push(record.get(0).unwrap_or_default().to_string());
        let coords: Result<Vec<f64>, _> =
            (1..record.len()).map(|i| record[i].trim().parse::<f64>()).collect();
        sites.push(coords.map_err(|e| CliError::Config(format!("bad coordinate: {e}")))?);
    }
    Ok(LocationSet::with_labels(sites, Some(labels))?)
}

pub fn write_locations_csv(path: &Path, locations: &LocationSet) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = locations.dimension();
    let mut header = vec!["id".to_string()];
    let names = ["x", "y", "z"];
    for d in 0..dim {
        header.push(names.get(d).map_or_else(|| format!("c{d}"), |s| s.to_string()));
    }
    w.write_record(&header)?;
    for i in 0..locations.len() {
        let mut row = vec![match locations.labels() {
            Some(l) => l[i].clone(),
            None => format!("s{i}"),
        }];
        for c in locations.site(i) {
            row.push(format_float(*c));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Replicates CSV: first row is the header of site ids; rows are replicates.
// ---------------------------------------------------------------------------

pub fn write_replicates_csv(path: &Path, header: &[String], data: &Matrix) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for i in 0..data.rows() {
        let row: Vec<String> = data.row(i).iter().map(|v| format_float(*v)).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_replicates_csv(path: &Path) -> CliResult<(Vec<String>, Matrix)> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read data {}: {e}", path.display())))?;
    let header: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    let n = header.len();
    let mut values = Vec::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record?;
        if record.len() != n {
            return Err(CliError::Config(format!(
                "row {} has {} fields, header has {n}",
                rows + 1,
                record.len()
            )));
        }
        for field in record.iter() {
            values.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| CliError::Config(format!("bad value `{field}`: {e}")))?,
            );
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Config("replicates CSV has no data rows".into()));
    }
    Ok((header, Matrix::from_vec(rows, n, values)?))
}

/// Stable float formatting: shortest representation that round-trips.
pub fn format_float(v: f64) -> String {
    let mut s = format!("{v}");
    if s == "-0" {
        s = "0".into();
    }
    s
}

// ---------------------------------------------------------------------------
// Provenance
// ---------------------------------------------------------------------------

/// Written next to every produced artifact. Timestamps live only here, so
/// data outputs stay byte-identical under reruns.
#[derive(Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    pub timestamp_unix: u64,
}

impl Provenance {
    pub fn new(command: &str, seed: Option<u64>, model: Option<ModelConfig>) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            model,
            timestamp_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

// ---------------------------------------------------------------------------
// Fit report JSON
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub procedure: Procedure,
    pub factor_form: FitFactorForm,
    pub correlation: CorrelationModel,
    pub param_names: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub theta_f: Vec<f64>,
    pub theta_sigma: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub theta_g: Vec<f64>,
    pub log_likelihood: f64,
    pub standard_errors: Option<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
}

impl FitReport {
    pub fn from_result(
        procedure: Procedure,
        factor_form: FitFactorForm,
        corr_proto: CorrelationModel,
        r: &FitResult,
    ) -> CliResult<Self> {
        let correlation = corr_proto.with_params(&r.theta_sigma)?;
        Ok(Self {
            procedure,
            factor_form,
            correlation,
            param_names: r.param_names.clone(),
            theta_f: r.theta_f.clone(),
            theta_sigma: r.theta_sigma.clone(),
            theta_g: r.theta_g.clone(),
            log_likelihood: r.log_likelihood,
            standard_errors: r.standard_errors.clone(),
            iterations: r.iterations,
            converged: r.converged,
            gradient_norm: r.gradient_norm,
        })
    }

    /// Reconstruct the fitted factor specification.
    pub fn factor_spec(&self) -> CliResult<FactorSpec> {
        Ok(self.factor_form.spec(&self.theta_f)?)
    }
}

pub fn read_fit_report(path: &Path) -> CliResult<FitReport> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read fit file {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Prediction CSV: x,y,q05,q50,q95,mean per grid node.
// ---------------------------------------------------------------------------

pub fn quantile_column_name(level: f64) -> String {
    let pct = level * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("q{:02}", pct.round() as i64)
    } else {
        format!("q{pct}")
    }
}

pub fn write_prediction_csv(path: &Path, surface: &PredictionSurface) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["x".to_string(), "y".to_string()];
    for &p in &surface.levels {
        header.push(quantile_column_name(p));
    }
    header.push("mean".to_string());
    w.write_record(&header)?;
    for site in &surface.sites {
        let mut row = Vec::with_capacity(header.len());
        row.push(format_float(site.site[0]));
        row.push(format_float(if site.site.len() > 1 { site.site[1] } else { 0.0 }));
        for q in &site.quantiles {
            row.push(format_float(*q));
        }
        row.push(format_float(site.mean));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Study outputs
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct StudySummaryJson {
    pub design: StudyDesign,
    pub parameter_names: Vec<String>,
    pub truth: Vec<f64>,
    pub bias: Vec<f64>,
    pub sd: Option<Vec<f64>>,
    pub successful_repetitions: usize,
    pub failed_repetitions: usize,
}

pub fn write_study_outputs(
    dir: &Path,
    design: &StudyDesign,
    summary: &StudySummary,
) -> CliResult<()> {
    let mut w = csv::Writer::from_path(dir.join("repetitions.csv"))?;
    let mut header = vec!["repetition".to_string()];
    header.extend(summary.parameter_names.iter().cloned());
    header.push("log_likelihood".into());
    header.push("converged".into());
    w.write_record(&header)?;
    for o in &summary.outcomes {
        let mut row = vec![o.index.to_string()];
        row.extend(o.estimates.iter().map(|v| format_float(*v)));
        row.push(format_float(o.log_likelihood));
        row.push(o.converged.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;

    write_json(
        &dir.join("summary.json"),
        &StudySummaryJson {
            design: *design,
            parameter_names: summary.parameter_names.clone(),
            truth: summary.truth.clone(),
            bias: summary.bias.clone(),
            sd: summary.sd.clone(),
            successful_repetitions: summary.outcomes.len(),
            failed_repetitions: summary.failed_repetitions,
        },
    )
}

// ---------------------------------------------------------------------------
// Diagnostics outputs
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct DeltaRow {
    pub model: String,
    pub log_likelihood: f64,
    pub converged: bool,
    pub delta: DeltaMetrics,
}

pub fn write_qgrid_csv(
    path: &Path,
    q: &[f64],
    lambda_lower: &[f64],
    lambda_upper: &[f64],
    asymmetry: &[f64],
) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["q", "lambda_lower_q", "lambda_upper_q", "asymmetry_q"])?;
    for i in 0..q.len() {
        w.write_record([
            format_float(q[i]),
            format_float(lambda_lower[i]),
            format_float(lambda_upper[i]),
            format_float(asymmetry[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}
