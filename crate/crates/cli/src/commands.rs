//! The pipeline steps behind each subcommand. Each returns its output as
//! data so tests can call them without spawning a process.

use std::path::Path;

use itk_core::corpus::{compute_stats, deduplicate, load_clean_csv, load_csv, write_clean_csv, CorpusStats, Label, Origin};
use itk_core::linear::{Prediction, TrainLog};
use itk_core::metrics::{confusion, MetricsReport, ReportFormat};
use itk_core::model::{train_model, ModelSpec, TrainedModel, FORMAT_VERSION};
use itk_core::normalize::{clean_record, CleanRecord, IssueText, NormalizationConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanReport {
    pub origin: Origin,
    /// The run seed; cleaning itself is not random.
    pub seed: u64,
    pub rows_read: usize,
    pub duplicates_removed: usize,
    pub rows_written: usize,
    pub stats: CorpusStats,
    pub normalization: NormalizationConfig,
}

/// Reads a raw CSV, deduplicates it if it is a training split, and gathers
/// statistics. Returns the report and the cleaned records.
fn prepare(input: &Path, origin: Origin, norm: &NormalizationConfig, seed: u64) -> Result<(CleanReport, Vec<CleanRecord>)> {
    norm.validate()?;
    let raw = load_csv(input, origin, None)?;
    let rows_read = raw.len();
    let (data, duplicates_removed) = match origin {
        Origin::Train => deduplicate(raw)?,
        Origin::Test => (raw, 0),
    };
    let mut stats = compute_stats(&data, norm);
    stats.n_duplicates_removed = duplicates_removed;
    let cleaned: Vec<_> = data.records.iter().map(|r| clean_record(r, norm)).collect();
    let report = CleanReport {
        origin,
        seed,
        rows_read,
        duplicates_removed,
        rows_written: cleaned.len(),
        stats,
        normalization: norm.clone(),
    };
    Ok((report, cleaned))
}

pub fn cmd_clean(
    input: &Path,
    output: &Path,
    stats_path: Option<&Path>,
    origin: Origin,
    norm: &NormalizationConfig,
    seed: u64,
) -> Result<CleanReport> {
    let (report, cleaned) = prepare(input, origin, norm, seed)?;
    write_clean_csv(&cleaned, output)?;
    if let Some(p) = stats_path {
        write_json(p, &report)?;
    }
    Ok(report)
}

/// Same as `clean` without writing the cleaned file.
pub fn cmd_stats(input: &Path, origin: Origin, norm: &NormalizationConfig, seed: u64) -> Result<CleanReport> {
    Ok(prepare(input, origin, norm, seed)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model_kind: String,
    pub seed: u64,
    pub n_train: usize,
    pub epoch_loss: Vec<f64>,
    pub skipped_examples: usize,
    pub spec: ModelSpec,
    pub normalization: NormalizationConfig,
}

pub fn cmd_train(
    input: &Path,
    output: &Path,
    log_path: Option<&Path>,
    spec: &ModelSpec,
    norm: &NormalizationConfig,
) -> Result<TrainReport> {
    let records = load_clean_csv(input)?;
    let (model, TrainLog { epoch_loss, skipped_examples }) = train_model(&records, spec, norm)?;
    model.save(output)?;
    let report = TrainReport {
        model_kind: spec.kind().to_string(),
        seed: spec.seed(),
        n_train: records.len(),
        epoch_loss,
        skipped_examples,
        spec: spec.clone(),
        normalization: norm.clone(),
    };
    if let Some(p) = log_path {
        write_json(p, &report)?;
    }
    Ok(report)
}

pub struct EvalOutput {
    pub report: MetricsReport,
    /// Metrics plus the model's identity, as pretty JSON.
    pub json: String,
}

impl EvalOutput {
    pub fn table(&self) -> String {
        self.report.render(ReportFormat::Table)
    }
}

pub fn evaluate(model: &TrainedModel, input: &Path) -> Result<EvalOutput> {
    let records = load_clean_csv(input)?;
    let truth: Vec<u8> = records.iter().map(|r| r.label_code).collect();
    let pred = records
        .iter()
        .map(|r| model.predict_clean(&r.text).map(|p| p.label_code))
        .collect::<itk_core::Result<Vec<u8>>>()?;
    let report = MetricsReport::from_confusion(&confusion(&truth, &pred)?);

    let mut doc = serde_json::to_value(&report)?;
    doc["model"] = serde_json::json!({
        "model_kind": model.kind(),
        "seed": model.spec.seed(),
        "format_version": FORMAT_VERSION,
        "normalization": model.normalization,
    });
    let mut json = serde_json::to_string_pretty(&doc)?;
    json.push('\n');
    Ok(EvalOutput { report, json })
}

pub fn cmd_eval(model_file: &Path, input: &Path, output: Option<&Path>) -> Result<EvalOutput> {
    let model = TrainedModel::load(model_file)?;
    let out = evaluate(&model, input)?;
    if let Some(p) = output {
        std::fs::write(p, &out.json).map_err(|e| CliError::io(p, e))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub bug: f64,
    pub enhancement: f64,
    pub question: f64,
}

/// The response shape shared by `predict` and the HTTP service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub label: Label,
    pub label_code: u8,
    pub scores: Scores,
}

impl From<&Prediction> for PredictResponse {
    fn from(p: &Prediction) -> Self {
        let [bug, enhancement, question] = p.probabilities;
        PredictResponse {
            label: p.label(),
            label_code: p.label_code,
            scores: Scores { bug, enhancement, question },
        }
    }
}

pub fn predict(model: &TrainedModel, issue: &IssueText) -> Result<PredictResponse> {
    Ok(PredictResponse::from(&model.predict_text(issue)?))
}

pub fn cmd_predict(model_file: &Path, issue: &IssueText) -> Result<PredictResponse> {
    predict(&TrainedModel::load(model_file)?, issue)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| CliError::io(path, e))
}
