//! Benchmark manifests, metrics, trajectory analysis and the benchmark runner.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::image::ImageRef;
use crate::policy::CategoryLabel;
use crate::trace::{write_trace_log, Pipeline, TraceLogError, TraceRecord};
use crate::verifier::{Assessment, Rating};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ImageRef,
    pub label: Rating,
    pub category: Option<CategoryLabel>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    id: String,
    image: String,
    label: String,
    #[serde(default)]
    category: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed { path: String, line: usize, message: String },
    #[error("{path}:{line}: duplicate sample id {id:?} (first seen on line {first})")]
    DuplicateId { path: String, line: usize, id: String, first: usize },
}

/// Loads a JSONL manifest. Relative image paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<Sample>, ManifestError> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io { path: p.clone(), source })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, &base, &p)
}

pub fn parse_manifest(text: &str, base: &Path, origin: &str) -> Result<Vec<Sample>, ManifestError> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut samples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| ManifestError::Malformed { path: origin.to_string(), line, message };
        let m: ManifestLine = serde_json::from_str(raw).map_err(|e| malformed(e.to_string()))?;
        if m.id.trim().is_empty() {
            return Err(malformed("empty sample id".into()));
        }
        if let Some(&first) = seen.get(&m.id) {
            return Err(ManifestError::DuplicateId { path: origin.to_string(), line, id: m.id, first });
        }
        seen.insert(m.id.clone(), line);
        let label: Rating = m.label.parse().map_err(|e| malformed(format!("{e}")))?;
        let category = m
            .category
            .filter(|c| !c.trim().is_empty())
            .map(|c| CategoryLabel::from_code_loose(&c));
        let location = if m.image.contains("://") || Path::new(&m.image).is_absolute() {
            m.image.clone()
        } else {
            base.join(&m.image).display().to_string()
        };
        let image = ImageRef::new(m.id.clone(), location);
        samples.push(Sample { id: m.id, image, label, category });
    }
    Ok(samples)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, truth: Rating, predicted: Rating) {
        match (truth, predicted) {
            (Rating::Unsafe, Rating::Unsafe) => self.tp += 1,
            (Rating::Safe, Rating::Unsafe) => self.fp += 1,
            (Rating::Unsafe, Rating::Safe) => self.fn_ += 1,
            (Rating::Safe, Rating::Safe) => self.tn += 1,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryBreakdown {
    pub total: usize,
    /// Samples whose predicted rating matches the ground truth.
    pub correct: usize,
    pub predicted_unsafe: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<Pipeline>,
    #[serde(default)]
    pub ablation: Vec<String>,
    pub samples: usize,
    pub counts: ConfusionCounts,
    pub unsafe_precision: f64,
    pub unsafe_recall: f64,
    pub unsafe_f1: f64,
    pub safe_f1: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Keyed by ground-truth category code, `NA` when the sample has none.
    pub per_category: BTreeMap<String, CategoryBreakdown>,
    /// Samples without a usable prediction; scored as Safe/NA.
    pub failures: usize,
    #[serde(default)]
    pub failed_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distinct_trajectories: Option<usize>,
}

impl MetricsReport {
    pub fn from_counts(counts: ConfusionCounts) -> Self {
        let unsafe_precision = ratio(counts.tp, counts.tp + counts.fp);
        let unsafe_recall = ratio(counts.tp, counts.tp + counts.fn_);
        let unsafe_f1 = f1_from(unsafe_precision, unsafe_recall);
        let safe_f1 = f1_from(ratio(counts.tn, counts.tn + counts.fn_), ratio(counts.tn, counts.tn + counts.fp));
        MetricsReport {
            pipeline: None,
            ablation: Vec::new(),
            samples: counts.total(),
            counts,
            unsafe_precision,
            unsafe_recall,
            unsafe_f1,
            safe_f1,
            accuracy: ratio(counts.tp + counts.tn, counts.total()),
            macro_f1: (unsafe_f1 + safe_f1) / 2.0,
            per_category: BTreeMap::new(),
            failures: 0,
            failed_ids: Vec::new(),
            distinct_trajectories: None,
        }
    }

    pub const TABLE_HEADER: &'static str = "Pipeline     Unsafe F1  Unsafe Prec.  Unsafe Recall  Acc.   Macro F1";

    /// One table row; metrics at 2 decimals.
    pub fn table_row(&self) -> String {
        let name = self.pipeline.map(Pipeline::as_str).unwrap_or("-");
        format!(
            "{name:<12} {:<10.2} {:<13.2} {:<14.2} {:<6.2} {:.2}",
            self.unsafe_f1, self.unsafe_precision, self.unsafe_recall, self.accuracy, self.macro_f1
        )
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", Self::TABLE_HEADER);
        let _ = writeln!(out, "{}", self.table_row());
        out.push('\n');
        let c = &self.counts;
        let _ = writeln!(out, "samples: {}  tp={} fp={} fn={} tn={}", self.samples, c.tp, c.fp, c.fn_, c.tn);
        let _ = writeln!(out, "failures: {}", self.failures);
        if !self.ablation.is_empty() {
            let _ = writeln!(out, "ablation: disabled {}", self.ablation.join(", "));
        }
        if let Some(d) = self.distinct_trajectories {
            let _ = writeln!(out, "distinct trajectories: {d}");
        }
        if !self.per_category.is_empty() {
            out.push_str("\ncategory  total  correct  predicted_unsafe\n");
            for (k, b) in &self.per_category {
                let _ = writeln!(out, "{k:<9} {:<6} {:<8} {}", b.total, b.correct, b.predicted_unsafe);
            }
        }
        out
    }
}

/// Scores predictions against ground truth with Unsafe as the positive
/// class. Samples without a prediction count as Safe and as failures.
pub fn score(preds: &BTreeMap<String, Assessment>, truth: &[Sample]) -> MetricsReport {
    let mut counts = ConfusionCounts::default();
    let mut per_category: BTreeMap<String, CategoryBreakdown> = BTreeMap::new();
    let mut failed_ids = Vec::new();
    for s in truth {
        let predicted = match preds.get(&s.id) {
            Some(a) => a.rating,
            None => {
                failed_ids.push(s.id.clone());
                Rating::Safe
            }
        };
        counts.record(s.label, predicted);
        let key = s.category.as_ref().map(|c| c.code().to_string()).unwrap_or_else(|| "NA".into());
        let entry = per_category.entry(key).or_default();
        entry.total += 1;
        entry.correct += usize::from(predicted == s.label);
        entry.predicted_unsafe += usize::from(predicted == Rating::Unsafe);
    }
    failed_ids.sort();
    let mut report = MetricsReport::from_counts(counts);
    report.per_category = per_category;
    report.failures = failed_ids.len();
    report.failed_ids = failed_ids;
    report
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrajectoryStats {
    pub distinct: usize,
    pub histogram: BTreeMap<Vec<String>, usize>,
}

/// Counts distinct ordered tool-name sequences.
pub fn count_trajectories(traces: &[TraceRecord]) -> TrajectoryStats {
    let mut histogram: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    for t in traces {
        *histogram.entry(t.trajectory.clone()).or_default() += 1;
    }
    TrajectoryStats { distinct: histogram.len(), histogram }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub pipeline: Pipeline,
    pub workers: usize,
    pub ablation: Vec<String>,
    /// Zero wall-clock fields so output is reproducible.
    pub strip_timings: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { pipeline: Pipeline::Agentic, workers: 4, ablation: Vec::new(), strip_timings: false }
    }
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub report: MetricsReport,
    /// One per sample, sorted by image id.
    pub traces: Vec<TraceRecord>,
}

/// Verifies every sample with `runner` on a bounded worker pool and scores
/// the results. A trace without an assessment is a failed run.
pub fn run_benchmark<F>(samples: &[Sample], runner: F, opts: &BenchOptions) -> BenchResult
where
    F: Fn(&Sample) -> TraceRecord + Sync,
{
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<TraceRecord>> = Mutex::new(Vec::with_capacity(samples.len()));
    let workers = opts.workers.clamp(1, samples.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(sample) = samples.get(i) else { break };
                let mut trace = runner(sample);
                trace.image_id = sample.id.clone();
                if opts.strip_timings {
                    trace.strip_timings();
                }
                results.lock().expect("benchmark results lock").push(trace);
            });
        }
    });
    let mut traces = results.into_inner().expect("benchmark results lock");
    traces.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let preds: BTreeMap<String, Assessment> = traces
        .iter()
        .filter_map(|t| t.assessment.clone().map(|a| (t.image_id.clone(), a)))
        .collect();
    let mut report = score(&preds, samples);
    report.pipeline = Some(opts.pipeline);
    report.ablation = opts.ablation.clone();
    report.distinct_trajectories = Some(count_trajectories(&traces).distinct);
    BenchResult { report, traces }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchWriteError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Trace(#[from] TraceLogError),
}

#[derive(Debug, Clone)]
pub struct BenchOutputs {
    pub report_json: PathBuf,
    pub report_txt: PathBuf,
    pub traces: PathBuf,
}

/// Writes `report.json`, `report.txt` and `traces.jsonl` into `dir`.
pub fn write_bench_outputs(dir: &Path, result: &BenchResult) -> Result<BenchOutputs, BenchWriteError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| BenchWriteError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let outputs = BenchOutputs {
        report_json: dir.join("report.json"),
        report_txt: dir.join("report.txt"),
        traces: dir.join("traces.jsonl"),
    };
    let json = serde_json::to_string_pretty(&result.report).expect("report serializes") + "\n";
    std::fs::write(&outputs.report_json, json).map_err(io(&outputs.report_json))?;
    std::fs::write(&outputs.report_txt, result.report.render_text()).map_err(io(&outputs.report_txt))?;
    write_trace_log(&outputs.traces, &result.traces)?;
    Ok(outputs)
}

/// Ids that appear in both lists exactly once, in either order.
pub fn ids_match(samples: &[Sample], traces: &[TraceRecord]) -> bool {
    let a: HashSet<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    let b: BTreeSet<&str> = traces.iter().map(|t| t.image_id.as_str()).collect();
    samples.len() == traces.len() && a.len() == b.len() && b.iter().all(|id| a.contains(id))
}
