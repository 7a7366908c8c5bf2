//! Command-line interface. Exit codes: 0 success, 1 run failure or bundle
//! findings, 2 usage or configuration error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bundle::validate_bundle;
use crate::config::Mode;
use crate::engine::{Engine, EngineError};
use crate::eval::{write_bench_outputs, MetricsReport};
use crate::image::ImageRef;
use crate::trace::{read_trace_log, write_trace_log, EvidenceOutcome, Pipeline, TraceRecord};

#[derive(Debug, Parser)]
#[command(name = "compliance-agent", version, about = "Policy-driven visual compliance verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Verify one image and print the assessment.
    Verify {
        image: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run a benchmark over a manifest and print the metrics row.
    Bench {
        /// Manifest path; defaults to the one named in the config.
        manifest: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Pretty-print a stored trace log.
    Replay { trace: PathBuf },
    /// Check a replay bundle for missing or inconsistent entries.
    ValidateBundle { root: PathBuf },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "replay", value_parser = parse_mode)]
    pub mode: Mode,
    #[arg(long, default_value = "agentic", value_parser = parse_pipeline)]
    pub pipeline: Pipeline,
    /// Tool or category to disable; repeatable.
    #[arg(long = "disable", num_args = 1..)]
    pub disable: Vec<String>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Directory for traces and reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn parse_pipeline(s: &str) -> Result<Pipeline, String> {
    s.parse()
}

fn build_engine(args: &RunArgs) -> Result<Engine, EngineError> {
    let mut engine = Engine::from_path(&args.config, args.mode)?;
    engine.config().validate(args.mode, args.pipeline)?;
    engine.disable(&args.disable)?;
    if let Some(n) = args.max_steps {
        engine.set_max_steps(n)?;
    }
    if let Some(n) = args.workers {
        engine.set_workers(n);
    }
    Ok(engine)
}

fn report_error(err: &mut dyn Write, e: &EngineError) -> i32 {
    let _ = writeln!(err, "error: {e}");
    e.exit_code()
}

/// Human-readable verification result.
pub fn render_verify(trace: &TraceRecord) -> String {
    let mut out = String::new();
    if let Some(a) = &trace.assessment {
        out.push_str(&serde_json::to_string_pretty(a).expect("assessment serializes"));
        out.push('\n');
    }
    if let Some(r) = &trace.route {
        out.push_str(&format!("route: Cluster {}\n", r.cluster));
    }
    let path = if trace.trajectory.is_empty() { "(none)".to_string() } else { trace.trajectory.join(" -> ") };
    out.push_str(&format!("trajectory: {path}\n"));
    if trace.truncated {
        out.push_str("truncated: step limit reached before the planner concluded\n");
    }
    out
}

fn cmd_verify(image: &Path, run: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let engine = match build_engine(run) {
        Ok(e) => e,
        Err(e) => return report_error(err, &e),
    };
    if !image.is_file() {
        let _ = writeln!(err, "error: image {} does not exist", image.display());
        return 2;
    }
    let image = ImageRef::from_path(image);
    let (trace, code) = match engine.verify(run.pipeline, &image) {
        Ok(t) => (t, 0),
        Err(EngineError::Run(t)) => {
            let _ = writeln!(err, "error: {}", EngineError::Run(t.clone()));
            (*t, 1)
        }
        Err(e) => return report_error(err, &e),
    };
    if let Some(dir) = &run.out {
        let path = dir.join("trace.jsonl");
        let written = std::fs::create_dir_all(dir)
            .map_err(|e| e.to_string())
            .and_then(|_| write_trace_log(&path, std::slice::from_ref(&trace)).map_err(|e| e.to_string()));
        if let Err(e) = written {
            let _ = writeln!(err, "error: cannot write trace: {e}");
            return 2;
        }
    }
    if code == 0 {
        let _ = out.write_all(render_verify(&trace).as_bytes());
    }
    code
}

fn cmd_bench(manifest: Option<&Path>, run: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let engine = match build_engine(run) {
        Ok(e) => e,
        Err(e) => return report_error(err, &e),
    };
    let samples = match engine.load_samples(manifest) {
        Ok(s) => s,
        Err(e) => return report_error(err, &e),
    };
    let result = match engine.bench(run.pipeline, &samples) {
        Ok(r) => r,
        Err(e) => return report_error(err, &e),
    };
    if let Some(dir) = &run.out {
        if let Err(e) = write_bench_outputs(dir, &result) {
            let _ = writeln!(err, "error: {e}");
            return 2;
        }
    }
    let r = &result.report;
    let _ = writeln!(out, "{}", MetricsReport::TABLE_HEADER);
    let _ = writeln!(out, "{}", r.table_row());
    let c = &r.counts;
    let _ = writeln!(out, "tp={} fp={} fn={} tn={} failures={}", c.tp, c.fp, c.fn_, c.tn, r.failures);
    if !r.ablation.is_empty() {
        let _ = writeln!(out, "ablation: disabled {}", r.ablation.join(", "));
    }
    0
}

fn summarize_outcome(o: &EvidenceOutcome) -> Vec<String> {
    match o {
        EvidenceOutcome::Error(e) => vec![format!("error: {}: {}", e.kind, e.message)],
        EvidenceOutcome::Output(o) => {
            let mut lines = Vec::new();
            if let Some(s) = &o.summary {
                lines.push(format!("summary: {s}"));
            }
            if !o.detections.is_empty() {
                let d: Vec<_> = o.detections.iter().map(|d| format!("{} ({:.2})", d.label, d.score)).collect();
                lines.push(format!("detections: {}", d.join(", ")));
            }
            if !o.moderation_labels.is_empty() {
                let m: Vec<_> = o.moderation_labels.iter().map(|m| format!("{} ({:.2})", m.label, m.score)).collect();
                lines.push(format!("moderation: {}", m.join(", ")));
            }
            for (k, v) in &o.extra {
                lines.push(format!("{k}: {v}"));
            }
            lines
        }
    }
}

/// Audit listing of one trace.
pub fn render_trace(t: &TraceRecord) -> String {
    let mut out = format!("== {} ({} pipeline, policy {}) ==\n", t.image_id, t.pipeline, t.policy_id);
    if t.truncated {
        out.push_str("TRUNCATED: step limit reached before the planner concluded\n");
    }
    if let Some(r) = &t.route {
        out.push_str(&format!("route: Cluster {}: {}\n", r.cluster, r.reasoning));
    }
    for s in &t.steps {
        let e = &s.evidence;
        let args = serde_json::Value::Object(e.args.clone());
        out.push_str(&format!("step {}: {} {}\n", e.step_index + 1, e.tool_name, args));
        for line in summarize_outcome(&e.outcome) {
            out.push_str(&format!("    {line}\n"));
        }
    }
    match &t.assessment {
        Some(a) => {
            out.push_str(&format!("assessment: {} / {}\n", a.rating, a.category.code()));
            out.push_str(&format!("rationale: {}\n", a.rationale));
        }
        None => out.push_str("assessment: none\n"),
    }
    if let Some(e) = &t.error {
        out.push_str(&format!("error: {e}\n"));
    }
    out
}

fn cmd_replay(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match read_trace_log(path) {
        Ok(records) => {
            for (i, t) in records.iter().enumerate() {
                if i > 0 {
                    let _ = writeln!(out);
                }
                let _ = out.write_all(render_trace(t).as_bytes());
            }
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn cmd_validate_bundle(root: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    if !root.is_dir() {
        let _ = writeln!(err, "error: bundle root {} is not a directory", root.display());
        return 2;
    }
    let findings = validate_bundle(root);
    if findings.is_empty() {
        let _ = writeln!(out, "bundle OK");
        return 0;
    }
    for f in &findings {
        let _ = writeln!(out, "{f}");
    }
    let _ = writeln!(out, "{} finding(s)", findings.len());
    1
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 { out.write_all(rendered.as_bytes()) } else { err.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    match &cli.command {
        Command::Verify { image, run } => cmd_verify(image, run, out, err),
        Command::Bench { manifest, run } => cmd_bench(manifest.as_deref(), run, out, err),
        Command::Replay { trace } => cmd_replay(trace, out, err),
        Command::ValidateBundle { root } => cmd_validate_bundle(root, out, err),
    }
}
