//! Wires configuration, policy, tools and model clients into runnable
//! pipelines. Shared by the command line and the C interface.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use crate::config::{ConfigError, EngineConfig, Mode};
use crate::eval::{load_manifest, run_benchmark, BenchOptions, BenchResult, ManifestError, Sample};
use crate::image::ImageRef;
use crate::llm::{ChatClient, HttpChatClient, LlmError, ScriptedClient};
use crate::planner::{run_verification, RunConfig};
use crate::policy::{Policy, PolicyError};
use crate::routing::{assess_with_routing, zero_shot_assess, ClusterMap};
use crate::tools::{FixtureInvoker, HttpToolInvoker, ToolError, ToolInvoker, ToolRegistry};
use crate::trace::{Pipeline, TraceRecord};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("tools: {0}")]
    Tool(#[from] ToolError),
    #[error("model client: {0}")]
    Llm(#[from] LlmError),
    #[error("cluster map: {0}")]
    ClusterMap(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    /// The run itself failed; the partial trace is attached.
    #[error("{} run for {} failed: {}", .0.pipeline, .0.image_id, .0.error.as_deref().unwrap_or("unknown error"))]
    Run(Box<TraceRecord>),
}

impl EngineError {
    /// Process exit code: 1 for run failures, 2 for setup problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            EngineError::Run(_) => 1,
            _ => 2,
        }
    }
}

pub struct Engine {
    config: EngineConfig,
    mode: Mode,
    policy: Arc<Policy>,
    base_registry: ToolRegistry,
    registry: ToolRegistry,
    clusters: ClusterMap,
    run: RunConfig,
    workers: usize,
    live_client: Option<Arc<dyn ChatClient>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("mode", &self.mode)
            .field("policy", &self.policy.id)
            .field("registry", &self.registry)
            .finish()
    }
}

impl Engine {
    pub fn from_path(config_path: &Path, mode: Mode) -> Result<Engine, EngineError> {
        Engine::new(EngineConfig::load(config_path)?, mode)
    }

    pub fn new(config: EngineConfig, mode: Mode) -> Result<Engine, EngineError> {
        if !config.policy.exists() {
            return Err(ConfigError::MissingFile { what: "policy file", path: config.policy.display().to_string() }.into());
        }
        let policy = Arc::new(Policy::load(&config.policy)?);
        let invoker: Arc<dyn ToolInvoker> = match mode {
            Mode::Replay => {
                let root = config
                    .fixtures
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("replay mode needs a fixtures directory".into()))?;
                Arc::new(FixtureInvoker::new(root)?)
            }
            Mode::Live => Arc::new(HttpToolInvoker::new(config.remote_tools.clone())?),
        };
        let base_registry = ToolRegistry::with_bundled(invoker);
        let clusters = match &config.cluster_map {
            Some(p) => ClusterMap::load(p).map_err(EngineError::ClusterMap)?,
            None => ClusterMap::default(),
        };
        clusters.validate(&base_registry).map_err(EngineError::ClusterMap)?;
        let live_client: Option<Arc<dyn ChatClient>> = match mode {
            Mode::Replay => None,
            Mode::Live => {
                let provider = config
                    .provider
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("live mode needs a [provider] section".into()))?;
                Some(Arc::new(HttpChatClient::new(provider.http_config())?))
            }
        };
        let run = config.run_config();
        run.validate().map_err(ConfigError::Invalid)?;
        let mut engine = Engine {
            workers: config.run.workers.max(1),
            registry: base_registry.clone(),
            base_registry,
            config,
            mode,
            policy,
            clusters,
            run,
            live_client,
        };
        let disabled = engine.config.ablation.disabled.clone();
        engine.set_disabled(&disabled)?;
        Ok(engine)
    }

    /// Replaces the disabled set (tool names or categories).
    pub fn set_disabled<S: AsRef<str>>(&mut self, targets: &[S]) -> Result<(), EngineError> {
        self.registry = self.base_registry.with_disabled(targets)?;
        Ok(())
    }

    /// Adds to the disabled set.
    pub fn disable<S: AsRef<str>>(&mut self, targets: &[S]) -> Result<(), EngineError> {
        self.registry = self.registry.with_disabled(targets)?;
        Ok(())
    }

    pub fn set_max_steps(&mut self, n: usize) -> Result<(), EngineError> {
        let mut run = self.run.clone();
        run.max_steps = n;
        run.validate().map_err(ConfigError::Invalid)?;
        self.run = run;
        Ok(())
    }

    pub fn set_workers(&mut self, n: usize) {
        self.workers = n.max(1);
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn policy(&self) -> &Arc<Policy> {
        &self.policy
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    pub fn run_config(&self) -> &RunConfig {
        &self.run
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn cluster_map(&self) -> &ClusterMap {
        &self.clusters
    }

    /// A model client for `pipeline`. Replay mode loads a fresh script so
    /// every call starts from the first scripted reply.
    pub fn client(&self, pipeline: Pipeline) -> Result<Arc<dyn ChatClient>, EngineError> {
        match self.mode {
            Mode::Live => Ok(self.live_client.clone().expect("live engines carry a client")),
            Mode::Replay => {
                let path = self
                    .config
                    .scripts
                    .get(pipeline)
                    .ok_or_else(|| ConfigError::Invalid(format!("replay mode needs scripts.{pipeline}")))?;
                if !path.exists() {
                    return Err(ConfigError::MissingFile { what: "script", path: path.display().to_string() }.into());
                }
                Ok(Arc::new(ScriptedClient::load(path)?))
            }
        }
    }

    /// Runs one image through `pipeline` with `llm`. Never fails: a failed
    /// run yields a trace with `error` set and no assessment.
    pub fn run_with(&self, pipeline: Pipeline, image: &ImageRef, llm: &dyn ChatClient) -> TraceRecord {
        let started = Instant::now();
        let mut trace = match pipeline {
            Pipeline::Agentic => {
                match run_verification(image, &self.policy, &self.registry, llm, &self.run) {
                    Ok(t) => t,
                    Err(e) => {
                        let mut t = *e.partial;
                        t.error = Some(e.kind.to_string());
                        t
                    }
                }
            }
            Pipeline::Routing => {
                let mut t = TraceRecord::new(&image.id, &self.policy.id, Pipeline::Routing);
                let outcome =
                    assess_with_routing(image, &self.policy, &self.registry, &self.clusters, llm, &self.run);
                let (route, evidence, raw) = match outcome {
                    Ok(o) => {
                        t.assessment = Some(o.assessment);
                        (Some(o.route), o.evidence, o.raw_texts)
                    }
                    Err(e) => {
                        t.error = Some(e.kind.to_string());
                        (e.route, e.evidence, e.raw_texts)
                    }
                };
                for ev in evidence {
                    t.timings.tools_ms += ev.elapsed_ms;
                    let action = route.as_ref().map(|r| format!("Cluster {}", r.cluster)).unwrap_or_default();
                    t.push_step(action, ev);
                }
                t.route = route;
                t.raw_model_texts = raw;
                t
            }
            Pipeline::ZeroShot => {
                let mut t = TraceRecord::new(&image.id, &self.policy.id, Pipeline::ZeroShot);
                match zero_shot_assess(image, &self.policy, llm, &self.run) {
                    Ok((a, raw)) => {
                        t.assessment = Some(a);
                        t.raw_model_texts = raw;
                    }
                    Err(e) => {
                        t.error = Some(e.kind.to_string());
                        t.raw_model_texts = e.raw_texts;
                    }
                }
                t
            }
        };
        trace.timings.total_ms = started.elapsed().as_millis() as u64;
        if let Some(e) = &trace.error {
            log::debug!("{pipeline} run for {} failed: {e}", image.id);
        }
        if self.mode == Mode::Replay {
            trace.strip_timings();
        }
        trace
    }

    /// Verifies a single image.
    pub fn verify(&self, pipeline: Pipeline, image: &ImageRef) -> Result<TraceRecord, EngineError> {
        let llm = self.client(pipeline)?;
        let trace = self.run_with(pipeline, image, llm.as_ref());
        if trace.error.is_some() || trace.assessment.is_none() {
            return Err(EngineError::Run(Box::new(trace)));
        }
        Ok(trace)
    }

    pub fn load_samples(&self, manifest: Option<&Path>) -> Result<Vec<Sample>, EngineError> {
        let path = manifest
            .or(self.config.manifest.as_deref())
            .ok_or_else(|| ConfigError::Invalid("no manifest given and none configured".into()))?;
        Ok(load_manifest(path)?)
    }

    /// Runs a benchmark over `samples`. Failed runs are scored, not raised.
    pub fn bench(&self, pipeline: Pipeline, samples: &[Sample]) -> Result<BenchResult, EngineError> {
        let llm = self.client(pipeline)?;
        log::debug!("{pipeline} benchmark over {} samples, {} workers", samples.len(), self.workers);
        let opts = BenchOptions {
            pipeline,
            workers: self.workers,
            ablation: self.registry.disabled(),
            strip_timings: self.mode == Mode::Replay,
        };
        Ok(run_benchmark(samples, |s| self.run_with(pipeline, &s.image, llm.as_ref()), &opts))
    }
}
