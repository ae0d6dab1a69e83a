//! TOML run configuration and backend construction.
//!
//! ```toml
//! seed = 0
//!
//! [sampling]
//! n = 10
//! temperature = 1.0
//!
//! [router]
//! tau_low = 0.4
//! tau_high = 0.9
//!
//! [generator]
//! backend = "mock"
//! mock_scenario = "scenario.json"
//!
//! [entailment]
//! backend = "mock"
//! alias_table = "aliases.json"
//! ```
//!
//! Unknown keys are rejected. Relative paths resolve against the directory
//! holding the config file. Only endpoint URLs and API keys may be
//! overridden from the environment.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::entailment::{Entailment, HttpEntailment, MockEntailment, PhraseTable};
use crate::error::{Error, Result};
use crate::generator::{Generator, HttpGenerator, HttpGeneratorConfig, MockGenerator, MockScenario};
use crate::http::HttpSettings;
use crate::orchestrator::{PipelineConfig, Routing, SimulatedLatency, Timing, Trigger, DEFAULT_MAX_STEPS};
use crate::retriever::{read_corpus, InvertedIndex, DEFAULT_TOP_K, INDEX_FILE_NAME};
use crate::router::{RetrievalMode, Thresholds};

pub const ENV_GENERATOR_URL: &str = "SUGAR_GENERATOR_URL";
pub const ENV_GENERATOR_API_KEY: &str = "SUGAR_GENERATOR_API_KEY";
pub const ENV_ENTAILMENT_URL: &str = "SUGAR_ENTAILMENT_URL";
pub const ENV_ENTAILMENT_API_KEY: &str = "SUGAR_ENTAILMENT_API_KEY";

pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sampling: SamplingSection,
    pub router: RouterSection,
    #[serde(default)]
    pub multistep: MultistepSection,
    #[serde(default)]
    pub retriever: RetrieverSection,
    pub generator: GeneratorSection,
    pub entailment: EntailmentSection,
    #[serde(default)]
    pub runner: RunnerSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    pub n: usize,
    pub temperature: f64,
    pub length_normalized: bool,
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection {
            n: crate::generator::DEFAULT_NUM_SAMPLES,
            temperature: crate::generator::DEFAULT_SAMPLING_TEMPERATURE,
            length_normalized: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingChoice {
    #[default]
    Adaptive,
    Binary,
    NoRetrieval,
    SingleStep,
    MultiStep,
}

impl RoutingChoice {
    pub fn routing(self) -> Routing {
        match self {
            RoutingChoice::Adaptive => Routing::Adaptive,
            RoutingChoice::Binary => Routing::Binary,
            RoutingChoice::NoRetrieval => Routing::Fixed(RetrievalMode::NoRetrieval),
            RoutingChoice::SingleStep => Routing::Fixed(RetrievalMode::SingleStep),
            RoutingChoice::MultiStep => Routing::Fixed(RetrievalMode::MultiStep),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouterSection {
    pub tau_low: f64,
    pub tau_high: f64,
    #[serde(default)]
    pub trigger: Trigger,
    #[serde(default)]
    pub routing: RoutingChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultistepSection {
    pub max_steps: usize,
}

impl Default for MultistepSection {
    fn default() -> Self {
        MultistepSection {
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrieverSection {
    pub k: usize,
    /// Index directory (or the index file itself).
    pub index: Option<PathBuf>,
    /// Corpus JSONL to index in memory at startup, instead of `index`.
    pub corpus: Option<PathBuf>,
}

impl Default for RetrieverSection {
    fn default() -> Self {
        RetrieverSection {
            k: DEFAULT_TOP_K,
            index: None,
            corpus: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    pub backend: Backend,
    #[serde(default)]
    pub mock_scenario: Option<PathBuf>,
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
    #[serde(default)]
    pub max_retries: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntailmentSection {
    pub backend: Backend,
    #[serde(default)]
    pub alias_table: Option<PathBuf>,
    #[serde(default)]
    pub antonym_table: Option<PathBuf>,
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
    #[serde(default)]
    pub max_retries: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingChoice {
    #[default]
    Wall,
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunnerSection {
    pub parallelism: usize,
    pub timing: TimingChoice,
    /// Per-call costs used when `timing = "simulated"`.
    pub simulated: SimulatedLatency,
}

impl Default for RunnerSection {
    fn default() -> Self {
        RunnerSection {
            parallelism: DEFAULT_PARALLELISM,
            timing: TimingChoice::Wall,
            simulated: SimulatedLatency::default(),
        }
    }
}

fn missing(key: &str) -> Error {
    Error::Config(format!("missing required key `{key}`"))
}

impl RunConfig {
    /// Parses and validates a config. Relative paths are resolved against
    /// `base_dir` when given.
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let value: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            let msg = e.inner().to_string();
            // Name the full dotted path of a missing key.
            if let Some(field) = msg
                .strip_prefix("missing field `")
                .and_then(|s| s.split('`').next())
            {
                let full = if path == "." { field.to_owned() } else { format!("{path}.{field}") };
                return missing(&full);
            }
            Error::Config(format!("{path}: {msg}"))
        })?;
        if let Some(dir) = base_dir {
            cfg.resolve_paths(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file not found: {}", path.display())),
            _ => Error::io(format!("reading {}", path.display()), e),
        })?;
        Self::from_toml(&text, path.parent())
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = dir.join(&*path);
                }
            }
        };
        fix(&mut self.retriever.index);
        fix(&mut self.retriever.corpus);
        fix(&mut self.generator.mock_scenario);
        fix(&mut self.entailment.alias_table);
        fix(&mut self.entailment.antonym_table);
    }

    /// Applies environment overrides for endpoint URLs and API keys.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(v) = lookup(ENV_GENERATOR_URL) {
            self.generator.url = Some(v);
        }
        if let Some(v) = lookup(ENV_GENERATOR_API_KEY) {
            self.generator.api_key = Some(v);
        }
        if let Some(v) = lookup(ENV_ENTAILMENT_URL) {
            self.entailment.url = Some(v);
        }
        if let Some(v) = lookup(ENV_ENTAILMENT_API_KEY) {
            self.entailment.api_key = Some(v);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline_config().validate()?;
        if self.retriever.index.is_some() && self.retriever.corpus.is_some() {
            return Err(Error::Config("set at most one of retriever.index and retriever.corpus".into()));
        }
        if self.runner.parallelism == 0 {
            return Err(Error::Config("runner.parallelism must be at least 1".into()));
        }
        match self.generator.backend {
            Backend::Mock if self.generator.mock_scenario.is_none() => {
                return Err(missing("generator.mock_scenario"))
            }
            Backend::Http if self.generator.model.is_none() => return Err(missing("generator.model")),
            _ => {}
        }
        Ok(())
    }

    /// Checks that everything needed to build the backends is present,
    /// including environment-supplied URLs.
    pub fn validate_backends(&self) -> Result<()> {
        self.validate()?;
        if self.generator.backend == Backend::Http && self.generator.url.is_none() {
            return Err(missing("generator.url"));
        }
        if self.entailment.backend == Backend::Http && self.entailment.url.is_none() {
            return Err(missing("entailment.url"));
        }
        Ok(())
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            tau_low: self.router.tau_low,
            tau_high: self.router.tau_high,
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            num_samples: self.sampling.n,
            temperature: self.sampling.temperature,
            length_normalized: self.sampling.length_normalized,
            thresholds: self.thresholds(),
            max_steps: self.multistep.max_steps,
            top_k: self.retriever.k,
            seed: self.seed,
            trigger: self.router.trigger,
            routing: self.router.routing.routing(),
            timing: match self.runner.timing {
                TimingChoice::Wall => Timing::Wall,
                TimingChoice::Simulated => Timing::Simulated(self.runner.simulated),
            },
        }
    }

    pub fn build_generator(&self) -> Result<Box<dyn Generator>> {
        let g = &self.generator;
        Ok(match g.backend {
            Backend::Mock => {
                let path = g.mock_scenario.as_ref().ok_or_else(|| missing("generator.mock_scenario"))?;
                Box::new(MockGenerator::new(MockScenario::from_path(path)?)?)
            }
            Backend::Http => {
                let url = g.url.clone().ok_or_else(|| missing("generator.url"))?;
                let model = g.model.clone().ok_or_else(|| missing("generator.model"))?;
                let mut c = HttpGeneratorConfig::new(url, model);
                if let Some(m) = g.max_tokens {
                    c.max_tokens = m;
                }
                c.http = http_settings(g.api_key.clone(), g.timeout_secs, g.max_retries);
                Box::new(HttpGenerator::new(c)?)
            }
        })
    }

    pub fn build_entailment(&self) -> Result<Box<dyn Entailment>> {
        let e = &self.entailment;
        Ok(match e.backend {
            Backend::Mock => {
                let load = |p: &Option<PathBuf>| -> Result<PhraseTable> {
                    p.as_deref().map_or_else(|| Ok(PhraseTable::default()), PhraseTable::from_path)
                };
                Box::new(MockEntailment::new(&load(&e.alias_table)?, &load(&e.antonym_table)?))
            }
            Backend::Http => {
                let url = e.url.clone().ok_or_else(|| missing("entailment.url"))?;
                Box::new(HttpEntailment::new(
                    url,
                    http_settings(e.api_key.clone(), e.timeout_secs, e.max_retries),
                )?)
            }
        })
    }

    /// Loads the configured index or indexes the configured corpus. `None`
    /// when neither is set.
    pub fn load_index(&self) -> Result<Option<InvertedIndex>> {
        if let Some(path) = &self.retriever.corpus {
            return InvertedIndex::from_documents(read_corpus(path)?).map(Some);
        }
        let Some(path) = &self.retriever.index else {
            return Ok(None);
        };
        let file = if path.is_dir() { path.join(INDEX_FILE_NAME) } else { path.clone() };
        InvertedIndex::load(&file).map(Some)
    }
}

fn http_settings(api_key: Option<String>, timeout_secs: Option<u64>, max_retries: Option<u32>) -> HttpSettings {
    let mut s = HttpSettings {
        api_key,
        ..HttpSettings::default()
    };
    if let Some(t) = timeout_secs {
        s.timeout = Duration::from_secs(t);
    }
    if let Some(r) = max_retries {
        s.max_retries = r;
    }
    s
}
