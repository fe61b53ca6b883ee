//! Run configuration: a single TOML file plus flag overrides. Credentials
//! come only from environment variables, never from flags or the config,
//! so keys stay out of shell history and artifacts.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use pagerag_core::{
    ChatBackend, ChatConfig, Corpus, EmbedderConfig, GenerationError, GraphSearchParams,
    IngestFilters, IngestReport, MockChat, MockRule, PromptTemplate, RemoteChat, TokenScheme,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const DEFAULT_API_KEY_ENV: &str = "PAGERAG_API_KEY";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Label for the corpus; derived from the source name when absent.
    pub corpus_id: Option<String>,
    /// Single seed for every stochastic choice in local backends.
    pub seed: u64,
    /// Accuracy cutoffs, strictly ascending.
    pub k_values: Vec<usize>,
    pub token_scheme: TokenScheme,
    /// Worker thread cap; defaults to the number of available processors.
    pub jobs: Option<usize>,
    pub out_dir: PathBuf,
    pub corpus: CorpusSection,
    pub embedder: EmbedderConfig,
    pub graph: GraphSection,
    /// Chat backend for answering and re-ranking.
    pub llm: LlmSection,
    /// Optional separate backend for dataset generation.
    pub llm_dataset: Option<LlmSection>,
    pub dataset: DatasetSection,
    pub templates: TemplatesSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus_id: None,
            seed: 0,
            k_values: vec![1, 3, 5, 10],
            token_scheme: TokenScheme::Whitespace,
            jobs: None,
            out_dir: PathBuf::from("out"),
            corpus: CorpusSection::default(),
            embedder: EmbedderConfig::default(),
            graph: GraphSection::default(),
            llm: LlmSection::default(),
            llm_dataset: None,
            dataset: DatasetSection::default(),
            templates: TemplatesSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub source: PathBuf,
    pub first_page: Option<u32>,
    pub last_page: Option<u32>,
    pub exclude: BTreeSet<u32>,
    pub page_offset: i64,
}

impl CorpusSection {
    pub fn filters(&self) -> IngestFilters {
        IngestFilters {
            first_page: self.first_page,
            last_page: self.last_page,
            exclude: self.exclude.clone(),
            page_offset: self.page_offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorKind {
    RuleBased,
    Llm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub extractor: ExtractorKind,
    pub top_entities: usize,
    pub hops: usize,
    pub token_budget: usize,
    pub include_document_ids: bool,
}

impl Default for GraphSection {
    fn default() -> Self {
        let params = GraphSearchParams::default();
        GraphSection {
            extractor: ExtractorKind::RuleBased,
            top_entities: params.top_entities,
            hops: params.hops,
            token_budget: params.token_budget,
            include_document_ids: params.include_document_ids,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LlmBackendKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub backend: LlmBackendKind,
    pub model_id: String,
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub system_prompt: Option<String>,
    pub max_in_flight: usize,
    pub mock: Option<MockSection>,
}

impl Default for LlmSection {
    fn default() -> Self {
        LlmSection {
            backend: LlmBackendKind::Mock,
            model_id: "mock".to_owned(),
            endpoint: None,
            api_key_env: DEFAULT_API_KEY_ENV.to_owned(),
            temperature: 0.0,
            max_output_tokens: 512,
            system_prompt: None,
            max_in_flight: 4,
            mock: Some(MockSection {
                rule: "echo-first-page-sentence".to_owned(),
                text: None,
                path: None,
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockSection {
    /// One of: echo-first-page-sentence, qa-from-page, fixed, scripted.
    pub rule: String,
    /// Completion text for the `fixed` rule.
    pub text: Option<String>,
    /// JSON map file (prompt substring -> completion) for `scripted`.
    pub path: Option<PathBuf>,
}

impl Default for MockSection {
    fn default() -> Self {
        MockSection {
            rule: "echo-first-page-sentence".to_owned(),
            text: None,
            path: None,
        }
    }
}

impl LlmSection {
    pub fn chat_config(&self) -> ChatConfig {
        let defaults = ChatConfig::default();
        ChatConfig {
            model_id: self.model_id.clone(),
            system_prompt: self.system_prompt.clone().unwrap_or(defaults.system_prompt),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
        }
    }

    pub fn build_backend(&self) -> CliResult<Box<dyn ChatBackend>> {
        match self.backend {
            LlmBackendKind::Remote => {
                let endpoint = self.endpoint.clone().ok_or_else(|| {
                    CliError::config("llm.backend = \"remote\" requires llm.endpoint")
                })?;
                let chat = RemoteChat::new(endpoint, &self.api_key_env)
                    .map_err(|e| match e {
                        GenerationError::MissingApiKey(var) => CliError::Config(format!(
                            "environment variable {var} is not set (required for the remote llm backend)"
                        )),
                        other => CliError::config(other),
                    })?
                    .with_max_in_flight(self.max_in_flight);
                Ok(Box::new(chat))
            }
            LlmBackendKind::Mock => {
                let section = self.mock.clone().unwrap_or_default();
                let rule = match section.rule.as_str() {
                    "echo-first-page-sentence" => MockRule::EchoFirstPageSentence,
                    "qa-from-page" => MockRule::QaFromPage,
                    "fixed" => MockRule::Fixed(section.text.ok_or_else(|| {
                        CliError::config("mock rule \"fixed\" requires llm.mock.text")
                    })?),
                    "scripted" => {
                        let path = section.path.ok_or_else(|| {
                            CliError::config("mock rule \"scripted\" requires llm.mock.path")
                        })?;
                        let text = fs::read_to_string(&path).map_err(|e| {
                            CliError::Config(format!("scripted mock {}: {e}", path.display()))
                        })?;
                        let table: BTreeMap<String, String> =
                            serde_json::from_str(&text).map_err(|e| {
                                CliError::Config(format!("scripted mock {}: {e}", path.display()))
                            })?;
                        MockRule::Scripted(table)
                    }
                    other => {
                        return Err(CliError::Config(format!("unknown mock rule \"{other}\"")))
                    }
                };
                Ok(Box::new(MockChat::new(rule)))
            }
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Gold dataset path; defaults to `<out_dir>/dataset.json`.
    pub path: Option<PathBuf>,
    /// Front/back-matter range cut applied by gen-dataset.
    pub first_page: Option<u32>,
    pub last_page: Option<u32>,
    pub exclude: BTreeSet<u32>,
}

impl DatasetSection {
    pub fn filters(&self) -> IngestFilters {
        IngestFilters {
            first_page: self.first_page,
            last_page: self.last_page,
            exclude: BTreeSet::new(),
            page_offset: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplatesSection {
    pub answer: Option<PathBuf>,
    pub qa: Option<PathBuf>,
    pub rerank: Option<PathBuf>,
    pub extraction: Option<PathBuf>,
}

fn load_template(
    path: &Option<PathBuf>,
    default: PromptTemplate,
    required: &[&str],
) -> CliResult<PromptTemplate> {
    match path {
        None => Ok(default),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("template {}: {e}", path.display())))?;
            PromptTemplate::new(text, required)
                .map_err(|e| CliError::Config(format!("template {}: {e}", path.display())))
        }
    }
}

impl TemplatesSection {
    pub fn answer(&self) -> CliResult<PromptTemplate> {
        load_template(
            &self.answer,
            PromptTemplate::answer_default(),
            &["question", "context"],
        )
    }

    pub fn qa(&self) -> CliResult<PromptTemplate> {
        load_template(&self.qa, PromptTemplate::qa_default(), &["page", "content"])
    }

    pub fn rerank(&self) -> CliResult<PromptTemplate> {
        load_template(
            &self.rerank,
            PromptTemplate::rerank_default(),
            &["question", "candidates"],
        )
    }

    pub fn extraction(&self) -> CliResult<PromptTemplate> {
        load_template(
            &self.extraction,
            PromptTemplate::extraction_default(),
            &["page", "content"],
        )
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        let ks = &self.k_values;
        if ks.is_empty() || ks[0] == 0 || ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Config(format!(
                "k_values must be non-empty, positive, strictly ascending; got {ks:?}"
            )));
        }
        Ok(())
    }

    pub fn max_k(&self) -> usize {
        *self.k_values.last().expect("validated non-empty")
    }

    /// Hash of the semantic configuration. The output directory and worker
    /// count are excluded: they cannot change results, and reports from
    /// runs differing only in those must stay byte-identical.
    pub fn config_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("out_dir");
            map.remove("jobs");
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    pub fn load_corpus(&self) -> CliResult<(Corpus, IngestReport)> {
        if self.corpus.source.as_os_str().is_empty() {
            return Err(CliError::config("corpus.source is not set"));
        }
        let filters = self.corpus.filters();
        let loaded =
            pagerag_core::load_corpus_as(&self.corpus.source, &filters, self.corpus_id.as_deref())?;
        Ok(loaded)
    }

    pub fn graph_params(&self) -> GraphSearchParams {
        GraphSearchParams {
            top_entities: self.graph.top_entities,
            hops: self.graph.hops,
            token_budget: self.graph.token_budget,
            include_document_ids: self.graph.include_document_ids,
            token_scheme: self.token_scheme,
        }
    }

    /// The chat section used for dataset generation.
    pub fn dataset_llm(&self) -> &LlmSection {
        self.llm_dataset.as_ref().unwrap_or(&self.llm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_config() {
        let config: RunConfig = toml::from_str("").unwrap();
        assert_eq!(config.k_values, vec![1, 3, 5, 10]);
        assert_eq!(config.seed, 0);
        assert_eq!(config.out_dir, PathBuf::from("out"));
        assert!(matches!(config.llm.backend, LlmBackendKind::Mock));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("definitely_not_a_key = 1").unwrap_err();
        assert!(err.to_string().contains("definitely_not_a_key"));
    }

    #[test]
    fn hash_ignores_out_dir_and_jobs() {
        let a: RunConfig = toml::from_str("out_dir = \"x\"\njobs = 2").unwrap();
        let b: RunConfig = toml::from_str("out_dir = \"y\"\njobs = 8").unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        let c: RunConfig = toml::from_str("seed = 9").unwrap();
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn invalid_k_values_fail_validation() {
        let config: RunConfig = toml::from_str("k_values = [3, 1]").unwrap();
        assert!(config.validate().is_err());
        let config: RunConfig = toml::from_str("k_values = [0, 1]").unwrap();
        assert!(config.validate().is_err());
        let config: RunConfig = toml::from_str("k_values = []").unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn fixed_mock_requires_text() {
        let section: LlmSection =
            toml::from_str("backend = \"mock\"\n[mock]\nrule = \"fixed\"").unwrap();
        assert!(section.build_backend().is_err());
        let section: LlmSection =
            toml::from_str("backend = \"mock\"\n[mock]\nrule = \"fixed\"\ntext = \"hi\"").unwrap();
        assert!(section.build_backend().is_ok());
    }

    #[test]
    fn remote_llm_without_key_env_is_a_config_error() {
        let section: LlmSection = toml::from_str(
            "backend = \"remote\"\nendpoint = \"http://localhost:1/v1\"\napi_key_env = \"PAGERAG_DEFINITELY_UNSET\"",
        )
        .unwrap();
        let err = match section.build_backend() {
            Err(e) => e,
            Ok(_) => panic!("expected a config error"),
        };
        assert_eq!(err.exit_code(), 2);
    }
}
