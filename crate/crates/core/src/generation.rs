//! Chat-LLM gateway (remote and mock backends) and context-grounded answer
//! generation.
//!
//! Context pages render as `[Page <id>]` blocks so generated answers can
//! cite pages, and the request records exactly which page ids were placed in
//! the prompt. Temperature defaults to 0 everywhere: a benchmark harness
//! wants reproducibility over variety.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{context_token_count, TokenScheme};
use crate::graph_index::GraphContext;
use crate::remote::{self, RemoteError, RequestGate};

pub const DEFAULT_ANSWER_TEMPLATE: &str = include_str!("../templates/answer.txt");
pub const DEFAULT_QA_TEMPLATE: &str = include_str!("../templates/qa_generation.txt");
pub const DEFAULT_RERANK_TEMPLATE: &str = include_str!("../templates/rerank.txt");
pub const DEFAULT_EXTRACTION_TEMPLATE: &str = include_str!("../templates/extraction.txt");

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("prompt template missing required placeholder {{{0}}}")]
    Template(String),
    #[error("chat request has an empty user prompt")]
    EmptyPrompt,
    #[error("chat backend returned an empty completion")]
    EmptyCompletion,
    #[error("mock backend has no scripted response matching the prompt")]
    UnscriptedPrompt,
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("chat endpoint returned HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("malformed chat response: {0}")]
    MalformedResponse(String),
    #[error("api key environment variable {0} is not set")]
    MissingApiKey(String),
}

impl From<RemoteError> for GenerationError {
    fn from(err: RemoteError) -> Self {
        match err {
            RemoteError::Transport { attempts, message } => {
                GenerationError::Transport { attempts, message }
            }
            RemoteError::Http { status, message } => GenerationError::Http { status, message },
            RemoteError::Malformed(m) => GenerationError::MalformedResponse(m),
            RemoteError::MissingApiKey(v) => GenerationError::MissingApiKey(v),
        }
    }
}

/// A prompt template with `{name}` placeholders, validated at construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>, required: &[&str]) -> Result<Self, GenerationError> {
        let text = text.into();
        for name in required {
            if !text.contains(&format!("{{{name}}}")) {
                return Err(GenerationError::Template((*name).to_owned()));
            }
        }
        Ok(PromptTemplate { text })
    }

    pub fn answer_default() -> Self {
        PromptTemplate::new(DEFAULT_ANSWER_TEMPLATE, &["question", "context"]).expect("default")
    }

    pub fn qa_default() -> Self {
        PromptTemplate::new(DEFAULT_QA_TEMPLATE, &["page", "content"]).expect("default")
    }

    pub fn rerank_default() -> Self {
        PromptTemplate::new(DEFAULT_RERANK_TEMPLATE, &["question", "candidates"]).expect("default")
    }

    pub fn extraction_default() -> Self {
        PromptTemplate::new(DEFAULT_EXTRACTION_TEMPLATE, &["page", "content"]).expect("default")
    }

    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = self.text.clone();
        for (name, value) in vars {
            out = out.replace(&format!("{{{name}}}"), value);
        }
        out
    }
}

/// Model identity and decoding settings shared by every chat call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatConfig {
    pub model_id: String,
    pub system_prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for ChatConfig {
    fn default() -> Self {
        ChatConfig {
            model_id: "mock".to_owned(),
            system_prompt: "You are a tutor who answers strictly from the provided textbook pages."
                .to_owned(),
            temperature: 0.0,
            max_output_tokens: 512,
        }
    }
}

/// One chat call, plus bookkeeping for which context pages were rendered
/// into the prompt and how many tokens they cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(default)]
    pub context_page_ids: BTreeSet<u32>,
    #[serde(default)]
    pub context_token_count: usize,
}

/// A generated answer with its context bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedAnswer {
    pub text: String,
    pub context_page_ids: BTreeSet<u32>,
    pub context_token_count: usize,
}

/// A chat completion backend. Mock implementations must be pure functions
/// of the request.
pub trait ChatBackend: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<String, GenerationError>;
}

/// Send a request through a backend, rejecting empty prompts and empty
/// completions.
pub fn chat(req: &ChatRequest, backend: &dyn ChatBackend) -> Result<String, GenerationError> {
    if req.user_prompt.trim().is_empty() {
        return Err(GenerationError::EmptyPrompt);
    }
    let text = backend.chat(req)?;
    if text.trim().is_empty() {
        return Err(GenerationError::EmptyCompletion);
    }
    Ok(text)
}

/// Deterministic mock rules for offline runs.
#[derive(Debug, Clone, PartialEq)]
pub enum MockRule {
    /// First table entry (in key order) whose key occurs in the user prompt
    /// wins. No match is an error.
    Scripted(BTreeMap<String, String>),
    /// Echo the first sentence of the first `[Page <id>]` block in the
    /// prompt; a fixed fallback when the prompt has no page block.
    EchoFirstPageSentence,
    /// Always the same completion.
    Fixed(String),
    /// Emit `{"Question": s, "Answer": s}` where `s` is the first sentence
    /// of the first `[Page <id>]` block (dataset-generation stand-in).
    QaFromPage,
}

#[derive(Debug, Clone)]
pub struct MockChat {
    rule: MockRule,
}

impl MockChat {
    pub fn new(rule: MockRule) -> Self {
        MockChat { rule }
    }

    pub fn scripted<K: Into<String>, V: Into<String>>(
        pairs: impl IntoIterator<Item = (K, V)>,
    ) -> Self {
        MockChat::new(MockRule::Scripted(
            pairs
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        ))
    }

    pub fn fixed(text: impl Into<String>) -> Self {
        MockChat::new(MockRule::Fixed(text.into()))
    }
}

fn page_block_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // Line-anchored: page blocks start a line; inline provenance markers on
    // entity lines do not count as blocks.
    RE.get_or_init(|| Regex::new(r"(?m)^\[Page (\d+)\][^\n]*\n").expect("valid regex"))
}

fn statement_header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^(?:definition|theorem|lemma|proposition|corollary|axiom|example|remark)\s+\d+(?:\.\d+)*\.?$")
            .expect("valid regex")
    })
}

/// Text of the first `[Page <id>]` block: everything after the marker line
/// up to the next marker or end of text.
pub(crate) fn first_page_block(prompt: &str) -> Option<String> {
    let re = page_block_re();
    let m = re.find(prompt)?;
    let rest = &prompt[m.end()..];
    let end = re.find(rest).map(|n| n.start()).unwrap_or(rest.len());
    Some(rest[..end].trim().to_owned())
}

/// Byte index of the first sentence-ending period: a '.' followed by
/// whitespace or end of text, so decimal statement numbers ("2.1") do not
/// split.
fn sentence_boundary(text: &str) -> Option<usize> {
    let bytes = text.as_bytes();
    (0..bytes.len())
        .find(|&i| bytes[i] == b'.' && bytes.get(i + 1).is_none_or(|c| c.is_ascii_whitespace()))
}

/// First sentence of a block, carrying along a leading numbered-statement
/// header ("Definition 2.1.") so the result is the first contentful
/// sentence.
pub(crate) fn first_sentence(block: &str) -> String {
    let mut out = String::new();
    let mut rest = block.trim();
    loop {
        match sentence_boundary(rest) {
            None => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(rest.trim());
                break;
            }
            Some(i) => {
                let sentence = rest[..=i].trim();
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(sentence);
                rest = rest[i + 1..].trim_start();
                if !statement_header_re().is_match(sentence) || rest.is_empty() {
                    break;
                }
            }
        }
    }
    out.trim().to_owned()
}

impl ChatBackend for MockChat {
    fn chat(&self, req: &ChatRequest) -> Result<String, GenerationError> {
        match &self.rule {
            MockRule::Scripted(table) => table
                .iter()
                .find(|(key, _)| req.user_prompt.contains(key.as_str()))
                .map(|(_, value)| value.clone())
                .ok_or(GenerationError::UnscriptedPrompt),
            MockRule::Fixed(text) => Ok(text.clone()),
            MockRule::EchoFirstPageSentence => Ok(first_page_block(&req.user_prompt)
                .map(|b| first_sentence(&b))
                .unwrap_or_else(|| "No source page was available for this question.".to_owned())),
            MockRule::QaFromPage => {
                let block =
                    first_page_block(&req.user_prompt).ok_or(GenerationError::UnscriptedPrompt)?;
                let sentence = first_sentence(&block);
                Ok(serde_json::json!({ "Question": sentence, "Answer": sentence }).to_string())
            }
        }
    }
}

/// Blocking client for the de-facto chat wire protocol: `POST endpoint
/// {"model", "messages", "temperature", "max_tokens"}` with bearer auth,
/// response `{"choices": [{"message": {"content"}}]}`.
pub struct RemoteChat {
    http: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
    max_retries: u32,
    retry_base_delay: Duration,
    gate: RequestGate,
}

impl RemoteChat {
    pub fn new(endpoint: impl Into<String>, api_key_env: &str) -> Result<Self, GenerationError> {
        let endpoint = endpoint.into();
        if endpoint.is_empty() {
            return Err(GenerationError::Config(
                "remote chat requires an endpoint".into(),
            ));
        }
        let api_key = remote::api_key_from_env(api_key_env)?;
        Ok(RemoteChat {
            http: reqwest::blocking::Client::new(),
            endpoint,
            api_key,
            max_retries: remote::DEFAULT_MAX_RETRIES,
            retry_base_delay: remote::DEFAULT_RETRY_BASE_DELAY,
            gate: RequestGate::new(remote::DEFAULT_MAX_IN_FLIGHT),
        })
    }

    pub fn with_retry(mut self, max_retries: u32, base_delay: Duration) -> Self {
        self.max_retries = max_retries;
        self.retry_base_delay = base_delay;
        self
    }

    pub fn with_max_in_flight(mut self, max_in_flight: usize) -> Self {
        self.gate = RequestGate::new(max_in_flight);
        self
    }
}

impl ChatBackend for RemoteChat {
    fn chat(&self, req: &ChatRequest) -> Result<String, GenerationError> {
        let mut messages = Vec::new();
        if !req.system_prompt.is_empty() {
            messages.push(serde_json::json!({ "role": "system", "content": req.system_prompt }));
        }
        messages.push(serde_json::json!({ "role": "user", "content": req.user_prompt }));
        let body = serde_json::json!({
            "model": req.model_id,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        let _permit = self.gate.acquire();
        let response = remote::post_json_with_retry(
            &self.http,
            &self.endpoint,
            &self.api_key,
            &body,
            self.max_retries,
            self.retry_base_delay,
        )?;
        response
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_owned)
            .ok_or_else(|| {
                GenerationError::MalformedResponse("missing choices[0].message.content".into())
            })
    }
}

/// What a retriever produced for one question. `ClosedBook` is the
/// no-retrieval baseline.
#[derive(Debug, Clone)]
pub enum RetrievedContext<'a> {
    ClosedBook,
    /// `(page_id, content)` in rank order.
    Pages(Vec<(u32, &'a str)>),
    Graph(&'a GraphContext),
}

/// Interpolate the question and retrieved context into a chat request.
/// Every context block carries a `[Page <id>]` label; the request records
/// the rendered page ids and the context token count under `scheme`.
pub fn assemble_context(
    retrieved: &RetrievedContext,
    question: &str,
    template: &PromptTemplate,
    scheme: TokenScheme,
    cfg: &ChatConfig,
) -> Result<ChatRequest, GenerationError> {
    let (context_text, context_page_ids) = match retrieved {
        RetrievedContext::ClosedBook => (String::new(), BTreeSet::new()),
        RetrievedContext::Pages(pages) => {
            let blocks: Vec<String> = pages
                .iter()
                .map(|(id, content)| format!("[Page {id}]\n{content}"))
                .collect();
            let ids = pages.iter().map(|(id, _)| *id).collect();
            (blocks.join("\n\n"), ids)
        }
        RetrievedContext::Graph(ctx) => (ctx.render(), ctx.page_ids.clone()),
    };
    let context_token_count = context_token_count(&context_text, scheme);
    let user_prompt = template.render(&[("question", question), ("context", &context_text)]);
    Ok(ChatRequest {
        model_id: cfg.model_id.clone(),
        system_prompt: cfg.system_prompt.clone(),
        user_prompt,
        temperature: cfg.temperature,
        max_output_tokens: cfg.max_output_tokens,
        context_page_ids,
        context_token_count,
    })
}

/// Retrieve-then-generate: assemble the context, call the backend, and
/// return the completion with its context bookkeeping.
pub fn answer_question(
    question: &str,
    retrieved: &RetrievedContext,
    backend: &dyn ChatBackend,
    template: &PromptTemplate,
    scheme: TokenScheme,
    cfg: &ChatConfig,
) -> Result<GeneratedAnswer, GenerationError> {
    let req = assemble_context(retrieved, question, template, scheme, cfg)?;
    let text = chat(&req, backend)?;
    Ok(GeneratedAnswer {
        text,
        context_page_ids: req.context_page_ids,
        context_token_count: req.context_token_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(prompt: &str) -> ChatRequest {
        ChatRequest {
            model_id: "mock".into(),
            system_prompt: String::new(),
            user_prompt: prompt.into(),
            temperature: 0.0,
            max_output_tokens: 64,
            context_page_ids: BTreeSet::new(),
            context_token_count: 0,
        }
    }

    #[test]
    fn scripted_mock_is_a_table_lookup() {
        let mock = MockChat::scripted([("Q1", "A1"), ("Q2", "A2")]);
        assert_eq!(chat(&request("please answer Q1 now"), &mock).unwrap(), "A1");
        assert!(matches!(
            chat(&request("no key here"), &mock),
            Err(GenerationError::UnscriptedPrompt)
        ));
    }

    #[test]
    fn echo_mock_returns_first_page_first_sentence() {
        let mock = MockChat::new(MockRule::EchoFirstPageSentence);
        let prompt = "Context:\n[Page 7]\nFirst sentence. Second sentence.\n\n[Page 9]\nOther.\n\nQuestion: x";
        assert_eq!(chat(&request(prompt), &mock).unwrap(), "First sentence.");
    }

    #[test]
    fn empty_completion_is_an_error() {
        let mock = MockChat::fixed("   ");
        assert!(matches!(
            chat(&request("anything"), &mock),
            Err(GenerationError::EmptyCompletion)
        ));
    }

    #[test]
    fn template_requires_placeholders() {
        let err =
            PromptTemplate::new("no placeholders here", &["question", "context"]).unwrap_err();
        assert!(matches!(err, GenerationError::Template(p) if p == "question"));
    }

    #[test]
    fn closed_book_request_has_no_context_pages() {
        let req = assemble_context(
            &RetrievedContext::ClosedBook,
            "What is 2+2?",
            &PromptTemplate::answer_default(),
            TokenScheme::Whitespace,
            &ChatConfig::default(),
        )
        .unwrap();
        assert!(req.context_page_ids.is_empty());
        assert_eq!(req.context_token_count, 0);
        assert!(req.user_prompt.contains("What is 2+2?"));
        assert!(!req.user_prompt.contains("[Page"));
    }

    #[test]
    fn single_page_renders_exactly_one_block() {
        let req = assemble_context(
            &RetrievedContext::Pages(vec![(12, "A natural number is nonnegative.")]),
            "q",
            &PromptTemplate::answer_default(),
            TokenScheme::Whitespace,
            &ChatConfig::default(),
        )
        .unwrap();
        assert_eq!(req.user_prompt.matches("[Page 12]").count(), 1);
        assert_eq!(req.context_page_ids, BTreeSet::from([12]));
        // "[Page 12]" + 5 content words, whitespace scheme.
        assert_eq!(req.context_token_count, 7);
    }

    #[test]
    fn recorded_page_ids_match_rendered_labels() {
        let req = assemble_context(
            &RetrievedContext::Pages(vec![(3, "aaa."), (1, "bbb."), (9, "ccc.")]),
            "q",
            &PromptTemplate::answer_default(),
            TokenScheme::Whitespace,
            &ChatConfig::default(),
        )
        .unwrap();
        // Parse the labels back out of the prompt and compare.
        let re = Regex::new(r"\[Page (\d+)\]").unwrap();
        let rendered: BTreeSet<u32> = re
            .captures_iter(&req.user_prompt)
            .map(|c| c[1].parse().unwrap())
            .collect();
        assert_eq!(rendered, req.context_page_ids);
    }

    #[test]
    fn answer_question_round_trips_bookkeeping() {
        let mock = MockChat::new(MockRule::EchoFirstPageSentence);
        let answer = answer_question(
            "q",
            &RetrievedContext::Pages(vec![(4, "Gold sentence. Extra.")]),
            &mock,
            &PromptTemplate::answer_default(),
            TokenScheme::Whitespace,
            &ChatConfig::default(),
        )
        .unwrap();
        assert_eq!(answer.text, "Gold sentence.");
        assert_eq!(answer.context_page_ids, BTreeSet::from([4]));
    }

    #[test]
    fn first_sentence_survives_decimal_statement_numbers() {
        assert_eq!(
            first_sentence("Definition 2.1. A natural number is nonnegative. More."),
            "Definition 2.1. A natural number is nonnegative."
        );
        assert_eq!(first_sentence("Plain sentence. Next."), "Plain sentence.");
        assert_eq!(first_sentence("No period at all"), "No period at all");
        assert_eq!(first_sentence("Theorem 3.1."), "Theorem 3.1.");
    }

    #[test]
    fn entity_provenance_markers_are_not_page_blocks() {
        // Inline markers (mid-line) must not count; the first line-anchored
        // block wins.
        let prompt =
            "Entity: Empty Set. Nothing here. [Page 1]\n[Page 6]\nA bijection is both. More.\n";
        assert_eq!(
            first_page_block(prompt).unwrap(),
            "A bijection is both. More."
        );
    }

    #[test]
    fn mock_is_deterministic_across_calls() {
        let mock = MockChat::new(MockRule::QaFromPage);
        let prompt = "[Page 2] Title\nThe body sentence. More text.";
        let a = chat(&request(prompt), &mock).unwrap();
        let b = chat(&request(prompt), &mock).unwrap();
        assert_eq!(a, b);
        let parsed: serde_json::Value = serde_json::from_str(&a).unwrap();
        assert_eq!(parsed["Question"], "The body sentence.");
        assert_eq!(parsed["Answer"], "The body sentence.");
    }
}
