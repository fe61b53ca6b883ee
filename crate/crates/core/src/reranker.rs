//! LLM-based re-ranking of retrieved candidate pages with strict output
//! parsing and hallucination accounting.
//!
//! The model is asked for a Python-style list of page numbers. Everything it
//! emits that is not a candidate id is a hallucination and is tracked, never
//! silently dropped; candidates it forgets are appended at the tail in
//! original retrieval order, so re-ranking can only permute the candidate
//! set, never change it.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generation::{
    chat, ChatBackend, ChatConfig, ChatRequest, GenerationError, PromptTemplate,
};

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("candidate list must not be empty")]
    EmptyCandidates,
    #[error("duplicate candidate page {0}")]
    DuplicateCandidate(u32),
    #[error("no bracketed integer list in response: {raw}")]
    NoListFound { raw: String },
    #[error(transparent)]
    Generation(#[from] GenerationError),
}

/// The outcome of one re-ranking call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankResult {
    /// Candidate pages in the model's order, first occurrence wins.
    pub ordering: Vec<u32>,
    /// Model-emitted ids that are not in the candidate set, in emission order.
    pub hallucinated: Vec<i64>,
    /// Candidates the model never emitted, in original retrieval order.
    pub omitted: Vec<u32>,
    pub raw_response: String,
}

impl RerankResult {
    /// The ranking used downstream: the model's ordering with omitted
    /// candidates appended in original retrieval order.
    pub fn effective_ranking(&self) -> Vec<u32> {
        self.ordering
            .iter()
            .chain(self.omitted.iter())
            .copied()
            .collect()
    }
}

fn int_list_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[\s*-?\d+(?:\s*,\s*-?\d+)*\s*,?\s*\]").expect("valid regex"))
}

/// Extract the first bracketed comma-separated integer list in `text`.
/// Code fences and surrounding prose are tolerated; duplicates are
/// preserved at this stage.
pub fn parse_page_list(text: &str) -> Result<Vec<i64>, RerankError> {
    let m = int_list_re()
        .find(text)
        .ok_or_else(|| RerankError::NoListFound {
            raw: text.to_owned(),
        })?;
    let inner = &text[m.start() + 1..m.end() - 1];
    Ok(inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<i64>().expect("regex guarantees integers"))
        .collect())
}

/// Classify a parsed id list against the candidate set.
fn classify(emitted: &[i64], candidates: &[(u32, &str)], raw_response: String) -> RerankResult {
    let candidate_set: BTreeSet<u32> = candidates.iter().map(|(id, _)| *id).collect();
    let mut ordering = Vec::new();
    let mut ordered_set = BTreeSet::new();
    let mut hallucinated = Vec::new();
    for &id in emitted {
        let in_set = u32::try_from(id).ok().filter(|v| candidate_set.contains(v));
        match in_set {
            Some(valid) => {
                // First occurrence wins; later duplicates are dropped.
                if ordered_set.insert(valid) {
                    ordering.push(valid);
                }
            }
            None => hallucinated.push(id),
        }
    }
    let omitted = candidates
        .iter()
        .map(|(id, _)| *id)
        .filter(|id| !ordered_set.contains(id))
        .collect();
    RerankResult {
        ordering,
        hallucinated,
        omitted,
        raw_response,
    }
}

/// Ask the backend to reorder `candidates` by relevance to `question`.
/// A parse failure triggers exactly one retry; a second failure is an
/// error carrying the raw response (callers degrade to the original
/// ordering with an incident record).
pub fn rerank(
    question: &str,
    candidates: &[(u32, &str)],
    backend: &dyn ChatBackend,
    template: &PromptTemplate,
    cfg: &ChatConfig,
) -> Result<RerankResult, RerankError> {
    if candidates.is_empty() {
        return Err(RerankError::EmptyCandidates);
    }
    let mut seen = BTreeSet::new();
    for (id, _) in candidates {
        if !seen.insert(*id) {
            return Err(RerankError::DuplicateCandidate(*id));
        }
    }

    let rendered: Vec<String> = candidates
        .iter()
        .map(|(id, content)| format!("Page {id}:\n{content}"))
        .collect();
    let candidates_block = rendered.join("\n\n");
    let user_prompt = template.render(&[("question", question), ("candidates", &candidates_block)]);
    let req = ChatRequest {
        model_id: cfg.model_id.clone(),
        system_prompt: cfg.system_prompt.clone(),
        user_prompt,
        temperature: cfg.temperature,
        max_output_tokens: cfg.max_output_tokens,
        context_page_ids: candidates.iter().map(|(id, _)| *id).collect(),
        context_token_count: 0,
    };

    let mut last_err = None;
    for _attempt in 0..2 {
        let raw = chat(&req, backend)?;
        match parse_page_list(&raw) {
            Ok(emitted) => return Ok(classify(&emitted, candidates, raw)),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("two attempts made"))
}
