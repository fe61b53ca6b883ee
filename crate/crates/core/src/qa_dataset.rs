//! The one-question-per-page gold dataset: LLM-backed generation, range and
//! exclusion filtering, and a file format that is drop-in compatible with
//! the published dataset schema (`page`, `title`, `content`, `Question`,
//! `Answer`).

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, IngestFilters};
use crate::generation::{
    chat, ChatBackend, ChatConfig, ChatRequest, GenerationError, PromptTemplate,
};

/// A gold question/answer pair anchored to exactly one page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub page: u32,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub content: String,
    #[serde(rename = "Question")]
    pub question: String,
    #[serde(rename = "Answer")]
    pub answer: String,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset file not found: {0}")]
    MissingFile(String),
    #[error("record {index}: field {field}: {message}")]
    Schema {
        index: usize,
        field: String,
        message: String,
    },
    #[error("duplicate page {0} in dataset")]
    DuplicatePage(u32),
    #[error("generation failed on {failed} of {total} pages (more than 10%)")]
    TooManyFailures { failed: usize, total: usize },
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset file {path}: {message}")]
    Format { path: String, message: String },
}

impl DatasetError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// A page whose generation failed even after the retry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QaFailure {
    pub page: u32,
    pub message: String,
}

/// Generation output: records for the pages that succeeded, failures for
/// the rest. Failed pages are excluded rather than stubbed.
#[derive(Debug, Clone)]
pub struct QaGeneration {
    pub records: Vec<QaRecord>,
    pub failures: Vec<QaFailure>,
}

fn strip_code_fence(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(inner) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let inner = inner.strip_prefix("json").unwrap_or(inner);
    inner.trim_end_matches('`').trim()
}

fn parse_qa_completion(raw: &str) -> Option<(String, String)> {
    #[derive(Deserialize)]
    struct RawQa {
        #[serde(rename = "Question")]
        question: String,
        #[serde(rename = "Answer")]
        answer: String,
    }
    let parsed: RawQa = serde_json::from_str(strip_code_fence(raw)).ok()?;
    if parsed.question.trim().is_empty() || parsed.answer.trim().is_empty() {
        return None;
    }
    Some((parsed.question, parsed.answer))
}

/// Generate one QA record per corpus page by prompting the backend with one
/// page at a time. Unparsable outputs are retried once, then recorded as
/// failures; more than 10% failing fails the run.
pub fn generate_qa(
    corpus: &Corpus,
    backend: &dyn ChatBackend,
    template: &PromptTemplate,
    cfg: &ChatConfig,
) -> Result<QaGeneration, DatasetError> {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for page in corpus.pages() {
        let page_no = page.page_id.to_string();
        let user_prompt = template.render(&[
            ("page", page_no.as_str()),
            ("title", page.title.as_str()),
            ("content", page.content.as_str()),
        ]);
        let req = ChatRequest {
            model_id: cfg.model_id.clone(),
            system_prompt: cfg.system_prompt.clone(),
            user_prompt,
            temperature: cfg.temperature,
            max_output_tokens: cfg.max_output_tokens,
            context_page_ids: BTreeSet::new(),
            context_token_count: 0,
        };
        let mut outcome = None;
        let mut last_message = String::new();
        for _attempt in 0..2 {
            match chat(&req, backend) {
                Ok(raw) => match parse_qa_completion(&raw) {
                    Some(qa) => {
                        outcome = Some(qa);
                        break;
                    }
                    None => last_message = format!("unparsable completion: {raw}"),
                },
                Err(e) => last_message = e.to_string(),
            }
        }
        match outcome {
            Some((question, answer)) => records.push(QaRecord {
                page: page.page_id,
                title: page.title.clone(),
                content: page.content.clone(),
                question,
                answer,
            }),
            None => failures.push(QaFailure {
                page: page.page_id,
                message: last_message,
            }),
        }
    }
    if failures.len() * 10 > corpus.len() {
        return Err(DatasetError::TooManyFailures {
            failed: failures.len(),
            total: corpus.len(),
        });
    }
    Ok(QaGeneration { records, failures })
}

/// Why a record was removed by [`filter_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    OutOfRange,
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedRecord {
    pub page: u32,
    pub reason: RemovalReason,
}

/// Apply the front/back-matter range cut from `filters`, then drop pages in
/// `filters.exclude` or `exclusions`. Returns survivors plus a removal
/// report with reasons.
pub fn filter_dataset(
    records: &[QaRecord],
    filters: &IngestFilters,
    exclusions: &BTreeSet<u32>,
) -> (Vec<QaRecord>, Vec<RemovedRecord>) {
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for record in records {
        let in_range = filters.first_page.is_none_or(|f| record.page >= f)
            && filters.last_page.is_none_or(|l| record.page <= l);
        if !in_range {
            removed.push(RemovedRecord {
                page: record.page,
                reason: RemovalReason::OutOfRange,
            });
        } else if filters.exclude.contains(&record.page) || exclusions.contains(&record.page) {
            removed.push(RemovedRecord {
                page: record.page,
                reason: RemovalReason::Excluded,
            });
        } else {
            kept.push(record.clone());
        }
    }
    (kept, removed)
}

/// Load a dataset file (JSON array of records), validating the schema
/// record by record and rejecting duplicate pages.
pub fn load_dataset(path: &Path) -> Result<Vec<QaRecord>, DatasetError> {
    if !path.exists() {
        return Err(DatasetError::MissingFile(path.display().to_string()));
    }
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    let values: Vec<serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| DatasetError::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    let mut records = Vec::with_capacity(values.len());
    let mut seen = BTreeSet::new();
    for (index, value) in values.into_iter().enumerate() {
        let record = record_from_value(index, value)?;
        if !seen.insert(record.page) {
            return Err(DatasetError::DuplicatePage(record.page));
        }
        records.push(record);
    }
    records.sort_by_key(|r| r.page);
    Ok(records)
}

fn record_from_value(index: usize, value: serde_json::Value) -> Result<QaRecord, DatasetError> {
    let schema_err = |field: &str, message: &str| DatasetError::Schema {
        index,
        field: field.to_owned(),
        message: message.to_owned(),
    };
    let obj = value
        .as_object()
        .ok_or_else(|| schema_err("<record>", "not an object"))?;
    let page = obj
        .get("page")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| schema_err("page", "missing or not a positive integer"))?;
    if page == 0 || page > u32::MAX as u64 {
        return Err(schema_err("page", "out of range"));
    }
    let get_string = |field: &str, required: bool| -> Result<String, DatasetError> {
        match obj.get(field) {
            Some(serde_json::Value::String(s)) => {
                if required && s.trim().is_empty() {
                    Err(schema_err(field, "empty"))
                } else {
                    Ok(s.clone())
                }
            }
            Some(_) => Err(schema_err(field, "not a string")),
            None if required => Err(schema_err(field, "missing")),
            None => Ok(String::new()),
        }
    };
    Ok(QaRecord {
        page: page as u32,
        title: get_string("title", false)?,
        content: get_string("content", false)?,
        question: get_string("Question", true)?,
        answer: get_string("Answer", true)?,
    })
}

/// Write a dataset as a pretty-printed JSON array, bit-compatible with the
/// published schema.
pub fn save_dataset(records: &[QaRecord], path: &Path) -> Result<(), DatasetError> {
    let text = serde_json::to_string_pretty(records).expect("records serialize");
    fs::write(path, text + "\n").map_err(|e| DatasetError::io(path, e))
}
