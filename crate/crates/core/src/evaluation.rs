//! The benchmark's two metrics — retrieval page-accuracy@k and
//! token-overlap F1 — plus context-token accounting, the per-question
//! evaluation driver, and report rendering.
//!
//! F1 follows the evaluated convention exactly as printed: precision is the
//! overlap over the reference token set and recall is the overlap over the
//! generated token set. That swaps the usual naming; F1 itself is
//! unaffected, and the breakdown fields let callers re-derive either
//! convention.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_tokens, Corpus};
use crate::embedder::{embed_text, EmbedderConfig};
use crate::generation::{
    answer_question, ChatBackend, ChatConfig, PromptTemplate, RetrievedContext,
};
use crate::graph_index::{GraphSearchParams, KnowledgeGraph};
use crate::qa_dataset::QaRecord;
use crate::reranker::{rerank, RerankError};
use crate::vector_index::VectorIndex;

/// Fraction of per-question incidents an evaluation run tolerates before
/// failing outright.
pub const DEFAULT_INCIDENT_TOLERANCE: f64 = 0.05;

/// How context sizes are counted. Comparisons are only meaningful within
/// one scheme.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenScheme {
    #[default]
    Whitespace,
    CharsPer4,
}

/// Count context tokens: whitespace-delimited fragments, or character
/// count divided by four rounded up.
pub fn context_token_count(text: &str, scheme: TokenScheme) -> usize {
    match scheme {
        TokenScheme::Whitespace => text.split_whitespace().count(),
        TokenScheme::CharsPer4 => text.chars().count().div_ceil(4),
    }
}

/// Token-overlap F1 with its raw set sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Breakdown {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub overlap_size: usize,
    pub ref_size: usize,
    pub gen_size: usize,
}

/// Token-overlap F1 between a reference answer and a generated answer,
/// over the canonical normalized token sets. Degenerate cases: a ratio
/// with an empty denominator is 0, and F1 is 0 when both ratios are 0.
pub fn token_f1(reference: &str, generated: &str) -> F1Breakdown {
    let reference_tokens = normalize_tokens(reference);
    let generated_tokens = normalize_tokens(generated);
    let overlap_size = reference_tokens.intersection_size(&generated_tokens);
    let ref_size = reference_tokens.len();
    let gen_size = generated_tokens.len();
    let precision = if ref_size == 0 {
        0.0
    } else {
        overlap_size as f64 / ref_size as f64
    };
    let recall = if gen_size == 0 {
        0.0
    } else {
        overlap_size as f64 / gen_size as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    F1Breakdown {
        precision,
        recall,
        f1,
        overlap_size,
        ref_size,
        gen_size,
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset page {0} does not resolve in the corpus")]
    UnknownPage(u32),
    #[error("misaligned question ids: {0}")]
    MisalignedIds(String),
    #[error("k_values must be non-empty, positive, strictly ascending; got {0:?}")]
    InvalidKValues(Vec<usize>),
    #[error("retriever was built for corpus {retriever}, dataset corpus is {corpus}")]
    CorpusMismatch { retriever: String, corpus: String },
    #[error("{incidents} of {total} questions failed (tolerance {tolerance})")]
    TooManyIncidents {
        incidents: usize,
        total: usize,
        tolerance: f64,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report file {path}: {message}")]
    Format { path: String, message: String },
}

/// Mean of `indicator(gold page in retrieved set)` over questions aligned
/// by id. Misaligned ids are an input error.
pub fn retrieval_accuracy(
    results: &BTreeMap<String, BTreeSet<u32>>,
    gold: &BTreeMap<String, u32>,
) -> Result<f64, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    if results.len() != gold.len() {
        return Err(EvalError::MisalignedIds(format!(
            "{} results vs {} gold entries",
            results.len(),
            gold.len()
        )));
    }
    let mut hits = 0usize;
    for (query_id, gold_page) in gold {
        let retrieved = results
            .get(query_id)
            .ok_or_else(|| EvalError::MisalignedIds(format!("no result for {query_id}")))?;
        if retrieved.contains(gold_page) {
            hits += 1;
        }
    }
    Ok(hits as f64 / gold.len() as f64)
}

/// Which retrieval route feeds the generator.
pub enum EvalRetriever<'a> {
    /// No retrieval at all; no index is ever touched.
    ClosedBook,
    Vector {
        index: &'a VectorIndex,
        embedder: &'a EmbedderConfig,
    },
    /// Vector retrieval of `candidates` pages, reordered by the re-ranking
    /// backend before scoring and generation.
    RerankedVector {
        index: &'a VectorIndex,
        embedder: &'a EmbedderConfig,
        backend: &'a dyn ChatBackend,
        template: &'a PromptTemplate,
        chat: &'a ChatConfig,
        candidates: usize,
    },
    Graph {
        graph: &'a KnowledgeGraph,
        params: GraphSearchParams,
        embedder: &'a EmbedderConfig,
    },
}

impl EvalRetriever<'_> {
    pub fn label(&self) -> String {
        match self {
            EvalRetriever::ClosedBook => "closed-book".to_owned(),
            EvalRetriever::Vector { .. } => "vector".to_owned(),
            EvalRetriever::RerankedVector { candidates, .. } => {
                format!("vector+rerank@{candidates}")
            }
            EvalRetriever::Graph { .. } => "graph".to_owned(),
        }
    }

    fn model_id(&self) -> String {
        match self {
            EvalRetriever::ClosedBook => "none".to_owned(),
            EvalRetriever::Vector { index, .. } | EvalRetriever::RerankedVector { index, .. } => {
                index.model_id().to_owned()
            }
            EvalRetriever::Graph { graph, .. } => graph.extractor().to_owned(),
        }
    }
}

/// The answer-generation side of a run.
pub struct Generator<'a> {
    pub backend: &'a dyn ChatBackend,
    pub template: &'a PromptTemplate,
    pub chat: &'a ChatConfig,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Cutoffs for accuracy@k; strictly ascending.
    pub k_values: Vec<usize>,
    /// How many retrieved pages feed the prompt (default: max of k_values).
    pub context_k: Option<usize>,
    pub token_scheme: TokenScheme,
    pub incident_tolerance: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            k_values: vec![1, 3, 5, 10],
            context_k: None,
            token_scheme: TokenScheme::Whitespace,
            incident_tolerance: DEFAULT_INCIDENT_TOLERANCE,
        }
    }
}

impl EvalOptions {
    fn validate(&self) -> Result<(), EvalError> {
        let ks = &self.k_values;
        let ascending = ks.windows(2).all(|w| w[0] < w[1]);
        if ks.is_empty() || ks[0] == 0 || !ascending {
            return Err(EvalError::InvalidKValues(ks.clone()));
        }
        Ok(())
    }
}

/// Everything recorded for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub page: u32,
    /// k -> gold page among the first k (vector routes only).
    pub hits: BTreeMap<usize, bool>,
    /// Pre-rerank hits, for before/after reporting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_rerank_hits: Option<BTreeMap<usize, bool>>,
    /// Gold page in the retrieved set (graph route only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set_hit: Option<bool>,
    pub f1: F1Breakdown,
    pub context_tokens: usize,
}

/// A per-question failure. `excluded` marks questions dropped from the
/// aggregates; rerank parse failures degrade to the original ordering and
/// stay included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Incident {
    pub page: u32,
    pub stage: String,
    pub message: String,
    pub excluded: bool,
}

/// Provenance block embedded in every structured report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub corpus_id: String,
    pub retriever: String,
    pub model_id: String,
    pub k_values: Vec<usize>,
    pub token_scheme: TokenScheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Aggregated evaluation results shaped like the benchmark tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ReportConfig,
    pub n_questions: usize,
    pub accuracy_at: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_rerank_accuracy_at: Option<BTreeMap<usize, f64>>,
    /// Whole-retrieved-set accuracy (graph route).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set_accuracy: Option<f64>,
    pub mean_f1: f64,
    pub mean_context_tokens: f64,
    pub hallucination_count: usize,
    pub per_question: Vec<QuestionOutcome>,
    pub incidents: Vec<Incident>,
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let text = render_report(self, ReportFormat::Structured);
        fs::write(path, text).map_err(|e| EvalError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(|e| EvalError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| EvalError::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

struct PerQuestion {
    outcome: Option<QuestionOutcome>,
    incidents: Vec<Incident>,
    hallucinations: usize,
}

/// Run the full per-question loop: retrieve, score hits, generate, score
/// F1, and aggregate. Questions fan out in parallel; aggregation sorts by
/// page first, so results are independent of scheduling and of dataset
/// order.
pub fn evaluate_run(
    dataset: &[QaRecord],
    corpus: &Corpus,
    retriever: &EvalRetriever,
    generator: &Generator,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    opts.validate()?;
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    for record in dataset {
        if !corpus.contains(record.page) {
            return Err(EvalError::UnknownPage(record.page));
        }
    }
    match retriever {
        EvalRetriever::Vector { index, .. } | EvalRetriever::RerankedVector { index, .. } => {
            if index.corpus_id() != corpus.corpus_id() {
                return Err(EvalError::CorpusMismatch {
                    retriever: index.corpus_id().to_owned(),
                    corpus: corpus.corpus_id().to_owned(),
                });
            }
        }
        EvalRetriever::Graph { graph, .. } => {
            if graph.corpus_id() != corpus.corpus_id() {
                return Err(EvalError::CorpusMismatch {
                    retriever: graph.corpus_id().to_owned(),
                    corpus: corpus.corpus_id().to_owned(),
                });
            }
        }
        EvalRetriever::ClosedBook => {}
    }

    let results: Vec<PerQuestion> = dataset
        .par_iter()
        .map(|record| evaluate_question(record, corpus, retriever, generator, opts))
        .collect();

    let mut outcomes: Vec<QuestionOutcome> = Vec::new();
    let mut incidents: Vec<Incident> = Vec::new();
    let mut hallucination_count = 0usize;
    for result in results {
        if let Some(outcome) = result.outcome {
            outcomes.push(outcome);
        }
        incidents.extend(result.incidents);
        hallucination_count += result.hallucinations;
    }
    outcomes.sort_by_key(|o| o.page);
    incidents.sort_by(|a, b| (a.page, &a.stage).cmp(&(b.page, &b.stage)));

    let excluded = incidents.iter().filter(|i| i.excluded).count();
    if excluded as f64 > opts.incident_tolerance * dataset.len() as f64 {
        return Err(EvalError::TooManyIncidents {
            incidents: excluded,
            total: dataset.len(),
            tolerance: opts.incident_tolerance,
        });
    }
    if outcomes.is_empty() {
        return Err(EvalError::EmptyDataset);
    }

    let included = outcomes.len() as f64;
    let mut accuracy_at = BTreeMap::new();
    let mut pre_rerank_accuracy_at: Option<BTreeMap<usize, f64>> = None;
    let mut set_accuracy = None;
    match retriever {
        EvalRetriever::Vector { .. } => {
            for &k in &opts.k_values {
                let hits = outcomes.iter().filter(|o| o.hits[&k]).count();
                accuracy_at.insert(k, hits as f64 / included);
            }
        }
        EvalRetriever::RerankedVector { .. } => {
            let mut before = BTreeMap::new();
            for &k in &opts.k_values {
                let hits = outcomes.iter().filter(|o| o.hits[&k]).count();
                accuracy_at.insert(k, hits as f64 / included);
                let pre_hits = outcomes
                    .iter()
                    .filter(|o| o.pre_rerank_hits.as_ref().is_some_and(|h| h[&k]))
                    .count();
                before.insert(k, pre_hits as f64 / included);
            }
            pre_rerank_accuracy_at = Some(before);
        }
        EvalRetriever::Graph { .. } => {
            let hits = outcomes.iter().filter(|o| o.set_hit == Some(true)).count();
            set_accuracy = Some(hits as f64 / included);
        }
        EvalRetriever::ClosedBook => {}
    }

    let mean_f1 = outcomes.iter().map(|o| o.f1.f1).sum::<f64>() / included;
    let mean_context_tokens = outcomes
        .iter()
        .map(|o| o.context_tokens as f64)
        .sum::<f64>()
        / included;

    Ok(EvalReport {
        config: ReportConfig {
            corpus_id: corpus.corpus_id().to_owned(),
            retriever: retriever.label(),
            model_id: retriever.model_id(),
            k_values: opts.k_values.clone(),
            token_scheme: opts.token_scheme,
            config_hash: None,
            seed: None,
        },
        n_questions: dataset.len(),
        accuracy_at,
        pre_rerank_accuracy_at,
        set_accuracy,
        mean_f1,
        mean_context_tokens,
        hallucination_count,
        per_question: outcomes,
        incidents,
    })
}

fn evaluate_question(
    record: &QaRecord,
    corpus: &Corpus,
    retriever: &EvalRetriever,
    generator: &Generator,
    opts: &EvalOptions,
) -> PerQuestion {
    let max_k = *opts.k_values.last().expect("validated");
    let context_k = opts.context_k.unwrap_or(max_k);
    let mut incidents = Vec::new();
    let mut hallucinations = 0usize;

    let hard_failure = |stage: &str, message: String| PerQuestion {
        outcome: None,
        incidents: vec![Incident {
            page: record.page,
            stage: stage.to_owned(),
            message,
            excluded: true,
        }],
        hallucinations: 0,
    };

    enum Route {
        None,
        Ranked {
            ranking: Vec<u32>,
            pre_rerank: Option<Vec<u32>>,
        },
        GraphHit(bool, crate::graph_index::GraphContext),
    }

    let route = match retriever {
        EvalRetriever::ClosedBook => Route::None,
        EvalRetriever::Vector { index, embedder } => {
            let query = match embed_text(&record.question, embedder) {
                Ok(v) => v,
                Err(e) => return hard_failure("embed", e.to_string()),
            };
            let fetch = max_k.max(context_k);
            match index.top_k(&query, fetch) {
                Ok(result) => Route::Ranked {
                    ranking: result.page_ids(),
                    pre_rerank: None,
                },
                Err(e) => return hard_failure("retrieve", e.to_string()),
            }
        }
        EvalRetriever::RerankedVector {
            index,
            embedder,
            backend,
            template,
            chat,
            candidates,
        } => {
            let query = match embed_text(&record.question, embedder) {
                Ok(v) => v,
                Err(e) => return hard_failure("embed", e.to_string()),
            };
            let result = match index.top_k(&query, *candidates) {
                Ok(r) => r,
                Err(e) => return hard_failure("retrieve", e.to_string()),
            };
            let original = result.page_ids();
            let contents: Vec<(u32, &str)> = original
                .iter()
                .map(|id| {
                    (
                        *id,
                        corpus
                            .get(*id)
                            .expect("index page resolves")
                            .content
                            .as_str(),
                    )
                })
                .collect();
            let ranking = match rerank(&record.question, &contents, *backend, template, chat) {
                Ok(outcome) => {
                    hallucinations += outcome.hallucinated.len();
                    outcome.effective_ranking()
                }
                Err(RerankError::NoListFound { raw }) => {
                    // Degrade: ordering unchanged, question stays included.
                    incidents.push(Incident {
                        page: record.page,
                        stage: "rerank".to_owned(),
                        message: format!("unparsable rerank output, ordering unchanged: {raw}"),
                        excluded: false,
                    });
                    original.clone()
                }
                Err(e) => return hard_failure("rerank", e.to_string()),
            };
            Route::Ranked {
                ranking,
                pre_rerank: Some(original),
            }
        }
        EvalRetriever::Graph {
            graph,
            params,
            embedder,
        } => match graph.retrieve(&record.question, params, embedder) {
            Ok(ctx) => Route::GraphHit(ctx.page_ids.contains(&record.page), ctx),
            Err(e) => return hard_failure("retrieve", e.to_string()),
        },
    };

    let (hits, pre_rerank_hits, set_hit, retrieved) = match &route {
        Route::None => (BTreeMap::new(), None, None, RetrievedContext::ClosedBook),
        Route::Ranked {
            ranking,
            pre_rerank,
        } => {
            let hits: BTreeMap<usize, bool> = opts
                .k_values
                .iter()
                .map(|&k| (k, ranking.iter().take(k).any(|id| *id == record.page)))
                .collect();
            let pre = pre_rerank.as_ref().map(|original| {
                opts.k_values
                    .iter()
                    .map(|&k| (k, original.iter().take(k).any(|id| *id == record.page)))
                    .collect()
            });
            let pages: Vec<(u32, &str)> = ranking
                .iter()
                .take(context_k)
                .map(|id| {
                    (
                        *id,
                        corpus.get(*id).expect("page resolves").content.as_str(),
                    )
                })
                .collect();
            (hits, pre, None, RetrievedContext::Pages(pages))
        }
        Route::GraphHit(hit, ctx) => (
            BTreeMap::new(),
            None,
            Some(*hit),
            RetrievedContext::Graph(ctx),
        ),
    };

    let answer = match answer_question(
        &record.question,
        &retrieved,
        generator.backend,
        generator.template,
        opts.token_scheme,
        generator.chat,
    ) {
        Ok(a) => a,
        Err(e) => {
            let mut failure = hard_failure("generate", e.to_string());
            failure.incidents.extend(incidents);
            return failure;
        }
    };

    PerQuestion {
        outcome: Some(QuestionOutcome {
            page: record.page,
            hits,
            pre_rerank_hits,
            set_hit,
            f1: token_f1(&record.answer, &answer.text),
            context_tokens: answer.context_token_count,
        }),
        incidents,
        hallucinations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Human-readable tables: model rows, top-k columns, before/after
    /// arrows for rerank runs.
    TableText,
    /// The structured JSON report object.
    Structured,
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Structured => {
            serde_json::to_string_pretty(report).expect("report serializes") + "\n"
        }
        ReportFormat::TableText => render_tables(&[report]),
    }
}

/// Render one or more reports as aligned text tables: a retrieval-accuracy
/// stanza (single Accuracy column for graph runs, Top-k columns otherwise,
/// arrow cells for rerank runs) and an answer-F1 stanza.
pub fn render_tables(reports: &[&EvalReport]) -> String {
    let mut out = String::new();
    let graph_rows: Vec<&&EvalReport> = reports
        .iter()
        .filter(|r| r.set_accuracy.is_some())
        .collect();
    let ranked_rows: Vec<&&EvalReport> = reports
        .iter()
        .filter(|r| !r.accuracy_at.is_empty())
        .collect();

    out.push_str("Target page retrieval accuracy\n");
    let model_width = reports
        .iter()
        .map(|r| r.config.model_id.len())
        .chain(["Model".len()])
        .max()
        .unwrap_or(5)
        .max(5);
    if !graph_rows.is_empty() {
        out.push_str(&format!("{:<model_width$}  Accuracy\n", "Model"));
        for report in &graph_rows {
            out.push_str(&format!(
                "{:<model_width$}  {:.3}\n",
                report.config.model_id,
                report.set_accuracy.expect("filtered")
            ));
        }
        out.push('\n');
    }
    if !ranked_rows.is_empty() {
        let ks: Vec<usize> = ranked_rows[0].accuracy_at.keys().copied().collect();
        let mut header = format!("{:<model_width$}", "Model");
        for k in &ks {
            header.push_str(&format!("  {:>14}", format!("Top {k}")));
        }
        out.push_str(&header);
        out.push('\n');
        for report in &ranked_rows {
            let mut row = format!("{:<model_width$}", report.config.model_id);
            for k in &ks {
                let cell = match (&report.pre_rerank_accuracy_at, report.accuracy_at.get(k)) {
                    (Some(before), Some(after)) => {
                        format!("{:.3} \u{2192} {:.3}", before[k], after)
                    }
                    (None, Some(after)) => format!("{after:.3}"),
                    _ => "-".to_owned(),
                };
                row.push_str(&format!("  {cell:>14}"));
            }
            out.push_str(&row);
            out.push('\n');
        }
        out.push('\n');
    }

    out.push_str("Answer generation\n");
    out.push_str(&format!(
        "{:<model_width$}  {:>8}  {:>8}  {:>14}  {:>14}\n",
        "Model", "F1", "N", "Context tokens", "Hallucinations"
    ));
    for report in reports {
        out.push_str(&format!(
            "{:<model_width$}  {:>8.3}  {:>8}  {:>14.1}  {:>14}\n",
            report.config.model_id,
            report.mean_f1,
            report.n_questions,
            report.mean_context_tokens,
            report.hallucination_count
        ));
    }

    let total_incidents: usize = reports.iter().map(|r| r.incidents.len()).sum();
    if total_incidents > 0 {
        out.push_str("\nIncidents\n");
        for report in reports {
            for incident in &report.incidents {
                out.push_str(&format!(
                    "page {} [{}]{}: {}\n",
                    incident.page,
                    incident.stage,
                    if incident.excluded { " (excluded)" } else { "" },
                    incident.message
                ));
            }
        }
    }
    out
}
