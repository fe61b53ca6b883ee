//! Page-level retrieval-augmented question answering over a page-chunked
//! corpus, with an evaluation harness comparing dense vector retrieval
//! against page-traceable knowledge-graph retrieval.
//!
//! The pipeline: [`corpus`] loads and tokenizes pages; [`embedder`] turns
//! text into vectors (remote service or deterministic local backend);
//! [`vector_index`] answers exact top-k cosine queries; [`graph_index`]
//! builds a knowledge graph whose every element carries page provenance and
//! serves graph-augmented retrieval; [`generation`] grounds an LLM answer in
//! the retrieved pages; [`qa_dataset`] generates and curates the
//! one-question-per-page gold set; [`reranker`] reorders candidates by LLM
//! with hallucination accounting; [`evaluation`] scores accuracy@k and
//! token-overlap F1 and renders reports.

pub mod corpus;
pub mod embedder;
pub mod evaluation;
pub mod generation;
pub mod graph_index;
pub mod qa_dataset;
pub mod reranker;
pub mod vector_index;

mod remote;

pub use corpus::{
    load_corpus, load_corpus_as, normalize_tokens, normalized_token_list, Corpus, CorpusError,
    IngestFilters, IngestReport, Page, RejectReason, RejectedPage, TokenSet,
};
pub use embedder::{
    cosine_similarity, embed_batch, embed_text, EmbedError, EmbedderBackend, EmbedderConfig,
    EmbeddingVector, RemoteEmbeddingsClient,
};
pub use evaluation::{
    context_token_count, evaluate_run, render_report, render_tables, retrieval_accuracy, token_f1,
    EvalError, EvalOptions, EvalReport, EvalRetriever, F1Breakdown, Generator, Incident,
    QuestionOutcome, ReportConfig, ReportFormat, TokenScheme,
};
pub use generation::{
    answer_question, assemble_context, chat, ChatBackend, ChatConfig, ChatRequest, GeneratedAnswer,
    GenerationError, MockChat, MockRule, PromptTemplate, RemoteChat, RetrievedContext,
};
pub use graph_index::{
    entity_id_for, extract_entities, Entity, Extractor, GraphBuild, GraphContext, GraphError,
    GraphSearchParams, KnowledgeGraph, Relation, SkippedPage, TextUnit,
};
pub use qa_dataset::{
    filter_dataset, generate_qa, load_dataset, save_dataset, DatasetError, QaFailure, QaGeneration,
    QaRecord, RemovalReason, RemovedRecord,
};
pub use reranker::{parse_page_list, rerank, RerankError, RerankResult};
pub use vector_index::{IndexError, RetrievalResult, VectorIndex};
