//! Subcommand implementations. Each command reads the resolved RunConfig,
//! executes one pipeline stage, writes its artifact under the output
//! directory (versioned, never overwriting), and prints a one-line summary.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use pagerag_core::{
    answer_question, evaluate_run, filter_dataset, generate_qa, load_dataset, render_tables,
    rerank, save_dataset, Corpus, EvalOptions, EvalReport, EvalRetriever, Extractor, Generator,
    KnowledgeGraph, QaFailure, RemovedRecord, RerankResult, RetrievedContext, VectorIndex,
};
use serde::Serialize;

use crate::artifacts::{latest_path, next_write_path};
use crate::config::{ExtractorKind, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RetrieverArg {
    Vector,
    Graph,
}

fn ensure_out_dir(config: &RunConfig) -> CliResult<()> {
    fs::create_dir_all(&config.out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", config.out_dir.display())))
}

fn load_index_artifact(config: &RunConfig, corpus: &Corpus) -> CliResult<VectorIndex> {
    let path = latest_path(&config.out_dir, "index", "jsonl").ok_or_else(|| {
        CliError::Runtime(format!(
            "no vector index under {}; run `pagerag build-index` first",
            config.out_dir.display()
        ))
    })?;
    let index = VectorIndex::load(&path)?;
    if index.corpus_id() != corpus.corpus_id() {
        return Err(CliError::Config(format!(
            "index {} was built for corpus {:?} but the config corpus is {:?}",
            path.display(),
            index.corpus_id(),
            corpus.corpus_id()
        )));
    }
    if index.model_id() != config.embedder.model_id {
        return Err(CliError::Config(format!(
            "index {} was built with model {:?} but the config embedder is {:?}",
            path.display(),
            index.model_id(),
            config.embedder.model_id
        )));
    }
    Ok(index)
}

fn load_graph_artifact(config: &RunConfig, corpus: &Corpus) -> CliResult<KnowledgeGraph> {
    let path = latest_path(&config.out_dir, "graph", "jsonl").ok_or_else(|| {
        CliError::Runtime(format!(
            "no knowledge graph under {}; run `pagerag build-index --retriever graph` first",
            config.out_dir.display()
        ))
    })?;
    let graph = KnowledgeGraph::load(&path)?;
    if graph.corpus_id() != corpus.corpus_id() {
        return Err(CliError::Config(format!(
            "graph {} was built for corpus {:?} but the config corpus is {:?}",
            path.display(),
            graph.corpus_id(),
            corpus.corpus_id()
        )));
    }
    Ok(graph)
}

fn load_dataset_artifact(config: &RunConfig) -> CliResult<Vec<pagerag_core::QaRecord>> {
    let path = match &config.dataset.path {
        Some(path) => path.clone(),
        None => latest_path(&config.out_dir, "dataset", "json").ok_or_else(|| {
            CliError::Runtime(format!(
                "no dataset under {}; run `pagerag gen-dataset` first or set dataset.path",
                config.out_dir.display()
            ))
        })?,
    };
    Ok(load_dataset(&path)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n")
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn ingest(config: &RunConfig) -> CliResult<()> {
    ensure_out_dir(config)?;
    let (corpus, report) = config.load_corpus()?;
    let hash = config.config_hash();

    let corpus_path = next_write_path(&config.out_dir, "corpus", "jsonl");
    corpus.save(&corpus_path, Some(&hash))?;

    #[derive(Serialize)]
    struct IngestArtifact<'a> {
        config_hash: &'a str,
        corpus_id: &'a str,
        retained: usize,
        rejected: &'a [pagerag_core::RejectedPage],
    }
    let report_path = next_write_path(&config.out_dir, "ingest_report", "json");
    write_json(
        &report_path,
        &IngestArtifact {
            config_hash: &hash,
            corpus_id: corpus.corpus_id(),
            retained: corpus.len(),
            rejected: &report.rejected,
        },
    )?;

    println!(
        "ingest: {} pages retained, {} rejected -> {}",
        corpus.len(),
        report.rejected.len(),
        corpus_path.display()
    );
    Ok(())
}

pub fn build_index(config: &RunConfig, retriever: RetrieverArg) -> CliResult<()> {
    ensure_out_dir(config)?;
    let (corpus, _) = config.load_corpus()?;
    let hash = config.config_hash();
    match retriever {
        RetrieverArg::Vector => {
            let index = VectorIndex::build(&corpus, &config.embedder)?;
            let path = next_write_path(&config.out_dir, "index", "jsonl");
            index.save(&path, Some(&hash))?;
            println!(
                "build-index: {} pages embedded with {} (dim {}) -> {}",
                index.len(),
                index.model_id(),
                index.dimension(),
                path.display()
            );
        }
        RetrieverArg::Graph => {
            let backend;
            let template;
            let chat_config;
            let extractor = match config.graph.extractor {
                ExtractorKind::RuleBased => Extractor::RuleBased,
                ExtractorKind::Llm => {
                    backend = config.llm.build_backend()?;
                    template = config.templates.extraction()?;
                    chat_config = config.llm.chat_config();
                    Extractor::Llm {
                        backend: backend.as_ref(),
                        template: &template,
                        chat: &chat_config,
                    }
                }
            };
            let build = KnowledgeGraph::build(&corpus, &extractor)?;
            let path = next_write_path(&config.out_dir, "graph", "jsonl");
            build.graph.save(&path, Some(&hash))?;
            println!(
                "build-index: graph with {} entities, {} relations, {} units ({} pages skipped) -> {}",
                build.graph.entity_count(),
                build.graph.relation_count(),
                build.graph.unit_count(),
                build.skipped.len(),
                path.display()
            );
        }
    }
    Ok(())
}

pub fn gen_dataset(config: &RunConfig) -> CliResult<()> {
    ensure_out_dir(config)?;
    let (corpus, _) = config.load_corpus()?;
    let llm = config.dataset_llm();
    let backend = llm.build_backend()?;
    let template = config.templates.qa()?;
    let generation = generate_qa(&corpus, backend.as_ref(), &template, &llm.chat_config())?;

    let filters = config.dataset.filters();
    let (kept, removed) = filter_dataset(&generation.records, &filters, &config.dataset.exclude);

    let dataset_path = next_write_path(&config.out_dir, "dataset", "json");
    save_dataset(&kept, &dataset_path)?;

    #[derive(Serialize)]
    struct DatasetArtifact<'a> {
        config_hash: String,
        corpus_id: &'a str,
        generated: usize,
        kept: usize,
        failures: &'a [QaFailure],
        removed: &'a [RemovedRecord],
    }
    let report_path = next_write_path(&config.out_dir, "dataset_report", "json");
    write_json(
        &report_path,
        &DatasetArtifact {
            config_hash: config.config_hash(),
            corpus_id: corpus.corpus_id(),
            generated: generation.records.len(),
            kept: kept.len(),
            failures: &generation.failures,
            removed: &removed,
        },
    )?;

    println!(
        "gen-dataset: {} generated, {} failed, {} removed by filters, {} kept -> {}",
        generation.records.len(),
        generation.failures.len(),
        removed.len(),
        kept.len(),
        dataset_path.display()
    );
    Ok(())
}

pub fn retrieve(config: &RunConfig, question: &str, retriever: RetrieverArg) -> CliResult<()> {
    let (corpus, _) = config.load_corpus()?;
    match retriever {
        RetrieverArg::Vector => {
            let index = load_index_artifact(config, &corpus)?;
            let query = pagerag_core::embed_text(question, &config.embedder)?;
            let result = index.top_k(&query, config.max_k())?;
            for (page_id, score) in &result.ranked {
                println!("page {page_id}\tscore {score:.6}");
            }
            println!(
                "retrieve: {} pages (k={}) for {:?}",
                result.ranked.len(),
                result.k,
                question
            );
        }
        RetrieverArg::Graph => {
            let graph = load_graph_artifact(config, &corpus)?;
            let context = graph.retrieve(question, &config.graph_params(), &config.embedder)?;
            let pages: Vec<String> = context.page_ids.iter().map(|id| id.to_string()).collect();
            println!("pages: [{}]", pages.join(", "));
            println!(
                "retrieve: graph context with {} entities, {} units, {} tokens for {:?}",
                context.entities.len(),
                context.units.len(),
                context.token_count,
                question
            );
        }
    }
    Ok(())
}

pub fn answer(
    config: &RunConfig,
    question: &str,
    retriever: RetrieverArg,
    use_rerank: bool,
) -> CliResult<()> {
    if use_rerank && retriever == RetrieverArg::Graph {
        return Err(CliError::Usage(
            "--rerank applies to the vector retriever only".to_owned(),
        ));
    }
    let (corpus, _) = config.load_corpus()?;
    let backend = config.llm.build_backend()?;
    let template = config.templates.answer()?;
    let chat_config = config.llm.chat_config();

    let generated = match retriever {
        RetrieverArg::Vector => {
            let index = load_index_artifact(config, &corpus)?;
            let query = pagerag_core::embed_text(question, &config.embedder)?;
            let result = index.top_k(&query, config.max_k())?;
            let mut ranking = result.page_ids();
            if use_rerank {
                let candidates: Vec<(u32, &str)> = ranking
                    .iter()
                    .map(|id| (*id, corpus.get(*id).expect("index page").content.as_str()))
                    .collect();
                let rerank_template = config.templates.rerank()?;
                let outcome = rerank(
                    question,
                    &candidates,
                    backend.as_ref(),
                    &rerank_template,
                    &chat_config,
                )?;
                if !outcome.hallucinated.is_empty() {
                    eprintln!(
                        "warning: re-ranker hallucinated ids {:?}",
                        outcome.hallucinated
                    );
                }
                ranking = outcome.effective_ranking();
            }
            let pages: Vec<(u32, &str)> = ranking
                .iter()
                .map(|id| (*id, corpus.get(*id).expect("index page").content.as_str()))
                .collect();
            answer_question(
                question,
                &RetrievedContext::Pages(pages),
                backend.as_ref(),
                &template,
                config.token_scheme,
                &chat_config,
            )?
        }
        RetrieverArg::Graph => {
            let graph = load_graph_artifact(config, &corpus)?;
            let context = graph.retrieve(question, &config.graph_params(), &config.embedder)?;
            answer_question(
                question,
                &RetrievedContext::Graph(&context),
                backend.as_ref(),
                &template,
                config.token_scheme,
                &chat_config,
            )?
        }
    };

    println!("{}", generated.text);
    let pages: Vec<String> = generated
        .context_page_ids
        .iter()
        .map(|id| id.to_string())
        .collect();
    println!(
        "answer: context pages [{}], {} context tokens",
        pages.join(", "),
        generated.context_token_count
    );
    Ok(())
}

pub fn rerank_command(config: &RunConfig, question: &str) -> CliResult<()> {
    let (corpus, _) = config.load_corpus()?;
    let index = load_index_artifact(config, &corpus)?;
    let query = pagerag_core::embed_text(question, &config.embedder)?;
    let result = index.top_k(&query, config.max_k())?;
    let candidates: Vec<(u32, &str)> = result
        .ranked
        .iter()
        .map(|(id, _)| (*id, corpus.get(*id).expect("index page").content.as_str()))
        .collect();

    let backend = config.llm.build_backend()?;
    let template = config.templates.rerank()?;
    let outcome: RerankResult = rerank(
        question,
        &candidates,
        backend.as_ref(),
        &template,
        &config.llm.chat_config(),
    )?;

    let fmt_ids = |ids: &[u32]| {
        ids.iter()
            .map(|id| id.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    };
    println!("original:     [{}]", fmt_ids(&result.page_ids()));
    println!("reranked:     [{}]", fmt_ids(&outcome.effective_ranking()));
    let hallucinated: Vec<String> = outcome
        .hallucinated
        .iter()
        .map(|id| id.to_string())
        .collect();
    println!("hallucinated: [{}]", hallucinated.join(", "));
    println!("omitted:      [{}]", fmt_ids(&outcome.omitted));
    println!(
        "rerank: {} candidates, {} hallucinated, {} omitted",
        candidates.len(),
        outcome.hallucinated.len(),
        outcome.omitted.len()
    );
    Ok(())
}

pub fn evaluate(config: &RunConfig, retriever: RetrieverArg, use_rerank: bool) -> CliResult<()> {
    if use_rerank && retriever == RetrieverArg::Graph {
        return Err(CliError::Usage(
            "--rerank applies to the vector retriever only".to_owned(),
        ));
    }
    ensure_out_dir(config)?;
    let (corpus, _) = config.load_corpus()?;
    let dataset = load_dataset_artifact(config)?;

    let backend = config.llm.build_backend()?;
    let answer_template = config.templates.answer()?;
    let chat_config = config.llm.chat_config();
    let generator = Generator {
        backend: backend.as_ref(),
        template: &answer_template,
        chat: &chat_config,
    };
    let opts = EvalOptions {
        k_values: config.k_values.clone(),
        context_k: None,
        token_scheme: config.token_scheme,
        ..EvalOptions::default()
    };

    // Artifacts and the rerank template must outlive the retriever enum.
    let index;
    let graph;
    let rerank_template;
    let eval_retriever = match (retriever, use_rerank) {
        (RetrieverArg::Vector, false) => {
            index = load_index_artifact(config, &corpus)?;
            EvalRetriever::Vector {
                index: &index,
                embedder: &config.embedder,
            }
        }
        (RetrieverArg::Vector, true) => {
            index = load_index_artifact(config, &corpus)?;
            rerank_template = config.templates.rerank()?;
            EvalRetriever::RerankedVector {
                index: &index,
                embedder: &config.embedder,
                backend: backend.as_ref(),
                template: &rerank_template,
                chat: &chat_config,
                candidates: config.max_k(),
            }
        }
        (RetrieverArg::Graph, _) => {
            graph = load_graph_artifact(config, &corpus)?;
            EvalRetriever::Graph {
                graph: &graph,
                params: config.graph_params(),
                embedder: &config.embedder,
            }
        }
    };

    let mut report = evaluate_run(&dataset, &corpus, &eval_retriever, &generator, &opts)?;
    report.config.config_hash = Some(config.config_hash());
    report.config.seed = Some(config.seed);

    let report_path = next_write_path(&config.out_dir, "report", "json");
    report.save(&report_path)?;

    print!("{}", render_tables(&[&report]));
    println!(
        "evaluate: {} questions, mean F1 {:.3}, {} incidents -> {}",
        report.n_questions,
        report.mean_f1,
        report.incidents.len(),
        report_path.display()
    );
    Ok(())
}

pub fn report(files: &[PathBuf]) -> CliResult<()> {
    let mut reports = Vec::with_capacity(files.len());
    for path in files {
        reports.push(EvalReport::load(path)?);
    }
    let mut corpus_ids: BTreeSet<&str> = reports
        .iter()
        .map(|r| r.config.corpus_id.as_str())
        .collect();
    if corpus_ids.len() > 1 {
        return Err(CliError::Config(format!(
            "refusing to mix reports from different corpora: {:?}",
            corpus_ids
        )));
    }
    let refs: Vec<&EvalReport> = reports.iter().collect();
    print!("{}", render_tables(&refs));
    println!(
        "report: {} run(s) over corpus {:?}",
        reports.len(),
        corpus_ids.pop_first().unwrap_or("<none>")
    );
    Ok(())
}
