//! Cross-module pipeline tests on synthetic corpora: ingest, index, graph,
//! retrieve, generate, and score together.

use std::collections::BTreeSet;

use pagerag_core::{
    answer_question, evaluate_run, filter_dataset, generate_qa, load_corpus, token_f1, ChatConfig,
    Corpus, EmbedderConfig, EvalOptions, EvalRetriever, Extractor, Generator, GraphSearchParams,
    IngestFilters, KnowledgeGraph, MockChat, MockRule, Page, PromptTemplate, QaRecord,
    RetrievedContext, TokenScheme, VectorIndex,
};

fn page(id: u32, content: &str) -> Page {
    Page {
        page_id: id,
        title: format!("Chapter {id}"),
        content: content.to_owned(),
    }
}

/// Pages with disjoint vocabularies; the first sentence doubles as the gold
/// question and answer.
fn disjoint_corpus(n: u32) -> (Corpus, Vec<QaRecord>) {
    let pages: Vec<Page> = (1..=n)
        .map(|i| {
            page(
                i,
                &format!("uniq{i}a uniq{i}b uniq{i}c fact{i}. Trailing uniq{i}d text."),
            )
        })
        .collect();
    let corpus = Corpus::new("pipeline", pages).unwrap();
    let dataset = corpus
        .pages()
        .iter()
        .map(|p| {
            let sentence = format!("uniq{0}a uniq{0}b uniq{0}c fact{0}.", p.page_id);
            QaRecord {
                page: p.page_id,
                title: p.title.clone(),
                content: p.content.clone(),
                question: sentence.clone(),
                answer: sentence,
            }
        })
        .collect();
    (corpus, dataset)
}

#[test]
fn retrieval_results_always_resolve_in_the_corpus() {
    let (corpus, dataset) = disjoint_corpus(30);
    let embedder = EmbedderConfig::local_hash(64);
    let index = VectorIndex::build(&corpus, &embedder).unwrap();
    for record in &dataset {
        let query = pagerag_core::embed_text(&record.question, &embedder).unwrap();
        let result = index.top_k(&query, 7).unwrap();
        for (page_id, _) in &result.ranked {
            assert!(corpus.contains(*page_id));
        }
    }
}

#[test]
fn echo_context_answer_scores_f1_one_when_context_holds_the_gold() {
    let (corpus, dataset) = disjoint_corpus(10);
    let embedder = EmbedderConfig::local_hash(64);
    let index = VectorIndex::build(&corpus, &embedder).unwrap();
    let record = &dataset[4];
    let query = pagerag_core::embed_text(&record.question, &embedder).unwrap();
    let result = index.top_k(&query, 1).unwrap();
    assert_eq!(result.ranked[0].0, record.page);

    let pages: Vec<(u32, &str)> = result
        .ranked
        .iter()
        .map(|(id, _)| (*id, corpus.get(*id).unwrap().content.as_str()))
        .collect();
    let mock = MockChat::new(MockRule::EchoFirstPageSentence);
    let answer = answer_question(
        &record.question,
        &RetrievedContext::Pages(pages),
        &mock,
        &PromptTemplate::answer_default(),
        TokenScheme::Whitespace,
        &ChatConfig::default(),
    )
    .unwrap();
    assert_eq!(token_f1(&record.answer, &answer.text).f1, 1.0);
    assert_eq!(answer.context_page_ids, BTreeSet::from([record.page]));
}

#[test]
fn closed_book_fixed_answer_scores_zero_against_disjoint_gold() {
    let (_corpus, dataset) = disjoint_corpus(3);
    let mock = MockChat::fixed("entirely unrelated words only");
    let answer = answer_question(
        &dataset[0].question,
        &RetrievedContext::ClosedBook,
        &mock,
        &PromptTemplate::answer_default(),
        TokenScheme::Whitespace,
        &ChatConfig::default(),
    )
    .unwrap();
    assert_eq!(token_f1(&dataset[0].answer, &answer.text).f1, 0.0);
    assert_eq!(answer.context_token_count, 0);
}

/// Hub corpus: one entity shared by every page. Graph retrieval pulls in
/// every hub page, so its context dwarfs top-1 vector retrieval.
fn hub_corpus(n: u32) -> Corpus {
    let pages: Vec<Page> = (1..=n)
        .map(|i| {
            page(
                i,
                &format!(
                    "Hub Concept applies here. Hub Concept again. Local uniq{i}x uniq{i}y uniq{i}z content."
                ),
            )
        })
        .collect();
    Corpus::new("hub", pages).unwrap()
}

#[test]
fn graph_context_exceeds_top1_vector_context_on_hub_corpus() {
    let corpus = hub_corpus(10);
    let embedder = EmbedderConfig::local_hash(64);
    let build = KnowledgeGraph::build(&corpus, &Extractor::RuleBased).unwrap();
    let hub = build.graph.entity("hub concept").unwrap();
    assert_eq!(hub.document_ids.len(), 10);

    let query = "Hub Concept applies";
    let graph_ctx = build
        .graph
        .retrieve(query, &GraphSearchParams::default(), &embedder)
        .unwrap();

    let index = VectorIndex::build(&corpus, &embedder).unwrap();
    let query_vec = pagerag_core::embed_text(query, &embedder).unwrap();
    let top1 = index.top_k(&query_vec, 1).unwrap();
    let pages: Vec<(u32, &str)> = top1
        .ranked
        .iter()
        .map(|(id, _)| (*id, corpus.get(*id).unwrap().content.as_str()))
        .collect();
    let req = pagerag_core::assemble_context(
        &RetrievedContext::Pages(pages),
        query,
        &PromptTemplate::answer_default(),
        TokenScheme::Whitespace,
        &ChatConfig::default(),
    )
    .unwrap();

    assert!(
        graph_ctx.token_count > req.context_token_count,
        "graph context {} should exceed top-1 vector context {}",
        graph_ctx.token_count,
        req.context_token_count
    );
    // And the graph context has no k: it covers every hub page.
    assert_eq!(graph_ctx.page_ids.len(), 10);
}

#[test]
fn generate_filter_evaluate_round_trip() {
    let (corpus, _) = disjoint_corpus(20);
    let qa_mock = MockChat::new(MockRule::QaFromPage);
    let generation = generate_qa(
        &corpus,
        &qa_mock,
        &PromptTemplate::qa_default(),
        &ChatConfig::default(),
    )
    .unwrap();
    assert_eq!(generation.records.len(), 20);

    // Range cut 20 -> 15, exclusions 15 -> 12.
    let filters = IngestFilters::include_range(3, 17);
    let exclusions: BTreeSet<u32> = BTreeSet::from([5, 9, 12]);
    let (kept, removed) = filter_dataset(&generation.records, &filters, &exclusions);
    assert_eq!(kept.len(), 12);
    assert_eq!(removed.len(), 8);

    let embedder = EmbedderConfig::local_hash(64);
    let index = VectorIndex::build(&corpus, &embedder).unwrap();
    let answer_mock = MockChat::new(MockRule::EchoFirstPageSentence);
    let template = PromptTemplate::answer_default();
    let chat_cfg = ChatConfig::default();
    let generator = Generator {
        backend: &answer_mock,
        template: &template,
        chat: &chat_cfg,
    };
    let opts = EvalOptions {
        k_values: vec![1, 3, 5, 10],
        context_k: Some(1),
        ..EvalOptions::default()
    };
    let report = evaluate_run(
        &kept,
        &corpus,
        &EvalRetriever::Vector {
            index: &index,
            embedder: &embedder,
        },
        &generator,
        &opts,
    )
    .unwrap();
    assert_eq!(report.n_questions, 12);
    assert_eq!(report.accuracy_at[&1], 1.0);
    assert_eq!(report.mean_f1, 1.0);
}

#[test]
fn graph_evaluation_scores_set_accuracy() {
    let corpus = {
        let pages: Vec<Page> = (1..=6)
            .map(|i| {
                page(
                    i,
                    &format!(
                        "Definition {i}.1. A term{i} concept is described. Body uniq{i}q uniq{i}r."
                    ),
                )
            })
            .collect();
        Corpus::new("graph-eval", pages).unwrap()
    };
    let dataset: Vec<QaRecord> = corpus
        .pages()
        .iter()
        .map(|p| QaRecord {
            page: p.page_id,
            title: String::new(),
            content: String::new(),
            question: format!("term{0} concept uniq{0}q", p.page_id),
            answer: format!("A term{} concept.", p.page_id),
        })
        .collect();
    let build = KnowledgeGraph::build(&corpus, &Extractor::RuleBased).unwrap();
    let embedder = EmbedderConfig::local_hash(64);
    let answer_mock = MockChat::new(MockRule::EchoFirstPageSentence);
    let template = PromptTemplate::answer_default();
    let chat_cfg = ChatConfig::default();
    let generator = Generator {
        backend: &answer_mock,
        template: &template,
        chat: &chat_cfg,
    };
    let report = evaluate_run(
        &dataset,
        &corpus,
        &EvalRetriever::Graph {
            graph: &build.graph,
            params: GraphSearchParams::default(),
            embedder: &embedder,
        },
        &generator,
        &EvalOptions::default(),
    )
    .unwrap();
    assert!(
        report.accuracy_at.is_empty(),
        "graph runs have no k columns"
    );
    let set_accuracy = report.set_accuracy.expect("graph accuracy");
    assert!(set_accuracy > 0.0);
    assert!(report.mean_context_tokens > 0.0);
}

#[test]
fn full_scale_counts_hold_at_the_published_sizes() {
    // 628 raw pages -> one candidate QA record per page.
    let (raw_corpus, _) = disjoint_corpus(628);
    let qa_mock = MockChat::new(MockRule::QaFromPage);
    let generation = generate_qa(
        &raw_corpus,
        &qa_mock,
        &PromptTemplate::qa_default(),
        &ChatConfig::default(),
    )
    .unwrap();
    assert_eq!(generation.records.len(), 628);

    // A 477-page body corpus indexes to 477 entries and 477 text units.
    let (corpus, _) = disjoint_corpus(477);
    let embedder = EmbedderConfig::local_hash(32);
    let index = VectorIndex::build(&corpus, &embedder).unwrap();
    assert_eq!(index.len(), 477);
    let build = KnowledgeGraph::build(&corpus, &Extractor::RuleBased).unwrap();
    assert_eq!(build.graph.unit_count(), 477);
}

#[test]
fn ingest_artifact_feeds_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, _) = disjoint_corpus(5);
    let artifact = dir.path().join("corpus.jsonl");
    corpus.save(&artifact, Some("abc123")).unwrap();
    let (reloaded, report) = load_corpus(&artifact, &IngestFilters::default()).unwrap();
    assert!(report.rejected.is_empty());
    assert_eq!(reloaded, corpus);

    let embedder = EmbedderConfig::local_hash(32);
    let index = VectorIndex::build(&reloaded, &embedder).unwrap();
    assert_eq!(index.len(), 5);
}
