//! Knowledge-graph retrieval with page provenance on every element.
//!
//! Entities and relations are extracted per page (by an LLM backend or a
//! deterministic rule-based extractor), merged into an immutable graph, and
//! queried by seeding on entity similarity, expanding along relations, and
//! collecting the page-anchored text units those entities appear in. Every
//! entity, relation, and text unit carries `document_ids`, so any retrieved
//! context can be traced back to printed pages.
//!
//! Unlike top-k retrieval there is no page-count control: context size is
//! governed by graph connectivity and the token budget.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Page};
use crate::embedder::{cosine_similarity, embed_text, EmbedError, EmbedderConfig};
use crate::evaluation::{context_token_count, TokenScheme};
use crate::generation::{
    chat, ChatBackend, ChatConfig, ChatRequest, GenerationError, PromptTemplate,
};

/// A knowledge point: a named concept with the pages it appears on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    /// Normalized name (case-folded, whitespace-collapsed); unique in the graph.
    pub entity_id: String,
    pub name: String,
    pub description: String,
    pub document_ids: BTreeSet<u32>,
}

/// A labeled edge between two entities, with page provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub source: String,
    pub target: String,
    pub label: String,
    pub document_ids: BTreeSet<u32>,
}

/// A page-anchored source snippet referencing the entities found on it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextUnit {
    pub unit_id: String,
    pub content: String,
    pub document_ids: BTreeSet<u32>,
    pub entity_ids: BTreeSet<String>,
}

/// Local-search parameters. `include_document_ids` must stay on for
/// page-accuracy evaluation; turning it off drops entity provenance markers
/// from the rendered context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphSearchParams {
    pub top_entities: usize,
    pub hops: usize,
    pub token_budget: usize,
    pub include_document_ids: bool,
    pub token_scheme: TokenScheme,
}

impl Default for GraphSearchParams {
    fn default() -> Self {
        GraphSearchParams {
            top_entities: 5,
            hops: 1,
            token_budget: 8000,
            include_document_ids: true,
            token_scheme: TokenScheme::Whitespace,
        }
    }
}

/// Page-traceable retrieval output: the collected entities, the surviving
/// text units, and the union of their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphContext {
    pub entities: Vec<Entity>,
    pub units: Vec<TextUnit>,
    pub page_ids: BTreeSet<u32>,
    pub token_count: usize,
    pub include_document_ids: bool,
}

impl GraphContext {
    fn empty(include_document_ids: bool) -> Self {
        GraphContext {
            entities: Vec::new(),
            units: Vec::new(),
            page_ids: BTreeSet::new(),
            token_count: 0,
            include_document_ids,
        }
    }

    /// Deterministic context text: entity lines (with provenance markers
    /// when enabled) followed by `[Page <id>]` unit blocks. `token_count`
    /// is the token count of exactly this text.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for entity in &self.entities {
            out.push_str("Entity: ");
            out.push_str(&entity.name);
            if !entity.description.is_empty() {
                out.push_str(". ");
                out.push_str(&entity.description);
            }
            if self.include_document_ids {
                for id in &entity.document_ids {
                    out.push_str(&format!(" [Page {id}]"));
                }
            }
            out.push('\n');
        }
        for unit in &self.units {
            out.push('\n');
            for id in &unit.document_ids {
                out.push_str(&format!("[Page {id}]"));
            }
            out.push('\n');
            out.push_str(&unit.content);
            out.push('\n');
        }
        out
    }

    /// Union of `document_ids` over every entity and unit in the context.
    pub fn provenance_union(&self) -> BTreeSet<u32> {
        self.entities
            .iter()
            .flat_map(|e| e.document_ids.iter().copied())
            .chain(
                self.units
                    .iter()
                    .flat_map(|u| u.document_ids.iter().copied()),
            )
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot build a graph from an empty corpus")]
    EmptyCorpus,
    #[error("graph has no entities")]
    EmptyGraph,
    #[error("extraction failed on page {page}: unparsable response: {raw}")]
    Extraction { page: u32, raw: String },
    #[error("extraction failed on {failed} of {total} pages (more than half)")]
    TooManyFailures { failed: usize, total: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error("graph file {path}: {message}")]
    Format { path: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl GraphError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        GraphError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn format(path: &Path, message: impl Into<String>) -> Self {
        GraphError::Format {
            path: path.display().to_string(),
            message: message.into(),
        }
    }
}

/// Entity identity: case-folded, whitespace-collapsed name.
pub fn entity_id_for(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Which extractor populates the graph.
pub enum Extractor<'a> {
    /// Deterministic pattern extractor: definition/theorem captures plus
    /// repeated capitalized multi-word terms; co-occurrence relations.
    RuleBased,
    /// LLM-backed extraction through the chat gateway.
    Llm {
        backend: &'a dyn ChatBackend,
        template: &'a PromptTemplate,
        chat: &'a ChatConfig,
    },
}

impl Extractor<'_> {
    pub fn label(&self) -> String {
        match self {
            Extractor::RuleBased => "rule-based".to_owned(),
            Extractor::Llm { chat, .. } => format!("llm:{}", chat.model_id),
        }
    }
}

fn definition_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\bdefinition\s+\d+(?:\.\d+)*[.:]?\s+(?:(?:a|an|the)\s+)?([a-zA-Z][a-zA-Z0-9' \-]{1,60}?)\s+(?:is|are|if|when|means|denotes|consists)\b",
        )
        .expect("valid regex")
    })
}

fn theorem_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(?:theorem|lemma|proposition|corollary|axiom)\s+\d+(?:\.\d+)*\s*\(([^()]{2,80})\)")
            .expect("valid regex")
    })
}

fn capitalized_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b([A-Z][a-z]+(?: [A-Z][a-z]+)+)\b").expect("valid regex"))
}

/// The line of `content` containing byte offset `at`, trimmed; used as a
/// rule-based entity description.
fn line_at(content: &str, at: usize) -> &str {
    let start = content[..at].rfind('\n').map(|i| i + 1).unwrap_or(0);
    let end = content[at..]
        .find('\n')
        .map(|i| at + i)
        .unwrap_or(content.len());
    content[start..end].trim()
}

/// Extract entities and relations from one page. Every emitted element
/// carries `document_ids = {page.page_id}`. The rule-based extractor is
/// deterministic and never errors.
pub fn extract_entities(
    page: &Page,
    extractor: &Extractor,
) -> Result<(Vec<Entity>, Vec<Relation>), GraphError> {
    match extractor {
        Extractor::RuleBased => Ok(extract_rule_based(page)),
        Extractor::Llm {
            backend,
            template,
            chat,
        } => extract_llm(page, *backend, template, chat),
    }
}

fn extract_rule_based(page: &Page) -> (Vec<Entity>, Vec<Relation>) {
    let content = &page.content;
    let mut entities: BTreeMap<String, Entity> = BTreeMap::new();
    let mut insert = |name: &str, description: &str| {
        let name = name.trim();
        if name.is_empty() {
            return;
        }
        let entity_id = entity_id_for(name);
        entities.entry(entity_id.clone()).or_insert_with(|| Entity {
            entity_id,
            name: name.to_owned(),
            description: description.to_owned(),
            document_ids: BTreeSet::from([page.page_id]),
        });
    };

    for captures in definition_re().captures_iter(content) {
        let term = captures.get(1).expect("capture group");
        insert(term.as_str(), line_at(content, term.start()));
    }
    for captures in theorem_re().captures_iter(content) {
        let name = captures.get(1).expect("capture group");
        insert(name.as_str(), line_at(content, name.start()));
    }
    // Repeated capitalized multi-word terms. Leading capitalized stopwords
    // ("The Peano Axioms") are stripped before counting.
    const STOPWORDS: [&str; 10] = [
        "the", "a", "an", "we", "in", "on", "it", "this", "if", "then",
    ];
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for captures in capitalized_re().captures_iter(content) {
        let words: Vec<&str> = captures
            .get(1)
            .expect("capture")
            .as_str()
            .split(' ')
            .skip_while(|w| STOPWORDS.contains(&w.to_lowercase().as_str()))
            .collect();
        if words.len() >= 2 {
            *counts.entry(words.join(" ")).or_insert(0) += 1;
        }
    }
    for (term, count) in counts {
        if count >= 2 {
            insert(&term, "");
        }
    }

    let entities: Vec<Entity> = entities.into_values().collect();
    // Co-occurrence relations between every pair of entities on the page.
    let mut relations = Vec::new();
    for i in 0..entities.len() {
        for j in (i + 1)..entities.len() {
            relations.push(Relation {
                source: entities[i].entity_id.clone(),
                target: entities[j].entity_id.clone(),
                label: "mentioned with".to_owned(),
                document_ids: BTreeSet::from([page.page_id]),
            });
        }
    }
    (entities, relations)
}

fn strip_code_fence(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(inner) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let inner = inner.strip_prefix("json").unwrap_or(inner);
    inner.trim_end_matches('`').trim()
}

fn extract_llm(
    page: &Page,
    backend: &dyn ChatBackend,
    template: &PromptTemplate,
    cfg: &ChatConfig,
) -> Result<(Vec<Entity>, Vec<Relation>), GraphError> {
    #[derive(Deserialize)]
    struct RawEntity {
        name: String,
        #[serde(default)]
        description: String,
    }
    #[derive(Deserialize)]
    struct RawRelation {
        source: String,
        target: String,
        #[serde(default)]
        label: String,
    }
    #[derive(Deserialize)]
    struct RawExtraction {
        #[serde(default)]
        entities: Vec<RawEntity>,
        #[serde(default)]
        relations: Vec<RawRelation>,
    }

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
    let raw = chat(&req, backend)?;
    let parsed: RawExtraction =
        serde_json::from_str(strip_code_fence(&raw)).map_err(|_| GraphError::Extraction {
            page: page.page_id,
            raw: raw.clone(),
        })?;

    let mut entities: BTreeMap<String, Entity> = BTreeMap::new();
    for raw_entity in parsed.entities {
        let name = raw_entity.name.trim().to_owned();
        if name.is_empty() {
            continue;
        }
        let entity_id = entity_id_for(&name);
        entities.entry(entity_id.clone()).or_insert(Entity {
            entity_id,
            name,
            description: raw_entity.description.trim().to_owned(),
            document_ids: BTreeSet::from([page.page_id]),
        });
    }
    let mut relations = Vec::new();
    for raw_relation in parsed.relations {
        let source = entity_id_for(&raw_relation.source);
        let target = entity_id_for(&raw_relation.target);
        // Relations must reference extracted entities; others are dropped.
        if !entities.contains_key(&source) || !entities.contains_key(&target) || source == target {
            continue;
        }
        let label = if raw_relation.label.trim().is_empty() {
            "related to".to_owned()
        } else {
            raw_relation.label.trim().to_owned()
        };
        relations.push(Relation {
            source,
            target,
            label,
            document_ids: BTreeSet::from([page.page_id]),
        });
    }
    Ok((entities.into_values().collect(), relations))
}

/// Per-page extraction failures recorded by [`KnowledgeGraph::build`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedPage {
    pub page_id: u32,
    pub message: String,
}

/// Build output: the graph plus the pages extraction skipped.
pub struct GraphBuild {
    pub graph: KnowledgeGraph,
    pub skipped: Vec<SkippedPage>,
}

/// An immutable knowledge graph over one corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    corpus_id: String,
    extractor: String,
    entities: BTreeMap<String, Entity>,
    relations: Vec<Relation>,
    units: Vec<TextUnit>, // ascending page order
    adjacency: BTreeMap<String, BTreeSet<String>>,
}

const GRAPH_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct GraphHeader {
    version: u32,
    kind: String,
    corpus_id: String,
    extractor: String,
    entity_count: usize,
    relation_count: usize,
    unit_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum GraphRecord {
    Entity(Entity),
    Relation(Relation),
    Unit(TextUnit),
}

impl KnowledgeGraph {
    /// Extract every page and merge the results. Entities deduplicate by
    /// `entity_id` with unioned `document_ids`; each successfully extracted
    /// page contributes one [`TextUnit`]. A failing page is recorded and
    /// skipped; more than half failing fails the build.
    pub fn build(corpus: &Corpus, extractor: &Extractor) -> Result<GraphBuild, GraphError> {
        if corpus.is_empty() {
            return Err(GraphError::EmptyCorpus);
        }
        let mut entities: BTreeMap<String, Entity> = BTreeMap::new();
        let mut relations: BTreeMap<(String, String, String), BTreeSet<u32>> = BTreeMap::new();
        let mut units = Vec::new();
        let mut skipped = Vec::new();

        for page in corpus.pages() {
            let (page_entities, page_relations) = match extract_entities(page, extractor) {
                Ok(extracted) => extracted,
                Err(e) => {
                    skipped.push(SkippedPage {
                        page_id: page.page_id,
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            let mut unit_entities = BTreeSet::new();
            for entity in page_entities {
                unit_entities.insert(entity.entity_id.clone());
                entities
                    .entry(entity.entity_id.clone())
                    .and_modify(|existing| {
                        existing.document_ids.extend(&entity.document_ids);
                        if existing.description.is_empty() && !entity.description.is_empty() {
                            existing.description = entity.description.clone();
                        }
                    })
                    .or_insert(entity);
            }
            for relation in page_relations {
                relations
                    .entry((relation.source, relation.target, relation.label))
                    .or_default()
                    .extend(relation.document_ids);
            }
            units.push(TextUnit {
                unit_id: format!("unit-{}", page.page_id),
                content: page.content.clone(),
                document_ids: BTreeSet::from([page.page_id]),
                entity_ids: unit_entities,
            });
        }

        if skipped.len() * 2 > corpus.len() {
            return Err(GraphError::TooManyFailures {
                failed: skipped.len(),
                total: corpus.len(),
            });
        }

        let relations: Vec<Relation> = relations
            .into_iter()
            .map(|((source, target, label), document_ids)| Relation {
                source,
                target,
                label,
                document_ids,
            })
            .collect();
        let graph = KnowledgeGraph::assemble(
            corpus.corpus_id().to_owned(),
            extractor.label(),
            entities,
            relations,
            units,
        );
        Ok(GraphBuild { graph, skipped })
    }

    fn assemble(
        corpus_id: String,
        extractor: String,
        entities: BTreeMap<String, Entity>,
        relations: Vec<Relation>,
        units: Vec<TextUnit>,
    ) -> Self {
        let mut adjacency: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for relation in &relations {
            adjacency
                .entry(relation.source.clone())
                .or_default()
                .insert(relation.target.clone());
            adjacency
                .entry(relation.target.clone())
                .or_default()
                .insert(relation.source.clone());
        }
        KnowledgeGraph {
            corpus_id,
            extractor,
            entities,
            relations,
            units,
            adjacency,
        }
    }

    pub fn corpus_id(&self) -> &str {
        &self.corpus_id
    }

    pub fn extractor(&self) -> &str {
        &self.extractor
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn unit_count(&self) -> usize {
        self.units.len()
    }

    pub fn entity(&self, entity_id: &str) -> Option<&Entity> {
        self.entities.get(entity_id)
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn units(&self) -> &[TextUnit] {
        &self.units
    }

    /// Graph-augmented retrieval. Seeds the `top_entities` most similar
    /// entities to the query (cosine over name+description embeddings),
    /// expands `hops` hops along relations, collects the text units of the
    /// collected entities ordered by best-seed similarity (ties by page),
    /// and keeps the in-order prefix of units fitting the token budget.
    ///
    /// There is deliberately no `k`: context size is governed by graph
    /// connectivity and `token_budget` only.
    pub fn retrieve(
        &self,
        query: &str,
        params: &GraphSearchParams,
        embedder: &EmbedderConfig,
    ) -> Result<GraphContext, GraphError> {
        if self.entities.is_empty() {
            return Err(GraphError::EmptyGraph);
        }
        let query_vec = embed_text(query, embedder)?;
        if query_vec.is_zero() {
            return Ok(GraphContext::empty(params.include_document_ids));
        }

        // Similarity of every entity to the query.
        let mut similarity: BTreeMap<&str, f64> = BTreeMap::new();
        for entity in self.entities.values() {
            let text = format!("{} {}", entity.name, entity.description);
            let vector = embed_text(&text, embedder)?;
            similarity.insert(
                entity.entity_id.as_str(),
                cosine_similarity(&query_vec.values, &vector.values),
            );
        }

        let mut by_score: Vec<(&str, f64)> = similarity.iter().map(|(id, s)| (*id, *s)).collect();
        by_score.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let seeds: Vec<&str> = by_score
            .iter()
            .take(params.top_entities)
            .map(|(id, _)| *id)
            .collect();

        // Hop expansion along relations.
        let mut collected: BTreeSet<&str> = seeds.iter().copied().collect();
        let mut frontier: BTreeSet<&str> = collected.clone();
        for _ in 0..params.hops {
            let mut next: BTreeSet<&str> = BTreeSet::new();
            for id in &frontier {
                if let Some(neighbors) = self.adjacency.get(*id) {
                    for neighbor in neighbors {
                        if !collected.contains(neighbor.as_str()) {
                            next.insert(neighbor.as_str());
                        }
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            collected.extend(next.iter().copied());
            frontier = next;
        }

        // Context entities ordered by similarity, ties by id.
        let mut context_entities: Vec<&Entity> =
            collected.iter().map(|id| &self.entities[*id]).collect();
        context_entities.sort_by(|a, b| {
            similarity[b.entity_id.as_str()]
                .total_cmp(&similarity[a.entity_id.as_str()])
                .then_with(|| a.entity_id.cmp(&b.entity_id))
        });

        // Units referencing any collected entity, keyed by their best
        // entity's similarity so the most relevant pages are dropped last.
        let mut scored_units: Vec<(&TextUnit, f64, u32)> = self
            .units
            .iter()
            .filter_map(|unit| {
                let best = unit
                    .entity_ids
                    .iter()
                    .filter(|id| collected.contains(id.as_str()))
                    .map(|id| similarity[id.as_str()])
                    .max_by(|a, b| a.total_cmp(b));
                let first_page = unit.document_ids.iter().next().copied().unwrap_or(0);
                best.map(|score| (unit, score, first_page))
            })
            .collect();
        scored_units.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.2.cmp(&b.2)));

        let mut kept_units: Vec<TextUnit> = Vec::new();
        let mut budget_used = 0usize;
        for (unit, _, _) in scored_units {
            let cost = context_token_count(&unit.content, params.token_scheme);
            if budget_used + cost > params.token_budget {
                break;
            }
            budget_used += cost;
            kept_units.push(unit.clone());
        }

        let mut context = GraphContext {
            entities: context_entities.into_iter().cloned().collect(),
            units: kept_units,
            page_ids: BTreeSet::new(),
            token_count: 0,
            include_document_ids: params.include_document_ids,
        };
        context.page_ids = context.provenance_union();
        context.token_count = context_token_count(&context.render(), params.token_scheme);
        Ok(context)
    }

    /// Line-delimited persistence: a header, then `entity`, `relation`, and
    /// `unit` records, each carrying its `document_ids`.
    pub fn save(&self, path: &Path, config_hash: Option<&str>) -> Result<(), GraphError> {
        let file = fs::File::create(path).map_err(|e| GraphError::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = GraphHeader {
            version: GRAPH_FORMAT_VERSION,
            kind: "header".to_owned(),
            corpus_id: self.corpus_id.clone(),
            extractor: self.extractor.clone(),
            entity_count: self.entities.len(),
            relation_count: self.relations.len(),
            unit_count: self.units.len(),
            config_hash: config_hash.map(str::to_owned),
        };
        writeln!(w, "{}", serde_json::to_string(&header).expect("header"))
            .map_err(|e| GraphError::io(path, e))?;
        for entity in self.entities.values() {
            let record = GraphRecord::Entity(entity.clone());
            writeln!(w, "{}", serde_json::to_string(&record).expect("record"))
                .map_err(|e| GraphError::io(path, e))?;
        }
        for relation in &self.relations {
            let record = GraphRecord::Relation(relation.clone());
            writeln!(w, "{}", serde_json::to_string(&record).expect("record"))
                .map_err(|e| GraphError::io(path, e))?;
        }
        for unit in &self.units {
            let record = GraphRecord::Unit(unit.clone());
            writeln!(w, "{}", serde_json::to_string(&record).expect("record"))
                .map_err(|e| GraphError::io(path, e))?;
        }
        w.flush().map_err(|e| GraphError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        let text = fs::read_to_string(path).map_err(|e| GraphError::io(path, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header_line = lines
            .next()
            .ok_or_else(|| GraphError::format(path, "empty graph file"))?;
        let header: GraphHeader = serde_json::from_str(header_line)
            .map_err(|e| GraphError::format(path, format!("bad header: {e}")))?;
        if header.version != GRAPH_FORMAT_VERSION {
            return Err(GraphError::format(
                path,
                format!("unsupported version {}", header.version),
            ));
        }
        let mut entities = BTreeMap::new();
        let mut relations = Vec::new();
        let mut units = Vec::new();
        for line in lines {
            let record: GraphRecord = serde_json::from_str(line)
                .map_err(|e| GraphError::format(path, format!("bad record: {e}")))?;
            match record {
                GraphRecord::Entity(e) => {
                    entities.insert(e.entity_id.clone(), e);
                }
                GraphRecord::Relation(r) => relations.push(r),
                GraphRecord::Unit(u) => units.push(u),
            }
        }
        if entities.len() != header.entity_count
            || relations.len() != header.relation_count
            || units.len() != header.unit_count
        {
            return Err(GraphError::format(
                path,
                format!(
                    "header counts ({}, {}, {}) do not match records ({}, {}, {})",
                    header.entity_count,
                    header.relation_count,
                    header.unit_count,
                    entities.len(),
                    relations.len(),
                    units.len()
                ),
            ));
        }
        units.sort_by_key(|u| u.document_ids.iter().next().copied().unwrap_or(0));
        Ok(KnowledgeGraph::assemble(
            header.corpus_id,
            header.extractor,
            entities,
            relations,
            units,
        ))
    }
}
