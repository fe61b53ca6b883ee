//! One embedding per page and exact top-k cosine retrieval.
//!
//! Search is exhaustive by design: corpora are textbook-scale (hundreds of
//! pages) and exactness keeps the ranking testable against a brute-force
//! oracle. Ranking order is total: cosine descending, then page id
//! ascending, so results are reproducible bit for bit.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::embedder::{self, cosine_similarity, EmbedError, EmbedderConfig, EmbeddingVector};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("dimension mismatch: index has {index}, query has {query}")]
    DimensionMismatch { index: usize, query: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("index file {path}: {message}")]
    Format { path: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl IndexError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IndexError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn format(path: &Path, message: impl Into<String>) -> Self {
        IndexError::Format {
            path: path.display().to_string(),
            message: message.into(),
        }
    }
}

/// Ranked pages for one query: scores non-increasing, page ids distinct,
/// length `min(k, corpus size)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub ranked: Vec<(u32, f64)>,
    pub k: usize,
}

impl RetrievalResult {
    pub fn with_query_id(mut self, query_id: impl Into<String>) -> Self {
        self.query_id = query_id.into();
        self
    }

    pub fn page_ids(&self) -> Vec<u32> {
        self.ranked.iter().map(|(id, _)| *id).collect()
    }

    pub fn page_set(&self) -> BTreeSet<u32> {
        self.ranked.iter().map(|(id, _)| *id).collect()
    }

    /// Is `gold` among the first `k` ranked pages?
    pub fn hit_at(&self, gold: u32, k: usize) -> bool {
        self.ranked.iter().take(k).any(|(id, _)| *id == gold)
    }
}

/// Immutable page-vector index for one corpus under one embedding model.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    corpus_id: String,
    model_id: String,
    dimension: usize,
    entries: Vec<(u32, Vec<f64>)>, // ascending page_id
}

const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct IndexHeader {
    version: u32,
    corpus_id: String,
    model_id: String,
    dimension: usize,
    count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

#[derive(Debug, Deserialize)]
struct IndexEntry {
    page_id: u32,
    vector: Vec<f64>,
}

impl VectorIndex {
    /// Embed every page of `corpus` and build the index. One entry per
    /// page; deterministic under the local-hash backend.
    pub fn build(corpus: &Corpus, cfg: &EmbedderConfig) -> Result<Self, IndexError> {
        if corpus.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        let texts: Vec<String> = corpus
            .pages()
            .iter()
            .map(|p| {
                if cfg.include_title && !p.title.is_empty() {
                    format!("{}\n{}", p.title, p.content)
                } else {
                    p.content.clone()
                }
            })
            .collect();
        let vectors = embedder::embed_batch(&texts, cfg)?;
        let dimension = vectors[0].dimension();
        let entries = corpus
            .page_ids()
            .zip(vectors)
            .map(|(id, v)| (id, v.values))
            .collect();
        Ok(VectorIndex {
            corpus_id: corpus.corpus_id().to_owned(),
            model_id: cfg.model_id.clone(),
            dimension,
            entries,
        })
    }

    pub fn corpus_id(&self) -> &str {
        &self.corpus_id
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn page_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|(id, _)| *id)
    }

    pub fn vector(&self, page_id: u32) -> Option<&[f64]> {
        self.entries
            .binary_search_by_key(&page_id, |(id, _)| *id)
            .ok()
            .map(|i| self.entries[i].1.as_slice())
    }

    /// Exact top-k by cosine similarity, ties broken by ascending page id.
    /// Zero query or zero page vectors contribute similarity 0.
    ///
    /// Selection runs over a bounded min-heap, not a full sort; the
    /// exhaustive-sort oracle in the tests is the independent check.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<RetrievalResult, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if query.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                index: self.dimension,
                query: query.dimension(),
            });
        }
        let mut heap: BinaryHeap<std::cmp::Reverse<Candidate>> = BinaryHeap::with_capacity(k + 1);
        for (page_id, vector) in &self.entries {
            let candidate = Candidate {
                score: cosine_similarity(&query.values, vector),
                page_id: *page_id,
            };
            if heap.len() < k {
                heap.push(std::cmp::Reverse(candidate));
            } else if candidate > heap.peek().expect("non-empty").0 {
                heap.pop();
                heap.push(std::cmp::Reverse(candidate));
            }
        }
        let mut survivors: Vec<Candidate> = heap.into_iter().map(|r| r.0).collect();
        survivors.sort_by(|a, b| b.cmp(a));
        Ok(RetrievalResult {
            query_id: String::new(),
            ranked: survivors
                .into_iter()
                .map(|c| (c.page_id, c.score))
                .collect(),
            k,
        })
    }

    /// Versioned line-delimited persistence: a header line, then one entry
    /// per page with the vector printed to 9 significant digits.
    pub fn save(&self, path: &Path, config_hash: Option<&str>) -> Result<(), IndexError> {
        let file = fs::File::create(path).map_err(|e| IndexError::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = IndexHeader {
            version: INDEX_FORMAT_VERSION,
            corpus_id: self.corpus_id.clone(),
            model_id: self.model_id.clone(),
            dimension: self.dimension,
            count: self.entries.len(),
            config_hash: config_hash.map(str::to_owned),
        };
        let header_line = serde_json::to_string(&header).expect("header serializes");
        writeln!(w, "{header_line}").map_err(|e| IndexError::io(path, e))?;
        for (page_id, vector) in &self.entries {
            let floats: Vec<String> = vector.iter().map(|v| format!("{v:.8e}")).collect();
            writeln!(
                w,
                "{{\"page_id\":{page_id},\"vector\":[{}]}}",
                floats.join(",")
            )
            .map_err(|e| IndexError::io(path, e))?;
        }
        w.flush().map_err(|e| IndexError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let text = fs::read_to_string(path).map_err(|e| IndexError::io(path, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header_line = lines
            .next()
            .ok_or_else(|| IndexError::format(path, "empty index file"))?;
        let header: IndexHeader = serde_json::from_str(header_line)
            .map_err(|e| IndexError::format(path, format!("bad header: {e}")))?;
        if header.version != INDEX_FORMAT_VERSION {
            return Err(IndexError::format(
                path,
                format!("unsupported version {}", header.version),
            ));
        }
        let mut entries = Vec::with_capacity(header.count);
        for line in lines {
            let entry: IndexEntry = serde_json::from_str(line)
                .map_err(|e| IndexError::format(path, format!("bad entry: {e}")))?;
            if entry.vector.len() != header.dimension {
                return Err(IndexError::format(
                    path,
                    format!(
                        "page {} has dimension {}, header says {}",
                        entry.page_id,
                        entry.vector.len(),
                        header.dimension
                    ),
                ));
            }
            entries.push((entry.page_id, entry.vector));
        }
        if entries.len() != header.count {
            return Err(IndexError::format(
                path,
                format!(
                    "header count {} but {} entries",
                    header.count,
                    entries.len()
                ),
            ));
        }
        entries.sort_by_key(|(id, _)| *id);
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(IndexError::format(
                    path,
                    format!("duplicate page_id {}", pair[0].0),
                ));
            }
        }
        Ok(VectorIndex {
            corpus_id: header.corpus_id,
            model_id: header.model_id,
            dimension: header.dimension,
            entries,
        })
    }
}

/// Ranking order: higher score wins, lower page id wins ties. Scores are
/// finite by construction (cosine of finite vectors, 0 for zero norms).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    score: f64,
    page_id: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.page_id.cmp(&self.page_id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Page;
    use crate::embedder::embed_text;
    use proptest::prelude::*;

    fn corpus_from(contents: &[&str]) -> Corpus {
        let pages: Vec<Page> = contents
            .iter()
            .enumerate()
            .map(|(i, c)| Page {
                page_id: (i + 1) as u32,
                title: String::new(),
                content: (*c).to_owned(),
            })
            .collect();
        Corpus::new("test", pages).unwrap()
    }

    /// Independent oracle: score every page, full sort, take the prefix.
    fn exhaustive_oracle(
        index: &VectorIndex,
        query: &EmbeddingVector,
        k: usize,
    ) -> Vec<(u32, f64)> {
        let mut scored: Vec<(u32, f64)> = index
            .page_ids()
            .map(|id| {
                let v = index.vector(id).unwrap();
                let mut dot = 0.0;
                let mut nq = 0.0;
                let mut nv = 0.0;
                for (a, b) in query.values.iter().zip(v) {
                    dot += a * b;
                    nq += a * a;
                    nv += b * b;
                }
                let score = if nq == 0.0 || nv == 0.0 {
                    0.0
                } else {
                    dot / (nq.sqrt() * nv.sqrt())
                };
                (id, score)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }

    #[test]
    fn three_page_corpus_builds_three_entries() {
        let corpus = corpus_from(&["alpha", "beta", "gamma"]);
        let index = VectorIndex::build(&corpus, &EmbedderConfig::local_hash(16)).unwrap();
        assert_eq!(index.len(), 3);
        assert_eq!(index.page_ids().collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let corpus = Corpus::new("empty", vec![]).unwrap();
        assert!(matches!(
            VectorIndex::build(&corpus, &EmbedderConfig::local_hash(16)),
            Err(IndexError::EmptyCorpus)
        ));
    }

    #[test]
    fn rebuild_is_byte_identical_on_disk() {
        let corpus = corpus_from(&["alpha beta", "gamma delta", "epsilon zeta"]);
        let cfg = EmbedderConfig::local_hash(16);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        VectorIndex::build(&corpus, &cfg)
            .unwrap()
            .save(&p1, Some("h"))
            .unwrap();
        VectorIndex::build(&corpus, &cfg)
            .unwrap()
            .save(&p2, Some("h"))
            .unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn save_load_round_trip_validates_dimension_and_count() {
        let corpus = corpus_from(&["alpha beta", "gamma delta"]);
        let cfg = EmbedderConfig::local_hash(8);
        let index = VectorIndex::build(&corpus, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.jsonl");
        index.save(&path, None).unwrap();
        let loaded = VectorIndex::load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.dimension(), 8);
        assert_eq!(loaded.corpus_id(), "test");

        // Corrupt the count and expect a format error.
        let mut text = fs::read_to_string(&path).unwrap();
        text = text.replace("\"count\":2", "\"count\":3");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            VectorIndex::load(&path),
            Err(IndexError::Format { .. })
        ));
    }

    #[test]
    fn self_similarity_ranks_the_page_first_with_score_one() {
        let corpus = corpus_from(&["alpha beta", "gamma delta", "epsilon zeta"]);
        let cfg = EmbedderConfig::local_hash(32);
        let index = VectorIndex::build(&corpus, &cfg).unwrap();
        let query = EmbeddingVector {
            values: index.vector(2).unwrap().to_vec(),
            model_id: cfg.model_id.clone(),
        };
        let result = index.top_k(&query, 1).unwrap();
        assert_eq!(result.ranked.len(), 1);
        assert_eq!(result.ranked[0].0, 2);
        assert!((result.ranked[0].1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn k_beyond_corpus_size_returns_all_pages_sorted() {
        let corpus = corpus_from(&["alpha", "beta", "gamma"]);
        let cfg = EmbedderConfig::local_hash(16);
        let index = VectorIndex::build(&corpus, &cfg).unwrap();
        let query = embed_text("alpha", &cfg).unwrap();
        let result = index.top_k(&query, 10).unwrap();
        assert_eq!(result.ranked.len(), 3);
        assert!(result.ranked.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn identical_pages_tie_break_by_ascending_page_id() {
        let corpus = corpus_from(&["same text", "other words", "same text"]);
        let cfg = EmbedderConfig::local_hash(16);
        let index = VectorIndex::build(&corpus, &cfg).unwrap();
        let query = embed_text("same text", &cfg).unwrap();
        let result = index.top_k(&query, 3).unwrap();
        assert_eq!(result.ranked[0].0, 1);
        assert_eq!(result.ranked[1].0, 3);
        assert_eq!(result.ranked[0].1, result.ranked[1].1);
    }

    #[test]
    fn zero_query_scores_everything_zero_in_page_order() {
        let corpus = corpus_from(&["alpha", "beta", "gamma"]);
        let cfg = EmbedderConfig::local_hash(16);
        let index = VectorIndex::build(&corpus, &cfg).unwrap();
        let query = embed_text("", &cfg).unwrap();
        let result = index.top_k(&query, 3).unwrap();
        assert_eq!(result.page_ids(), vec![1, 2, 3]);
        assert!(result.ranked.iter().all(|(_, s)| *s == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_a_contract_error() {
        let corpus = corpus_from(&["alpha"]);
        let index = VectorIndex::build(&corpus, &EmbedderConfig::local_hash(16)).unwrap();
        let query = embed_text("alpha", &EmbedderConfig::local_hash(8)).unwrap();
        assert!(matches!(
            index.top_k(&query, 1),
            Err(IndexError::DimensionMismatch {
                index: 16,
                query: 8
            })
        ));
    }

    #[test]
    fn fifty_page_random_corpus_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let contents: Vec<String> = (0..50)
            .map(|_| {
                let n = rng.random_range(1..12);
                (0..n)
                    .map(|_| format!("w{}", rng.random_range(0..40)))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let refs: Vec<&str> = contents.iter().map(String::as_str).collect();
        let corpus = corpus_from(&refs);
        let cfg = EmbedderConfig::local_hash(24);
        let index = VectorIndex::build(&corpus, &cfg).unwrap();
        let query = embed_text("w1 w2 w3", &cfg).unwrap();
        let result = index.top_k(&query, 5).unwrap();
        assert_eq!(result.ranked, exhaustive_oracle(&index, &query, 5));
    }

    proptest! {
        /// Prefix property: top-k' is the k'-prefix of top-k, and a hit at k
        /// stays a hit for every larger cutoff.
        #[test]
        fn prefix_and_monotone_hit(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(3..30usize);
            let contents: Vec<String> = (0..n)
                .map(|_| {
                    let len = rng.random_range(1..8);
                    (0..len).map(|_| format!("t{}", rng.random_range(0..15)))
                        .collect::<Vec<_>>().join(" ")
                })
                .collect();
            let refs: Vec<&str> = contents.iter().map(String::as_str).collect();
            let corpus = corpus_from(&refs);
            let cfg = EmbedderConfig::local_hash(16);
            let index = VectorIndex::build(&corpus, &cfg).unwrap();
            let query = embed_text(&format!("t{} t{}", rng.random_range(0..15), rng.random_range(0..15)), &cfg).unwrap();

            let full = index.top_k(&query, n).unwrap();
            for k in 1..n {
                let partial = index.top_k(&query, k).unwrap();
                prop_assert_eq!(&partial.ranked[..], &full.ranked[..k]);
            }
            let gold = rng.random_range(1..=n as u32);
            let mut seen = false;
            for k in 1..=n {
                let hit = full.hit_at(gold, k);
                prop_assert!(!seen || hit, "hit at smaller k must persist");
                seen = hit;
            }
        }
    }
}
