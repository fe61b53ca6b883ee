//! Synthetic corpus generators shared by the benchmarks.

use pagerag_core::{Corpus, Page};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Random pages drawn from a bounded vocabulary; `words_per_page` controls
/// page length.
pub fn random_corpus(seed: u64, pages: usize, words_per_page: usize) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pages: Vec<Page> = (1..=pages as u32)
        .map(|id| {
            let words: Vec<String> = (0..words_per_page)
                .map(|_| format!("w{}", rng.random_range(0..2000)))
                .collect();
            Page {
                page_id: id,
                title: format!("Chapter {id}"),
                content: words.join(" "),
            }
        })
        .collect();
    Corpus::new(format!("bench-{seed}"), pages).expect("valid corpus")
}

/// A corpus the rule-based extractor finds structure in: one definition per
/// page plus a shared recurring term.
pub fn structured_corpus(pages: usize) -> Corpus {
    let pages: Vec<Page> = (1..=pages as u32)
        .map(|id| Page {
            page_id: id,
            title: String::new(),
            content: format!(
                "Definition {id}.1. A concept{id} term is introduced. \
                 Shared Notion appears. Shared Notion again. Body text for page {id}."
            ),
        })
        .collect();
    Corpus::new("bench-structured", pages).expect("valid corpus")
}

/// A random whitespace-delimited query over the same vocabulary.
pub fn random_query(seed: u64, words: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..words)
        .map(|_| format!("w{}", rng.random_range(0..2000)))
        .collect::<Vec<_>>()
        .join(" ")
}
