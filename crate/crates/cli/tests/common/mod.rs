//! Shared fixtures for CLI integration tests: synthetic corpora, config
//! files, and binary invocation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Write a 20-page corpus whose pages have disjoint vocabularies and whose
/// first sentence doubles as the gold question and answer.
pub fn write_disjoint_corpus(dir: &Path, pages: u32) -> PathBuf {
    let path = dir.join("corpus.jsonl");
    let mut lines = String::new();
    for i in 1..=pages {
        let content = format!("uniq{i}a uniq{i}b uniq{i}c fact{i}. Filler uniq{i}d uniq{i}e text.");
        lines.push_str(
            &serde_json::json!({ "page": i, "title": format!("Chapter {i}"), "content": content })
                .to_string(),
        );
        lines.push('\n');
    }
    fs::write(&path, lines).expect("write corpus");
    path
}

/// Config wired for the offline fixed point: local-hash embedder, echo mock
/// for answering, QA mock for dataset generation.
pub fn write_fixed_point_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(
        &path,
        r#"
corpus_id = "e2e-20"
seed = 7
k_values = [1, 3, 5, 10]
token_scheme = "whitespace"
out_dir = "out"

[corpus]
source = "corpus.jsonl"

[embedder]
backend = "local-hash"
model_id = "local-hash-128"
dimension = 128

[llm]
backend = "mock"
model_id = "mock-echo"
[llm.mock]
rule = "echo-first-page-sentence"

[llm_dataset]
backend = "mock"
model_id = "mock-qa"
[llm_dataset.mock]
rule = "qa-from-page"
"#,
    )
    .expect("write config");
    path
}

/// Run the `pagerag` binary in `dir` and return its output.
pub fn run_pagerag(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pagerag"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("pagerag runs")
}

pub fn assert_success(output: &Output, what: &str) {
    assert!(
        output.status.success(),
        "{what} failed: stdout={} stderr={}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}
