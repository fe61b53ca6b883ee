//! Page-chunked corpus loading, validation, and the canonical token
//! normalization shared by every downstream metric.
//!
//! A corpus arrives as one text unit per printed page, either as a directory
//! of `page_<id>.md` files or as a line-delimited record file. Filtering
//! (page ranges, exclusion lists, blank pages) happens here at ingest and is
//! reported machine-readably rather than silently dropped.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One corpus unit: a printed textbook page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    /// Printed page number, unique within a corpus.
    #[serde(rename = "page")]
    pub page_id: u32,
    /// Chapter or section title; may be empty.
    #[serde(default)]
    pub title: String,
    /// Page body, markdown-flavored.
    pub content: String,
}

/// Errors raised while loading or validating a corpus.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus source not found: {0}")]
    MissingSource(String),
    #[error("duplicate page_id {0}")]
    DuplicatePage(u32),
    #[error("invalid page {page}: {message}")]
    InvalidPage { page: u32, message: String },
    #[error("malformed record at line {line} of {path}: {message}")]
    MalformedRecord {
        path: String,
        line: usize,
        message: String,
    },
    #[error("corpus file {path}: {message}")]
    Format { path: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Ingest-time filters: an optional include-range of printed page numbers,
/// an exclusion list, and an offset reconciling raw sheet indices with
/// printed page numbers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestFilters {
    pub first_page: Option<u32>,
    pub last_page: Option<u32>,
    pub exclude: BTreeSet<u32>,
    /// Added to every raw page number before filtering.
    pub page_offset: i64,
}

impl IngestFilters {
    pub fn include_range(first_page: u32, last_page: u32) -> Self {
        IngestFilters {
            first_page: Some(first_page),
            last_page: Some(last_page),
            ..IngestFilters::default()
        }
    }

    fn in_range(&self, page_id: u32) -> bool {
        self.first_page.is_none_or(|f| page_id >= f) && self.last_page.is_none_or(|l| page_id <= l)
    }
}

/// Why a page was dropped at ingest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    OutOfRange,
    Excluded,
    BlankContent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedPage {
    pub page_id: u32,
    pub reason: RejectReason,
}

/// Machine-readable record of what ingest filtered out and why.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub rejected: Vec<RejectedPage>,
}

impl IngestReport {
    pub fn count(&self, reason: RejectReason) -> usize {
        self.rejected.iter().filter(|r| r.reason == reason).count()
    }
}

/// An immutable, validated collection of pages in ascending page order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    corpus_id: String,
    pages: Vec<Page>,
}

impl Corpus {
    /// Build a corpus from raw pages, enforcing unique ids, non-blank
    /// content, and ascending order.
    pub fn new(corpus_id: impl Into<String>, mut pages: Vec<Page>) -> Result<Self, CorpusError> {
        pages.sort_by_key(|p| p.page_id);
        let mut seen = BTreeSet::new();
        for page in &pages {
            if !seen.insert(page.page_id) {
                return Err(CorpusError::DuplicatePage(page.page_id));
            }
            if page.page_id == 0 {
                return Err(CorpusError::InvalidPage {
                    page: 0,
                    message: "page_id must be positive".into(),
                });
            }
            if page.content.trim().is_empty() {
                return Err(CorpusError::InvalidPage {
                    page: page.page_id,
                    message: "content is blank".into(),
                });
            }
        }
        Ok(Corpus {
            corpus_id: corpus_id.into(),
            pages,
        })
    }

    pub fn corpus_id(&self) -> &str {
        &self.corpus_id
    }

    /// Pages in ascending page_id order.
    pub fn pages(&self) -> &[Page] {
        &self.pages
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn get(&self, page_id: u32) -> Option<&Page> {
        self.pages
            .binary_search_by_key(&page_id, |p| p.page_id)
            .ok()
            .map(|i| &self.pages[i])
    }

    pub fn contains(&self, page_id: u32) -> bool {
        self.get(page_id).is_some()
    }

    pub fn page_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.pages.iter().map(|p| p.page_id)
    }

    /// Write the corpus as a line-delimited artifact: a header line followed
    /// by one record per page. The result is loadable by [`load_corpus`].
    pub fn save(&self, path: &Path, config_hash: Option<&str>) -> Result<(), CorpusError> {
        let file = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = CorpusHeader {
            version: CORPUS_FORMAT_VERSION,
            corpus_id: self.corpus_id.clone(),
            count: self.pages.len(),
            config_hash: config_hash.map(str::to_owned),
        };
        let header_line = serde_json::to_string(&header).expect("header serializes");
        writeln!(w, "{header_line}").map_err(|e| CorpusError::io(path, e))?;
        for page in &self.pages {
            let line = serde_json::to_string(page).expect("page serializes");
            writeln!(w, "{line}").map_err(|e| CorpusError::io(path, e))?;
        }
        w.flush().map_err(|e| CorpusError::io(path, e))
    }
}

const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CorpusHeader {
    version: u32,
    corpus_id: String,
    count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

/// Load a corpus from a directory of `page_<id>.md` files or a
/// line-delimited record file, applying `filters`. Returns the retained
/// corpus plus a report of every rejected page and its reason.
///
/// The corpus id is derived from the source file stem or directory name;
/// use [`load_corpus_as`] to name it explicitly.
pub fn load_corpus(
    source: &Path,
    filters: &IngestFilters,
) -> Result<(Corpus, IngestReport), CorpusError> {
    load_corpus_as(source, filters, None)
}

/// [`load_corpus`] with an explicit corpus id.
pub fn load_corpus_as(
    source: &Path,
    filters: &IngestFilters,
    corpus_id: Option<&str>,
) -> Result<(Corpus, IngestReport), CorpusError> {
    if !source.exists() {
        return Err(CorpusError::MissingSource(source.display().to_string()));
    }
    let (raw_pages, header_id) = if source.is_dir() {
        (read_page_dir(source)?, None)
    } else {
        read_record_file(source)?
    };

    let derived_id = corpus_id
        .map(str::to_owned)
        .or(header_id)
        .unwrap_or_else(|| {
            source
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "corpus".to_owned())
        });

    // Offset raw page numbers into printed-page space.
    let mut pages = Vec::with_capacity(raw_pages.len());
    for page in raw_pages {
        let shifted = page.page_id as i64 + filters.page_offset;
        if shifted <= 0 || shifted > u32::MAX as i64 {
            return Err(CorpusError::InvalidPage {
                page: page.page_id,
                message: format!("page_offset {} pushes id out of range", filters.page_offset),
            });
        }
        pages.push(Page {
            page_id: shifted as u32,
            ..page
        });
    }

    // Duplicates are a validation error even if filtering would drop a copy.
    let mut seen = BTreeSet::new();
    for page in &pages {
        if !seen.insert(page.page_id) {
            return Err(CorpusError::DuplicatePage(page.page_id));
        }
    }
    pages.sort_by_key(|p| p.page_id);

    let mut retained = Vec::new();
    let mut report = IngestReport::default();
    for page in pages {
        let reason = if !filters.in_range(page.page_id) {
            Some(RejectReason::OutOfRange)
        } else if filters.exclude.contains(&page.page_id) {
            Some(RejectReason::Excluded)
        } else if page.content.trim().is_empty() {
            Some(RejectReason::BlankContent)
        } else {
            None
        };
        match reason {
            Some(reason) => report.rejected.push(RejectedPage {
                page_id: page.page_id,
                reason,
            }),
            None => retained.push(page),
        }
    }

    let corpus = Corpus::new(derived_id, retained)?;
    Ok((corpus, report))
}

fn read_page_dir(dir: &Path) -> Result<Vec<Page>, CorpusError> {
    let mut pages = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| CorpusError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| CorpusError::io(dir, e))?;
        let path = entry.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(id) = parse_page_filename(name) else {
            continue; // not a page file (README, dotfiles, ...)
        };
        let text = fs::read_to_string(&path).map_err(|e| CorpusError::io(&path, e))?;
        let (title, content) = split_title(&text);
        pages.push(Page {
            page_id: id,
            title,
            content,
        });
    }
    Ok(pages)
}

/// `page_<id>.md` → id.
fn parse_page_filename(name: &str) -> Option<u32> {
    let stem = name.strip_prefix("page_")?.strip_suffix(".md")?;
    stem.parse().ok()
}

/// An optional first-line `# <title>` heads a page file; the rest is content.
fn split_title(text: &str) -> (String, String) {
    if let Some(first) = text.lines().next() {
        if let Some(title) = first.strip_prefix("# ") {
            let rest = text[first.len()..].trim_start_matches(['\r', '\n']);
            return (title.trim().to_owned(), rest.to_owned());
        }
    }
    (String::new(), text.to_owned())
}

/// Line-delimited record file: one JSON object per line with fields `page`,
/// `title`, `content`. An optional leading header object (recognized by its
/// `version` field) is honored for the corpus id.
fn read_record_file(path: &Path) -> Result<(Vec<Page>, Option<String>), CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let mut pages = Vec::new();
    let mut header_id = None;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if idx == 0 {
            if let Ok(header) = serde_json::from_str::<CorpusHeader>(line) {
                header_id = Some(header.corpus_id);
                continue;
            }
        }
        let page: Page = serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        pages.push(page);
    }
    Ok((pages, header_id))
}

/// A set of normalized tokens: non-empty, lowercase, boundary punctuation
/// stripped, no duplicates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSet(BTreeSet<String>);

impl TokenSet {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn intersection_size(&self, other: &TokenSet) -> usize {
        self.0.intersection(&other.0).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl FromIterator<String> for TokenSet {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        TokenSet(iter.into_iter().collect())
    }
}

/// Canonical normalization: lowercase, split on Unicode whitespace, strip
/// leading/trailing non-alphanumeric characters, drop empties, and return
/// the set of survivors.
pub fn normalize_tokens(text: &str) -> TokenSet {
    normalized_token_list(text).into_iter().collect()
}

/// The multiset variant of [`normalize_tokens`]: same per-token rule, but
/// duplicates survive and input order is preserved. The hashed bag-of-words
/// embedder consumes this.
pub fn normalized_token_list(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|fragment| {
            let token = fragment.trim_matches(|c: char| !c.is_alphanumeric());
            if token.is_empty() {
                None
            } else {
                Some(token.to_lowercase())
            }
        })
        .collect()
}

/// Count tokens per normalized token (test and extraction helper).
pub fn token_counts(text: &str) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for token in normalized_token_list(text) {
        *counts.entry(token).or_insert(0) += 1;
    }
    counts
}
