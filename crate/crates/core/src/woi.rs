//! Word-of-interest pools: vocabulary terms keyed by UMLS concept id and
//! filtered by semantic type.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const RAW_LEVEL: &str = "Level-0";

/// Raw entity record as exported from the vocabulary source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub text: String,
    pub cui: String,
    pub semantic_types: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Keyword {
    pub cui: String,
    pub text: String,
    pub semantic_types: BTreeSet<String>,
}

impl Keyword {
    pub fn has_any_type(&self, types: &BTreeSet<String>) -> bool {
        self.semantic_types.iter().any(|t| types.contains(t))
    }

    pub fn to_record(&self) -> EntityRecord {
        EntityRecord {
            text: self.text.clone(),
            cui: self.cui.clone(),
            semantic_types: self.semantic_types.iter().cloned().collect(),
        }
    }
}

/// A deduplicated keyword collection in ascending CUI order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WoiPool {
    level_name: String,
    filter_types: BTreeSet<String>,
    keywords: Vec<Keyword>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PoolStats {
    pub count: usize,
    pub distinct_types: usize,
    pub type_histogram: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct PoolHeader {
    level_name: String,
    filter_types: Vec<String>,
}

/// `C` followed by one or more ASCII digits.
pub fn is_valid_cui(cui: &str) -> bool {
    cui.len() > 1 && cui.starts_with('C') && cui[1..].bytes().all(|b| b.is_ascii_digit())
}

fn validate(index: usize, record: &EntityRecord) -> Result<Keyword> {
    let malformed = |reason: String| Error::MalformedRecord { index, reason };
    if !is_valid_cui(&record.cui) {
        return Err(malformed(format!("bad CUI `{}`", record.cui)));
    }
    let text = record.text.trim();
    if text.is_empty() {
        return Err(malformed("empty text".into()));
    }
    let semantic_types: BTreeSet<String> = record
        .semantic_types
        .iter()
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .collect();
    if semantic_types.is_empty() {
        return Err(malformed("no semantic types".into()));
    }
    Ok(Keyword {
        cui: record.cui.clone(),
        text: text.to_string(),
        semantic_types,
    })
}

/// Collapses records sharing a CUI (first text wins, types are unioned)
/// and sorts the result by CUI. The pool is named [`RAW_LEVEL`].
pub fn build_pool(records: &[EntityRecord]) -> Result<WoiPool> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut by_cui: BTreeMap<String, Keyword> = BTreeMap::new();
    for (index, record) in records.iter().enumerate() {
        let kw = validate(index, record)?;
        by_cui
            .entry(kw.cui.clone())
            .and_modify(|existing| existing.semantic_types.extend(kw.semantic_types.iter().cloned()))
            .or_insert(kw);
    }
    Ok(WoiPool {
        level_name: RAW_LEVEL.to_string(),
        filter_types: BTreeSet::new(),
        keywords: by_cui.into_values().collect(),
    })
}

/// Keeps keywords carrying at least one of `types`.
pub fn filter_by_semantic_type(
    pool: &WoiPool,
    types: &BTreeSet<String>,
    level_name: &str,
) -> Result<WoiPool> {
    if types.is_empty() {
        return Err(Error::InvalidParameter("semantic type filter is empty".into()));
    }
    let keywords: Vec<Keyword> = pool
        .keywords
        .iter()
        .filter(|k| k.has_any_type(types))
        .cloned()
        .collect();
    if keywords.is_empty() {
        return Err(Error::EmptyResult(types.iter().cloned().collect()));
    }
    Ok(WoiPool {
        level_name: level_name.to_string(),
        filter_types: types.clone(),
        keywords,
    })
}

pub fn pool_stats(pool: &WoiPool) -> PoolStats {
    let mut type_histogram = BTreeMap::new();
    for kw in &pool.keywords {
        for t in &kw.semantic_types {
            *type_histogram.entry(t.clone()).or_insert(0) += 1;
        }
    }
    PoolStats {
        count: pool.keywords.len(),
        distinct_types: type_histogram.len(),
        type_histogram,
    }
}

impl WoiPool {
    pub fn level_name(&self) -> &str {
        &self.level_name
    }

    /// The same keywords under another level name.
    pub fn with_level_name(mut self, level_name: &str) -> Self {
        self.level_name = level_name.to_string();
        self
    }

    pub fn filter_types(&self) -> &BTreeSet<String> {
        &self.filter_types
    }

    pub fn keywords(&self) -> &[Keyword] {
        &self.keywords
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    pub fn get(&self, index: usize) -> &Keyword {
        &self.keywords[index]
    }

    pub fn cuis(&self) -> impl Iterator<Item = &str> + '_ {
        self.keywords.iter().map(|k| k.cui.as_str())
    }

    pub fn records(&self) -> Vec<EntityRecord> {
        self.keywords.iter().map(Keyword::to_record).collect()
    }

    /// JSON-lines text: a header line then one record per keyword.
    pub fn to_jsonl(&self) -> String {
        let header = PoolHeader {
            level_name: self.level_name.clone(),
            filter_types: self.filter_types.iter().cloned().collect(),
        };
        let mut out = serde_json::to_string(&header).unwrap();
        out.push('\n');
        for kw in &self.keywords {
            out.push_str(&serde_json::to_string(&kw.to_record()).unwrap());
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    /// Reads a pool file; a raw record file without header builds a fresh
    /// [`RAW_LEVEL`] pool.
    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (header, records) = parse_jsonl(&text, path)?;
        let mut pool = build_pool(&records)?;
        if let Some(h) = header {
            let types: BTreeSet<String> = h.filter_types.into_iter().collect();
            if !types.is_empty() {
                if let Some(k) = pool.keywords.iter().find(|k| !k.has_any_type(&types)) {
                    return Err(Error::format(
                        path,
                        format!("keyword {} does not match the header's filter types", k.cui),
                    ));
                }
            }
            pool.level_name = h.level_name;
            pool.filter_types = types;
        }
        Ok(pool)
    }
}

/// Reads raw entity records, one JSON object per non-blank line.
pub fn read_records(path: &Path) -> Result<Vec<EntityRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_jsonl(&text, path)?.1)
}

fn parse_jsonl(text: &str, path: &Path) -> Result<(Option<PoolHeader>, Vec<EntityRecord>)> {
    let mut header = None;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
        if records.is_empty() && header.is_none() && value.get("level_name").is_some() {
            header = Some(
                serde_json::from_value(value)
                    .map_err(|e| Error::format(path, format!("header: {e}")))?,
            );
            continue;
        }
        let record: EntityRecord = serde_json::from_value(value).map_err(|e| Error::MalformedRecord {
            index: records.len(),
            reason: e.to_string(),
        })?;
        records.push(record);
    }
    Ok((header, records))
}
