//! Per-image class labels and split assignments read from CSV.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{CliError, Result};

/// Class label of every image, keyed by image id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTable {
    labels: BTreeMap<String, String>,
}

fn read_pairs(path: &Path, second: &str) -> Result<Vec<(String, String)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::input(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::input(path, e.to_string()))?
        .clone();
    if headers.len() != 2 || &headers[0] != "id" || &headers[1] != second {
        return Err(CliError::input(path, format!("header must be `id,{second}`")));
    }
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::input(path, e.to_string()))?;
        let id = record[0].trim().to_string();
        let value = record[1].trim().to_string();
        if id.is_empty() || value.is_empty() {
            return Err(CliError::input(path, format!("row {}: empty field", line + 1)));
        }
        out.push((id, value));
    }
    Ok(out)
}

fn unique_map(path: &Path, pairs: Vec<(String, String)>) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (id, value) in pairs {
        if map.contains_key(&id) {
            return Err(CliError::input(path, format!("id `{id}` appears twice")));
        }
        map.insert(id, value);
    }
    Ok(map)
}

/// Checks that `map` covers exactly the ids in `ids`.
fn check_coverage(path: &Path, map: &BTreeMap<String, String>, ids: &[String]) -> Result<()> {
    if let Some(missing) = ids.iter().find(|id| !map.contains_key(*id)) {
        return Err(CliError::input(path, format!("no entry for image `{missing}`")));
    }
    if map.len() != ids.len() {
        let known: BTreeSet<&String> = ids.iter().collect();
        let extra = map.keys().find(|k| !known.contains(k)).expect("a surplus key exists");
        return Err(CliError::input(path, format!("id `{extra}` is not an image")));
    }
    Ok(())
}

impl LabelTable {
    pub fn read(path: &Path) -> Result<LabelTable> {
        let labels = unique_map(path, read_pairs(path, "label")?)?;
        Ok(LabelTable { labels })
    }

    pub fn from_pairs<I, S>(pairs: I) -> LabelTable
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        LabelTable {
            labels: pairs.into_iter().map(|(a, b)| (a.into(), b.into())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.labels.values().collect();
        set.into_iter().cloned().collect()
    }

    /// Class index of every image in `ids` order, given the class order.
    /// `origin` only labels errors.
    pub fn indices(&self, ids: &[String], class_order: &[String], origin: &Path) -> Result<Vec<usize>> {
        check_coverage(origin, &self.labels, ids)?;
        let position: BTreeMap<&str, usize> = class_order.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        ids.iter()
            .map(|id| {
                let label = &self.labels[id];
                position
                    .get(label.as_str())
                    .copied()
                    .ok_or_else(|| CliError::input(origin, format!("label `{label}` is not in the class order")))
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "label"]).expect("in-memory write");
        for (id, label) in &self.labels {
            w.write_record([id, label]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("inputs are UTF-8")
    }
}

/// Partition name (`train` / `test`) of every image in `ids` order.
pub fn read_split(path: &Path, ids: &[String]) -> Result<Vec<String>> {
    let map = unique_map(path, read_pairs(path, "partition")?)?;
    check_coverage(path, &map, ids)?;
    Ok(ids.iter().map(|id| map[id].clone()).collect())
}
