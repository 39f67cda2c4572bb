//! On-disk dataset formats.
//!
//! * interactions: TSV `user_id \t item_id` (optional header, `#` comments)
//!   or a JSON array of `{"user": …, "item": …}`;
//! * item attributes: JSON object `item_id → [attribute ids]`;
//! * taxonomy: JSON object `parent_id → [child attribute ids]`.
//!
//! Ids may be strings or integers and are densified in order of first
//! appearance. [`IdMap`] keeps the originals.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ear_core::datasets::{AttributeCatalog, InteractionLog, Taxonomy};
use ear_core::{AttrId, ItemId, UserId};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{}: {source}", file.display())]
    Io { file: PathBuf, source: std::io::Error },
    #[error("{}:{line}: field `{field}`: {message}", file.display())]
    Parse { file: PathBuf, line: usize, field: String, message: String },
    #[error("{}: invalid JSON at line {line}, column {column}: {message}", file.display())]
    Json { file: PathBuf, line: usize, column: usize, message: String },
    #[error("unknown interaction format `{0}` (expected tsv or json)")]
    UnknownFormat(String),
    #[error("{}: {source}", file.display())]
    Data { file: PathBuf, source: ear_core::Error },
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionFormat {
    #[default]
    Tsv,
    Json,
}

impl FromStr for InteractionFormat {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(InteractionFormat::Tsv),
            "json" => Ok(InteractionFormat::Json),
            other => Err(FormatError::UnknownFormat(other.to_string())),
        }
    }
}

impl InteractionFormat {
    /// Guesses from the file extension, defaulting to TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => InteractionFormat::Json,
            _ => InteractionFormat::Tsv,
        }
    }
}

/// Original id ↔ dense index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdMap {
    originals: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Identity map over `0..n`.
    pub fn sequential(n: usize) -> Self {
        let mut m = Self::new();
        for i in 0..n {
            m.intern(&i.to_string());
        }
        m
    }

    pub fn from_originals(originals: Vec<String>) -> Self {
        let index = originals.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
        IdMap { originals, index }
    }

    pub fn intern(&mut self, original: &str) -> u32 {
        if let Some(&i) = self.index.get(original) {
            return i;
        }
        let i = self.originals.len() as u32;
        self.originals.push(original.to_string());
        self.index.insert(original.to_string(), i);
        i
    }

    pub fn get(&self, original: &str) -> Option<u32> {
        self.index.get(original).copied()
    }

    pub fn original(&self, dense: u32) -> Option<&str> {
        self.originals.get(dense as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    pub fn originals(&self) -> &[String] {
        &self.originals
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.originals.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| FormatError::Io { file: path.to_path_buf(), source })
}

fn json_error(path: &Path, e: serde_json::Error) -> FormatError {
    FormatError::Json { file: path.to_path_buf(), line: e.line(), column: e.column(), message: e.to_string() }
}

fn parse_err(path: &Path, line: usize, field: &str, message: impl fmt::Display) -> FormatError {
    FormatError::Parse { file: path.to_path_buf(), line, field: field.to_string(), message: message.to_string() }
}

/// String form of a JSON id (string or integer).
fn json_id(v: &Value) -> Option<String> {
    match v {
        Value::String(s) if !s.is_empty() => Some(s.clone()),
        Value::Number(n) if n.is_u64() || n.is_i64() => Some(n.to_string()),
        _ => None,
    }
}

/// `(line, user, item)` rows in file order.
pub fn parse_interactions(text: &str, format: InteractionFormat, file: &Path) -> Result<Vec<(usize, String, String)>> {
    let mut rows = Vec::new();
    match format {
        InteractionFormat::Tsv => {
            for (i, raw) in text.lines().enumerate() {
                let line = i + 1;
                let trimmed = raw.trim_end_matches('\r');
                if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                    continue;
                }
                let mut cols = trimmed.split('\t');
                let user = cols.next().map(str::trim).unwrap_or("");
                let item = cols.next().map(str::trim).unwrap_or("");
                if rows.is_empty() && user.eq_ignore_ascii_case("user_id") && item.eq_ignore_ascii_case("item_id") {
                    continue;
                }
                if user.is_empty() {
                    return Err(parse_err(file, line, "user_id", "missing value"));
                }
                if item.is_empty() {
                    return Err(parse_err(file, line, "item_id", "missing value"));
                }
                rows.push((line, user.to_string(), item.to_string()));
            }
        }
        InteractionFormat::Json => {
            if text.trim().is_empty() {
                return Ok(rows);
            }
            let value: Value = serde_json::from_str(text).map_err(|e| json_error(file, e))?;
            let Value::Array(entries) = value else {
                return Err(parse_err(file, 1, "<root>", "expected an array of {\"user\", \"item\"} objects"));
            };
            for (i, e) in entries.iter().enumerate() {
                // JSON rows are reported by array offset
                let offset = i + 1;
                let user = e.get("user").and_then(json_id).ok_or_else(|| parse_err(file, offset, "user", "missing or not an id"))?;
                let item = e.get("item").and_then(json_id).ok_or_else(|| parse_err(file, offset, "item", "missing or not an id"))?;
                rows.push((offset, user, item));
            }
        }
    }
    Ok(rows)
}

/// Loads interactions, interning users and items freely.
pub fn load_interactions(path: &Path, format: InteractionFormat) -> Result<(InteractionLog, IdMap, IdMap)> {
    let rows = parse_interactions(&read(path)?, format, path)?;
    let (mut users, mut items) = (IdMap::new(), IdMap::new());
    let mut records = Vec::with_capacity(rows.len());
    for (_, u, v) in &rows {
        records.push((UserId(users.intern(u)), ItemId(items.intern(v))));
    }
    let log = InteractionLog::from_records(users.len(), items.len(), records)
        .map_err(|source| FormatError::Data { file: path.to_path_buf(), source })?;
    Ok((log, users, items))
}

fn parse_id_lists(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let text = read(path)?;
    let value: Value = serde_json::from_str(&text).map_err(|e| json_error(path, e))?;
    let Value::Object(map) = value else {
        return Err(parse_err(path, 1, "<root>", "expected an object of id → array"));
    };
    let mut out = Vec::with_capacity(map.len());
    for (i, (key, list)) in map.into_iter().enumerate() {
        let Value::Array(list) = list else {
            return Err(parse_err(path, i + 1, &key, "expected an array of ids"));
        };
        let ids = list
            .iter()
            .map(|x| json_id(x).ok_or_else(|| parse_err(path, i + 1, &key, format!("`{x}` is not an id"))))
            .collect::<Result<Vec<_>>>()?;
        out.push((key, ids));
    }
    Ok(out)
}

/// Entity names and the dense catalog.
#[derive(Debug, Clone)]
pub struct LoadedCatalog {
    pub catalog: AttributeCatalog,
    pub items: IdMap,
    pub attrs: IdMap,
}

pub fn load_item_attributes(path: &Path) -> Result<LoadedCatalog> {
    let entries = parse_id_lists(path)?;
    let (mut items, mut attrs) = (IdMap::new(), IdMap::new());
    let mut lists: Vec<Vec<AttrId>> = Vec::with_capacity(entries.len());
    for (item, list) in entries {
        let v = items.intern(&item) as usize;
        if v == lists.len() {
            lists.push(Vec::new());
        }
        lists[v].extend(list.iter().map(|a| AttrId(attrs.intern(a))));
    }
    let catalog = AttributeCatalog::new(attrs.len(), lists).map_err(|source| FormatError::Data { file: path.to_path_buf(), source })?;
    Ok(LoadedCatalog { catalog, items, attrs })
}

pub fn load_taxonomy(path: &Path, attrs: &IdMap) -> Result<(Taxonomy, IdMap)> {
    let entries = parse_id_lists(path)?;
    let mut parents = IdMap::new();
    let mut groups = Vec::with_capacity(entries.len());
    for (i, (parent, children)) in entries.into_iter().enumerate() {
        parents.intern(&parent);
        let mut group = Vec::with_capacity(children.len());
        for c in children {
            let a = attrs
                .get(&c)
                .ok_or_else(|| parse_err(path, i + 1, &parent, format!("unknown attribute `{c}`")))?;
            group.push(AttrId(a));
        }
        groups.push(group);
    }
    let tax = Taxonomy::new(attrs.len(), groups).map_err(|source| FormatError::Data { file: path.to_path_buf(), source })?;
    Ok((tax, parents))
}

/// A dataset read from files, with every id mapped into the catalog's space.
#[derive(Debug, Clone)]
pub struct FileDataset {
    pub log: InteractionLog,
    pub catalog: AttributeCatalog,
    pub taxonomy: Option<Taxonomy>,
    pub names: Names,
}

/// Original ids of every entity family.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Names {
    pub users: IdMap,
    pub items: IdMap,
    pub attrs: IdMap,
    pub parents: IdMap,
}

impl Names {
    pub fn sequential(users: usize, items: usize, attrs: usize, parents: usize) -> Self {
        Names {
            users: IdMap::sequential(users),
            items: IdMap::sequential(items),
            attrs: IdMap::sequential(attrs),
            parents: IdMap::sequential(parents),
        }
    }

    pub fn reindex(&mut self) {
        self.users.reindex();
        self.items.reindex();
        self.attrs.reindex();
        self.parents.reindex();
    }
}

/// Loads interactions against an item-attribute catalog; interactions with
/// items missing from the catalog are errors naming the line.
pub fn load_dataset(
    interactions: &Path,
    format: InteractionFormat,
    item_attrs: &Path,
    taxonomy: Option<&Path>,
) -> Result<FileDataset> {
    let LoadedCatalog { catalog, items, attrs } = load_item_attributes(item_attrs)?;
    let rows = parse_interactions(&read(interactions)?, format, interactions)?;
    let mut users = IdMap::new();
    let mut records = Vec::with_capacity(rows.len());
    for (line, u, v) in rows {
        let item = items
            .get(&v)
            .ok_or_else(|| parse_err(interactions, line, "item_id", format!("item `{v}` has no attribute entry")))?;
        records.push((UserId(users.intern(&u)), ItemId(item)));
    }
    let log = InteractionLog::from_records(users.len(), items.len(), records)
        .map_err(|source| FormatError::Data { file: interactions.to_path_buf(), source })?;
    let (taxonomy, parents) = match taxonomy {
        Some(p) => {
            let (t, names) = load_taxonomy(p, &attrs)?;
            (Some(t), names)
        }
        None => (None, IdMap::new()),
    };
    Ok(FileDataset { log, catalog, taxonomy, names: Names { users, items, attrs, parents } })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| FormatError::Io { file: path.to_path_buf(), source })
}

/// Writes interactions as TSV with a header.
pub fn write_interactions_tsv(path: &Path, log: &InteractionLog, names: &Names) -> Result<()> {
    let mut out = String::from("user_id\titem_id\n");
    for &(u, v) in log.records() {
        let un = names.users.original(u.0).map_or_else(|| u.to_string(), str::to_string);
        let vn = names.items.original(v.0).map_or_else(|| v.to_string(), str::to_string);
        out.push_str(&un);
        out.push('\t');
        out.push_str(&vn);
        out.push('\n');
    }
    write(path, &out)
}

fn name_or_index(map: &IdMap, i: u32) -> String {
    map.original(i).map_or_else(|| i.to_string(), str::to_string)
}

pub fn write_item_attributes(path: &Path, catalog: &AttributeCatalog, names: &Names) -> Result<()> {
    let mut obj = serde_json::Map::new();
    for (v, attrs) in catalog.item_attr_lists().iter().enumerate() {
        let list = attrs.iter().map(|a| Value::String(name_or_index(&names.attrs, a.0))).collect();
        obj.insert(name_or_index(&names.items, v as u32), Value::Array(list));
    }
    write(path, &serde_json::to_string_pretty(&Value::Object(obj)).expect("JSON values serialize"))
}

pub fn write_taxonomy(path: &Path, taxonomy: &Taxonomy, names: &Names) -> Result<()> {
    let mut obj = serde_json::Map::new();
    for (j, children) in taxonomy.parents() {
        let list = children.iter().map(|a| Value::String(name_or_index(&names.attrs, a.0))).collect();
        obj.insert(name_or_index(&names.parents, j.0), Value::Array(list));
    }
    write(path, &serde_json::to_string_pretty(&Value::Object(obj)).expect("JSON values serialize"))
}

/// Counts per entity, echoed in reports.
pub fn describe(log: &InteractionLog, catalog: &AttributeCatalog, taxonomy: Option<&Taxonomy>) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    m.insert("users".to_string(), log.n_users());
    m.insert("items".to_string(), catalog.n_items());
    m.insert("attributes".to_string(), catalog.n_attrs());
    m.insert("parents".to_string(), taxonomy.map_or(0, Taxonomy::n_parents));
    m.insert("interactions".to_string(), log.len());
    m
}
