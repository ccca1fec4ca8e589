//! Valid entity-type and relation tables.
//!
//! Both ship as editable JSON data files. The type table is an array of
//! `{type_id, label, class, valid_relations[]}` objects; the relation table an
//! array of `{relation_id, label, category}`. Loading validates the files and
//! reports errors with the 1-based line they occur on.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{Tense, TypeClass};

#[derive(Debug, Error)]
pub enum TableError {
    #[error("{file}:{line}: {message}")]
    Invalid { file: String, line: usize, message: String },
    #[error("cannot read {file}: {source}")]
    Io { file: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyClass {
    VeryCommon,
    Common,
    Uncommon,
}

impl From<FrequencyClass> for TypeClass {
    fn from(c: FrequencyClass) -> Self {
        match c {
            FrequencyClass::VeryCommon => TypeClass::VeryCommon,
            FrequencyClass::Common => TypeClass::Common,
            FrequencyClass::Uncommon => TypeClass::Uncommon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeEntry {
    pub type_id: String,
    /// Lowercase display name, used as the supplementary context for
    /// non-lifespan types.
    pub label: String,
    pub class: FrequencyClass,
    /// Context is rendered as a lifespan `(birth–death)` instead of the label.
    #[serde(default)]
    pub lifespan_context: bool,
    #[serde(default = "default_tense")]
    pub default_tense: Tense,
    pub valid_relations: Vec<String>,
}

fn default_tense() -> Tense {
    Tense::Is
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationCategory {
    Textual,
    NonTextual,
    Trivial,
    Irrelevant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationEntry {
    pub relation_id: String,
    pub label: String,
    pub category: RelationCategory,
}

#[derive(Debug, Clone, Default)]
pub struct TypeClassTable {
    types: BTreeMap<String, TypeEntry>,
}

#[derive(Debug, Clone, Default)]
pub struct RelationTable {
    relations: HashMap<String, RelationEntry>,
}

/// Both tables together; the unit the rest of the crate consumes.
#[derive(Debug, Clone, Default)]
pub struct Tables {
    pub types: TypeClassTable,
    pub relations: RelationTable,
}

const DEFAULT_TYPES: &str = include_str!("../data/types.json");
const DEFAULT_RELATIONS: &str = include_str!("../data/relations.json");

impl Tables {
    /// The curated tables compiled into the crate.
    pub fn builtin() -> Self {
        let relations =
            RelationTable::parse(DEFAULT_RELATIONS, "data/relations.json").expect("builtin relation table is valid");
        let types =
            TypeClassTable::parse(DEFAULT_TYPES, "data/types.json", &relations).expect("builtin type table is valid");
        Self { types, relations }
    }

    pub fn load(types_path: &Path, relations_path: &Path) -> Result<Self, TableError> {
        let rel_text = read(relations_path)?;
        let relations = RelationTable::parse(&rel_text, &relations_path.display().to_string())?;
        let type_text = read(types_path)?;
        let types = TypeClassTable::parse(&type_text, &types_path.display().to_string(), &relations)?;
        Ok(Self { types, relations })
    }

    pub fn from_entries(types: Vec<TypeEntry>, relations: Vec<RelationEntry>) -> Result<Self, TableError> {
        let rel_text = serde_json::to_string_pretty(&relations).expect("serializable");
        let relations = RelationTable::parse(&rel_text, "<relations>")?;
        let type_text = serde_json::to_string_pretty(&types).expect("serializable");
        let types = TypeClassTable::parse(&type_text, "<types>", &relations)?;
        Ok(Self { types, relations })
    }

    /// Question-eligible relations for a type: listed for the type and
    /// categorised textual.
    pub fn question_relations(&self, type_id: &str) -> BTreeSet<&str> {
        self.types
            .get(type_id)
            .map(|t| {
                t.valid_relations
                    .iter()
                    .filter(|r| self.relations.is_textual(r))
                    .map(String::as_str)
                    .collect()
            })
            .unwrap_or_default()
    }
}

fn read(path: &Path) -> Result<String, TableError> {
    std::fs::read_to_string(path).map_err(|source| TableError::Io {
        file: path.display().to_string(),
        source,
    })
}

/// 1-based line of the first occurrence of `"key": "value"` in `text`.
fn line_of(text: &str, key: &str, value: &str) -> usize {
    let pattern = format!(r#""{}"\s*:\s*"{}""#, regex::escape(key), regex::escape(value));
    regex::Regex::new(&pattern)
        .ok()
        .and_then(|re| re.find(text))
        .map(|m| text[..m.start()].matches('\n').count() + 1)
        .unwrap_or(1)
}

fn syntax_error(file: &str, err: serde_json::Error) -> TableError {
    TableError::Invalid {
        file: file.to_owned(),
        line: err.line().max(1),
        message: err.to_string(),
    }
}

impl RelationTable {
    pub fn parse(text: &str, file: &str) -> Result<Self, TableError> {
        let entries: Vec<RelationEntry> = serde_json::from_str(text).map_err(|e| syntax_error(file, e))?;
        let mut relations = HashMap::new();
        for entry in entries {
            let line = line_of(text, "relation_id", &entry.relation_id);
            let invalid = |message: String| TableError::Invalid {
                file: file.to_owned(),
                line,
                message,
            };
            if entry.relation_id.trim().is_empty() {
                return Err(invalid("empty relation_id".into()));
            }
            if entry.label.trim().is_empty() {
                return Err(invalid(format!("relation {} has an empty label", entry.relation_id)));
            }
            if relations.contains_key(&entry.relation_id) {
                return Err(invalid(format!("duplicate relation {}", entry.relation_id)));
            }
            relations.insert(entry.relation_id.clone(), entry);
        }
        Ok(Self { relations })
    }

    pub fn get(&self, relation_id: &str) -> Option<&RelationEntry> {
        self.relations.get(relation_id)
    }

    pub fn is_textual(&self, relation_id: &str) -> bool {
        matches!(
            self.relations.get(relation_id).map(|r| r.category),
            Some(RelationCategory::Textual)
        )
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }
}

impl TypeClassTable {
    pub fn parse(text: &str, file: &str, relations: &RelationTable) -> Result<Self, TableError> {
        let entries: Vec<TypeEntry> = serde_json::from_str(text).map_err(|e| syntax_error(file, e))?;
        let mut types = BTreeMap::new();
        for entry in entries {
            let line = line_of(text, "type_id", &entry.type_id);
            let invalid = |message: String| TableError::Invalid {
                file: file.to_owned(),
                line,
                message,
            };
            if entry.type_id.trim().is_empty() {
                return Err(invalid("empty type_id".into()));
            }
            if entry.label.trim().is_empty() {
                return Err(invalid(format!("type {} has an empty label", entry.type_id)));
            }
            if entry.valid_relations.is_empty() {
                return Err(invalid(format!("type {} has no valid relations", entry.type_id)));
            }
            let mut seen = BTreeSet::new();
            for rel in &entry.valid_relations {
                if !seen.insert(rel) {
                    return Err(invalid(format!("type {} lists relation {rel} twice", entry.type_id)));
                }
                match relations.get(rel) {
                    None => {
                        return Err(invalid(format!(
                            "type {} lists relation {rel} which is not in the relation table",
                            entry.type_id
                        )))
                    }
                    Some(r) if r.category != RelationCategory::Textual => {
                        return Err(invalid(format!(
                            "type {} lists relation {rel} ({}) which is categorised {:?}",
                            entry.type_id, r.label, r.category
                        )))
                    }
                    Some(_) => {}
                }
            }
            if types.contains_key(&entry.type_id) {
                return Err(invalid(format!("duplicate type {}", entry.type_id)));
            }
            types.insert(entry.type_id.clone(), entry);
        }
        Ok(Self { types })
    }

    pub fn get(&self, type_id: &str) -> Option<&TypeEntry> {
        self.types.get(type_id)
    }

    /// Resolves a KG type id to its frequency class; unknown ids are Invalid.
    pub fn classify(&self, type_id: &str) -> TypeClass {
        self.types
            .get(type_id)
            .map(|t| t.class.into())
            .unwrap_or(TypeClass::Invalid)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TypeEntry> {
        self.types.values()
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }
}
