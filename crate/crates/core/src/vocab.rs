//! Ordered label vocabularies for verbs, objects and prepositions.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fsio;

pub const PERSON: &str = "person";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Verb,
    Object,
    Preposition,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Verb => "verb",
            Role::Object => "object",
            Role::Preposition => "preposition",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Unique lowercase entries with stable indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    role: Role,
    entries: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<I, S>(role: Role, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entries: Vec<String> = entries.into_iter().map(Into::into).collect();
        if entries.is_empty() {
            return Err(Error::Vocabulary(format!("{role} vocabulary is empty")));
        }
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.is_empty() || e.chars().any(|c| c.is_uppercase()) {
                return Err(Error::Vocabulary(format!(
                    "{role} entry `{e}` must be non-empty lowercase"
                )));
            }
            if index.insert(e.clone(), i).is_some() {
                return Err(Error::Vocabulary(format!("duplicate {role} entry `{e}`")));
            }
        }
        if role == Role::Object && !index.contains_key(PERSON) {
            return Err(Error::Vocabulary(
                "object vocabulary must contain `person`".into(),
            ));
        }
        Ok(Vocabulary {
            role,
            entries,
            index,
        })
    }

    /// Reads a JSON list of strings.
    pub fn load(role: Role, path: &Path) -> Result<Self> {
        let text = fsio::read_to_string(path)?;
        let entries: Vec<String> = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        Self::new(role, entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.entries).expect("strings serialize");
        fsio::write_atomic(path, text.as_bytes())
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.entries[idx]
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    /// SHA-256 over the newline-joined entries, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// The three vocabularies used in one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabSet {
    pub verbs: Vocabulary,
    pub objects: Vocabulary,
    pub preps: Vocabulary,
}

impl VocabSet {
    pub fn person(&self) -> usize {
        self.objects.get(PERSON).expect("checked at construction")
    }
}

/// Default preposition list (32 entries).
pub const DEFAULT_PREPOSITIONS: [&str; 32] = [
    "on", "in", "at", "with", "near", "under", "over", "behind", "beside", "above", "below",
    "against", "across", "along", "around", "atop", "inside", "outside", "onto", "into", "by",
    "beneath", "between", "through", "toward", "upon", "off", "next_to", "in_front_of",
    "on_top_of", "down", "up",
];

pub fn default_prepositions() -> Vocabulary {
    Vocabulary::new(Role::Preposition, DEFAULT_PREPOSITIONS).expect("valid default list")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_case() {
        assert!(Vocabulary::new(Role::Verb, ["ride", "ride"]).is_err());
        assert!(Vocabulary::new(Role::Verb, ["Ride"]).is_err());
        assert!(Vocabulary::new(Role::Verb, Vec::<String>::new()).is_err());
    }

    #[test]
    fn object_vocab_needs_person() {
        assert!(Vocabulary::new(Role::Object, ["horse"]).is_err());
        let v = Vocabulary::new(Role::Object, ["horse", "person"]).unwrap();
        assert_eq!(v.get(PERSON), Some(1));
    }

    #[test]
    fn default_prepositions_has_32_unique() {
        assert_eq!(default_prepositions().len(), 32);
    }

    #[test]
    fn digest_tracks_order() {
        let a = Vocabulary::new(Role::Verb, ["eat", "ride"]).unwrap();
        let b = Vocabulary::new(Role::Verb, ["ride", "eat"]).unwrap();
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
