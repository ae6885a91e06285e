//! Binary object/verb plausibility table built from language-model verb
//! distributions, and the inference-time score doubling it drives.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;
use crate::vocab::VocabSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistributionSource {
    Mlm,
    Mcqa,
    Other,
}

/// `P(verb | object)` over the verb vocabulary, normalized to sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct VerbDistribution {
    pub object_category: usize,
    pub probs: Vec<f64>,
}

impl VerbDistribution {
    pub fn new(object_category: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config(format!(
                "distribution for object {object_category} has negative or non-finite entries"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Config(format!(
                "distribution for object {object_category} sums to zero"
            )));
        }
        Ok(VerbDistribution {
            object_category,
            probs: probs.iter().map(|p| p / sum).collect(),
        })
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct RawDistributions {
    source: DistributionSource,
    objects: Vec<RawDistribution>,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawDistribution {
    category: String,
    probs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionFile {
    pub source: DistributionSource,
    pub dists: Vec<VerbDistribution>,
}

/// Verbs absent from an object's `probs` map get probability 0.
pub fn parse_distributions(text: &str, path: &Path, vocabs: &VocabSet) -> Result<DistributionFile> {
    let raw: RawDistributions = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let mut dists = Vec::with_capacity(raw.objects.len());
    for o in raw.objects {
        let c = vocabs.objects.get(&o.category).ok_or_else(|| {
            Error::Config(format!("unknown object category `{}` in {}", o.category, path.display()))
        })?;
        let mut probs = vec![0.0; vocabs.verbs.len()];
        for (verb, p) in o.probs {
            let k = vocabs.verbs.get(&verb).ok_or_else(|| {
                Error::Config(format!("unknown verb `{verb}` for `{}` in {}", o.category, path.display()))
            })?;
            probs[k] = p;
        }
        dists.push(VerbDistribution::new(c, probs)?);
    }
    Ok(DistributionFile {
        source: raw.source,
        dists,
    })
}

pub fn load_distributions(path: &Path, vocabs: &VocabSet) -> Result<DistributionFile> {
    parse_distributions(&fsio::read_to_string(path)?, path, vocabs)
}

pub fn save_distributions(path: &Path, file: &DistributionFile, vocabs: &VocabSet) -> Result<()> {
    let raw = RawDistributions {
        source: file.source,
        objects: file
            .dists
            .iter()
            .map(|d| RawDistribution {
                category: vocabs.objects.name(d.object_category).to_string(),
                probs: d
                    .probs
                    .iter()
                    .enumerate()
                    .map(|(k, p)| (vocabs.verbs.name(k).to_string(), *p))
                    .collect(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&raw).expect("serializable");
    fsio::write_atomic(path, text.as_bytes())
}

/// Row-major `objects x verbs` bit grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlausibilityTable {
    n_verbs: usize,
    bits: Vec<bool>,
}

/// Entries strictly above the row mean; an exactly uniform row is all ones.
pub fn threshold_row(probs: &[f64]) -> Vec<bool> {
    if probs.windows(2).all(|w| w[0] == w[1]) {
        return vec![true; probs.len()];
    }
    let total: f64 = probs.iter().sum();
    let k = probs.len() as f64;
    probs.iter().map(|&p| p * k > total).collect()
}

pub fn build_table(dists: &[VerbDistribution], vocabs: &VocabSet) -> Result<PlausibilityTable> {
    let (n_obj, n_verbs) = (vocabs.objects.len(), vocabs.verbs.len());
    let mut rows: Vec<Option<Vec<bool>>> = vec![None; n_obj];
    for d in dists {
        if d.probs.len() != n_verbs {
            return Err(Error::Shape(format!(
                "distribution has {} entries, verb vocabulary has {n_verbs}",
                d.probs.len()
            )));
        }
        rows[d.object_category] = Some(threshold_row(&d.probs));
    }
    let missing: Vec<String> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_none())
        .map(|(i, _)| vocabs.objects.name(i).to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCategories(missing));
    }
    Ok(PlausibilityTable {
        n_verbs,
        bits: rows.into_iter().flatten().flatten().collect(),
    })
}

impl PlausibilityTable {
    pub fn from_rows(rows: Vec<Vec<bool>>) -> Result<Self> {
        let n_verbs = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_verbs) {
            return Err(Error::Shape("ragged plausibility rows".into()));
        }
        Ok(PlausibilityTable {
            n_verbs,
            bits: rows.into_iter().flatten().collect(),
        })
    }

    pub fn n_objects(&self) -> usize {
        self.bits.len().checked_div(self.n_verbs).unwrap_or(0)
    }

    pub fn n_verbs(&self) -> usize {
        self.n_verbs
    }

    pub fn is_plausible(&self, object: usize, verb: usize) -> bool {
        self.bits[object * self.n_verbs + verb]
    }

    pub fn row(&self, object: usize) -> &[bool] {
        &self.bits[object * self.n_verbs..(object + 1) * self.n_verbs]
    }
}

/// `s * (1 + phi)`: plausible predictions have their confidence doubled.
pub fn rescore(s: f64, object: usize, verb: usize, table: &PlausibilityTable) -> f64 {
    if table.is_plausible(object, verb) {
        2.0 * s
    } else {
        s
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawTable {
    objects: Vec<RawTableRow>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawTableRow {
    category: String,
    plausible: Vec<String>,
}

pub fn save_table(path: &Path, table: &PlausibilityTable, vocabs: &VocabSet) -> Result<()> {
    let raw = RawTable {
        objects: (0..table.n_objects())
            .map(|o| RawTableRow {
                category: vocabs.objects.name(o).to_string(),
                plausible: (0..table.n_verbs())
                    .filter(|&v| table.is_plausible(o, v))
                    .map(|v| vocabs.verbs.name(v).to_string())
                    .collect(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&raw).expect("serializable");
    fsio::write_atomic(path, text.as_bytes())
}

pub fn load_table(path: &Path, vocabs: &VocabSet) -> Result<PlausibilityTable> {
    let text = fsio::read_to_string(path)?;
    let raw: RawTable = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let mut rows = vec![None; vocabs.objects.len()];
    for r in raw.objects {
        let o = vocabs.objects.get(&r.category).ok_or_else(|| {
            Error::Config(format!("unknown object `{}` in {}", r.category, path.display()))
        })?;
        let mut row = vec![false; vocabs.verbs.len()];
        for v in r.plausible {
            let k = vocabs.verbs.get(&v).ok_or_else(|| {
                Error::Config(format!("unknown verb `{v}` in {}", path.display()))
            })?;
            row[k] = true;
        }
        rows[o] = Some(row);
    }
    let missing: Vec<String> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_none())
        .map(|(i, _)| vocabs.objects.name(i).to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCategories(missing));
    }
    PlausibilityTable::from_rows(rows.into_iter().flatten().collect())
}
