//! Image records and the JSON Lines dataset format.
//!
//! Category strings are resolved to vocabulary indices on load and written
//! back as strings, so files never depend on vocabulary order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;
use crate::geometry::BBox;
use crate::vocab::{Role, VocabSet, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Human,
    Object,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub bbox: BBox,
    pub category: usize,
    pub score: f64,
    pub kind: Kind,
    pub background: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapOrigin {
    /// From a human caption ("a person is ...").
    Human,
    /// From an object caption ("a ... is being ...").
    Object,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapRef {
    pub path: String,
    pub origin: MapOrigin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthInstance {
    pub human_bbox: BBox,
    pub object_bbox: BBox,
    pub object_category: usize,
    pub verb_category: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub humans: Vec<Proposal>,
    pub objects: Vec<Proposal>,
    pub verb_labels: Vec<bool>,
    /// `None` when the image carries no preposition supervision.
    pub prep_labels: Option<Vec<bool>>,
    pub grounding_refs: Vec<MapRef>,
    /// Appearance sidecar: one row per human, then one per object.
    pub features: Option<String>,
    pub ground_truth: Vec<GroundTruthInstance>,
}

impl ImageRecord {
    pub fn n_pairs(&self) -> usize {
        self.humans.len() * self.objects.len()
    }

    pub fn clear_background(&mut self) {
        for p in self.humans.iter_mut().chain(self.objects.iter_mut()) {
            p.background = false;
        }
    }
}

// ---- on-disk schema ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHuman {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    score: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    background: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObject {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    category: String,
    score: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    background: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroundTruth {
    human_box: [f64; 4],
    object_box: [f64; 4],
    object_category: String,
    verb: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    width: u32,
    height: u32,
    humans: Vec<RawHuman>,
    objects: Vec<RawObject>,
    verb_labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prep_labels: Option<Vec<String>>,
    #[serde(default)]
    grounding_maps: Vec<MapRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<String>,
    #[serde(default)]
    ground_truth: Vec<RawGroundTruth>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

struct LineCtx<'a> {
    line: usize,
    id: &'a str,
    width: f64,
    height: f64,
}

impl LineCtx<'_> {
    fn bad(&self, msg: impl Into<String>) -> Error {
        Error::record(self.id, format!("line {}: {}", self.line, msg.into()))
    }

    fn bbox(&self, raw: [f64; 4], what: &str) -> Result<BBox> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(self.bad(format!("{what} box {raw:?} is not finite")));
        }
        let clipped = BBox::from(raw).clip(self.width, self.height);
        if !clipped.is_valid() {
            return Err(self.bad(format!("{what} box {raw:?} is empty after clipping")));
        }
        Ok(clipped)
    }

    fn score(&self, s: f64, what: &str) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(self.bad(format!("{what} score {s} outside [0, 1]")));
        }
        Ok(s)
    }

    fn lookup(&self, vocab: &Vocabulary, name: &str) -> Result<usize> {
        vocab.get(name).ok_or_else(|| Error::UnknownLabel {
            role: vocab.role().name(),
            label: name.to_string(),
            record: self.id.to_string(),
            line: self.line,
        })
    }

    fn label_vector(&self, vocab: &Vocabulary, names: &[String]) -> Result<Vec<bool>> {
        let mut v = vec![false; vocab.len()];
        for n in names {
            v[self.lookup(vocab, n)?] = true;
        }
        Ok(v)
    }
}

fn from_raw(raw: RawRecord, line: usize, vocabs: &VocabSet) -> Result<ImageRecord> {
    if raw.id.is_empty() {
        return Err(Error::record("", format!("line {line}: empty id")));
    }
    if raw.width == 0 || raw.height == 0 {
        return Err(Error::record(&raw.id, format!("line {line}: zero image size")));
    }
    let ctx = LineCtx {
        line,
        id: &raw.id,
        width: raw.width as f64,
        height: raw.height as f64,
    };
    let person = vocabs.person();
    let humans = raw
        .humans
        .iter()
        .map(|h| {
            Ok(Proposal {
                bbox: ctx.bbox(h.bbox, "human")?,
                category: person,
                score: ctx.score(h.score, "human")?,
                kind: Kind::Human,
                background: h.background,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let objects = raw
        .objects
        .iter()
        .map(|o| {
            Ok(Proposal {
                bbox: ctx.bbox(o.bbox, "object")?,
                category: ctx.lookup(&vocabs.objects, &o.category)?,
                score: ctx.score(o.score, "object")?,
                kind: Kind::Object,
                background: o.background,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let verb_labels = ctx.label_vector(&vocabs.verbs, &raw.verb_labels)?;
    let prep_labels = raw
        .prep_labels
        .as_deref()
        .map(|p| ctx.label_vector(&vocabs.preps, p))
        .transpose()?;
    let ground_truth = raw
        .ground_truth
        .iter()
        .map(|g| {
            Ok(GroundTruthInstance {
                human_bbox: ctx.bbox(g.human_box, "ground-truth human")?,
                object_bbox: ctx.bbox(g.object_box, "ground-truth object")?,
                object_category: ctx.lookup(&vocabs.objects, &g.object_category)?,
                verb_category: ctx.lookup(&vocabs.verbs, &g.verb)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImageRecord {
        id: raw.id,
        width: raw.width,
        height: raw.height,
        humans,
        objects,
        verb_labels,
        prep_labels,
        grounding_refs: raw.grounding_maps,
        features: raw.features,
        ground_truth,
    })
}

fn names(vocab: &Vocabulary, bits: &[bool]) -> Vec<String> {
    bits.iter()
        .enumerate()
        .filter(|(_, b)| **b)
        .map(|(i, _)| vocab.name(i).to_string())
        .collect()
}

fn to_raw(r: &ImageRecord, vocabs: &VocabSet) -> RawRecord {
    RawRecord {
        id: r.id.clone(),
        width: r.width,
        height: r.height,
        humans: r
            .humans
            .iter()
            .map(|h| RawHuman {
                bbox: h.bbox.into(),
                score: h.score,
                background: h.background,
            })
            .collect(),
        objects: r
            .objects
            .iter()
            .map(|o| RawObject {
                bbox: o.bbox.into(),
                category: vocabs.objects.name(o.category).to_string(),
                score: o.score,
                background: o.background,
            })
            .collect(),
        verb_labels: names(&vocabs.verbs, &r.verb_labels),
        prep_labels: r.prep_labels.as_deref().map(|p| names(&vocabs.preps, p)),
        grounding_maps: r.grounding_refs.clone(),
        features: r.features.clone(),
        ground_truth: r
            .ground_truth
            .iter()
            .map(|g| RawGroundTruth {
                human_box: g.human_bbox.into(),
                object_box: g.object_bbox.into(),
                object_category: vocabs.objects.name(g.object_category).to_string(),
                verb: vocabs.verbs.name(g.verb_category).to_string(),
            })
            .collect(),
    }
}

/// Parses dataset text. `path` is used only in error messages.
pub fn parse_dataset(text: &str, path: &Path, vocabs: &VocabSet) -> Result<Vec<ImageRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(from_raw(raw, i + 1, vocabs)?);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, vocabs: &VocabSet) -> Result<Vec<ImageRecord>> {
    let text = fsio::read_to_string(path)?;
    parse_dataset(&text, path, vocabs)
}

pub fn serialize_dataset(records: &[ImageRecord], vocabs: &VocabSet) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&to_raw(r, vocabs)).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn save_dataset(path: &Path, records: &[ImageRecord], vocabs: &VocabSet) -> Result<()> {
    fsio::write_atomic(path, serialize_dataset(records, vocabs).as_bytes())
}

/// Directory against which a dataset's relative sidecar paths resolve.
pub fn base_dir(dataset_path: &Path) -> PathBuf {
    dataset_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

pub fn vocab_set(verbs: &[&str], objects: &[&str], preps: &[&str]) -> Result<VocabSet> {
    Ok(VocabSet {
        verbs: Vocabulary::new(Role::Verb, verbs.iter().copied())?,
        objects: Vocabulary::new(Role::Object, objects.iter().copied())?,
        preps: Vocabulary::new(Role::Preposition, preps.iter().copied())?,
    })
}
