//! Pair-level detections from a trained model, with optional plausibility
//! rescoring, and the detections JSON Lines format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ImageRecord;
use crate::error::{Error, Result};
use crate::fsio;
use crate::geometry::BBox;
use crate::model::{forward_hoi, pair_features, Appearance, ConcatEncoder, ModelParams};
use crate::plausibility::{rescore, PlausibilityTable};
use crate::vocab::{VocabSet, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub human_bbox: BBox,
    pub object_bbox: BBox,
    pub object_category: usize,
    pub verb_category: usize,
    pub score: f64,
}

/// Index and value of the row maximum; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, &v) in row.iter().enumerate() {
        if v > best.1 {
            best = (k, v);
        }
    }
    best
}

/// One detection per pair from already computed pair scores (rows in
/// human-major order).
pub fn detections_from_scores(
    record: &ImageRecord,
    pair_scores: &crate::model::Matrix,
    table: Option<&PlausibilityTable>,
) -> Vec<Detection> {
    let m = record.objects.len();
    let mut out = Vec::with_capacity(record.n_pairs());
    for (i, h) in record.humans.iter().enumerate() {
        for (j, o) in record.objects.iter().enumerate() {
            let (verb, p) = argmax(pair_scores.row(i * m + j));
            let mut score = p * h.score * o.score;
            if let Some(t) = table {
                score = rescore(score, o.category, verb, t);
            }
            out.push(Detection {
                human_bbox: h.bbox,
                object_bbox: o.bbox,
                object_category: o.category,
                verb_category: verb,
                score,
            });
        }
    }
    out
}

/// Runs the model on every pair of `record`. Background flags are ignored:
/// pruning is a training-time device only.
pub fn detect(
    record: &ImageRecord,
    appearance: &Appearance,
    params: &ModelParams,
    table: Option<&PlausibilityTable>,
) -> Vec<Detection> {
    if record.n_pairs() == 0 {
        return Vec::new();
    }
    let mut clean = record.clone();
    clean.clear_background();
    let z = pair_features(&clean, appearance, params, &ConcatEncoder).z;
    detections_from_scores(&clean, &forward_hoi(&z, params), table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDetections {
    pub image_id: String,
    pub detections: Vec<Detection>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetection {
    human_box: [f64; 4],
    object_box: [f64; 4],
    object_category: String,
    verb: String,
    score: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawImage {
    image_id: String,
    detections: Vec<RawDetection>,
}

pub fn save_detections(path: &Path, images: &[ImageDetections], vocabs: &VocabSet) -> Result<()> {
    let raw: Vec<RawImage> = images
        .iter()
        .map(|im| RawImage {
            image_id: im.image_id.clone(),
            detections: im
                .detections
                .iter()
                .map(|d| RawDetection {
                    human_box: d.human_bbox.into(),
                    object_box: d.object_bbox.into(),
                    object_category: vocabs.objects.name(d.object_category).to_string(),
                    verb: vocabs.verbs.name(d.verb_category).to_string(),
                    score: d.score,
                })
                .collect(),
        })
        .collect();
    fsio::write_jsonl(path, &raw)
}

fn lookup(v: &Vocabulary, name: &str, image: &str, line: usize) -> Result<usize> {
    v.get(name).ok_or_else(|| Error::UnknownLabel {
        role: v.role().name(),
        label: name.to_string(),
        record: image.to_string(),
        line,
    })
}

fn parse_box(b: [f64; 4]) -> Result<BBox> {
    BBox::new(b[0], b[1], b[2], b[3])
}

pub fn load_detections(path: &Path, vocabs: &VocabSet) -> Result<Vec<ImageDetections>> {
    let mut out = Vec::new();
    for (line, raw) in fsio::read_jsonl::<RawImage>(path)? {
        let mut detections = Vec::with_capacity(raw.detections.len());
        for d in raw.detections {
            if !(d.score.is_finite() && d.score >= 0.0) {
                return Err(Error::record(&raw.image_id, format!("invalid detection score {}", d.score)));
            }
            detections.push(Detection {
                human_bbox: parse_box(d.human_box)?,
                object_bbox: parse_box(d.object_box)?,
                object_category: lookup(&vocabs.objects, &d.object_category, &raw.image_id, line)?,
                verb_category: lookup(&vocabs.verbs, &d.verb, &raw.image_id, line)?,
                score: d.score,
            });
        }
        out.push(ImageDetections {
            image_id: raw.image_id,
            detections,
        });
    }
    Ok(out)
}
