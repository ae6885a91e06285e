//! Greedy IoU matching and average precision (Role, Agent and Full mAP).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::GroundTruthInstance;
use crate::error::Result;
use crate::fsio;
use crate::geometry::iou;
use crate::infer::Detection;
use crate::vocab::VocabSet;

pub const IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Verb, object category, human box and object box must all agree.
    Role,
    /// Verb and human box only.
    Agent,
    /// Role matching over observed (verb, object) classes.
    Full,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Role => "role",
            Mode::Agent => "agent",
            Mode::Full => "full",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "role" => Ok(Mode::Role),
            "agent" => Ok(Mode::Agent),
            "full" | "full_map" => Ok(Mode::Full),
            _ => Err(format!("unknown mode `{s}` (expected role, agent or full)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    AllPoint,
    ElevenPoint,
}

/// Match quality of `d` against `g`, or `None` if `d` does not qualify.
/// Role quality is the smaller of the two IoUs.
pub fn match_quality(d: &Detection, g: &GroundTruthInstance, mode: Mode) -> Option<f64> {
    if d.verb_category != g.verb_category {
        return None;
    }
    let h = iou(&d.human_bbox, &g.human_bbox);
    if h < IOU_THRESHOLD {
        return None;
    }
    match mode {
        Mode::Agent => Some(h),
        Mode::Role | Mode::Full => {
            if d.object_category != g.object_category {
                return None;
            }
            let o = iou(&d.object_bbox, &g.object_bbox);
            (o >= IOU_THRESHOLD).then_some(h.min(o))
        }
    }
}

/// TP/FP flag per detection. Detections are visited in the given order, which
/// must be descending score; each one claims the best-quality unmatched GT
/// (lowest index on ties).
pub fn match_greedy(dets: &[Detection], gts: &[GroundTruthInstance], mode: Mode) -> Vec<bool> {
    let mut taken = vec![false; gts.len()];
    dets.iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (k, g) in gts.iter().enumerate() {
                if taken[k] {
                    continue;
                }
                if let Some(q) = match_quality(d, g, mode) {
                    if best.is_none_or(|(_, bq)| q > bq) {
                        best = Some((k, q));
                    }
                }
            }
            if let Some((k, _)) = best {
                taken[k] = true;
                true
            } else {
                false
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// `(recall, precision)` after each ranked detection.
    pub points: Vec<(f64, f64)>,
    pub ap: f64,
}

/// AP of ranked TP/FP flags against `n_gt` ground truths; 0 when `n_gt` is 0.
pub fn average_precision(flags: &[bool], n_gt: usize, interp: Interpolation) -> f64 {
    pr_curve(flags, n_gt, interp).ap
}

pub fn pr_curve(flags: &[bool], n_gt: usize, interp: Interpolation) -> PrCurve {
    let mut points = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (i, &f) in flags.iter().enumerate() {
        tp += f as usize;
        let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
        points.push((recall, tp as f64 / (i + 1) as f64));
    }
    if n_gt == 0 {
        return PrCurve { points, ap: 0.0 };
    }
    // Precision envelope: best precision at this rank or any later one.
    let mut envelope = vec![0.0; points.len()];
    let mut run = 0.0f64;
    for i in (0..points.len()).rev() {
        run = run.max(points[i].1);
        envelope[i] = run;
    }
    let ap = match interp {
        Interpolation::AllPoint => {
            // Recall grows by 1/n_gt exactly at each TP.
            // fold from +0.0: an empty float `sum` is -0.0
            let sum = flags
                .iter()
                .zip(&envelope)
                .filter(|(f, _)| **f)
                .fold(0.0, |acc, (_, e)| acc + e);
            sum / n_gt as f64
        }
        Interpolation::ElevenPoint => {
            let mut total = 0.0;
            for t in 0..=10 {
                let t = t as f64 / 10.0;
                let best = points
                    .iter()
                    .filter(|(r, _)| *r >= t - 1e-12)
                    .map(|(_, p)| *p)
                    .fold(0.0, f64::max);
                total += best;
            }
            total / 11.0
        }
    };
    PrCurve { points, ap }
}

/// One image's detections and ground truth.
#[derive(Debug, Clone, Copy)]
pub struct EvalImage<'a> {
    pub detections: &'a [Detection],
    pub ground_truth: &'a [GroundTruthInstance],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassResult {
    pub name: String,
    pub n_gt: usize,
    pub curve: PrCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub mode: Mode,
    /// Classes with at least one ground truth, in vocabulary order.
    pub classes: Vec<ClassResult>,
    pub mean_ap: f64,
}

#[derive(Serialize, Deserialize)]
struct RawReport {
    mode: Mode,
    per_class: BTreeMap<String, f64>,
    mean_ap: f64,
}

impl Report {
    pub fn to_json(&self) -> String {
        let raw = RawReport {
            mode: self.mode,
            per_class: self.classes.iter().map(|c| (c.name.clone(), c.curve.ap)).collect(),
            mean_ap: self.mean_ap,
        };
        serde_json::to_string_pretty(&raw).expect("serializable")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json();
        text.push('\n');
        fsio::write_atomic(path, text.as_bytes())
    }

    pub fn ap(&self, name: &str) -> Option<f64> {
        self.classes.iter().find(|c| c.name == name).map(|c| c.curve.ap)
    }

    /// Writes `<dir>/<class>.csv` with `recall,precision` rows.
    pub fn write_curves(&self, dir: &Path) -> Result<()> {
        for c in &self.classes {
            let mut csv = String::from("recall,precision\n");
            for (r, p) in &c.curve.points {
                csv.push_str(&format!("{r},{p}\n"));
            }
            let file = c.name.replace(['/', ' '], "_");
            fsio::write_atomic(&dir.join(format!("{file}.csv")), csv.as_bytes())?;
        }
        Ok(())
    }
}

/// Evaluation class key: a verb, or a (verb, object) pair in full mode.
type ClassKey = (usize, Option<usize>);

fn det_key(d: &Detection, mode: Mode) -> ClassKey {
    (d.verb_category, (mode == Mode::Full).then_some(d.object_category))
}

fn gt_key(g: &GroundTruthInstance, mode: Mode) -> ClassKey {
    (g.verb_category, (mode == Mode::Full).then_some(g.object_category))
}

/// Per-class AP over a set of images. Detections are ranked per class across
/// all images by descending score, ties broken by input order.
pub fn evaluate(images: &[EvalImage<'_>], vocabs: &VocabSet, mode: Mode, interp: Interpolation) -> Report {
    let mut n_gt: BTreeMap<ClassKey, usize> = BTreeMap::new();
    for im in images {
        for g in im.ground_truth {
            *n_gt.entry(gt_key(g, mode)).or_default() += 1;
        }
    }

    // Flags per class, with their scores, in global input order.
    let mut ranked: BTreeMap<ClassKey, Vec<(f64, usize, bool)>> = BTreeMap::new();
    let mut order = 0usize;
    for im in images {
        for key in n_gt.keys() {
            let mut idx: Vec<usize> = (0..im.detections.len())
                .filter(|&k| det_key(&im.detections[k], mode) == *key)
                .collect();
            if idx.is_empty() {
                continue;
            }
            idx.sort_by(|&a, &b| im.detections[b].score.total_cmp(&im.detections[a].score));
            let dets: Vec<Detection> = idx.iter().map(|&k| im.detections[k].clone()).collect();
            let gts: Vec<GroundTruthInstance> = im
                .ground_truth
                .iter()
                .filter(|g| gt_key(g, mode) == *key)
                .cloned()
                .collect();
            let flags = match_greedy(&dets, &gts, mode);
            if mode == Mode::Role {
                check_agent_criteria(&dets, &gts);
            }
            let slot = ranked.entry(*key).or_default();
            for (k, f) in idx.iter().zip(flags) {
                slot.push((im.detections[*k].score, order + k, f));
            }
        }
        order += im.detections.len();
    }

    let mut classes = Vec::new();
    for (key, &count) in &n_gt {
        let mut rows = ranked.remove(key).unwrap_or_default();
        rows.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let flags: Vec<bool> = rows.iter().map(|r| r.2).collect();
        let name = match key {
            (v, None) => vocabs.verbs.name(*v).to_string(),
            (v, Some(o)) => format!("{}/{}", vocabs.verbs.name(*v), vocabs.objects.name(*o)),
        };
        classes.push(ClassResult {
            name,
            n_gt: count,
            curve: pr_curve(&flags, count, interp),
        });
    }
    let mean_ap = if classes.is_empty() {
        0.0
    } else {
        classes.iter().fold(0.0, |acc, c| acc + c.curve.ap) / classes.len() as f64
    };
    Report { mode, classes, mean_ap }
}

/// Every (detection, GT) pair that qualifies under Role rules must qualify
/// under Agent rules.
fn check_agent_criteria(dets: &[Detection], gts: &[GroundTruthInstance]) {
    for d in dets {
        for g in gts {
            if match_quality(d, g, Mode::Role).is_some() {
                assert!(
                    match_quality(d, g, Mode::Agent).is_some(),
                    "role match without agent match"
                );
            }
        }
    }
}
