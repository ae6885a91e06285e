//! Caption-guided proposal pruning.
//!
//! Grounding maps come from an external vision-language tool run on the
//! captions produced by [`build_caption_manifest`]. Each proposal is scored by
//! the mean normalized relevance inside its box, weighted by detector
//! confidence, and the lower half of each kind is flagged as background.

mod inflect;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use inflect::{past_participle, present_participle};

use crate::dataset::{ImageRecord, MapOrigin, Proposal};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::gridfile::{Grid, Magic};
use crate::labels::TaggedCaption;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionManifest {
    pub image_id: String,
    pub human_captions: Vec<String>,
    pub object_captions: Vec<String>,
}

fn manifest_from(image_id: &str, verbs: &[&str], nouns: &[&str]) -> CaptionManifest {
    let human_captions = verbs
        .iter()
        .map(|v| format!("a person is {}", present_participle(v)))
        .collect();
    let object_captions = nouns
        .iter()
        .flat_map(|n| {
            verbs
                .iter()
                .map(move |v| format!("a {n} is being {}", past_participle(v)))
        })
        .collect();
    CaptionManifest {
        image_id: image_id.to_string(),
        human_captions,
        object_captions,
    }
}

/// One human caption per verb and one object caption per noun/verb pair.
pub fn build_caption_manifest(caption: &TaggedCaption) -> CaptionManifest {
    manifest_from(&caption.image_id, &caption.verbs(), &caption.nouns())
}

/// Merges captions sharing an `image_id` (verb and noun sets are unioned)
/// and builds one manifest per image, in first-seen order.
pub fn build_manifests(captions: &[TaggedCaption]) -> Vec<CaptionManifest> {
    let mut order: Vec<&str> = Vec::new();
    let mut sets: HashMap<&str, (Vec<&str>, Vec<&str>)> = HashMap::new();
    for c in captions {
        let e = sets.entry(&c.image_id).or_insert_with(|| {
            order.push(&c.image_id);
            Default::default()
        });
        for v in c.verbs() {
            if !e.0.contains(&v) {
                e.0.push(v);
            }
        }
        for n in c.nouns() {
            if !e.1.contains(&n) {
                e.1.push(n);
            }
        }
    }
    order
        .into_iter()
        .map(|id| {
            let (v, n) = &sets[id];
            manifest_from(id, v, n)
        })
        .collect()
}

/// Min-max normalized relevance grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub origin: MapOrigin,
}

/// `(x - min) / (max - min)` per cell; a constant grid maps to zeros.
pub fn normalize_map(raw: &Grid, origin: MapOrigin) -> Result<GroundingMap> {
    if raw.values.is_empty() {
        return Err(Error::Shape("empty grounding map".into()));
    }
    if let Some(i) = raw.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: i / raw.width,
            col: i % raw.width,
        });
    }
    let (lo, hi) = raw
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v as f64), hi.max(v as f64))
        });
    let range = hi - lo;
    let values = if range > 0.0 {
        raw.values.iter().map(|&v| (v as f64 - lo) / range).collect()
    } else {
        vec![0.0; raw.values.len()]
    };
    Ok(GroundingMap {
        width: raw.width,
        height: raw.height,
        values,
        origin,
    })
}

impl GroundingMap {
    /// Mean over cells whose centers fall in `[x1, x2) x [y1, y2)`.
    /// `None` when the box covers no cell.
    pub fn box_mean(&self, b: &BBox) -> Option<f64> {
        let span = |lo: f64, hi: f64, n: usize| {
            let a = ((lo - 0.5).ceil().max(0.0) as usize).min(n);
            let z = ((hi - 0.5).ceil().max(0.0) as usize).min(n);
            a..z.max(a)
        };
        let (xs, ys) = (span(b.x1, b.x2, self.width), span(b.y1, b.y2, self.height));
        let cells = xs.len() * ys.len();
        if cells == 0 {
            return None;
        }
        let mut sum = 0.0;
        for y in ys {
            let row = &self.values[y * self.width..(y + 1) * self.width];
            sum += row[xs.clone()].iter().sum::<f64>();
        }
        Some(sum / cells as f64)
    }
}

/// Mean over maps of the mean relevance inside the proposal box.
pub fn grounding_score(p: &Proposal, maps: &[GroundingMap]) -> f64 {
    if maps.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for m in maps {
        match m.box_mean(&p.bbox) {
            Some(v) => total += v,
            None => {
                log::warn!("proposal box {:?} covers no map cells; grounding score 0", p.bbox);
                return 0.0;
            }
        }
    }
    total / maps.len() as f64
}

pub fn interaction_score(g: f64, detector_score: f64) -> f64 {
    g * detector_score
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionScore {
    pub proposal_index: usize,
    pub grounding: f64,
    pub interaction: f64,
}

pub fn score_proposals(props: &[Proposal], maps: &[GroundingMap]) -> Vec<InteractionScore> {
    props
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let g = grounding_score(p, maps);
            InteractionScore {
                proposal_index: i,
                grounding: g,
                interaction: interaction_score(g, p.score),
            }
        })
        .collect()
}

/// Flags all but the top `ceil(n / 2)` proposals as background. Ranking is by
/// interaction score, then detector score, then original index.
fn flag_bottom_half(props: &mut [Proposal], maps: &[GroundingMap]) {
    let scores = score_proposals(props, maps);
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .interaction
            .total_cmp(&scores[a].interaction)
            .then(props[b].score.total_cmp(&props[a].score))
            .then(a.cmp(&b))
    });
    let keep = props.len().div_ceil(2);
    for (rank, &i) in order.iter().enumerate() {
        props[i].background = rank >= keep;
    }
}

/// Returns a copy of `record` with background flags set per kind. A kind
/// without maps keeps its flags (with a warning).
pub fn prune_proposals(
    record: &ImageRecord,
    maps_h: &[GroundingMap],
    maps_o: &[GroundingMap],
) -> ImageRecord {
    let mut out = record.clone();
    if maps_h.is_empty() {
        log::warn!("{}: no human grounding maps, humans left unpruned", record.id);
    } else {
        flag_bottom_half(&mut out.humans, maps_h);
    }
    if maps_o.is_empty() {
        log::warn!("{}: no object grounding maps, objects left unpruned", record.id);
    } else {
        flag_bottom_half(&mut out.objects, maps_o);
    }
    out
}

/// Reads and normalizes every map referenced by `record`, split by origin.
pub fn load_record_maps(
    record: &ImageRecord,
    base: &Path,
) -> Result<(Vec<GroundingMap>, Vec<GroundingMap>)> {
    let (mut gh, mut go) = (Vec::new(), Vec::new());
    for r in &record.grounding_refs {
        let path = base.join(&r.path);
        let grid = Grid::read(&path, Magic::GroundingMap)?;
        if grid.width != record.width as usize || grid.height != record.height as usize {
            return Err(Error::record(
                &record.id,
                format!(
                    "map {} is {}x{}, image is {}x{}",
                    path.display(),
                    grid.width,
                    grid.height,
                    record.width,
                    record.height
                ),
            ));
        }
        let map = normalize_map(&grid, r.origin).map_err(|e| {
            Error::record(&record.id, format!("map {}: {e}", path.display()))
        })?;
        match r.origin {
            MapOrigin::Human => gh.push(map),
            MapOrigin::Object => go.push(map),
        }
    }
    Ok((gh, go))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Kind;
    use crate::labels::{Pos, TaggedToken};
    use proptest::prelude::*;

    fn grid(w: usize, h: usize, v: &[f32]) -> Grid {
        Grid::new(w, h, v.to_vec()).unwrap()
    }

    fn uniform(v: f64, w: usize, h: usize) -> GroundingMap {
        GroundingMap { width: w, height: h, values: vec![v; w * h], origin: MapOrigin::Human }
    }

    fn prop(b: [f64; 4], score: f64) -> Proposal {
        Proposal { bbox: BBox::from(b), category: 0, score, kind: Kind::Human, background: false }
    }

    fn caption(verbs: &[&str], nouns: &[&str]) -> TaggedCaption {
        let mut tokens: Vec<_> = nouns.iter().map(|n| TaggedToken::new(n, n, Pos::Noun)).collect();
        tokens.extend(verbs.iter().map(|v| TaggedToken::new(v, v, Pos::Verb)));
        TaggedCaption { image_id: "img".into(), tokens }
    }

    #[test]
    fn manifest_templates() {
        let m = build_caption_manifest(&caption(&["ride"], &["horse"]));
        assert_eq!(m.human_captions, ["a person is riding"]);
        assert_eq!(m.object_captions, ["a horse is being ridden"]);
        let m = build_caption_manifest(&caption(&[], &["dog"]));
        assert!(m.human_captions.is_empty() && m.object_captions.is_empty());
        let m = build_caption_manifest(&caption(&["eat", "kick"], &["ball", "cake"]));
        assert_eq!((m.human_captions.len(), m.object_captions.len()), (2, 4));
        assert_eq!(m.object_captions[1], "a ball is being kicked");
    }

    #[test]
    fn manifests_merge_per_image() {
        let a = caption(&["ride"], &["horse"]);
        let mut b = caption(&["ride", "feed"], &["man"]);
        b.image_id = "img".into();
        let ms = build_manifests(&[a, b]);
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].human_captions, ["a person is riding", "a person is feeding"]);
        assert_eq!(ms[0].object_captions.len(), 4);
    }

    #[test]
    fn normalization() {
        let m = normalize_map(&grid(2, 2, &[5.0; 4]), MapOrigin::Human).unwrap();
        assert_eq!(m.values, vec![0.0; 4]);
        let m = normalize_map(&grid(3, 1, &[0.0, 5.0, 10.0]), MapOrigin::Human).unwrap();
        assert_eq!(m.values, vec![0.0, 0.5, 1.0]);
        let m = normalize_map(&grid(2, 1, &[2.0, 4.0]), MapOrigin::Object).unwrap();
        assert_eq!(m.values, vec![0.0, 1.0]);
        let err = normalize_map(&grid(2, 2, &[0.0, 1.0, f32::NAN, 0.0]), MapOrigin::Human);
        assert!(matches!(err, Err(Error::NonFinite { row: 1, col: 0 })));
    }

    #[test]
    fn box_scores() {
        let p = prop([0.2, 0.3, 1.7, 1.9], 1.0);
        assert_eq!(grounding_score(&p, &[uniform(0.5, 2, 2)]), 0.5);
        assert_eq!(grounding_score(&p, &[uniform(0.2, 2, 2), uniform(0.8, 2, 2)]), 0.5);
        let split = GroundingMap { width: 2, height: 2, values: vec![0.0, 1.0, 0.0, 1.0], origin: MapOrigin::Human };
        assert_eq!(grounding_score(&prop([1.0, 0.0, 2.0, 2.0], 1.0), &[split.clone()]), 1.0);
        assert_eq!(grounding_score(&prop([0.0, 0.0, 2.0, 1.0], 1.0), &[split]), 0.5);
        // box between cell centers
        assert_eq!(grounding_score(&prop([0.6, 0.6, 1.4, 1.4], 1.0), &[uniform(1.0, 2, 2)]), 0.0);
    }

    #[test]
    fn interaction_products() {
        assert!((interaction_score(0.5, 0.8) - 0.4).abs() < 1e-15);
        assert_eq!(interaction_score(0.0, 1.0), 0.0);
        assert_eq!(interaction_score(1.0, 1.0), 1.0);
    }

    fn record_with(humans: Vec<Proposal>, objects: Vec<Proposal>) -> ImageRecord {
        ImageRecord {
            id: "r".into(),
            width: 4,
            height: 1,
            humans,
            objects,
            verb_labels: vec![],
            prep_labels: None,
            grounding_refs: vec![],
            features: None,
            ground_truth: vec![],
        }
    }

    /// A 4x1 map with relevance `vals[i]` in column i.
    fn column_map(vals: &[f64]) -> GroundingMap {
        GroundingMap { width: vals.len(), height: 1, values: vals.to_vec(), origin: MapOrigin::Human }
    }

    #[test]
    fn prune_keeps_top_half() {
        let humans: Vec<_> = (0..4).map(|i| prop([i as f64, 0.0, i as f64 + 1.0, 1.0], 1.0)).collect();
        // out of order so ranking is exercised: I = [0.4, 0.9, 0.1, 0.7]
        let maps = [column_map(&[0.4, 0.9, 0.1, 0.7])];
        let out = prune_proposals(&record_with(humans, vec![]), &maps, &[]);
        let bg: Vec<_> = out.humans.iter().map(|p| p.background).collect();
        assert_eq!(bg, [true, false, true, false]);
    }

    #[test]
    fn prune_ceiling_and_single() {
        let objs: Vec<_> = (0..5).map(|i| prop([0.0, 0.0, 1.0, 1.0], 0.1 * (i + 1) as f64)).collect();
        let maps = [uniform(1.0, 4, 1)];
        let out = prune_proposals(&record_with(vec![], objs), &[], &maps);
        assert_eq!(out.objects.iter().filter(|p| !p.background).count(), 3);
        // equal grounding: ranked by detector score
        assert!(out.objects[2..].iter().all(|p| !p.background));
        let out = prune_proposals(&record_with(vec![prop([0.0, 0.0, 1.0, 1.0], 0.2)], vec![]), &maps, &maps);
        assert!(!out.humans[0].background);
    }

    #[test]
    fn prune_without_maps_is_noop() {
        let mut h = prop([0.0, 0.0, 1.0, 1.0], 0.5);
        h.background = true;
        let rec = record_with(vec![h.clone(), h], vec![]);
        assert_eq!(prune_proposals(&rec, &[], &[]), rec);
    }

    fn arb_props(max: usize) -> impl Strategy<Value = Vec<Proposal>> {
        prop::collection::vec((0.0..3.0f64, 0.5..1.0f64, 0.0..=1.0f64), 0..max).prop_map(|v| {
            v.into_iter().map(|(x, w, s)| prop([x, 0.0, x + w, 1.0], s)).collect()
        })
    }

    proptest! {
        #[test]
        fn prune_contract(h in arb_props(9), o in arb_props(9), mh in prop::collection::vec(0.0..1.0f64, 4), mo in prop::collection::vec(0.0..1.0f64, 4)) {
            let rec = record_with(h, o);
            let out = prune_proposals(&rec, &[column_map(&mh)], &[column_map(&mo)]);
            prop_assert_eq!(out.humans.iter().filter(|p| !p.background).count(), rec.humans.len().div_ceil(2));
            prop_assert_eq!(out.objects.iter().filter(|p| !p.background).count(), rec.objects.len().div_ceil(2));
            let mut restored = out.clone();
            restored.clear_background();
            prop_assert_eq!(restored, rec);
        }

        #[test]
        fn score_monotone_in_map(vals in prop::collection::vec(0.0..1.0f64, 12), bump in prop::collection::vec(0.0..1.0f64, 12), x in 0.0..3.5f64, y in 0.0..2.5f64, w in 0.1..4.0f64, hgt in 0.1..3.0f64) {
            let a = GroundingMap { width: 4, height: 3, values: vals.clone(), origin: MapOrigin::Human };
            let b = GroundingMap { values: vals.iter().zip(&bump).map(|(v, d)| v + d).collect(), ..a.clone() };
            let p = prop([x, y, x + w, y + hgt], 1.0);
            prop_assert!(grounding_score(&p, &[b]) >= grounding_score(&p, &[a]));
        }

        #[test]
        fn interaction_bounded(g in 0.0..=1.0f64, s in 0.0..=1.0f64) {
            let i = interaction_score(g, s);
            prop_assert!(i <= s && i <= g && i >= 0.0);
        }
    }
}
