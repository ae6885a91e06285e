//! Planted-scene generator used for end-to-end checks.
//!
//! Each image holds 1-3 interacting pairs. Interacting humans and objects get
//! appearance vectors from verb-specific clusters; distractor proposals get
//! either a generic vector or, for confounders, a vector from a cluster that
//! co-occurs with one of the image's verbs. Grounding maps are Gaussian bumps
//! over the true participants only.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    save_dataset, GroundTruthInstance, ImageRecord, Kind, MapOrigin, MapRef, Proposal,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalImage, Interpolation, Mode, Report};
use crate::fsio;
use crate::geometry::{iou, BBox};
use crate::gridfile::{Grid, Magic};
use crate::infer::{Detection, ImageDetections};
use crate::labels::{Pos, TaggedCaption, TaggedToken, Triplet, TripletRecord};
use crate::plausibility::{save_distributions, DistributionFile, DistributionSource, VerbDistribution};
use crate::vocab::{Role, VocabSet, Vocabulary, PERSON};

const VERB_NAMES: [&str; 12] = [
    "ride", "hold", "eat", "kick", "carry", "cut", "throw", "read", "drink", "push", "pull", "catch",
];
const OBJECT_NAMES: [&str; 12] = [
    "horse", "cup", "ball", "bicycle", "book", "knife", "kite", "skateboard", "bottle", "umbrella",
    "pizza", "frisbee",
];
/// Spatial relations, in preposition-vocabulary order.
const RELATIONS: [&str; 4] = ["next_to", "above", "below", "in_front_of"];

/// Boxes closer than this (Chebyshev gap, pixels) count as touching.
const ADJACENT_GAP: f64 = 2.5;
/// Minimum gap between the hulls of two planted pairs.
const PAIR_MARGIN: f64 = 4.0;
const MAX_DISTRACTORS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub n_verbs: usize,
    /// Object categories besides `person`.
    pub n_objects: usize,
    pub n_preps: usize,
    pub appearance_width: usize,
    /// Fraction of proposals that take part in no planted interaction.
    pub distractor_rate: f64,
    /// Fraction of distractor objects drawn from a verb-correlated cluster and
    /// placed next to a true human.
    pub confounder_rate: f64,
    /// Per-dimension appearance noise (standard deviation).
    pub noise: f64,
    pub image_size: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 200,
            n_test: 50,
            n_verbs: 3,
            n_objects: 4,
            n_preps: 4,
            appearance_width: 16,
            distractor_rate: 0.5,
            confounder_rate: 0.5,
            noise: 0.5,
            image_size: 64,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("n_train", self.n_train),
            ("n_test", self.n_test),
            ("n_verbs", self.n_verbs),
            ("n_objects", self.n_objects),
            ("n_preps", self.n_preps),
            ("appearance_width", self.appearance_width),
        ] {
            if v == 0 {
                return bad(format!("synth.{name} must be at least 1"));
            }
        }
        if self.n_verbs > VERB_NAMES.len() || self.n_objects > OBJECT_NAMES.len() {
            return bad(format!(
                "at most {} verbs and {} objects are supported",
                VERB_NAMES.len(),
                OBJECT_NAMES.len()
            ));
        }
        if self.n_preps > RELATIONS.len() {
            return bad(format!("at most {} prepositions are supported", RELATIONS.len()));
        }
        for (name, r) in [
            ("distractor_rate", self.distractor_rate),
            ("confounder_rate", self.confounder_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("synth.{name} must lie in [0, 1]"));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("synth.noise must be non-negative".into());
        }
        if self.image_size < 48 {
            return bad("synth.image_size must be at least 48".into());
        }
        Ok(())
    }

    pub fn vocabs(&self) -> VocabSet {
        let objects = std::iter::once(PERSON).chain(OBJECT_NAMES[..self.n_objects].iter().copied());
        VocabSet {
            verbs: Vocabulary::new(Role::Verb, VERB_NAMES[..self.n_verbs].iter().copied())
                .expect("fixed names"),
            objects: Vocabulary::new(Role::Object, objects).expect("fixed names"),
            preps: Vocabulary::new(Role::Preposition, RELATIONS[..self.n_preps].iter().copied())
                .expect("fixed names"),
        }
    }
}

/// Whether verb `v` is planted with object category `j` (vocabulary index,
/// `person` excluded).
pub fn compatible(cfg: &SynthConfig, v: usize, j: usize) -> bool {
    if j == 0 {
        return false;
    }
    let k = j - 1;
    k % cfg.n_verbs == v || v % cfg.n_objects == k
}

/// Planting centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    pub human: Vec<Vec<f64>>,
    pub object: Vec<Vec<f64>>,
    pub confounder: Vec<Vec<f64>>,
    pub generic_human: Vec<f64>,
    pub generic_object: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub record: ImageRecord,
    pub human_map: Grid,
    pub object_map: Grid,
    /// One row per human, then one per object.
    pub features: Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub vocabs: VocabSet,
    pub centroids: Centroids,
    pub train: Vec<SynthImage>,
    pub test: Vec<SynthImage>,
    pub distributions: DistributionFile,
    pub captions: Vec<TaggedCaption>,
    pub triplets: Vec<TripletRecord>,
}

/// Locations written by [`SynthDataset::write_to`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPaths {
    pub verbs: PathBuf,
    pub objects: PathBuf,
    pub prepositions: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    pub distributions: PathBuf,
    pub captions: PathBuf,
    pub triplets: PathBuf,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn gap(a: &BBox, b: &BBox) -> f64 {
    let gx = (a.x1.max(b.x1) - a.x2.min(b.x2)).max(0.0);
    let gy = (a.y1.max(b.y1) - a.y2.min(b.y2)).max(0.0);
    gx.max(gy)
}

pub fn adjacent(a: &BBox, b: &BBox) -> bool {
    gap(a, b) <= ADJACENT_GAP
}

fn inside(b: &BBox, size: f64) -> bool {
    b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= size && b.y2 <= size
}

fn random_box(rng: &mut ChaCha8Rng, size: f64, w: (f64, f64), h: (f64, f64)) -> BBox {
    let bw = rng.random_range(w.0..w.1);
    let bh = rng.random_range(h.0..h.1);
    let x1 = rng.random_range(0.0..size - bw);
    let y1 = rng.random_range(0.0..size - bh);
    BBox::from([x1, y1, x1 + bw, y1 + bh])
}

fn human_box(rng: &mut ChaCha8Rng, size: f64) -> BBox {
    random_box(rng, size, (9.0, 13.0), (14.0, 20.0))
}

/// An object box in relation `rel` to `h`.
fn place_object(rng: &mut ChaCha8Rng, h: &BBox, rel: usize) -> BBox {
    let ow = rng.random_range(7.0..10.0);
    let oh = rng.random_range(7.0..10.0);
    let g = rng.random_range(0.0..1.0);
    let (hcx, hcy) = h.center();
    let jitter = rng.random_range(-2.0..2.0);
    let (x1, y1) = match RELATIONS[rel] {
        "next_to" => {
            let x1 = if rng.random_bool(0.5) { h.x2 + g } else { h.x1 - g - ow };
            (x1, hcy - oh / 2.0 + jitter)
        }
        "above" => (hcx - ow / 2.0 + jitter, h.y1 - g - oh),
        "below" => (hcx - ow / 2.0 + jitter, h.y2 + g),
        _ => (hcx - ow / 2.0 + jitter, h.y1 + 0.65 * h.height() - oh / 2.0),
    };
    BBox::from([x1, y1, x1 + ow, y1 + oh])
}

struct Planted {
    verb: usize,
    object_category: usize,
    relation: usize,
    human: BBox,
    object: BBox,
}

struct Slot {
    bbox: BBox,
    kind: Kind,
    category: usize,
    appearance: Vec<f64>,
}

fn bump_map(boxes: &[BBox], size: usize, noise: f64, rng: &mut ChaCha8Rng) -> Grid {
    let mut values = vec![0f32; size * size];
    for (r, row) in values.chunks_mut(size).enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            let mut v = 0.0;
            for b in boxes {
                let (cx, cy) = b.center();
                let (sx, sy) = (b.width() / 2.0, b.height() / 2.0);
                v += (-0.5 * (((x - cx) / sx).powi(2) + ((y - cy) / sy).powi(2))).exp();
            }
            v += 0.1 * noise * rng.random_range(0.0..1.0);
            *cell = v as f32;
        }
    }
    Grid::new(size, size, values).expect("square grid")
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    centroids: &'a Centroids,
    rng: ChaCha8Rng,
    compat: Vec<Vec<usize>>,
}

impl Generator<'_> {
    fn noisy(&mut self, centroid: &[f64]) -> Vec<f64> {
        let n = self.cfg.noise;
        centroid
            .iter()
            .map(|c| c + n * self.rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn plant_pairs(&mut self) -> Vec<Planted> {
        let size = self.cfg.image_size as f64;
        let want = self.rng.random_range(1..=3usize);
        let mut pairs: Vec<Planted> = Vec::new();
        for _ in 0..want {
            for _ in 0..50 {
                let verb = self.rng.random_range(0..self.cfg.n_verbs);
                let objs = &self.compat[verb];
                let object_category = objs[self.rng.random_range(0..objs.len())];
                let relation = self.rng.random_range(0..self.cfg.n_preps);
                let human = human_box(&mut self.rng, size);
                let object = place_object(&mut self.rng, &human, relation);
                if !inside(&object, size) {
                    continue;
                }
                let hull = human.hull(&object);
                if pairs
                    .iter()
                    .any(|p| gap(&p.human.hull(&p.object), &hull) <= PAIR_MARGIN)
                {
                    continue;
                }
                pairs.push(Planted {
                    verb,
                    object_category,
                    relation,
                    human,
                    object,
                });
                break;
            }
        }
        if pairs.is_empty() {
            // Fall back to a single pair in the middle of the image.
            let c = size / 2.0;
            let verb = self.rng.random_range(0..self.cfg.n_verbs);
            pairs.push(Planted {
                verb,
                object_category: self.compat[verb][0],
                relation: 0,
                human: BBox::from([c - 11.0, c - 8.0, c - 1.0, c + 8.0]),
                object: BBox::from([c, c - 4.0, c + 8.0, c + 4.0]),
            });
        }
        pairs
    }

    fn free(boxes: &[BBox], b: &BBox, size: f64) -> bool {
        inside(b, size) && boxes.iter().all(|o| iou(o, b) < 0.1)
    }

    fn image(&mut self, id: String) -> (SynthImage, Vec<Planted>) {
        let size = self.cfg.image_size as f64;
        let pairs = self.plant_pairs();
        let mut humans = Vec::new();
        let mut objects = Vec::new();
        for p in &pairs {
            let ha = self.noisy(&self.centroids.human[p.verb].clone());
            let oa = self.noisy(&self.centroids.object[p.verb].clone());
            humans.push(Slot { bbox: p.human, kind: Kind::Human, category: 0, appearance: ha });
            objects.push(Slot {
                bbox: p.object,
                kind: Kind::Object,
                category: p.object_category,
                appearance: oa,
            });
        }

        let t = pairs.len();
        let rate = self.cfg.distractor_rate;
        let d = if rate >= 1.0 {
            MAX_DISTRACTORS
        } else {
            ((2 * t) as f64 * rate / (1.0 - rate)).round() as usize
        }
        .min(MAX_DISTRACTORS);
        let d_h = d / 2;
        let d_o = d - d_h;
        let mut taken: Vec<BBox> = humans.iter().chain(&objects).map(|s| s.bbox).collect();

        for _ in 0..d_h {
            for _ in 0..100 {
                let b = human_box(&mut self.rng, size);
                if Self::free(&taken, &b, size) {
                    taken.push(b);
                    let a = self.noisy(&self.centroids.generic_human.clone());
                    humans.push(Slot { bbox: b, kind: Kind::Human, category: 0, appearance: a });
                    break;
                }
            }
        }
        for _ in 0..d_o {
            let category = self.rng.random_range(1..=self.cfg.n_objects);
            let confounder = self.rng.random_bool(self.cfg.confounder_rate);
            let anchor = self.rng.random_range(0..t);
            for attempt in 0..100 {
                let b = if confounder && attempt < 50 {
                    let rel = self.rng.random_range(0..self.cfg.n_preps);
                    place_object(&mut self.rng, &pairs[anchor].human, rel)
                } else {
                    random_box(&mut self.rng, size, (7.0, 10.0), (7.0, 10.0))
                };
                if Self::free(&taken, &b, size) {
                    taken.push(b);
                    let centroid = if confounder {
                        self.centroids.confounder[pairs[anchor].verb].clone()
                    } else {
                        self.centroids.generic_object.clone()
                    };
                    let a = self.noisy(&centroid);
                    objects.push(Slot { bbox: b, kind: Kind::Object, category, appearance: a });
                    break;
                }
            }
        }

        // Proposal order carries no information.
        use rand::seq::SliceRandom;
        humans.shuffle(&mut self.rng);
        objects.shuffle(&mut self.rng);

        let score = |s: &Slot, rng: &mut ChaCha8Rng| Proposal {
            bbox: s.bbox,
            category: s.category,
            score: rng.random_range(0.5..1.0),
            kind: s.kind,
            background: false,
        };
        let hp: Vec<Proposal> = humans.iter().map(|s| score(s, &mut self.rng)).collect();
        let op: Vec<Proposal> = objects.iter().map(|s| score(s, &mut self.rng)).collect();

        let width = self.cfg.appearance_width;
        let features: Vec<f32> = humans
            .iter()
            .chain(&objects)
            .flat_map(|s| s.appearance.iter().map(|&v| v as f32))
            .collect();
        let features = Grid::new(width, humans.len() + objects.len(), features).expect("shape");

        let n = self.cfg.image_size as usize;
        let hb: Vec<BBox> = pairs.iter().map(|p| p.human).collect();
        let ob: Vec<BBox> = pairs.iter().map(|p| p.object).collect();
        let human_map = bump_map(&hb, n, self.cfg.noise, &mut self.rng);
        let object_map = bump_map(&ob, n, self.cfg.noise, &mut self.rng);

        let mut verb_labels = vec![false; self.cfg.n_verbs];
        let mut prep_labels = vec![false; self.cfg.n_preps];
        for p in &pairs {
            verb_labels[p.verb] = true;
            prep_labels[p.relation] = true;
        }
        let record = ImageRecord {
            grounding_refs: vec![
                MapRef { path: format!("maps/{id}_h.gmap"), origin: MapOrigin::Human },
                MapRef { path: format!("maps/{id}_o.gmap"), origin: MapOrigin::Object },
            ],
            features: Some(format!("features/{id}.feat")),
            id,
            width: self.cfg.image_size,
            height: self.cfg.image_size,
            humans: hp,
            objects: op,
            verb_labels,
            prep_labels: Some(prep_labels),
            ground_truth: pairs
                .iter()
                .map(|p| GroundTruthInstance {
                    human_bbox: p.human,
                    object_bbox: p.object,
                    object_category: p.object_category,
                    verb_category: p.verb,
                })
                .collect(),
        };
        (
            SynthImage {
                record,
                human_map,
                object_map,
                features,
            },
            pairs,
        )
    }
}

fn caption(id: &str, verb: &str, noun: &str) -> TaggedCaption {
    TaggedCaption {
        image_id: id.to_string(),
        tokens: vec![
            TaggedToken::new("a", "a", Pos::Other),
            TaggedToken::new("person", "person", Pos::Noun),
            TaggedToken::new(&format!("{verb}s"), verb, Pos::Verb),
            TaggedToken::new("a", "a", Pos::Other),
            TaggedToken::new(noun, noun, Pos::Noun),
        ],
    }
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let vocabs = cfg.vocabs();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a = cfg.appearance_width;
    let centroids = Centroids {
        human: (0..cfg.n_verbs).map(|_| normal_vec(&mut rng, a)).collect(),
        object: (0..cfg.n_verbs).map(|_| normal_vec(&mut rng, a)).collect(),
        confounder: (0..cfg.n_verbs).map(|_| normal_vec(&mut rng, a)).collect(),
        generic_human: normal_vec(&mut rng, a),
        generic_object: normal_vec(&mut rng, a),
    };
    let compat: Vec<Vec<usize>> = (0..cfg.n_verbs)
        .map(|v| (1..=cfg.n_objects).filter(|&j| compatible(cfg, v, j)).collect())
        .collect();

    let mut gen = Generator {
        cfg,
        centroids: &centroids,
        rng,
        compat,
    };
    let mut captions = Vec::new();
    let mut triplets = Vec::new();
    let mut train = Vec::with_capacity(cfg.n_train);
    for i in 0..cfg.n_train {
        let (img, pairs) = gen.image(format!("train_{i:05}"));
        let id = &img.record.id;
        for p in &pairs {
            captions.push(caption(
                id,
                vocabs.verbs.name(p.verb),
                vocabs.objects.name(p.object_category),
            ));
        }
        triplets.push(TripletRecord {
            image_id: id.clone(),
            triplets: pairs
                .iter()
                .map(|p| {
                    let pred = RELATIONS[p.relation].replace('_', " ");
                    Triplet::new(PERSON, &pred, vocabs.objects.name(p.object_category))
                })
                .collect(),
        });
        train.push(img);
    }
    let test = (0..cfg.n_test)
        .map(|i| gen.image(format!("test_{i:05}")).0)
        .collect();

    let dists = (0..vocabs.objects.len())
        .map(|j| {
            let probs: Vec<f64> = (0..cfg.n_verbs)
                .map(|v| if compatible(cfg, v, j) { 0.9 } else { 0.1 })
                .collect();
            VerbDistribution::new(j, probs)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SynthDataset {
        config: cfg.clone(),
        vocabs,
        centroids,
        train,
        test,
        distributions: DistributionFile {
            source: DistributionSource::Mlm,
            dists,
        },
        captions,
        triplets,
    })
}

impl SynthDataset {
    pub fn write_to(&self, dir: &Path) -> Result<SynthPaths> {
        let paths = SynthPaths {
            verbs: dir.join("verbs.json"),
            objects: dir.join("objects.json"),
            prepositions: dir.join("prepositions.json"),
            train: dir.join("train.jsonl"),
            test: dir.join("test.jsonl"),
            distributions: dir.join("distributions.json"),
            captions: dir.join("captions.jsonl"),
            triplets: dir.join("triplets.jsonl"),
        };
        self.vocabs.verbs.save(&paths.verbs)?;
        self.vocabs.objects.save(&paths.objects)?;
        self.vocabs.preps.save(&paths.prepositions)?;
        for img in self.train.iter().chain(&self.test) {
            let r = &img.record;
            img.human_map.write(&dir.join(&r.grounding_refs[0].path), Magic::GroundingMap)?;
            img.object_map.write(&dir.join(&r.grounding_refs[1].path), Magic::GroundingMap)?;
            let feat = r.features.as_deref().expect("synthetic records carry features");
            img.features.write(&dir.join(feat), Magic::Features)?;
        }
        let records = |s: &[SynthImage]| s.iter().map(|i| i.record.clone()).collect::<Vec<_>>();
        save_dataset(&paths.train, &records(&self.train), &self.vocabs)?;
        save_dataset(&paths.test, &records(&self.test), &self.vocabs)?;
        save_distributions(&paths.distributions, &self.distributions, &self.vocabs)?;
        fsio::write_jsonl(&paths.captions, &self.captions)?;
        fsio::write_jsonl(&paths.triplets, &self.triplets)?;
        Ok(paths)
    }
}

fn nearest(x: &[f32], centroids: &[&[f64]]) -> usize {
    let d = |c: &[f64]| -> f64 {
        x.iter().zip(c).map(|(a, b)| (*a as f64 - b).powi(2)).sum()
    };
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let v = d(c);
        if v < best.1 {
            best = (k, v);
        }
    }
    best.0
}

/// Scores every pair with the planting centroids: 1 when the human and the
/// object both sit nearest to the same verb's clusters and the boxes touch,
/// 0 otherwise.
pub fn oracle_detections(ds: &SynthDataset, images: &[SynthImage]) -> Vec<ImageDetections> {
    let c = &ds.centroids;
    let nv = ds.config.n_verbs;
    let mut hc: Vec<&[f64]> = c.human.iter().map(Vec::as_slice).collect();
    hc.push(&c.generic_human);
    let mut oc: Vec<&[f64]> = c.object.iter().map(Vec::as_slice).collect();
    oc.extend(c.confounder.iter().map(Vec::as_slice));
    oc.push(&c.generic_object);

    images
        .iter()
        .map(|img| {
            let r = &img.record;
            let n = r.humans.len();
            let mut detections = Vec::with_capacity(r.n_pairs());
            for (i, h) in r.humans.iter().enumerate() {
                let hv = nearest(img.features.row(i), &hc);
                for (j, o) in r.objects.iter().enumerate() {
                    let ov = nearest(img.features.row(n + j), &oc);
                    let hit = hv < nv && hv == ov && adjacent(&h.bbox, &o.bbox);
                    detections.push(Detection {
                        human_bbox: h.bbox,
                        object_bbox: o.bbox,
                        object_category: o.category,
                        verb_category: hv.min(nv - 1),
                        score: if hit { 1.0 } else { 0.0 },
                    });
                }
            }
            ImageDetections {
                image_id: r.id.clone(),
                detections,
            }
        })
        .collect()
}

/// Role AP of [`oracle_detections`] on the test split.
pub fn oracle_report(ds: &SynthDataset, mode: Mode) -> Report {
    let dets = oracle_detections(ds, &ds.test);
    let images: Vec<EvalImage<'_>> = ds
        .test
        .iter()
        .zip(&dets)
        .map(|(img, d)| EvalImage {
            detections: &d.detections,
            ground_truth: &img.record.ground_truth,
        })
        .collect();
    evaluate(&images, &ds.vocabs, mode, Interpolation::AllPoint)
}
