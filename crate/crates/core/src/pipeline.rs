//! Glue between datasets on disk, training, inference and evaluation.

use std::collections::HashMap;
use std::path::Path;

use crate::config::Toggles;
use crate::dataset::ImageRecord;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalImage, Interpolation, Mode, Report};
use crate::grounding::{load_record_maps, prune_proposals, GroundingMap};
use crate::gridfile::{Grid, Magic};
use crate::infer::{detect, ImageDetections};
use crate::model::checkpoint::{Checkpoint, VocabDigests};
use crate::model::{train, Appearance, ConcatEncoder, EpochStats, Matrix, PairEncoder, Shape, TrainConfig, TrainingExample};
use crate::plausibility::PlausibilityTable;
use crate::synth::SynthImage;
use crate::vocab::VocabSet;

/// A record with everything needed to train on or evaluate it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub record: ImageRecord,
    pub appearance: Appearance,
    pub maps_h: Vec<GroundingMap>,
    pub maps_o: Vec<GroundingMap>,
}

pub fn appearance_from_grid(record: &ImageRecord, grid: &Grid) -> Result<Appearance> {
    let rows = (0..grid.height)
        .map(|r| grid.row(r).iter().map(|&v| v as f64).collect())
        .collect();
    Appearance::from_rows(record, grid.width, rows)
}

pub fn load_appearance(record: &ImageRecord, base: &Path) -> Result<Appearance> {
    match &record.features {
        None => Ok(Appearance::empty(record)),
        Some(p) => appearance_from_grid(record, &Grid::read(&base.join(p), Magic::Features)?),
    }
}

/// Loads appearance sidecars and, when `with_maps` is set, grounding maps.
pub fn load_samples(records: &[ImageRecord], base: &Path, with_maps: bool) -> Result<Vec<Sample>> {
    records
        .iter()
        .map(|r| {
            let appearance = load_appearance(r, base)?;
            let (maps_h, maps_o) = if with_maps {
                load_record_maps(r, base)?
            } else {
                (Vec::new(), Vec::new())
            };
            Ok(Sample {
                record: r.clone(),
                appearance,
                maps_h,
                maps_o,
            })
        })
        .collect()
}

impl Sample {
    /// In-memory equivalent of writing `img` and loading it back.
    pub fn from_synth(img: &SynthImage) -> Result<Self> {
        use crate::grounding::normalize_map;
        use crate::dataset::MapOrigin;
        Ok(Sample {
            record: img.record.clone(),
            appearance: appearance_from_grid(&img.record, &img.features)?,
            maps_h: vec![normalize_map(&img.human_map, MapOrigin::Human)?],
            maps_o: vec![normalize_map(&img.object_map, MapOrigin::Object)?],
        })
    }
}

pub fn synth_samples(images: &[SynthImage]) -> Result<Vec<Sample>> {
    images.iter().map(Sample::from_synth).collect()
}

/// The record as the model sees it during training. With pruning on, flags are
/// recomputed from the maps when there are any, otherwise the stored flags are
/// kept. With pruning off every flag is cleared.
pub fn training_record(sample: &Sample, toggles: Toggles) -> ImageRecord {
    if !toggles.pruning {
        let mut r = sample.record.clone();
        r.clear_background();
        return r;
    }
    if sample.maps_h.is_empty() && sample.maps_o.is_empty() {
        return sample.record.clone();
    }
    prune_proposals(&sample.record, &sample.maps_h, &sample.maps_o)
}

fn appearance_width(samples: &[Sample]) -> Result<usize> {
    let w = samples.first().map_or(0, |s| s.appearance.width);
    if let Some(s) = samples.iter().find(|s| s.appearance.width != w) {
        return Err(Error::record(
            &s.record.id,
            format!("appearance width {} differs from {w}", s.appearance.width),
        ));
    }
    Ok(w)
}

/// Rows (human-major pair indices) that involve at least one background
/// proposal.
pub fn background_pairs(record: &ImageRecord) -> Vec<usize> {
    let m = record.objects.len();
    let mut rows = Vec::new();
    for (i, h) in record.humans.iter().enumerate() {
        for (j, o) in record.objects.iter().enumerate() {
            if h.background || o.background {
                rows.push(i * m + j);
            }
        }
    }
    rows
}

fn select_rows(x: &Matrix, rows: &[usize]) -> Matrix {
    let mut data = Vec::with_capacity(rows.len() * x.cols());
    for &r in rows {
        data.extend_from_slice(x.row(r));
    }
    Matrix::from_vec(rows.len(), x.cols(), data)
}

/// One bag per image with its image-level labels. When pruning is on, the
/// pairs touching a background proposal additionally form a negative bag
/// (all verb labels 0, no preposition supervision) placed right after it.
pub fn training_examples(samples: &[Sample], toggles: Toggles) -> Vec<TrainingExample> {
    let as_f64 = |b: &[bool]| b.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect::<Vec<_>>();
    let mut out = Vec::with_capacity(samples.len() * 2);
    for s in samples {
        let record = training_record(s, toggles);
        let input = ConcatEncoder.encode(&record, &s.appearance);
        let negatives = if toggles.pruning { background_pairs(&record) } else { Vec::new() };
        let neg = (!negatives.is_empty()).then(|| TrainingExample {
            id: format!("{}#background", record.id),
            input: select_rows(&input, &negatives),
            verb_labels: vec![0.0; record.verb_labels.len()],
            prep_labels: None,
        });
        out.push(TrainingExample {
            id: record.id.clone(),
            input,
            verb_labels: as_f64(&record.verb_labels),
            prep_labels: record.prep_labels.as_deref().map(as_f64),
        });
        out.extend(neg);
    }
    out
}

/// The training configuration actually used: the preposition toggle forces
/// `lambda` to 0.
pub fn effective_config(cfg: &TrainConfig, toggles: Toggles) -> TrainConfig {
    let mut c = cfg.clone();
    if !toggles.preposition {
        c.lambda = 0.0;
    }
    c
}

pub fn fit(
    samples: &[Sample],
    vocabs: &VocabSet,
    cfg: &TrainConfig,
    toggles: Toggles,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<Checkpoint> {
    let cfg = effective_config(cfg, toggles);
    let width = appearance_width(samples)?;
    let shape = Shape {
        input: ConcatEncoder.input_width(width),
        hidden: cfg.d,
        verbs: vocabs.verbs.len(),
        preps: vocabs.preps.len(),
    };
    for s in samples {
        if s.record.verb_labels.len() != shape.verbs {
            return Err(Error::record(&s.record.id, "verb label width disagrees with vocabulary"));
        }
    }
    let examples = training_examples(samples, toggles);
    let (params, _) = train(&examples, shape, &cfg, on_epoch)?;
    Ok(Checkpoint {
        config: cfg,
        toggles,
        appearance_width: width,
        vocab: VocabDigests::of(vocabs),
        params,
    })
}

pub fn predict(samples: &[Sample], ck: &Checkpoint, table: Option<&PlausibilityTable>) -> Result<Vec<ImageDetections>> {
    samples
        .iter()
        .map(|s| {
            if s.appearance.width != ck.appearance_width {
                return Err(Error::record(
                    &s.record.id,
                    format!(
                        "appearance width {} but checkpoint expects {}",
                        s.appearance.width, ck.appearance_width
                    ),
                ));
            }
            Ok(ImageDetections {
                image_id: s.record.id.clone(),
                detections: detect(&s.record, &s.appearance, &ck.params, table),
            })
        })
        .collect()
}

/// Evaluates detections against the ground truth of `records`. Images without
/// detections count with their ground truth; detections for unknown images are
/// an error.
pub fn score(
    records: &[ImageRecord],
    detections: &[ImageDetections],
    vocabs: &VocabSet,
    mode: Mode,
    interp: Interpolation,
) -> Result<Report> {
    let mut by_id: HashMap<&str, &ImageDetections> = HashMap::new();
    for d in detections {
        if by_id.insert(d.image_id.as_str(), d).is_some() {
            return Err(Error::record(&d.image_id, "duplicate detections entry"));
        }
    }
    let known: std::collections::HashSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    if let Some(d) = detections.iter().find(|d| !known.contains(d.image_id.as_str())) {
        return Err(Error::record(&d.image_id, "detections for an image missing from the dataset"));
    }
    let images: Vec<EvalImage<'_>> = records
        .iter()
        .map(|r| EvalImage {
            detections: by_id.get(r.id.as_str()).map_or(&[][..], |d| &d.detections[..]),
            ground_truth: &r.ground_truth,
        })
        .collect();
    Ok(evaluate(&images, vocabs, mode, interp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, SynthConfig};

    fn data() -> crate::synth::SynthDataset {
        generate_synthetic(&SynthConfig { n_train: 6, n_test: 3, ..SynthConfig::default() }).unwrap()
    }

    #[test]
    fn pruning_toggle_controls_flags() {
        let ds = data();
        let samples = synth_samples(&ds.train).unwrap();
        for s in &samples {
            let on = training_record(s, Toggles::default());
            let n_bg = on.humans.iter().chain(&on.objects).filter(|p| p.background).count();
            let total = on.humans.len() + on.objects.len();
            assert_eq!(total - n_bg, on.humans.len().div_ceil(2) + on.objects.len().div_ceil(2));
            let off = training_record(s, Toggles::BASELINE);
            assert!(off.humans.iter().chain(&off.objects).all(|p| !p.background));
        }
    }

    #[test]
    fn in_memory_and_disk_samples_agree() {
        let ds = data();
        let dir = tempfile::tempdir().unwrap();
        let paths = ds.write_to(dir.path()).unwrap();
        let records = crate::dataset::load_dataset(&paths.train, &ds.vocabs).unwrap();
        let disk = load_samples(&records, dir.path(), true).unwrap();
        assert_eq!(disk, synth_samples(&ds.train).unwrap());
    }

    #[test]
    fn preposition_toggle_zeroes_lambda() {
        let cfg = TrainConfig::default();
        let t = Toggles { preposition: false, ..Toggles::default() };
        assert_eq!(effective_config(&cfg, t).lambda, 0.0);
        assert_eq!(effective_config(&cfg, Toggles::default()).lambda, cfg.lambda);
    }

    #[test]
    fn score_rejects_unknown_images() {
        let ds = data();
        let records: Vec<_> = ds.test.iter().map(|i| i.record.clone()).collect();
        let stray = ImageDetections { image_id: "nope".into(), detections: vec![] };
        assert!(score(&records, &[stray], &ds.vocabs, Mode::Role, Interpolation::AllPoint).is_err());
        let r = score(&records, &[], &ds.vocabs, Mode::Role, Interpolation::AllPoint).unwrap();
        assert_eq!(r.mean_ap, 0.0);
    }
}
