//! Pair descriptors fed to the shared hidden layer.

use crate::dataset::ImageRecord;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

use super::matrix::Matrix;

pub const SPATIAL_WIDTH: usize = 8;

/// Layout geometry of a human/object pair relative to the image:
/// center offsets over image size, log width and height ratios, IoU,
/// both box areas and the union area over image area.
pub fn spatial_features(h: &BBox, o: &BBox, width: f64, height: f64) -> [f64; SPATIAL_WIDTH] {
    let (hx, hy) = h.center();
    let (ox, oy) = o.center();
    let img = width * height;
    [
        (ox - hx) / width,
        (oy - hy) / height,
        (h.width() / o.width()).ln(),
        (h.height() / o.height()).ln(),
        iou(h, o),
        h.area() / img,
        o.area() / img,
        h.union_area(o) / img,
    ]
}

/// Per-proposal appearance rows: humans first, then objects.
#[derive(Debug, Clone, PartialEq)]
pub struct Appearance {
    pub width: usize,
    pub humans: Vec<Vec<f64>>,
    pub objects: Vec<Vec<f64>>,
}

impl Appearance {
    /// Zero-width appearance for records without a sidecar.
    pub fn empty(record: &ImageRecord) -> Self {
        Appearance {
            width: 0,
            humans: vec![Vec::new(); record.humans.len()],
            objects: vec![Vec::new(); record.objects.len()],
        }
    }

    pub fn from_rows(record: &ImageRecord, width: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = record.humans.len();
        if rows.len() != n + record.objects.len() || rows.iter().any(|r| r.len() != width) {
            return Err(Error::record(
                &record.id,
                format!(
                    "appearance has {} rows, expected {} of width {width}",
                    rows.len(),
                    n + record.objects.len()
                ),
            ));
        }
        let mut humans = rows;
        let objects = humans.split_off(n);
        Ok(Appearance {
            width,
            humans,
            objects,
        })
    }
}

/// Maps a bag of proposals to one descriptor row per pair, in human-major
/// order (row `i * M + j` is human `i` with object `j`).
pub trait PairEncoder {
    fn input_width(&self, appearance_width: usize) -> usize;

    fn encode(&self, record: &ImageRecord, appearance: &Appearance) -> Matrix;
}

/// `[app(h) | app(o) | spatial(h, o)]`.
///
/// Background flags are deliberately not part of the row: background pairs
/// act as negatives during training and must look like inference inputs.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConcatEncoder;

impl PairEncoder for ConcatEncoder {
    fn input_width(&self, appearance_width: usize) -> usize {
        2 * appearance_width + SPATIAL_WIDTH
    }

    fn encode(&self, record: &ImageRecord, appearance: &Appearance) -> Matrix {
        let width = self.input_width(appearance.width);
        let (w, h) = (record.width as f64, record.height as f64);
        let mut data = Vec::with_capacity(record.n_pairs() * width);
        for (hp, ha) in record.humans.iter().zip(&appearance.humans) {
            for (op, oa) in record.objects.iter().zip(&appearance.objects) {
                data.extend_from_slice(ha);
                data.extend_from_slice(oa);
                data.extend_from_slice(&spatial_features(&hp.bbox, &op.bbox, w, h));
            }
        }
        Matrix::from_vec(record.n_pairs(), width, data)
    }
}

/// Pair features `Z` with the row to (human, object) mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatureMatrix {
    pub z: Matrix,
    pub pair_index: Vec<(usize, usize)>,
}

pub fn pair_index(n_humans: usize, n_objects: usize) -> Vec<(usize, usize)> {
    (0..n_humans)
        .flat_map(|i| (0..n_objects).map(move |j| (i, j)))
        .collect()
}
