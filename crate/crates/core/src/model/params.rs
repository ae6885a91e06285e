use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;

/// All learnable weights: one hidden layer shared by both heads, then a
/// classify/detect matrix pair per head. No biases on the heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub hidden_w: Matrix,
    /// `1 x d`
    pub hidden_b: Matrix,
    pub hoi_classify: Matrix,
    pub hoi_detect: Matrix,
    pub prep_classify: Matrix,
    pub prep_detect: Matrix,
}

/// Same block layout as [`ModelParams`], holding `d loss / d weight`.
pub type GradientSet = ModelParams;

pub const BLOCK_NAMES: [&str; 6] = [
    "hidden.weight",
    "hidden.bias",
    "hoi.classify",
    "hoi.detect",
    "prep.classify",
    "prep.detect",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub input: usize,
    pub hidden: usize,
    pub verbs: usize,
    pub preps: usize,
}

impl ModelParams {
    pub fn zeros(s: Shape) -> Self {
        ModelParams {
            hidden_w: Matrix::zeros(s.input, s.hidden),
            hidden_b: Matrix::zeros(1, s.hidden),
            hoi_classify: Matrix::zeros(s.hidden, s.verbs),
            hoi_detect: Matrix::zeros(s.hidden, s.verbs),
            prep_classify: Matrix::zeros(s.hidden, s.preps),
            prep_detect: Matrix::zeros(s.hidden, s.preps),
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`; the bias starts at 0.
    pub fn init<R: Rng>(s: Shape, rng: &mut R) -> Self {
        let mut p = Self::zeros(s);
        let mut fill = |m: &mut Matrix| {
            let a = 1.0 / (m.rows() as f64).sqrt();
            for v in m.data_mut() {
                *v = rng.random_range(-a..=a);
            }
        };
        fill(&mut p.hidden_w);
        fill(&mut p.hoi_classify);
        fill(&mut p.hoi_detect);
        fill(&mut p.prep_classify);
        fill(&mut p.prep_detect);
        p
    }

    pub fn shape(&self) -> Shape {
        Shape {
            input: self.hidden_w.rows(),
            hidden: self.hidden_w.cols(),
            verbs: self.hoi_classify.cols(),
            preps: self.prep_classify.cols(),
        }
    }

    pub fn blocks(&self) -> [(&'static str, &Matrix); 6] {
        [
            (BLOCK_NAMES[0], &self.hidden_w),
            (BLOCK_NAMES[1], &self.hidden_b),
            (BLOCK_NAMES[2], &self.hoi_classify),
            (BLOCK_NAMES[3], &self.hoi_detect),
            (BLOCK_NAMES[4], &self.prep_classify),
            (BLOCK_NAMES[5], &self.prep_detect),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut Matrix); 6] {
        [
            (BLOCK_NAMES[0], &mut self.hidden_w),
            (BLOCK_NAMES[1], &mut self.hidden_b),
            (BLOCK_NAMES[2], &mut self.hoi_classify),
            (BLOCK_NAMES[3], &mut self.hoi_detect),
            (BLOCK_NAMES[4], &mut self.prep_classify),
            (BLOCK_NAMES[5], &mut self.prep_detect),
        ]
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) {
        for ((_, a), (_, b)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            assert_eq!(a.shape(), b.shape(), "block shapes");
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += alpha * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, m) in self.blocks_mut() {
            m.scale(s);
        }
    }

    /// First block containing a non-finite value.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.blocks()
            .into_iter()
            .find(|(_, m)| !m.is_finite())
            .map(|(n, _)| n)
    }
}
