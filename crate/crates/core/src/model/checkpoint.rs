//! Self-describing JSON checkpoint: config echo, vocabulary digests and every
//! weight block as a flat `f64` array with its shape.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Toggles;
use crate::error::{Error, Result};
use crate::fsio;
use crate::vocab::VocabSet;

use super::matrix::Matrix;
use super::params::{ModelParams, BLOCK_NAMES};
use super::train::TrainConfig;

const FORMAT: &str = "weakhoi-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabDigests {
    pub verbs: String,
    pub objects: String,
    pub preps: String,
}

impl VocabDigests {
    pub fn of(v: &VocabSet) -> Self {
        VocabDigests {
            verbs: v.verbs.digest(),
            objects: v.objects.digest(),
            preps: v.preps.digest(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Block {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Raw {
    format: String,
    config: TrainConfig,
    toggles: Toggles,
    appearance_width: usize,
    vocab: VocabDigests,
    blocks: Vec<Block>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub toggles: Toggles,
    pub appearance_width: usize,
    pub vocab: VocabDigests,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let raw = Raw {
            format: FORMAT.into(),
            config: self.config.clone(),
            toggles: self.toggles,
            appearance_width: self.appearance_width,
            vocab: self.vocab.clone(),
            blocks: self
                .params
                .blocks()
                .into_iter()
                .map(|(name, m)| Block {
                    name: name.into(),
                    shape: [m.rows(), m.cols()],
                    data: m.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&raw).expect("serializable")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let raw: Raw = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if raw.format != FORMAT {
            return Err(Error::Config(format!("unsupported checkpoint format `{}`", raw.format)));
        }
        if raw.blocks.len() != BLOCK_NAMES.len() {
            return Err(Error::Shape(format!("checkpoint has {} blocks", raw.blocks.len())));
        }
        let mut mats = Vec::with_capacity(BLOCK_NAMES.len());
        for (b, want) in raw.blocks.into_iter().zip(BLOCK_NAMES) {
            if b.name != want {
                return Err(Error::Shape(format!("expected block `{want}`, found `{}`", b.name)));
            }
            let [r, c] = b.shape;
            if b.data.len() != r * c {
                return Err(Error::Shape(format!("block `{want}` data does not match {r}x{c}")));
            }
            mats.push(Matrix::from_vec(r, c, b.data));
        }
        let mut it = mats.into_iter();
        let mut next = || it.next().expect("six blocks");
        let params = ModelParams {
            hidden_w: next(),
            hidden_b: next(),
            hoi_classify: next(),
            hoi_detect: next(),
            prep_classify: next(),
            prep_detect: next(),
        };
        let s = params.shape();
        let consistent = params.hidden_b.shape() == (1, s.hidden)
            && params.hoi_classify.shape() == (s.hidden, s.verbs)
            && params.hoi_detect.shape() == (s.hidden, s.verbs)
            && params.prep_classify.shape() == (s.hidden, s.preps)
            && params.prep_detect.shape() == (s.hidden, s.preps);
        if !consistent {
            return Err(Error::Shape("inconsistent checkpoint block shapes".into()));
        }
        if let Some(n) = params.first_non_finite() {
            return Err(Error::Shape(format!("block `{n}` holds non-finite weights")));
        }
        Ok(Checkpoint {
            config: raw.config,
            toggles: raw.toggles,
            appearance_width: raw.appearance_width,
            vocab: raw.vocab,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fsio::read_to_string(path)?, path)
    }

    pub fn check_vocab(&self, vocabs: &VocabSet) -> Result<()> {
        if self.vocab != VocabDigests::of(vocabs) {
            return Err(Error::Config(
                "checkpoint was trained with different vocabularies".into(),
            ));
        }
        if self.params.shape().verbs != vocabs.verbs.len() || self.params.shape().preps != vocabs.preps.len() {
            return Err(Error::Shape("checkpoint head widths disagree with vocabularies".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::vocab_set;
    use crate::model::params::Shape;
    use rand::SeedableRng;

    #[test]
    fn json_round_trip_is_exact() {
        let v = vocab_set(&["a", "b"], &["person"], &["on", "in", "at"]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let params = ModelParams::init(Shape { input: 5, hidden: 3, verbs: 2, preps: 3 }, &mut rng);
        let ck = Checkpoint {
            config: TrainConfig::default(),
            toggles: Toggles::default(),
            appearance_width: 0,
            vocab: VocabDigests::of(&v),
            params,
        };
        let text = ck.to_json();
        let back = Checkpoint::from_json(&text, Path::new("c")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_json(), text);
        back.check_vocab(&v).unwrap();
        let other = vocab_set(&["b", "a"], &["person"], &["on", "in", "at"]).unwrap();
        assert!(back.check_vocab(&other).is_err());
        assert!(Checkpoint::from_json(&text.replace("hoi.detect", "hoi.other"), Path::new("c")).is_err());
    }
}
