//! Forward pass, image-level losses and the hand-derived backward pass.

use crate::error::{Error, Result};

use super::head::{backward_head, forward_head, image_scores, HeadForward};
use super::loss::{bce_loss_grad, focal_loss_grad, total_loss};
use super::matrix::Matrix;
use super::params::{GradientSet, ModelParams};

/// Hidden layer: `relu(X W + b)`. Returns pre-activations and activations.
pub fn featurize(params: &ModelParams, x: &Matrix) -> (Matrix, Matrix) {
    let mut pre = x.matmul(&params.hidden_w);
    let b = params.hidden_b.row(0);
    for r in 0..pre.rows() {
        for (v, bv) in pre.row_mut(r).iter_mut().zip(b) {
            *v += bv;
        }
    }
    let mut z = pre.clone();
    for v in z.data_mut() {
        // `f64::max` would turn NaN into 0 and hide it.
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    (pre, z)
}

/// Pair-level interaction scores, `N*M x |verbs|`.
pub fn forward_hoi(z: &Matrix, params: &ModelParams) -> Matrix {
    forward_head(z, &params.hoi_classify, &params.hoi_detect).scores
}

/// Pair-level preposition scores, `N*M x |preps|`.
pub fn forward_prep(z: &Matrix, params: &ModelParams) -> Matrix {
    forward_head(z, &params.prep_classify, &params.prep_detect).scores
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub lambda: f64,
}

/// One image's training inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub id: String,
    pub input: Matrix,
    pub verb_labels: Vec<f64>,
    pub prep_labels: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImageLoss {
    pub hoi: f64,
    /// `None` when the preposition term was not evaluated.
    pub prep: Option<f64>,
    pub total: f64,
}

struct Forward {
    pre: Matrix,
    z: Matrix,
    hoi: HeadForward,
    prep: Option<HeadForward>,
}

fn prep_active(ex: &TrainingExample, cfg: &LossConfig) -> bool {
    cfg.lambda > 0.0 && ex.prep_labels.is_some()
}

fn run_forward(params: &ModelParams, ex: &TrainingExample, cfg: &LossConfig) -> Forward {
    let (pre, z) = featurize(params, &ex.input);
    let hoi = forward_head(&z, &params.hoi_classify, &params.hoi_detect);
    let prep = prep_active(ex, cfg).then(|| forward_head(&z, &params.prep_classify, &params.prep_detect));
    Forward { pre, z, hoi, prep }
}

pub fn image_loss(params: &ModelParams, ex: &TrainingExample, cfg: &LossConfig) -> ImageLoss {
    let f = run_forward(params, ex, cfg);
    losses(&f, ex, cfg).0
}

fn losses(f: &Forward, ex: &TrainingExample, cfg: &LossConfig) -> (ImageLoss, Vec<f64>, Option<Vec<f64>>) {
    let (hoi, d_hoi) = focal_loss_grad(&image_scores(&f.hoi.scores), &ex.verb_labels, cfg.gamma, cfg.alpha);
    let (prep, d_prep) = match (&f.prep, &ex.prep_labels) {
        (Some(h), Some(y)) => {
            let (l, g) = bce_loss_grad(&image_scores(&h.scores), y);
            (Some(l), Some(g))
        }
        _ => (None, None),
    };
    let total = match prep {
        Some(p) => total_loss(hoi, p, cfg.lambda),
        None => hoi,
    };
    (ImageLoss { hoi, prep, total }, d_hoi, d_prep)
}

/// Loss and exact gradient of one image.
pub fn image_loss_grad(params: &ModelParams, ex: &TrainingExample, cfg: &LossConfig) -> (ImageLoss, GradientSet) {
    let f = run_forward(params, ex, cfg);
    let (loss, d_hoi, d_prep) = losses(&f, ex, cfg);
    let mut grad = ModelParams::zeros(params.shape());

    let hg = backward_head(&f.z, &params.hoi_classify, &params.hoi_detect, &f.hoi, &d_hoi);
    grad.hoi_classify = hg.w_classify;
    grad.hoi_detect = hg.w_detect;
    let mut dz = hg.z;

    if let (Some(head), Some(mut d)) = (&f.prep, d_prep) {
        for v in &mut d {
            *v *= cfg.lambda;
        }
        let pg = backward_head(&f.z, &params.prep_classify, &params.prep_detect, head, &d);
        grad.prep_classify = pg.w_classify;
        grad.prep_detect = pg.w_detect;
        dz.add_assign(&pg.z);
    }

    // relu: pass gradient where the pre-activation is positive
    for (g, p) in dz.data_mut().iter_mut().zip(f.pre.data()) {
        if *p <= 0.0 {
            *g = 0.0;
        }
    }
    grad.hidden_w = ex.input.t_matmul(&dz);
    grad.hidden_b = Matrix::from_vec(1, dz.cols(), dz.column_sums());
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchLoss {
    pub hoi: f64,
    pub prep: f64,
    pub total: f64,
    pub images: usize,
    /// Images that contributed a preposition term.
    pub prep_images: usize,
}

/// Mean loss and mean gradient over the images of a batch. Images with an
/// empty bag must be filtered out beforehand.
pub fn backward(batch: &[TrainingExample], params: &ModelParams, cfg: &LossConfig) -> Result<(BatchLoss, GradientSet)> {
    let mut grad = ModelParams::zeros(params.shape());
    let mut stats = BatchLoss::default();
    for ex in batch {
        let (l, g) = image_loss_grad(params, ex, cfg);
        grad.axpy(1.0, &g);
        stats.hoi += l.hoi;
        stats.total += l.total;
        if let Some(p) = l.prep {
            stats.prep += p;
            stats.prep_images += 1;
        }
        stats.images += 1;
    }
    if stats.images > 0 {
        grad.scale(1.0 / stats.images as f64);
    }
    if let Some(name) = grad.first_non_finite() {
        return Err(Error::NonFiniteGradient(name));
    }
    Ok((stats, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn example(rows: usize, input: usize, verbs: usize, preps: Option<usize>, rng: &mut ChaCha8Rng) -> TrainingExample {
        use rand::Rng;
        TrainingExample {
            id: "t".into(),
            input: Matrix::from_fn(rows, input, |_, _| rng.random_range(-1.0..1.0)),
            verb_labels: (0..verbs).map(|k| (k % 2) as f64).collect(),
            prep_labels: preps.map(|p| (0..p).map(|k| ((k + 1) % 2) as f64).collect()),
        }
    }

    const CFG: LossConfig = LossConfig { gamma: 2.0, alpha: 0.5, lambda: 0.1 };

    #[test]
    fn zero_features_zero_head_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = Shape { input: 4, hidden: 5, verbs: 3, preps: 2 };
        let params = ModelParams::init(s, &mut rng);
        let mut ex = example(4, 4, 3, Some(2), &mut rng);
        ex.input = Matrix::zeros(4, 4);
        let mut p = params.clone();
        p.hidden_b = Matrix::zeros(1, 5);
        let (_, g) = image_loss_grad(&p, &ex, &CFG);
        for m in [&g.hoi_classify, &g.hoi_detect, &g.prep_classify, &g.prep_detect] {
            assert!(m.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_pair_matches_softmax_classifier() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = Shape { input: 3, hidden: 4, verbs: 4, preps: 2 };
        let params = ModelParams::init(s, &mut rng);
        let ex = example(1, 3, 4, None, &mut rng);
        let (_, g) = image_loss_grad(&params, &ex, &CFG);

        // With one pair the detect stream is constant 1, so the image score
        // is softmax(z W); closed form dW[i,k] = z_i p_k (g_k - sum_j g_j p_j).
        let (_, z) = featurize(&params, &ex.input);
        let logits = z.matmul(&params.hoi_classify);
        let m = logits.row(0).iter().copied().fold(f64::MIN, f64::max);
        let e: Vec<f64> = logits.row(0).iter().map(|v| (v - m).exp()).collect();
        let sum: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|v| v / sum).collect();
        let (_, gy) = crate::model::loss::focal_loss_grad(&p, &ex.verb_labels, CFG.gamma, CFG.alpha);
        let dot: f64 = gy.iter().zip(&p).map(|(a, b)| a * b).sum();
        for i in 0..4 {
            for k in 0..4 {
                let expect = z.get(0, i) * p[k] * (gy[k] - dot);
                assert!((g.hoi_classify.get(i, k) - expect).abs() < 1e-14);
            }
        }
        assert!(g.hoi_detect.data().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn lambda_zero_skips_prep() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = Shape { input: 3, hidden: 4, verbs: 2, preps: 3 };
        let params = ModelParams::init(s, &mut rng);
        let with = example(4, 3, 2, Some(3), &mut rng);
        let mut without = with.clone();
        without.prep_labels = None;
        let cfg0 = LossConfig { lambda: 0.0, ..CFG };
        let (a, ga) = image_loss_grad(&params, &with, &cfg0);
        let (b, gb) = image_loss_grad(&params, &without, &CFG);
        assert_eq!(a, b);
        assert_eq!(ga, gb);
        assert_eq!(a.prep, None);
    }

    #[test]
    fn batch_gradient_is_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = Shape { input: 3, hidden: 4, verbs: 2, preps: 2 };
        let params = ModelParams::init(s, &mut rng);
        let a = example(2, 3, 2, Some(2), &mut rng);
        let b = example(6, 3, 2, None, &mut rng);
        let (stats, g) = backward(&[a.clone(), b.clone()], &params, &CFG).unwrap();
        let (_, ga) = image_loss_grad(&params, &a, &CFG);
        let (_, gb) = image_loss_grad(&params, &b, &CFG);
        let mut expect = ga;
        expect.axpy(1.0, &gb);
        expect.scale(0.5);
        for ((_, x), (_, y)) in g.blocks().into_iter().zip(expect.blocks()) {
            for (u, v) in x.data().iter().zip(y.data()) {
                assert!((u - v).abs() < 1e-15);
            }
        }
        assert_eq!((stats.images, stats.prep_images), (2, 1));
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = Shape { input: 2, hidden: 2, verbs: 2, preps: 1 };
        let mut params = ModelParams::init(s, &mut rng);
        params.hidden_w.set(0, 0, f64::NAN);
        let ex = example(2, 2, 2, None, &mut rng);
        match backward(&[ex], &params, &CFG) {
            Err(Error::NonFiniteGradient(name)) => assert!(name.starts_with("hidden") || name.starts_with("hoi")),
            other => panic!("{other:?}"),
        }
    }
}
