//! Two-stream MIL head: a softmax over classes per pair times a softmax over
//! pairs per class, summed over pairs into image-level scores.

use super::matrix::Matrix;

/// Softmax along each row, max-subtracted.
pub fn row_softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Softmax along each column, max-subtracted.
pub fn col_softmax(logits: &Matrix) -> Matrix {
    let (rows, cols) = logits.shape();
    let mut out = logits.clone();
    for c in 0..cols {
        let m = (0..rows)
            .map(|r| logits.get(r, c))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for r in 0..rows {
            let e = (logits.get(r, c) - m).exp();
            out.set(r, c, e);
            sum += e;
        }
        for r in 0..rows {
            out.set(r, c, out.get(r, c) / sum);
        }
    }
    out
}

/// Forward quantities of one two-stream head on one bag.
#[derive(Debug, Clone)]
pub struct HeadForward {
    /// Per-pair class distribution.
    pub classify: Matrix,
    /// Per-class pair distribution.
    pub detect: Matrix,
    /// Elementwise product of the two.
    pub scores: Matrix,
}

pub fn forward_head(z: &Matrix, w_classify: &Matrix, w_detect: &Matrix) -> HeadForward {
    let classify = row_softmax(&z.matmul(w_classify));
    let detect = col_softmax(&z.matmul(w_detect));
    let mut scores = classify.clone();
    for (s, d) in scores.data_mut().iter_mut().zip(detect.data()) {
        *s *= d;
    }
    HeadForward {
        classify,
        detect,
        scores,
    }
}

/// Image-level class scores: per-class sum over pair rows.
pub fn image_scores(pair_scores: &Matrix) -> Vec<f64> {
    pair_scores.column_sums()
}

/// Gradients of a head given `d loss / d image_scores`.
pub struct HeadGrad {
    pub w_classify: Matrix,
    pub w_detect: Matrix,
    pub z: Matrix,
}

pub fn backward_head(
    z: &Matrix,
    w_classify: &Matrix,
    w_detect: &Matrix,
    fwd: &HeadForward,
    d_image: &[f64],
) -> HeadGrad {
    let (rows, cols) = fwd.scores.shape();
    // d/dP[r,k] = g_k Q[r,k];  d/dQ[r,k] = g_k P[r,k]
    let mut d_cls_logit = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let p = fwd.classify.row(r);
        let q = fwd.detect.row(r);
        let dot: f64 = (0..cols).map(|k| d_image[k] * q[k] * p[k]).sum();
        let out = d_cls_logit.row_mut(r);
        for k in 0..cols {
            out[k] = p[k] * (d_image[k] * q[k] - dot);
        }
    }
    let mut d_det_logit = Matrix::zeros(rows, cols);
    for k in 0..cols {
        let dot: f64 = (0..rows)
            .map(|r| d_image[k] * fwd.classify.get(r, k) * fwd.detect.get(r, k))
            .sum();
        for r in 0..rows {
            let q = fwd.detect.get(r, k);
            d_det_logit.set(r, k, q * (d_image[k] * fwd.classify.get(r, k) - dot));
        }
    }
    let mut dz = d_cls_logit.matmul_t(w_classify);
    dz.add_assign(&d_det_logit.matmul_t(w_detect));
    HeadGrad {
        w_classify: z.t_matmul(&d_cls_logit),
        w_detect: z.t_matmul(&d_det_logit),
        z: dz,
    }
}
