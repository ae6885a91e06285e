//! Per-class binary losses averaged over classes, with their gradients with
//! respect to the image-level scores.

/// Probabilities entering a logarithm are clamped to `[EPS, 1 - EPS]`.
pub const EPS: f64 = 1e-7;

fn clamp(p: f64) -> (f64, bool) {
    if p < EPS {
        (EPS, false)
    } else if p > 1.0 - EPS {
        (1.0 - EPS, false)
    } else {
        (p, true)
    }
}

/// `a * b^(e)` with `0 * anything = 0` so that `gamma = 0` stays finite.
fn coeff_pow(a: f64, b: f64, e: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * b.powf(e)
    }
}

/// Binary focal loss, mean over classes:
/// `-a (1-p)^g y ln p - (1-a) p^g (1-y) ln(1-p)`.
pub fn focal_loss(scores: &[f64], labels: &[f64], gamma: f64, alpha: f64) -> f64 {
    focal_loss_grad(scores, labels, gamma, alpha).0
}

/// Loss and `d loss / d score` per class. The clamp's derivative is zero
/// outside `[EPS, 1 - EPS]`.
pub fn focal_loss_grad(scores: &[f64], labels: &[f64], gamma: f64, alpha: f64) -> (f64, Vec<f64>) {
    assert_eq!(scores.len(), labels.len());
    let k = scores.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for (&raw, &y) in scores.iter().zip(labels) {
        let (p, live) = clamp(raw);
        let q = 1.0 - p;
        let pos = alpha * q.powf(gamma) * p.ln();
        let neg = (1.0 - alpha) * p.powf(gamma) * q.ln();
        loss -= y * pos + (1.0 - y) * neg;
        let d = if live {
            let d_pos = alpha * (q.powf(gamma) / p - coeff_pow(gamma, q, gamma - 1.0) * p.ln());
            let d_neg = (1.0 - alpha) * (coeff_pow(gamma, p, gamma - 1.0) * q.ln() - p.powf(gamma) / q);
            -(y * d_pos + (1.0 - y) * d_neg) / k
        } else {
            0.0
        };
        grad.push(d);
    }
    (loss / k, grad)
}

pub fn bce_loss(scores: &[f64], labels: &[f64]) -> f64 {
    bce_loss_grad(scores, labels).0
}

pub fn bce_loss_grad(scores: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(scores.len(), labels.len());
    let k = scores.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for (&raw, &y) in scores.iter().zip(labels) {
        let (p, live) = clamp(raw);
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad.push(if live {
            -(y / p - (1.0 - y) / (1.0 - p)) / k
        } else {
            0.0
        });
    }
    (loss / k, grad)
}

pub fn total_loss(hoi: f64, prep: f64, lambda: f64) -> f64 {
    hoi + lambda * prep
}
