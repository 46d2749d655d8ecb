use super::ops::sigmoid;
use super::NetError;

pub const PROB_EPS: f64 = 1e-12;

/// Focal loss of one logit against label `y` (true = occupied), with its
/// derivative w.r.t. the logit. Probabilities are clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`; the derivative is zero where the clamp is
/// active.
#[inline]
pub fn focal_term(z: f64, y: bool, alpha: f64, gamma: f64) -> (f64, f64) {
    let s = if y { 1.0 } else { -1.0 };
    let alpha_t = if y { alpha } else { 1.0 - alpha };
    let p_raw = sigmoid(s * z);
    let q_raw = sigmoid(-s * z);
    let p = p_raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let q = q_raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let ln_p = if p == p_raw { -(-s * z).exp().ln_1p() } else { p.ln() };
    let qg = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
    let loss = -alpha_t * qg * ln_p;
    let clamped = p != p_raw || q != q_raw;
    let grad = if clamped { 0.0 } else { s * alpha_t * (gamma * qg * p * ln_p - qg * q) };
    (loss, grad)
}

/// Mean focal loss over all voxels and its gradient w.r.t. each logit.
pub fn focal_loss(logits: &[f64], labels: &[bool], alpha: f64, gamma: f64) -> Result<(f64, Vec<f64>), NetError> {
    if logits.len() != labels.len() {
        return Err(NetError::ShapeMismatch { expected: labels.len(), actual: logits.len() });
    }
    if logits.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = logits.len() as f64;
    let mut total = 0.0;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(z, y)| {
            let (l, g) = focal_term(*z, *y, alpha, gamma);
            total += l;
            g / n
        })
        .collect();
    Ok((total / n, grad))
}

/// Focal loss evaluated on a probability directly, for hand checks.
pub fn focal_from_probability(p: f64, y: bool, alpha: f64, gamma: f64) -> f64 {
    let p_t = if y { p } else { 1.0 - p }.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let alpha_t = if y { alpha } else { 1.0 - alpha };
    -alpha_t * (1.0 - p_t).powf(gamma) * p_t.ln()
}
