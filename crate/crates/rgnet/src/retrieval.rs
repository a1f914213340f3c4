//! Context scoring and top-k proposal selection.

use crate::autodiff::sigmoid_f;
use crate::error::RgError;
use ndarray::Array1;

/// `S_r = sigmoid(f_s(R))` for a context vector and a `(w, b)` scoring layer.
pub fn context_score(context: &Array1<f64>, w: &Array1<f64>, b: f64) -> f64 {
    sigmoid_f(context.dot(w) + b)
}

/// Indices of the `min(k, len)` highest scores, descending, ties broken by
/// the smaller index so results are stable across platforms.
pub fn topk_proposals(scores: &[f64], k: usize) -> Result<Vec<usize>, RgError> {
    if scores.is_empty() {
        return Err(RgError::EmptyInput("no proposal scores".into()));
    }
    if k == 0 {
        return Err(RgError::Config("top-k must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k.min(scores.len()));
    Ok(order)
}
