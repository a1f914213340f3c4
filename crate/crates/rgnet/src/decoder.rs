//! Anchor-query grounding decoder plus cross-proposal prediction merging.
//!
//! Learnable anchors live in inverse-sigmoid space as `(center, width)`
//! pairs. Each layer cross-attends the anchor-conditioned query embeddings
//! over the encoded proposal (padded frames masked out) and adds a refinement
//! delta to the anchors, so the sigmoid keeps normalized coordinates inside
//! `[0, 1]` for arbitrary parameter values.

use ndarray::Array2;

use crate::autodiff::{sigmoid_f, Arr, Tape, Var};
use crate::encoder::masked_attention;
use crate::error::RgError;
use crate::model::ModelConfig;
use crate::nn::TapedParams;
use crate::temporal::{interval_iou, Moment, ScoredMoment, TimeInterval};

/// Normalized decoder outputs for one proposal.
#[derive(Debug, Clone)]
pub struct ProposalPredictions {
    /// `(center, width)` in proposal-normalized coordinates, both in (0, 1).
    pub moments: Vec<(f64, f64)>,
    /// Foreground probability per query.
    pub fg_prob: Vec<f64>,
}

/// Tape handles for the decoder forward pass.
pub struct DecodedVars {
    /// `n_q x 2` normalized `(center, width)` after the final sigmoid.
    pub moments: Var,
    /// `n_q x 1` foreground logits (before sigmoid).
    pub fg_logits: Var,
}

/// Decoder forward pass over an encoded proposal `P` (`L_c x D`).
pub fn decode_moments_t(
    tape: &Tape,
    tp: &TapedParams,
    cfg: &ModelConfig,
    fused: Var,
    valid: &[bool],
) -> Result<DecodedVars, RgError> {
    if !valid.iter().any(|v| *v) {
        return Err(RgError::DegenerateProposal(
            "all frames invalid, nothing to decode".into(),
        ));
    }
    let (l_c, _) = tape.shape(fused);
    assert_eq!(l_c, valid.len());
    let n_q = cfg.n_queries;

    // Additive key mask: padded frame columns are closed for every query.
    let pad_mask = Array2::from_shape_fn((n_q, l_c), |(_, c)| {
        if valid[c] {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    });

    let mut anchors = tp.var("decoder.anchors");
    let mut emb = tp.var("decoder.query_emb");
    for layer in 0..cfg.n_decoder_layers {
        let anchor_pos = tape.sigmoid(anchors);
        let q_in = tape.add(emb, tp.linear(anchor_pos, "decoder.anchor_proj"));
        let prefix = format!("decoder.l{layer}");
        let q = tp.linear(q_in, &format!("{prefix}.q"));
        let k = tp.linear(fused, &format!("{prefix}.k"));
        let v = tp.linear(fused, &format!("{prefix}.v"));
        let attn = masked_attention(tape, cfg, q, k, v, Some(&pad_mask));
        emb = tape.add(attn, q_in);
        if cfg.standard_blocks {
            let h = tape.relu(tp.linear(emb, &format!("{prefix}.ffn.fc1")));
            emb = tape.add(emb, tp.linear(h, &format!("{prefix}.ffn.fc2")));
        }
        let delta = tp.linear(emb, &format!("{prefix}.refine"));
        anchors = tape.add(anchors, delta);
    }

    let moments = tape.sigmoid(anchors);
    let fg_logits = tp.linear(emb, "decoder.fg");
    Ok(DecodedVars { moments, fg_logits })
}

/// Plain-value decode.
pub fn decode_moments(
    params: &crate::nn::ParamStore,
    cfg: &ModelConfig,
    fused: &Arr,
    valid: &[bool],
) -> Result<ProposalPredictions, RgError> {
    if fused.iter().any(|x| !x.is_finite()) {
        return Err(RgError::NumericInput("encoded proposal".into()));
    }
    let tape = Tape::new();
    let tp = params.bind(&tape);
    let fused_v = tape.constant(fused.clone());
    let out = decode_moments_t(&tape, &tp, cfg, fused_v, valid)?;
    let m = tape.value(out.moments);
    let l = tape.value(out.fg_logits);
    Ok(ProposalPredictions {
        moments: (0..m.nrows()).map(|r| (m[[r, 0]], m[[r, 1]])).collect(),
        fg_prob: (0..l.nrows()).map(|r| sigmoid_f(l[[r, 0]])).collect(),
    })
}

/// Map normalized predictions into absolute seconds on the video timeline.
///
/// `center = window.start + c * |window|`, `width = w * |window|`, then the
/// interval is clipped to `[0, video_duration_s]`.
pub fn to_absolute(
    preds: &ProposalPredictions,
    window: &TimeInterval,
    video_duration_s: f64,
) -> Vec<ScoredMoment> {
    let span = window.length();
    preds
        .moments
        .iter()
        .zip(&preds.fg_prob)
        .map(|(&(c, w), &fg)| {
            let center = window.start_s + c * span;
            let width = w * span;
            let start = (center - width / 2.0).clamp(0.0, video_duration_s);
            let end = (center + width / 2.0).clamp(0.0, video_duration_s);
            let width = (end - start).max(1e-9);
            ScoredMoment {
                moment: Moment {
                    center_s: 0.5 * (start + end),
                    width_s: width,
                },
                score: fg,
            }
        })
        .collect()
}

/// Merge per-proposal predictions into one global ranking.
///
/// Global score is `S_r(proposal) * fg_prob(query)`; optional 1-D NMS drops
/// any moment whose IoU with an already-kept moment exceeds `nms_iou`. Ties
/// break toward the earlier center.
pub fn merge_predictions(
    per_proposal: &[(Vec<ScoredMoment>, f64)],
    k_out: usize,
    nms_iou: Option<f64>,
) -> Vec<ScoredMoment> {
    let mut all: Vec<ScoredMoment> = per_proposal
        .iter()
        .flat_map(|(moments, s_r)| {
            moments.iter().map(move |m| ScoredMoment {
                moment: m.moment,
                score: m.score * s_r,
            })
        })
        .collect();
    all.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.moment.center_s.total_cmp(&b.moment.center_s))
            .then(a.moment.width_s.total_cmp(&b.moment.width_s))
    });

    let mut kept: Vec<ScoredMoment> = Vec::new();
    for cand in all {
        if let Some(threshold) = nms_iou {
            let suppressed = kept.iter().any(|k| {
                interval_iou(&k.moment.interval(), &cand.moment.interval()) > threshold
            });
            if suppressed {
                continue;
            }
        }
        kept.push(cand);
        if kept.len() == k_out {
            break;
        }
    }
    kept
}
