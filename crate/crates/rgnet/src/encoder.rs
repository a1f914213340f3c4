//! The unified cross-modal encoder.
//!
//! Per proposal candidate: cross-attention conditions the frames on the query
//! tokens, a Gumbel-softmax sampler classifies frames as relevant/irrelevant,
//! the resulting hard decisions build an additive attention mask, retrieval
//! attention with a learnable retrieval token distills the proposal into a
//! context vector and per-frame content features, and the fusion step adds
//! `G_j * R` back onto each content row.
//!
//! All steps run on a [`Tape`] so the sampler's straight-through relaxation
//! and both attentions are differentiable end to end.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::autodiff::{sigmoid_f, Arr, Tape, Var};
use crate::data::{ProposalCandidate, QueryFeatures};
use crate::error::RgError;
use crate::model::ModelConfig;
use crate::nn::{seeded_rng, sinusoidal_positions, TapedParams};

/// How the sampler produces relevance decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Hard {0,1} via Gumbel-Max forward, gradients through the soft
    /// relaxation (straight-through).
    TrainHard,
    /// Fully soft relaxation everywhere; used by gradient checks.
    TrainSoft,
    /// Deterministic threshold on `sigmoid(p)`, no noise.
    Infer,
}

/// Tape handles for one encoded proposal.
pub struct EncodedVars {
    /// Forward relevance values (hard in `TrainHard`/`Infer`, soft in `TrainSoft`).
    pub relevance: Vec<f64>,
    /// Soft relaxation values, always in [0, 1].
    pub soft_relevance: Vec<f64>,
    /// `L_c x 1` relevance node feeding the fusion.
    pub g: Var,
    /// `1 x D` proposal context (retrieval token output).
    pub context: Var,
    /// `L_c x D` content features.
    pub content: Var,
    /// `L_c x D` fused proposal features.
    pub fused: Var,
}

/// Plain-value encoder output.
#[derive(Debug, Clone)]
pub struct EncodedProposal {
    pub relevance: Vec<f64>,
    pub soft_relevance: Vec<f64>,
    pub context: Array1<f64>,
    pub content: Array2<f64>,
    pub fused: Array2<f64>,
}

fn check_finite(name: &str, a: &Arr) -> Result<(), RgError> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(RgError::NumericInput(name.to_string()));
    }
    Ok(())
}

fn attention_scale(cfg: &ModelConfig) -> f64 {
    if cfg.scale_logits {
        1.0 / ((cfg.d_model / cfg.n_heads) as f64).sqrt()
    } else {
        1.0
    }
}

fn slice_cols(tape: &Tape, x: Var, c0: usize, c1: usize) -> Var {
    tape.transpose(tape.slice_rows(tape.transpose(x), c0, c1))
}

/// Scaled dot-product attention over `n_heads` column partitions of the
/// projected tensors. Heads share the additive mask; their outputs are
/// concatenated back to the full width (no output projection, matching the
/// residual-only block layout).
pub(crate) fn masked_attention(
    tape: &Tape,
    cfg: &ModelConfig,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&Arr>,
) -> Var {
    let (_, d) = tape.shape(q);
    assert_eq!(d % cfg.n_heads, 0, "model width must split across heads");
    let head_dim = d / cfg.n_heads;
    let scale = attention_scale(cfg);
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let (c0, c1) = (h * head_dim, (h + 1) * head_dim);
        let (qh, kh, vh) = if cfg.n_heads == 1 {
            (q, k, v)
        } else {
            (
                slice_cols(tape, q, c0, c1),
                slice_cols(tape, k, c0, c1),
                slice_cols(tape, v, c0, c1),
            )
        };
        let mut logits = tape.scale(tape.matmul(qh, tape.transpose(kh)), scale);
        if let Some(m) = mask {
            logits = tape.add(logits, tape.constant(m.clone()));
        }
        heads.push(tape.matmul(tape.softmax_rows(logits), vh));
    }
    if cfg.n_heads == 1 {
        heads[0]
    } else {
        // Concatenate the head outputs along columns.
        let stacked = heads
            .iter()
            .skip(1)
            .fold(tape.transpose(heads[0]), |acc, &h| {
                tape.concat_rows(acc, tape.transpose(h))
            });
        tape.transpose(stacked)
    }
}

fn layer_norm(tape: &Tape, tp: &TapedParams, prefix: &str, x: Var) -> Var {
    let (rows, cols) = tape.shape(x);
    let inv_d = 1.0 / cols as f64;
    let ones_col = tape.constant(Arr::ones((cols, 1)));
    let ones_row = tape.constant(Arr::ones((1, cols)));
    let mu = tape.scale(tape.matmul(x, ones_col), inv_d);
    let centered = tape.sub(x, tape.matmul(mu, ones_row));
    let var = tape.scale(tape.matmul(tape.mul(centered, centered), ones_col), inv_d);
    let sd = tape.sqrt(tape.add_scalar(var, 1e-5));
    let normed = tape.div(centered, tape.matmul(sd, ones_row));
    let ones_rows = tape.constant(Arr::ones((rows, 1)));
    let gamma = tape.matmul(ones_rows, tp.var(&format!("{prefix}.gamma")));
    let beta = tape.matmul(ones_rows, tp.var(&format!("{prefix}.beta")));
    tape.add(tape.mul(normed, gamma), beta)
}

/// Row-wise layer norm + feed-forward, used only in `standard_blocks` mode.
fn standard_block(tape: &Tape, tp: &TapedParams, prefix: &str, x: Var) -> Var {
    let y = layer_norm(tape, tp, &format!("{prefix}_ln1"), x);
    let h = tape.relu(tp.linear(y, &format!("{prefix}_ffn.fc1")));
    let f = tp.linear(h, &format!("{prefix}_ffn.fc2"));
    layer_norm(tape, tp, &format!("{prefix}_ln2"), tape.add(y, f))
}

/// Text-conditioned frame features:
/// `F = softmax(f_Q(C) f_K(S)^T / sqrt(D)) f_V(S) + f_Q(C)`.
pub fn cross_attention(
    tape: &Tape,
    tp: &TapedParams,
    cfg: &ModelConfig,
    candidate: &ProposalCandidate,
    query: &QueryFeatures,
) -> Result<Var, RgError> {
    check_finite("proposal frames", &candidate.frames)?;
    check_finite("query tokens", &query.tokens)?;
    if query.tokens.nrows() == 0 {
        return Err(RgError::EmptyInput("query has no tokens".into()));
    }

    let mut frames = candidate.frames.clone();
    if cfg.use_pos_encoding {
        frames += &sinusoidal_positions(frames.nrows(), frames.ncols());
    }
    let frames = tape.constant(frames);
    let tokens = tape.constant(query.tokens.clone());

    let q = tp.linear(frames, "encoder.f_q");
    let k = tp.linear(tokens, "encoder.f_k");
    let v = tp.linear(tokens, "encoder.f_v");
    let attn = masked_attention(tape, cfg, q, k, v, None);
    let f = tape.add(attn, q);
    if cfg.standard_blocks {
        Ok(standard_block(tape, tp, "encoder.cross", f))
    } else {
        Ok(f)
    }
}

/// Sampler output: forward relevance plus the soft relaxation.
pub struct SampledRelevance {
    /// `L_c x 1` node feeding the fusion (straight-through in `TrainHard`).
    pub g: Var,
    pub hard: Vec<f64>,
    pub soft: Vec<f64>,
}

/// Per-frame relevance via the two-class Gumbel-softmax.
///
/// With logits `p = linear(F_j)` and class probabilities
/// `(sigma(p), 1 - sigma(p))`, the Gumbel-Max draw reduces to
/// `1[p + g_1 - g_0 > 0]` and the relaxation to
/// `sigma((p + g_1 - g_0) / tau)`. Padded frames are forced to 0.
pub fn sample_relevance(
    tape: &Tape,
    tp: &TapedParams,
    cfg: &ModelConfig,
    f: Var,
    raw_frames: &Arr,
    valid: &[bool],
    mode: SampleMode,
    noise_seed: u64,
) -> Result<SampledRelevance, RgError> {
    if cfg.temperature <= 0.0 {
        return Err(RgError::Config(format!(
            "temperature must be positive, got {}",
            cfg.temperature
        )));
    }
    let l_c = valid.len();
    let logits = if cfg.sampler_on_raw_frames {
        tp.linear(tape.constant(raw_frames.clone()), "encoder.sampler")
    } else {
        tp.linear(f, "encoder.sampler")
    };

    if let SampleMode::Infer = mode {
        let p = tape.value(logits);
        let hard: Vec<f64> = (0..l_c)
            .map(|r| {
                if valid[r] && sigmoid_f(p[[r, 0]]) > 0.5 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let soft: Vec<f64> = (0..l_c)
            .map(|r| if valid[r] { sigmoid_f(p[[r, 0]]) } else { 0.0 })
            .collect();
        let g = tape.constant(Arr::from_shape_fn((l_c, 1), |(r, _)| hard[r]));
        return Ok(SampledRelevance { g, hard, soft });
    }

    let mut rng = seeded_rng(noise_seed, &[0x6B]);
    // g1 - g0 for two independent Gumbel(0,1) draws per frame.
    let noise = Arr::from_shape_fn((l_c, 1), |_| {
        let g1 = -f64::ln(-f64::ln(rng.random_range(1e-12..1.0)));
        let g0 = -f64::ln(-f64::ln(rng.random_range(1e-12..1.0)));
        g1 - g0
    });
    let perturbed = tape.add(logits, tape.constant(noise));
    let soft_var = tape.sigmoid(tape.scale(perturbed, 1.0 / cfg.temperature));
    let soft_vals = tape.value(soft_var);
    let valid_col = tape.constant(Arr::from_shape_fn(
        (l_c, 1),
        |(r, _)| if valid[r] { 1.0 } else { 0.0 },
    ));

    let g = match mode {
        SampleMode::TrainSoft => tape.mul(soft_var, valid_col),
        SampleMode::TrainHard => {
            let hard = soft_vals.mapv(|s| if s > 0.5 { 1.0 } else { 0.0 });
            let st = tape.straight_through(soft_var, hard);
            tape.mul(st, valid_col)
        }
        SampleMode::Infer => unreachable!(),
    };
    let g_vals = tape.value(g);
    let soft: Vec<f64> = (0..l_c)
        .map(|r| if valid[r] { soft_vals[[r, 0]] } else { 0.0 })
        .collect();
    Ok(SampledRelevance {
        g,
        hard: g_vals.column(0).to_vec(),
        soft,
    })
}

/// Additive `(L_c + 1) x (L_c + 1)` mask for retrieval attention.
///
/// Row 0 is the retrieval token (unmasked). Frame row `j` is open iff
/// `G_j > 0.5`, with the diagonal always open. Columns of padded frames are
/// closed for every other row so padding cannot leak into real features.
pub fn build_attention_mask(g: &[f64], valid: &[bool]) -> Arr {
    assert_eq!(g.len(), valid.len());
    let l = g.len();
    let neg = f64::NEG_INFINITY;
    let mut m = Arr::zeros((l + 1, l + 1));
    for j in 0..l {
        let row = j + 1;
        if g[j] <= 0.5 {
            for k in 0..l + 1 {
                if k != row {
                    m[[row, k]] = neg;
                }
            }
        }
    }
    for (k, &ok) in valid.iter().enumerate() {
        if !ok {
            let col = k + 1;
            for row in 0..l + 1 {
                if row != col {
                    m[[row, col]] = neg;
                }
            }
        }
    }
    m
}

/// Self-attention over `[R_init; F]` under the additive mask. Returns the
/// retrieval-token row (context) and the frame rows (content).
pub fn retrieval_attention(
    tape: &Tape,
    tp: &TapedParams,
    cfg: &ModelConfig,
    f: Var,
    mask: &Arr,
) -> (Var, Var) {
    let (l_c, _) = tape.shape(f);
    assert_eq!(mask.dim(), (l_c + 1, l_c + 1), "mask shape");
    let x = tape.concat_rows(tp.var("encoder.r_init"), f);
    let q = tp.linear(x, "encoder.ret_q");
    let k = tp.linear(x, "encoder.ret_k");
    let v = tp.linear(x, "encoder.ret_v");
    let attn = masked_attention(tape, cfg, q, k, v, Some(mask));
    let mut out = tape.add(attn, x);
    if cfg.standard_blocks {
        out = standard_block(tape, tp, "encoder.ret", out);
    }
    let context = tape.slice_rows(out, 0, 1);
    let content = tape.slice_rows(out, 1, l_c + 1);
    (context, content)
}

/// `P_j = F_c_j + G_j * R`.
pub fn fuse(tape: &Tape, content: Var, context: Var, g: Var) -> Var {
    tape.add(content, tape.matmul(g, context))
}

/// Full encoder pipeline for one candidate.
pub fn encode_proposal(
    tape: &Tape,
    tp: &TapedParams,
    cfg: &ModelConfig,
    candidate: &ProposalCandidate,
    query: &QueryFeatures,
    mode: SampleMode,
    noise_seed: u64,
) -> Result<EncodedVars, RgError> {
    let f = cross_attention(tape, tp, cfg, candidate, query)?;
    let sampled = sample_relevance(
        tape,
        tp,
        cfg,
        f,
        &candidate.frames,
        &candidate.valid,
        mode,
        noise_seed,
    )?;
    let mask = build_attention_mask(&sampled.hard, &candidate.valid);
    let (context, content) = retrieval_attention(tape, tp, cfg, f, &mask);
    let fused = fuse(tape, content, context, sampled.g);
    Ok(EncodedVars {
        relevance: sampled.hard,
        soft_relevance: sampled.soft,
        g: sampled.g,
        context,
        content,
        fused,
    })
}

/// Plain-value, order-preserving encoder over a candidate set. Each
/// candidate's sampler noise stream is derived from `(noise_seed, index)`.
pub fn encode_proposals(
    params: &crate::nn::ParamStore,
    cfg: &ModelConfig,
    candidates: &[ProposalCandidate],
    query: &QueryFeatures,
    mode: SampleMode,
    noise_seed: u64,
) -> Result<Vec<EncodedProposal>, RgError> {
    if candidates.is_empty() {
        return Err(RgError::EmptyInput("no proposal candidates".into()));
    }
    candidates
        .iter()
        .map(|candidate| {
            let tape = Tape::new();
            let tp = params.bind(&tape);
            let seed = crate::nn::derive_seed(noise_seed, &[candidate.index as u64]);
            let enc = encode_proposal(&tape, &tp, cfg, candidate, query, mode, seed)?;
            Ok(EncodedProposal {
                relevance: enc.relevance,
                soft_relevance: enc.soft_relevance,
                context: tape.value(enc.context).row(0).to_owned(),
                content: tape.value(enc.content),
                fused: tape.value(enc.fused),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Model;
    use ndarray::array;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            d_model: 6,
            d_f: 4,
            d_w: 3,
            scale_logits: false,
            use_pos_encoding: false,
            ..ModelConfig::default()
        }
    }

    fn candidate(l: usize, d: usize, seed: u64) -> ProposalCandidate {
        let mut rng = seeded_rng(seed, &[2]);
        ProposalCandidate {
            index: 0,
            start_frame: 0,
            frames: Arr::from_shape_fn((l, d), |_| rng.random_range(-1.0..1.0)),
            valid: vec![true; l],
        }
    }

    fn query(n: usize, d: usize, seed: u64) -> QueryFeatures {
        let mut rng = seeded_rng(seed, &[3]);
        QueryFeatures {
            query_id: "q".into(),
            tokens: Arr::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0)),
        }
    }

    #[test]
    fn single_token_softmax_is_identity() {
        // One key: softmax weight is 1, so F_j = f_V(w) + f_Q(c_j).
        let cfg = tiny_cfg();
        let model = Model::init(&cfg, 11);
        let cand = candidate(3, cfg.d_f, 1);
        let q = query(1, cfg.d_w, 1);
        let tape = Tape::new();
        let tp = model.params.bind(&tape);
        let f = cross_attention(&tape, &tp, &cfg, &cand, &q).unwrap();
        let fv = tape.value(f);

        let qv = cand.frames.dot(model.params.get("encoder.f_q.w"))
            + &model.params.get("encoder.f_q.b").row(0);
        let vv = q.tokens.dot(model.params.get("encoder.f_v.w"))
            + &model.params.get("encoder.f_v.b").row(0);
        for j in 0..3 {
            for c in 0..cfg.d_model {
                assert!((fv[[j, c]] - (vv[[0, c]] + qv[[j, c]])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_value_map_returns_pure_residual() {
        let cfg = tiny_cfg();
        let mut model = Model::init(&cfg, 11);
        model.params.get_mut("encoder.f_v.w").mapv_inplace(|_| 0.0);
        model.params.get_mut("encoder.f_v.b").mapv_inplace(|_| 0.0);
        let cand = candidate(3, cfg.d_f, 2);
        let q = query(2, cfg.d_w, 2);
        let tape = Tape::new();
        let tp = model.params.bind(&tape);
        let f = cross_attention(&tape, &tp, &cfg, &cand, &q).unwrap();
        let qv = cand.frames.dot(model.params.get("encoder.f_q.w"))
            + &model.params.get("encoder.f_q.b").row(0);
        assert!(tape
            .value(f)
            .iter()
            .zip(qv.iter())
            .all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn cross_attention_matches_dense_oracle() {
        // Hand-rolled dense attention, computed independently.
        let cfg = tiny_cfg();
        let model = Model::init(&cfg, 21);
        let cand = candidate(3, cfg.d_f, 5);
        let q = query(2, cfg.d_w, 5);
        let tape = Tape::new();
        let tp = model.params.bind(&tape);
        let f = cross_attention(&tape, &tp, &cfg, &cand, &q).unwrap();
        let fv = tape.value(f);

        let p = &model.params;
        let qm = cand.frames.dot(p.get("encoder.f_q.w")) + &p.get("encoder.f_q.b").row(0);
        let km = q.tokens.dot(p.get("encoder.f_k.w")) + &p.get("encoder.f_k.b").row(0);
        let vm = q.tokens.dot(p.get("encoder.f_v.w")) + &p.get("encoder.f_v.b").row(0);
        for j in 0..3 {
            let mut weights = [0.0; 2];
            for n in 0..2 {
                weights[n] = qm.row(j).dot(&km.row(n));
            }
            let m = weights.iter().cloned().fold(f64::MIN, f64::max);
            let denom: f64 = weights.iter().map(|x| (x - m).exp()).sum();
            for c in 0..cfg.d_model {
                let mut expect = qm[[j, c]];
                for n in 0..2 {
                    expect += (weights[n] - m).exp() / denom * vm[[n, c]];
                }
                assert!(
                    (fv[[j, c]] - expect).abs() < 1e-6,
                    "row {j} col {c}: {} vs {expect}",
                    fv[[j, c]]
                );
            }
        }
    }

    #[test]
    fn two_head_attention_matches_per_head_oracle() {
        // Heads partition the width: each half runs its own softmax.
        let cfg = ModelConfig {
            n_heads: 2,
            ..tiny_cfg()
        };
        let tape = Tape::new();
        let mut rng = seeded_rng(61, &[]);
        let q0 = Arr::from_shape_fn((3, 6), |_| rng.random_range(-1.0..1.0));
        let k0 = Arr::from_shape_fn((2, 6), |_| rng.random_range(-1.0..1.0));
        let v0 = Arr::from_shape_fn((2, 6), |_| rng.random_range(-1.0..1.0));
        let out = tape.value(masked_attention(
            &tape,
            &cfg,
            tape.constant(q0.clone()),
            tape.constant(k0.clone()),
            tape.constant(v0.clone()),
            None,
        ));

        for h in 0..2 {
            let cols = h * 3..(h + 1) * 3;
            for j in 0..3 {
                let mut logits = [0.0; 2];
                for n in 0..2 {
                    logits[n] = (0..3)
                        .map(|c| q0[[j, h * 3 + c]] * k0[[n, h * 3 + c]])
                        .sum::<f64>();
                }
                let m = logits[0].max(logits[1]);
                let denom: f64 = logits.iter().map(|x| (x - m).exp()).sum();
                for (ci, c) in cols.clone().enumerate() {
                    let expect: f64 = (0..2)
                        .map(|n| (logits[n] - m).exp() / denom * v0[[n, h * 3 + ci]])
                        .sum();
                    assert!((out[[j, c]] - expect).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn mask_rule_examples() {
        let neg = f64::NEG_INFINITY;
        let m = build_attention_mask(&[0.9, 0.2], &[true, true]);
        // Retrieval row open everywhere.
        assert!(m.row(0).iter().all(|&x| x == 0.0));
        // Frame submatrix [[0, 0], [-inf, 0]].
        assert_eq!(m[[1, 1]], 0.0);
        assert_eq!(m[[1, 2]], 0.0);
        assert_eq!(m[[2, 1]], neg);
        assert_eq!(m[[2, 2]], 0.0);

        let m = build_attention_mask(&[0.8, 0.9, 0.6], &[true; 3]);
        assert!(m.iter().all(|&x| x == 0.0));

        let m = build_attention_mask(&[0.1, 0.4], &[true, true]);
        for j in 1..3 {
            for k in 0..3 {
                let expect = if j == k { 0.0 } else { neg };
                assert_eq!(m[[j, k]], expect);
            }
        }
    }

    #[test]
    fn padded_columns_are_closed_for_all_other_rows() {
        let m = build_attention_mask(&[1.0, 0.0], &[true, false]);
        let neg = f64::NEG_INFINITY;
        assert_eq!(m[[0, 2]], neg);
        assert_eq!(m[[1, 2]], neg);
        assert_eq!(m[[2, 2]], 0.0);
    }

    #[test]
    fn sampler_saturation_and_determinism() {
        let cfg = ModelConfig {
            temperature: 0.3,
            ..tiny_cfg()
        };
        let model = Model::init(&cfg, 3);
        let l = 4;
        let mut params = model.params.clone();
        params.get_mut("encoder.sampler.w").mapv_inplace(|_| 0.0);
        params.get_mut("encoder.sampler.b").mapv_inplace(|_| 20.0);
        let tape = Tape::new();
        let tp = params.bind(&tape);
        let f = tape.constant(Arr::zeros((l, cfg.d_model)));
        let raw = Arr::zeros((l, cfg.d_f));
        let s = sample_relevance(
            &tape,
            &tp,
            &cfg,
            f,
            &raw,
            &[true; 4],
            SampleMode::TrainHard,
            7,
        )
        .unwrap();
        // p = +20 saturates: any moderate Gumbel draw keeps G = 1.
        assert!(s.hard.iter().all(|&g| g == 1.0));

        // Same seed, same draw.
        let tape2 = Tape::new();
        let tp2 = params.bind(&tape2);
        let f2 = tape2.constant(Arr::zeros((l, cfg.d_model)));
        let s2 = sample_relevance(
            &tape2,
            &tp2,
            &cfg,
            f2,
            &raw,
            &[true; 4],
            SampleMode::TrainHard,
            7,
        )
        .unwrap();
        assert_eq!(s.hard, s2.hard);
    }

    #[test]
    fn infer_mode_thresholds_sigmoid() {
        let cfg = tiny_cfg();
        let model = Model::init(&cfg, 3);
        let mut params = model.params.clone();
        params.get_mut("encoder.sampler.w").mapv_inplace(|_| 0.0);
        // sigma(0.1) = 0.525 > 0.5 -> relevant.
        params.get_mut("encoder.sampler.b").mapv_inplace(|_| 0.1);
        let tape = Tape::new();
        let tp = params.bind(&tape);
        let f = tape.constant(Arr::zeros((2, cfg.d_model)));
        let s = sample_relevance(
            &tape,
            &tp,
            &cfg,
            f,
            &Arr::zeros((2, cfg.d_f)),
            &[true, true],
            SampleMode::Infer,
            0,
        )
        .unwrap();
        assert_eq!(s.hard, vec![1.0, 1.0]);
        assert!((s.soft[0] - sigmoid_f(0.1)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_temperature_and_nan_input() {
        let cfg = ModelConfig {
            temperature: 0.0,
            ..tiny_cfg()
        };
        let model = Model::init(&cfg, 3);
        let tape = Tape::new();
        let tp = model.params.bind(&tape);
        let f = tape.constant(Arr::zeros((2, cfg.d_model)));
        assert!(matches!(
            sample_relevance(
                &tape,
                &tp,
                &cfg,
                f,
                &Arr::zeros((2, cfg.d_f)),
                &[true, true],
                SampleMode::TrainHard,
                0
            ),
            Err(RgError::Config(_))
        ));

        let cfg = tiny_cfg();
        let mut cand = candidate(2, cfg.d_f, 1);
        cand.frames[[0, 0]] = f64::NAN;
        let q = query(1, cfg.d_w, 1);
        assert!(matches!(
            cross_attention(&tape, &tp, &cfg, &cand, &q),
            Err(RgError::NumericInput(_))
        ));
    }

    #[test]
    fn masked_frame_is_a_fixpoint() {
        // A frame with G = 0 only attends to itself: output row equals
        // value-projection(own row) + own row, and perturbing other frames
        // leaves it untouched.
        let cfg = tiny_cfg();
        let model = Model::init(&cfg, 9);
        let l = 3;
        let f0 = Arr::from_shape_fn((l, cfg.d_model), |(r, c)| ((r * 7 + c) % 5) as f64 * 0.2);
        let g = [1.0, 0.0, 1.0];
        let mask = build_attention_mask(&g, &[true; 3]);

        let run = |f_in: &Arr| -> Arr {
            let tape = Tape::new();
            let tp = model.params.bind(&tape);
            let f = tape.constant(f_in.clone());
            let (_, content) = retrieval_attention(&tape, &tp, &cfg, f, &mask);
            tape.value(content)
        };
        let base = run(&f0);

        // Exact closed form for the masked row.
        let p = &model.params;
        let expect = f0.row(1).dot(p.get("encoder.ret_v.w"))
            + &p.get("encoder.ret_v.b").row(0)
            + &f0.row(1);
        for c in 0..cfg.d_model {
            assert!((base[[1, c]] - expect[c]).abs() < 1e-12);
        }

        // Perturb the other frames.
        let mut f1 = f0.clone();
        f1[[0, 2]] += 3.0;
        f1[[2, 1]] -= 2.0;
        let moved = run(&f1);
        for c in 0..cfg.d_model {
            assert!((moved[[1, c]] - base[[1, c]]).abs() < 1e-6);
        }
    }

    #[test]
    fn all_zero_mask_equals_unmasked_attention() {
        let cfg = tiny_cfg();
        let model = Model::init(&cfg, 13);
        let f0 = Arr::from_shape_fn((2, cfg.d_model), |(r, c)| (r + c) as f64 * 0.1);
        let zero_mask = Arr::zeros((3, 3));
        let open_mask = build_attention_mask(&[1.0, 1.0], &[true, true]);
        assert_eq!(zero_mask, open_mask);

        let tape = Tape::new();
        let tp = model.params.bind(&tape);
        let f = tape.constant(f0);
        let (ctx, content) = retrieval_attention(&tape, &tp, &cfg, f, &zero_mask);
        assert_eq!(tape.shape(ctx), (1, cfg.d_model));
        assert_eq!(tape.shape(content), (2, cfg.d_model));
    }

    #[test]
    fn retrieval_attention_single_frame_matches_dense_oracle() {
        let cfg = tiny_cfg();
        let model = Model::init(&cfg, 31);
        let f0 = Arr::from_shape_fn((1, cfg.d_model), |(_, c)| 0.3 - c as f64 * 0.1);
        let mask = build_attention_mask(&[1.0], &[true]);
        let tape = Tape::new();
        let tp = model.params.bind(&tape);
        let f = tape.constant(f0.clone());
        let (ctx, _) = retrieval_attention(&tape, &tp, &cfg, f, &mask);
        let got = tape.value(ctx);

        // Dense oracle on the 2 x D stacked input.
        let p = &model.params;
        let x = ndarray::concatenate(
            ndarray::Axis(0),
            &[p.get("encoder.r_init").view(), f0.view()],
        )
        .unwrap();
        let qm = x.dot(p.get("encoder.ret_q.w")) + &p.get("encoder.ret_q.b").row(0);
        let km = x.dot(p.get("encoder.ret_k.w")) + &p.get("encoder.ret_k.b").row(0);
        let vm = x.dot(p.get("encoder.ret_v.w")) + &p.get("encoder.ret_v.b").row(0);
        let w = [qm.row(0).dot(&km.row(0)), qm.row(0).dot(&km.row(1))];
        let m = w[0].max(w[1]);
        let denom = (w[0] - m).exp() + (w[1] - m).exp();
        for c in 0..cfg.d_model {
            let expect = (w[0] - m).exp() / denom * vm[[0, c]]
                + (w[1] - m).exp() / denom * vm[[1, c]]
                + x[[0, c]];
            assert!((got[[0, c]] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn fuse_examples() {
        let tape = Tape::new();
        let content = tape.constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let context = tape.constant(array![[1.0, 1.0]]);

        let g = tape.constant(array![[0.0], [0.0]]);
        assert_eq!(
            tape.value(fuse(&tape, content, context, g)),
            array![[1.0, 2.0], [3.0, 4.0]]
        );

        let g = tape.constant(array![[1.0], [1.0]]);
        assert_eq!(
            tape.value(fuse(&tape, content, context, g)),
            array![[2.0, 3.0], [4.0, 5.0]]
        );

        let g = tape.constant(array![[1.0], [0.0]]);
        assert_eq!(
            tape.value(fuse(&tape, content, context, g)),
            array![[2.0, 3.0], [3.0, 4.0]]
        );
    }

    #[test]
    fn encode_proposals_is_per_candidate_and_keeps_fusion_identity() {
        let cfg = tiny_cfg();
        let model = Model::init(&cfg, 40);
        let q = query(2, cfg.d_w, 8);
        let cands: Vec<ProposalCandidate> = (0..3)
            .map(|i| {
                let mut c = candidate(4, cfg.d_f, 50 + i as u64);
                c.index = i;
                c.start_frame = i * 2;
                c
            })
            .collect();

        let out =
            encode_proposals(&model.params, &cfg, &cands, &q, SampleMode::TrainHard, 5).unwrap();
        assert_eq!(out.len(), 3);
        for enc in &out {
            for j in 0..4 {
                for c in 0..cfg.d_model {
                    let expect = enc.content[[j, c]] + enc.relevance[j] * enc.context[c];
                    assert_eq!(enc.fused[[j, c]], expect);
                }
            }
        }

        // Permuting candidates permutes outputs (independence).
        let permuted = vec![cands[2].clone(), cands[0].clone(), cands[1].clone()];
        let out_p =
            encode_proposals(&model.params, &cfg, &permuted, &q, SampleMode::TrainHard, 5).unwrap();
        assert_eq!(out_p[0].fused, out[2].fused);
        assert_eq!(out_p[1].fused, out[0].fused);
        assert_eq!(out_p[2].fused, out[1].fused);

        // Single candidate equals running the pipeline manually.
        let single = encode_proposals(
            &model.params,
            &cfg,
            &cands[..1],
            &q,
            SampleMode::TrainHard,
            5,
        )
        .unwrap();
        let tape = Tape::new();
        let tp = model.params.bind(&tape);
        let manual = encode_proposal(
            &tape,
            &tp,
            &cfg,
            &cands[0],
            &q,
            SampleMode::TrainHard,
            crate::nn::derive_seed(5, &[0]),
        )
        .unwrap();
        assert_eq!(single[0].fused, tape.value(manual.fused));
    }
}
