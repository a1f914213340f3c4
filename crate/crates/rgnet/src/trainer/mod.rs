//! Training loop, schedule, evaluation protocol, and the sweep harness.

mod checkpoint;

pub use checkpoint::Checkpoint;

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Arr as Arr2, Tape, Var};
use crate::data::{
    frame_relevance_labels, slice_proposals, Annotation, Dataset, ProposalCandidate,
    QueryFeatures,
};
use crate::decoder::{decode_moments_t, merge_predictions, to_absolute};
use crate::encoder::{encode_proposal, SampleMode};
use crate::error::RgError;
use crate::losses::{
    contrastive_loss_t, grounding_loss_t, sampling_loss_t, sampling_score_t, total_loss_t,
    LossWeights,
};
use crate::metrics::{
    oracle_window_index, recall_at_k_iou, retrieval_recall_at_k, GroundingCell, MetricsReport,
    RetrievalCell,
};
use crate::model::{Model, ModelConfig};
use crate::nn::{clip_global_norm, derive_seed, seeded_rng, AdamW, TapedParams};
use crate::retrieval::topk_proposals;
use crate::temporal::{coverage_fraction, ScoredMoment, TimeInterval};

/// Flat training configuration; every field is a key in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Epoch at which the learning rate drops by one order of magnitude.
    pub decay_epoch: usize,
    /// Optional hard cap on optimizer steps (0 = no cap).
    pub max_steps: u64,
    pub batch_size: usize,
    pub grad_clip: f64,
    /// Negative proposals decoded per pair for background supervision.
    pub n_negatives: usize,
    pub seed: u64,
    pub deterministic: bool,

    pub d_model: usize,
    pub n_queries: usize,
    pub n_decoder_layers: usize,
    pub n_heads: usize,
    pub temperature: f64,
    pub proposal_length_s: f64,
    pub top_k: usize,
    pub scale_logits: bool,
    pub standard_blocks: bool,
    pub sampler_on_raw_frames: bool,
    pub use_pos_encoding: bool,
    pub tie_retrieval_contrastive: bool,

    pub lambda_l1: f64,
    pub lambda_giou: f64,
    pub lambda_ce: f64,
    pub lambda_samp: f64,
    pub lambda_cont: f64,
    pub margin: f64,
    /// Add query-anchored contrastive terms whose negative pool includes
    /// zero-coverage windows of the query's own video. Trains the score to
    /// rank windows within a video, which is what retrieval R@k measures.
    pub same_video_negatives: bool,

    /// Enable 1-D NMS during prediction merging.
    pub nms: bool,
    pub nms_iou: f64,
    /// Merged predictions kept per query.
    pub k_out: usize,
    pub eval_ks: Vec<usize>,
    pub eval_thetas: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 1e-4,
            epochs: 50,
            decay_epoch: 40,
            max_steps: 0,
            batch_size: 8,
            grad_clip: 1.0,
            n_negatives: 1,
            seed: 17,
            deterministic: true,
            d_model: 64,
            n_queries: 5,
            n_decoder_layers: 2,
            n_heads: 1,
            temperature: 0.3,
            proposal_length_s: 32.0,
            top_k: 3,
            scale_logits: true,
            standard_blocks: false,
            sampler_on_raw_frames: false,
            use_pos_encoding: true,
            tie_retrieval_contrastive: true,
            lambda_l1: 10.0,
            lambda_giou: 1.0,
            lambda_ce: 4.0,
            lambda_samp: 1.0,
            lambda_cont: 10.0,
            margin: 0.2,
            same_video_negatives: false,
            nms: true,
            nms_iou: 0.5,
            k_out: 10,
            eval_ks: vec![1, 3, 5],
            eval_thetas: vec![0.1, 0.3, 0.5],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RgError> {
        if self.lr <= 0.0 {
            return Err(RgError::Config("lr must be positive".into()));
        }
        if self.epochs > 0 && self.decay_epoch >= self.epochs {
            return Err(RgError::Config(format!(
                "decay_epoch {} must be below epochs {}",
                self.decay_epoch, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(RgError::Config("batch_size must be positive".into()));
        }
        if self.temperature <= 0.0 {
            return Err(RgError::Config("temperature must be positive".into()));
        }
        if self.top_k == 0 {
            return Err(RgError::Config("top_k must be at least 1".into()));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(RgError::Config(format!(
                "n_heads {} must divide d_model {}",
                self.n_heads, self.d_model
            )));
        }
        if self.proposal_length_s <= 0.0 {
            return Err(RgError::Config("proposal_length_s must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, d_f: usize, d_w: usize) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            d_f,
            d_w,
            n_queries: self.n_queries,
            n_decoder_layers: self.n_decoder_layers,
            n_heads: self.n_heads,
            temperature: self.temperature,
            scale_logits: self.scale_logits,
            standard_blocks: self.standard_blocks,
            sampler_on_raw_frames: self.sampler_on_raw_frames,
            use_pos_encoding: self.use_pos_encoding,
            tie_retrieval_contrastive: self.tie_retrieval_contrastive,
            ffn_hidden: 2 * self.d_model,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_l1: self.lambda_l1,
            lambda_giou: self.lambda_giou,
            lambda_ce: self.lambda_ce,
            lambda_samp: self.lambda_samp,
            lambda_cont: self.lambda_cont,
            margin: self.margin,
        }
    }

    /// Proposal length in frames: nearest even count, at least 2.
    pub fn proposal_frames(&self, fps: f64) -> usize {
        let frames = (self.proposal_length_s * fps / 2.0).round() as usize * 2;
        frames.max(2)
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epoch {
            self.lr * 0.1
        } else {
            self.lr
        }
    }
}

/// One optimizer step in the training log. Component losses are the weighted
/// contributions, so they sum to `loss_total`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_samp: f64,
    pub loss_cont: f64,
    pub loss_g: f64,
}

/// Weighted loss components of one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub samp: f64,
    pub cont: f64,
    pub ground: f64,
    pub total: f64,
}

/// One (video, query) training pair with its positive proposal resolved.
pub struct BatchPair<'a> {
    pub candidates: &'a [ProposalCandidate],
    pub query: &'a QueryFeatures,
    pub annotation: &'a Annotation,
    pub fps: f64,
    pub positive_idx: usize,
}

/// Ground-truth moment clipped to the window and normalized to `[0, 1]`
/// window coordinates; `None` when less than half the moment is covered.
fn normalized_target(pair: &BatchPair) -> Option<(f64, f64)> {
    let window = pair.candidates[pair.positive_idx].window(pair.fps);
    let gt = pair.annotation.moment.interval();
    let coverage = coverage_fraction(&gt, &window).ok()?;
    if coverage < 0.5 {
        return None;
    }
    let start = gt.start_s.max(window.start_s);
    let end = gt.end_s.min(window.end_s);
    let span = window.length();
    let center = ((start + end) / 2.0 - window.start_s) / span;
    let width = ((end - start) / span).clamp(1e-6, 1.0);
    Some((center.clamp(0.0, 1.0), width))
}

/// Build the full training loss for one batch on the given tape.
///
/// The B x B contrastive matrix re-encodes pair i's positive proposal with
/// every query j; the diagonal encodings feed the sampling and grounding
/// paths. Each pair also decodes `n_negatives` zero-coverage windows for
/// background classification.
pub fn batch_loss(
    tape: &Tape,
    tp: &TapedParams,
    model_cfg: &ModelConfig,
    weights: &LossWeights,
    pairs: &[BatchPair],
    n_negatives: usize,
    same_video_negatives: bool,
    mode: SampleMode,
    seed: u64,
    step: u64,
) -> Result<(Var, LossParts), RgError> {
    let b = pairs.len();
    assert!(b > 0, "empty batch");

    // Contrastive matrix: encode proposal i with query j, row-major.
    let mut diag = Vec::with_capacity(b);
    let mut contexts = Vec::with_capacity(b * b);
    for (i, pair_i) in pairs.iter().enumerate() {
        let positive = &pair_i.candidates[pair_i.positive_idx];
        for (j, pair_j) in pairs.iter().enumerate() {
            let enc = encode_proposal(
                tape,
                tp,
                model_cfg,
                positive,
                pair_j.query,
                mode,
                derive_seed(seed, &[step, 1, i as u64, j as u64]),
            )?;
            contexts.push(enc.context);
            if i == j {
                diag.push(enc);
            }
        }
    }
    let stacked = contexts
        .iter()
        .skip(1)
        .fold(contexts[0], |acc, &c| tape.concat_rows(acc, c));
    let cont_logits_flat = tp.linear(stacked, "losses.f_cont");
    let cont_logits = tape.reshape(cont_logits_flat, b, b);
    let mut cont = contrastive_loss_t(tape, cont_logits);

    // Zero-coverage windows of each pair's own video, sampled once and
    // shared between the background-classification path and (when enabled)
    // the query-anchored contrastive terms.
    let mut negatives: Vec<Vec<(usize, crate::encoder::EncodedVars)>> = Vec::with_capacity(b);
    for (i, pair) in pairs.iter().enumerate() {
        let gt = pair.annotation.moment.interval();
        let pool: Vec<usize> = pair
            .candidates
            .iter()
            .enumerate()
            .filter(|(idx, c)| {
                *idx != pair.positive_idx
                    && coverage_fraction(&gt, &c.window(pair.fps))
                        .map(|cov| cov == 0.0)
                        .unwrap_or(false)
            })
            .map(|(idx, _)| idx)
            .collect();
        let mut taken = Vec::new();
        if !pool.is_empty() && n_negatives > 0 {
            let mut rng = seeded_rng(seed, &[step, 3, i as u64]);
            for t in 0..n_negatives {
                let pick = pool[(rng.next_u64() % pool.len() as u64) as usize];
                let enc = encode_proposal(
                    tape,
                    tp,
                    model_cfg,
                    &pair.candidates[pick],
                    pair.query,
                    mode,
                    derive_seed(seed, &[step, 4, i as u64, t as u64]),
                )?;
                taken.push((pick, enc));
            }
        }
        negatives.push(taken);
    }

    if same_video_negatives {
        // Per query i: its positive against every other positive (column i
        // of the matrix) plus its own video's noise windows.
        let mut sv_sum = tape.scalar_leaf(0.0);
        let cols = tape.transpose(cont_logits);
        for i in 0..b {
            let mut pool = tape.slice_rows(cols, i, i + 1);
            if !negatives[i].is_empty() {
                let neg_ctx = negatives[i]
                    .iter()
                    .skip(1)
                    .fold(negatives[i][0].1.context, |acc, (_, enc)| {
                        tape.concat_rows(acc, enc.context)
                    });
                let neg_logits = tp.linear(neg_ctx, "losses.f_cont");
                pool = tape.concat_rows(tape.transpose(pool), neg_logits);
                pool = tape.transpose(pool);
            }
            let lse = tape.log_sum_exp_rows(pool);
            let one_hot = tape.constant(Arr2::from_shape_fn((b, 1), |(r, _)| {
                if r == i {
                    1.0
                } else {
                    0.0
                }
            }));
            let positive = tape.matmul(tape.slice_rows(cont_logits, i, i + 1), one_hot);
            sv_sum = tape.add(sv_sum, tape.sub(lse, positive));
        }
        cont = tape.add(cont, sv_sum);
    }

    // Sampling hinge per pair, one in/out draw each.
    let mut samp_sum = tape.scalar_leaf(0.0);
    for (i, pair) in pairs.iter().enumerate() {
        let positive = &pair.candidates[pair.positive_idx];
        let labels = frame_relevance_labels(positive, pair.annotation, pair.fps);
        let in_idx: Vec<usize> = (0..labels.len()).filter(|&j| labels[j]).collect();
        let out_idx: Vec<usize> = (0..labels.len())
            .filter(|&j| positive.valid[j] && !labels[j])
            .collect();
        let scores = sampling_score_t(tape, tp, diag[i].context, diag[i].fused);
        let (hinge, _skipped) = sampling_loss_t(
            tape,
            scores,
            &in_idx,
            &out_idx,
            weights.margin,
            derive_seed(seed, &[step, 2, i as u64]),
        );
        samp_sum = tape.add(samp_sum, hinge);
    }
    let samp = tape.scale(samp_sum, 1.0 / b as f64);

    // Grounding: positive window with its targets, negatives as background.
    let mut ground_sum = tape.scalar_leaf(0.0);
    for (i, pair) in pairs.iter().enumerate() {
        let positive = &pair.candidates[pair.positive_idx];
        let mut pair_term = tape.scalar_leaf(0.0);
        if let Some(target) = normalized_target(pair) {
            let decoded = decode_moments_t(tape, tp, model_cfg, diag[i].fused, &positive.valid)?;
            let (g_loss, _, _) = grounding_loss_t(tape, &decoded, &[target], weights)?;
            pair_term = tape.add(pair_term, g_loss);
        }

        // Negative windows carry background-only classification.
        if !negatives[i].is_empty() {
            let mut bce_sum = tape.scalar_leaf(0.0);
            for (idx, enc) in &negatives[i] {
                let valid = &pair.candidates[*idx].valid;
                let decoded = decode_moments_t(tape, tp, model_cfg, enc.fused, valid)?;
                // All queries are background: BCE reduces to softplus.
                let bce = tape.mean_all(tape.softplus(decoded.fg_logits));
                bce_sum = tape.add(bce_sum, bce);
            }
            let bce_mean = tape.scale(bce_sum, weights.lambda_ce / negatives[i].len() as f64);
            pair_term = tape.add(pair_term, bce_mean);
        }
        ground_sum = tape.add(ground_sum, pair_term);
    }
    let ground = tape.scale(ground_sum, 1.0 / b as f64);

    let total = total_loss_t(tape, samp, cont, ground, weights);
    let parts = LossParts {
        samp: weights.lambda_samp * tape.scalar(samp),
        cont: weights.lambda_cont * tape.scalar(cont),
        ground: tape.scalar(ground),
        total: tape.scalar(total),
    };
    Ok((total, parts))
}

/// Per-video proposal slices plus per-annotation positive windows.
pub struct PreparedData {
    pub slices: BTreeMap<String, Vec<ProposalCandidate>>,
    pub positives: Vec<usize>,
}

pub fn prepare(dataset: &Dataset, cfg: &TrainConfig) -> Result<PreparedData, RgError> {
    let mut slices = BTreeMap::new();
    for (id, video) in &dataset.videos {
        let frames = cfg.proposal_frames(video.fps);
        slices.insert(id.clone(), slice_proposals(video, frames)?);
    }
    let mut positives = Vec::with_capacity(dataset.annotations.len());
    for ann in &dataset.annotations {
        let video = dataset
            .videos
            .get(&ann.video_id)
            .ok_or_else(|| RgError::DanglingReference(ann.video_id.clone()))?;
        let candidates = &slices[&ann.video_id];
        let windows: Vec<TimeInterval> =
            candidates.iter().map(|c| c.window(video.fps)).collect();
        let idx = oracle_window_index(&windows, &ann.moment).ok_or_else(|| {
            RgError::EmptyInput(format!("no windows for video {}", ann.video_id))
        })?;
        positives.push(idx);
    }
    Ok(PreparedData { slices, positives })
}

/// Train a model on the dataset; returns the checkpoint and the step log.
pub fn train(cfg: &TrainConfig, dataset: &Dataset) -> Result<(Checkpoint, Vec<StepLog>), RgError> {
    cfg.validate()?;
    if dataset.annotations.is_empty() {
        return Err(RgError::EmptyInput("dataset has no annotations".into()));
    }
    let d_f = dataset.frame_dim().ok_or_else(|| {
        RgError::EmptyInput("dataset has no videos".into())
    })?;
    let d_w = dataset.token_dim().ok_or_else(|| {
        RgError::EmptyInput("dataset has no queries".into())
    })?;

    let model_cfg = cfg.model_config(d_f, d_w);
    let mut model = Model::init(&model_cfg, cfg.seed);
    let weights = cfg.loss_weights();
    let prepared = prepare(dataset, cfg)?;
    let mode = SampleMode::TrainHard;

    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut logs = Vec::new();
    let mut step: u64 = 0;
    let mut final_epoch = 0;

    'epochs: for epoch in 0..cfg.epochs {
        final_epoch = epoch;
        let lr = cfg.lr_at_epoch(epoch);
        opt.lr = lr;

        let mut order: Vec<usize> = (0..dataset.annotations.len()).collect();
        let mut shuffle_rng = seeded_rng(cfg.seed, &[5, epoch as u64]);
        order.shuffle(&mut shuffle_rng);

        for batch_indices in order.chunks(cfg.batch_size) {
            let pairs: Vec<BatchPair> = batch_indices
                .iter()
                .map(|&a| {
                    let ann = &dataset.annotations[a];
                    BatchPair {
                        candidates: &prepared.slices[&ann.video_id],
                        query: &dataset.queries[&ann.query_id],
                        annotation: ann,
                        fps: dataset.videos[&ann.video_id].fps,
                        positive_idx: prepared.positives[a],
                    }
                })
                .collect();

            let tape = Tape::new();
            let tp = model.params.bind(&tape);
            let (total, parts) = batch_loss(
                &tape,
                &tp,
                &model_cfg,
                &weights,
                &pairs,
                cfg.n_negatives,
                cfg.same_video_negatives,
                mode,
                cfg.seed,
                step,
            )
            .map_err(|e| match e {
                // Non-finite values mid-forward mean the optimization blew
                // up; report it as divergence with the step number.
                RgError::NumericInput(what) => {
                    RgError::Diverged(format!("non-finite values in {what} at step {step}"))
                }
                other => other,
            })?;
            if !parts.total.is_finite() {
                return Err(RgError::Diverged(format!(
                    "non-finite total loss at step {step} (samp {}, cont {}, g {})",
                    parts.samp, parts.cont, parts.ground
                )));
            }
            let grads = tape.backward(total);
            let mut named = tp.grads(&grads);
            clip_global_norm(&mut named, cfg.grad_clip);
            opt.apply(&mut model.params, &named);
            step += 1;
            logs.push(StepLog {
                step,
                epoch,
                lr,
                loss_total: parts.total,
                loss_samp: parts.samp,
                loss_cont: parts.cont,
                loss_g: parts.ground,
            });
            if cfg.max_steps > 0 && step >= cfg.max_steps {
                break 'epochs;
            }
        }
    }

    let epoch_done = if cfg.epochs == 0 { 0 } else { final_epoch + 1 };
    let ckpt = Checkpoint::new(cfg.clone(), &model, epoch_done, step, cfg.seed);
    Ok((ckpt, logs))
}

/// Per-query outputs of the full retrieve-then-ground pipeline.
struct QueryEval {
    merged: Vec<ScoredMoment>,
    ranked_windows: Vec<TimeInterval>,
}

fn check_dims(ckpt: &Checkpoint, dataset: &Dataset) -> Result<(), RgError> {
    let d_f = dataset.frame_dim().unwrap_or(0);
    let d_w = dataset.token_dim().unwrap_or(0);
    if ckpt.model_cfg.d_f != d_f || ckpt.model_cfg.d_w != d_w {
        return Err(RgError::CheckpointLoad(format!(
            "checkpoint dims (d_f {}, d_w {}) do not match dataset (d_f {d_f}, d_w {d_w})",
            ckpt.model_cfg.d_f, ckpt.model_cfg.d_w
        )));
    }
    Ok(())
}

fn run_query(
    model: &Model,
    cfg: &TrainConfig,
    candidates: &[ProposalCandidate],
    query: &QueryFeatures,
    fps: f64,
    duration_s: f64,
) -> Result<QueryEval, RgError> {
    let encs = model.encode_all(candidates, query, SampleMode::Infer, 0)?;
    let scores: Vec<f64> = encs.iter().map(|e| model.context_score(&e.context)).collect();
    let full_order = topk_proposals(&scores, scores.len())?;
    let ranked_windows: Vec<TimeInterval> = full_order
        .iter()
        .map(|&i| candidates[i].window(fps))
        .collect();

    let selected = &full_order[..cfg.top_k.min(full_order.len())];
    let mut per_proposal = Vec::with_capacity(selected.len());
    for &idx in selected {
        let preds = model.decode(&encs[idx].fused, &candidates[idx].valid)?;
        let absolute = to_absolute(&preds, &candidates[idx].window(fps), duration_s);
        per_proposal.push((absolute, scores[idx]));
    }
    let nms = if cfg.nms { Some(cfg.nms_iou) } else { None };
    let merged = merge_predictions(&per_proposal, cfg.k_out, nms);
    Ok(QueryEval {
        merged,
        ranked_windows,
    })
}

/// Full evaluation: end-to-end grounding recall, retrieval recall, and the
/// oracle-grounding protocol (decode only the max-coverage window).
pub fn evaluate(ckpt: &Checkpoint, dataset: &Dataset) -> Result<MetricsReport, RgError> {
    check_dims(ckpt, dataset)?;
    let cfg = &ckpt.config;
    let model = ckpt.model();
    let prepared = prepare(dataset, cfg)?;

    let mut merged_all = Vec::new();
    let mut windows_all = Vec::new();
    let mut oracle_preds = Vec::new();
    let mut gts = Vec::new();
    for (a, ann) in dataset.annotations.iter().enumerate() {
        let video = &dataset.videos[&ann.video_id];
        let candidates = &prepared.slices[&ann.video_id];
        let query = &dataset.queries[&ann.query_id];
        let out = run_query(&model, cfg, candidates, query, video.fps, video.duration_s())?;
        merged_all.push(out.merged);
        windows_all.push(out.ranked_windows);

        // Oracle: decode the positive window only, rank by foreground score.
        let pos = prepared.positives[a];
        let encs = model.encode_all(&candidates[pos..pos + 1], query, SampleMode::Infer, 0)?;
        let preds = model.decode(&encs[0].fused, &candidates[pos].valid)?;
        let mut absolute = to_absolute(&preds, &candidates[pos].window(video.fps), video.duration_s());
        absolute.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.moment.center_s.total_cmp(&b.moment.center_s))
        });
        oracle_preds.push(absolute);
        gts.push(ann.moment);
    }

    let mut report = MetricsReport {
        num_queries: gts.len(),
        ..MetricsReport::default()
    };
    let mut ks = cfg.eval_ks.clone();
    if !ks.contains(&cfg.top_k) {
        ks.push(cfg.top_k);
        ks.sort_unstable();
    }
    for &k in &ks {
        report.retrieval.push(RetrievalCell {
            k,
            pct: retrieval_recall_at_k(&windows_all, &gts, k),
        });
        for &theta in &cfg.eval_thetas {
            report.grounding.push(GroundingCell {
                k,
                theta,
                pct: recall_at_k_iou(&merged_all, &gts, k, theta),
            });
            report.oracle_grounding.push(GroundingCell {
                k,
                theta,
                pct: recall_at_k_iou(&oracle_preds, &gts, k, theta),
            });
        }
    }
    Ok(report)
}

/// One prediction-dump row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub query_id: String,
    pub video_id: String,
    pub rank: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub score: f64,
}

/// Ranked moment predictions for every annotated query.
pub fn predict(ckpt: &Checkpoint, dataset: &Dataset) -> Result<Vec<PredictionRecord>, RgError> {
    check_dims(ckpt, dataset)?;
    let cfg = &ckpt.config;
    let model = ckpt.model();
    let prepared = prepare(dataset, cfg)?;
    let mut records = Vec::new();
    for ann in &dataset.annotations {
        let video = &dataset.videos[&ann.video_id];
        let out = run_query(
            &model,
            cfg,
            &prepared.slices[&ann.video_id],
            &dataset.queries[&ann.query_id],
            video.fps,
            video.duration_s(),
        )?;
        for (rank, m) in out.merged.iter().enumerate() {
            let iv = m.moment.interval();
            records.push(PredictionRecord {
                query_id: ann.query_id.clone(),
                video_id: ann.video_id.clone(),
                rank: rank + 1,
                start_s: iv.start_s,
                end_s: iv.end_s,
                score: m.score,
            });
        }
    }
    Ok(records)
}

/// Sweepable hyperparameter axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    TopK,
    ProposalLengthS,
    Temperature,
    NQueries,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<SweepAxis, RgError> {
        match s {
            "top_k" => Ok(SweepAxis::TopK),
            "proposal_length_s" => Ok(SweepAxis::ProposalLengthS),
            "temperature" => Ok(SweepAxis::Temperature),
            "n_queries" => Ok(SweepAxis::NQueries),
            other => Err(RgError::Config(format!(
                "unknown sweep axis {other}; expected top_k, proposal_length_s, temperature, or n_queries"
            ))),
        }
    }

    pub fn key(&self) -> &'static str {
        match self {
            SweepAxis::TopK => "top_k",
            SweepAxis::ProposalLengthS => "proposal_length_s",
            SweepAxis::Temperature => "temperature",
            SweepAxis::NQueries => "n_queries",
        }
    }

    pub fn apply(&self, cfg: &mut TrainConfig, value: f64) {
        match self {
            SweepAxis::TopK => cfg.top_k = value.round() as usize,
            SweepAxis::ProposalLengthS => cfg.proposal_length_s = value,
            SweepAxis::Temperature => cfg.temperature = value,
            SweepAxis::NQueries => cfg.n_queries = value.round() as usize,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: String,
    pub rows: Vec<SweepRow>,
}

/// One train + evaluate cycle per axis value, all from the same seed.
pub fn sweep(
    cfg: &TrainConfig,
    axis: SweepAxis,
    values: &[f64],
    dataset: &Dataset,
) -> Result<SweepTable, RgError> {
    if values.is_empty() {
        return Err(RgError::EmptyInput("sweep values".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut run_cfg = cfg.clone();
        axis.apply(&mut run_cfg, value);
        let (ckpt, _) = train(&run_cfg, dataset)?;
        let report = evaluate(&ckpt, dataset)?;
        rows.push(SweepRow { value, report });
    }
    Ok(SweepTable {
        axis: axis.key().to_string(),
        rows,
    })
}

impl SweepTable {
    /// CSV with one row per swept value and one column per metric cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.axis.to_string());
        if let Some(first) = self.rows.first() {
            for c in &first.report.retrieval {
                out.push_str(&format!(",retrieval_r@{}", c.k));
            }
            for c in &first.report.grounding {
                out.push_str(&format!(",grounding_r{}@{}", c.k, c.theta));
            }
            for c in &first.report.oracle_grounding {
                out.push_str(&format!(",oracle_r{}@{}", c.k, c.theta));
            }
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{}", row.value));
            for c in &row.report.retrieval {
                out.push_str(&format!(",{:.4}", c.pct));
            }
            for c in &row.report.grounding {
                out.push_str(&format!(",{:.4}", c.pct));
            }
            for c in &row.report.oracle_grounding {
                out.push_str(&format!(",{:.4}", c.pct));
            }
            out.push('\n');
        }
        out
    }
}

/// Serialize step logs as JSON Lines.
pub fn logs_to_jsonl(logs: &[StepLog]) -> String {
    let mut out = String::new();
    for log in logs {
        out.push_str(&serde_json::to_string(log).unwrap());
        out.push('\n');
    }
    out
}

/// Finite-difference probe of the full batch loss for one parameter entry,
/// used by the gradient-fidelity checks. Runs the soft sampler relaxation.
pub fn batch_loss_value(
    model: &Model,
    weights: &LossWeights,
    pairs: &[BatchPair],
    n_negatives: usize,
    same_video_negatives: bool,
    seed: u64,
    step: u64,
) -> Result<f64, RgError> {
    let tape = Tape::new();
    let tp = model.params.bind(&tape);
    let (_, parts) = batch_loss(
        &tape,
        &tp,
        &model.cfg,
        weights,
        pairs,
        n_negatives,
        same_video_negatives,
        SampleMode::TrainSoft,
        seed,
        step,
    )?;
    Ok(parts.total)
}

/// Gradients of the full batch loss by parameter name (soft sampler mode).
pub fn batch_loss_grads(
    model: &Model,
    weights: &LossWeights,
    pairs: &[BatchPair],
    n_negatives: usize,
    same_video_negatives: bool,
    seed: u64,
    step: u64,
) -> Result<(f64, BTreeMap<String, Array2<f64>>), RgError> {
    let tape = Tape::new();
    let tp = model.params.bind(&tape);
    let (total, parts) = batch_loss(
        &tape,
        &tp,
        &model.cfg,
        weights,
        pairs,
        n_negatives,
        same_video_negatives,
        SampleMode::TrainSoft,
        seed,
        step,
    )?;
    let grads = tape.backward(total);
    Ok((parts.total, tp.grads(&grads)))
}

use rand::RngCore;
