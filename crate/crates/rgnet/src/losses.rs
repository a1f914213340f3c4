//! Training objectives: frame-level sampling hinge, in-batch contrastive
//! loss over query-proposal pairs, Hungarian-matched grounding loss, and
//! their weighted combination.

use ndarray::{array, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid_f, Arr, Tape, Var};
use crate::decoder::DecodedVars;
use crate::error::RgError;
use crate::nn::{seeded_rng, TapedParams};

/// Loss-balancing coefficients and the hinge margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_l1: f64,
    pub lambda_giou: f64,
    pub lambda_ce: f64,
    pub lambda_samp: f64,
    pub lambda_cont: f64,
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_l1: 10.0,
            lambda_giou: 1.0,
            lambda_ce: 4.0,
            lambda_samp: 1.0,
            lambda_cont: 10.0,
            margin: 0.2,
        }
    }
}

/// Frame-level sampling scores: `S_c(j) = f_r(R) . f_c(P_j)`, shape `L x 1`.
pub fn sampling_score_t(tape: &Tape, tp: &TapedParams, context: Var, fused: Var) -> Var {
    let projected_context = tp.linear(context, "losses.f_r");
    let projected_content = tp.linear(fused, "losses.f_c");
    tape.matmul(projected_content, tape.transpose(projected_context))
}

/// One hinge draw: `max(0, margin + S_c(j_out) - S_c(j_in))` with the pair
/// chosen uniformly from the given index sets. Returns the loss node and
/// whether the proposal was skipped for lacking one of the frame classes.
pub fn sampling_loss_t(
    tape: &Tape,
    scores: Var,
    in_indices: &[usize],
    out_indices: &[usize],
    margin: f64,
    pair_seed: u64,
) -> (Var, bool) {
    if in_indices.is_empty() || out_indices.is_empty() {
        return (tape.scalar_leaf(0.0), true);
    }
    let mut rng = seeded_rng(pair_seed, &[0x5A]);
    let j_in = in_indices[rng.random_range(0..in_indices.len())];
    let j_out = out_indices[rng.random_range(0..out_indices.len())];
    let s_in = tape.slice_rows(scores, j_in, j_in + 1);
    let s_out = tape.slice_rows(scores, j_out, j_out + 1);
    let hinge = tape.relu(tape.add_scalar(tape.sub(s_out, s_in), margin));
    (hinge, false)
}

/// InfoNCE over a `B x B` logit matrix whose diagonal holds the positive
/// pairs: `-sum_i log(exp(l_ii) / sum_j exp(l_ij))`, log-sum-exp stabilized.
pub fn contrastive_loss_t(tape: &Tape, logits: Var) -> Var {
    let (b, b2) = tape.shape(logits);
    assert_eq!(b, b2, "contrastive logit matrix must be square");
    let lse = tape.log_sum_exp_rows(logits);
    let eye = tape.constant(Array2::from_shape_fn((b, b), |(r, c)| {
        if r == c {
            1.0
        } else {
            0.0
        }
    }));
    let diag_sum = tape.sum_all(tape.mul(logits, eye));
    tape.sub(tape.sum_all(lse), diag_sum)
}

/// Minimum-cost one-to-one assignment of targets to predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    /// `(prediction index, target index)` pairs, sorted by target.
    pub pairs: Vec<(usize, usize)>,
    /// Prediction indices left unmatched.
    pub unmatched: Vec<usize>,
}

impl Assignment {
    pub fn total_cost(&self, cost: &Arr) -> f64 {
        self.pairs.iter().map(|&(p, t)| cost[[p, t]]).sum()
    }
}

/// Exact Hungarian assignment on an `n_pred x n_target` cost matrix with
/// `n_target <= n_pred`, via shortest augmenting paths with potentials.
pub fn hungarian_match(cost: &Arr) -> Result<Assignment, RgError> {
    let n_pred = cost.nrows();
    let n_target = cost.ncols();
    if cost.iter().any(|x| !x.is_finite()) {
        return Err(RgError::NumericInput("assignment cost matrix".into()));
    }
    if n_target > n_pred {
        return Err(RgError::Config(format!(
            "{n_target} targets exceed {n_pred} predictions"
        )));
    }
    if n_target == 0 {
        return Ok(Assignment {
            pairs: vec![],
            unmatched: (0..n_pred).collect(),
        });
    }

    // Augment one target (row of the transposed problem) at a time.
    // 1-indexed arrays; `assigned[j]` is the target currently using
    // prediction j, 0 when free.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n_target + 1];
    let mut v = vec![0.0; n_pred + 1];
    let mut assigned = vec![0usize; n_pred + 1];
    let mut way = vec![0usize; n_pred + 1];
    for t in 1..=n_target {
        assigned[0] = t;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n_pred + 1];
        let mut used = vec![false; n_pred + 1];
        loop {
            used[j0] = true;
            let t0 = assigned[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n_pred {
                if used[j] {
                    continue;
                }
                let cur = cost[[j - 1, t0 - 1]] - u[t0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n_pred {
                if used[j] {
                    u[assigned[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if assigned[j0] == 0 {
                break;
            }
        }
        // Unwind the augmenting path.
        while j0 != 0 {
            let j1 = way[j0];
            assigned[j0] = assigned[j1];
            j0 = j1;
        }
    }

    let mut pairs = Vec::with_capacity(n_target);
    let mut matched_preds = vec![false; n_pred];
    for j in 1..=n_pred {
        if assigned[j] != 0 {
            pairs.push((j - 1, assigned[j] - 1));
            matched_preds[j - 1] = true;
        }
    }
    pairs.sort_by_key(|&(_, t)| t);
    let unmatched = (0..n_pred).filter(|&p| !matched_preds[p]).collect();
    Ok(Assignment { pairs, unmatched })
}

/// Weighted contributions of the grounding loss, post-lambda.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct GroundingBreakdown {
    pub l1: f64,
    pub giou: f64,
    pub ce: f64,
}

/// Hungarian-matched grounding loss over normalized `(center, width)` pairs.
///
/// Matching cost per (prediction, target):
/// `lambda_l1 * L1 + lambda_giou * (1 - gIoU) - lambda_ce * fg_prob`.
/// The loss averages L1 and `1 - gIoU` over matched pairs and takes binary
/// cross-entropy over all queries (matched = foreground).
pub fn grounding_loss_t(
    tape: &Tape,
    decoded: &DecodedVars,
    targets: &[(f64, f64)],
    weights: &LossWeights,
) -> Result<(Var, Assignment, GroundingBreakdown), RgError> {
    if targets.is_empty() {
        return Err(RgError::EmptyInput("grounding targets".into()));
    }
    for &(c, w) in targets {
        if !(0.0..=1.0).contains(&c) || !(w > 0.0 && w <= 1.0) {
            return Err(RgError::InvalidInterval(format!(
                "target ({c}, {w}) outside normalized coordinates"
            )));
        }
    }
    let moments = tape.value(decoded.moments);
    let n_q = moments.nrows();
    let n_t = targets.len();

    // Plain-value matching cost.
    let fg: Vec<f64> = {
        let l = tape.value(decoded.fg_logits);
        (0..n_q).map(|r| sigmoid_f(l[[r, 0]])).collect()
    };
    let mut cost = Arr::zeros((n_q, n_t));
    for p in 0..n_q {
        let (cp, wp) = (moments[[p, 0]], moments[[p, 1]]);
        for (t, &(ct, wt)) in targets.iter().enumerate() {
            let l1 = (cp - ct).abs() + (wp - wt).abs();
            let giou = giou_cw(cp, wp, ct, wt);
            cost[[p, t]] =
                weights.lambda_l1 * l1 + weights.lambda_giou * (1.0 - giou) - weights.lambda_ce * fg[p];
        }
    }
    let assignment = hungarian_match(&cost)?;

    // Tape-side loss over the matched pairs.
    let pred_rows: Vec<usize> = assignment.pairs.iter().map(|&(p, _)| p).collect();
    let matched = tape.gather_rows(decoded.moments, &pred_rows);
    let col_c = tape.constant(array![[1.0], [0.0]]);
    let col_w = tape.constant(array![[0.0], [1.0]]);
    let pc = tape.matmul(matched, col_c);
    let pw = tape.matmul(matched, col_w);
    let tc = tape.constant(Arr::from_shape_fn((n_t, 1), |(r, _)| {
        targets[assignment.pairs[r].1].0
    }));
    let tw = tape.constant(Arr::from_shape_fn((n_t, 1), |(r, _)| {
        targets[assignment.pairs[r].1].1
    }));

    let l1 = tape.mean_all(tape.add(
        tape.abs(tape.sub(pc, tc)),
        tape.abs(tape.sub(pw, tw)),
    ));

    // 1-D gIoU on the tape: intersection / union - gap / hull.
    let half = 0.5;
    let ps = tape.sub(pc, tape.scale(pw, half));
    let pe = tape.add(pc, tape.scale(pw, half));
    let ts = tape.sub(tc, tape.scale(tw, half));
    let te = tape.add(tc, tape.scale(tw, half));
    let inter = tape.relu(tape.sub(tape.minimum(pe, te), tape.maximum(ps, ts)));
    let union = tape.sub(tape.add(pw, tw), inter);
    let hull = tape.sub(tape.maximum(pe, te), tape.minimum(ps, ts));
    let giou = tape.sub(tape.div(inter, union), tape.div(tape.sub(hull, union), hull));
    let giou_loss = tape.mean_all(tape.add_scalar(tape.scale(giou, -1.0), 1.0));

    // BCE with logits over every query: softplus(x) - t * x, averaged.
    let fg_targets = tape.constant(Arr::from_shape_fn((n_q, 1), |(r, _)| {
        if pred_rows.contains(&r) {
            1.0
        } else {
            0.0
        }
    }));
    let bce = tape.mean_all(tape.sub(
        tape.softplus(decoded.fg_logits),
        tape.mul(fg_targets, decoded.fg_logits),
    ));

    let weighted_l1 = tape.scale(l1, weights.lambda_l1);
    let weighted_giou = tape.scale(giou_loss, weights.lambda_giou);
    let weighted_ce = tape.scale(bce, weights.lambda_ce);
    let total = tape.add(tape.add(weighted_l1, weighted_giou), weighted_ce);
    let breakdown = GroundingBreakdown {
        l1: tape.scalar(weighted_l1),
        giou: tape.scalar(weighted_giou),
        ce: tape.scalar(weighted_ce),
    };
    Ok((total, assignment, breakdown))
}

fn giou_cw(c1: f64, w1: f64, c2: f64, w2: f64) -> f64 {
    let a = crate::temporal::TimeInterval {
        start_s: c1 - w1 / 2.0,
        end_s: c1 + w1 / 2.0,
    };
    let b = crate::temporal::TimeInterval {
        start_s: c2 - w2 / 2.0,
        end_s: c2 + w2 / 2.0,
    };
    crate::temporal::interval_giou(&a, &b)
}

/// `lambda_samp * L_samp + lambda_cont * L_cont + L_g`.
pub fn total_loss_t(
    tape: &Tape,
    sampling: Var,
    contrastive: Var,
    grounding: Var,
    weights: &LossWeights,
) -> Var {
    let weighted = tape.add(
        tape.scale(sampling, weights.lambda_samp),
        tape.scale(contrastive, weights.lambda_cont),
    );
    tape.add(weighted, grounding)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelConfig};
    use ndarray::Array2;
    use rand::Rng;

    fn tiny_model() -> Model {
        Model::init(
            &ModelConfig {
                d_model: 4,
                d_f: 3,
                d_w: 3,
                n_queries: 3,
                ..ModelConfig::default()
            },
            2,
        )
    }

    #[test]
    fn sampling_score_zero_projection_gives_zero() {
        let model = tiny_model();
        let mut params = model.params.clone();
        params.get_mut("losses.f_r.w").mapv_inplace(|_| 0.0);
        params.get_mut("losses.f_r.b").mapv_inplace(|_| 0.0);
        let tape = Tape::new();
        let tp = params.bind(&tape);
        let ctx = tape.constant(Array2::ones((1, 4)));
        let fused = tape.constant(Array2::ones((5, 4)));
        let s = sampling_score_t(&tape, &tp, ctx, fused);
        assert!(tape.value(s).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sampling_score_identity_projection_is_dot_product() {
        let model = tiny_model();
        let mut params = model.params.clone();
        for name in ["losses.f_r", "losses.f_c"] {
            *params.get_mut(&format!("{name}.w")) = Array2::eye(4);
            params.get_mut(&format!("{name}.b")).mapv_inplace(|_| 0.0);
        }
        let tape = Tape::new();
        let tp = params.bind(&tape);
        // R = e1, P rows = e1 and e2 -> scores [1, 0].
        let ctx = tape.constant(Array2::from_shape_fn((1, 4), |(_, c)| {
            if c == 0 {
                1.0
            } else {
                0.0
            }
        }));
        let fused = tape.constant(Array2::from_shape_fn((2, 4), |(r, c)| {
            if c == r {
                1.0
            } else {
                0.0
            }
        }));
        let s = tape.value(sampling_score_t(&tape, &tp, ctx, fused));
        assert_eq!(s[[0, 0]], 1.0);
        assert_eq!(s[[1, 0]], 0.0);
    }

    #[test]
    fn sampling_score_matches_dot_oracle() {
        let model = tiny_model();
        let tape = Tape::new();
        let tp = model.params.bind(&tape);
        let mut rng = seeded_rng(4, &[1]);
        let ctx_v = Array2::from_shape_fn((1, 4), |_| rng.random_range(-1.0..1.0));
        let fused_v = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));
        let ctx = tape.constant(ctx_v.clone());
        let fused = tape.constant(fused_v.clone());
        let s = tape.value(sampling_score_t(&tape, &tp, ctx, fused));

        let p = &model.params;
        let fr = ctx_v.dot(p.get("losses.f_r.w")) + &p.get("losses.f_r.b").row(0);
        let fc = fused_v.dot(p.get("losses.f_c.w")) + &p.get("losses.f_c.b").row(0);
        for j in 0..6 {
            let oracle: f64 = fc.row(j).dot(&fr.row(0));
            assert!((s[[j, 0]] - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn sampling_loss_arithmetic() {
        let tape = Tape::new();
        let scores = tape.leaf(array![[0.6], [0.3]]);
        // margin 0.2, in 0.6, out 0.3 -> max(0, -0.1) = 0.
        let (loss, skipped) = sampling_loss_t(&tape, scores, &[0], &[1], 0.2, 1);
        assert!(!skipped);
        assert_eq!(tape.scalar(loss), 0.0);

        let scores = tape.leaf(array![[0.4], [0.5]]);
        // margin 0.2, in 0.4, out 0.5 -> 0.3.
        let (loss, _) = sampling_loss_t(&tape, scores, &[0], &[1], 0.2, 1);
        assert!((tape.scalar(loss) - 0.3).abs() < 1e-12);

        // No out-of-moment frames: contributes 0, flagged skipped.
        let scores = tape.leaf(array![[0.4], [0.5]]);
        let (loss, skipped) = sampling_loss_t(&tape, scores, &[0, 1], &[], 0.2, 1);
        assert!(skipped);
        assert_eq!(tape.scalar(loss), 0.0);
    }

    #[test]
    fn contrastive_examples() {
        let tape = Tape::new();
        // B = 1: numerator equals denominator.
        let l = contrastive_loss_t(&tape, tape.leaf(array![[3.7]]));
        assert!(tape.scalar(l).abs() < 1e-12);

        // Row [2, 0, 0] with the positive first: -log(e^2 / (e^2 + 2)).
        let logits = tape.leaf(array![[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]]);
        let l = tape.scalar(contrastive_loss_t(&tape, logits));
        let row = -(2f64.exp() / (2f64.exp() + 2.0)).ln();
        assert!((row - 0.2395447662218014).abs() < 1e-12);
        assert!((l - 3.0 * row).abs() < 1e-9);

        // Row-wise constant shifts do not change the loss.
        let shifted = tape.leaf(array![[7.0, 5.0, 5.0], [1.0, 3.0, 1.0], [-2.0, -2.0, 0.0]]);
        let l2 = tape.scalar(contrastive_loss_t(&tape, shifted));
        assert!((l2 - l).abs() < 1e-9);
    }

    #[test]
    fn contrastive_is_nonnegative() {
        let tape = Tape::new();
        let mut rng = seeded_rng(8, &[2]);
        for _ in 0..20 {
            let b = rng.random_range(1..5);
            let logits = tape.leaf(Array2::from_shape_fn((b, b), |_| rng.random_range(-3.0..3.0)));
            assert!(tape.scalar(contrastive_loss_t(&tape, logits)) >= -1e-12);
        }
    }

    /// Brute force over all injective target -> prediction maps.
    fn brute_force_min(cost: &Arr) -> f64 {
        fn rec(cost: &Arr, t: usize, used: &mut Vec<bool>) -> f64 {
            if t == cost.ncols() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for p in 0..cost.nrows() {
                if !used[p] {
                    used[p] = true;
                    best = best.min(cost[[p, t]] + rec(cost, t + 1, used));
                    used[p] = false;
                }
            }
            best
        }
        rec(cost, 0, &mut vec![false; cost.nrows()])
    }

    #[test]
    fn hungarian_examples() {
        let cost = array![[1.0, 2.0], [3.0, 0.0]];
        let a = hungarian_match(&cost).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total_cost(&cost), 1.0);

        let diag0 = array![[0.0, 5.0, 5.0], [5.0, 0.0, 5.0], [5.0, 5.0, 0.0]];
        let a = hungarian_match(&diag0).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(a.total_cost(&diag0), 0.0);
        assert!(a.unmatched.is_empty());
    }

    #[test]
    fn hungarian_matches_brute_force_on_random_matrices() {
        let mut rng = seeded_rng(77, &[3]);
        for trial in 0..60 {
            let n_t = rng.random_range(1..=4);
            let n_p = rng.random_range(n_t..=5);
            let cost = Arr::from_shape_fn((n_p, n_t), |_| rng.random_range(-2.0..5.0));
            let a = hungarian_match(&cost).unwrap();
            assert_eq!(a.pairs.len(), n_t);
            let got = a.total_cost(&cost);
            let want = brute_force_min(&cost);
            assert!(
                (got - want).abs() < 1e-9,
                "trial {trial}: hungarian {got} vs brute force {want}"
            );
            // Injectivity on both sides.
            let mut ps: Vec<usize> = a.pairs.iter().map(|&(p, _)| p).collect();
            ps.sort_unstable();
            ps.dedup();
            assert_eq!(ps.len(), n_t);
        }
    }

    #[test]
    fn hungarian_rejects_non_finite_and_excess_targets() {
        let cost = array![[f64::NAN, 1.0]];
        assert!(matches!(
            hungarian_match(&cost),
            Err(RgError::NumericInput(_))
        ));
        let cost = array![[1.0, 2.0]]; // 1 prediction, 2 targets
        assert!(matches!(hungarian_match(&cost), Err(RgError::Config(_))));
    }

    fn decode_fixed(moments: Arr, fg_logits: Arr) -> (Tape, DecodedVars) {
        let tape = Tape::new();
        // Feed through inverse sigmoid so `moments` are the forward values.
        let logits = moments.mapv(|m: f64| (m / (1.0 - m)).ln());
        let m = tape.sigmoid(tape.leaf(logits));
        let f = tape.leaf(fg_logits);
        (tape, DecodedVars { moments: m, fg_logits: f })
    }

    #[test]
    fn grounding_perfect_match_is_near_zero() {
        let (tape, decoded) = decode_fixed(array![[0.5, 0.2]], array![[20.0]]);
        let weights = LossWeights::default();
        let (loss, assignment, breakdown) =
            grounding_loss_t(&tape, &decoded, &[(0.5, 0.2)], &weights).unwrap();
        assert_eq!(assignment.pairs, vec![(0, 0)]);
        assert!(breakdown.l1.abs() < 1e-9);
        assert!(breakdown.giou.abs() < 1e-9);
        // CE term: -log(sigmoid(20)) is about 2e-9, times lambda 4.
        assert!(tape.scalar(loss) < 1e-6);
    }

    #[test]
    fn grounding_matching_prefers_confident_duplicate() {
        // Two identical moment predictions, fg 0.9 vs 0.1: the matcher takes
        // the confident one (lower classification cost).
        let fg_logits = array![[2.197224577336219], [-2.197224577336219]]; // sigmoid = 0.9 / 0.1
        let (tape, decoded) = decode_fixed(array![[0.4, 0.3], [0.4, 0.3]], fg_logits);
        let weights = LossWeights::default();
        let (_, assignment, _) =
            grounding_loss_t(&tape, &decoded, &[(0.4, 0.3)], &weights).unwrap();
        assert_eq!(assignment.pairs, vec![(0, 0)]);
        assert_eq!(assignment.unmatched, vec![1]);
    }

    #[test]
    fn grounding_l1_component_scales_linearly() {
        let make = || decode_fixed(array![[0.6, 0.25], [0.2, 0.1]], array![[0.3], [-0.4]]);
        let targets = [(0.5, 0.2)];
        let (tape, decoded) = make();
        let w1 = LossWeights::default();
        let (_, _, b1) = grounding_loss_t(&tape, &decoded, &targets, &w1).unwrap();
        let (tape2, decoded2) = make();
        let w2 = LossWeights {
            lambda_l1: 20.0,
            ..w1
        };
        let (_, _, b2) = grounding_loss_t(&tape2, &decoded2, &targets, &w2).unwrap();
        assert!((b2.l1 - 2.0 * b1.l1).abs() < 1e-9);
        assert!((b2.giou - b1.giou).abs() < 1e-12);
    }

    #[test]
    fn grounding_rejects_out_of_range_targets() {
        let (tape, decoded) = decode_fixed(array![[0.5, 0.2]], array![[0.0]]);
        let weights = LossWeights::default();
        assert!(matches!(
            grounding_loss_t(&tape, &decoded, &[(1.4, 0.2)], &weights),
            Err(RgError::InvalidInterval(_))
        ));
    }

    #[test]
    fn grounding_gradients_match_finite_differences() {
        // Differentiate through moments and fg logits at a generic point.
        let weights = LossWeights::default();
        let targets = [(0.45, 0.22), (0.7, 0.1)];
        let anchor0 = array![[0.1, -0.4], [0.9, 0.3], [-0.2, 0.5]];
        let fg0 = array![[0.2], [-0.3], [0.6]];

        let loss_at = |anchors: &Arr, fg: &Arr| -> f64 {
            let tape = Tape::new();
            let m = tape.sigmoid(tape.leaf(anchors.clone()));
            let f = tape.leaf(fg.clone());
            let decoded = DecodedVars {
                moments: m,
                fg_logits: f,
            };
            let (l, _, _) = grounding_loss_t(&tape, &decoded, &targets, &weights).unwrap();
            tape.scalar(l)
        };

        let tape = Tape::new();
        let a = tape.leaf(anchor0.clone());
        let f = tape.leaf(fg0.clone());
        let decoded = DecodedVars {
            moments: tape.sigmoid(a),
            fg_logits: f,
        };
        let (l, _, _) = grounding_loss_t(&tape, &decoded, &targets, &weights).unwrap();
        let grads = tape.backward(l);

        let eps = 1e-6;
        let ga = grads.get(a).unwrap();
        for idx in 0..anchor0.len() {
            let (r, c) = (idx / 2, idx % 2);
            let mut ap = anchor0.clone();
            let mut am = anchor0.clone();
            ap[[r, c]] += eps;
            am[[r, c]] -= eps;
            let fd = (loss_at(&ap, &fg0) - loss_at(&am, &fg0)) / (2.0 * eps);
            assert!(
                (ga[[r, c]] - fd).abs() < 1e-5 * (1.0 + fd.abs()),
                "anchor grad {} vs fd {}",
                ga[[r, c]],
                fd
            );
        }
        let gf = grads.get(f).unwrap();
        for r in 0..3 {
            let mut fp = fg0.clone();
            let mut fm = fg0.clone();
            fp[[r, 0]] += eps;
            fm[[r, 0]] -= eps;
            let fd = (loss_at(&anchor0, &fp) - loss_at(&anchor0, &fm)) / (2.0 * eps);
            assert!((gf[[r, 0]] - fd).abs() < 1e-5 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn total_loss_paper_weights() {
        let tape = Tape::new();
        let w = LossWeights::default();
        let one = tape.scalar_leaf(1.0);
        let total = total_loss_t(&tape, one, one, one, &w);
        assert_eq!(tape.scalar(total), 12.0);

        let zero = tape.scalar_leaf(0.0);
        let total = total_loss_t(&tape, zero, zero, zero, &w);
        assert_eq!(tape.scalar(total), 0.0);
    }
}
