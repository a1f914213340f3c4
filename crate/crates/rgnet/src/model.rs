//! Model assembly: configuration, parameter initialization, and plain-value
//! forward helpers shared by the trainer, the evaluator, and the CLI.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid_f;
use crate::data::{ProposalCandidate, QueryFeatures};
use crate::decoder::{decode_moments, ProposalPredictions};
use crate::encoder::{encode_proposals, EncodedProposal, SampleMode};
use crate::error::RgError;
use crate::nn::{init_linear, scaled_uniform, seeded_rng, ParamStore};

/// Architecture and forward-pass switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    /// Frame feature dimension (from the dataset).
    pub d_f: usize,
    /// Word feature dimension (from the dataset).
    pub d_w: usize,
    pub n_queries: usize,
    pub n_decoder_layers: usize,
    /// Attention heads; the model width is partitioned across them.
    pub n_heads: usize,
    /// Gumbel-softmax temperature.
    pub temperature: f64,
    /// Scale attention logits by `1/sqrt(D)`. Off reproduces the equations
    /// verbatim; unit tests rely on that.
    pub scale_logits: bool,
    /// Add layer norm + feed-forward after each attention. Off keeps the
    /// residual-only equation-literal blocks.
    pub standard_blocks: bool,
    /// Feed the sampler raw frame features instead of the text-conditioned
    /// ones.
    pub sampler_on_raw_frames: bool,
    /// Add sinusoidal positions to frame features before cross-attention.
    pub use_pos_encoding: bool,
    /// Share the retrieval scoring layer with the contrastive projection,
    /// which is what gives the scorer a training signal.
    pub tie_retrieval_contrastive: bool,
    /// Hidden width of the feed-forward blocks in standard mode.
    pub ffn_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            d_f: 32,
            d_w: 32,
            n_queries: 5,
            n_decoder_layers: 2,
            n_heads: 1,
            temperature: 0.3,
            scale_logits: true,
            standard_blocks: false,
            sampler_on_raw_frames: false,
            use_pos_encoding: true,
            tie_retrieval_contrastive: true,
            ffn_hidden: 128,
        }
    }
}

/// Parameters plus the configuration they were built for.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Xavier-uniform projections, scaled-uniform embeddings, zero biases;
    /// fully determined by `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Model {
        let mut rng = seeded_rng(seed, &[0x1A17]);
        let mut p = ParamStore::new();
        let d = cfg.d_model;

        init_linear(&mut p, &mut rng, "encoder.f_q", cfg.d_f, d);
        init_linear(&mut p, &mut rng, "encoder.f_k", cfg.d_w, d);
        init_linear(&mut p, &mut rng, "encoder.f_v", cfg.d_w, d);
        let sampler_in = if cfg.sampler_on_raw_frames { cfg.d_f } else { d };
        init_linear(&mut p, &mut rng, "encoder.sampler", sampler_in, 1);
        init_linear(&mut p, &mut rng, "encoder.ret_q", d, d);
        init_linear(&mut p, &mut rng, "encoder.ret_k", d, d);
        init_linear(&mut p, &mut rng, "encoder.ret_v", d, d);
        p.insert(
            "encoder.r_init",
            scaled_uniform(&mut rng, 1, d, 1.0 / (d as f64).sqrt()),
        );
        if cfg.standard_blocks {
            for block in ["encoder.cross", "encoder.ret"] {
                for ln in ["_ln1", "_ln2"] {
                    p.insert(format!("{block}{ln}.gamma"), Array2::ones((1, d)));
                    p.insert(format!("{block}{ln}.beta"), Array2::zeros((1, d)));
                }
                init_linear(&mut p, &mut rng, &format!("{block}_ffn.fc1"), d, cfg.ffn_hidden);
                init_linear(&mut p, &mut rng, &format!("{block}_ffn.fc2"), cfg.ffn_hidden, d);
            }
        }

        if !cfg.tie_retrieval_contrastive {
            init_linear(&mut p, &mut rng, "retrieval.f_s", d, 1);
        }
        init_linear(&mut p, &mut rng, "losses.f_r", d, d);
        init_linear(&mut p, &mut rng, "losses.f_c", d, d);
        init_linear(&mut p, &mut rng, "losses.f_cont", d, 1);

        p.insert(
            "decoder.query_emb",
            scaled_uniform(&mut rng, cfg.n_queries, d, 1.0 / (d as f64).sqrt()),
        );
        p.insert("decoder.anchors", scaled_uniform(&mut rng, cfg.n_queries, 2, 2.0));
        init_linear(&mut p, &mut rng, "decoder.anchor_proj", 2, d);
        for layer in 0..cfg.n_decoder_layers {
            let prefix = format!("decoder.l{layer}");
            init_linear(&mut p, &mut rng, &format!("{prefix}.q"), d, d);
            init_linear(&mut p, &mut rng, &format!("{prefix}.k"), d, d);
            init_linear(&mut p, &mut rng, &format!("{prefix}.v"), d, d);
            if cfg.standard_blocks {
                init_linear(&mut p, &mut rng, &format!("{prefix}.ffn.fc1"), d, cfg.ffn_hidden);
                init_linear(&mut p, &mut rng, &format!("{prefix}.ffn.fc2"), cfg.ffn_hidden, d);
            }
            init_linear(&mut p, &mut rng, &format!("{prefix}.refine"), d, 2);
        }
        init_linear(&mut p, &mut rng, "decoder.fg", d, 1);

        Model {
            cfg: cfg.clone(),
            params: p,
        }
    }

    /// Name of the retrieval scoring layer (shared with the contrastive
    /// projection when tied).
    pub fn retrieval_head(&self) -> &'static str {
        if self.cfg.tie_retrieval_contrastive {
            "losses.f_cont"
        } else {
            "retrieval.f_s"
        }
    }

    pub fn encode_all(
        &self,
        candidates: &[ProposalCandidate],
        query: &QueryFeatures,
        mode: SampleMode,
        noise_seed: u64,
    ) -> Result<Vec<EncodedProposal>, RgError> {
        encode_proposals(&self.params, &self.cfg, candidates, query, mode, noise_seed)
    }

    /// `sigmoid(f_s(R))` for one encoded proposal context.
    pub fn context_score(&self, context: &ndarray::Array1<f64>) -> f64 {
        let head = self.retrieval_head();
        let w = self.params.get(&format!("{head}.w"));
        let b = self.params.get(&format!("{head}.b"))[[0, 0]];
        sigmoid_f(context.dot(&w.column(0)) + b)
    }

    pub fn decode(
        &self,
        fused: &Array2<f64>,
        valid: &[bool],
    ) -> Result<ProposalPredictions, RgError> {
        decode_moments(&self.params, &self.cfg, fused, valid)
    }
}
