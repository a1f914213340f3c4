//! Synthetic dataset generator.
//!
//! Stands in for frozen feature extractors at desk scale: each (video, query)
//! pair gets a random unit-norm query direction, planted additively into the
//! in-moment frames on top of Gaussian noise. Everything is derived from the
//! seed, so runs are bit-reproducible and per-video generation is order-free.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::RgError;
use crate::nn::seeded_rng;
use crate::temporal::Moment;

use super::{Annotation, FrameFeatureSequence, QueryFeatures};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub num_videos: usize,
    pub frames_per_video: usize,
    pub fps: f64,
    pub d_f: usize,
    pub d_w: usize,
    /// Tokens per query.
    pub n_tokens: usize,
    pub moment_width_min_s: f64,
    pub moment_width_max_s: f64,
    pub signal_strength: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_videos: 16,
            frames_per_video: 256,
            fps: 1.0,
            d_f: 32,
            d_w: 32,
            n_tokens: 4,
            moment_width_min_s: 4.0,
            moment_width_max_s: 8.0,
            signal_strength: 5.0,
            noise_scale: 1.0,
            seed: 17,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), RgError> {
        if self.num_videos == 0 || self.frames_per_video == 0 {
            return Err(RgError::Config("num_videos/frames_per_video must be positive".into()));
        }
        if self.signal_strength < 0.0 {
            return Err(RgError::Config("signal_strength must be >= 0".into()));
        }
        if self.moment_width_min_s <= 0.0 || self.moment_width_max_s < self.moment_width_min_s {
            return Err(RgError::Config("bad moment width range".into()));
        }
        if self.moment_width_max_s >= self.frames_per_video as f64 / self.fps {
            return Err(RgError::Config(
                "moment width must be smaller than the video".into(),
            ));
        }
        Ok(())
    }
}

/// Worker cap for data generation, from `RGNET_NUM_WORKERS` (default 1).
pub fn num_workers() -> usize {
    std::env::var("RGNET_NUM_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// One query per video; the in-moment frames carry the query direction.
///
/// Each video draws from its own `(seed, index)`-derived stream, so the
/// output is identical no matter how many workers run.
pub fn generate_synthetic_dataset(
    cfg: &SyntheticConfig,
) -> Result<(Vec<FrameFeatureSequence>, Vec<QueryFeatures>, Vec<Annotation>), RgError> {
    cfg.validate()?;
    // Fixed projection from query space to frame space, shared by all pairs.
    let projection = random_projection(cfg.seed, cfg.d_w, cfg.d_f);

    let workers = num_workers().min(cfg.num_videos.max(1));
    let pairs: Vec<(FrameFeatureSequence, QueryFeatures, Annotation)> = if workers <= 1 {
        (0..cfg.num_videos)
            .map(|v| generate_pair(cfg, &projection, v))
            .collect()
    } else {
        let mut slots: Vec<Option<(FrameFeatureSequence, QueryFeatures, Annotation)>> =
            (0..cfg.num_videos).map(|_| None).collect();
        std::thread::scope(|scope| {
            for (w, chunk) in slots.chunks_mut(cfg.num_videos.div_ceil(workers)).enumerate() {
                let projection = &projection;
                let base = w * cfg.num_videos.div_ceil(workers);
                scope.spawn(move || {
                    for (off, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(generate_pair(cfg, projection, base + off));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.unwrap()).collect()
    };

    let mut videos = Vec::with_capacity(cfg.num_videos);
    let mut queries = Vec::with_capacity(cfg.num_videos);
    let mut annotations = Vec::with_capacity(cfg.num_videos);
    for (video, query, ann) in pairs {
        videos.push(video);
        queries.push(query);
        annotations.push(ann);
    }
    Ok((videos, queries, annotations))
}

fn random_projection(seed: u64, d_w: usize, d_f: usize) -> Array2<f64> {
    if d_w == d_f {
        return Array2::eye(d_w);
    }
    let mut rng = seeded_rng(seed, &[0xB0]);
    let normal: Normal<f64> = Normal::new(0.0, 1.0 / (d_w as f64).sqrt()).unwrap();
    Array2::from_shape_fn((d_w, d_f), |_| normal.sample(&mut rng))
}

fn generate_pair(
    cfg: &SyntheticConfig,
    projection: &Array2<f64>,
    v: usize,
) -> (FrameFeatureSequence, QueryFeatures, Annotation) {
    let mut rng = seeded_rng(cfg.seed, &[1, v as u64]);
    let normal: Normal<f64> = Normal::new(0.0, 1.0).unwrap();

    // Unit-norm query direction in word space.
    let mut direction = Array1::from_shape_fn(cfg.d_w, |_| normal.sample(&mut rng));
    let norm = direction.dot(&direction).sqrt().max(1e-12);
    direction.mapv_inplace(|x| x / norm);
    let frame_direction = direction.dot(projection);

    // Plant one moment inside the video.
    let duration = cfg.frames_per_video as f64 / cfg.fps;
    let width = rng.random_range(cfg.moment_width_min_s..=cfg.moment_width_max_s);
    let start = rng.random_range(0.0..(duration - width));
    let moment = Moment {
        center_s: start + width / 2.0,
        width_s: width,
    };

    let mut features = Array2::zeros((cfg.frames_per_video, cfg.d_f));
    for j in 0..cfg.frames_per_video {
        let midpoint = (j as f64 + 0.5) / cfg.fps;
        let in_moment = midpoint >= start && midpoint < start + width;
        for c in 0..cfg.d_f {
            let noise = normal.sample(&mut rng) * cfg.noise_scale;
            features[[j, c]] = if in_moment {
                cfg.signal_strength * frame_direction[c] + noise
            } else {
                noise
            };
        }
    }

    // Per-token noise scaled by 1/sqrt(D_w) so the noise vector's norm is
    // noise_scale, matching the frame-side corruption level.
    let token_sigma = cfg.noise_scale / (cfg.d_w as f64).sqrt();
    let mut tokens = Array2::zeros((cfg.n_tokens, cfg.d_w));
    for r in 0..cfg.n_tokens {
        for c in 0..cfg.d_w {
            tokens[[r, c]] = direction[c] + normal.sample(&mut rng) * token_sigma;
        }
    }

    let video_id = format!("v{v:04}");
    let query_id = format!("q{v:04}");
    (
        FrameFeatureSequence {
            video_id: video_id.clone(),
            fps: cfg.fps,
            features,
        },
        QueryFeatures {
            query_id: query_id.clone(),
            tokens,
        },
        Annotation {
            query_id,
            video_id,
            moment,
        },
    )
}
