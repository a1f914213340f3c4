//! Feature/annotation containers, sliding-window slicing, per-frame
//! relevance labels, file formats, and the synthetic dataset generator.

mod feature_file;
mod manifest;
mod synthetic;

pub use feature_file::{read_feature_file, write_feature_file};
pub use manifest::{load_manifest, save_manifest, Dataset, DatasetIndex, ManifestRecord};
pub use synthetic::{generate_synthetic_dataset, SyntheticConfig};

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::RgError;
use crate::temporal::{Moment, TimeInterval};

/// Per-video matrix of frame embeddings plus fps metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureSequence {
    pub video_id: String,
    pub fps: f64,
    /// `T x D_f`, one row per frame.
    pub features: Array2<f64>,
}

impl FrameFeatureSequence {
    pub fn num_frames(&self) -> usize {
        self.features.nrows()
    }

    pub fn duration_s(&self) -> f64 {
        self.num_frames() as f64 / self.fps
    }
}

/// Tokenized query embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryFeatures {
    pub query_id: String,
    /// `N x D_w`, one row per token.
    pub tokens: Array2<f64>,
}

/// One ground-truth (query, video, moment) triple, in absolute video seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub query_id: String,
    pub video_id: String,
    pub moment: Moment,
}

/// One fixed-length sliding-window slice of a video.
///
/// Frames past the end of the video are zero-padded with `valid = false`
/// so that every window keeps the exact stride alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalCandidate {
    pub index: usize,
    pub start_frame: usize,
    /// `L_c x D_f`.
    pub frames: Array2<f64>,
    pub valid: Vec<bool>,
}

impl ProposalCandidate {
    pub fn len_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Full window span in seconds, padding included.
    pub fn window(&self, fps: f64) -> TimeInterval {
        TimeInterval {
            start_s: self.start_frame as f64 / fps,
            end_s: (self.start_frame + self.len_frames()) as f64 / fps,
        }
    }
}

/// Slice a video into windows of `l_c_frames` frames at stride `l_c_frames/2`.
///
/// Window starts are every multiple of the stride below `T`; the tail windows
/// are zero-padded. A video no longer than one window yields a single window,
/// since further stride positions would add only overlap and padding.
pub fn slice_proposals(
    video: &FrameFeatureSequence,
    l_c_frames: usize,
) -> Result<Vec<ProposalCandidate>, RgError> {
    if l_c_frames < 2 || l_c_frames % 2 != 0 {
        return Err(RgError::Config(format!(
            "proposal length must be an even frame count >= 2, got {l_c_frames}"
        )));
    }
    let t = video.num_frames();
    if t == 0 {
        return Err(RgError::EmptyInput(format!(
            "video {} has no frames",
            video.video_id
        )));
    }
    let d = video.features.ncols();
    let stride = l_c_frames / 2;
    let starts: Vec<usize> = if t <= l_c_frames {
        vec![0]
    } else {
        (0..).map(|i| i * stride).take_while(|&s| s < t).collect()
    };

    let mut out = Vec::with_capacity(starts.len());
    for (index, &start) in starts.iter().enumerate() {
        let mut frames = Array2::zeros((l_c_frames, d));
        let mut valid = vec![false; l_c_frames];
        let copy_end = (start + l_c_frames).min(t);
        if copy_end > start {
            frames
                .slice_mut(s![..copy_end - start, ..])
                .assign(&video.features.slice(s![start..copy_end, ..]));
            for v in valid.iter_mut().take(copy_end - start) {
                *v = true;
            }
        }
        out.push(ProposalCandidate {
            index,
            start_frame: start,
            frames,
            valid,
        });
    }
    Ok(out)
}

/// Per-frame in-moment labels: frame `j` (spanning `[j/fps, (j+1)/fps)`) is
/// relevant iff its midpoint lies inside the GT interval and the frame is not
/// padding.
pub fn frame_relevance_labels(
    proposal: &ProposalCandidate,
    gt: &Annotation,
    fps: f64,
) -> Vec<bool> {
    let gt_iv = gt.moment.interval();
    (0..proposal.len_frames())
        .map(|j| {
            let midpoint = (proposal.start_frame + j) as f64 / fps + 0.5 / fps;
            proposal.valid[j] && gt_iv.contains(midpoint)
        })
        .collect()
}
