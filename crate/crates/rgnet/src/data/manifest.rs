//! JSON-Lines dataset manifest: one record per entity.
//!
//! Video records carry `{video_id, feature_path, fps, duration_s}`, query
//! records `{query_id, feature_path}` or `{query_id, tokens}` with an inline
//! vector list, annotation records `{query_id, video_id, start_s, end_s}`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::RgError;
use crate::temporal::TimeInterval;

use super::{read_feature_file, Annotation, FrameFeatureSequence, QueryFeatures};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManifestRecord {
    Annotation {
        query_id: String,
        video_id: String,
        start_s: f64,
        end_s: f64,
    },
    Video {
        video_id: String,
        feature_path: String,
        fps: f64,
        duration_s: f64,
    },
    QueryFile {
        query_id: String,
        feature_path: String,
    },
    QueryInline {
        query_id: String,
        tokens: Vec<Vec<f64>>,
    },
}

/// Parsed manifest with ids cross-referenced but features not yet loaded.
#[derive(Debug, Clone, Default)]
pub struct DatasetIndex {
    pub videos: Vec<(String, String, f64, f64)>, // id, path, fps, duration
    pub query_files: Vec<(String, String)>,
    pub query_inline: Vec<(String, Vec<Vec<f64>>)>,
    pub annotations: Vec<Annotation>,
}

impl DatasetIndex {
    pub fn num_videos(&self) -> usize {
        self.videos.len()
    }

    pub fn num_queries(&self) -> usize {
        self.query_files.len() + self.query_inline.len()
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetIndex, RgError> {
    let text = fs::read_to_string(path).map_err(|e| RgError::io(path.display().to_string(), e))?;
    let mut index = DatasetIndex::default();
    let mut video_ids = BTreeSet::new();
    let mut query_ids = BTreeSet::new();

    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(line).map_err(|e| {
            RgError::Manifest(format!(
                "{}:{}: unrecognized record: {e}",
                path.display(),
                lineno + 1
            ))
        })?;
        match record {
            ManifestRecord::Video {
                video_id,
                feature_path,
                fps,
                duration_s,
            } => {
                if !video_ids.insert(video_id.clone()) {
                    return Err(RgError::DuplicateId(format!("video_id {video_id}")));
                }
                index.videos.push((video_id, feature_path, fps, duration_s));
            }
            ManifestRecord::QueryFile {
                query_id,
                feature_path,
            } => {
                if !query_ids.insert(query_id.clone()) {
                    return Err(RgError::DuplicateId(format!("query_id {query_id}")));
                }
                index.query_files.push((query_id, feature_path));
            }
            ManifestRecord::QueryInline { query_id, tokens } => {
                if !query_ids.insert(query_id.clone()) {
                    return Err(RgError::DuplicateId(format!("query_id {query_id}")));
                }
                index.query_inline.push((query_id, tokens));
            }
            ManifestRecord::Annotation {
                query_id,
                video_id,
                start_s,
                end_s,
            } => {
                let interval = TimeInterval::new(start_s, end_s)?;
                index.annotations.push(Annotation {
                    query_id,
                    video_id,
                    moment: interval.to_moment(),
                });
            }
        }
    }

    for ann in &index.annotations {
        if !video_ids.contains(&ann.video_id) {
            return Err(RgError::DanglingReference(format!(
                "annotation for query {} references unknown video_id {}",
                ann.query_id, ann.video_id
            )));
        }
        if !query_ids.contains(&ann.query_id) {
            return Err(RgError::DanglingReference(format!(
                "annotation references unknown query_id {}",
                ann.query_id
            )));
        }
    }
    Ok(index)
}

pub fn save_manifest(records: &[ManifestRecord], path: &Path) -> Result<(), RgError> {
    let mut file =
        fs::File::create(path).map_err(|e| RgError::io(path.display().to_string(), e))?;
    for record in records {
        let line = serde_json::to_string(record)?;
        writeln!(file, "{line}").map_err(|e| RgError::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Fully loaded dataset: features in memory, annotations validated.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub videos: BTreeMap<String, FrameFeatureSequence>,
    pub queries: BTreeMap<String, QueryFeatures>,
    pub annotations: Vec<Annotation>,
}

impl Dataset {
    /// Load a manifest and every feature file it references. Feature paths
    /// resolve relative to the manifest's directory.
    pub fn load(manifest_path: &Path) -> Result<Dataset, RgError> {
        let index = load_manifest(manifest_path)?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let mut ds = Dataset::default();
        for (id, rel, fps, duration) in &index.videos {
            let seq = read_feature_file(&base.join(rel), id)?;
            if (seq.fps - fps).abs() > 1e-3 {
                return Err(RgError::Manifest(format!(
                    "video {id}: manifest fps {fps} disagrees with feature file fps {}",
                    seq.fps
                )));
            }
            if (seq.duration_s() - duration).abs() > 0.5 + 1.0 / seq.fps {
                return Err(RgError::Manifest(format!(
                    "video {id}: manifest duration {duration}s disagrees with {} frames at {} fps",
                    seq.num_frames(),
                    seq.fps
                )));
            }
            ds.videos.insert(id.clone(), seq);
        }
        for (id, rel) in &index.query_files {
            let seq = read_feature_file(&base.join(rel), id)?;
            ds.queries.insert(
                id.clone(),
                QueryFeatures {
                    query_id: id.clone(),
                    tokens: seq.features,
                },
            );
        }
        for (id, tokens) in &index.query_inline {
            let n = tokens.len();
            if n == 0 {
                return Err(RgError::EmptyInput(format!("query {id} has no tokens")));
            }
            let d = tokens[0].len();
            let mut arr = Array2::zeros((n, d));
            for (r, row) in tokens.iter().enumerate() {
                if row.len() != d {
                    return Err(RgError::Manifest(format!(
                        "query {id}: ragged token matrix"
                    )));
                }
                for (c, &x) in row.iter().enumerate() {
                    arr[[r, c]] = x;
                }
            }
            ds.queries.insert(
                id.clone(),
                QueryFeatures {
                    query_id: id.clone(),
                    tokens: arr,
                },
            );
        }
        // Annotation slack: the moment must lie within the video timeline.
        for ann in &index.annotations {
            let video = &ds.videos[&ann.video_id];
            let iv = ann.moment.interval();
            if iv.start_s < -0.5 || iv.end_s > video.duration_s() + 0.5 {
                return Err(RgError::DegenerateAnnotation(format!(
                    "annotation for query {} spans [{:.2}, {:.2}]s outside video {} ({:.2}s)",
                    ann.query_id,
                    iv.start_s,
                    iv.end_s,
                    ann.video_id,
                    video.duration_s()
                )));
            }
        }
        ds.annotations = index.annotations;
        Ok(ds)
    }

    pub fn frame_dim(&self) -> Option<usize> {
        self.videos.values().next().map(|v| v.features.ncols())
    }

    pub fn token_dim(&self) -> Option<usize> {
        self.queries.values().next().map(|q| q.tokens.ncols())
    }
}
