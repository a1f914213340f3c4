//! Binary feature file, little-endian throughout:
//! magic `RGFT`, version `u32 = 1`, `T u32`, `D u32`, fps `f32`,
//! then `T * D` row-major `f32` values.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::RgError;

use super::FrameFeatureSequence;

const MAGIC: &[u8; 4] = b"RGFT";
const VERSION: u32 = 1;

pub fn write_feature_file(seq: &FrameFeatureSequence, path: &Path) -> Result<(), RgError> {
    if seq.features.iter().any(|x| !x.is_finite()) {
        return Err(RgError::NumericInput(format!(
            "features of video {}",
            seq.video_id
        )));
    }
    let t = seq.features.nrows();
    let d = seq.features.ncols();
    let mut buf = Vec::with_capacity(16 + t * d * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.fps as f32).to_le_bytes());
    for x in seq.features.iter() {
        buf.extend_from_slice(&(*x as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| RgError::io(path.display().to_string(), e))
}

pub fn read_feature_file(path: &Path, video_id: &str) -> Result<FrameFeatureSequence, RgError> {
    let bytes = fs::read(path).map_err(|e| RgError::io(path.display().to_string(), e))?;
    let loc = path.display().to_string();
    if bytes.len() < 20 {
        return Err(RgError::TruncatedPayload {
            path: loc,
            expected: 20,
            found: bytes.len(),
        });
    }
    if &bytes[0..4] != MAGIC {
        return Err(RgError::BadMagic {
            path: loc,
            expected: "RGFT".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(RgError::VersionMismatch {
            path: loc,
            found: version,
            supported: VERSION,
        });
    }
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let fps = f32::from_le_bytes(bytes[16..20].try_into().unwrap()) as f64;
    let expected = 20 + t * d * 4;
    if bytes.len() != expected {
        return Err(RgError::TruncatedPayload {
            path: loc,
            expected,
            found: bytes.len(),
        });
    }
    let mut values = Vec::with_capacity(t * d);
    for chunk in bytes[20..].chunks_exact(4) {
        let x = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        if !x.is_finite() {
            return Err(RgError::NumericInput(loc));
        }
        values.push(x);
    }
    if !fps.is_finite() || fps <= 0.0 {
        return Err(RgError::NumericInput(loc));
    }
    let features = Array2::from_shape_vec((t, d), values)
        .map_err(|e| RgError::Manifest(format!("bad feature shape in {loc}: {e}")))?;
    Ok(FrameFeatureSequence {
        video_id: video_id.to_string(),
        fps,
        features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::prelude::*;

    fn seq(t: usize, d: usize) -> FrameFeatureSequence {
        let mut rng = crate::nn::seeded_rng(99, &[t as u64, d as u64]);
        FrameFeatureSequence {
            video_id: "vid".into(),
            fps: 2.5,
            // Values representable in f32 so the round trip is bit exact.
            features: Array2::from_shape_fn((t, d), |_| rng.random_range(-8i32..8) as f64 * 0.25),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.rgft");
        let original = seq(7, 5);
        write_feature_file(&original, &path).unwrap();
        let loaded = read_feature_file(&path, "vid").unwrap();
        assert_eq!(loaded.features, original.features);
        assert_eq!(loaded.fps, original.fps);
    }

    #[test]
    fn corrupted_magic_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.rgft");
        write_feature_file(&seq(3, 2), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_feature_file(&path, "vid"),
            Err(RgError::BadMagic { .. })
        ));
    }

    #[test]
    fn version_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.rgft");
        write_feature_file(&seq(3, 2), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_feature_file(&path, "vid"),
            Err(RgError::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn truncated_payload_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.rgft");
        write_feature_file(&seq(3, 2), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            read_feature_file(&path, "vid"),
            Err(RgError::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.rgft");
        let mut bad = seq(2, 2);
        bad.features[[0, 0]] = f64::NAN;
        assert!(matches!(
            write_feature_file(&bad, &path),
            Err(RgError::NumericInput(_))
        ));
        // And on the read side, via a hand-corrupted payload.
        write_feature_file(&seq(2, 2), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[20..24].copy_from_slice(&f32::INFINITY.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_feature_file(&path, "vid"),
            Err(RgError::NumericInput(_))
        ));
    }
}
