//! Interval and moment arithmetic shared by slicing, losses, and metrics.
//!
//! All temporal quantities are carried as 64-bit seconds. Frame indices only
//! appear at the I/O boundary, derived through the fps of the feature file.

use serde::{Deserialize, Serialize};

use crate::error::RgError;

/// A closed interval `[start_s, end_s]` on the video timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start_s: f64,
    pub end_s: f64,
}

impl TimeInterval {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self, RgError> {
        if !start_s.is_finite() || !end_s.is_finite() {
            return Err(RgError::InvalidInterval(format!(
                "non-finite bounds [{start_s}, {end_s}]"
            )));
        }
        if start_s > end_s {
            return Err(RgError::InvalidInterval(format!(
                "start {start_s} > end {end_s}"
            )));
        }
        Ok(Self { start_s, end_s })
    }

    pub fn length(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Center/width view of the same segment.
    pub fn to_moment(&self) -> Moment {
        Moment {
            center_s: 0.5 * (self.start_s + self.end_s),
            width_s: self.length(),
        }
    }

    pub fn intersection_length(&self, other: &TimeInterval) -> f64 {
        (self.end_s.min(other.end_s) - self.start_s.max(other.start_s)).max(0.0)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s
    }
}

/// A moment parameterized by its center and width, both in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moment {
    pub center_s: f64,
    pub width_s: f64,
}

impl Moment {
    pub fn new(center_s: f64, width_s: f64) -> Result<Self, RgError> {
        if !center_s.is_finite() || !width_s.is_finite() || width_s <= 0.0 {
            return Err(RgError::InvalidInterval(format!(
                "bad moment center={center_s} width={width_s}"
            )));
        }
        Ok(Self { center_s, width_s })
    }

    pub fn interval(&self) -> TimeInterval {
        moment_to_interval(self)
    }
}

/// A moment with a confidence score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredMoment {
    pub moment: Moment,
    pub score: f64,
}

/// `center ± width/2`.
pub fn moment_to_interval(m: &Moment) -> TimeInterval {
    TimeInterval {
        start_s: m.center_s - 0.5 * m.width_s,
        end_s: m.center_s + 0.5 * m.width_s,
    }
}

/// Intersection over union of two intervals. Zero-length unions score 0.
pub fn interval_iou(a: &TimeInterval, b: &TimeInterval) -> f64 {
    let inter = a.intersection_length(b);
    let union = a.length() + b.length() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// 1-D generalized IoU: `IoU - (hull - union) / hull` where `hull` is the
/// length of the smallest interval covering both inputs.
///
/// Equals IoU when the hull has no gap; reaches -1 in the far-disjoint limit.
/// Two zero-length intervals at the same point return 1 by convention.
pub fn interval_giou(a: &TimeInterval, b: &TimeInterval) -> f64 {
    let hull = a.end_s.max(b.end_s) - a.start_s.min(b.start_s);
    if hull <= 0.0 {
        // Both degenerate at the same point.
        return 1.0;
    }
    let inter = a.intersection_length(b);
    let union = a.length() + b.length() - inter;
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    iou - (hull - union) / hull
}

/// Fraction of `moment` covered by `window`.
pub fn coverage_fraction(moment: &TimeInterval, window: &TimeInterval) -> Result<f64, RgError> {
    if moment.length() <= 0.0 {
        return Err(RgError::DegenerateAnnotation(format!(
            "zero-length moment at {}s",
            moment.start_s
        )));
    }
    Ok(moment.intersection_length(window) / moment.length())
}
