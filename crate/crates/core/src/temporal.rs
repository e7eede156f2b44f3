//! Frame-level temporal IoU, the combined Global tIoU score and clip-level
//! alert rates.
//!
//! Per-video IoUs are averaged uniformly over videos, iterating in ascending
//! video id order so the floating-point sum is reproducible.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{Category, VideoId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("corpus has no hazard videos")]
    NoHazardVideos,
    #[error("corpus has no non-hazard videos")]
    NoNonHazardVideos,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no mask for video {0}")]
    MissingMask(VideoId),
    #[error("mask for video {video} has {actual} frames, annotation says {expected}")]
    MaskLengthMismatch {
        video: VideoId,
        expected: usize,
        actual: usize,
    },
    #[error("duplicate annotation for video {0}")]
    DuplicateAnnotation(VideoId),
    #[error("tIoU inputs must lie in [0, 1], got positive={positive} negative={negative}")]
    OutOfRange { positive: f64, negative: f64 },
    #[error("video {0} has zero frames")]
    ZeroFrames(VideoId),
    #[error("video {video}: {which} interval [{start}, {end}] outside 0..{frame_count}")]
    IntervalOutOfRange {
        video: VideoId,
        which: &'static str,
        start: usize,
        end: usize,
        frame_count: usize,
    },
    #[error("video {video}: visible interval starts at {visible_start} after active start {active_start}")]
    OrderViolation {
        video: VideoId,
        visible_start: usize,
        active_start: usize,
    },
    #[error("hazard video {0} has no active interval")]
    MissingActiveInterval(VideoId),
    #[error("non-hazard video {0} has an active interval")]
    UnexpectedActiveInterval(VideoId),
}

/// Inclusive frame interval `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start) + 1
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.start <= frame && frame <= self.end
    }
}

impl From<[usize; 2]> for Interval {
    fn from([start, end]: [usize; 2]) -> Self {
        Self { start, end }
    }
}

impl From<Interval> for [usize; 2] {
    fn from(i: Interval) -> Self {
        [i.start, i.end]
    }
}

/// Per-frame binary prediction for one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMask {
    pub video_id: VideoId,
    pub flags: Vec<bool>,
}

impl FrameMask {
    pub fn new(video_id: VideoId, flags: Vec<bool>) -> Self {
        Self { video_id, flags }
    }

    pub fn empty(video_id: VideoId, frame_count: usize) -> Self {
        Self::new(video_id, vec![false; frame_count])
    }

    pub fn frame_count(&self) -> usize {
        self.flags.len()
    }

    pub fn any(&self) -> bool {
        self.flags.iter().any(|&f| f)
    }

    pub fn flagged_frames(&self) -> BTreeSet<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect()
    }
}

/// Ground truth for one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HazardAnnotation {
    video_id: VideoId,
    frame_count: usize,
    is_hazard: bool,
    category: Option<Category>,
    visible: Option<Interval>,
    active: Option<Interval>,
}

impl HazardAnnotation {
    pub fn new(
        video_id: VideoId,
        frame_count: usize,
        is_hazard: bool,
        category: Option<Category>,
        visible: Option<Interval>,
        active: Option<Interval>,
    ) -> Result<Self, MetricsError> {
        if frame_count == 0 {
            return Err(MetricsError::ZeroFrames(video_id));
        }
        for (which, interval) in [("visible", visible), ("active", active)] {
            if let Some(i) = interval {
                if i.start > i.end || i.end >= frame_count {
                    return Err(MetricsError::IntervalOutOfRange {
                        video: video_id,
                        which,
                        start: i.start,
                        end: i.end,
                        frame_count,
                    });
                }
            }
        }
        if let (Some(v), Some(a)) = (visible, active) {
            if v.start > a.start {
                return Err(MetricsError::OrderViolation {
                    video: video_id,
                    visible_start: v.start,
                    active_start: a.start,
                });
            }
        }
        match (is_hazard, active) {
            (true, None) => return Err(MetricsError::MissingActiveInterval(video_id)),
            (false, Some(_)) => return Err(MetricsError::UnexpectedActiveInterval(video_id)),
            _ => {}
        }
        Ok(Self {
            video_id,
            frame_count,
            is_hazard,
            category: if is_hazard { category } else { None },
            visible,
            active,
        })
    }

    /// Hazard video whose active interval is `[start, end]`.
    pub fn hazard(
        video_id: impl Into<VideoId>,
        frame_count: usize,
        category: impl Into<Category>,
        active: Interval,
    ) -> Result<Self, MetricsError> {
        Self::new(
            video_id.into(),
            frame_count,
            true,
            Some(category.into()),
            None,
            Some(active),
        )
    }

    pub fn nominal(video_id: impl Into<VideoId>, frame_count: usize) -> Result<Self, MetricsError> {
        Self::new(video_id.into(), frame_count, false, None, None, None)
    }

    pub fn video_id(&self) -> &VideoId {
        &self.video_id
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn is_hazard(&self) -> bool {
        self.is_hazard
    }

    pub fn category(&self) -> Option<&Category> {
        self.category.as_ref()
    }

    pub fn visible(&self) -> Option<Interval> {
        self.visible
    }

    pub fn active(&self) -> Option<Interval> {
        self.active
    }

    /// Ground-truth hazard flag per frame (the active interval).
    pub fn active_flags(&self) -> Vec<bool> {
        (0..self.frame_count)
            .map(|i| self.active.is_some_and(|a| a.contains(i)))
            .collect()
    }

    pub fn active_frames(&self) -> BTreeSet<usize> {
        self.active
            .map(|a| (a.start..=a.end).collect())
            .unwrap_or_default()
    }

    /// Number of ground-truth non-hazard frames.
    pub fn negative_frame_count(&self) -> usize {
        self.frame_count - self.active.map_or(0, |a| a.len())
    }
}

/// `|a ∩ b| / |a ∪ b|`, with two empty sets counting as perfect agreement.
pub fn frame_iou(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    iou_from_counts(inter, union)
}

pub fn iou_from_counts(intersection: usize, union: usize) -> f64 {
    if union == 0 {
        1.0
    } else {
        intersection as f64 / union as f64
    }
}

/// IoU of predicted-positive frames against the active interval.
pub fn positive_iou(predicted: &[bool], truth: &[bool]) -> f64 {
    let (inter, union) = predicted
        .iter()
        .zip(truth)
        .fold((0, 0), |(i, u), (&p, &t)| (i + (p && t) as usize, u + (p || t) as usize));
    iou_from_counts(inter, union)
}

/// IoU of predicted-negative frames against ground-truth non-hazard frames.
pub fn negative_iou(predicted: &[bool], truth: &[bool]) -> f64 {
    let (inter, union) = predicted
        .iter()
        .zip(truth)
        .fold((0, 0), |(i, u), (&p, &t)| (i + (!p && !t) as usize, u + (!p || !t) as usize));
    iou_from_counts(inter, union)
}

/// Combined score: one minus the normalized distance of `(p, n)` from `(1, 1)`.
pub fn global_tiou(positive: f64, negative: f64) -> Result<f64, MetricsError> {
    let in_range = |x: f64| (0.0..=1.0).contains(&x);
    if !in_range(positive) || !in_range(negative) {
        return Err(MetricsError::OutOfRange { positive, negative });
    }
    let dp = 1.0 - positive;
    let dn = 1.0 - negative;
    Ok(1.0 - (dp * dp + dn * dn).sqrt() / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoContribution {
    pub video_id: VideoId,
    /// Present for hazard videos only.
    pub positive_iou: Option<f64>,
    pub negative_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiouReport {
    pub positive_tiou: f64,
    pub negative_tiou: f64,
    pub global_tiou: f64,
    pub per_video: Vec<VideoContribution>,
}

/// Annotations sorted by video id, with a mask for each.
fn paired<'a>(
    masks: &'a BTreeMap<VideoId, FrameMask>,
    gts: &'a [HazardAnnotation],
) -> Result<Vec<(&'a HazardAnnotation, &'a FrameMask)>, MetricsError> {
    let mut sorted: Vec<&HazardAnnotation> = gts.iter().collect();
    sorted.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    for w in sorted.windows(2) {
        if w[0].video_id == w[1].video_id {
            return Err(MetricsError::DuplicateAnnotation(w[0].video_id.clone()));
        }
    }
    sorted
        .into_iter()
        .map(|gt| {
            let mask = masks
                .get(&gt.video_id)
                .ok_or_else(|| MetricsError::MissingMask(gt.video_id.clone()))?;
            if mask.frame_count() != gt.frame_count {
                return Err(MetricsError::MaskLengthMismatch {
                    video: gt.video_id.clone(),
                    expected: gt.frame_count,
                    actual: mask.frame_count(),
                });
            }
            Ok((gt, mask))
        })
        .collect()
}

/// Sequential left-to-right mean. The calibration sweep uses the same
/// summation so its scores are bit-identical to a re-evaluation.
pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc + v) / values.len() as f64
}

fn contributions(
    pairs: &[(&HazardAnnotation, &FrameMask)],
) -> Vec<VideoContribution> {
    pairs
        .iter()
        .map(|(gt, mask)| {
            let truth = gt.active_flags();
            VideoContribution {
                video_id: gt.video_id.clone(),
                positive_iou: gt.is_hazard.then(|| positive_iou(&mask.flags, &truth)),
                negative_iou: negative_iou(&mask.flags, &truth),
            }
        })
        .collect()
}

pub fn positive_tiou(
    masks: &BTreeMap<VideoId, FrameMask>,
    gts: &[HazardAnnotation],
) -> Result<f64, MetricsError> {
    let hazards: Vec<HazardAnnotation> = gts.iter().filter(|g| g.is_hazard).cloned().collect();
    if hazards.is_empty() {
        return Err(MetricsError::NoHazardVideos);
    }
    let pairs = paired(masks, &hazards)?;
    let ious: Vec<f64> = contributions(&pairs)
        .into_iter()
        .filter_map(|c| c.positive_iou)
        .collect();
    Ok(mean(&ious))
}

pub fn negative_tiou(
    masks: &BTreeMap<VideoId, FrameMask>,
    gts: &[HazardAnnotation],
) -> Result<f64, MetricsError> {
    if gts.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let pairs = paired(masks, gts)?;
    let ious: Vec<f64> = contributions(&pairs).into_iter().map(|c| c.negative_iou).collect();
    Ok(mean(&ious))
}

/// Positive, negative and global tIoU with per-video contributions.
pub fn tiou_report(
    masks: &BTreeMap<VideoId, FrameMask>,
    gts: &[HazardAnnotation],
) -> Result<TiouReport, MetricsError> {
    if gts.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let pairs = paired(masks, gts)?;
    let per_video = contributions(&pairs);
    report_from_contributions(per_video)
}

pub(crate) fn report_from_contributions(
    per_video: Vec<VideoContribution>,
) -> Result<TiouReport, MetricsError> {
    let positives: Vec<f64> = per_video.iter().filter_map(|c| c.positive_iou).collect();
    if positives.is_empty() {
        return Err(MetricsError::NoHazardVideos);
    }
    let negatives: Vec<f64> = per_video.iter().map(|c| c.negative_iou).collect();
    let positive_tiou = mean(&positives);
    let negative_tiou = mean(&negatives);
    Ok(TiouReport {
        positive_tiou,
        negative_tiou,
        global_tiou: global_tiou(positive_tiou, negative_tiou)?,
        per_video,
    })
}

/// Fraction of hazard videos with at least one flagged frame.
pub fn video_tpr(
    masks: &BTreeMap<VideoId, FrameMask>,
    gts: &[HazardAnnotation],
) -> Result<f64, MetricsError> {
    let hazards: Vec<HazardAnnotation> = gts.iter().filter(|g| g.is_hazard).cloned().collect();
    if hazards.is_empty() {
        return Err(MetricsError::NoHazardVideos);
    }
    let pairs = paired(masks, &hazards)?;
    let hits = pairs.iter().filter(|(_, m)| m.any()).count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// Fraction of non-hazard videos with no flagged frame.
pub fn video_tnr(
    masks: &BTreeMap<VideoId, FrameMask>,
    gts: &[HazardAnnotation],
) -> Result<f64, MetricsError> {
    let nominal: Vec<HazardAnnotation> = gts.iter().filter(|g| !g.is_hazard).cloned().collect();
    if nominal.is_empty() {
        return Err(MetricsError::NoNonHazardVideos);
    }
    let pairs = paired(masks, &nominal)?;
    let silent = pairs.iter().filter(|(_, m)| !m.any()).count();
    Ok(silent as f64 / pairs.len() as f64)
}
