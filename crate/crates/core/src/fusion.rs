//! Thresholding margin series into frame masks and composing category
//! detectors into a single alerting policy.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{Category, VideoId};
use crate::signal::MarginSeries;
use crate::temporal::FrameMask;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("policy {0} requires a general hazard channel")]
    MissingGeneralChannel(FusionPolicy),
    #[error("channel {category} of video {video} has {actual} frames, expected {expected}")]
    FrameCountMismatch {
        video: VideoId,
        category: Category,
        expected: usize,
        actual: usize,
    },
    #[error("channel {category} belongs to video {actual}, bank is for {expected}")]
    VideoMismatch {
        expected: VideoId,
        actual: VideoId,
        category: Category,
    },
    #[error("threshold for {0} is not finite")]
    NonFiniteThreshold(Category),
}

/// The three ways category detectors combine into one alert signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionPolicy {
    /// Any category channel fires.
    #[serde(rename = "categories")]
    CategoriesOnly,
    /// Any category channel or the general channel fires.
    #[serde(rename = "with-general")]
    CategoriesPlusGeneral,
    /// The general channel and at least one category channel fire on the same frame.
    #[serde(rename = "dual")]
    HazardGated,
}

impl FusionPolicy {
    pub const ALL: [FusionPolicy; 3] = [
        FusionPolicy::CategoriesOnly,
        FusionPolicy::CategoriesPlusGeneral,
        FusionPolicy::HazardGated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionPolicy::CategoriesOnly => "categories",
            FusionPolicy::CategoriesPlusGeneral => "with-general",
            FusionPolicy::HazardGated => "dual",
        }
    }

    pub fn requires_general(self) -> bool {
        !matches!(self, FusionPolicy::CategoriesOnly)
    }
}

impl fmt::Display for FusionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FusionPolicy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown policy {s:?} (expected categories, with-general or dual)"))
    }
}

/// Flags frames whose margin is strictly above `threshold`.
pub fn threshold_mask(series: &MarginSeries, threshold: f64) -> FrameMask {
    FrameMask::new(
        series.video_id().clone(),
        series.margins().iter().map(|&m| m > threshold).collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub series: MarginSeries,
    pub threshold: f64,
}

impl Channel {
    pub fn new(series: MarginSeries, threshold: f64) -> Self {
        Self { series, threshold }
    }

    pub fn mask(&self) -> FrameMask {
        threshold_mask(&self.series, self.threshold)
    }
}

/// Thresholded channels for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorBank {
    video_id: VideoId,
    frame_count: usize,
    categories: BTreeMap<Category, Channel>,
    general: Option<(Category, Channel)>,
}

impl DetectorBank {
    pub fn new(
        video_id: VideoId,
        frame_count: usize,
        categories: BTreeMap<Category, Channel>,
        general: Option<(Category, Channel)>,
    ) -> Result<Self, FusionError> {
        for (category, channel) in categories.iter().chain(general.iter().map(|(c, ch)| (c, ch))) {
            if !channel.threshold.is_finite() {
                return Err(FusionError::NonFiniteThreshold(category.clone()));
            }
            if channel.series.video_id() != &video_id {
                return Err(FusionError::VideoMismatch {
                    expected: video_id,
                    actual: channel.series.video_id().clone(),
                    category: category.clone(),
                });
            }
            if channel.series.frame_count() != frame_count {
                return Err(FusionError::FrameCountMismatch {
                    video: video_id,
                    category: category.clone(),
                    expected: frame_count,
                    actual: channel.series.frame_count(),
                });
            }
        }
        Ok(Self {
            video_id,
            frame_count,
            categories,
            general,
        })
    }

    pub fn video_id(&self) -> &VideoId {
        &self.video_id
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn categories(&self) -> &BTreeMap<Category, Channel> {
        &self.categories
    }

    pub fn general(&self) -> Option<&(Category, Channel)> {
        self.general.as_ref()
    }
}

/// Per-frame composition of the bank's channels under `policy`.
pub fn fuse(bank: &DetectorBank, policy: FusionPolicy) -> Result<FrameMask, FusionError> {
    let general = match (&bank.general, policy.requires_general()) {
        (Some((_, ch)), true) => Some(ch.mask()),
        (None, true) => return Err(FusionError::MissingGeneralChannel(policy)),
        (_, false) => None,
    };
    let mut any_category = vec![false; bank.frame_count];
    for channel in bank.categories.values() {
        for (acc, flag) in any_category.iter_mut().zip(channel.mask().flags) {
            *acc |= flag;
        }
    }
    let flags = match (policy, general) {
        (FusionPolicy::CategoriesOnly, _) => any_category,
        (FusionPolicy::CategoriesPlusGeneral, Some(g)) => {
            any_category.iter().zip(&g.flags).map(|(&c, &g)| c || g).collect()
        }
        (FusionPolicy::HazardGated, Some(g)) => {
            any_category.iter().zip(&g.flags).map(|(&c, &g)| c && g).collect()
        }
        (_, None) => unreachable!("general channel checked above"),
    };
    Ok(FrameMask::new(bank.video_id.clone(), flags))
}

/// A maximal run of flagged frames, inclusive on both ends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertSegment {
    pub video_id: VideoId,
    pub start_frame: usize,
    pub end_frame: usize,
    pub policy: FusionPolicy,
}

impl AlertSegment {
    pub fn frame_len(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }
}

pub fn extract_segments(mask: &FrameMask, policy: FusionPolicy) -> Vec<AlertSegment> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &flag) in mask.flags.iter().enumerate() {
        match (flag, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(segment(mask, s, i - 1, policy));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(segment(mask, s, mask.flags.len() - 1, policy));
    }
    out
}

fn segment(mask: &FrameMask, start: usize, end: usize, policy: FusionPolicy) -> AlertSegment {
    AlertSegment {
        video_id: mask.video_id.clone(),
        start_frame: start,
        end_frame: end,
        policy,
    }
}

/// Drop segments shorter than `min_frames`. `min_frames <= 1` keeps all.
pub fn filter_short_segments(segments: Vec<AlertSegment>, min_frames: usize) -> Vec<AlertSegment> {
    segments
        .into_iter()
        .filter(|s| s.frame_len() >= min_frames)
        .collect()
}

/// Paint segments back onto an all-false mask of `frame_count` frames.
/// Frames beyond the mask are ignored.
pub fn rasterize(video_id: &VideoId, segments: &[AlertSegment], frame_count: usize) -> FrameMask {
    let mut flags = vec![false; frame_count];
    for s in segments.iter().filter(|s| &s.video_id == video_id) {
        for flag in flags.iter_mut().take(s.end_frame + 1).skip(s.start_frame) {
            *flag = true;
        }
    }
    FrameMask::new(video_id.clone(), flags)
}
