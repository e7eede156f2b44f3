//! Per-category threshold selection by exhaustive grid sweep.
//!
//! The grid starts at the smallest observed margin and advances by a fixed
//! step until it covers the largest. A frame is flagged when its margin is
//! strictly greater than the threshold. The selected threshold maximizes
//! Global tIoU, and among equal scores the lowest grid value wins.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, Split, VideoRecord};
use crate::ids::{Category, VideoId};
use crate::signal::{MarginSeries, PromptSet};
use crate::temporal::{
    self, global_tiou, iou_from_counts, HazardAnnotation, MetricsError, TiouReport,
    VideoContribution,
};

pub const DEFAULT_STEP: f64 = 0.001;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("sweep step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("insufficient corpus: {0}")]
    InsufficientCorpus(String),
    #[error("no margin values to sweep")]
    EmptySignal,
    #[error("no margin series for video {video} in category {category}")]
    MissingSignal { video: VideoId, category: Category },
    #[error("no annotation for video {0}")]
    MissingAnnotation(VideoId),
    #[error("duplicate margin series for video {0}")]
    DuplicateSeries(VideoId),
    #[error("video {video}: series has {actual} frames, annotation says {expected}")]
    LengthMismatch {
        video: VideoId,
        expected: usize,
        actual: usize,
    },
    #[error("no labeled hazard videos for categories: {}", join(.0))]
    MissingCategorySubset(Vec<Category>),
    #[error("hazard video {0} has no category label")]
    UncategorizedHazard(VideoId),
    #[error("category {0} is not in the prompt set")]
    UnknownCategory(Category),
    #[error("category {category}: {source}")]
    Category {
        category: Category,
        #[source]
        source: Box<CalibrationError>,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn join(categories: &[Category]) -> String {
    categories
        .iter()
        .map(Category::as_str)
        .collect::<Vec<_>>()
        .join(", ")
}

impl CalibrationError {
    /// True when the error means the corpus cannot support calibration, as
    /// opposed to malformed input.
    pub fn is_insufficient_corpus(&self) -> bool {
        match self {
            CalibrationError::InsufficientCorpus(_)
            | CalibrationError::EmptySignal
            | CalibrationError::MissingCategorySubset(_) => true,
            CalibrationError::Category { source, .. } => source.is_insufficient_corpus(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    step: f64,
}

impl SweepConfig {
    pub fn new(step: f64) -> Result<Self, CalibrationError> {
        if step.is_finite() && step > 0.0 {
            Ok(Self { step })
        } else {
            Err(CalibrationError::BadStep(step))
        }
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Threshold at grid index `k` for a grid anchored at `min`.
    pub fn grid_value(&self, min: f64, k: u64) -> f64 {
        min + k as f64 * self.step
    }

    /// Index of the last grid point: `ceil((max - min) / step)`.
    pub fn grid_len(&self, min: f64, max: f64) -> u64 {
        ((max - min) / self.step).ceil() as u64
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { step: DEFAULT_STEP }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub threshold: f64,
    /// Position of `threshold` on the grid anchored at `grid_min`.
    pub grid_index: u64,
    pub grid_min: f64,
    pub report: TiouReport,
}

struct Frame {
    margin: f64,
    video: usize,
    active: bool,
}

struct VideoCounts {
    frames: usize,
    active: usize,
    is_hazard: bool,
    flagged: usize,
    flagged_active: usize,
}

impl VideoCounts {
    fn positive_iou(&self) -> f64 {
        iou_from_counts(
            self.flagged_active,
            self.active + self.flagged - self.flagged_active,
        )
    }

    fn negative_iou(&self) -> f64 {
        let truth = self.frames - self.active;
        let predicted = self.frames - self.flagged;
        let inter = truth - (self.flagged - self.flagged_active);
        iou_from_counts(inter, predicted + truth - inter)
    }
}

/// Pair each annotation with its series, sorted by video id.
fn align<'a>(
    series: &'a [MarginSeries],
    gts: &'a [HazardAnnotation],
) -> Result<Vec<(&'a HazardAnnotation, &'a MarginSeries)>, CalibrationError> {
    let mut by_id: BTreeMap<&VideoId, &MarginSeries> = BTreeMap::new();
    for s in series {
        if by_id.insert(s.video_id(), s).is_some() {
            return Err(CalibrationError::DuplicateSeries(s.video_id().clone()));
        }
    }
    let gts_by_id: BTreeMap<&VideoId, &HazardAnnotation> =
        gts.iter().map(|g| (g.video_id(), g)).collect();
    if gts_by_id.len() != gts.len() {
        let mut seen = BTreeSet::new();
        let dup = gts.iter().find(|g| !seen.insert(g.video_id())).unwrap();
        return Err(MetricsError::DuplicateAnnotation(dup.video_id().clone()).into());
    }
    by_id
        .into_iter()
        .map(|(id, s)| {
            let gt = *gts_by_id
                .get(id)
                .ok_or_else(|| CalibrationError::MissingAnnotation(id.clone()))?;
            if s.frame_count() != gt.frame_count() {
                return Err(CalibrationError::LengthMismatch {
                    video: id.clone(),
                    expected: gt.frame_count(),
                    actual: s.frame_count(),
                });
            }
            Ok((gt, s))
        })
        .collect()
}

/// Select the threshold maximizing Global tIoU over `series`.
///
/// Every annotation that has a series takes part; annotations without a
/// series are ignored so one annotation list can serve several categories.
pub fn sweep_threshold(
    series: &[MarginSeries],
    gts: &[HazardAnnotation],
    cfg: &SweepConfig,
) -> Result<SweepOutcome, CalibrationError> {
    let pairs = align(series, gts)?;
    if pairs.is_empty() {
        return Err(CalibrationError::EmptySignal);
    }
    if !pairs.iter().any(|(gt, _)| gt.is_hazard()) {
        return Err(CalibrationError::InsufficientCorpus(
            "no hazard videos".into(),
        ));
    }
    if pairs.iter().all(|(gt, _)| gt.negative_frame_count() == 0) {
        return Err(CalibrationError::InsufficientCorpus(
            "no ground-truth non-hazard frames".into(),
        ));
    }

    let mut frames = Vec::new();
    let mut counts = Vec::with_capacity(pairs.len());
    for (video, (gt, s)) in pairs.iter().enumerate() {
        let truth = gt.active_flags();
        let active = truth.iter().filter(|&&a| a).count();
        counts.push(VideoCounts {
            frames: gt.frame_count(),
            active,
            is_hazard: gt.is_hazard(),
            flagged: gt.frame_count(),
            flagged_active: active,
        });
        frames.extend(s.margins().iter().zip(truth).map(|(&margin, active)| Frame {
            margin,
            video,
            active,
        }));
    }
    frames.sort_by(|a, b| a.margin.total_cmp(&b.margin));
    let min = frames[0].margin;
    let max = frames[frames.len() - 1].margin;
    let last = cfg.grid_len(min, max);

    let mut positives = Vec::with_capacity(counts.len());
    let mut negatives = Vec::with_capacity(counts.len());
    let mut score = |counts: &[VideoCounts]| -> Result<f64, MetricsError> {
        positives.clear();
        negatives.clear();
        for c in counts {
            if c.is_hazard {
                positives.push(c.positive_iou());
            }
            negatives.push(c.negative_iou());
        }
        global_tiou(temporal::mean(&positives), temporal::mean(&negatives))
    };

    // Flags only change when the threshold passes a margin value, so only the
    // lowest grid point after each such crossing needs scoring.
    let mut best: Option<(u64, f64)> = None;
    let mut next = 0;
    let mut k = 0u64;
    loop {
        let t = cfg.grid_value(min, k);
        while next < frames.len() && frames[next].margin <= t {
            let f = &frames[next];
            let c = &mut counts[f.video];
            c.flagged -= 1;
            if f.active {
                c.flagged_active -= 1;
            }
            next += 1;
        }
        let g = score(&counts)?;
        if best.is_none_or(|(_, b)| g > b) {
            best = Some((k, g));
        }
        if next == frames.len() {
            break;
        }
        match first_grid_at_or_above(cfg, min, frames[next].margin, k) {
            Some(k2) if k2 <= last => k = k2,
            _ => break,
        }
    }

    let (grid_index, _) = best.expect("grid has at least one point");
    let threshold = cfg.grid_value(min, grid_index);
    let report = evaluate_threshold(&pairs, threshold)?;
    Ok(SweepOutcome {
        threshold,
        grid_index,
        grid_min: min,
        report,
    })
}

/// Smallest `k > after` with `grid_value(min, k) >= target`.
fn first_grid_at_or_above(cfg: &SweepConfig, min: f64, target: f64, after: u64) -> Option<u64> {
    let estimate = ((target - min) / cfg.step).ceil();
    if !estimate.is_finite() || estimate >= u64::MAX as f64 / 2.0 {
        return None;
    }
    let mut k = (estimate.max(0.0) as u64).max(after + 1);
    while k > after + 1 && cfg.grid_value(min, k - 1) >= target {
        k -= 1;
    }
    while cfg.grid_value(min, k) < target {
        k += 1;
    }
    Some(k)
}

fn evaluate_threshold(
    pairs: &[(&HazardAnnotation, &MarginSeries)],
    threshold: f64,
) -> Result<TiouReport, CalibrationError> {
    let per_video = pairs
        .iter()
        .map(|(gt, s)| {
            let predicted: Vec<bool> = s.margins().iter().map(|&m| m > threshold).collect();
            let truth = gt.active_flags();
            VideoContribution {
                video_id: gt.video_id().clone(),
                positive_iou: gt
                    .is_hazard()
                    .then(|| temporal::positive_iou(&predicted, &truth)),
                negative_iou: temporal::negative_iou(&predicted, &truth),
            }
        })
        .collect();
    Ok(temporal::report_from_contributions(per_video)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationEntry {
    pub threshold: f64,
    pub report: TiouReport,
}

pub const PROFILE_SCHEMA_VERSION: u32 = 1;

/// Tuned thresholds for a prompt set on a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProfile {
    pub step: f64,
    pub prompt_set_hash: String,
    pub corpus_hash: String,
    pub created_at: DateTime<Utc>,
    pub entries: BTreeMap<Category, CalibrationEntry>,
}

impl CalibrationProfile {
    pub fn threshold(&self, category: &Category) -> Option<f64> {
        self.entries.get(category).map(|e| e.threshold)
    }

    /// Every prompt-set category has an entry and there are no extras.
    pub fn validate_against(&self, prompts: &PromptSet) -> Result<(), ProfileMismatch> {
        let wanted: BTreeSet<&Category> = prompts.categories().collect();
        let have: BTreeSet<&Category> = self.entries.keys().collect();
        let missing: Vec<Category> = wanted.difference(&have).map(|c| (*c).clone()).collect();
        let unknown: Vec<Category> = have.difference(&wanted).map(|c| (*c).clone()).collect();
        if missing.is_empty() && unknown.is_empty() {
            Ok(())
        } else {
            Err(ProfileMismatch { missing, unknown })
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("profile does not match prompt set (missing: [{}], unknown: [{}])", join(.missing), join(.unknown))]
pub struct ProfileMismatch {
    pub missing: Vec<Category>,
    pub unknown: Vec<Category>,
}

pub fn prompt_set_digest(prompts: &PromptSet) -> String {
    let canonical = serde_json::to_vec(prompts).expect("prompt set serializes");
    hex::encode(Sha256::digest(canonical))
}

/// Which categories `tune_categories` should sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CategorySelection {
    /// Every category of the prompt set, general channel included.
    All,
    Only(Vec<Category>),
}

/// Sweep a threshold per category on the calibration split.
///
/// A specific category is tuned on its own labeled hazard videos plus every
/// non-hazard video. The general channel is tuned on all hazard videos plus
/// every non-hazard video.
pub fn tune_categories(
    corpus: &Corpus,
    prompts: &PromptSet,
    selection: &CategorySelection,
    cfg: &SweepConfig,
    created_at: DateTime<Utc>,
) -> Result<CalibrationProfile, CalibrationError> {
    let videos: Vec<&VideoRecord> = corpus.split(Split::Calibration).collect();
    if videos.is_empty() {
        return Err(CalibrationError::InsufficientCorpus(
            "calibration split is empty".into(),
        ));
    }
    if let Some(v) = videos
        .iter()
        .find(|v| v.is_hazard() && v.annotation.category().is_none())
    {
        return Err(CalibrationError::UncategorizedHazard(v.video_id().clone()));
    }

    let requested: Vec<Category> = match selection {
        CategorySelection::All => prompts.categories().cloned().collect(),
        CategorySelection::Only(list) => {
            let mut seen = BTreeSet::new();
            let mut out = Vec::new();
            for c in list {
                if prompts.pair(c).is_none() {
                    return Err(CalibrationError::UnknownCategory(c.clone()));
                }
                if seen.insert(c) {
                    out.push(c.clone());
                }
            }
            out
        }
    };

    let missing: Vec<Category> = requested
        .iter()
        .filter(|c| **c != prompts.general)
        .filter(|c| {
            !videos
                .iter()
                .any(|v| v.is_hazard() && v.annotation.category() == Some(*c))
        })
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(CalibrationError::MissingCategorySubset(missing));
    }

    let results: Vec<Result<(Category, CalibrationEntry), CalibrationError>> = requested
        .par_iter()
        .map(|category| {
            let general = *category == prompts.general;
            let subset: Vec<&VideoRecord> = videos
                .iter()
                .copied()
                .filter(|v| {
                    !v.is_hazard() || general || v.annotation.category() == Some(category)
                })
                .collect();
            tune_one(category, &subset, cfg).map_err(|e| CalibrationError::Category {
                category: category.clone(),
                source: Box::new(e),
            })
        })
        .collect();

    let mut entries = BTreeMap::new();
    for r in results {
        let (category, entry) = r?;
        entries.insert(category, entry);
    }
    Ok(CalibrationProfile {
        step: cfg.step(),
        prompt_set_hash: prompt_set_digest(prompts),
        corpus_hash: corpus.digest(),
        created_at,
        entries,
    })
}

fn tune_one(
    category: &Category,
    videos: &[&VideoRecord],
    cfg: &SweepConfig,
) -> Result<(Category, CalibrationEntry), CalibrationError> {
    let mut series = Vec::with_capacity(videos.len());
    let mut gts = Vec::with_capacity(videos.len());
    for v in videos {
        let s = v
            .signals
            .get(category)
            .ok_or_else(|| CalibrationError::MissingSignal {
                video: v.video_id().clone(),
                category: category.clone(),
            })?;
        series.push(s.clone());
        gts.push(v.annotation.clone());
    }
    let outcome = sweep_threshold(&series, &gts, cfg)?;
    Ok((
        category.clone(),
        CalibrationEntry {
            threshold: outcome.threshold,
            report: outcome.report,
        },
    ))
}
