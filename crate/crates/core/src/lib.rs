//! Hazard screening and trajectory evaluation toolkit.
//!
//! The crate turns per-frame image/prompt embeddings (or precomputed prompt
//! scores) into margin signals, calibrates per-category thresholds against
//! annotated video, fuses category detectors into a single alerting policy and
//! scores the result with temporal IoU and clip-level alert rates. A separate
//! module evaluates logged trajectories with ADE, percentile outlier filtering
//! and instruction-level aggregation.

pub mod calibration;
pub mod corpus;
pub mod fusion;
pub mod ids;
pub mod ingest;
pub mod signal;
pub mod temporal;
pub mod trajectory;

pub use calibration::{
    sweep_threshold, tune_categories, CalibrationEntry, CalibrationError, CalibrationProfile,
    CategorySelection, SweepConfig, SweepOutcome,
};
pub use corpus::{Corpus, Split, VideoRecord};
pub use fusion::{
    extract_segments, fuse, rasterize, threshold_mask, AlertSegment, Channel, DetectorBank,
    FusionError, FusionPolicy,
};
pub use ids::{Category, SceneId, VideoId};
pub use signal::{
    clip_score, l2_normalize, margin, margin_signal, Aggregation, EmbeddingVector, LogitScale,
    MarginSeries, PromptPair, PromptSet, SignalError,
};
pub use temporal::{
    frame_iou, global_tiou, negative_tiou, positive_tiou, tiou_report, video_tnr, video_tpr,
    FrameMask, HazardAnnotation, Interval, MetricsError, TiouReport, VideoContribution,
};
pub use trajectory::{
    ade, instruction_stats, percentile_filter, CohortMeans, CohortReport, FilterOutcome,
    SceneEvaluation, Trajectory, TrajectoryError, Waypoint,
};
