//! Average displacement error, nearest-rank percentile outlier filtering and
//! instruction-level cohort statistics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::SceneId;

/// Timestamps closer than this are considered aligned.
pub const TIMESTAMP_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("trajectory has no waypoints")]
    Empty,
    #[error("waypoint {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("timestamps must strictly increase (waypoint {index})")]
    NonIncreasingTime { index: usize },
    #[error("trajectories have {pred} and {truth} waypoints")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("waypoint {index}: timestamps {pred} and {truth} differ")]
    TimestampMismatch { index: usize, pred: f64, truth: f64 },
    #[error("no scenes")]
    EmptyInput,
    #[error("percentile must satisfy 0 < q <= 100, got {0}")]
    BadPercentile(f64),
    #[error("scene {0} has no instruction evaluations")]
    NoInstructions(SceneId),
    #[error("scene {0} appears more than once")]
    DuplicateScene(SceneId),
    #[error("scene {scene}: ADE {value} must be finite and non-negative")]
    BadAde { scene: SceneId, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl Waypoint {
    pub fn new(t: f64, x: f64, y: f64) -> Self {
        Self { t, x, y }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory(Vec<Waypoint>);

impl Trajectory {
    pub fn new(waypoints: Vec<Waypoint>) -> Result<Self, TrajectoryError> {
        if waypoints.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        for (index, w) in waypoints.iter().enumerate() {
            if !(w.t.is_finite() && w.x.is_finite() && w.y.is_finite()) {
                return Err(TrajectoryError::NonFinite { index });
            }
            if index > 0 && w.t <= waypoints[index - 1].t {
                return Err(TrajectoryError::NonIncreasingTime { index });
            }
        }
        Ok(Self(waypoints))
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.0
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self(
            self.0
                .iter()
                .map(|w| Waypoint::new(w.t, w.x + dx, w.y + dy))
                .collect(),
        )
    }
}

/// Mean Euclidean distance between time-aligned waypoints, in meters.
pub fn ade(pred: &Trajectory, truth: &Trajectory) -> Result<f64, TrajectoryError> {
    let (p, g) = (pred.waypoints(), truth.waypoints());
    if p.len() != g.len() {
        return Err(TrajectoryError::LengthMismatch {
            pred: p.len(),
            truth: g.len(),
        });
    }
    let mut total = 0.0;
    for (index, (a, b)) in p.iter().zip(g).enumerate() {
        if (a.t - b.t).abs() > TIMESTAMP_TOLERANCE {
            return Err(TrajectoryError::TimestampMismatch {
                index,
                pred: a.t,
                truth: b.t,
            });
        }
        total += (a.x - b.x).hypot(a.y - b.y);
    }
    Ok(total / p.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub cutoff: f64,
    /// 1-based rank of the cutoff in the ascending sort.
    pub rank: usize,
    pub removed: BTreeSet<SceneId>,
}

/// 1-based nearest rank `ceil(q/100 * n)`, clamped to `[1, n]`.
pub fn nearest_rank(q: f64, n: usize) -> usize {
    let exact = q * n as f64 / 100.0;
    // q*n/100 lands a hair above an integer for values like 97.5 * 40.
    let snapped = if (exact - exact.round()).abs() < 1e-9 {
        exact.round()
    } else {
        exact.ceil()
    };
    (snapped as usize).clamp(1, n)
}

/// Scenes whose baseline ADE is strictly above the nearest-rank `q`-th percentile.
pub fn percentile_filter(
    baseline: &[(SceneId, f64)],
    q: f64,
) -> Result<FilterOutcome, TrajectoryError> {
    if baseline.is_empty() {
        return Err(TrajectoryError::EmptyInput);
    }
    if !(q > 0.0 && q <= 100.0) {
        return Err(TrajectoryError::BadPercentile(q));
    }
    let mut sorted: Vec<f64> = baseline.iter().map(|(_, v)| *v).collect();
    sorted.sort_by(f64::total_cmp);
    let rank = nearest_rank(q, sorted.len());
    let cutoff = sorted[rank - 1];
    let removed = baseline
        .iter()
        .filter(|(_, v)| *v > cutoff)
        .map(|(id, _)| id.clone())
        .collect();
    Ok(FilterOutcome {
        cutoff,
        rank,
        removed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEvaluation {
    pub scene_id: SceneId,
    pub baseline_ade: f64,
    pub instruction_evals: Vec<(String, f64)>,
}

impl SceneEvaluation {
    pub fn new(
        scene_id: SceneId,
        baseline_ade: f64,
        instruction_evals: Vec<(String, f64)>,
    ) -> Result<Self, TrajectoryError> {
        let check = |value: f64| {
            if value.is_finite() && value >= 0.0 {
                Ok(())
            } else {
                Err(TrajectoryError::BadAde {
                    scene: scene_id.clone(),
                    value,
                })
            }
        };
        check(baseline_ade)?;
        for (_, v) in &instruction_evals {
            check(*v)?;
        }
        Ok(Self {
            scene_id,
            baseline_ade,
            instruction_evals,
        })
    }

    fn ades(&self) -> impl Iterator<Item = f64> + '_ {
        self.instruction_evals.iter().map(|(_, v)| *v)
    }

    pub fn best(&self) -> f64 {
        self.ades().fold(f64::INFINITY, f64::min)
    }

    pub fn worst(&self) -> f64 {
        self.ades().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.ades().sum::<f64>() / self.instruction_evals.len() as f64
    }

    /// Instructions with ADE strictly below the baseline.
    pub fn wins(&self) -> usize {
        self.ades().filter(|&v| v < self.baseline_ade).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortMeans {
    pub baseline: f64,
    pub best: f64,
    pub avg: f64,
    pub worst: f64,
}

impl CohortMeans {
    fn over<'a>(scenes: impl Iterator<Item = &'a SceneEvaluation>) -> Self {
        let (mut n, mut baseline, mut best, mut avg, mut worst) = (0usize, 0.0, 0.0, 0.0, 0.0);
        for s in scenes {
            n += 1;
            baseline += s.baseline_ade;
            best += s.best();
            avg += s.mean();
            worst += s.worst();
        }
        let n = n as f64;
        Self {
            baseline: baseline / n,
            best: best / n,
            avg: avg / n,
            worst: worst / n,
        }
    }

    /// Relative reduction of the best-instruction mean against the baseline mean.
    pub fn best_reduction(&self) -> f64 {
        (self.baseline - self.best) / self.baseline
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub q: f64,
    pub cutoff: f64,
    pub scene_count: usize,
    pub all: CohortMeans,
    pub filtered: CohortMeans,
    pub retained_scene_ids: Vec<SceneId>,
    pub removed_scene_ids: Vec<SceneId>,
    /// Share of (scene, instruction) pairs beating the baseline, retained scenes only.
    pub win_rate: f64,
    /// Same share over every scene.
    pub win_rate_all: f64,
}

fn win_rate<'a>(scenes: impl Iterator<Item = &'a SceneEvaluation>) -> f64 {
    let (wins, total) = scenes.fold((0, 0), |(w, t), s| (w + s.wins(), t + s.instruction_evals.len()));
    wins as f64 / total as f64
}

pub fn instruction_stats(
    scenes: &[SceneEvaluation],
    q: f64,
) -> Result<CohortReport, TrajectoryError> {
    if scenes.is_empty() {
        return Err(TrajectoryError::EmptyInput);
    }
    let mut sorted: Vec<&SceneEvaluation> = scenes.iter().collect();
    sorted.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    for w in sorted.windows(2) {
        if w[0].scene_id == w[1].scene_id {
            return Err(TrajectoryError::DuplicateScene(w[0].scene_id.clone()));
        }
    }
    if let Some(s) = sorted.iter().find(|s| s.instruction_evals.is_empty()) {
        return Err(TrajectoryError::NoInstructions(s.scene_id.clone()));
    }

    let baselines: Vec<(SceneId, f64)> = sorted
        .iter()
        .map(|s| (s.scene_id.clone(), s.baseline_ade))
        .collect();
    let filter = percentile_filter(&baselines, q)?;
    let retained: Vec<&SceneEvaluation> = sorted
        .iter()
        .copied()
        .filter(|s| !filter.removed.contains(&s.scene_id))
        .collect();

    Ok(CohortReport {
        q,
        cutoff: filter.cutoff,
        scene_count: sorted.len(),
        all: CohortMeans::over(sorted.iter().copied()),
        filtered: CohortMeans::over(retained.iter().copied()),
        retained_scene_ids: retained.iter().map(|s| s.scene_id.clone()).collect(),
        removed_scene_ids: filter.removed.into_iter().collect(),
        win_rate: win_rate(retained.iter().copied()),
        win_rate_all: win_rate(sorted.iter().copied()),
    })
}
