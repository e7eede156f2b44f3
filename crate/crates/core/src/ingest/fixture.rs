//! Synthetic corpora for tests and demos.
//!
//! Videos at even indices are hazards, with categories assigned round-robin.
//! Every channel draws a baseline margin from `U[-1, 1)`; inside a hazard
//! video's active interval the general channel and the video's own category
//! channel are raised by `separability`. Negative scores are drawn from
//! `U[15, 25)` and the positive score is the negative score plus the margin.
//! Output is a pure function of the spec: the same spec writes the same bytes.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    save_annotation, save_manifest, save_prompts, write_score_table, IngestError, ManifestFile,
    ManifestVideo, PromptFile, ScoreRow,
};
use crate::corpus::Split;
use crate::ids::{Category, VideoId};
use crate::signal::{Aggregation, PromptPair};
use crate::temporal::{HazardAnnotation, Interval};

const CATEGORY_NAMES: [&str; 7] = [
    "pedestrian",
    "animal",
    "airborne_falling",
    "low_visibility",
    "emergency_scene",
    "construction",
    "road_debris",
];

pub const GENERAL_CATEGORY: &str = "hazard";

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub seed: u64,
    pub videos: usize,
    pub frames: usize,
    /// Number of specific categories besides the general channel.
    pub categories: usize,
    pub separability: f64,
}

impl FixtureSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            videos: 4,
            frames: 50,
            categories: 2,
            separability: 5.0,
        }
    }

    pub fn category_names(&self) -> Vec<Category> {
        (0..self.categories)
            .map(|i| match CATEGORY_NAMES.get(i) {
                Some(name) => Category::from(*name),
                None => Category::from(format!("category_{i}")),
            })
            .collect()
    }

    fn validate(&self, out: &Path) -> Result<(), IngestError> {
        let bad = |field: &str, message: &str| Err(IngestError::invalid(out, field, message));
        if self.videos == 0 {
            return bad("videos", "must be at least 1");
        }
        if self.frames == 0 {
            return bad("frames", "must be at least 1");
        }
        if self.categories == 0 {
            return bad("categories", "must be at least 1");
        }
        if !self.separability.is_finite() || self.separability < 0.0 {
            return bad("separability", "must be finite and non-negative");
        }
        Ok(())
    }
}

fn video_id(i: usize) -> VideoId {
    VideoId::from(format!("v{i:03}"))
}

/// Write a corpus under `out` and return the manifest path.
pub fn generate_fixture(spec: &FixtureSpec, out: &Path) -> Result<PathBuf, IngestError> {
    spec.validate(out)?;
    for sub in ["annotations", "scores"] {
        let dir = out.join(sub);
        std::fs::create_dir_all(&dir).map_err(IngestError::io(&dir))?;
    }

    let general = Category::from(GENERAL_CATEGORY);
    let specific = spec.category_names();
    let mut channels = vec![general.clone()];
    channels.extend(specific.iter().cloned());

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let f = spec.frames;
    let mut videos = Vec::with_capacity(spec.videos);
    for i in 0..spec.videos {
        let id = video_id(i);
        let is_hazard = i % 2 == 0;
        let (annotation, hazard) = if is_hazard {
            let category = specific[(i / 2) % specific.len()].clone();
            let min_len = (f / 4).max(1);
            let max_len = (f / 2).max(min_len);
            let len = rng.random_range(min_len..=max_len);
            let start = rng.random_range(0..=f - len);
            let active = Interval::new(start, start + len - 1);
            let annotation = HazardAnnotation::hazard(id.clone(), f, category.clone(), active)
                .expect("generated interval lies inside the video");
            (annotation, Some((category, active)))
        } else {
            (
                HazardAnnotation::nominal(id.clone(), f).expect("nominal annotation"),
                None,
            )
        };

        let mut rows = Vec::with_capacity(f * channels.len());
        for frame in 0..f {
            for channel in &channels {
                let mut margin: f64 = rng.random_range(-1.0..1.0);
                if let Some((category, active)) = &hazard {
                    if active.contains(frame) && (channel == &general || channel == category) {
                        margin += spec.separability;
                    }
                }
                let negative_score: f64 = rng.random_range(15.0..25.0);
                rows.push(ScoreRow {
                    frame_index: frame,
                    category: channel.clone(),
                    positive_score: negative_score + margin,
                    negative_score,
                });
            }
        }

        let annotation_rel = PathBuf::from(format!("annotations/{id}.json"));
        let scores_rel = PathBuf::from(format!("scores/{id}.csv"));
        save_annotation(&out.join(&annotation_rel), &annotation)?;
        write_score_table(&out.join(&scores_rel), &rows)?;
        videos.push(ManifestVideo {
            video_id: id,
            frame_count: f,
            annotation: annotation_rel,
            scores: vec![scores_rel],
            embeddings: None,
            split: Split::Calibration,
            nominal: !is_hazard,
        });
    }

    let prompts = PromptFile {
        version: super::prompts::PROMPT_FILE_VERSION,
        general: general.clone(),
        text_embeddings: None,
        categories: channels
            .iter()
            .map(|c| PromptPair {
                category: c.clone(),
                positive_phrasings: vec![format!("{} ahead of the vehicle", c.as_str().replace('_', " "))],
                negative_phrasings: vec!["normal driving scene".to_string()],
                aggregation: Aggregation::Max,
            })
            .collect(),
    };
    save_prompts(&out.join("prompts.json"), &prompts)?;

    let manifest_path = out.join("manifest.json");
    save_manifest(
        &manifest_path,
        &ManifestFile {
            version: super::manifest::MANIFEST_VERSION,
            prompts: Some(PathBuf::from("prompts.json")),
            videos,
        },
    )?;
    Ok(manifest_path)
}
