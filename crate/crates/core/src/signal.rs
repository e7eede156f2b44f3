//! Margin signal construction from image and prompt embeddings.
//!
//! A frame's score against a phrasing is the logit-scaled cosine between the
//! L2-normalized image and text embeddings. The hazard confidence for a
//! category is the positive-phrasing score minus the negative-phrasing score,
//! aggregated over every (positive, negative) phrasing combination.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{Category, VideoId};

/// Norms below this are treated as zero.
pub const ZERO_NORM_CUTOFF: f64 = 1e-12;

/// Temperature used when an embedding source does not carry one.
pub const DEFAULT_LOGIT_SCALE: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("embedding vector has zero dimension")]
    EmptyVector,
    #[error("embedding component {index} is not finite")]
    NonFinite { index: usize },
    #[error("embedding norm {norm:e} is below the zero-vector cutoff")]
    ZeroVector { norm: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("logit scale must be positive and finite, got {0}")]
    BadLogitScale(f64),
    #[error("no embedding for phrasing {phrasing:?} of category {category}")]
    MissingPromptEmbedding { category: Category, phrasing: String },
    #[error("prompt pair for {0} has no positive phrasings")]
    NoPositivePhrasings(Category),
    #[error("prompt pair for {0} has no negative phrasings")]
    NoNegativePhrasings(Category),
    #[error("duplicate category {0} in prompt set")]
    DuplicateCategory(Category),
    #[error("general channel {0} has no prompt pair")]
    MissingGeneralPair(Category),
    #[error("margin series needs at least one frame")]
    NoFrames,
    #[error("margin at frame {frame} is not finite")]
    NonFiniteMargin { frame: usize },
}

/// A model embedding. Components are stored as `f64` and are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, SignalError> {
        if values.is_empty() {
            return Err(SignalError::EmptyVector);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self, SignalError> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> Result<f64, SignalError> {
        check_dims(self, other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }
}

fn check_dims(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<(), SignalError> {
    if a.dim() != b.dim() {
        return Err(SignalError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

/// Learned temperature multiplying normalized dot products.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogitScale(f64);

impl LogitScale {
    pub fn new(scale: f64) -> Result<Self, SignalError> {
        if scale.is_finite() && scale > 0.0 {
            Ok(Self(scale))
        } else {
            Err(SignalError::BadLogitScale(scale))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for LogitScale {
    fn default() -> Self {
        Self(DEFAULT_LOGIT_SCALE)
    }
}

pub fn l2_normalize(v: &EmbeddingVector) -> Result<EmbeddingVector, SignalError> {
    let norm = v.norm();
    if !(norm >= ZERO_NORM_CUTOFF) {
        return Err(SignalError::ZeroVector { norm });
    }
    Ok(EmbeddingVector(v.0.iter().map(|x| x / norm).collect()))
}

/// Logit-scaled cosine similarity, bounded by `[-scale, scale]`.
pub fn clip_score(
    img: &EmbeddingVector,
    txt: &EmbeddingVector,
    scale: LogitScale,
) -> Result<f64, SignalError> {
    check_dims(img, txt)?;
    let img = l2_normalize(img)?;
    let txt = l2_normalize(txt)?;
    Ok(scale.0 * unit_cosine(&img, &txt))
}

// Both arguments already unit length and of equal dimension.
fn unit_cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    dot.clamp(-1.0, 1.0)
}

pub fn margin(pos_score: f64, neg_score: f64) -> f64 {
    pos_score - neg_score
}

/// How margins over phrasing combinations collapse to one value per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    #[serde(alias = "max_margin")]
    Max,
    #[serde(alias = "mean_margin")]
    Mean,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Max => "max",
            Aggregation::Mean => "mean",
        })
    }
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" | "max_margin" => Ok(Aggregation::Max),
            "mean" | "mean_margin" => Ok(Aggregation::Mean),
            other => Err(format!("unknown aggregation {other:?} (expected max or mean)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub category: Category,
    #[serde(rename = "positive")]
    pub positive_phrasings: Vec<String>,
    #[serde(rename = "negative")]
    pub negative_phrasings: Vec<String>,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl PromptPair {
    pub fn validate(&self) -> Result<(), SignalError> {
        if self.positive_phrasings.is_empty() {
            return Err(SignalError::NoPositivePhrasings(self.category.clone()));
        }
        if self.negative_phrasings.is_empty() {
            return Err(SignalError::NoNegativePhrasings(self.category.clone()));
        }
        Ok(())
    }
}

/// Prompt pairs for every category plus the name of the general hazard channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub general: Category,
    pub pairs: Vec<PromptPair>,
}

impl PromptSet {
    pub fn new(general: Category, pairs: Vec<PromptPair>) -> Result<Self, SignalError> {
        let set = Self { general, pairs };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        let mut seen = BTreeSet::new();
        for pair in &self.pairs {
            pair.validate()?;
            if !seen.insert(&pair.category) {
                return Err(SignalError::DuplicateCategory(pair.category.clone()));
            }
        }
        if !seen.contains(&self.general) {
            return Err(SignalError::MissingGeneralPair(self.general.clone()));
        }
        Ok(())
    }

    pub fn pair(&self, category: &Category) -> Option<&PromptPair> {
        self.pairs.iter().find(|p| &p.category == category)
    }

    pub fn categories(&self) -> impl Iterator<Item = &Category> {
        self.pairs.iter().map(|p| &p.category)
    }

    /// Categories other than the general channel, in file order.
    pub fn specific_categories(&self) -> impl Iterator<Item = &Category> {
        self.categories().filter(move |c| *c != &self.general)
    }

    /// Every distinct phrasing in first-appearance order: categories in
    /// order, positives before negatives. This is the row order of a prompt
    /// embedding file.
    pub fn phrasings(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for pair in &self.pairs {
            for p in pair.positive_phrasings.iter().chain(&pair.negative_phrasings) {
                if seen.insert(p.as_str()) {
                    out.push(p.as_str());
                }
            }
        }
        out
    }
}

/// Per-frame margin time series for one video and one category.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginSeries {
    video_id: VideoId,
    category: Category,
    margins: Vec<f64>,
}

impl MarginSeries {
    pub fn new(
        video_id: VideoId,
        category: Category,
        margins: Vec<f64>,
    ) -> Result<Self, SignalError> {
        if let Some(frame) = margins.iter().position(|m| !m.is_finite()) {
            return Err(SignalError::NonFiniteMargin { frame });
        }
        Ok(Self {
            video_id,
            category,
            margins,
        })
    }

    pub fn video_id(&self) -> &VideoId {
        &self.video_id
    }

    pub fn category(&self) -> &Category {
        &self.category
    }

    pub fn margins(&self) -> &[f64] {
        &self.margins
    }

    pub fn frame_count(&self) -> usize {
        self.margins.len()
    }

    /// Same series with every margin transformed by `f`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self, SignalError> {
        Self::new(
            self.video_id.clone(),
            self.category.clone(),
            self.margins.iter().map(|&m| f(m)).collect(),
        )
    }
}

/// Build the margin series of one category over a sequence of frame embeddings.
pub fn margin_signal(
    video_id: &VideoId,
    frames: &[EmbeddingVector],
    pair: &PromptPair,
    prompt_embeddings: &HashMap<String, EmbeddingVector>,
    scale: LogitScale,
) -> Result<MarginSeries, SignalError> {
    pair.validate()?;
    if frames.is_empty() {
        return Err(SignalError::NoFrames);
    }
    let lookup = |phrasing: &String| -> Result<EmbeddingVector, SignalError> {
        let v = prompt_embeddings
            .get(phrasing)
            .ok_or_else(|| SignalError::MissingPromptEmbedding {
                category: pair.category.clone(),
                phrasing: phrasing.clone(),
            })?;
        l2_normalize(v)
    };
    let positives = pair
        .positive_phrasings
        .iter()
        .map(lookup)
        .collect::<Result<Vec<_>, _>>()?;
    let negatives = pair
        .negative_phrasings
        .iter()
        .map(lookup)
        .collect::<Result<Vec<_>, _>>()?;

    let mut margins = Vec::with_capacity(frames.len());
    for frame in frames {
        for txt in positives.iter().chain(&negatives) {
            check_dims(frame, txt)?;
        }
        let frame = l2_normalize(frame)?;
        let pos: Vec<f64> = positives
            .iter()
            .map(|t| scale.0 * unit_cosine(&frame, t))
            .collect();
        let neg: Vec<f64> = negatives
            .iter()
            .map(|t| scale.0 * unit_cosine(&frame, t))
            .collect();
        margins.push(aggregate_margins(&pos, &neg, pair.aggregation));
    }
    MarginSeries::new(video_id.clone(), pair.category.clone(), margins)
}

/// Aggregate `pos[i] - neg[j]` over the full cross product.
pub fn aggregate_margins(pos: &[f64], neg: &[f64], aggregation: Aggregation) -> f64 {
    let combos = pos
        .iter()
        .flat_map(|&p| neg.iter().map(move |&n| margin(p, n)));
    match aggregation {
        Aggregation::Max => combos.fold(f64::NEG_INFINITY, f64::max),
        Aggregation::Mean => {
            let (sum, count) = combos.fold((0.0, 0usize), |(s, c), m| (s + m, c + 1));
            sum / count as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    fn scale(s: f64) -> LogitScale {
        LogitScale::new(s).unwrap()
    }

    /// Unit text vector whose cosine with (1, 0) is `cos`.
    fn at_cos(cos: f64) -> EmbeddingVector {
        ev(&[cos, (1.0 - cos * cos).sqrt()])
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(l2_normalize(&ev(&[2.0, 0.0])).unwrap().values(), &[1.0, 0.0]);
        let u = l2_normalize(&ev(&[0.6, 0.8])).unwrap();
        assert!((u.values()[0] - 0.6).abs() < 1e-12 && (u.values()[1] - 0.8).abs() < 1e-12);
        let u = l2_normalize(&ev(&[3.0, 4.0])).unwrap();
        assert!((u.values()[0] - 0.6).abs() < 1e-12 && (u.values()[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn normalize_rejects_zero_and_tiny() {
        assert!(matches!(
            l2_normalize(&ev(&[0.0, 0.0])),
            Err(SignalError::ZeroVector { .. })
        ));
        assert!(matches!(
            l2_normalize(&ev(&[1e-14, 0.0])),
            Err(SignalError::ZeroVector { .. })
        ));
    }

    #[test]
    fn vector_invariants() {
        assert_eq!(EmbeddingVector::new(vec![]), Err(SignalError::EmptyVector));
        assert_eq!(
            EmbeddingVector::new(vec![1.0, f64::NAN]),
            Err(SignalError::NonFinite { index: 1 })
        );
        assert!(LogitScale::new(0.0).is_err());
        assert!(LogitScale::new(f64::INFINITY).is_err());
        assert_eq!(LogitScale::default().get(), 100.0);
    }

    #[test]
    fn clip_score_examples() {
        let s = scale(100.0);
        assert_eq!(clip_score(&ev(&[1.0, 0.0]), &ev(&[1.0, 0.0]), s).unwrap(), 100.0);
        assert_eq!(clip_score(&ev(&[1.0, 0.0]), &ev(&[0.0, 1.0]), s).unwrap(), 0.0);
        let v = clip_score(&ev(&[1.0, 1.0]), &ev(&[1.0, 0.0]), s).unwrap();
        assert!((v - 70.7107).abs() < 1e-3);
    }

    #[test]
    fn clip_score_errors() {
        let s = scale(100.0);
        assert_eq!(
            clip_score(&ev(&[1.0, 0.0]), &ev(&[1.0, 0.0, 0.0]), s),
            Err(SignalError::DimensionMismatch { left: 2, right: 3 })
        );
        assert!(matches!(
            clip_score(&ev(&[0.0, 0.0]), &ev(&[1.0, 0.0]), s),
            Err(SignalError::ZeroVector { .. })
        ));
    }

    #[test]
    fn margin_examples() {
        assert_eq!(margin(10.0, 4.0), 6.0);
        assert_eq!(margin(5.0, 5.0), 0.0);
        assert_eq!(margin(2.0, 3.5), -1.5);
    }

    fn pair(pos: &[&str], neg: &[&str], aggregation: Aggregation) -> PromptPair {
        PromptPair {
            category: Category::from("animal"),
            positive_phrasings: pos.iter().map(|s| s.to_string()).collect(),
            negative_phrasings: neg.iter().map(|s| s.to_string()).collect(),
            aggregation,
        }
    }

    fn embeddings(entries: &[(&str, f64)]) -> HashMap<String, EmbeddingVector> {
        entries
            .iter()
            .map(|(k, cos)| (k.to_string(), at_cos(*cos)))
            .collect()
    }

    #[test]
    fn margin_signal_single_combination() {
        let frames = vec![ev(&[1.0, 0.0])];
        let emb = embeddings(&[("deer on road", 0.10), ("empty road", 0.04)]);
        let p = pair(&["deer on road"], &["empty road"], Aggregation::Max);
        let s = margin_signal(&VideoId::from("v"), &frames, &p, &emb, scale(100.0)).unwrap();
        assert_eq!(s.frame_count(), 1);
        assert!((s.margins()[0] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn margin_signal_max_and_mean_over_cross_product() {
        // positive scores {8, 12}, negative {5}: combinations {3, 7}
        let frames = vec![ev(&[1.0, 0.0])];
        let emb = embeddings(&[("a", 0.08), ("b", 0.12), ("n", 0.05)]);
        let max = margin_signal(
            &VideoId::from("v"),
            &frames,
            &pair(&["a", "b"], &["n"], Aggregation::Max),
            &emb,
            scale(100.0),
        )
        .unwrap();
        assert!((max.margins()[0] - 7.0).abs() < 1e-9);
        let mean = margin_signal(
            &VideoId::from("v"),
            &frames,
            &pair(&["a", "b"], &["n"], Aggregation::Mean),
            &emb,
            scale(100.0),
        )
        .unwrap();
        assert!((mean.margins()[0] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn margin_signal_errors() {
        let frames = vec![ev(&[1.0, 0.0])];
        let emb = embeddings(&[("a", 0.1)]);
        let p = pair(&["a"], &["missing"], Aggregation::Max);
        assert!(matches!(
            margin_signal(&VideoId::from("v"), &frames, &p, &emb, scale(100.0)),
            Err(SignalError::MissingPromptEmbedding { .. })
        ));
        let mut emb = embeddings(&[("a", 0.1)]);
        emb.insert("n".into(), ev(&[1.0, 0.0, 0.0]));
        let p = pair(&["a"], &["n"], Aggregation::Max);
        assert!(matches!(
            margin_signal(&VideoId::from("v"), &frames, &p, &emb, scale(100.0)),
            Err(SignalError::DimensionMismatch { .. })
        ));
        let emb = embeddings(&[("a", 0.1), ("n", 0.2)]);
        assert_eq!(
            margin_signal(&VideoId::from("v"), &[], &p, &emb, scale(100.0)),
            Err(SignalError::NoFrames)
        );
    }

    #[test]
    fn prompt_set_validation_and_phrasing_order() {
        let general = PromptPair {
            category: Category::from("hazard"),
            positive_phrasings: vec!["a driving hazard".into()],
            negative_phrasings: vec!["normal driving scene".into()],
            aggregation: Aggregation::Max,
        };
        let animal = PromptPair {
            category: Category::from("animal"),
            positive_phrasings: vec!["an animal on the road".into()],
            negative_phrasings: vec!["normal driving scene".into()],
            aggregation: Aggregation::Max,
        };
        let set = PromptSet::new(Category::from("hazard"), vec![general.clone(), animal.clone()])
            .unwrap();
        assert_eq!(
            set.phrasings(),
            vec!["a driving hazard", "normal driving scene", "an animal on the road"]
        );
        assert_eq!(
            set.specific_categories().cloned().collect::<Vec<_>>(),
            vec![Category::from("animal")]
        );
        assert_eq!(
            PromptSet::new(Category::from("hazard"), vec![animal.clone(), animal.clone()]),
            Err(SignalError::DuplicateCategory(Category::from("animal")))
        );
        assert_eq!(
            PromptSet::new(Category::from("hazard"), vec![animal]),
            Err(SignalError::MissingGeneralPair(Category::from("hazard")))
        );
        let mut empty = general;
        empty.negative_phrasings.clear();
        assert!(matches!(
            PromptSet::new(Category::from("hazard"), vec![empty]),
            Err(SignalError::NoNegativePhrasings(_))
        ));
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, dim)
            .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-3)
    }

    proptest! {
        #[test]
        fn normalized_has_unit_norm(v in vec_strategy(8)) {
            let u = l2_normalize(&ev(&v)).unwrap();
            prop_assert!((u.norm() - 1.0).abs() < 1e-6);
            let ratio = v[0] / u.values()[0];
            if v[0].abs() > 1e-6 {
                prop_assert!(ratio > 0.0);
            }
        }

        #[test]
        fn clip_score_scale_invariant_and_symmetric(
            a in vec_strategy(6), b in vec_strategy(6), c in 0.01f64..1000.0, s in 1.0f64..200.0
        ) {
            let s = scale(s);
            let base = clip_score(&ev(&a), &ev(&b), s).unwrap();
            let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
            prop_assert!((clip_score(&ev(&scaled), &ev(&b), s).unwrap() - base).abs() < 1e-6);
            prop_assert_eq!(clip_score(&ev(&b), &ev(&a), s).unwrap(), base);
            prop_assert!(base.abs() <= s.get());
        }

        #[test]
        fn max_dominates_mean_and_scale_doubles(
            frames in prop::collection::vec(vec_strategy(4), 1..6),
            texts in prop::collection::vec(vec_strategy(4), 2..6),
            split in 1usize..5,
        ) {
            let split = split.min(texts.len() - 1);
            let emb: HashMap<String, EmbeddingVector> = texts
                .iter()
                .enumerate()
                .map(|(i, t)| (format!("p{i}"), ev(t)))
                .collect();
            let names: Vec<String> = (0..texts.len()).map(|i| format!("p{i}")).collect();
            let mk = |aggregation| PromptPair {
                category: Category::from("c"),
                positive_phrasings: names[..split].to_vec(),
                negative_phrasings: names[split..].to_vec(),
                aggregation,
            };
            let frames: Vec<EmbeddingVector> = frames.iter().map(|f| ev(f)).collect();
            let id = VideoId::from("v");
            let max = margin_signal(&id, &frames, &mk(Aggregation::Max), &emb, scale(50.0)).unwrap();
            let mean = margin_signal(&id, &frames, &mk(Aggregation::Mean), &emb, scale(50.0)).unwrap();
            let doubled = margin_signal(&id, &frames, &mk(Aggregation::Max), &emb, scale(100.0)).unwrap();
            prop_assert_eq!(max.frame_count(), frames.len());
            for i in 0..frames.len() {
                prop_assert!(max.margins()[i] >= mean.margins()[i] - 1e-12);
                prop_assert!((doubled.margins()[i] - 2.0 * max.margins()[i]).abs() < 1e-9);
            }
        }
    }
}
