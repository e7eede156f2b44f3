//! Synthetic inputs shared by the benchmarks.

use std::collections::{BTreeMap, HashMap};

use hazmargin_core::{
    Category, Channel, DetectorBank, EmbeddingVector, HazardAnnotation, Interval, MarginSeries,
    PromptPair, VideoId,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `videos` videos of `frames` frames; even-indexed videos are hazards whose
/// middle third has margins raised by 2.
pub fn sweep_corpus(seed: u64, videos: usize, frames: usize) -> (Vec<MarginSeries>, Vec<HazardAnnotation>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let active = Interval::new(frames / 3, 2 * frames / 3);
    (0..videos)
        .map(|i| {
            let id = VideoId::from(format!("v{i:04}"));
            let hazard = i % 2 == 0;
            let margins = (0..frames)
                .map(|f| {
                    let lift = if hazard && active.contains(f) { 2.0 } else { 0.0 };
                    // Coarse values so many frames share a margin.
                    (rng.random_range(-1.0..1.0f64) * 100.0).round() / 100.0 + lift
                })
                .collect();
            let series = MarginSeries::new(id.clone(), Category::from("hazard"), margins).unwrap();
            let ann = if hazard {
                HazardAnnotation::hazard(id, frames, "hazard", active).unwrap()
            } else {
                HazardAnnotation::nominal(id, frames).unwrap()
            };
            (series, ann)
        })
        .unzip()
}

pub fn random_unit_vectors(seed: u64, count: usize, dim: usize) -> Vec<EmbeddingVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| EmbeddingVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .collect()
}

/// A prompt pair with `k` phrasings per side and matching text embeddings.
pub fn prompt_pair(seed: u64, k: usize, dim: usize) -> (PromptPair, HashMap<String, EmbeddingVector>) {
    let vectors = random_unit_vectors(seed, 2 * k, dim);
    let positive: Vec<String> = (0..k).map(|i| format!("positive {i}")).collect();
    let negative: Vec<String> = (0..k).map(|i| format!("negative {i}")).collect();
    let embeddings = positive.iter().chain(&negative).cloned().zip(vectors).collect();
    let pair = PromptPair {
        category: Category::from("hazard"),
        positive_phrasings: positive,
        negative_phrasings: negative,
        aggregation: Default::default(),
    };
    (pair, embeddings)
}

pub fn detector_bank(seed: u64, categories: usize, frames: usize) -> DetectorBank {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let video = VideoId::from("bench");
    let mut channel = |name: String| {
        let margins = (0..frames).map(|_| rng.random_range(-1.0..1.0)).collect();
        let series = MarginSeries::new(video.clone(), Category::from(name.as_str()), margins).unwrap();
        (Category::from(name), Channel::new(series, 0.5))
    };
    let general = channel("hazard".to_string());
    let cats: BTreeMap<_, _> = (0..categories).map(|i| channel(format!("c{i}"))).collect();
    DetectorBank::new(video, frames, cats, Some(general)).unwrap()
}
