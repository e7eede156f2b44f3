//! Straightforward reference implementations used to cross-check the
//! optimized library code.
#![allow(dead_code)]

use hazmargin_core::{HazardAnnotation, Interval, MarginSeries, VideoId};
use rand::Rng;

pub fn global(p: f64, n: f64) -> f64 {
    let dp = 1.0 - p;
    let dn = 1.0 - n;
    1.0 - (dp * dp + dn * dn).sqrt() / std::f64::consts::SQRT_2
}

fn iou(pred: &[bool], truth: &[bool]) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&a, &b) in pred.iter().zip(truth) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn mean(values: &[f64]) -> f64 {
    let mut total = 0.0;
    for v in values {
        total += v;
    }
    total / values.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Brute {
    pub k: u64,
    pub threshold: f64,
    pub positive: f64,
    pub negative: f64,
    pub global: f64,
}

/// Positive and negative tIoU of thresholding at `t`, videos in id order.
pub fn score_at(pairs: &[(&HazardAnnotation, &MarginSeries)], t: f64) -> (f64, f64) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (gt, s) in pairs {
        let pred: Vec<bool> = s.margins().iter().map(|&m| m > t).collect();
        let truth: Vec<bool> = (0..gt.frame_count())
            .map(|i| gt.active().is_some_and(|a| a.contains(i)))
            .collect();
        if gt.is_hazard() {
            pos.push(iou(&pred, &truth));
        }
        let not_pred: Vec<bool> = pred.iter().map(|x| !x).collect();
        let not_truth: Vec<bool> = truth.iter().map(|x| !x).collect();
        neg.push(iou(&not_pred, &not_truth));
    }
    (mean(&pos), mean(&neg))
}

pub fn pair_up<'a>(
    series: &'a [MarginSeries],
    gts: &'a [HazardAnnotation],
) -> Vec<(&'a HazardAnnotation, &'a MarginSeries)> {
    let mut pairs: Vec<_> = gts
        .iter()
        .map(|g| (g, series.iter().find(|s| s.video_id() == g.video_id()).unwrap()))
        .collect();
    pairs.sort_by(|a, b| a.0.video_id().cmp(b.0.video_id()));
    pairs
}

/// Score every grid point; keep the first strict maximum.
pub fn brute_force_sweep(series: &[MarginSeries], gts: &[HazardAnnotation], step: f64) -> Brute {
    let pairs = pair_up(series, gts);
    let all = pairs.iter().flat_map(|(_, s)| s.margins().iter().copied());
    let (min, max) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| {
        (lo.min(m), hi.max(m))
    });
    let last = ((max - min) / step).ceil() as u64;
    let mut best: Option<Brute> = None;
    for k in 0..=last {
        let threshold = min + k as f64 * step;
        let (positive, negative) = score_at(&pairs, threshold);
        let g = global(positive, negative);
        if best.as_ref().is_none_or(|b| g > b.global) {
            best = Some(Brute { k, threshold, positive, negative, global: g });
        }
    }
    best.unwrap()
}

/// 2..=max_videos videos of 1..=max_frames frames. Video 0 is a hazard and
/// video 1 is not, so every corpus is calibratable. Some corpora use coarse
/// margins to create ties.
pub fn random_corpus(
    rng: &mut impl Rng,
    max_videos: usize,
    max_frames: usize,
) -> (Vec<MarginSeries>, Vec<HazardAnnotation>) {
    let videos = rng.random_range(2..=max_videos);
    let coarse = rng.random_bool(0.3);
    let lift = rng.random_range(0.0..3.0);
    let mut series = Vec::new();
    let mut gts = Vec::new();
    for i in 0..videos {
        let id = VideoId::from(format!("r{i:02}"));
        let frames = rng.random_range(1..=max_frames);
        let hazard = i == 0 || (i > 1 && rng.random_bool(0.5));
        let active = hazard.then(|| {
            let a = rng.random_range(0..frames);
            let b = rng.random_range(a..frames);
            Interval::new(a, b)
        });
        let margins = (0..frames)
            .map(|f| {
                let mut m: f64 = rng.random_range(-2.0..2.0);
                if coarse {
                    m = (m * 4.0).round() / 4.0;
                }
                if active.is_some_and(|a| a.contains(f)) {
                    m += lift;
                }
                m
            })
            .collect();
        series.push(MarginSeries::new(id.clone(), "c".into(), margins).unwrap());
        gts.push(match active {
            Some(a) => HazardAnnotation::hazard(id, frames, "c", a).unwrap(),
            None => HazardAnnotation::nominal(id, frames).unwrap(),
        });
    }
    (series, gts)
}

pub fn shifted(series: &[MarginSeries], c: f64) -> Vec<MarginSeries> {
    series.iter().map(|s| s.map(|m| m + c).unwrap()).collect()
}
