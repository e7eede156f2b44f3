use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use hazmargin_core::calibration::{prompt_set_digest, ProfileMismatch};
use hazmargin_core::fusion::filter_short_segments;
use hazmargin_core::ingest::{
    generate_fixture, load_annotations, load_corpus, load_manifest, load_profile, load_prompts,
    read_segments, read_trajectory_table, save_profile, scene_evaluations, write_atomic,
    write_segments, CorpusManifest, FixtureSpec, IngestError, PromptBundle,
};
use hazmargin_core::{
    extract_segments, fuse, instruction_stats, rasterize, tiou_report, tune_categories,
    video_tnr, video_tpr, AlertSegment, CategorySelection, Channel, CohortMeans, Corpus,
    DetectorBank, FrameMask, FusionError, Split, SweepConfig, TrajectoryError,
    VideoContribution, VideoId,
};
use serde::Serialize;

use crate::error::{warn, CliError};
use crate::table::render;
use crate::{CalibrateArgs, EvaluateArgs, FixturesArgs, ReportFormat, ScreenArgs, TrajEvalArgs};

impl From<TrajectoryError> for CliError {
    fn from(e: TrajectoryError) -> Self {
        CliError::validation(e.to_string())
    }
}

fn prompts_for(manifest: &CorpusManifest, flag: Option<&PathBuf>) -> Result<PromptBundle, CliError> {
    let path = flag.or(manifest.prompts.as_ref()).ok_or_else(|| {
        CliError::validation(format!(
            "{}: no prompt set; pass --prompts or name one in the manifest",
            manifest.path.display()
        ))
    })?;
    Ok(load_prompts(path)?)
}

fn in_split(split: Option<Split>, video: Split) -> bool {
    split.is_none_or(|s| s == video)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header).expect("in-memory csv write");
    for row in rows {
        writer.write_record(row).expect("in-memory csv write");
    }
    Ok(write_atomic(path, &writer.into_inner().expect("in-memory csv flush"))?)
}

pub fn calibrate(args: &CalibrateArgs) -> Result<(), CliError> {
    if args.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build_global()
            .map_err(|e| CliError::validation(format!("--jobs: {e}")))?;
    }
    let cfg = SweepConfig::new(args.step)?;
    let manifest = load_manifest(&args.manifest)?;
    let prompts = prompts_for(&manifest, args.prompts.as_ref())?;
    let corpus = load_corpus(&manifest, &prompts)?;
    let selection = if args.categories.is_empty() {
        CategorySelection::All
    } else {
        CategorySelection::Only(args.categories.clone())
    };
    let profile = tune_categories(&corpus, &prompts.set, &selection, &cfg, args.created_at)?;
    save_profile(&profile, &args.out)?;

    let rows: Vec<Vec<String>> = profile
        .entries
        .iter()
        .map(|(category, e)| {
            vec![
                category.to_string(),
                e.threshold.to_string(),
                e.report.global_tiou.to_string(),
                e.report.positive_tiou.to_string(),
                e.report.negative_tiou.to_string(),
            ]
        })
        .collect();
    print!(
        "{}",
        render(&["category", "threshold", "global_tiou", "positive_tiou", "negative_tiou"], &rows)
    );
    Ok(())
}

/// Thresholded detectors for every selected video, built from a profile.
fn detector_banks(
    corpus: &Corpus,
    prompts: &PromptBundle,
    profile: &hazmargin_core::CalibrationProfile,
    split: Option<Split>,
) -> Result<Vec<DetectorBank>, CliError> {
    let general = &prompts.set.general;
    corpus
        .videos()
        .iter()
        .filter(|v| in_split(split, v.split))
        .map(|v| {
            let channel = |category: &hazmargin_core::Category| -> Result<Channel, CliError> {
                let series = v.signals.get(category).ok_or_else(|| {
                    CliError::validation(format!("video {}: no signal for {category}", v.video_id()))
                })?;
                Ok(Channel::new(series.clone(), profile.entries[category].threshold))
            };
            let categories = profile
                .entries
                .keys()
                .filter(|c| *c != general)
                .map(|c| Ok((c.clone(), channel(c)?)))
                .collect::<Result<BTreeMap<_, _>, CliError>>()?;
            let general_channel = if profile.entries.contains_key(general) {
                Some((general.clone(), channel(general)?))
            } else {
                None
            };
            Ok(DetectorBank::new(v.video_id().clone(), v.frame_count(), categories, general_channel)?)
        })
        .collect()
}

pub fn screen(args: &ScreenArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&args.manifest)?;
    let prompts = prompts_for(&manifest, args.prompts.as_ref())?;
    let profile = load_profile(&args.profile)?;
    if let Err(mismatch) = profile.validate_against(&prompts.set) {
        if !mismatch.unknown.is_empty() {
            let source = ProfileMismatch { missing: vec![], unknown: mismatch.unknown };
            return Err(IngestError::ProfileMismatch { path: args.profile.clone(), source }.into());
        }
        let names: Vec<&str> = mismatch.missing.iter().map(|c| c.as_str()).collect();
        warn(format!("profile has no threshold for {}; those channels are skipped", names.join(", ")));
    }
    let general = &prompts.set.general;
    if args.policy.requires_general() && !profile.entries.contains_key(general) {
        return Err(FusionError::MissingGeneralChannel(args.policy).into());
    }
    if profile.entries.keys().all(|c| c == general) {
        return Err(CliError::validation(format!(
            "{}: profile has no category thresholds",
            args.profile.display()
        )));
    }

    let corpus = load_corpus(&manifest, &prompts)?;
    if profile.corpus_hash != corpus.digest() {
        warn("profile was calibrated on a different corpus");
    }
    if profile.prompt_set_hash != prompt_set_digest(&prompts.set) {
        warn("profile was calibrated with a different prompt set");
    }

    let mut segments = Vec::new();
    let mut rows = Vec::new();
    for bank in detector_banks(&corpus, &prompts, &profile, args.split)? {
        let mask = fuse(&bank, args.policy)?;
        let found = filter_short_segments(extract_segments(&mask, args.policy), args.min_duration);
        let flagged: usize = found.iter().map(AlertSegment::frame_len).sum();
        rows.push(vec![
            bank.video_id().to_string(),
            bank.frame_count().to_string(),
            found.len().to_string(),
            flagged.to_string(),
        ]);
        segments.extend(found);
    }
    write_segments(&args.out, &segments)?;
    print!("{}", render(&["video_id", "frames", "segments", "flagged_frames"], &rows));
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvaluationReport {
    system: String,
    videos: usize,
    hazard_videos: usize,
    positive_tiou: f64,
    negative_tiou: f64,
    global_tiou: f64,
    video_tpr: f64,
    video_tnr: f64,
    per_video: Vec<VideoContribution>,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&args.manifest)?;
    let segments = read_segments(&args.segments)?;
    let frame_counts: BTreeMap<&VideoId, usize> =
        manifest.videos.iter().map(|v| (&v.video_id, v.frame_count)).collect();
    for s in &segments {
        let frames = *frame_counts.get(&s.video_id).ok_or_else(|| {
            CliError::validation(format!(
                "{}: segment references unknown video {}",
                args.segments.display(),
                s.video_id
            ))
        })?;
        if s.end_frame >= frames {
            return Err(CliError::validation(format!(
                "{}: segment {}..={} of video {} exceeds its {frames} frames",
                args.segments.display(),
                s.start_frame,
                s.end_frame,
                s.video_id
            )));
        }
    }
    let policies: BTreeSet<&str> = segments.iter().map(|s| s.policy.name()).collect();
    if policies.len() > 1 {
        return Err(CliError::validation(format!(
            "{}: segments mix policies {}",
            args.segments.display(),
            policies.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let system = policies.into_iter().next().unwrap_or("none").to_string();

    let mut annotations = Vec::new();
    let mut masks: BTreeMap<VideoId, FrameMask> = BTreeMap::new();
    for entry in manifest.videos.iter().filter(|v| in_split(args.split, v.split)) {
        let annotation = load_annotations(&entry.annotation, entry.frame_count)?;
        if annotation.video_id() != &entry.video_id {
            return Err(IngestError::VideoIdMismatch {
                path: entry.annotation.clone(),
                expected: entry.video_id.clone(),
                found: annotation.video_id().clone(),
            }
            .into());
        }
        masks.insert(entry.video_id.clone(), rasterize(&entry.video_id, &segments, entry.frame_count));
        annotations.push(annotation);
    }

    let tiou = tiou_report(&masks, &annotations)?;
    let report = EvaluationReport {
        system,
        videos: annotations.len(),
        hazard_videos: annotations.iter().filter(|a| a.is_hazard()).count(),
        positive_tiou: tiou.positive_tiou,
        negative_tiou: tiou.negative_tiou,
        global_tiou: tiou.global_tiou,
        video_tpr: video_tpr(&masks, &annotations)?,
        video_tnr: video_tnr(&masks, &annotations)?,
        per_video: tiou.per_video,
    };

    let metrics = [
        ("positive_tiou", report.positive_tiou),
        ("negative_tiou", report.negative_tiou),
        ("global_tiou", report.global_tiou),
        ("video_tpr", report.video_tpr),
        ("video_tnr", report.video_tnr),
    ];
    match args.format {
        ReportFormat::Json => write_json(&args.report, &report)?,
        ReportFormat::Csv => {
            let rows: Vec<Vec<String>> = metrics
                .iter()
                .map(|(name, v)| vec![name.to_string(), v.to_string()])
                .collect();
            write_csv(&args.report, &["metric", "value"], &rows)?
        }
    }
    let mut row = vec![report.system.clone()];
    row.extend(metrics.iter().map(|(_, v)| format!("{v:.4}")));
    print!(
        "{}",
        render(&["system", "pos_tiou", "neg_tiou", "global_tiou", "video_tpr", "video_tnr"], &[row])
    );
    Ok(())
}

fn cohort_row(label: &str, m: &CohortMeans) -> Vec<String> {
    vec![
        label.to_string(),
        m.baseline.to_string(),
        m.best.to_string(),
        m.avg.to_string(),
        m.worst.to_string(),
    ]
}

pub fn traj_eval(args: &TrajEvalArgs) -> Result<(), CliError> {
    let rows = read_trajectory_table(&args.trajectories)?;
    let scenes = scene_evaluations(&rows)?;
    let report = instruction_stats(&scenes, args.q)?;

    let table = vec![
        cohort_row("mean_all", &report.all),
        cohort_row("mean_q_filtered", &report.filtered),
    ];
    match args.format {
        ReportFormat::Json => write_json(&args.report, &report)?,
        ReportFormat::Csv => {
            let mut rows = table.clone();
            rows[0].push(report.win_rate_all.to_string());
            rows[1].push(report.win_rate.to_string());
            write_csv(&args.report, &["row", "baseline", "best", "avg", "worst", "win_rate"], &rows)?
        }
    }
    let pretty: Vec<Vec<String>> = [("Mean(All)", &report.all), ("Mean(Q-filtered)", &report.filtered)]
        .iter()
        .map(|(label, m)| {
            let mut r = vec![label.to_string()];
            r.extend([m.baseline, m.best, m.avg, m.worst].iter().map(|v| format!("{v:.3}")));
            r
        })
        .collect();
    print!("{}", render(&["", "baseline", "best", "avg", "worst"], &pretty));
    let removed: Vec<&str> = report.removed_scene_ids.iter().map(|s| s.as_str()).collect();
    println!(
        "q={} cutoff={} win_rate={:.4} removed=[{}]",
        report.q,
        report.cutoff,
        report.win_rate,
        removed.join(", ")
    );
    Ok(())
}

pub fn fixtures(args: &FixturesArgs) -> Result<(), CliError> {
    let spec = FixtureSpec {
        seed: args.seed,
        videos: args.videos,
        frames: args.frames,
        categories: args.categories,
        separability: args.separability,
    };
    std::fs::create_dir_all(&args.out).map_err(|source| IngestError::Io {
        path: args.out.clone(),
        source,
    })?;
    let manifest = generate_fixture(&spec, &args.out)?;
    println!("{}", manifest.display());
    Ok(())
}
