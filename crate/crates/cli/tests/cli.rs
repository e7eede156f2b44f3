use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hazmargin_core::calibration::CalibrationEntry;
use hazmargin_core::ingest::{
    load_corpus, load_manifest, load_profile, load_prompts, read_segments, save_annotation,
    save_manifest, save_profile, save_prompts, scene_evaluations, write_score_table,
    write_segments, write_trajectory_table, Condition, ManifestFile, ManifestVideo, PromptFile,
    ScoreRow, TrajectoryRow,
};
use hazmargin_core::{
    instruction_stats, AlertSegment, CalibrationProfile, Category, FusionPolicy,
    HazardAnnotation, Interval, PromptPair, Split, TiouReport,
};
use serde_json::Value;

fn hazmargin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hazmargin"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hazmargin(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str], code: i32) -> Value {
    let out = hazmargin(args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let last = stderr.lines().last().expect("an error line");
    serde_json::from_str(last).expect("stderr line is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(dir: &Path, seed: u64, extra: &[&str]) -> PathBuf {
    let out = dir.join(format!("fx{seed}"));
    let seed = seed.to_string();
    let mut args = vec!["fixtures", "--seed", &seed, "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out.join("manifest.json")
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// A video with hand-written margins per channel. Positive scores are the
/// margins, negative scores are zero.
struct HandVideo {
    id: &'static str,
    annotation: HazardAnnotation,
    margins: Vec<(&'static str, Vec<f64>)>,
}

fn hand_corpus(dir: &Path, categories: &[&str], videos: &[HandVideo]) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let mut entries = Vec::new();
    for v in videos {
        let annotation = PathBuf::from(format!("{}.json", v.id));
        let scores = PathBuf::from(format!("{}.csv", v.id));
        save_annotation(&dir.join(&annotation), &v.annotation).unwrap();
        let rows: Vec<ScoreRow> = v
            .margins
            .iter()
            .flat_map(|(c, m)| {
                m.iter().enumerate().map(move |(frame_index, &value)| ScoreRow {
                    frame_index,
                    category: Category::from(*c),
                    positive_score: value,
                    negative_score: 0.0,
                })
            })
            .collect();
        write_score_table(&dir.join(&scores), &rows).unwrap();
        entries.push(ManifestVideo {
            video_id: v.id.into(),
            frame_count: v.annotation.frame_count(),
            annotation,
            scores: vec![scores],
            embeddings: None,
            split: Split::Calibration,
            nominal: !v.annotation.is_hazard(),
        });
    }
    save_prompts(
        &dir.join("prompts.json"),
        &PromptFile {
            version: 1,
            general: "hazard".into(),
            text_embeddings: None,
            categories: categories
                .iter()
                .map(|c| PromptPair {
                    category: Category::from(*c),
                    positive_phrasings: vec![format!("{c} ahead")],
                    negative_phrasings: vec!["an ordinary road".into()],
                    aggregation: Default::default(),
                })
                .collect(),
        },
    )
    .unwrap();
    let manifest = dir.join("manifest.json");
    save_manifest(
        &manifest,
        &ManifestFile {
            version: 1,
            prompts: Some("prompts.json".into()),
            videos: entries,
        },
    )
    .unwrap();
    manifest
}

fn hand_profile(path: &Path, thresholds: &[(&str, f64)]) {
    let report = TiouReport {
        positive_tiou: 0.0,
        negative_tiou: 0.0,
        global_tiou: 0.0,
        per_video: vec![],
    };
    let profile = CalibrationProfile {
        step: 0.001,
        prompt_set_hash: String::new(),
        corpus_hash: String::new(),
        created_at: chrono::DateTime::UNIX_EPOCH,
        entries: thresholds
            .iter()
            .map(|(c, t)| (Category::from(*c), CalibrationEntry { threshold: *t, report: report.clone() }))
            .collect(),
    };
    save_profile(&profile, path).unwrap();
}

fn eight_frames(on: &[usize]) -> Vec<f64> {
    (0..8).map(|i| if on.contains(&i) { 1.0 } else { -1.0 }).collect()
}

/// Two videos of 8 frames: a hazard with active interval 3..=5 and a clean one.
fn screening_corpus(dir: &Path, general_on: &[usize], animal_on: &[usize]) -> PathBuf {
    hand_corpus(
        dir,
        &["hazard", "animal"],
        &[
            HandVideo {
                id: "a",
                annotation: HazardAnnotation::hazard("a", 8, "animal", Interval::new(3, 5)).unwrap(),
                margins: vec![("hazard", eight_frames(general_on)), ("animal", eight_frames(animal_on))],
            },
            HandVideo {
                id: "b",
                annotation: HazardAnnotation::nominal("b", 8).unwrap(),
                margins: vec![("hazard", eight_frames(&[])), ("animal", eight_frames(&[]))],
            },
        ],
    )
}

#[test]
fn calibrate_summary_matches_profile() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path(), 7, &[]);
    let profile_path = dir.path().join("profile.json");
    let stdout = ok(&["calibrate", "--manifest", s(&manifest), "--out", s(&profile_path)]);
    let profile = load_profile(&profile_path).unwrap();
    let rows: Vec<&str> = stdout.lines().skip(1).collect();
    assert_eq!(rows.len(), profile.entries.len());
    for line in rows {
        let cells: Vec<&str> = line.split_whitespace().collect();
        let entry = &profile.entries[&Category::from(cells[0])];
        let parsed: Vec<f64> = cells[1..].iter().map(|c| c.parse().unwrap()).collect();
        assert_eq!(
            parsed,
            vec![
                entry.threshold,
                entry.report.global_tiou,
                entry.report.positive_tiou,
                entry.report.negative_tiou
            ]
        );
    }
}

#[test]
fn calibrate_category_without_videos_is_insufficient() {
    let dir = tempfile::tempdir().unwrap();
    // Two videos: one pedestrian hazard, one clean. No animal hazards.
    let manifest = fixture(dir.path(), 7, &["--videos", "2"]);
    let err = fails(
        &["calibrate", "--manifest", s(&manifest), "--out", s(&dir.path().join("p.json")), "--category", "animal"],
        3,
    );
    assert!(err["message"].as_str().unwrap().contains("animal"), "{err}");
}

#[test]
fn calibrate_coarse_step_stays_on_grid() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path(), 7, &["--separability", "0.5"]);
    let profile_path = dir.path().join("p.json");
    ok(&["calibrate", "--manifest", s(&manifest), "--out", s(&profile_path), "--step", "0.01", "--category", "hazard"]);
    let threshold = load_profile(&profile_path).unwrap().entries[&Category::from("hazard")].threshold;

    let m = load_manifest(&manifest).unwrap();
    let corpus = load_corpus(&m, &load_prompts(m.prompts.as_ref().unwrap()).unwrap()).unwrap();
    let min = corpus
        .videos()
        .iter()
        .flat_map(|v| v.signals[&Category::from("hazard")].margins().to_vec())
        .fold(f64::INFINITY, f64::min);
    let k = (threshold - min) / 0.01;
    assert!((k - k.round()).abs() < 1e-6, "threshold {threshold} is off the grid from {min}");
}

#[test]
fn screen_dual_needs_both_channels() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = screening_corpus(&dir.path().join("c"), &[3, 4, 5], &[]);
    let profile = dir.path().join("p.json");
    hand_profile(&profile, &[("hazard", 0.0), ("animal", 0.0)]);
    let out = dir.path().join("seg.csv");
    ok(&["screen", "--manifest", s(&manifest), "--profile", s(&profile), "--policy", "dual", "--out", s(&out)]);
    assert!(read_segments(&out).unwrap().is_empty());
}

#[test]
fn screen_categories_single_segment_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = screening_corpus(&dir.path().join("c"), &[], &[3, 4, 5]);
    let profile = dir.path().join("p.json");
    hand_profile(&profile, &[("hazard", 0.0), ("animal", 0.0)]);
    let (first, second) = (dir.path().join("1.csv"), dir.path().join("2.csv"));
    for out in [&first, &second] {
        ok(&["screen", "--manifest", s(&manifest), "--profile", s(&profile), "--policy", "categories", "--out", s(out)]);
    }
    assert_eq!(
        read_segments(&first).unwrap(),
        vec![AlertSegment {
            video_id: "a".into(),
            start_frame: 3,
            end_frame: 5,
            policy: FusionPolicy::CategoriesOnly
        }]
    );
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
}

#[test]
fn screen_without_general_channel_fails_for_gated_policies() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = screening_corpus(&dir.path().join("c"), &[], &[3]);
    let profile = dir.path().join("p.json");
    hand_profile(&profile, &[("animal", 0.0)]);
    for policy in ["dual", "with-general"] {
        let err = fails(
            &["screen", "--manifest", s(&manifest), "--profile", s(&profile), "--policy", policy, "--out", s(&dir.path().join("o.csv"))],
            2,
        );
        assert!(err["message"].as_str().unwrap().contains("general"), "{err}");
    }
    ok(&["screen", "--manifest", s(&manifest), "--profile", s(&profile), "--policy", "categories", "--out", s(&dir.path().join("o.csv"))]);
}

fn evaluate_report(dir: &Path, manifest: &Path, segments: &[AlertSegment]) -> Value {
    let seg = dir.join("seg.csv");
    write_segments(&seg, segments).unwrap();
    let report = dir.join("report.json");
    ok(&["evaluate", "--segments", s(&seg), "--manifest", s(manifest), "--report", s(&report)]);
    serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap()
}

#[test]
fn evaluate_perfect_and_empty_segments() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = screening_corpus(&dir.path().join("c"), &[], &[]);
    let perfect = evaluate_report(
        dir.path(),
        &manifest,
        &[AlertSegment { video_id: "a".into(), start_frame: 3, end_frame: 5, policy: FusionPolicy::HazardGated }],
    );
    for key in ["positive_tiou", "negative_tiou", "global_tiou", "video_tpr", "video_tnr"] {
        assert_eq!(perfect[key], 1.0, "{key}");
    }
    let empty = evaluate_report(dir.path(), &manifest, &[]);
    assert_eq!(empty["positive_tiou"], 0.0);
    assert_eq!(empty["video_tpr"], 0.0);
    assert_eq!(empty["video_tnr"], 1.0);
}

#[test]
fn evaluate_rejects_unknown_video() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = screening_corpus(&dir.path().join("c"), &[], &[]);
    let seg = dir.path().join("seg.csv");
    write_segments(
        &seg,
        &[AlertSegment { video_id: "zz".into(), start_frame: 0, end_frame: 1, policy: FusionPolicy::HazardGated }],
    )
    .unwrap();
    let err = fails(
        &["evaluate", "--segments", s(&seg), "--manifest", s(&manifest), "--report", s(&dir.path().join("r.json"))],
        2,
    );
    assert!(err["message"].as_str().unwrap().contains("zz"));
}

#[test]
fn evaluate_csv_report() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = screening_corpus(&dir.path().join("c"), &[], &[]);
    let seg = dir.path().join("seg.csv");
    write_segments(&seg, &[]).unwrap();
    let report = dir.path().join("r.csv");
    ok(&["evaluate", "--segments", s(&seg), "--manifest", s(&manifest), "--report", s(&report), "--format", "csv"]);
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("metric,value\npositive_tiou,0\n"), "{text}");
}

#[test]
fn pipeline_matches_calibration_report() {
    let dir = tempfile::tempdir().unwrap();
    // One specific category: every hazard video belongs to it, so the
    // category's calibration subset is the whole calibration split.
    let manifest = fixture(dir.path(), 11, &["--categories", "1", "--separability", "0.8", "--videos", "6"]);
    let profile_path = dir.path().join("p.json");
    ok(&["calibrate", "--manifest", s(&manifest), "--out", s(&profile_path)]);
    let seg = dir.path().join("seg.csv");
    ok(&["screen", "--manifest", s(&manifest), "--profile", s(&profile_path), "--policy", "categories", "--out", s(&seg), "--split", "calibration"]);
    let report = dir.path().join("r.json");
    ok(&["evaluate", "--segments", s(&seg), "--manifest", s(&manifest), "--report", s(&report), "--split", "calibration"]);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let profile = load_profile(&profile_path).unwrap();
    let expected = profile.entries[&Category::from("pedestrian")].report.global_tiou;
    assert!((report["global_tiou"].as_f64().unwrap() - expected).abs() < 1e-9);
}

fn traj_rows(baselines: &[(&str, f64)]) -> Vec<TrajectoryRow> {
    let mut rows = Vec::new();
    for (scene, offset) in baselines {
        let row = |condition, id: &str, y: f64| TrajectoryRow {
            scene_id: (*scene).into(),
            condition,
            instruction_id: id.into(),
            t: 0.5,
            x: 0.0,
            y,
        };
        rows.push(row(Condition::GroundTruth, "", 0.0));
        rows.push(row(Condition::Baseline, "", *offset));
        rows.push(row(Condition::Instruction, "a", offset * 0.5));
        rows.push(row(Condition::Instruction, "b", offset * 1.5));
    }
    rows
}

fn traj_report(dir: &Path, rows: &[TrajectoryRow], q: &str) -> Value {
    let table = dir.join("traj.csv");
    write_trajectory_table(&table, rows).unwrap();
    let report = dir.join("traj.json");
    ok(&["traj-eval", "--trajectories", s(&table), "--q", q, "--report", s(&report)]);
    serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap()
}

#[test]
fn traj_eval_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let rows = traj_rows(&[("s1", 1.0), ("s2", 2.0), ("s3", 4.0)]);
    let report = traj_report(dir.path(), &rows, "97.5");
    let expected = instruction_stats(&scene_evaluations(&rows).unwrap(), 97.5).unwrap();
    assert_eq!(report, serde_json::to_value(&expected).unwrap());
}

#[test]
fn traj_eval_q100_and_outlier_removal() {
    let dir = tempfile::tempdir().unwrap();
    let rows = traj_rows(&[("s1", 1.0), ("s2", 1.2), ("s3", 12.0)]);
    let all = traj_report(dir.path(), &rows, "100");
    assert_eq!(all["all"], all["filtered"]);
    let half = traj_report(dir.path(), &rows, "50");
    assert_eq!(half["removed_scene_ids"], serde_json::json!(["s3"]));
    assert_eq!(half["cutoff"], 1.2);
}

#[test]
fn traj_eval_missing_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<TrajectoryRow> = traj_rows(&[("s1", 1.0), ("s2", 2.0)])
        .into_iter()
        .filter(|r| !(r.scene_id.as_str() == "s2" && r.condition == Condition::Baseline))
        .collect();
    let table = dir.path().join("traj.csv");
    write_trajectory_table(&table, &rows).unwrap();
    let err = fails(&["traj-eval", "--trajectories", s(&table), "--report", s(&dir.path().join("r.json"))], 2);
    assert!(err["message"].as_str().unwrap().contains("s2"));
}

#[test]
fn fixtures_are_deterministic_and_validated() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    fixture(a.path(), 7, &[]);
    fixture(b.path(), 7, &[]);
    assert_eq!(tree(a.path()), tree(b.path()));
    let err = fails(&["fixtures", "--out", s(&a.path().join("x"))], 2);
    assert!(err["message"].as_str().unwrap().contains("--seed"));
    fails(&["fixtures", "--seed", "1", "--videos", "0", "--out", s(&a.path().join("y"))], 2);
}

#[test]
fn io_failures_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails(
        &["evaluate", "--segments", s(&dir.path().join("missing.csv")), "--manifest", "nope.json", "--report", "r.json"],
        4,
    );
    assert_eq!(err["kind"], "io");
}
