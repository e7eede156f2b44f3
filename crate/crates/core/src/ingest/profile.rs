//! Calibration profile persistence.
//!
//! Profiles are JSON. Every floating-point field is written in scientific
//! notation with 17 significant digits so thresholds and report values parse
//! back to the identical `f64`.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::ser::Error as _;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use super::{read_text, write_atomic, IngestError};
use crate::calibration::{CalibrationEntry, CalibrationProfile, PROFILE_SCHEMA_VERSION};
use crate::ids::{Category, VideoId};
use crate::temporal::{TiouReport, VideoContribution};

fn full<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if !x.is_finite() {
        return Err(S::Error::custom(format!("non-finite value {x}")));
    }
    RawValue::from_string(format!("{x:.16e}"))
        .map_err(S::Error::custom)?
        .serialize(s)
}

fn full_opt<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => full(v, s),
        None => s.serialize_none(),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileWire {
    schema_version: u32,
    created_at: DateTime<Utc>,
    #[serde(serialize_with = "full")]
    step: f64,
    prompt_set_hash: String,
    corpus_hash: String,
    entries: BTreeMap<Category, EntryWire>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryWire {
    #[serde(serialize_with = "full")]
    threshold: f64,
    report: ReportWire,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportWire {
    #[serde(serialize_with = "full")]
    positive_tiou: f64,
    #[serde(serialize_with = "full")]
    negative_tiou: f64,
    #[serde(serialize_with = "full")]
    global_tiou: f64,
    per_video: Vec<ContributionWire>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContributionWire {
    video_id: VideoId,
    #[serde(serialize_with = "full_opt")]
    positive_iou: Option<f64>,
    #[serde(serialize_with = "full")]
    negative_iou: f64,
}

impl From<&CalibrationProfile> for ProfileWire {
    fn from(p: &CalibrationProfile) -> Self {
        Self {
            schema_version: PROFILE_SCHEMA_VERSION,
            created_at: p.created_at,
            step: p.step,
            prompt_set_hash: p.prompt_set_hash.clone(),
            corpus_hash: p.corpus_hash.clone(),
            entries: p
                .entries
                .iter()
                .map(|(c, e)| {
                    (
                        c.clone(),
                        EntryWire {
                            threshold: e.threshold,
                            report: ReportWire {
                                positive_tiou: e.report.positive_tiou,
                                negative_tiou: e.report.negative_tiou,
                                global_tiou: e.report.global_tiou,
                                per_video: e
                                    .report
                                    .per_video
                                    .iter()
                                    .map(|v| ContributionWire {
                                        video_id: v.video_id.clone(),
                                        positive_iou: v.positive_iou,
                                        negative_iou: v.negative_iou,
                                    })
                                    .collect(),
                            },
                        },
                    )
                })
                .collect(),
        }
    }
}

impl From<ProfileWire> for CalibrationProfile {
    fn from(w: ProfileWire) -> Self {
        Self {
            step: w.step,
            prompt_set_hash: w.prompt_set_hash,
            corpus_hash: w.corpus_hash,
            created_at: w.created_at,
            entries: w
                .entries
                .into_iter()
                .map(|(c, e)| {
                    (
                        c,
                        CalibrationEntry {
                            threshold: e.threshold,
                            report: TiouReport {
                                positive_tiou: e.report.positive_tiou,
                                negative_tiou: e.report.negative_tiou,
                                global_tiou: e.report.global_tiou,
                                per_video: e
                                    .report
                                    .per_video
                                    .into_iter()
                                    .map(|v| VideoContribution {
                                        video_id: v.video_id,
                                        positive_iou: v.positive_iou,
                                        negative_iou: v.negative_iou,
                                    })
                                    .collect(),
                            },
                        },
                    )
                })
                .collect(),
        }
    }
}

pub fn profile_to_json(profile: &CalibrationProfile) -> String {
    let mut text =
        serde_json::to_string_pretty(&ProfileWire::from(profile)).expect("profile values are finite");
    text.push('\n');
    text
}

pub fn profile_from_json(path: &Path, text: &str) -> Result<CalibrationProfile, IngestError> {
    #[derive(Deserialize)]
    struct Version {
        schema_version: u32,
    }
    let version: Version = serde_json::from_str(text).map_err(|e| IngestError::json(path, e))?;
    if version.schema_version != PROFILE_SCHEMA_VERSION {
        return Err(IngestError::SchemaVersionMismatch {
            path: path.to_path_buf(),
            expected: PROFILE_SCHEMA_VERSION,
            found: version.schema_version,
        });
    }
    let wire: ProfileWire = serde_json::from_str(text).map_err(|e| IngestError::json(path, e))?;
    for (category, entry) in &wire.entries {
        if !entry.threshold.is_finite() {
            return Err(IngestError::invalid(
                path,
                format!("entries.{category}.threshold"),
                "must be finite",
            ));
        }
    }
    Ok(wire.into())
}

pub fn save_profile(profile: &CalibrationProfile, path: &Path) -> Result<(), IngestError> {
    write_atomic(path, profile_to_json(profile).as_bytes())
}

pub fn load_profile(path: &Path) -> Result<CalibrationProfile, IngestError> {
    profile_from_json(path, &read_text(path)?)
}
