//! Precomputed prompt score tables.
//!
//! Header `frame_index,category,positive_score,negative_score`, one row per
//! (frame, category). The margin is `positive_score - negative_score`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_atomic, IngestError};
use crate::ids::Category;

pub const SCORE_HEADER: [&str; 4] = ["frame_index", "category", "positive_score", "negative_score"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub frame_index: usize,
    pub category: Category,
    pub positive_score: f64,
    pub negative_score: f64,
}

fn delimiter_for(path: &Path) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") => b'\t',
        _ => b',',
    }
}

/// Parse a score table into per-category margin vectors of length
/// `frame_count`. Every category in the table must cover every frame.
pub fn read_score_table(
    path: &Path,
    frame_count: usize,
) -> Result<BTreeMap<Category, Vec<f64>>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter_for(path))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != SCORE_HEADER {
        return Err(IngestError::Parse {
            path: path.to_path_buf(),
            line: Some(1),
            message: format!("expected header {}", SCORE_HEADER.join(",")),
        });
    }

    let mut margins: BTreeMap<Category, Vec<Option<f64>>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let row: ScoreRow = record
            .deserialize(Some(&headers))
            .map_err(|e| csv_error(path, e))?;
        if row.frame_index >= frame_count {
            return Err(IngestError::FrameOutOfRange {
                path: path.to_path_buf(),
                line,
                frame: row.frame_index,
                frame_count,
            });
        }
        if !(row.positive_score.is_finite() && row.negative_score.is_finite()) {
            return Err(IngestError::invalid(
                path,
                format!("line {line}"),
                "scores must be finite",
            ));
        }
        let slot = &mut margins
            .entry(row.category.clone())
            .or_insert_with(|| vec![None; frame_count])[row.frame_index];
        if slot.is_some() {
            return Err(IngestError::DuplicateRow {
                path: path.to_path_buf(),
                line,
                frame: row.frame_index,
                category: row.category,
            });
        }
        *slot = Some(row.positive_score - row.negative_score);
    }

    margins
        .into_iter()
        .map(|(category, values)| {
            let filled = values
                .iter()
                .enumerate()
                .map(|(frame, v)| {
                    v.ok_or_else(|| {
                        IngestError::invalid(
                            path,
                            format!("category {category}"),
                            format!("no row for frame {frame}"),
                        )
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            Ok((category, filled))
        })
        .collect()
}

pub(super) fn csv_error(path: &Path, err: csv::Error) -> IngestError {
    let line = err.position().map(|p| p.line());
    match err.into_kind() {
        csv::ErrorKind::Io(source) => IngestError::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => IngestError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

pub fn write_score_table(path: &Path, rows: &[ScoreRow]) -> Result<(), IngestError> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(delimiter_for(path))
        .from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).expect("in-memory csv write");
    }
    let bytes = writer.into_inner().expect("in-memory csv flush");
    write_atomic(path, &bytes)
}
