//! Alert segment CSV: `video_id,start_frame,end_frame,policy`, inclusive
//! frame bounds, rows ordered by video then start frame.

use std::path::Path;

use super::scores::csv_error;
use super::{write_atomic, IngestError};
use crate::fusion::AlertSegment;

const HEADER: [&str; 4] = ["video_id", "start_frame", "end_frame", "policy"];

pub fn segments_to_csv(segments: &[AlertSegment]) -> String {
    let mut sorted: Vec<&AlertSegment> = segments.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.video_id, a.start_frame, a.end_frame).cmp(&(&b.video_id, b.start_frame, b.end_frame))
    });
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    writer.write_record(HEADER).expect("in-memory csv write");
    for s in sorted {
        writer.serialize(s).expect("in-memory csv write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory csv flush")).expect("utf-8 csv")
}

pub fn write_segments(path: &Path, segments: &[AlertSegment]) -> Result<(), IngestError> {
    write_atomic(path, segments_to_csv(segments).as_bytes())
}

pub fn read_segments(path: &Path) -> Result<Vec<AlertSegment>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(IngestError::Parse {
            path: path.to_path_buf(),
            line: Some(1),
            message: format!("expected header {}", HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let seg: AlertSegment = record
            .deserialize(Some(&headers))
            .map_err(|e| csv_error(path, e))?;
        if seg.end_frame < seg.start_frame {
            return Err(IngestError::invalid(
                path,
                format!("line {line}"),
                format!("end_frame {} precedes start_frame {}", seg.end_frame, seg.start_frame),
            ));
        }
        out.push(seg);
    }
    Ok(out)
}
