//! Trajectory tables.
//!
//! CSV with header `scene_id,condition,instruction_id,t,x,y`. `condition` is
//! `ground_truth`, `baseline` or `instruction`; `instruction_id` is empty for
//! the first two. Waypoints of one trajectory appear in time order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scores::csv_error;
use super::{write_atomic, IngestError};
use crate::ids::SceneId;
use crate::trajectory::{ade, SceneEvaluation, Trajectory, Waypoint};

const HEADER: [&str; 6] = ["scene_id", "condition", "instruction_id", "t", "x", "y"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    GroundTruth,
    Baseline,
    Instruction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub scene_id: SceneId,
    pub condition: Condition,
    #[serde(default)]
    pub instruction_id: String,
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

pub fn read_trajectory_table(path: &Path) -> Result<Vec<TrajectoryRow>, IngestError> {
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
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let row: TrajectoryRow = record
            .deserialize(Some(&headers))
            .map_err(|e| csv_error(path, e))?;
        let needs_id = row.condition == Condition::Instruction;
        if needs_id == row.instruction_id.is_empty() {
            return Err(IngestError::invalid(
                path,
                format!("line {line}"),
                if needs_id {
                    "instruction rows need an instruction_id"
                } else {
                    "instruction_id is only allowed on instruction rows"
                },
            ));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_trajectory_table(path: &Path, rows: &[TrajectoryRow]) -> Result<(), IngestError> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    writer.write_record(HEADER).expect("in-memory csv write");
    for row in rows {
        writer.serialize(row).expect("in-memory csv write");
    }
    write_atomic(path, &writer.into_inner().expect("in-memory csv flush"))
}

#[derive(Default)]
struct SceneRows {
    ground_truth: Vec<Waypoint>,
    baseline: Vec<Waypoint>,
    instructions: BTreeMap<String, Vec<Waypoint>>,
}

/// Group rows by scene and score the baseline and every instruction against
/// the scene's ground truth. Scenes come back sorted by id.
pub fn scene_evaluations(rows: &[TrajectoryRow]) -> Result<Vec<SceneEvaluation>, IngestError> {
    let mut scenes: BTreeMap<SceneId, SceneRows> = BTreeMap::new();
    for row in rows {
        let entry = scenes.entry(row.scene_id.clone()).or_default();
        let point = Waypoint::new(row.t, row.x, row.y);
        match row.condition {
            Condition::GroundTruth => entry.ground_truth.push(point),
            Condition::Baseline => entry.baseline.push(point),
            Condition::Instruction => entry
                .instructions
                .entry(row.instruction_id.clone())
                .or_default()
                .push(point),
        }
    }

    scenes
        .into_iter()
        .map(|(scene, rows)| {
            let wrap = |source| IngestError::Trajectory {
                scene: scene.clone(),
                source,
            };
            if rows.ground_truth.is_empty() {
                return Err(IngestError::MissingGroundTruth(scene));
            }
            if rows.baseline.is_empty() {
                return Err(IngestError::MissingBaseline(scene));
            }
            let truth = Trajectory::new(rows.ground_truth).map_err(wrap)?;
            let baseline = Trajectory::new(rows.baseline).map_err(wrap)?;
            let baseline_ade = ade(&baseline, &truth).map_err(wrap)?;
            let evals = rows
                .instructions
                .into_iter()
                .map(|(id, points)| {
                    let pred = Trajectory::new(points).map_err(wrap)?;
                    Ok((id, ade(&pred, &truth).map_err(wrap)?))
                })
                .collect::<Result<Vec<_>, IngestError>>()?;
            SceneEvaluation::new(scene.clone(), baseline_ade, evals).map_err(wrap)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(scene: &str, condition: Condition, id: &str, t: f64, x: f64, y: f64) -> TrajectoryRow {
        TrajectoryRow {
            scene_id: scene.into(),
            condition,
            instruction_id: id.into(),
            t,
            x,
            y,
        }
    }

    fn scene_rows() -> Vec<TrajectoryRow> {
        use Condition::*;
        vec![
            row("s1", GroundTruth, "", 0.5, 0.0, 0.0),
            row("s1", GroundTruth, "", 1.0, 1.0, 0.0),
            row("s1", Baseline, "", 0.5, 3.0, 4.0),
            row("s1", Baseline, "", 1.0, 4.0, 4.0),
            row("s1", Instruction, "slow", 0.5, 0.0, 1.0),
            row("s1", Instruction, "slow", 1.0, 1.0, 1.0),
            row("s1", Instruction, "stop", 0.5, 0.0, 0.0),
            row("s1", Instruction, "stop", 1.0, 1.0, 0.0),
        ]
    }

    #[test]
    fn evaluates_scene() {
        let evals = scene_evaluations(&scene_rows()).unwrap();
        assert_eq!(evals.len(), 1);
        assert_eq!(evals[0].baseline_ade, 5.0);
        assert_eq!(
            evals[0].instruction_evals,
            vec![("slow".to_string(), 1.0), ("stop".to_string(), 0.0)]
        );
    }

    #[test]
    fn missing_conditions() {
        let rows: Vec<_> = scene_rows()
            .into_iter()
            .filter(|r| r.condition != Condition::Baseline)
            .collect();
        assert!(matches!(scene_evaluations(&rows), Err(IngestError::MissingBaseline(_))));
        let rows: Vec<_> = scene_rows()
            .into_iter()
            .filter(|r| r.condition != Condition::GroundTruth)
            .collect();
        assert!(matches!(scene_evaluations(&rows), Err(IngestError::MissingGroundTruth(_))));
    }

    #[test]
    fn misaligned_timestamps() {
        let mut rows = scene_rows();
        rows[5].t = 1.1;
        assert!(matches!(scene_evaluations(&rows), Err(IngestError::Trajectory { .. })));
    }

    #[test]
    fn file_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        write_trajectory_table(&path, &scene_rows()).unwrap();
        assert_eq!(read_trajectory_table(&path).unwrap(), scene_rows());
        std::fs::write(&path, "scene_id,condition,instruction_id,t,x,y\ns1,instruction,,0,0,0\n").unwrap();
        assert!(matches!(read_trajectory_table(&path), Err(IngestError::Invalid { .. })));
        std::fs::write(&path, "scene_id,condition,instruction_id,t,x,y\ns1,oracle,,0,0,0\n").unwrap();
        assert!(matches!(read_trajectory_table(&path), Err(IngestError::Parse { .. })));
    }
}
