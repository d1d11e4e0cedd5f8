//! File formats: one JSON document per embedding batch or run report, CSV
//! tables for step logs, estimator benchmarks and sweep grids.
//!
//! JSON is written pretty-printed with serde's shortest round-trip float
//! encoding; CSV fields use the same Display encoding. Both are
//! byte-deterministic for identical in-memory values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CellRecord, EstimatorRow, HarnessError, RunReport, StepRecord};
use crate::loss::EmbeddingBatch;
use crate::tensor::Vector;

/// On-disk batch schema: explicit shape plus raw rows.
#[derive(Serialize, Deserialize)]
struct BatchFile {
    k: usize,
    d: usize,
    contexts: Vec<Vec<f64>>,
    texts: Vec<Vec<f64>>,
    images: Vec<Vec<f64>>,
}

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, message: impl ToString) -> HarnessError {
    HarnessError::Parse {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn save_batch(batch: &EmbeddingBatch, path: &Path) -> Result<(), HarnessError> {
    let rows = |vs: &[Vector]| -> Vec<Vec<f64>> {
        vs.iter().map(|v| v.as_slice().to_vec()).collect()
    };
    let file = BatchFile {
        k: batch.k(),
        d: batch.dim(),
        contexts: rows(batch.contexts()),
        texts: rows(batch.texts()),
        images: rows(batch.images()),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("schema serializes");
    text.push('\n');
    write_text(path, &text)
}

pub fn load_batch(path: &Path) -> Result<EmbeddingBatch, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    // serde's message carries the missing field name and line/column
    let file: BatchFile = serde_json::from_str(&text).map_err(|e| parse_err(path, e))?;
    let check_rows = |field: &str, rows: &[Vec<f64>]| -> Result<(), HarnessError> {
        if rows.len() != file.k {
            return Err(parse_err(
                path,
                format!("field {field} has {} rows, header says k={}", rows.len(), file.k),
            ));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != file.d {
                return Err(parse_err(
                    path,
                    format!(
                        "field {field} row {i} has {} entries, header says d={}",
                        row.len(),
                        file.d
                    ),
                ));
            }
        }
        Ok(())
    };
    check_rows("contexts", &file.contexts)?;
    check_rows("texts", &file.texts)?;
    check_rows("images", &file.images)?;
    let vectors = |field: &'static str, rows: Vec<Vec<f64>>| -> Result<Vec<Vector>, HarnessError> {
        rows.into_iter()
            .enumerate()
            .map(|(i, row)| {
                Vector::new(row).map_err(|e| parse_err(path, format!("field {field} row {i}: {e}")))
            })
            .collect()
    };
    let contexts = vectors("contexts", file.contexts)?;
    let texts = vectors("texts", file.texts)?;
    let images = vectors("images", file.images)?;
    Ok(EmbeddingBatch::new(contexts, texts, images)?)
}

pub fn save_report(report: &RunReport, path: &Path) -> Result<(), HarnessError> {
    report.validate()?;
    let mut text = serde_json::to_string_pretty(report).expect("schema serializes");
    text.push('\n');
    write_text(path, &text)
}

pub fn load_report(path: &Path) -> Result<RunReport, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let report: RunReport = serde_json::from_str(&text).map_err(|e| parse_err(path, e))?;
    report.validate()?;
    Ok(report)
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn steps_csv_bytes(steps: &[StepRecord]) -> Vec<u8> {
    csv_bytes(
        &["step", "loss", "accuracy"],
        steps
            .iter()
            .map(|s| vec![s.step.to_string(), s.loss.to_string(), s.accuracy.to_string()])
            .collect(),
    )
}

pub fn save_steps_csv(steps: &[StepRecord], path: &Path) -> Result<(), HarnessError> {
    fs::write(path, steps_csv_bytes(steps)).map_err(|e| io_err(path, e))
}

pub fn estimator_csv_bytes(rows: &[EstimatorRow]) -> Vec<u8> {
    csv_bytes(
        &["k", "method", "budget", "mean_abs_err", "max_abs_err", "seconds"],
        rows.iter()
            .map(|r| {
                vec![
                    r.k.to_string(),
                    r.method.clone(),
                    r.budget.to_string(),
                    r.mean_abs_err.to_string(),
                    r.max_abs_err.to_string(),
                    r.seconds.to_string(),
                ]
            })
            .collect(),
    )
}

pub fn save_estimator_csv(rows: &[EstimatorRow], path: &Path) -> Result<(), HarnessError> {
    fs::write(path, estimator_csv_bytes(rows)).map_err(|e| io_err(path, e))
}

pub fn cells_csv_bytes(cells: &[CellRecord]) -> Vec<u8> {
    csv_bytes(
        &["alpha", "beta", "final_accuracy", "final_loss"],
        cells
            .iter()
            .map(|c| {
                vec![
                    c.alpha.to_string(),
                    c.beta.to_string(),
                    c.final_accuracy.to_string(),
                    c.final_loss.to_string(),
                ]
            })
            .collect(),
    )
}

pub fn save_cells_csv(cells: &[CellRecord], path: &Path) -> Result<(), HarnessError> {
    fs::write(path, cells_csv_bytes(cells)).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{synth_batch, SynthConfig};

    #[test]
    fn batch_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.json");
        let batch = synth_batch(&SynthConfig::new(4, 8, 0.5, 7).unwrap());
        save_batch(&batch, &path).unwrap();
        let loaded = load_batch(&path).unwrap();
        assert_eq!(batch, loaded);
        // byte determinism of the writer itself
        let first = std::fs::read(&path).unwrap();
        save_batch(&loaded, &path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }

    #[test]
    fn truncated_file_names_the_missing_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, r#"{"k": 2, "d": 2, "contexts": [[1.0, 0.0], [0.0, 1.0]]}"#)
            .unwrap();
        let err = load_batch(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("texts"), "message should name the field: {msg}");
        assert!(matches!(err, HarnessError::Parse { .. }));
    }

    #[test]
    fn shape_header_mismatches_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(
            &path,
            r#"{"k": 3, "d": 2, "contexts": [[1.0, 0.0], [0.0, 1.0]], "texts": [[1.0, 0.0], [0.0, 1.0]], "images": [[1.0, 0.0], [0.0, 1.0]]}"#,
        )
        .unwrap();
        let msg = load_batch(&path).unwrap_err().to_string();
        assert!(msg.contains("contexts") && msg.contains("k=3"), "{msg}");
        std::fs::write(
            &path,
            r#"{"k": 2, "d": 3, "contexts": [[1.0, 0.0], [0.0, 1.0]], "texts": [[1.0, 0.0], [0.0, 1.0]], "images": [[1.0, 0.0], [0.0, 1.0]]}"#,
        )
        .unwrap();
        let msg = load_batch(&path).unwrap_err().to_string();
        assert!(msg.contains("d=3"), "{msg}");
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = load_batch(Path::new("/nonexistent/batch.json")).unwrap_err();
        assert!(matches!(err, HarnessError::Io { .. }));
    }

    #[test]
    fn repo_fixture_parses_to_documented_shape() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/batch_k4_d8.json");
        let batch = load_batch(&path).unwrap();
        assert_eq!(batch.k(), 4);
        assert_eq!(batch.dim(), 8);
    }

    #[test]
    fn report_round_trips_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let report = RunReport {
            steps: vec![
                StepRecord { step: 0, loss: 1.5, accuracy: 0.25 },
                StepRecord { step: 1, loss: 1.2, accuracy: 0.5 },
            ],
            estimator: vec![],
            cells: vec![CellRecord {
                alpha: 0.2,
                beta: 0.4,
                final_accuracy: 0.5,
                final_loss: 1.2,
            }],
            phases: vec![],
        };
        save_report(&report, &path).unwrap();
        assert_eq!(load_report(&path).unwrap(), report);
        let mut bad = report.clone();
        bad.steps[1].step = 0;
        assert!(save_report(&bad, &path).is_err());
    }

    #[test]
    fn csv_headers_match_the_documented_schemas() {
        let dir = tempfile::tempdir().unwrap();
        let steps_path = dir.path().join("steps.csv");
        save_steps_csv(
            &[StepRecord { step: 0, loss: 0.5, accuracy: 0.0625 }],
            &steps_path,
        )
        .unwrap();
        let text = std::fs::read_to_string(&steps_path).unwrap();
        assert_eq!(text, "step,loss,accuracy\n0,0.5,0.0625\n");

        let bench_path = dir.path().join("bench.csv");
        save_estimator_csv(
            &[EstimatorRow {
                k: 4,
                method: "exact_subset".into(),
                budget: 16,
                mean_abs_err: 0.0,
                max_abs_err: 0.0,
                seconds: 0.0,
            }],
            &bench_path,
        )
        .unwrap();
        let text = std::fs::read_to_string(&bench_path).unwrap();
        assert_eq!(
            text,
            "k,method,budget,mean_abs_err,max_abs_err,seconds\n4,exact_subset,16,0,0,0\n"
        );

        let cells_path = dir.path().join("cells.csv");
        save_cells_csv(
            &[CellRecord {
                alpha: 0.2,
                beta: 0.4,
                final_accuracy: 0.9375,
                final_loss: -0.25,
            }],
            &cells_path,
        )
        .unwrap();
        let text = std::fs::read_to_string(&cells_path).unwrap();
        assert_eq!(
            text,
            "alpha,beta,final_accuracy,final_loss\n0.2,0.4,0.9375,-0.25\n"
        );
    }
}
