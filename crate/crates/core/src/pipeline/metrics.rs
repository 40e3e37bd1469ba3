//! CSV output: one header line, LF line endings, shortest round-trip floats.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{EvalRow, FrameRecord, FrameTiming, PipelineError};

fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<(), PipelineError> {
    if rows.is_empty() {
        return Err(PipelineError::Io(format!("{}: nothing to write", path.display())));
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| PipelineError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Io(e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
}

pub fn write_metrics(records: &[FrameRecord], path: &Path) -> Result<(), PipelineError> {
    write_rows(records, path)
}

pub fn read_metrics(path: &Path) -> Result<Vec<FrameRecord>, PipelineError> {
    read_rows(path)
}

pub fn write_eval_csv(rows: &[EvalRow], path: &Path) -> Result<(), PipelineError> {
    write_rows(rows, path)
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalRow>, PipelineError> {
    read_rows(path)
}

pub fn write_timings(timings: &[FrameTiming], path: &Path) -> Result<(), PipelineError> {
    write_rows(timings, path)
}

pub fn read_timings(path: &Path) -> Result<Vec<FrameTiming>, PipelineError> {
    read_rows(path)
}
