//! Append-only CSV training log.

use std::fs::{File, OpenOptions};
use std::path::Path;

use serde::Serialize;

use crate::TrainError;

#[derive(Debug, Clone, Default, Serialize, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub phase: &'static str,
    pub loss: f64,
    pub policy_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub imitation_loss: Option<f64>,
    pub agreement: Option<f64>,
    pub mean_return: Option<f64>,
    pub solve_rate: Option<f64>,
    pub mean_length: Option<f64>,
}

pub struct TrainLog {
    writer: csv::Writer<File>,
}

impl TrainLog {
    /// Opens `path` for appending; the header is written only to a new file.
    pub fn append(path: &Path) -> Result<Self, TrainError> {
        let existed = path.exists() && std::fs::metadata(path)?.len() > 0;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let writer = csv::WriterBuilder::new().has_headers(!existed).from_writer(file);
        Ok(TrainLog { writer })
    }

    pub fn write(&mut self, row: &LogRow) -> Result<(), TrainError> {
        self.writer.serialize(row)?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Writes to the log when one is attached.
pub(crate) fn emit(log: &mut Option<&mut TrainLog>, row: LogRow) -> Result<(), TrainError> {
    if let Some(l) = log.as_deref_mut() {
        l.write(&row)?;
    }
    Ok(())
}
