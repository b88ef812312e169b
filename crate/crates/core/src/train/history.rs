use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::manifest::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    EarlyStopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

pub(crate) fn records_to_csv(records: &[EpochRecord]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(w.into_inner().expect("flushed"))
}

pub(crate) fn records_from_csv(bytes: &[u8]) -> Result<Vec<EpochRecord>, csv::Error> {
    csv::Reader::from_reader(bytes).deserialize().collect()
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        String::from_utf8(records_to_csv(&self.epochs).expect("in-memory csv")).expect("utf-8 csv")
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        write_atomic(path, self.to_csv().as_bytes()).map_err(|e| TrainError::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Vec<EpochRecord>, TrainError> {
        let bytes = std::fs::read(path).map_err(|e| TrainError::io(path, e))?;
        records_from_csv(&bytes).map_err(|e| TrainError::io(path, e))
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|r| r.epoch == self.best_epoch)
    }
}
