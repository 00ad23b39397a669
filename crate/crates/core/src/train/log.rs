use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    /// Retained over sampled anchors; empty for stage 2.
    pub retained_frac: Option<f64>,
    pub seconds: f64,
}

/// Per-epoch training history, contiguous from epoch 0.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn push(&mut self, record: EpochRecord) {
        debug_assert_eq!(record.epoch, self.records.len());
        self.records.push(record);
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Epoch with the lowest loss (first on ties).
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().fold(None, |best: Option<&EpochRecord>, r| match best {
            Some(b) if b.loss <= r.loss => Some(b),
            _ => Some(r),
        })
    }

    /// SHA-256 over the exact bits of the loss column.
    pub fn loss_digest(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.records {
            h.update(r.loss.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::Serde(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        let records = r
            .deserialize()
            .collect::<std::result::Result<Vec<EpochRecord>, _>>()
            .map_err(|e| Error::Serde(e.to_string()))?;
        Ok(TrainLog { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let mut log = TrainLog::default();
        log.push(EpochRecord {
            epoch: 0,
            loss: 1.25,
            lr: 1e-4,
            retained_frac: Some(0.75),
            seconds: 0.5,
        });
        log.push(EpochRecord {
            epoch: 1,
            loss: -0.1,
            lr: 5e-5,
            retained_frac: None,
            seconds: 0.25,
        });
        log.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,loss,lr,retained_frac,seconds"));
        assert_eq!(TrainLog::read_csv(&path).unwrap(), log);
        assert_eq!(log.best().unwrap().epoch, 1);
    }
}
