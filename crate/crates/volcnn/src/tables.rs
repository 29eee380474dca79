//! Text tables: training history, augmentation log, embedding coordinates.

use std::path::Path;

use serde::{Deserialize, Serialize};
use volcnn_core::augment::{AugmentParams, AugmentRecord, Strategy, TransformKind};
use volcnn_core::train::{EpochRecord, TrainHistory, PROB_LEVELS};
use volcnn_core::Label;

use crate::error::{read, write_atomic, Error, Result};

/// One history row; `prob_qNN` are quantiles of the predicted-class probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub loss: f64,
    pub data_loss: f64,
    pub penalty: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub prob_q0: f64,
    pub prob_q25: f64,
    pub prob_q50: f64,
    pub prob_q75: f64,
    pub prob_q100: f64,
}

impl From<&EpochRecord> for HistoryRow {
    fn from(r: &EpochRecord) -> Self {
        debug_assert_eq!(PROB_LEVELS.len(), 5);
        let q = r.prob_quantiles;
        Self {
            epoch: r.epoch,
            loss: r.loss,
            data_loss: r.data_loss,
            penalty: r.penalty,
            train_acc: r.train_acc,
            val_acc: r.val_acc,
            prob_q0: q[0],
            prob_q25: q[1],
            prob_q50: q[2],
            prob_q75: q[3],
            prob_q100: q[4],
        }
    }
}

fn csv_bytes<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::parse(path, e))?;
    }
    w.into_inner().map_err(|e| Error::parse(path, e.to_string()))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let bytes = read(path)?;
    csv::Reader::from_reader(bytes.as_slice())
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::parse(path, e))
}

pub fn history_csv(path: &Path, history: &TrainHistory) -> Result<Vec<u8>> {
    csv_bytes(path, history.epochs.iter().map(HistoryRow::from))
}

pub fn write_history(path: &Path, history: &TrainHistory) -> Result<()> {
    write_atomic(path, &history_csv(path, history)?)
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRow>> {
    read_csv(path)
}

/// One augmented sample: the log record with the source id resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentLogLine {
    pub source_id: String,
    pub strategy: Strategy,
    pub kind: TransformKind,
    pub params: AugmentParams,
    pub seed_position: u64,
}

pub fn write_augment_log(path: &Path, log: &[AugmentRecord], source_ids: &[String]) -> Result<()> {
    let mut out = Vec::new();
    for r in log {
        let line = AugmentLogLine {
            source_id: source_ids[r.source].clone(),
            strategy: r.strategy,
            kind: r.kind,
            params: r.params,
            seed_position: r.seed_position,
        };
        serde_json::to_writer(&mut out, &line).expect("log line serializes");
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

pub fn read_augment_log(path: &Path) -> Result<Vec<AugmentLogLine>> {
    let bytes = read(path)?;
    serde_json::Deserializer::from_slice(&bytes)
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::parse(path, e))
}

/// A 2D t-SNE coordinate of one sample at one conv layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub layer: usize,
    pub split: String,
    pub id: String,
    pub label: Label,
    pub x: f64,
    pub y: f64,
}

pub fn write_embeddings(path: &Path, rows: &[EmbeddingRow]) -> Result<()> {
    write_atomic(path, &csv_bytes(path, rows)?)
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRow>> {
    read_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_round_trip() {
        let history = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 1,
                loss: 0.5,
                data_loss: 0.4,
                penalty: 0.1,
                train_acc: 0.75,
                val_acc: 0.5,
                prob_quantiles: [0.5, 0.6, 0.7, 0.8, 0.9],
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        write_history(&path, &history).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,loss,data_loss,penalty,train_acc,val_acc,prob_q0,"));
        assert_eq!(read_history(&path).unwrap(), vec![HistoryRow::from(&history.epochs[0])]);
    }
}
