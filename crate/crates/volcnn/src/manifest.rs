//! Manifest CSV (`id,path,label,cohort_tag`) and fold-plan files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use volcnn_core::dataset::{class_totals, validate_records, FoldPlan, SampleRecord};
use volcnn_core::volume::Volume3D;
use volcnn_core::Label;

use crate::error::{read, read_string, write_atomic, Error, Result};
use crate::format::read_volume;

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    id: String,
    path: String,
    label: String,
    cohort_tag: String,
}

pub fn parse_label(s: &str) -> Option<Label> {
    match s.trim().to_ascii_uppercase().as_str() {
        "CN" | "0" => Some(Label::Cn),
        "AD" | "1" => Some(Label::Ad),
        _ => None,
    }
}

/// A manifest with paths resolved against its own directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub source: PathBuf,
    pub records: Vec<SampleRecord>,
}

impl Manifest {
    pub fn class_totals(&self) -> [usize; 2] {
        class_totals(&self.records)
    }

    pub fn resolve(&self, record: &SampleRecord) -> PathBuf {
        let p = Path::new(&record.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.source.parent().unwrap_or(Path::new(".")).join(p)
        }
    }

    /// Loads every listed volume, in manifest order.
    pub fn load_volumes(&self) -> Result<Vec<Volume3D>> {
        self.records.iter().map(|r| read_volume(&self.resolve(r))).collect()
    }
}

pub fn parse_manifest(path: &Path, bytes: &[u8]) -> Result<Vec<SampleRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let mut records = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::parse(path, e))?;
        let label = parse_label(&row.label)
            .ok_or_else(|| Error::parse(path, format!("row {}: unknown label `{}`", i + 1, row.label)))?;
        if row.id.is_empty() || row.path.is_empty() {
            return Err(Error::parse(path, format!("row {}: empty id or path", i + 1)));
        }
        records.push(SampleRecord { id: row.id, path: row.path, label, cohort_tag: row.cohort_tag });
    }
    validate_records(&records)?;
    Ok(records)
}

/// Reads and validates a manifest; duplicate ids are rejected.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    Ok(Manifest { source: path.to_path_buf(), records: parse_manifest(path, &read(path)?)? })
}

pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(Row {
            id: r.id.clone(),
            path: r.path.clone(),
            label: r.label.name().into(),
            cohort_tag: r.cohort_tag.clone(),
        })
        .map_err(|e| Error::parse(path, e))?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| Error::parse(path, e.to_string()))?)
}

#[derive(Serialize, Deserialize)]
struct FoldFile {
    k: usize,
    seed: u64,
    /// Per fold: `[CN, AD]`.
    class_counts: Vec<[usize; 2]>,
    assignments: Vec<Assignment>,
}

#[derive(Serialize, Deserialize)]
struct Assignment {
    id: String,
    label: Label,
    fold: usize,
}

pub fn fold_plan_json(plan: &FoldPlan) -> String {
    let file = FoldFile {
        k: plan.k,
        seed: plan.seed,
        class_counts: plan.class_counts(),
        assignments: plan
            .assignments
            .iter()
            .map(|(id, label, fold)| Assignment { id: id.clone(), label: *label, fold: *fold })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("fold plan serializes") + "\n"
}

pub fn write_fold_plan(path: &Path, plan: &FoldPlan) -> Result<()> {
    write_atomic(path, fold_plan_json(plan).as_bytes())
}

pub fn read_fold_plan(path: &Path) -> Result<FoldPlan> {
    let file: FoldFile = serde_json::from_str(&read_string(path)?).map_err(|e| Error::parse(path, e))?;
    let plan = FoldPlan {
        k: file.k,
        seed: file.seed,
        assignments: file.assignments.into_iter().map(|a| (a.id, a.label, a.fold)).collect(),
    };
    if plan.assignments.iter().any(|a| a.2 >= plan.k) {
        return Err(Error::parse(path, "fold index out of range"));
    }
    Ok(plan)
}
