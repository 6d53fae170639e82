//! Machine-readable evaluation dumps.
//!
//! Every per-type value and every aggregate cell is stored as a JSON number
//! that parses back to the identical `f64`.

use std::path::Path;

use efoent_core::eval::{EvalReport, TypeResult, COLUMNS};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_io::read_text;

pub const FORMAT: &str = "efoent-eval";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub column: String,
    pub mrr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeRecord {
    #[serde(rename = "type")]
    pub type_name: String,
    pub seen: bool,
    pub queries: usize,
    pub id_mrr: Option<f64>,
    pub ood_mrr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    /// Other known answers of the same query are removed before ranking.
    pub filtered: bool,
    /// Tied entities count half against the ranked answer.
    pub ties: String,
    /// Cells average per-type values with equal weight per type.
    pub aggregation: String,
}

impl Default for Ranking {
    fn default() -> Self {
        Self {
            filtered: true,
            ties: "average".into(),
            aggregation: "unweighted-mean-over-types".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDump {
    pub format: String,
    pub model: String,
    pub split: String,
    pub checkpoint_sha256: String,
    pub dataset_sha256: String,
    pub ranking: Ranking,
    pub cells: Vec<Cell>,
    pub types: Vec<TypeRecord>,
    pub config: serde_json::Value,
}

impl EvalDump {
    pub fn new(model: &str, split: &str, report: &EvalReport) -> Self {
        Self {
            format: FORMAT.into(),
            model: model.into(),
            split: split.into(),
            checkpoint_sha256: String::new(),
            dataset_sha256: String::new(),
            ranking: Ranking::default(),
            cells: COLUMNS
                .iter()
                .zip(report.cells())
                .map(|(c, v)| Cell {
                    column: c.to_string(),
                    mrr: v,
                })
                .collect(),
            types: report
                .types
                .iter()
                .map(|t| TypeRecord {
                    type_name: t.type_name.clone(),
                    seen: t.seen,
                    queries: t.queries,
                    id_mrr: t.id_mrr,
                    ood_mrr: t.ood_mrr,
                })
                .collect(),
            config: serde_json::Value::Null,
        }
    }

    pub fn report(&self) -> EvalReport {
        EvalReport {
            types: self
                .types
                .iter()
                .map(|t| TypeResult {
                    type_name: t.type_name.clone(),
                    seen: t.seen,
                    queries: t.queries,
                    id_mrr: t.id_mrr,
                    ood_mrr: t.ood_mrr,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dump serializes") + "\n"
    }

    /// Reads a dump and checks that its cells agree with its per-type values.
    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let dump: Self = serde_json::from_str(&text).map_err(|e| Error::in_file(path, e))?;
        if dump.format != FORMAT {
            return Err(Error::in_file(path, format!("unexpected format `{}`", dump.format)));
        }
        let cells = dump.report().cells();
        let stored: Vec<Option<f64>> = dump.cells.iter().map(|c| c.mrr).collect();
        let columns: Vec<&str> = dump.cells.iter().map(|c| c.column.as_str()).collect();
        if columns != COLUMNS || stored != cells {
            return Err(Error::in_file(path, "aggregate cells disagree with the per-type values"));
        }
        Ok(dump)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use efoent_core::eval::QueryMrr;

    #[test]
    fn dump_round_trips_exactly() {
        let q = |id, ood| QueryMrr { id, ood };
        let report = EvalReport::from_queries([
            ("1p", q(Some(1.0 / 3.0), Some(0.1))),
            ("1p", q(Some(0.7), None)),
            ("pni", q(Some(std::f64::consts::PI / 10.0), Some(2.0 / 7.0))),
            ("3in", q(Some(0.123456789012345), Some(1e-17))),
        ])
        .unwrap();
        let dump = EvalDump::new("m", "test", &report);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        std::fs::write(&p, dump.to_json()).unwrap();
        let back = EvalDump::read(&p).unwrap();
        assert_eq!(back, dump);
        for (a, b) in back.report().cells().iter().zip(report.cells()) {
            assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        }
    }

    #[test]
    fn tampered_cells_are_rejected() {
        let report = EvalReport::from_queries([("1p", QueryMrr { id: Some(0.5), ood: None })]).unwrap();
        let mut dump = EvalDump::new("m", "test", &report);
        dump.cells[0].mrr = Some(0.6);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        std::fs::write(&p, dump.to_json()).unwrap();
        assert!(EvalDump::read(&p).is_err());
    }
}
