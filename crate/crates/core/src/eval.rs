//! Filtered ranking, mean reciprocal rank, and the four-cell report.
//!
//! Ties count half: an answer tied with `k` competitors gets rank
//! `1 + greater + k / 2`. Each query yields an ID(K) value over its
//! training-graph answers and an OOD(K) value over its held-out answers.
//! Cells average per-type values without weighting.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use thiserror::Error;

use crate::autodiff::Scalar;
use crate::model::{Model, ModelError};
use crate::oracle::AnswerSplit;
use crate::sampler::QuerySample;
use crate::syntax::templates;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("answer {0} is in its own exclusion set")]
    AnswerExcluded(usize),
    #[error("entity {entity} is outside the {len} scores")]
    OutOfRange { entity: usize, len: usize },
    #[error("unknown query type `{0}`")]
    UnknownType(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Filtered rank of `answer`; entities in `exclude` do not compete.
pub fn rank_answer(scores: &[f64], answer: usize, exclude: &[usize]) -> Result<f64, EvalError> {
    let len = scores.len();
    if answer >= len {
        return Err(EvalError::OutOfRange { entity: answer, len });
    }
    if exclude.contains(&answer) {
        return Err(EvalError::AnswerExcluded(answer));
    }
    let mut skip = alloc::vec![false; len];
    for &e in exclude {
        if e >= len {
            return Err(EvalError::OutOfRange { entity: e, len });
        }
        skip[e] = true;
    }
    skip[answer] = true;
    let s = scores[answer];
    let (mut greater, mut equal) = (0usize, 0usize);
    for (e, &v) in scores.iter().enumerate() {
        if !skip[e] {
            if v > s {
                greater += 1;
            } else if v == s {
                equal += 1;
            }
        }
    }
    Ok(1.0 + greater as f64 + 0.5 * equal as f64)
}

/// Ranks of all `answers` against the entities outside `known`.
///
/// `known` must contain `answers`; each answer then competes only with
/// non-answers, which is filtered ranking with `known \ {v}` excluded.
fn filtered_ranks(scores: &[f64], answers: &[usize], known: &[bool]) -> Vec<f64> {
    let mut others: Vec<f64> = scores
        .iter()
        .enumerate()
        .filter(|(e, _)| !known[*e])
        .map(|(_, &v)| v)
        .collect();
    others.sort_by(f64::total_cmp);
    answers
        .iter()
        .map(|&a| {
            let s = scores[a];
            let below = others.partition_point(|&v| v < s);
            let not_above = others.partition_point(|&v| v <= s);
            let greater = others.len() - not_above;
            let equal = not_above - below;
            1.0 + greater as f64 + 0.5 * equal as f64
        })
        .collect()
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// MRR of one query under both answer partitions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QueryMrr {
    pub id: Option<f64>,
    pub ood: Option<f64>,
}

pub fn query_mrr(scores: &[f64], split: &AnswerSplit) -> Result<QueryMrr, EvalError> {
    let len = scores.len();
    let mut known = alloc::vec![false; len];
    let a_id: Vec<usize> = split.a_id.iter().map(|&e| e as usize).collect();
    let a_ood: Vec<usize> = split.a_ood.iter().map(|&e| e as usize).collect();
    for &e in a_id.iter().chain(&a_ood) {
        if e >= len {
            return Err(EvalError::OutOfRange { entity: e, len });
        }
    }
    for &e in &a_id {
        known[e] = true;
    }
    let id = mean(filtered_ranks(scores, &a_id, &known).into_iter().map(|r| 1.0 / r));
    for &e in &a_ood {
        known[e] = true;
    }
    let ood = mean(filtered_ranks(scores, &a_ood, &known).into_iter().map(|r| 1.0 / r));
    Ok(QueryMrr { id, ood })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeResult {
    pub type_name: String,
    /// Whether the type is one of the training templates.
    pub seen: bool,
    pub queries: usize,
    pub id_mrr: Option<f64>,
    pub ood_mrr: Option<f64>,
}

/// Column titles of the summary table.
pub const COLUMNS: [&str; 6] = [
    "ID(Q)/ID(K)",
    "ID(Q)/OOD(K)",
    "OOD(Q)/ID(K)",
    "OOD(Q)/OOD(K)",
    "All/ID(K)",
    "All/OOD(K)",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    /// One entry per evaluated type, in template order.
    pub types: Vec<TypeResult>,
}

impl EvalReport {
    /// Groups per-query values by type.
    pub fn from_queries<'a>(
        results: impl IntoIterator<Item = (&'a str, QueryMrr)>,
    ) -> Result<Self, EvalError> {
        let mut groups: BTreeMap<usize, (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
        for (name, q) in results {
            let pos = templates::all()
                .iter()
                .position(|t| t.name == name)
                .ok_or_else(|| EvalError::UnknownType(name.to_string()))?;
            let g = groups.entry(pos).or_default();
            g.0.extend(q.id);
            g.1.extend(q.ood);
            g.2 += 1;
        }
        let types = groups
            .into_iter()
            .map(|(pos, (id, ood, queries))| {
                let t = &templates::all()[pos];
                TypeResult {
                    type_name: t.name.to_string(),
                    seen: t.seen,
                    queries,
                    id_mrr: mean(id),
                    ood_mrr: mean(ood),
                }
            })
            .collect();
        Ok(Self { types })
    }

    pub fn get(&self, type_name: &str) -> Option<&TypeResult> {
        self.types.iter().find(|t| t.type_name == type_name)
    }

    fn cell(&self, pick: impl Fn(&TypeResult) -> bool, ood: bool) -> Option<f64> {
        mean(
            self.types
                .iter()
                .filter(|t| pick(t))
                .filter_map(|t| if ood { t.ood_mrr } else { t.id_mrr }),
        )
    }

    /// The six summary cells, in [`COLUMNS`] order.
    pub fn cells(&self) -> [Option<f64>; 6] {
        [
            self.cell(|t| t.seen, false),
            self.cell(|t| t.seen, true),
            self.cell(|t| !t.seen, false),
            self.cell(|t| !t.seen, true),
            self.cell(|_| true, false),
            self.cell(|_| true, true),
        ]
    }
}

fn percent(v: Option<f64>) -> String {
    match v {
        Some(x) => alloc::format!("{:.1}", 100.0 * x),
        None => "—".to_string(),
    }
}

fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut parts = Vec::with_capacity(cols);
        for (i, c) in cells.enumerate() {
            let pad = width[i] - c.chars().count();
            if i == 0 {
                parts.push(alloc::format!("{c}{}", " ".repeat(pad)));
            } else {
                parts.push(alloc::format!("{}{c}", " ".repeat(pad)));
            }
        }
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut header.iter().copied());
    for r in rows {
        line(&mut r.iter().map(String::as_str));
    }
    out
}

/// MRR% summary with one row per named report.
pub fn report_table(reports: &[(&str, &EvalReport)]) -> String {
    let mut header = alloc::vec!["Model"];
    header.extend(COLUMNS);
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|(name, r)| {
            let mut row = alloc::vec![name.to_string()];
            row.extend(r.cells().iter().map(|&c| percent(c)));
            row
        })
        .collect();
    render(&header, &rows)
}

/// Per-type MRR% of a single report.
pub fn type_table(report: &EvalReport) -> String {
    let header = ["Type", "Seen", "Queries", "ID(K)", "OOD(K)"];
    let rows: Vec<Vec<String>> = report
        .types
        .iter()
        .map(|t| {
            alloc::vec![
                t.type_name.clone(),
                (if t.seen { "yes" } else { "no" }).to_string(),
                t.queries.to_string(),
                percent(t.id_mrr),
                percent(t.ood_mrr),
            ]
        })
        .collect();
    render(&header, &rows)
}

/// Scores every sample with `model` and aggregates the report.
pub fn evaluate<T: Scalar>(model: &Model<T>, samples: &[QuerySample]) -> Result<EvalReport, EvalError> {
    let mut results = Vec::with_capacity(samples.len());
    for s in samples {
        results.push((s.type_name.as_str(), score_sample(model, s)?));
    }
    EvalReport::from_queries(results)
}

pub fn score_sample<T: Scalar>(model: &Model<T>, sample: &QuerySample) -> Result<QueryMrr, EvalError> {
    let q = model.prepare(&sample.query)?;
    let scores: Vec<f64> = model.predict(&q)?.into_iter().map(Scalar::to_f64).collect();
    query_mrr(&scores, &sample.split)
}
