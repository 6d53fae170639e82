//! Query dataset files: one JSON record per line per purpose, plus a
//! manifest describing how the dataset was built.

use std::collections::BTreeMap;
use std::path::Path;

use efoent_core::sampler::{Dataset, Profile, Purpose, QuerySample};
use efoent_core::{parse_efo, AnswerSplit};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_io::{read_text, sha256_hex, write_text};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SYNTAX_VERSION: u32 = 1;
/// Every symbol of the EFO string is one token; commas are dropped.
pub const TOKENIZATION: &str = "efo-symbols-commas-dropped";

pub fn part_file(purpose: Purpose) -> String {
    format!("{}.jsonl", purpose.as_str())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    #[serde(rename = "type")]
    pub type_name: String,
    /// Grounded EFO string with id-valued symbols, e.g. `r:3(s:17,f)`.
    pub query: String,
    pub a_id: Vec<u32>,
    pub a_ood: Vec<u32>,
    pub purpose: String,
    pub seed: u64,
    pub index: u64,
}

impl From<&QuerySample> for QueryRecord {
    fn from(s: &QuerySample) -> Self {
        Self {
            type_name: s.type_name.clone(),
            query: s.query.to_string(),
            a_id: s.split.a_id.clone(),
            a_ood: s.split.a_ood.clone(),
            purpose: s.purpose.as_str().to_string(),
            seed: s.seed,
            index: s.index,
        }
    }
}

impl QueryRecord {
    pub fn into_sample(self) -> std::result::Result<QuerySample, String> {
        let query = parse_efo(&self.query).map_err(|e| format!("query `{}`: {e}", self.query))?;
        if !query.is_grounded() {
            return Err(format!("query `{}` has unbound placeholders", self.query));
        }
        let purpose: Purpose = self.purpose.parse().map_err(|_| format!("unknown purpose `{}`", self.purpose))?;
        Ok(QuerySample {
            type_name: self.type_name,
            query,
            split: AnswerSplit {
                a_id: self.a_id,
                a_ood: self.a_ood,
            },
            purpose,
            seed: self.seed,
            index: self.index,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub name: String,
    /// `null` means exhaustive 1p plus twice that many per other type.
    pub train_per_type: Option<usize>,
    pub eval_per_type: usize,
    /// Evaluation counts are applied to every type separately.
    pub eval_count_scope: String,
    pub train_types: Vec<String>,
    pub eval_types: Vec<String>,
    pub max_attempts: usize,
}

impl From<&Profile> for ProfileRecord {
    fn from(p: &Profile) -> Self {
        Self {
            name: p.name.clone(),
            train_per_type: p.train_per_type,
            eval_per_type: p.eval_per_type,
            eval_count_scope: "per-type".to_string(),
            train_types: p.train_types.clone(),
            eval_types: p.eval_types.clone(),
            max_attempts: p.max_attempts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRef {
    pub path: String,
    pub sha256: String,
    /// How the train/valid/test edges were obtained (`given-files`,
    /// `single-file`, `resplit` or `unknown`).
    pub origin: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub syntax_version: u32,
    /// Token sequence rule fed to the encoder.
    pub tokenization: String,
    pub graph: GraphRef,
    pub seed: u64,
    pub profile: ProfileRecord,
    /// Purpose -> type -> count.
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
    /// File name -> sha256.
    pub files: BTreeMap<String, String>,
    /// Every effective setting of the run that built the dataset.
    pub config: serde_json::Value,
}

pub fn encode_part(samples: &[QuerySample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(&QueryRecord::from(s)).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn decode_part(text: &str, origin: &Path) -> Result<Vec<QuerySample>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let rec: QueryRecord = serde_json::from_str(line)
                .map_err(|e| Error::in_file(origin, format!("line {}: {e}", i + 1)))?;
            rec.into_sample()
                .map_err(|e| Error::in_file(origin, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Writes the three part files and the manifest. Returns the manifest.
pub fn write_dataset(
    dir: &Path,
    ds: &Dataset,
    profile: &Profile,
    seed: u64,
    graph: GraphRef,
    config: serde_json::Value,
) -> Result<Manifest> {
    let mut files = BTreeMap::new();
    let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for p in Purpose::ALL {
        let body = encode_part(ds.part(p));
        let name = part_file(p);
        write_text(&dir.join(&name), &body)?;
        files.insert(name, sha256_hex(body.as_bytes()));
        counts.insert(p.as_str().to_string(), BTreeMap::new());
    }
    for ((p, t), n) in ds.counts() {
        counts.entry(p.as_str().to_string()).or_default().insert(t, n);
    }
    let manifest = Manifest {
        format: "efoent-dataset".to_string(),
        syntax_version: SYNTAX_VERSION,
        tokenization: TOKENIZATION.into(),
        graph,
        seed,
        profile: profile.into(),
        counts,
        files,
        config,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_text(&dir.join(MANIFEST_FILE), &text)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = read_text(&path)?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::in_file(&path, e))?;
    if m.format != "efoent-dataset" {
        return Err(Error::in_file(&path, format!("unexpected format `{}`", m.format)));
    }
    if m.syntax_version != SYNTAX_VERSION {
        return Err(Error::in_file(&path, format!("unsupported syntax version {}", m.syntax_version)));
    }
    Ok(m)
}

/// Reads one part, checking it against the manifest checksum.
pub fn read_part(dir: &Path, purpose: Purpose) -> Result<Vec<QuerySample>> {
    let manifest = read_manifest(dir)?;
    let name = part_file(purpose);
    let path = dir.join(&name);
    let text = read_text(&path)?;
    match manifest.files.get(&name) {
        Some(sum) if *sum == sha256_hex(text.as_bytes()) => {}
        Some(_) => return Err(Error::in_file(&path, "checksum does not match the manifest")),
        None => return Err(Error::in_file(&path, "not listed in the manifest")),
    }
    decode_part(&text, &path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_round_trip() {
        let s = QuerySample {
            type_name: "2in".into(),
            query: parse_efo("(r:0(s:3,f))&(!(r:1(s:5,f)))").unwrap(),
            split: AnswerSplit {
                a_id: vec![1, 4],
                a_ood: vec![7],
            },
            purpose: Purpose::Test,
            seed: 9,
            index: 2,
        };
        let text = encode_part(std::slice::from_ref(&s));
        assert_eq!(
            text,
            "{\"type\":\"2in\",\"query\":\"(r:0(s:3,f))&(!(r:1(s:5,f)))\",\"a_id\":[1,4],\"a_ood\":[7],\"purpose\":\"test\",\"seed\":9,\"index\":2}\n"
        );
        assert_eq!(decode_part(&text, Path::new("x")).unwrap(), vec![s]);
    }

    #[test]
    fn ungrounded_records_are_rejected() {
        let line = r#"{"type":"1p","query":"r1(s1,f)","a_id":[],"a_ood":[],"purpose":"train","seed":0,"index":0}"#;
        assert!(decode_part(line, Path::new("x")).is_err());
    }
}
