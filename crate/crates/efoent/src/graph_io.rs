//! Triple files and graph directories.
//!
//! A graph directory holds three disjoint edge files (`train.tsv`,
//! `valid.tsv`, `test.tsv`) that nest into the train, valid and test graphs,
//! plus optional `entities.tsv` / `relations.tsv` vocabularies listing one
//! name per line in id order. Without vocabulary files, ids follow first
//! appearance across the three edge files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use efoent_core::kg::TripleText;
use efoent_core::{GraphSplit, KnowledgeGraph, Triple, Vocab};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const EDGE_FILES: [&str; 3] = ["train.tsv", "valid.tsv", "test.tsv"];
pub const ENTITY_FILE: &str = "entities.tsv";
pub const RELATION_FILE: &str = "relations.tsv";
/// Provenance record written next to the edge files.
pub const SPLIT_FILE: &str = "split.json";

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a single tab-separated triple file.
pub fn load_triples(path: &Path) -> Result<KnowledgeGraph> {
    let text = read_text(path)?;
    KnowledgeGraph::parse(&text).map_err(|e| Error::in_file(path, e))
}

fn read_vocab(path: &Path) -> Result<Option<Vocab>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = read_text(path)?;
    let names: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
    let vocab = Vocab::from_names(names.iter().copied());
    if vocab.len() != names.len() {
        return Err(Error::in_file(path, "duplicate names"));
    }
    Ok(Some(vocab))
}

/// Loads a graph directory into nested train/valid/test graphs.
pub fn load_split(dir: &Path) -> Result<GraphSplit> {
    if !dir.is_dir() {
        return Err(Error::data(format!(
            "{}: expected a graph directory containing {}",
            dir.display(),
            EDGE_FILES.join(", ")
        )));
    }
    let mut text = TripleText::default();
    if let Some(v) = read_vocab(&dir.join(ENTITY_FILE))? {
        text.entities = v;
    }
    if let Some(v) = read_vocab(&dir.join(RELATION_FILE))? {
        text.relations = v;
    }
    let mut counts = [0usize; 3];
    for (i, name) in EDGE_FILES.iter().enumerate() {
        let path = dir.join(name);
        let body = read_text(&path)?;
        counts[i] = text.extend_from_str(&body).map_err(|e| Error::in_file(&path, e))?;
    }
    if text.triples.is_empty() {
        return Err(Error::data(format!("{}: no triples", dir.display())));
    }
    let (train, rest) = text.triples.split_at(counts[0]);
    let (valid, test) = rest.split_at(counts[1]);
    GraphSplit::from_edge_sets(
        Arc::new(text.entities.clone()),
        Arc::new(text.relations.clone()),
        train,
        valid,
        test,
    )
    .map_err(|e| Error::in_file(dir, e))
}

/// Loads either a graph directory (its test graph) or a single triple file.
pub fn load_any(path: &Path) -> Result<KnowledgeGraph> {
    if path.is_dir() {
        Ok(load_split(path)?.test)
    } else {
        load_triples(path)
    }
}

fn triple_lines(g: &KnowledgeGraph, triples: impl Iterator<Item = Triple>) -> String {
    let (ents, rels) = (g.entities(), g.relations());
    let mut s = String::new();
    for t in triples {
        let _ = writeln!(
            s,
            "{}\t{}\t{}",
            ents.name(t.head).unwrap_or_default(),
            rels.name(t.relation).unwrap_or_default(),
            ents.name(t.tail).unwrap_or_default()
        );
    }
    s
}

fn vocab_lines(v: &Vocab) -> String {
    v.names().iter().fold(String::new(), |mut s, n| {
        s.push_str(n);
        s.push('\n');
        s
    })
}

/// Writes `split` as a graph directory, edges sorted by id.
pub fn write_split(dir: &Path, split: &GraphSplit) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let g = &split.test;
    let train = split.train.triples().iter().copied();
    let valid = split.valid.triples().iter().copied().filter(|&t| !split.train.has_triple(t));
    let test = split.test.triples().iter().copied().filter(|&t| !split.valid.has_triple(t));
    write_text(&dir.join(EDGE_FILES[0]), &triple_lines(g, train))?;
    write_text(&dir.join(EDGE_FILES[1]), &triple_lines(g, valid))?;
    write_text(&dir.join(EDGE_FILES[2]), &triple_lines(g, test))?;
    write_text(&dir.join(ENTITY_FILE), &vocab_lines(split.entities()))?;
    write_text(&dir.join(RELATION_FILE), &vocab_lines(split.relations()))
}

/// Hex sha256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Checksum of a graph directory or triple file: every layout file that
/// exists, each hashed as its name, its length and its bytes.
pub fn graph_digest(path: &Path) -> Result<String> {
    if !path.is_dir() {
        return file_sha256(path);
    }
    let mut h = Sha256::new();
    let names = EDGE_FILES.iter().chain(&[ENTITY_FILE, RELATION_FILE]);
    for name in names {
        let p: PathBuf = path.join(name);
        if !p.exists() {
            continue;
        }
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// The `origin` recorded in a graph directory's split record.
pub fn split_origin(dir: &Path) -> String {
    let read = || -> Option<String> {
        let text = fs::read_to_string(dir.join(SPLIT_FILE)).ok()?;
        let v: serde_json::Value = serde_json::from_str(&text).ok()?;
        Some(v.get("origin")?.as_str()?.to_string())
    };
    read().unwrap_or_else(|| "unknown".into())
}

pub fn stats_line(g: &KnowledgeGraph) -> String {
    format!(
        "entities={} relations={} edges={}",
        g.num_entities(),
        g.num_relations(),
        g.num_triples()
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_directory_round_trips_ids() {
        let dir = tempfile::tempdir().unwrap();
        let g = KnowledgeGraph::parse("a\tr\tb\nc\tq\ta\nb\tr\tc\nd\tq\tb\ne\tr\ta\n").unwrap();
        let split = efoent_core::kg::build_splits(
            g.entities().clone(),
            g.relations().clone(),
            g.triples(),
            [0.6, 0.2, 0.2],
            4,
        )
        .unwrap();
        write_split(dir.path(), &split).unwrap();
        let back = load_split(dir.path()).unwrap();
        assert_eq!(back.train.triples(), split.train.triples());
        assert_eq!(back.valid.triples(), split.valid.triples());
        assert_eq!(back.test.triples(), split.test.triples());
        assert_eq!(back.entities().names(), split.entities().names());
        assert_eq!(graph_digest(dir.path()).unwrap().len(), 64);
    }

    #[test]
    fn bad_line_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.tsv");
        fs::write(&p, "a\tr\tb\nonly\ttwo\n").unwrap();
        let err = load_triples(&p).unwrap_err();
        assert!(err.message.contains("g.tsv") && err.message.contains('2'), "{err}");
    }
}
