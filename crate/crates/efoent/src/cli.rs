//! Command-line entry point.

use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use efoent_core::autodiff::Scalar;
use efoent_core::eval::{report_table, score_sample, type_table, EvalReport, COLUMNS};
use efoent_core::kg::{build_splits, TripleText};
use efoent_core::model::{Model, ModelConfig, PeKind, Pooling};
use efoent_core::rng;
use efoent_core::sampler::{assemble, plan, sample_type, Profile, Purpose, SampleError};
use efoent_core::syntax::{convert_to_lisp, parse_efo, parse_lisp, serialize_efo, Grounding, QueryAst};
use efoent_core::train::{prepare_examples, train, TrainConfig, TrainError};
use efoent_core::{answer_set, GraphSplit, KnowledgeGraph};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::{self, Container};
use crate::config::{merge, process_env, ConfigFile};
use crate::dataset::{self, GraphRef};
use crate::error::{Error, ErrorKind, Result};
use crate::graph_io::{self, file_sha256, graph_digest, read_text, stats_line, write_text};
use crate::parallel;
use crate::plot::grouped_bars;
use crate::report::EvalDump;

#[derive(Debug, Parser)]
#[command(name = "efoent", version, about = "Exact and learned answering of existential first-order queries over knowledge graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load triple files, print graph statistics, optionally write a graph directory.
    Ingest(IngestArgs),
    /// Shuffle one triple file into nested train/valid/test graphs.
    Split(SplitArgs),
    /// Generate grounded query datasets from a graph directory.
    Sample(SampleArgs),
    /// Print the exact answer set of a query, one entity id per line.
    Oracle(OracleArgs),
    /// Convert a query between EFO and Lisp-like syntax.
    Convert(ConvertArgs),
    /// Train an encoder on a dataset's training queries.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset part and write an evaluation dump.
    Eval(EvalArgs),
    /// Tabulate evaluation dumps; optionally per type and as SVG charts.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// One triple file, or three (train, valid, test edges).
    #[arg(required = true, num_args = 1..=3)]
    pub files: Vec<PathBuf>,
    /// Write the graph as a directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub triples: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: SplitFlags,
}

#[derive(Debug, Default, Args, Serialize)]
pub struct SplitFlags {
    /// Train, valid and test fractions.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratios: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub ratios: Vec<f64>,
    pub seed: u64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self {
            ratios: vec![0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Graph directory.
    #[arg(long)]
    pub graph: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: SampleFlags,
}

#[derive(Debug, Default, Args, Serialize)]
pub struct SampleFlags {
    /// `desk`, `paper-scale` or `custom`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_per_type: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_per_type: Option<usize>,
    /// Comma-separated training types (default: all seen types).
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_types: Option<Vec<String>>,
    /// Comma-separated evaluation types (default: all types).
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_types: Option<Vec<String>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_attempts: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSettings {
    pub profile: String,
    pub train_per_type: Option<usize>,
    pub eval_per_type: Option<usize>,
    pub train_types: Vec<String>,
    pub eval_types: Vec<String>,
    pub max_attempts: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for SampleSettings {
    fn default() -> Self {
        Self {
            profile: "desk".into(),
            train_per_type: None,
            eval_per_type: None,
            train_types: Vec::new(),
            eval_types: Vec::new(),
            max_attempts: Profile::DEFAULT_MAX_ATTEMPTS,
            seed: 0,
            threads: 0,
        }
    }
}

impl SampleSettings {
    pub fn profile(&self) -> Result<Profile> {
        let mut p = match self.profile.as_str() {
            "desk" | "desk-scale" => {
                let mut p = Profile::desk();
                if let Some(n) = self.train_per_type {
                    p.train_per_type = Some(n);
                }
                if let Some(n) = self.eval_per_type {
                    p.eval_per_type = n;
                }
                p
            }
            "paper-scale" => {
                if self.train_per_type.is_some() {
                    return Err(Error::usage("paper-scale enumerates 1p; --train-per-type does not apply"));
                }
                Profile::paper_scale(self.eval_per_type.unwrap_or(5000))
            }
            "custom" => match (self.train_per_type, self.eval_per_type) {
                (Some(t), Some(e)) => Profile::custom("custom", t, e),
                _ => return Err(Error::usage("the custom profile needs --train-per-type and --eval-per-type")),
            },
            other => return Err(Error::usage(format!("unknown profile `{other}` (desk, paper-scale, custom)"))),
        };
        if !self.train_types.is_empty() {
            p.train_types = self.train_types.clone();
        }
        if !self.eval_types.is_empty() {
            p.eval_types = self.eval_types.clone();
        }
        p.max_attempts = self.max_attempts;
        for t in p.train_types.iter().chain(&p.eval_types) {
            if efoent_core::syntax::templates::by_name(t).is_none() {
                return Err(Error::usage(format!("unknown query type `{t}`")));
            }
        }
        if let Some(t) = p
            .train_types
            .iter()
            .find(|t| !efoent_core::syntax::templates::by_name(t).is_some_and(|q| q.seen))
        {
            return Err(Error::usage(format!("`{t}` is not a training type")));
        }
        Ok(p)
    }
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Triple file or graph directory.
    #[arg(long)]
    pub graph: PathBuf,
    /// Graph of a directory to answer on: train, valid or test.
    #[arg(long, default_value = "test")]
    pub level: String,
    /// Query text; read from stdin when absent.
    #[arg(long)]
    pub query: Option<String>,
    /// The query is in Lisp-like syntax.
    #[arg(long)]
    pub lisp: bool,
    /// Placeholder bindings by name, e.g. `s1=a,r1=likes`.
    #[arg(long, value_delimiter = ',')]
    pub bind: Vec<String>,
    /// Print entity names instead of ids.
    #[arg(long)]
    pub names: bool,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Target syntax: `lisp` or `efo`.
    #[arg(long)]
    pub to: String,
    /// Query text; read from stdin when absent.
    pub query: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Graph directory the dataset was sampled from.
    #[arg(long)]
    pub graph: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the checkpoint and logs.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Frozen entity/relation embeddings (tensor container with symbol names).
    #[arg(long)]
    pub frozen_embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Default, Args, Serialize)]
pub struct TrainFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_model: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_layers: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_heads: Option<usize>,
    /// `absolute`, `relative` or `logirpe`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pe: Option<String>,
    /// `sum`, `mean` or `max`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pooling: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adjacency_mask: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_smoothing: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// `f32` or `f64`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<String>,
    /// Validation MRR every N steps (0 = never).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub pe: String,
    pub pooling: String,
    pub adjacency_mask: bool,
    pub dropout: f64,
    pub lr: f64,
    pub warmup: u64,
    pub label_smoothing: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    pub precision: String,
    pub eval_every: u64,
    pub threads: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let m = ModelConfig::new(1, 1);
        let t = TrainConfig::default();
        Self {
            d_model: m.d_model,
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            pe: m.pe_kind.as_str().into(),
            pooling: m.pooling.as_str().into(),
            adjacency_mask: m.use_adjacency_mask,
            dropout: m.dropout,
            lr: t.lr,
            warmup: t.warmup,
            label_smoothing: t.label_smoothing,
            batch_size: t.batch_size,
            max_steps: t.max_steps,
            seed: t.seed,
            precision: "f32".into(),
            eval_every: 0,
            threads: 0,
        }
    }
}

impl TrainSettings {
    pub fn model_config(&self, num_entities: usize, num_relations: usize) -> Result<ModelConfig> {
        let mut c = ModelConfig::new(num_entities, num_relations);
        c.d_model = self.d_model;
        c.n_layers = self.n_layers;
        c.n_heads = self.n_heads;
        c.pe_kind = self.pe.parse::<PeKind>().map_err(|e| Error::usage(format!("--pe: {e}")))?;
        c.pooling = self.pooling.parse::<Pooling>().map_err(|e| Error::usage(format!("--pooling: {e}")))?;
        c.use_adjacency_mask = self.adjacency_mask;
        c.dropout = self.dropout;
        c.validate().map_err(|e| Error::usage(e.to_string()))?;
        Ok(c)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let c = TrainConfig {
            lr: self.lr,
            warmup: self.warmup,
            label_smoothing: self.label_smoothing,
            batch_size: self.batch_size,
            max_steps: self.max_steps,
            seed: self.seed,
        };
        c.validate().map_err(|e| Error::usage(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluation dump to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Row label in reports (default: checkpoint file stem).
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: EvalFlags,
}

#[derive(Debug, Default, Args, Serialize)]
pub struct EvalFlags {
    /// Dataset part: `valid` or `test`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    /// Comma-separated types to keep (default: all).
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub types: Option<Vec<String>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub split: String,
    pub types: Vec<String>,
    pub threads: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            split: "test".into(),
            types: Vec::new(),
            threads: 0,
        }
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation dumps, one table row each.
    #[arg(required = true)]
    pub dumps: Vec<PathBuf>,
    /// Also print per-type MRR tables.
    #[arg(long)]
    pub per_type: bool,
    /// Directory for SVG bar charts.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

/// Parses `args` and runs the command, writing results to `out`.
pub fn run_with(args: impl IntoIterator<Item = OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => ErrorKind::Usage.exit_code(),
            };
            let sink: &mut dyn Write = if code == 0 { out } else { err };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a, out),
        Command::Split(a) => split(a, out),
        Command::Sample(a) => sample(a, out),
        Command::Oracle(a) => oracle(a, out),
        Command::Convert(a) => convert(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Report(a) => report(a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::runtime(format!("cannot write output: {e}")))
}

fn read_stdin() -> Result<String> {
    let mut s = String::new();
    std::io::stdin()
        .read_to_string(&mut s)
        .map_err(|e| Error::usage(format!("cannot read stdin: {e}")))?;
    Ok(s.trim().to_string())
}

fn pretty(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("metadata serializes") + "\n"
}

fn ingest(a: IngestArgs, out: &mut dyn Write) -> Result<()> {
    let split = match a.files.as_slice() {
        [one] => {
            let g = graph_io::load_triples(one)?;
            let empty: [efoent_core::Triple; 0] = [];
            GraphSplit::from_edge_sets(g.entities().clone(), g.relations().clone(), g.triples(), &empty, &empty)
                .map_err(|e| Error::in_file(one, e))?
        }
        [train, valid, test] => {
            let mut text = TripleText::default();
            let mut counts = Vec::new();
            for p in [train, valid, test] {
                let body = read_text(p)?;
                counts.push(text.extend_from_str(&body).map_err(|e| Error::in_file(p, e))?);
            }
            if text.triples.is_empty() {
                return Err(Error::data("no triples in the given files"));
            }
            let (tr, rest) = text.triples.split_at(counts[0]);
            let (va, te) = rest.split_at(counts[1]);
            GraphSplit::from_edge_sets(
                std::sync::Arc::new(text.entities.clone()),
                std::sync::Arc::new(text.relations.clone()),
                tr,
                va,
                te,
            )
            .map_err(|e| Error::data(e.to_string()))?
        }
        _ => return Err(Error::usage("ingest takes one triple file or three (train, valid, test)")),
    };
    emit(out, &format!("{}\n", stats_line(&split.test)))?;
    if let Some(dir) = a.out {
        graph_io::write_split(&dir, &split)?;
        let sources = a
            .files
            .iter()
            .map(|p| Ok(json!({"path": p.display().to_string(), "sha256": file_sha256(p)?})))
            .collect::<Result<Vec<_>>>()?;
        let meta = json!({
            "origin": if a.files.len() == 3 { "given-files" } else { "single-file" },
            "sources": sources,
            "train": stats_line(&split.train),
            "valid": stats_line(&split.valid),
            "test": stats_line(&split.test),
        });
        write_text(&dir.join(graph_io::SPLIT_FILE), &pretty(&meta))?;
    }
    Ok(())
}

fn split(a: SplitArgs, out: &mut dyn Write) -> Result<()> {
    let file = ConfigFile::load(a.config.as_deref())?;
    let (s, echo): (SplitSettings, _) = merge("split", &file, process_env(), &a.flags)?;
    let ratios: [f64; 3] = s
        .ratios
        .as_slice()
        .try_into()
        .map_err(|_| Error::usage("--ratios takes exactly three fractions"))?;
    let g = graph_io::load_triples(&a.triples)?;
    let split = build_splits(g.entities().clone(), g.relations().clone(), g.triples(), ratios, s.seed)
        .map_err(|e| Error::usage(e.to_string()))?;
    graph_io::write_split(&a.out, &split)?;
    let meta = json!({
        "origin": "resplit",
        "source": a.triples.display().to_string(),
        "source_sha256": file_sha256(&a.triples)?,
        "settings": echo,
        "train": stats_line(&split.train),
        "valid": stats_line(&split.valid),
        "test": stats_line(&split.test),
    });
    write_text(&a.out.join(graph_io::SPLIT_FILE), &pretty(&meta))?;
    emit(
        out,
        &format!(
            "train {}\nvalid {}\ntest {}\n",
            stats_line(&split.train),
            stats_line(&split.valid),
            stats_line(&split.test)
        ),
    )
}

fn sample_error(e: SampleError) -> Error {
    match e {
        SampleError::UnknownType(_) => Error::usage(e.to_string()),
        SampleError::Exhausted { .. } => Error::runtime(e.to_string()),
        SampleError::Oracle(_) => Error::data(e.to_string()),
    }
}

/// Builds a dataset with sampling spread over worker threads. The result
/// does not depend on the thread count.
pub fn build_dataset_parallel(
    splits: &GraphSplit,
    profile: &Profile,
    seed: u64,
    threads: usize,
) -> std::result::Result<efoent_core::sampler::Dataset, SampleError> {
    let items = plan(profile, splits)?;
    // split work per (purpose, type) and then by index range so large
    // types spread across workers
    let workers = parallel::worker_count(threads);
    let parts = parallel::map(&items, workers, |&(p, t, n)| {
        sample_type(splits, t, p, n, seed, profile.max_attempts)
    });
    let parts = parts.into_iter().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(assemble(profile, splits, parts, seed))
}

fn sample(a: SampleArgs, out: &mut dyn Write) -> Result<()> {
    let file = ConfigFile::load(a.config.as_deref())?;
    let (s, echo): (SampleSettings, _) = merge("sample", &file, process_env(), &a.flags)?;
    let profile = s.profile()?;
    let splits = graph_io::load_split(&a.graph)?;
    let ds = build_dataset_parallel(&splits, &profile, s.seed, s.threads).map_err(sample_error)?;
    let graph = GraphRef {
        path: a.graph.display().to_string(),
        sha256: graph_digest(&a.graph)?,
        origin: graph_io::split_origin(&a.graph),
    };
    let mut echo = echo;
    echo.as_object_mut().expect("settings object").remove("threads");
    let m = dataset::write_dataset(&a.out, &ds, &profile, s.seed, graph, echo)?;
    for p in Purpose::ALL {
        let n: usize = m.counts[p.as_str()].values().sum();
        let types = m.counts[p.as_str()].len();
        emit(out, &format!("{} queries={n} types={types}\n", p.as_str()))?;
    }
    Ok(())
}

fn resolve_bindings(ast: &QueryAst, binds: &[String], g: &KnowledgeGraph) -> Result<QueryAst> {
    if ast.is_grounded() {
        if !binds.is_empty() {
            return Err(Error::usage("the query is already grounded; drop --bind"));
        }
        return Ok(ast.clone());
    }
    let mut grounding = Grounding::default();
    for b in binds {
        let (slot, name) = b
            .split_once('=')
            .ok_or_else(|| Error::usage(format!("binding `{b}` is not slot=name")))?;
        let slot = slot.trim();
        let index = |prefix: char| -> Option<u32> { slot.strip_prefix(prefix)?.parse().ok() };
        if let Some(k) = index('s') {
            let id = g
                .entities()
                .id(name.trim())
                .ok_or_else(|| Error::data(format!("unknown entity `{name}`")))?;
            grounding.constants.insert(k, id);
        } else if let Some(k) = index('r') {
            let id = g
                .relations()
                .id(name.trim())
                .ok_or_else(|| Error::data(format!("unknown relation `{name}`")))?;
            grounding.relations.insert(k, id);
        } else {
            return Err(Error::usage(format!("binding `{b}`: slots look like s1 or r2")));
        }
    }
    ast.ground(&grounding).map_err(|e| Error::usage(e.to_string()))
}

fn oracle(a: OracleArgs, out: &mut dyn Write) -> Result<()> {
    let text = match a.query {
        Some(q) => q,
        None => read_stdin()?,
    };
    let ast = if a.lisp { parse_lisp(&text) } else { parse_efo(&text) }.map_err(|e| Error::usage(e.to_string()))?;
    let g = if a.graph.is_dir() {
        let splits = graph_io::load_split(&a.graph)?;
        let purpose: Purpose = a
            .level
            .parse()
            .map_err(|_| Error::usage(format!("--level `{}`: expected train, valid or test", a.level)))?;
        purpose.graph(&splits).clone()
    } else {
        graph_io::load_triples(&a.graph)?
    };
    let q = resolve_bindings(&ast, &a.bind, &g)?;
    let answers = answer_set(&g, &q).map_err(|e| Error::data(e.to_string()))?;
    let mut s = String::new();
    for e in answers {
        if a.names {
            s.push_str(g.entities().name(e).unwrap_or_default());
        } else {
            s.push_str(&e.to_string());
        }
        s.push('\n');
    }
    emit(out, &s)
}

fn convert(a: ConvertArgs, out: &mut dyn Write) -> Result<()> {
    let text = match a.query {
        Some(q) => q,
        None => read_stdin()?,
    };
    let converted = match a.to.as_str() {
        "lisp" => {
            let ast = parse_efo(&text).map_err(|e| Error::usage(e.to_string()))?;
            convert_to_lisp(&ast).map_err(|e| Error::data(e.to_string()))?
        }
        "efo" => serialize_efo(&parse_lisp(&text).map_err(|e| Error::usage(e.to_string()))?),
        other => return Err(Error::usage(format!("--to `{other}`: expected lisp or efo"))),
    };
    emit(out, &format!("{converted}\n"))
}

fn train_error(e: TrainError) -> Error {
    match e {
        TrainError::NonFinite { .. } => Error::runtime(e.to_string()),
        TrainError::Config(_) => Error::usage(e.to_string()),
        _ => Error::data(e.to_string()),
    }
}

fn check_dataset_graph(data: &Path, graph: &Path) -> Result<dataset::Manifest> {
    let m = dataset::read_manifest(data)?;
    let digest = graph_digest(graph)?;
    if m.graph.sha256 != digest {
        return Err(Error::data(format!(
            "{}: dataset was sampled from a different graph (checksum {} vs {})",
            data.display(),
            m.graph.sha256,
            digest
        )));
    }
    Ok(m)
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let file = ConfigFile::load(a.config.as_deref())?;
    let (s, echo): (TrainSettings, _) = merge("train", &file, process_env(), &a.flags)?;
    match s.precision.as_str() {
        "f32" => train_typed::<f32>(&a, &s, echo, out),
        "f64" => train_typed::<f64>(&a, &s, echo, out),
        other => Err(Error::usage(format!("--precision `{other}`: expected f32 or f64"))),
    }
}

fn train_typed<T: Scalar>(a: &TrainArgs, s: &TrainSettings, echo: serde_json::Value, out: &mut dyn Write) -> Result<()> {
    let splits = graph_io::load_split(&a.graph)?;
    let manifest = check_dataset_graph(&a.data, &a.graph)?;
    let cfg = s.model_config(splits.entities().len(), splits.relations().len())?;
    let tcfg = s.train_config()?;
    let mut init = rng::stream(s.seed, &[rng::label("init")]);
    let mut model = Model::<T>::new(cfg, &mut init).map_err(|e| Error::usage(e.to_string()))?;
    if let Some(p) = &a.frozen_embeddings {
        let (ents, rels) = checkpoint::load_embeddings::<T>(p, splits.entities(), splits.relations())?;
        model
            .load_frozen_embeddings(&ents, &rels)
            .map_err(|e| Error::in_file(p, e))?;
    }
    let train_set = dataset::read_part(&a.data, Purpose::Train)?;
    let examples = prepare_examples(&model, &train_set).map_err(train_error)?;
    let valid = if s.eval_every > 0 {
        dataset::read_part(&a.data, Purpose::Valid)?
    } else {
        Vec::new()
    };
    let mut valid_log = String::new();
    let threads = s.threads;
    let log = train(&mut model, &examples, &tcfg, |m, step| {
        if s.eval_every > 0 && step.step % s.eval_every == 0 {
            if let Ok(r) = evaluate_parallel(m, &valid, threads) {
                let cells = r.cells();
                valid_log.push_str(&format!("{}", step.step));
                for c in cells {
                    valid_log.push_str(&c.map_or("\t-".to_string(), |v| format!("\t{v}")));
                }
                valid_log.push('\n');
            }
        }
        true
    })
    .map_err(train_error)?;

    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut loss_log = String::from("step\tloss\tlr\n");
    for l in &log {
        loss_log.push_str(&format!("{}\t{}\t{:e}\n", l.step, l.loss, l.lr));
    }
    write_text(&a.out.join("loss.log"), &loss_log)?;
    if s.eval_every > 0 {
        let header = format!("step\t{}\n", COLUMNS.join("\t"));
        write_text(&a.out.join("valid.log"), &(header + &valid_log))?;
    }
    let meta = json!({
        "settings": echo,
        "graph_sha256": manifest.graph.sha256,
        "dataset_seed": manifest.seed,
        "dataset_train_sha256": manifest.files.get(&dataset::part_file(Purpose::Train)),
        "frozen_embeddings": a.frozen_embeddings.as_ref().map(|p| p.display().to_string()),
        "steps": log.len(),
        "final_loss": log.last().map(|l| l.loss),
    });
    checkpoint::save_model(&a.out.join("model.ckpt"), &model, meta.clone())?;
    write_text(&a.out.join("train.json"), &pretty(&meta))?;
    let first = log.first().map_or(f64::NAN, |l| l.loss);
    let last = log.last().map_or(f64::NAN, |l| l.loss);
    emit(out, &format!("steps={} first_loss={first:.4} final_loss={last:.4}\n", log.len()))
}

/// Scores every sample on worker threads and groups the results by type.
pub fn evaluate_parallel<T: Scalar>(
    model: &Model<T>,
    samples: &[efoent_core::sampler::QuerySample],
    threads: usize,
) -> std::result::Result<EvalReport, efoent_core::eval::EvalError> {
    let scored = parallel::map(samples, threads, |s| score_sample(model, s));
    let mut results = Vec::with_capacity(samples.len());
    for (s, r) in samples.iter().zip(scored) {
        results.push((s.type_name.as_str(), r?));
    }
    EvalReport::from_queries(results)
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let file = ConfigFile::load(a.config.as_deref())?;
    let (s, echo): (EvalSettings, _) = merge("eval", &file, process_env(), &a.flags)?;
    let purpose = match s.split.as_str() {
        "valid" => Purpose::Valid,
        "test" => Purpose::Test,
        other => return Err(Error::usage(format!("--split `{other}`: expected valid or test"))),
    };
    let container = Container::read(&a.checkpoint)?;
    let mut samples = dataset::read_part(&a.data, purpose)?;
    if !s.types.is_empty() {
        samples.retain(|q| s.types.contains(&q.type_name));
    }
    if samples.is_empty() {
        return Err(Error::data("no evaluation queries selected"));
    }
    let report = match container.dtype() {
        "f32" => evaluate_with::<f32>(&container, &samples, s.threads)?,
        _ => evaluate_with::<f64>(&container, &samples, s.threads)?,
    };
    let name = a.name.clone().unwrap_or_else(|| {
        a.checkpoint
            .file_stem()
            .map_or("model".into(), |s| s.to_string_lossy().into_owned())
    });
    let mut dump = EvalDump::new(&name, &s.split, &report);
    dump.checkpoint_sha256 = file_sha256(&a.checkpoint)?;
    dump.dataset_sha256 = dataset::read_manifest(&a.data)?
        .files
        .get(&dataset::part_file(purpose))
        .cloned()
        .unwrap_or_default();
    let mut echo = echo;
    echo.as_object_mut().expect("settings object").remove("threads");
    dump.config = echo;
    write_text(&a.out, &dump.to_json())?;
    emit(out, &report_table(&[(name.as_str(), &report)]))
}

fn evaluate_with<T: Scalar>(
    c: &Container,
    samples: &[efoent_core::sampler::QuerySample],
    threads: usize,
) -> Result<EvalReport> {
    let model = checkpoint::load_model::<T>(c)?;
    evaluate_parallel(&model, samples, threads).map_err(|e| Error::data(e.to_string()))
}

fn report(a: ReportArgs, out: &mut dyn Write) -> Result<()> {
    let dumps = a.dumps.iter().map(|p| EvalDump::read(p)).collect::<Result<Vec<_>>>()?;
    let reports: Vec<EvalReport> = dumps.iter().map(EvalDump::report).collect();
    let rows: Vec<(&str, &EvalReport)> = dumps.iter().map(|d| d.model.as_str()).zip(&reports).collect();
    let mut text = report_table(&rows);
    if a.per_type {
        for (name, r) in &rows {
            text.push_str(&format!("\n{name}\n{}", type_table(r)));
        }
    }
    emit(out, &text)?;
    if let Some(dir) = a.svg {
        let columns: Vec<String> = COLUMNS.iter().map(|c| c.to_string()).collect();
        let series: Vec<(String, Vec<Option<f64>>)> = rows
            .iter()
            .map(|(n, r)| (n.to_string(), r.cells().to_vec()))
            .collect();
        write_text(&dir.join("cells.svg"), &grouped_bars("MRR by cell", &columns, &series))?;
        let mut types: Vec<String> = Vec::new();
        for r in &reports {
            for t in &r.types {
                if !types.contains(&t.type_name) {
                    types.push(t.type_name.clone());
                }
            }
        }
        for (kind, pick) in [("id", true), ("ood", false)] {
            let series: Vec<(String, Vec<Option<f64>>)> = rows
                .iter()
                .map(|(n, r)| {
                    let v = types
                        .iter()
                        .map(|t| r.get(t).and_then(|x| if pick { x.id_mrr } else { x.ood_mrr }))
                        .collect();
                    (n.to_string(), v)
                })
                .collect();
            let title = format!("{} MRR by query type", kind.to_uppercase());
            write_text(&dir.join(format!("types_{kind}.svg")), &grouped_bars(&title, &types, &series))?;
        }
    }
    Ok(())
}
