//! Transformer encoder over tokenized queries.
//!
//! Entities come first in the token table, so the first `num_entities` rows
//! double as the entity scoring matrix. Blocks are post-norm with a GELU
//! feed-forward of width `4 * d_model`. Attention is split into heads that
//! share one relative-bias bank per layer.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{ParamStore, Reduce, Scalar, ShapeError, Tape, Tensor, Var};
use crate::qgraph::{adjacency_mask, build_query_graph, BoolMatrix};
use crate::syntax::{tokenize, Token, TokenKind, TokenSymbol};
use crate::syntax::{templates, QueryAst, Sym};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PeKind {
    /// Sinusoidal positions added to the input embeddings.
    Absolute,
    /// Key and value offset vectors indexed by token distance.
    Relative,
    /// Offset vectors indexed by both token types and distance.
    LogiRpe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pooling {
    Sum,
    Mean,
    Max,
}

macro_rules! named_enum {
    ($ty:ty, $($variant:path => $name:literal),+) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($variant => $name),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $ty {
            type Err = ModelError;
            fn from_str(s: &str) -> Result<Self, ModelError> {
                match s {
                    $($name => Ok($variant),)+
                    _ => Err(ModelError::Config(alloc::format!("unknown value `{s}`"))),
                }
            }
        }
    };
}

named_enum!(PeKind, PeKind::Absolute => "absolute", PeKind::Relative => "relative", PeKind::LogiRpe => "logirpe");
named_enum!(Pooling, Pooling::Sum => "sum", Pooling::Mean => "mean", Pooling::Max => "max");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("sequence of {len} tokens exceeds the maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token type list has {got} entries for {expected} tokens")]
    TypeMismatch { expected: usize, got: usize },
    #[error("token `{0}` is not in the vocabulary")]
    UnknownToken(String),
    #[error("query has no free-variable token to pool")]
    EmptyPool,
    #[error("embedding table mismatch: {0}")]
    Embedding(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_entities: usize,
    pub num_relations: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    /// Highest existential index `e<k>` with its own token.
    pub num_variables: usize,
    pub pe_kind: PeKind,
    pub pooling: Pooling,
    pub use_adjacency_mask: bool,
    pub dropout: f64,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    /// Defaults sized to cover every query template.
    pub fn new(num_entities: usize, num_relations: usize) -> Self {
        let num_variables = templates::all()
            .iter()
            .flat_map(|q| q.template().existentials())
            .max()
            .unwrap_or(0) as usize;
        Self {
            num_entities,
            num_relations,
            d_model: 400,
            n_layers: 3,
            n_heads: 8,
            max_seq_len: templates::max_token_len(),
            num_variables,
            pe_kind: PeKind::LogiRpe,
            pooling: Pooling::Sum,
            use_adjacency_mask: false,
            dropout: 0.1,
            layer_norm_eps: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.num_entities == 0 || self.num_relations == 0 {
            return fail("the vocabulary needs entities and relations");
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail("d_model must be a positive multiple of n_heads");
        }
        if self.n_layers == 0 {
            return fail("n_layers must be positive");
        }
        if self.max_seq_len < templates::max_token_len() {
            return fail("max_seq_len is shorter than the longest query template");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn vocab_size(&self) -> usize {
        self.structural_offset() + STRUCTURAL.len() + self.num_variables
    }

    fn structural_offset(&self) -> usize {
        self.num_entities + self.num_relations
    }

    /// Row of the token table holding `symbol`.
    pub fn token_id(&self, symbol: TokenSymbol) -> Result<usize, ModelError> {
        let unknown = || ModelError::UnknownToken(alloc::format!("{symbol:?}"));
        let id = match symbol {
            TokenSymbol::Constant(Sym::Id(e)) if (e as usize) < self.num_entities => e as usize,
            TokenSymbol::Relation(Sym::Id(r)) if (r as usize) < self.num_relations => {
                self.num_entities + r as usize
            }
            TokenSymbol::Existential(k) if k >= 1 && (k as usize) <= self.num_variables => {
                self.structural_offset() + STRUCTURAL.len() + k as usize - 1
            }
            TokenSymbol::Constant(_) | TokenSymbol::Relation(_) | TokenSymbol::Existential(_) => {
                return Err(unknown())
            }
            other => {
                self.structural_offset()
                    + STRUCTURAL.iter().position(|&s| s == other).ok_or_else(unknown)?
            }
        };
        Ok(id)
    }
}

const STRUCTURAL: [TokenSymbol; 6] = [
    TokenSymbol::Open,
    TokenSymbol::Close,
    TokenSymbol::And,
    TokenSymbol::Or,
    TokenSymbol::Not,
    TokenSymbol::Free,
];

/// A query ready for the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedQuery {
    pub token_ids: Vec<usize>,
    pub kinds: Vec<TokenKind>,
    pub free_positions: Vec<usize>,
    pub mask: Option<BoolMatrix>,
}

impl EncodedQuery {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Row of a bias bank for the token pair at distance `offset`.
///
/// Banks are laid out `[kind_i][kind_j][distance]`, so the row index is
/// `(kind_i * 6 + kind_j) * max_len + min(offset, max_len - 1)`.
pub fn lookup_bias(kind_i: TokenKind, kind_j: TokenKind, offset: usize, max_len: usize) -> usize {
    (kind_i.index() * TokenKind::COUNT + kind_j.index()) * max_len + offset.min(max_len - 1)
}

/// Row of a type-agnostic offset bank.
pub fn lookup_offset(offset: usize, max_len: usize) -> usize {
    offset.min(max_len - 1)
}

/// Sinusoidal position table `[len, d]`.
pub fn sinusoid<T: Scalar>(len: usize, d: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[len, d]);
    for pos in 0..len {
        for i in 0..d {
            let freq = libm::pow(10_000.0, (2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / freq;
            let v = if i % 2 == 0 { libm::sin(angle) } else { libm::cos(angle) };
            t.data[pos * d + i] = T::of(v);
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln1_gamma: usize,
    pub ln1_beta: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub ln2_gamma: usize,
    pub ln2_beta: usize,
    /// Key and value bias banks; absent for absolute encoding.
    pub bank_k: Option<usize>,
    pub bank_v: Option<usize>,
}

/// Per-call state for a forward pass.
pub struct Forward<'r, R: Rng> {
    /// Dropout randomness; `None` runs in evaluation mode.
    pub rng: Option<&'r mut R>,
}

impl Forward<'static, crate::rng::Rng> {
    pub fn eval() -> Self {
        Self { rng: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub embedding: usize,
    pub layers: Vec<LayerParams>,
}

fn xavier<T: Scalar>(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::uniform(&[rows, cols], libm::sqrt(6.0 / (rows + cols) as f64), rng)
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.d_model;
        let ff = 4 * d;
        let mut params = ParamStore::new();
        let embedding = params.add(
            "embedding",
            Tensor::uniform(&[config.vocab_size(), d], 1.0 / libm::sqrt(d as f64), rng),
        );
        let bank_rows = match config.pe_kind {
            PeKind::Absolute => 0,
            PeKind::Relative => config.max_seq_len,
            PeKind::LogiRpe => TokenKind::COUNT * TokenKind::COUNT * config.max_seq_len,
        };
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let mut add = |name: &str, t: Tensor<T>| params.add(&alloc::format!("layer{l}.{name}"), t);
            let wq = add("wq", xavier(d, d, rng));
            let wk = add("wk", xavier(d, d, rng));
            let wv = add("wv", xavier(d, d, rng));
            let wo = add("wo", xavier(d, d, rng));
            let bo = add("bo", Tensor::zeros(&[d]));
            let ln1_gamma = add("ln1.gamma", Tensor::full(&[d], T::one()));
            let ln1_beta = add("ln1.beta", Tensor::zeros(&[d]));
            let w1 = add("ff.w1", xavier(d, ff, rng));
            let b1 = add("ff.b1", Tensor::zeros(&[ff]));
            let w2 = add("ff.w2", xavier(ff, d, rng));
            let b2 = add("ff.b2", Tensor::zeros(&[d]));
            let ln2_gamma = add("ln2.gamma", Tensor::full(&[d], T::one()));
            let ln2_beta = add("ln2.beta", Tensor::zeros(&[d]));
            let (bank_k, bank_v) = if bank_rows > 0 {
                let dh = config.d_head();
                (
                    Some(add("bank_k", Tensor::zeros(&[bank_rows, dh]))),
                    Some(add("bank_v", Tensor::zeros(&[bank_rows, dh]))),
                )
            } else {
                (None, None)
            };
            layers.push(LayerParams {
                wq,
                wk,
                wv,
                wo,
                bo,
                ln1_gamma,
                ln1_beta,
                w1,
                b1,
                w2,
                b2,
                ln2_gamma,
                ln2_beta,
                bank_k,
                bank_v,
            });
        }
        Ok(Self {
            config,
            params,
            embedding,
            layers,
        })
    }

    /// Rebuilds a model around stored parameters, checking every shape.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self, ModelError> {
        let mut rng = crate::rng::stream(0, &[]);
        let mut fresh = Self::new(config, &mut rng)?;
        if fresh.params.len() != params.len() {
            return Err(ModelError::Embedding(alloc::format!(
                "expected {} parameter tensors, found {}",
                fresh.params.len(),
                params.len()
            )));
        }
        for ((name, want), (got_name, got)) in fresh.params.iter().zip(params.iter()) {
            if name != got_name || want.shape != got.shape {
                return Err(ModelError::Embedding(alloc::format!(
                    "parameter `{got_name}` {:?} does not match `{name}` {:?}",
                    got.shape,
                    want.shape
                )));
            }
        }
        fresh.params = params;
        Ok(fresh)
    }

    /// Overwrites entity and relation rows with external vectors and freezes
    /// them. Structural tokens stay trainable.
    pub fn load_frozen_embeddings(
        &mut self,
        entities: &Tensor<T>,
        relations: &Tensor<T>,
    ) -> Result<(), ModelError> {
        let (ne, nr, d) = (self.config.num_entities, self.config.num_relations, self.config.d_model);
        if entities.rows() != ne || relations.rows() != nr {
            return Err(ModelError::Embedding(alloc::format!(
                "expected {ne} entity and {nr} relation rows, found {} and {}",
                entities.rows(),
                relations.rows()
            )));
        }
        if entities.cols() != d || relations.cols() != d {
            return Err(ModelError::Embedding(alloc::format!(
                "expected width {d}, found {} and {}",
                entities.cols(),
                relations.cols()
            )));
        }
        let table = self.params.get_mut(self.embedding);
        table.data[..ne * d].copy_from_slice(&entities.data);
        table.data[ne * d..(ne + nr) * d].copy_from_slice(&relations.data);
        let rows: Vec<usize> = (0..ne + nr).collect();
        self.params.freeze_rows(self.embedding, &rows);
        Ok(())
    }

    pub fn prepare(&self, query: &QueryAst) -> Result<EncodedQuery, ModelError> {
        let tokens = tokenize(query);
        if tokens.len() > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len: tokens.len(),
                max: self.config.max_seq_len,
            });
        }
        let token_ids = tokens
            .iter()
            .map(|t| self.config.token_id(t.symbol))
            .collect::<Result<Vec<_>, _>>()?;
        let free_positions = free_positions(&tokens);
        if free_positions.is_empty() {
            return Err(ModelError::EmptyPool);
        }
        let mask = if self.config.use_adjacency_mask {
            let graph = build_query_graph(query);
            Some(adjacency_mask(&tokens, &graph).map_err(|e| ModelError::Config(e.to_string()))?)
        } else {
            None
        };
        Ok(EncodedQuery {
            token_ids,
            kinds: tokens.iter().map(|t| t.kind).collect(),
            free_positions,
            mask,
        })
    }

    /// Final hidden states `[n, d_model]` of one query.
    pub fn encode<'p, R: Rng>(
        &'p self,
        tape: &mut Tape<'p, T>,
        query: &EncodedQuery,
        fwd: &mut Forward<'_, R>,
    ) -> Result<Var, ModelError> {
        let n = query.len();
        if n > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len: n,
                max: self.config.max_seq_len,
            });
        }
        if let Some(&bad) = query.token_ids.iter().find(|&&id| id >= self.config.vocab_size()) {
            return Err(ModelError::UnknownToken(alloc::format!("#{bad}")));
        }
        let table = tape.param(&self.params, self.embedding);
        let mut x = tape.gather_rows(table, &query.token_ids)?;
        if self.config.pe_kind == PeKind::Absolute {
            let pe = tape.constant(sinusoid(n, self.config.d_model));
            x = tape.add(x, pe)?;
        }
        x = self.dropout(tape, x, fwd);
        for layer in &self.layers {
            x = self.block(tape, layer, x, &query.kinds, query.mask.as_ref(), fwd)?;
        }
        Ok(x)
    }

    fn dropout<R: Rng>(&self, tape: &mut Tape<'_, T>, x: Var, fwd: &mut Forward<'_, R>) -> Var {
        match fwd.rng.as_deref_mut() {
            Some(rng) if self.config.dropout > 0.0 => tape.dropout(x, self.config.dropout, rng),
            _ => x,
        }
    }

    /// One encoder block: attention, residual and norm, then feed-forward,
    /// residual and norm.
    pub fn block<'p, R: Rng>(
        &'p self,
        tape: &mut Tape<'p, T>,
        layer: &LayerParams,
        x: Var,
        kinds: &[TokenKind],
        mask: Option<&BoolMatrix>,
        fwd: &mut Forward<'_, R>,
    ) -> Result<Var, ModelError> {
        let eps = self.config.layer_norm_eps;
        let p = |tape: &mut Tape<'p, T>, id| tape.param(&self.params, id);
        let attn = self.attention(tape, layer, x, kinds, mask, fwd)?;
        let attn = self.dropout(tape, attn, fwd);
        let h = tape.add(x, attn)?;
        let (g1, b1) = (p(tape, layer.ln1_gamma), p(tape, layer.ln1_beta));
        let h = tape.layer_norm(h, g1, b1, eps)?;
        let w1 = p(tape, layer.w1);
        let f = tape.matmul(h, w1)?;
        let bias1 = p(tape, layer.b1);
        let f = tape.add_row(f, bias1)?;
        let f = tape.gelu(f);
        let w2 = p(tape, layer.w2);
        let f = tape.matmul(f, w2)?;
        let bias2 = p(tape, layer.b2);
        let f = tape.add_row(f, bias2)?;
        let f = self.dropout(tape, f, fwd);
        let out = tape.add(h, f)?;
        let (g2, b2) = (p(tape, layer.ln2_gamma), p(tape, layer.ln2_beta));
        Ok(tape.layer_norm(out, g2, b2, eps)?)
    }

    /// Bank rows for every ordered token pair, `[n * n]`.
    pub fn bias_rows(&self, kinds: &[TokenKind]) -> Vec<usize> {
        let n = kinds.len();
        let len = self.config.max_seq_len;
        let mut rows = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let off = i.abs_diff(j);
                rows.push(match self.config.pe_kind {
                    PeKind::LogiRpe => lookup_bias(kinds[i], kinds[j], off, len),
                    _ => lookup_offset(off, len),
                });
            }
        }
        rows
    }

    /// Pre-softmax scores of every head, each `[n, n]`, and the gathered
    /// value biases (if any).
    pub fn attention_logits<'p>(
        &'p self,
        tape: &mut Tape<'p, T>,
        layer: &LayerParams,
        x: Var,
        kinds: &[TokenKind],
    ) -> Result<(Vec<Var>, Vec<Var>, Option<Var>), ModelError> {
        let n = tape.value(x).rows();
        if kinds.len() != n {
            return Err(ModelError::TypeMismatch {
                expected: n,
                got: kinds.len(),
            });
        }
        if n > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len: n,
                max: self.config.max_seq_len,
            });
        }
        let dh = self.config.d_head();
        let wq = tape.param(&self.params, layer.wq);
        let wk = tape.param(&self.params, layer.wk);
        let wv = tape.param(&self.params, layer.wv);
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let (bk, bv) = match (layer.bank_k, layer.bank_v) {
            (Some(ik), Some(iv)) => {
                let rows = self.bias_rows(kinds);
                let bank_k = tape.param(&self.params, ik);
                let bank_v = tape.param(&self.params, iv);
                (
                    Some(tape.gather_rows(bank_k, &rows)?),
                    Some(tape.gather_rows(bank_v, &rows)?),
                )
            }
            _ => (None, None),
        };
        let scale = T::of(1.0 / libm::sqrt(dh as f64));
        let mut logits = Vec::with_capacity(self.config.n_heads);
        let mut values = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let mut e = tape.matmul_bt(qh, kh)?;
            if let Some(bk) = bk {
                let extra = tape.row_dot(qh, bk)?;
                e = tape.add(e, extra)?;
            }
            logits.push(tape.scale(e, scale));
            values.push(tape.slice_cols(v, h * dh, dh)?);
        }
        Ok((logits, values, bv))
    }

    fn attention<'p, R: Rng>(
        &'p self,
        tape: &mut Tape<'p, T>,
        layer: &LayerParams,
        x: Var,
        kinds: &[TokenKind],
        mask: Option<&BoolMatrix>,
        fwd: &mut Forward<'_, R>,
    ) -> Result<Var, ModelError> {
        let (logits, values, bv) = self.attention_logits(tape, layer, x, kinds)?;
        let mut heads = Vec::with_capacity(logits.len());
        for (e, vh) in logits.into_iter().zip(values) {
            let e = match mask {
                Some(m) => tape.masked_fill(e, &m.data)?,
                None => e,
            };
            let alpha = tape.softmax(e);
            let alpha = self.dropout(tape, alpha, fwd);
            let mut z = tape.matmul(alpha, vh)?;
            if let Some(bv) = bv {
                let extra = tape.row_weighted_sum(alpha, bv)?;
                z = tape.add(z, extra)?;
            }
            heads.push(z);
        }
        let z = tape.concat_cols(&heads)?;
        let wo = tape.param(&self.params, layer.wo);
        let bo = tape.param(&self.params, layer.bo);
        let z = tape.matmul(z, wo)?;
        Ok(tape.add_row(z, bo)?)
    }

    /// Query vector `[1, d_model]` pooled from the free-variable rows.
    pub fn pool(&self, tape: &mut Tape<'_, T>, hidden: Var, free_positions: &[usize]) -> Result<Var, ModelError> {
        free_variable_pool(tape, hidden, free_positions, self.config.pooling)
    }

    /// Entity logits `[batch, num_entities]` for a batch of query vectors.
    pub fn score<'p>(&'p self, tape: &mut Tape<'p, T>, queries: Var) -> Result<Var, ModelError> {
        let table = tape.param(&self.params, self.embedding);
        let entities = tape.narrow_rows(table, 0, self.config.num_entities)?;
        Ok(tape.matmul_bt(queries, entities)?)
    }

    /// Logits `[batch, num_entities]` for a batch of queries.
    pub fn logits<'p, R: Rng>(
        &'p self,
        tape: &mut Tape<'p, T>,
        batch: &[&EncodedQuery],
        fwd: &mut Forward<'_, R>,
    ) -> Result<Var, ModelError> {
        let mut pooled = Vec::with_capacity(batch.len());
        for q in batch {
            let h = self.encode(tape, q, fwd)?;
            pooled.push(self.pool(tape, h, &q.free_positions)?);
        }
        let stacked = tape.concat_rows(&pooled)?;
        self.score(tape, stacked)
    }

    /// Entity scores of one query in evaluation mode.
    pub fn predict(&self, query: &EncodedQuery) -> Result<Vec<T>, ModelError> {
        let mut tape = Tape::new();
        let out = self.logits(&mut tape, &[query], &mut Forward::eval())?;
        Ok(tape.value(out).data.clone())
    }
}

fn free_positions(tokens: &[Token]) -> Vec<usize> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.is_free_variable)
        .map(|(i, _)| i)
        .collect()
}

/// Reduces the rows of `hidden` at `positions` into one `[1, d]` row.
pub fn free_variable_pool<T: Scalar>(
    tape: &mut Tape<'_, T>,
    hidden: Var,
    positions: &[usize],
    mode: Pooling,
) -> Result<Var, ModelError> {
    if positions.is_empty() {
        return Err(ModelError::EmptyPool);
    }
    let rows = tape.gather_rows(hidden, positions)?;
    let how = match mode {
        Pooling::Sum => Reduce::Sum,
        Pooling::Mean => Reduce::Mean,
        Pooling::Max => Reduce::Max,
    };
    Ok(tape.reduce_rows(rows, how)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse_efo;
    use alloc::vec;

    fn grounded(text: &str) -> QueryAst {
        parse_efo(text).unwrap()
    }

    fn tiny(pe: PeKind) -> Model<f64> {
        let mut cfg = ModelConfig::new(10, 3);
        cfg.d_model = 8;
        cfg.n_heads = 2;
        cfg.n_layers = 2;
        cfg.pe_kind = pe;
        cfg.dropout = 0.0;
        Model::new(cfg, &mut crate::rng::stream(1, &[])).unwrap()
    }

    #[test]
    fn vocabulary_layout() {
        let cfg = ModelConfig::new(10, 3);
        assert_eq!(cfg.token_id(TokenSymbol::Constant(Sym::Id(9))).unwrap(), 9);
        assert_eq!(cfg.token_id(TokenSymbol::Relation(Sym::Id(0))).unwrap(), 10);
        assert_eq!(cfg.token_id(TokenSymbol::Open).unwrap(), 13);
        assert_eq!(cfg.token_id(TokenSymbol::Existential(1)).unwrap(), 19);
        assert_eq!(cfg.vocab_size(), 19 + cfg.num_variables);
        assert!(cfg.token_id(TokenSymbol::Constant(Sym::Id(10))).is_err());
        assert!(cfg.token_id(TokenSymbol::Constant(Sym::Slot(1))).is_err());
        assert!(cfg.token_id(TokenSymbol::Existential(0)).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::new(10, 3);
        cfg.n_heads = 7;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::new(10, 3);
        cfg.max_seq_len -= 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn scores_have_entity_width() {
        for pe in [PeKind::Absolute, PeKind::Relative, PeKind::LogiRpe] {
            let m = tiny(pe);
            let q = m.prepare(&grounded("(r:0(s:1,e1))&(r:2(e1,f))")).unwrap();
            assert_eq!(q.free_positions.len(), 1);
            let s = m.predict(&q).unwrap();
            assert_eq!(s.len(), 10);
            assert_eq!(s, m.predict(&q).unwrap());
        }
    }

    #[test]
    fn templates_are_rejected_until_grounded() {
        let m = tiny(PeKind::LogiRpe);
        assert!(matches!(
            m.prepare(&grounded("r1(s1,f)")),
            Err(ModelError::UnknownToken(_))
        ));
    }

    #[test]
    fn lookup_clamps_and_orders_types() {
        use TokenKind::*;
        let far = lookup_bias(Entity, Relation, 100, 20);
        assert_eq!(far, lookup_bias(Entity, Relation, 19, 20));
        assert_ne!(lookup_bias(Entity, Relation, 4, 20), lookup_bias(Relation, Entity, 4, 20));
        assert_eq!(lookup_offset(3, 20), 3);
        assert_eq!(lookup_offset(25, 20), 19);
    }

    #[test]
    fn frozen_embedding_shapes_are_checked() {
        let mut m = tiny(PeKind::Absolute);
        let bad = Tensor::zeros(&[10, 7]);
        assert!(m.load_frozen_embeddings(&bad, &Tensor::zeros(&[3, 7])).is_err());
        let e = Tensor::full(&[10, 8], 0.5);
        m.load_frozen_embeddings(&e, &Tensor::zeros(&[3, 8])).unwrap();
        assert_eq!(m.params.get(m.embedding).row(4), &vec![0.5; 8][..]);
        let mask = m.params.frozen_rows(m.embedding).unwrap();
        assert!(mask[..13].iter().all(|&f| f) && !mask[13]);
    }
}
