//! Skip-gram with negative sampling over encoded corpora.
//!
//! Embedding files start with a `dim=<d> vocab=<n> mode=<tag> version=1`
//! header followed by one `token\tv1 v2 ...` line per vocabulary entry.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{CorpusMode, SequenceRecord, Vocabulary, PAD, UNK};
use crate::nn::{sigmoid, Tensor2};

pub const DEFAULT_DIM: usize = 300;
pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_NEGATIVES: usize = 100;
pub const DEFAULT_BATCH: usize = 1024;
pub const DEFAULT_EPOCHS: usize = 10;
pub const DEFAULT_EMBED_LR: f64 = 0.025;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("invalid skip-gram config: {0}")]
    Config(String),
    #[error("non-finite value during training at epoch {epoch}")]
    NaN { epoch: usize },
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("embedding file error at line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    /// Training pairs per batch; the unit of loss bookkeeping and of the
    /// learning-rate schedule.
    pub batch: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly towards `lr * 1e-4`.
    pub lr: f64,
    /// Token subsampling threshold; 0 disables subsampling.
    pub subsample: f64,
    pub seed: u64,
    /// Worker count; 1 is the deterministic sequential mode.
    pub threads: usize,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: DEFAULT_DIM,
            window: DEFAULT_WINDOW,
            negatives: DEFAULT_NEGATIVES,
            batch: DEFAULT_BATCH,
            epochs: DEFAULT_EPOCHS,
            lr: DEFAULT_EMBED_LR,
            subsample: 1e-3,
            seed: 0,
            threads: 1,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |m: &str| Err(EmbedError::Config(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.window == 0 {
            return bad("window must be >= 1");
        }
        if self.negatives == 0 {
            return bad("negatives must be >= 1");
        }
        if self.batch == 0 {
            return bad("batch must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.subsample >= 0.0) {
            return bad("subsample must be >= 0");
        }
        if self.threads == 0 {
            return bad("threads must be >= 1");
        }
        Ok(())
    }
}

/// Token vectors indexed by vocabulary id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub mode: CorpusMode,
    pub tokens: Vec<String>,
    /// The embedding proper.
    pub input: Tensor2,
    /// Context vectors; zero for tables loaded from file.
    pub output: Tensor2,
}

impl EmbeddingTable {
    /// Input vectors uniform in `[-0.5/d, 0.5/d]`, output vectors zero.
    pub fn init(vocab: &Vocabulary, dim: usize, mode: CorpusMode, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EmbeddingTable {
            mode,
            tokens: vocab.tokens().to_vec(),
            input: Tensor2::uniform(vocab.len(), dim, 0.5 / dim as f64, &mut rng),
            output: Tensor2::zeros(vocab.len(), dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.input.cols()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn vector(&self, id: u32) -> &[f64] {
        self.input.row(id as usize)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.tokens.iter().position(|t| t == token).map(|i| i as u32)
    }

    pub fn max_norm(&self) -> f64 {
        (0..self.len()).map(|i| norm(self.input.row(i))).fold(0.0, f64::max)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("dim={} vocab={} mode={} version=1\n", self.dim(), self.len(), self.mode);
        for (i, t) in self.tokens.iter().enumerate() {
            let vals: Vec<String> = self.input.row(i).iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("{t}\t{}\n", vals.join(" ")));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, EmbedError> {
        let err = |line: usize, m: &str| EmbedError::Format { line, message: m.to_string() };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err(1, "empty file"))?;
        let mut dim = None;
        let mut vocab = None;
        let mut mode = None;
        for kv in header.split(' ') {
            match kv.split_once('=') {
                Some(("dim", v)) => dim = v.parse::<usize>().ok(),
                Some(("vocab", v)) => vocab = v.parse::<usize>().ok(),
                Some(("mode", v)) => mode = v.parse::<CorpusMode>().ok(),
                Some(("version", "1")) => {}
                _ => return Err(err(1, &format!("bad header field `{kv}`"))),
            }
        }
        let (dim, vocab, mode) = match (dim, vocab, mode) {
            (Some(d), Some(v), Some(m)) if d > 0 => (d, v, m),
            _ => return Err(err(1, "header needs dim, vocab, mode and version=1")),
        };
        let mut tokens = Vec::with_capacity(vocab);
        let mut data = Vec::with_capacity(vocab * dim);
        for (i, line) in lines.enumerate() {
            let (tok, vals) = line.split_once('\t').ok_or_else(|| err(i + 2, "missing tab"))?;
            let before = data.len();
            for v in vals.split(' ') {
                data.push(v.parse::<f64>().map_err(|_| err(i + 2, "bad float"))?);
            }
            if data.len() - before != dim {
                return Err(err(i + 2, "wrong vector length"));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() != vocab {
            return Err(err(1, "vocab size does not match line count"));
        }
        let input = Tensor2::from_vec(vocab, dim, data).map_err(|e| err(1, &e.to_string()))?;
        Ok(EmbeddingTable { mode, tokens, input, output: Tensor2::zeros(vocab, dim) })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        dot(a, b) / d
    }
}

/// Top-`k` tokens by cosine similarity of input vectors, excluding the query
/// and the special tokens; ties go to the lower id.
pub fn nearest_neighbors(table: &EmbeddingTable, token: &str, k: usize) -> Result<Vec<(String, f64)>, EmbedError> {
    let q = table
        .id(token)
        .filter(|&i| i != PAD && i != UNK)
        .ok_or_else(|| EmbedError::UnknownToken(token.to_string()))?;
    let qv = table.vector(q);
    let mut scored: Vec<(u32, f64)> = (2..table.len() as u32)
        .filter(|&i| i != q)
        .map(|i| (i, cosine(qv, table.vector(i))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().take(k).map(|(i, c)| (table.tokens[i as usize].clone(), c)).collect())
}

/// Negative-sampling loss for one (center, context) pair and its gradients
/// with respect to the center input vector, the positive context vector and
/// each negative context vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NsGrads {
    pub loss: f64,
    pub d_input: Vec<f64>,
    pub d_positive: Vec<f64>,
    pub d_negatives: Vec<Vec<f64>>,
}

pub fn ns_loss_and_grads(input: &[f64], positive: &[f64], negatives: &[&[f64]]) -> NsGrads {
    let s = dot(input, positive);
    let mut loss = -log_sigmoid(s);
    let gp = sigmoid(s) - 1.0;
    let mut d_input: Vec<f64> = positive.iter().map(|u| gp * u).collect();
    let d_positive = input.iter().map(|v| gp * v).collect();
    let mut d_negatives = Vec::with_capacity(negatives.len());
    for u in negatives {
        let s = dot(input, u);
        loss -= log_sigmoid(-s);
        let g = sigmoid(s);
        for (d, x) in d_input.iter_mut().zip(u.iter()) {
            *d += g * x;
        }
        d_negatives.push(input.iter().map(|v| g * v).collect());
    }
    NsGrads { loss, d_input, d_positive, d_negatives }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sentences(corpus: &[SequenceRecord]) -> Vec<Vec<u32>> {
    corpus
        .iter()
        .map(|r| r.tokens.iter().copied().chain([r.label]).filter(|&t| t != PAD && t != UNK).collect::<Vec<_>>())
        .filter(|s: &Vec<u32>| s.len() > 1)
        .collect()
}

struct Sampler {
    noise: WeightedIndex<f64>,
    keep: Vec<f64>,
}

impl Sampler {
    fn new(vocab: &Vocabulary, sents: &[Vec<u32>], subsample: f64) -> Result<Self, EmbedError> {
        let mut counts = vec![0u64; vocab.len()];
        for s in sents {
            for &t in s {
                counts[t as usize] += 1;
            }
        }
        let total: u64 = counts.iter().sum();
        let noise = WeightedIndex::new(counts.iter().map(|&c| (c as f64).powf(0.75)))
            .map_err(|e| EmbedError::Config(format!("empty training corpus: {e}")))?;
        let keep = counts
            .iter()
            .map(|&c| {
                if subsample <= 0.0 || c == 0 {
                    1.0
                } else {
                    let f = c as f64 / total as f64;
                    (((f / subsample).sqrt() + 1.0) * subsample / f).min(1.0)
                }
            })
            .collect();
        Ok(Sampler { noise, keep })
    }
}

struct Trainer<'a> {
    cfg: &'a SkipGramConfig,
    sampler: &'a Sampler,
    total_words: f64,
}

impl Trainer<'_> {
    /// Trains over `sents` in place; returns the summed loss and pair count.
    /// `words_done` feeds the global learning-rate schedule.
    fn run(
        &self,
        table: &mut EmbeddingTable,
        sents: &[Vec<u32>],
        rng: &mut ChaCha8Rng,
        words_done: &mut f64,
        epoch: usize,
    ) -> Result<(f64, u64), EmbedError> {
        let mut loss_sum = 0.0;
        let mut pairs = 0u64;
        let mut batch_pairs = 0usize;
        let mut lr = self.lr_at(*words_done);
        let mut negs: Vec<usize> = Vec::with_capacity(self.cfg.negatives);
        for s in sents {
            let kept: Vec<u32> = s.iter().copied().filter(|&t| rng.gen::<f64>() < self.sampler.keep[t as usize]).collect();
            *words_done += s.len() as f64;
            for (pos, &center) in kept.iter().enumerate() {
                let reduce = rng.gen_range(0..self.cfg.window);
                let w = self.cfg.window - reduce;
                let lo = pos.saturating_sub(w);
                let hi = (pos + w).min(kept.len() - 1);
                for (cpos, &ctx) in kept.iter().enumerate().take(hi + 1).skip(lo) {
                    if cpos == pos {
                        continue;
                    }
                    negs.clear();
                    for _ in 0..self.cfg.negatives {
                        let n = self.sampler.noise.sample(rng);
                        if n != ctx as usize {
                            negs.push(n);
                        }
                    }
                    let c = center as usize;
                    let g = {
                        let out = &table.output;
                        let neg_rows: Vec<&[f64]> = negs.iter().map(|&n| out.row(n)).collect();
                        ns_loss_and_grads(table.input.row(c), out.row(ctx as usize), &neg_rows)
                    };
                    let pair_loss = g.loss;
                    for (v, d) in table.output.row_mut(ctx as usize).iter_mut().zip(&g.d_positive) {
                        *v -= lr * d;
                    }
                    for (&n, dn) in negs.iter().zip(&g.d_negatives) {
                        for (v, d) in table.output.row_mut(n).iter_mut().zip(dn) {
                            *v -= lr * d;
                        }
                    }
                    for (v, d) in table.input.row_mut(c).iter_mut().zip(&g.d_input) {
                        *v -= lr * d;
                    }
                    if !pair_loss.is_finite() {
                        return Err(EmbedError::NaN { epoch });
                    }
                    loss_sum += pair_loss;
                    pairs += 1;
                    batch_pairs += 1;
                    if batch_pairs == self.cfg.batch {
                        batch_pairs = 0;
                        lr = self.lr_at(*words_done);
                    }
                }
            }
        }
        Ok((loss_sum, pairs))
    }

    fn lr_at(&self, words_done: f64) -> f64 {
        let frac = 1.0 - words_done / (self.total_words + 1.0);
        self.cfg.lr * frac.max(1e-4)
    }
}

/// Per-epoch mean negative-sampling loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedReport {
    pub epoch_losses: Vec<f64>,
}

pub fn train_skipgram(
    corpus: &[SequenceRecord],
    vocab: &Vocabulary,
    mode: CorpusMode,
    cfg: &SkipGramConfig,
) -> Result<(EmbeddingTable, EmbedReport), EmbedError> {
    cfg.validate()?;
    let sents = sentences(corpus);
    let sampler = Sampler::new(vocab, &sents, cfg.subsample)?;
    let mut table = EmbeddingTable::init(vocab, cfg.dim, mode, cfg.seed);
    let words: usize = sents.iter().map(Vec::len).sum();
    let trainer = Trainer { cfg, sampler: &sampler, total_words: (words * cfg.epochs) as f64 };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut words_done = 0.0;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (sum, n) = if cfg.threads <= 1 {
            trainer.run(&mut table, &sents, &mut rng, &mut words_done, epoch)?
        } else {
            run_sharded(&trainer, &mut table, &sents, &mut rng, &mut words_done, epoch)?
        };
        if !table.input.is_finite() || !table.output.is_finite() {
            return Err(EmbedError::NaN { epoch });
        }
        losses.push(if n == 0 { 0.0 } else { sum / n as f64 });
    }
    Ok((table, EmbedReport { epoch_losses: losses }))
}

/// Parallel epoch: contiguous shards trained on private copies, then
/// averaged in shard order.
fn run_sharded(
    trainer: &Trainer<'_>,
    table: &mut EmbeddingTable,
    sents: &[Vec<u32>],
    rng: &mut ChaCha8Rng,
    words_done: &mut f64,
    epoch: usize,
) -> Result<(f64, u64), EmbedError> {
    let shards = trainer.cfg.threads.min(sents.len().max(1));
    let size = sents.len().div_ceil(shards).max(1);
    let seeds: Vec<u64> = (0..shards).map(|_| rng.gen()).collect();
    let start = *words_done;
    let results: Vec<Result<(EmbeddingTable, f64, u64, f64), EmbedError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = sents
            .chunks(size)
            .zip(&seeds)
            .map(|(chunk, &seed)| {
                let mut local = table.clone();
                scope.spawn(move || {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    let mut done = start;
                    let (s, n) = trainer.run(&mut local, chunk, &mut r, &mut done, epoch)?;
                    Ok((local, s, n, done - start))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("embedding worker panicked")).collect()
    });
    let mut sum = 0.0;
    let mut pairs = 0;
    let mut words = 0.0;
    table.input.fill(0.0);
    table.output.fill(0.0);
    let k = results.len() as f64;
    for r in results {
        let (local, s, n, w) = r?;
        table.input.add_scaled(&local.input, 1.0 / k);
        table.output.add_scaled(&local.output, 1.0 / k);
        sum += s;
        pairs += n;
        words += w;
    }
    *words_done += words;
    Ok((sum, pairs))
}

/// Mean negative-sampling loss over all full-window pairs of a corpus with
/// negatives drawn from `seed`, without updating the table.
pub fn evaluate_ns_loss(
    table: &EmbeddingTable,
    corpus: &[SequenceRecord],
    vocab: &Vocabulary,
    window: usize,
    negatives: usize,
    seed: u64,
) -> Result<f64, EmbedError> {
    let sents = sentences(corpus);
    let sampler = Sampler::new(vocab, &sents, 0.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut n = 0u64;
    for s in &sents {
        for (pos, &c) in s.iter().enumerate() {
            let lo = pos.saturating_sub(window);
            let hi = (pos + window).min(s.len() - 1);
            for (cpos, &ctx) in s.iter().enumerate().take(hi + 1).skip(lo) {
                if cpos == pos {
                    continue;
                }
                let negs: Vec<&[f64]> = (0..negatives)
                    .map(|_| sampler.noise.sample(&mut rng))
                    .filter(|&x| x != ctx as usize)
                    .map(|x| table.output.row(x))
                    .collect();
                sum += ns_loss_and_grads(table.input.row(c as usize), table.output.row(ctx as usize), &negs).loss;
                n += 1;
            }
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}
