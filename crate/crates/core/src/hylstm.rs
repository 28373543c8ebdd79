//! LSTM recommender with two output heads and the hybrid loss, its two
//! single-head baselines, and the multi-path model that mean-pools the final
//! hidden states of several paths.
//!
//! For an input `x_0..x_{n-1}` with label `y`, the model reads `o_n` from
//! FCL₁ on the last top-layer hidden state and `s_i` from FCL₂ on every
//! top-layer hidden state. Step `i` is scored against the next token, so the
//! per-step targets are `x_1..x_{n-1}, y`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{PathSetExample, SequenceRecord, PAD, UNK};
use crate::embed::EmbeddingTable;
use crate::nn::{
    clip_global_norm, lstm_backward, lstm_forward, log_softmax, read_checkpoint, softmax, write_checkpoint,
    DenseParams, LstmCache, LstmStack, NnError, Optimizer, OptimizerKind, ParamSet, Tensor2,
    DEFAULT_CLIP_NORM,
};

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_LR: f64 = 0.001;
pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_LAYERS: usize = 2;

/// Examples per gradient chunk. Chunks are reduced in order, so results do
/// not depend on the worker count.
const CHUNK: usize = 16;

#[derive(Debug, Error)]
pub enum HyError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("empty input sequence")]
    EmptySequence,
    #[error("empty path set")]
    EmptyPathSet,
    #[error("token id {0} outside the vocabulary")]
    TokenOutOfRange(u32),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite parameters after epoch {epoch}")]
    NaN { epoch: usize },
    #[error("model error: {0}")]
    Model(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossMode {
    Hybrid { alpha: f64 },
    /// Last-step loss through FCL₁ only.
    TokenLevel,
    /// Mean per-step loss through FCL₂ only; predictions come from `s_n`.
    SequenceLevel,
}

impl LossMode {
    pub fn parse(name: &str, alpha: f64) -> Result<Self, HyError> {
        match name {
            "hybrid" if (0.0..=1.0).contains(&alpha) => Ok(LossMode::Hybrid { alpha }),
            "hybrid" => Err(HyError::Config(format!("alpha {alpha} outside [0, 1]"))),
            "token_level" => Ok(LossMode::TokenLevel),
            "sequence_level" => Ok(LossMode::SequenceLevel),
            o => Err(HyError::Config(format!("unknown loss mode `{o}`"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            LossMode::Hybrid { .. } => "hybrid",
            LossMode::TokenLevel => "token_level",
            LossMode::SequenceLevel => "sequence_level",
        }
    }

    /// Weight of the FCL₁ term and of the (averaged) FCL₂ term.
    fn weights(&self) -> (f64, f64) {
        match *self {
            LossMode::Hybrid { alpha } => (alpha, 1.0 - alpha),
            LossMode::TokenLevel => (1.0, 0.0),
            LossMode::SequenceLevel => (0.0, 1.0),
        }
    }

    pub fn reads_sequence_head(&self) -> bool {
        matches!(self, LossMode::SequenceLevel)
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossMode::Hybrid { alpha } => write!(f, "hybrid(alpha={alpha})"),
            other => f.write_str(other.tag()),
        }
    }
}

/// Embedding, LSTM stack and the two heads.
#[derive(Debug, Clone, PartialEq)]
pub struct HyLstmModel {
    pub embedding: Tensor2,
    pub lstm: LstmStack,
    pub fcl1: DenseParams,
    pub fcl2: DenseParams,
}

impl HyLstmModel {
    pub fn init(vocab: usize, dim: usize, hidden: usize, layers: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = Tensor2::uniform(vocab, dim, 0.1, &mut rng);
        let lstm = LstmStack::init(dim, hidden, layers, &mut rng);
        let fcl1 = DenseParams::xavier(hidden, vocab, &mut rng);
        let fcl2 = DenseParams::xavier(hidden, vocab, &mut rng);
        HyLstmModel { embedding, lstm, fcl1, fcl2 }
    }

    pub fn zeros(vocab: usize, dim: usize, hidden: usize, layers: usize) -> Self {
        HyLstmModel {
            embedding: Tensor2::zeros(vocab, dim),
            lstm: LstmStack::zeros(dim, hidden, layers),
            fcl1: DenseParams::zeros(hidden, vocab),
            fcl2: DenseParams::zeros(hidden, vocab),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.vocab_size(), self.dim(), self.hidden(), self.layers())
    }

    /// Replaces the embedding with the input vectors of a trained table.
    pub fn with_embedding(mut self, table: &EmbeddingTable) -> Result<Self, HyError> {
        if table.input.shape() != self.embedding.shape() {
            return Err(HyError::Model(format!(
                "embedding shape {:?} does not match model {:?}",
                table.input.shape(),
                self.embedding.shape()
            )));
        }
        self.embedding = table.input.clone();
        Ok(self)
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden()
    }

    pub fn layers(&self) -> usize {
        self.lstm.layers.len()
    }

    fn embed(&self, tokens: &[u32]) -> Result<Vec<Vec<f64>>, HyError> {
        if tokens.is_empty() {
            return Err(HyError::EmptySequence);
        }
        tokens
            .iter()
            .map(|&t| {
                if (t as usize) < self.vocab_size() {
                    Ok(self.embedding.row(t as usize).to_vec())
                } else {
                    Err(HyError::TokenOutOfRange(t))
                }
            })
            .collect()
    }

    pub fn to_checkpoint(&self) -> Vec<u8> {
        write_checkpoint(&self.blocks())
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self, HyError> {
        let mut blocks: BTreeMap<String, Tensor2> = read_checkpoint(bytes)?.into_iter().collect();
        let mut take = |name: &str| blocks.remove(name).ok_or_else(|| HyError::Model(format!("missing block `{name}`")));
        let embedding = take("embedding")?;
        let mut layers = Vec::new();
        while let Ok(w_x) = take(&format!("lstm.{}.w_x", layers.len())) {
            let l = layers.len();
            layers.push(crate::nn::LstmLayerParams { w_x, w_h: take(&format!("lstm.{l}.w_h"))?, b: take(&format!("lstm.{l}.b"))? });
        }
        let fcl1 = DenseParams { w: take("fcl1.w")?, b: take("fcl1.b")? };
        let fcl2 = DenseParams { w: take("fcl2.w")?, b: take("fcl2.b")? };
        if layers.is_empty() {
            return Err(HyError::Model("checkpoint has no LSTM layers".into()));
        }
        let m = HyLstmModel { embedding, lstm: LstmStack { layers }, fcl1, fcl2 };
        let reference = m.zeros_like();
        for ((name, a), (_, b)) in m.blocks().iter().zip(reference.blocks()) {
            if a.shape() != b.shape() {
                return Err(HyError::Model(format!("block `{name}` has inconsistent shape {:?}", a.shape())));
            }
        }
        Ok(m)
    }
}

impl ParamSet for HyLstmModel {
    fn blocks(&self) -> Vec<(String, &Tensor2)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        out.extend(self.lstm.blocks());
        out.push(("fcl1.w".into(), &self.fcl1.w));
        out.push(("fcl1.b".into(), &self.fcl1.b));
        out.push(("fcl2.w".into(), &self.fcl2.w));
        out.push(("fcl2.b".into(), &self.fcl2.b));
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut out = vec![&mut self.embedding];
        out.extend(self.lstm.blocks_mut());
        out.extend(self.fcl1.blocks_mut());
        out.extend(self.fcl2.blocks_mut());
        out
    }
}

/// Output of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct HyForward {
    /// FCL₁ distribution from the last hidden state.
    pub o_n: Vec<f64>,
    /// FCL₂ distributions, one per step.
    pub s: Vec<Vec<f64>>,
    pub h_last: Vec<f64>,
}

pub fn hylstm_forward(model: &HyLstmModel, tokens: &[u32]) -> Result<HyForward, HyError> {
    let xs = model.embed(tokens)?;
    let cache = lstm_forward(&model.lstm, &xs)?;
    let s = cache
        .top_hidden()
        .iter()
        .map(|h| model.fcl2.logits(h).map(|z| softmax(&z)))
        .collect::<Result<Vec<_>, _>>()?;
    let h_last = cache.last_hidden().to_vec();
    let o_n = softmax(&model.fcl1.logits(&h_last)?);
    Ok(HyForward { o_n, s, h_last })
}

/// Per-step targets: the next input token, and the label after the last step.
pub fn step_targets(tokens: &[u32], label: u32) -> Vec<u32> {
    tokens.iter().skip(1).copied().chain([label]).collect()
}

/// `α·L(o_n, x_n) + (1-α)·Σ L(s_i, x_i)/n` with cross-entropy `L`; the last
/// label is the recommendation target.
pub fn hybrid_loss(o_n: &[f64], s: &[Vec<f64>], labels: &[u32], alpha: f64) -> Result<f64, HyError> {
    let n = labels.len();
    if n == 0 {
        return Err(HyError::EmptySequence);
    }
    if s.len() != n {
        return Err(NnError::Shape { op: "hybrid_loss", expected: n.to_string(), found: s.len().to_string() }.into());
    }
    let xent = |p: &[f64], y: u32| -> Result<f64, HyError> {
        p.get(y as usize).map(|q| -q.ln()).ok_or(HyError::TokenOutOfRange(y))
    };
    let token = xent(o_n, labels[n - 1])?;
    let mut seq = 0.0;
    for (p, &y) in s.iter().zip(labels) {
        seq += xent(p, y)?;
    }
    Ok(alpha * token + (1.0 - alpha) * (seq / n as f64))
}

/// Mean losses of one example or epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    /// The optimized quantity.
    pub objective: f64,
    /// Cross-entropy of the FCL₁ (or pooled) prediction.
    pub head1: f64,
    /// Mean per-step FCL₂ cross-entropy; absent for multi-path training.
    pub head2: Option<f64>,
}

/// Adds `scale ·` the gradient of the single-path loss to `grads` and
/// returns the losses.
pub fn sequence_loss_and_grads(
    model: &HyLstmModel,
    tokens: &[u32],
    label: u32,
    mode: LossMode,
    grads: &mut HyLstmModel,
    scale: f64,
) -> Result<LossParts, HyError> {
    let xs = model.embed(tokens)?;
    if label as usize >= model.vocab_size() {
        return Err(HyError::TokenOutOfRange(label));
    }
    let cache = lstm_forward(&model.lstm, &xs)?;
    let n = tokens.len();
    let targets = step_targets(tokens, label);
    let (w1, w2) = mode.weights();
    let hs = cache.top_hidden();
    let mut upstream: Vec<Option<Vec<f64>>> = vec![None; n];

    let z1 = model.fcl1.logits(&hs[n - 1])?;
    let lp1 = log_softmax(&z1);
    let head1 = -lp1[label as usize];
    if w1 != 0.0 {
        let mut d = softmax(&z1);
        d[label as usize] -= 1.0;
        upstream[n - 1] = Some(model.fcl1.backward_acc(&hs[n - 1], &d, scale * w1, &mut grads.fcl1));
    }

    let mut head2 = 0.0;
    let step_w = w2 / n as f64;
    for (t, (h, &y)) in hs.iter().zip(&targets).enumerate() {
        let z2 = model.fcl2.logits(h)?;
        head2 -= log_softmax(&z2)[y as usize];
        if step_w != 0.0 {
            let mut d = softmax(&z2);
            d[y as usize] -= 1.0;
            let dh = model.fcl2.backward_acc(h, &d, scale * step_w, &mut grads.fcl2);
            match &mut upstream[t] {
                Some(u) => u.iter_mut().zip(&dh).for_each(|(a, b)| *a += b),
                slot => *slot = Some(dh),
            }
        }
    }
    head2 /= n as f64;

    backprop_into_embedding(model, &cache, tokens, &upstream, grads)?;
    Ok(LossParts { objective: w1 * head1 + w2 * head2, head1, head2: Some(head2) })
}

fn backprop_into_embedding(
    model: &HyLstmModel,
    cache: &LstmCache,
    tokens: &[u32],
    upstream: &[Option<Vec<f64>>],
    grads: &mut HyLstmModel,
) -> Result<(), HyError> {
    if upstream.iter().all(Option::is_none) {
        return Ok(());
    }
    let dxs = lstm_backward(&model.lstm, cache, upstream, &mut grads.lstm)?;
    for (&t, dx) in tokens.iter().zip(&dxs) {
        for (g, d) in grads.embedding.row_mut(t as usize).iter_mut().zip(dx) {
            *g += d;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    /// Mean of the per-path final hidden states, then FCL₁.
    Hidden,
    /// Mean of the per-path FCL₁ distributions.
    Probability,
}

impl Pooling {
    pub fn tag(self) -> &'static str {
        match self {
            Pooling::Hidden => "hidden",
            Pooling::Probability => "probability",
        }
    }

    pub fn parse(s: &str) -> Result<Self, HyError> {
        match s {
            "hidden" => Ok(Pooling::Hidden),
            "probability" => Ok(Pooling::Probability),
            o => Err(HyError::Config(format!("unknown pooling `{o}`"))),
        }
    }
}

/// One shared model applied to every path of a set.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHyLstmModel {
    pub shared: HyLstmModel,
    pub pooling: Pooling,
}

impl MultiHyLstmModel {
    pub fn new(shared: HyLstmModel) -> Self {
        MultiHyLstmModel { shared, pooling: Pooling::Hidden }
    }
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = rows[0].clone();
    for r in &rows[1..] {
        acc.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }
    let k = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    acc
}

pub fn multi_forward(model: &MultiHyLstmModel, paths: &[Vec<u32>]) -> Result<Vec<f64>, HyError> {
    if paths.is_empty() {
        return Err(HyError::EmptyPathSet);
    }
    let m = &model.shared;
    let mut finals = Vec::with_capacity(paths.len());
    for p in paths {
        let cache = lstm_forward(&m.lstm, &m.embed(p)?)?;
        finals.push(cache.last_hidden().to_vec());
    }
    match model.pooling {
        Pooling::Hidden => Ok(softmax(&m.fcl1.logits(&mean_rows(&finals))?)),
        Pooling::Probability => {
            let probs = finals.iter().map(|h| m.fcl1.logits(h).map(|z| softmax(&z))).collect::<Result<Vec<_>, _>>()?;
            Ok(mean_rows(&probs))
        }
    }
}

/// Adds `scale ·` the gradient of the pooled cross-entropy to `grads`.
/// Every path receives its share of the pooled gradient.
pub fn multi_loss_and_grads(
    model: &MultiHyLstmModel,
    paths: &[Vec<u32>],
    label: u32,
    grads: &mut HyLstmModel,
    scale: f64,
) -> Result<LossParts, HyError> {
    pooled_loss_and_grads(&model.shared, model.pooling, paths, label, grads, scale)
}

fn pooled_loss_and_grads(
    m: &HyLstmModel,
    pooling: Pooling,
    paths: &[Vec<u32>],
    label: u32,
    grads: &mut HyLstmModel,
    scale: f64,
) -> Result<LossParts, HyError> {
    if paths.is_empty() {
        return Err(HyError::EmptyPathSet);
    }
    if label as usize >= m.vocab_size() {
        return Err(HyError::TokenOutOfRange(label));
    }
    let mut caches = Vec::with_capacity(paths.len());
    for p in paths {
        caches.push(lstm_forward(&m.lstm, &m.embed(p)?)?);
    }
    let finals: Vec<Vec<f64>> = caches.iter().map(|c| c.last_hidden().to_vec()).collect();
    let k = paths.len() as f64;
    let y = label as usize;
    let (loss, dfinals): (f64, Vec<Vec<f64>>) = match pooling {
        Pooling::Hidden => {
            let pooled = mean_rows(&finals);
            let z = m.fcl1.logits(&pooled)?;
            let loss = -log_softmax(&z)[y];
            let mut d = softmax(&z);
            d[y] -= 1.0;
            let mut dp = m.fcl1.backward_acc(&pooled, &d, scale, &mut grads.fcl1);
            dp.iter_mut().for_each(|v| *v /= k);
            (loss, vec![dp; paths.len()])
        }
        Pooling::Probability => {
            let probs: Vec<Vec<f64>> =
                finals.iter().map(|h| m.fcl1.logits(h).map(|z| softmax(&z))).collect::<Result<_, _>>()?;
            let pbar = probs.iter().map(|p| p[y]).sum::<f64>() / k;
            let loss = -pbar.ln();
            let mut dfs = Vec::with_capacity(paths.len());
            for (h, p) in finals.iter().zip(&probs) {
                // dL/dz_j = -(p_y / (k·pbar)) · (1[j=y] - p_j)
                let c = p[y] / (k * pbar);
                let d: Vec<f64> = p.iter().enumerate().map(|(j, &pj)| c * (pj - if j == y { 1.0 } else { 0.0 })).collect();
                dfs.push(m.fcl1.backward_acc(h, &d, scale, &mut grads.fcl1));
            }
            (loss, dfs)
        }
    };
    for ((p, cache), dh) in paths.iter().zip(&caches).zip(dfinals) {
        let mut upstream = vec![None; p.len()];
        upstream[p.len() - 1] = Some(dh);
        backprop_into_embedding(m, cache, p, &upstream, grads)?;
    }
    Ok(LossParts { objective: loss, head1: loss, head2: None })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub clip_norm: f64,
    pub seed: u64,
    pub threads: usize,
    /// Where per-epoch checkpoints go, if anywhere.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch: 1024,
            lr: DEFAULT_LR,
            optimizer: OptimizerKind::Adam,
            clip_norm: DEFAULT_CLIP_NORM,
            seed: 0,
            threads: 1,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HyError> {
        let bad = |m: &str| Err(HyError::Config(m.to_string()));
        if self.batch == 0 {
            return bad("batch must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if self.threads == 0 {
            return bad("threads must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Example-mean losses per epoch.
    pub epochs: Vec<LossParts>,
    pub wall_time_secs: f64,
    pub seed: u64,
    pub final_checkpoint: Option<PathBuf>,
}

trait Example: Sync {
    fn accumulate(&self, model: &HyLstmModel, grads: &mut HyLstmModel, scale: f64) -> Result<LossParts, HyError>;
}

struct Single<'a> {
    record: &'a SequenceRecord,
    mode: LossMode,
}

impl Example for Single<'_> {
    fn accumulate(&self, model: &HyLstmModel, grads: &mut HyLstmModel, scale: f64) -> Result<LossParts, HyError> {
        sequence_loss_and_grads(model, &self.record.tokens, self.record.label, self.mode, grads, scale)
    }
}

struct Multi<'a> {
    example: &'a PathSetExample,
    pooling: Pooling,
}

impl Example for Multi<'_> {
    fn accumulate(&self, model: &HyLstmModel, grads: &mut HyLstmModel, scale: f64) -> Result<LossParts, HyError> {
        pooled_loss_and_grads(model, self.pooling, &self.example.paths, self.example.label, grads, scale)
    }
}

fn run_training<E: Example>(
    model: &mut HyLstmModel,
    examples: &[E],
    cfg: &TrainConfig,
) -> Result<TrainReport, HyError> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(HyError::Config("no training examples".into()));
    }
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| HyError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut report = TrainReport { epochs: Vec::new(), wall_time_secs: 0.0, seed: cfg.seed, final_checkpoint: None };
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossParts::default();
        let mut head2_sum = 0.0;
        let mut has_head2 = true;
        for batch in order.chunks(cfg.batch) {
            let scale = 1.0 / batch.len() as f64;
            let m: &HyLstmModel = model;
            let work = |chunk: &[usize]| -> Result<(HyLstmModel, LossParts, f64, bool), HyError> {
                let mut g = m.zeros_like();
                let mut s = LossParts::default();
                let mut h2 = 0.0;
                let mut all_h2 = true;
                for &i in chunk {
                    let l = examples[i].accumulate(m, &mut g, scale)?;
                    s.objective += l.objective;
                    s.head1 += l.head1;
                    match l.head2 {
                        Some(v) => h2 += v,
                        None => all_h2 = false,
                    }
                }
                Ok((g, s, h2, all_h2))
            };
            let parts: Vec<_> = if cfg.threads > 1 {
                pool.install(|| batch.par_chunks(CHUNK).map(work).collect::<Vec<_>>())
            } else {
                batch.chunks(CHUNK).map(work).collect()
            };
            let mut total: Option<HyLstmModel> = None;
            for part in parts {
                let (g, s, h2, all_h2) = part?;
                sum.objective += s.objective;
                sum.head1 += s.head1;
                head2_sum += h2;
                has_head2 &= all_h2;
                match &mut total {
                    None => total = Some(g),
                    Some(t) => {
                        for (a, b) in t.blocks_mut().into_iter().zip(g.blocks()) {
                            a.add_scaled(b.1, 1.0);
                        }
                    }
                }
            }
            let mut grads = total.expect("non-empty batch");
            clip_global_norm(&mut grads.blocks_mut(), cfg.clip_norm);
            let g_blocks: Vec<&Tensor2> = grads.blocks().into_iter().map(|(_, t)| t).collect();
            opt.step(&mut model.blocks_mut(), &g_blocks, cfg.lr)?;
        }
        if model.check_finite().is_err() {
            return Err(HyError::NaN { epoch });
        }
        let n = examples.len() as f64;
        report.epochs.push(LossParts {
            objective: sum.objective / n,
            head1: sum.head1 / n,
            head2: has_head2.then(|| head2_sum / n),
        });
        if let Some(dir) = &cfg.checkpoint_dir {
            let path = dir.join(format!("epoch-{epoch:03}.ckpt"));
            std::fs::write(&path, model.to_checkpoint())?;
            report.final_checkpoint = Some(path);
        }
    }
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Mini-batch training of a single-path model under `mode`.
pub fn train_single_path(
    model: &mut HyLstmModel,
    records: &[SequenceRecord],
    mode: LossMode,
    cfg: &TrainConfig,
) -> Result<TrainReport, HyError> {
    let examples: Vec<Single<'_>> = records.iter().map(|record| Single { record, mode }).collect();
    run_training(model, &examples, cfg)
}

/// Joint fine-tuning of the shared model and classifier on path sets.
pub fn train_multi_hylstm(
    model: &mut MultiHyLstmModel,
    examples: &[PathSetExample],
    cfg: &TrainConfig,
) -> Result<TrainReport, HyError> {
    if let Some(e) = examples.iter().find(|e| e.paths.is_empty()) {
        return Err(HyError::Config(format!("group `{}` has no paths", e.group)));
    }
    let pooling = model.pooling;
    let wrapped: Vec<Multi<'_>> = examples.iter().map(|example| Multi { example, pooling }).collect();
    run_training(&mut model.shared, &wrapped, cfg)
}

/// Top-`k` `(token id, probability)` pairs with PAD and UNK excluded; ties
/// go to the lower id.
pub fn rank(dist: &[f64], k: usize) -> Vec<(u32, f64)> {
    let mut scored: Vec<(u32, f64)> =
        dist.iter().enumerate().map(|(i, &p)| (i as u32, p)).filter(|&(i, _)| i != PAD && i != UNK).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Anything that scores a case given as a set of encoded paths.
pub trait Recommender: Sync {
    fn distribution(&self, paths: &[Vec<u32>]) -> Result<Vec<f64>, HyError>;

    fn recommend(&self, paths: &[Vec<u32>], k: usize) -> Result<Vec<u32>, HyError> {
        Ok(rank(&self.distribution(paths)?, k).into_iter().map(|(t, _)| t).collect())
    }
}

/// A single-path model; reads the first path of a case.
#[derive(Debug, Clone, PartialEq)]
pub struct SinglePathModel {
    pub model: HyLstmModel,
    pub mode: LossMode,
}

impl Recommender for SinglePathModel {
    fn distribution(&self, paths: &[Vec<u32>]) -> Result<Vec<f64>, HyError> {
        let first = paths.first().ok_or(HyError::EmptySequence)?;
        let mut f = hylstm_forward(&self.model, first)?;
        Ok(if self.mode.reads_sequence_head() { f.s.pop().unwrap() } else { f.o_n })
    }
}

impl Recommender for MultiHyLstmModel {
    fn distribution(&self, paths: &[Vec<u32>]) -> Result<Vec<f64>, HyError> {
        multi_forward(self, paths)
    }
}

/// Sidecar manifest stored next to a model checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelManifest {
    /// `single` or `multi`.
    pub kind: String,
    pub loss_mode: LossMode,
    pub pooling: Pooling,
    pub budget: usize,
    pub vocab_hash: String,
    /// Where the initial embedding came from (`random` or a file hash).
    pub embedding_init: String,
    pub dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub seed: u64,
}

impl ModelManifest {
    pub fn to_text(&self) -> String {
        let alpha = match self.loss_mode {
            LossMode::Hybrid { alpha } => alpha,
            _ => 0.0,
        };
        format!(
            "kind={}\nloss_mode={}\nalpha={}\npooling={}\nbudget={}\nvocab_hash={}\nembedding_init={}\ndim={}\nhidden={}\nlayers={}\nseed={}\n",
            self.kind,
            self.loss_mode.tag(),
            alpha,
            self.pooling.tag(),
            self.budget,
            self.vocab_hash,
            self.embedding_init,
            self.dim,
            self.hidden,
            self.layers,
            self.seed
        )
    }

    pub fn from_text(text: &str) -> Result<Self, HyError> {
        let kv: BTreeMap<&str, &str> = text.lines().filter_map(|l| l.split_once('=')).collect();
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| HyError::Model(format!("manifest lacks `{k}`")));
        let num = |k: &str| -> Result<u64, HyError> {
            get(k)?.parse().map_err(|_| HyError::Model(format!("manifest field `{k}` is not a number")))
        };
        let alpha: f64 = get("alpha")?.parse().map_err(|_| HyError::Model("bad alpha".into()))?;
        Ok(ModelManifest {
            kind: get("kind")?.to_string(),
            loss_mode: LossMode::parse(get("loss_mode")?, alpha)?,
            pooling: Pooling::parse(get("pooling")?)?,
            budget: num("budget")? as usize,
            vocab_hash: get("vocab_hash")?.to_string(),
            embedding_init: get("embedding_init")?.to_string(),
            dim: num("dim")? as usize,
            hidden: num("hidden")? as usize,
            layers: num("layers")? as usize,
            seed: num("seed")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusMode;
    use crate::nn::gradcheck::{numeric_grad, relative_error};

    fn rec(tokens: &[u32], label: u32) -> SequenceRecord {
        SequenceRecord { tokens: tokens.to_vec(), label, origin: CorpusMode::DepPath, group_key: None }
    }

    /// Checks every block of `analytic` against central differences of `loss`.
    fn check_grads(model: &HyLstmModel, analytic: &HyLstmModel, loss: impl Fn(&HyLstmModel) -> f64) {
        let n = model.blocks().len();
        for bi in 0..n {
            let (name, base) = {
                let b = &model.blocks()[bi];
                (b.0.clone(), b.1.data().to_vec())
            };
            let num = numeric_grad(
                |v: &[f64]| {
                    let mut m = model.clone();
                    m.blocks_mut()[bi].data_mut().copy_from_slice(v);
                    loss(&m)
                },
                &base,
                1e-5,
            );
            let err = relative_error(analytic.blocks()[bi].1.data(), &num);
            assert!(err < 1e-4, "{name}: {err}");
        }
    }

    fn randomized(vocab: usize, dim: usize, hidden: usize, layers: usize, seed: u64) -> HyLstmModel {
        use rand::Rng;
        let mut m = HyLstmModel::init(vocab, dim, hidden, layers, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        for t in m.blocks_mut() {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        m
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn hybrid_loss_fixture() {
        let third = 1.0 / 3.0;
        let l = hybrid_loss(&[0.1, 0.8, 0.1], &[vec![third; 3], vec![0.25, 0.5, 0.25]], &[0, 1], 0.5).unwrap();
        let expect = 0.5 * -(0.8f64.ln()) + 0.5 * (-(third.ln()) - 0.5f64.ln()) / 2.0;
        assert!((l - expect).abs() < 1e-12);
        // 40-digit evaluation of the same closed form.
        assert!((l - 0.559_511_642_964_118_628_086).abs() < 1e-12);
    }

    #[test]
    fn loss_endpoints() {
        let o = [0.2, 0.7, 0.1];
        let s = vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.1, 0.8]];
        assert_eq!(hybrid_loss(&o, &s, &[2, 1], 1.0).unwrap(), -(0.7f64.ln()));
        assert_eq!(hybrid_loss(&o, &s, &[2, 1], 0.0).unwrap(), (-(0.2f64.ln()) - 0.1f64.ln()) / 2.0);
        assert!(hybrid_loss(&o, &s, &[], 0.5).is_err());
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = HyLstmModel::zeros(6, 3, 4, 2);
        let f = hylstm_forward(&m, &[2, 3, 4]).unwrap();
        assert!(f.o_n.iter().all(|&p| (p - 1.0 / 6.0).abs() < 1e-15));
        assert!(f.s.iter().flatten().all(|&p| (p - 1.0 / 6.0).abs() < 1e-15));
        assert!(matches!(hylstm_forward(&m, &[]), Err(HyError::EmptySequence)));
    }

    #[test]
    fn tied_heads_agree_on_single_step() {
        let mut m = randomized(7, 3, 4, 1, 2);
        m.fcl2 = m.fcl1.clone();
        let f = hylstm_forward(&m, &[3]).unwrap();
        assert_eq!(f.o_n, f.s[0]);
    }

    #[test]
    fn heads_are_independent() {
        let m = randomized(7, 3, 4, 2, 3);
        let base = hylstm_forward(&m, &[2, 5, 3]).unwrap();
        let mut p2 = m.clone();
        p2.fcl2.w.data_mut()[0] += 1.0;
        p2.fcl2.b.data_mut()[1] -= 1.0;
        assert_eq!(hylstm_forward(&p2, &[2, 5, 3]).unwrap().o_n, base.o_n);
        let mut p1 = m.clone();
        p1.fcl1.w.data_mut()[0] += 1.0;
        p1.fcl1.b.data_mut()[1] -= 1.0;
        assert_eq!(hylstm_forward(&p1, &[2, 5, 3]).unwrap().s, base.s);
    }

    #[test]
    fn training_loss_matches_hybrid_loss() {
        let m = randomized(8, 3, 5, 2, 4);
        let tokens = [2, 6, 3, 7];
        let f = hylstm_forward(&m, &tokens).unwrap();
        let direct = hybrid_loss(&f.o_n, &f.s, &step_targets(&tokens, 5), 0.5).unwrap();
        let mut g = m.zeros_like();
        let parts = sequence_loss_and_grads(&m, &tokens, 5, LossMode::Hybrid { alpha: 0.5 }, &mut g, 1.0).unwrap();
        assert!((parts.objective - direct).abs() < 1e-12);
    }

    #[test]
    fn whole_model_gradients() {
        let m = randomized(8, 3, 4, 2, 5);
        let tokens = [2, 6, 3];
        for mode in [LossMode::Hybrid { alpha: 0.5 }, LossMode::TokenLevel, LossMode::SequenceLevel] {
            let mut g = m.zeros_like();
            sequence_loss_and_grads(&m, &tokens, 4, mode, &mut g, 1.0).unwrap();
            check_grads(&m, &g, |mm| {
                sequence_loss_and_grads(mm, &tokens, 4, mode, &mut mm.zeros_like(), 1.0).unwrap().objective
            });
        }
    }

    #[test]
    fn multi_path_gradients() {
        let m = randomized(8, 3, 4, 2, 6);
        let paths = vec![vec![2, 3, 4], vec![5, 6, 7], vec![3, 2, 6]];
        for pooling in [Pooling::Hidden, Pooling::Probability] {
            let mm = MultiHyLstmModel { shared: m.clone(), pooling };
            let mut g = m.zeros_like();
            multi_loss_and_grads(&mm, &paths, 5, &mut g, 1.0).unwrap();
            check_grads(&m, &g, |x| {
                let mm = MultiHyLstmModel { shared: x.clone(), pooling };
                multi_loss_and_grads(&mm, &paths, 5, &mut x.zeros_like(), 1.0).unwrap().objective
            });
        }
    }

    #[test]
    fn single_path_multi_reduces_to_o_n() {
        let m = randomized(9, 4, 5, 2, 7);
        let multi = MultiHyLstmModel::new(m.clone());
        let p = vec![2, 8, 4, 3];
        let o = hylstm_forward(&m, &p).unwrap().o_n;
        assert_eq!(multi_forward(&multi, std::slice::from_ref(&p)).unwrap(), o);
        assert_eq!(multi_forward(&multi, &[p.clone(), p]).unwrap(), o);
        assert!(matches!(multi_forward(&multi, &[]), Err(HyError::EmptyPathSet)));
    }

    #[test]
    fn memorizes_a_single_record() {
        let data = vec![rec(&[2, 3, 4, 5], 7)];
        let cfg = TrainConfig { epochs: 200, batch: 1, lr: 0.01, ..Default::default() };
        for mode in [LossMode::Hybrid { alpha: 0.5 }, LossMode::TokenLevel] {
            let mut m = HyLstmModel::init(8, 8, 16, 1, 1);
            let report = train_single_path(&mut m, &data, mode, &cfg).unwrap();
            assert!(report.epochs.last().unwrap().objective < 0.01, "{mode}: {:?}", report.epochs.last());
            let single = SinglePathModel { model: m, mode };
            assert_eq!(single.recommend(&[vec![2, 3, 4, 5]], 1).unwrap(), vec![7]);
        }
    }

    #[test]
    fn fresh_model_loss_is_near_ln_v() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = 20;
        let data: Vec<SequenceRecord> = (0..200)
            .map(|_| {
                let toks: Vec<u32> = (0..4).map(|_| rng.gen_range(2..v as u32)).collect();
                rec(&toks, rng.gen_range(2..v as u32))
            })
            .collect();
        let mut m = HyLstmModel::init(v, 8, 8, 1, 3);
        let cfg = TrainConfig { epochs: 1, batch: 32, ..Default::default() };
        let r = train_single_path(&mut m, &data, LossMode::Hybrid { alpha: 0.5 }, &cfg).unwrap();
        let ln_v = (v as f64).ln();
        assert!((r.epochs[0].objective - ln_v).abs() < 0.1 * ln_v, "{}", r.epochs[0].objective);
    }

    #[test]
    fn singleton_multi_training_matches_token_level() {
        let data = vec![rec(&[2, 3, 4], 5), rec(&[3, 4], 6), rec(&[2, 6, 4, 3], 5), rec(&[6], 2)];
        let sets: Vec<PathSetExample> = data
            .iter()
            .enumerate()
            .map(|(i, r)| PathSetExample { group: i.to_string(), paths: vec![r.tokens.clone()], label: r.label })
            .collect();
        let cfg = TrainConfig { epochs: 5, batch: 3, lr: 0.01, seed: 4, ..Default::default() };
        let mut single = HyLstmModel::init(8, 4, 6, 2, 2);
        let mut multi = MultiHyLstmModel::new(single.clone());
        let a = train_single_path(&mut single, &data, LossMode::TokenLevel, &cfg).unwrap();
        let b = train_multi_hylstm(&mut multi, &sets, &cfg).unwrap();
        assert_eq!(single, multi.shared);
        let objs = |r: &TrainReport| r.epochs.iter().map(|e| e.objective).collect::<Vec<_>>();
        assert_eq!(objs(&a), objs(&b));
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let data: Vec<SequenceRecord> = (0..70).map(|i| rec(&[2 + i % 5, 3, 4 + i % 3], 2 + (i % 6))).collect();
        let base = TrainConfig { epochs: 2, batch: 40, lr: 0.01, seed: 1, ..Default::default() };
        let mut a = HyLstmModel::init(8, 4, 5, 2, 0);
        let mut b = a.clone();
        train_single_path(&mut a, &data, LossMode::Hybrid { alpha: 0.5 }, &base).unwrap();
        train_single_path(&mut b, &data, LossMode::Hybrid { alpha: 0.5 }, &TrainConfig { threads: 3, ..base }).unwrap();
        assert_eq!(a.to_checkpoint(), b.to_checkpoint());
    }

    #[test]
    fn checkpoint_and_manifest_roundtrip() {
        let m = randomized(6, 3, 4, 2, 8);
        assert_eq!(HyLstmModel::from_checkpoint(&m.to_checkpoint()).unwrap(), m);
        let man = ModelManifest {
            kind: "multi".into(),
            loss_mode: LossMode::Hybrid { alpha: 0.25 },
            pooling: Pooling::Hidden,
            budget: 5,
            vocab_hash: "abc".into(),
            embedding_init: "random".into(),
            dim: 3,
            hidden: 4,
            layers: 2,
            seed: 9,
        };
        assert_eq!(ModelManifest::from_text(&man.to_text()).unwrap(), man);
    }

    #[test]
    fn ranking_excludes_specials_and_breaks_ties_by_id() {
        let d = [0.4, 0.3, 0.1, 0.1, 0.1];
        assert_eq!(rank(&d, 10).iter().map(|x| x.0).collect::<Vec<_>>(), vec![2, 3, 4]);
        assert_eq!(rank(&d, 1)[0].0, 2);
    }
}
