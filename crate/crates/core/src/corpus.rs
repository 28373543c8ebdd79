//! Corpora, vocabularies, dataset splits and the in-set label index.
//!
//! Corpus files hold one record per line:
//!
//! ```text
//! <origin>\t<group or ->\t<token token ...>\t<label>
//! ```
//!
//! Vocabulary files hold `token\tid\tcount` lines in id order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adg::{build_adg, extract_all_paths, select_paths, AdgError};
use crate::ir::{is_constant_token, MiniProgram, StmtKind};
use crate::slicer::{backward_slice, find_criteria, SliceError};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

pub const DEFAULT_API_MIN_FREQ: u64 = 5;
pub const DEFAULT_CONST_MIN_FREQ: u64 = 100;
pub const DEFAULT_SUBSAMPLE_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("no token survives the frequency thresholds")]
    EmptyVocabulary,
    #[error("record has no tokens")]
    EmptyRecord,
    #[error(transparent)]
    Slice(#[from] SliceError),
    #[error(transparent)]
    Graph(#[from] AdgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CorpusMode {
    Bytecode,
    Slice,
    DepPath,
}

impl CorpusMode {
    pub fn tag(self) -> &'static str {
        match self {
            CorpusMode::Bytecode => "bytecode",
            CorpusMode::Slice => "slice",
            CorpusMode::DepPath => "dep_path",
        }
    }
}

impl fmt::Display for CorpusMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for CorpusMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bytecode" => Ok(CorpusMode::Bytecode),
            "slice" => Ok(CorpusMode::Slice),
            "dep_path" => Ok(CorpusMode::DepPath),
            other => Err(format!("unknown corpus mode `{other}`")),
        }
    }
}

/// Records that belong to a group (one graph or callsite).
pub trait Grouped {
    fn group_key(&self) -> Option<&str>;
}

/// A corpus record with textual tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TextRecord {
    pub origin: CorpusMode,
    pub group: Option<String>,
    pub tokens: Vec<String>,
    pub label: String,
}

impl Grouped for TextRecord {
    fn group_key(&self) -> Option<&str> {
        self.group.as_deref()
    }
}

impl TextRecord {
    /// Tokens followed by the label.
    pub fn sentence(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str).chain(std::iter::once(self.label.as_str()))
    }
}

pub fn write_corpus(records: &[TextRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.origin,
            r.group.as_deref().unwrap_or("-"),
            r.tokens.join(" "),
            r.label
        ));
    }
    out
}

pub fn read_corpus(text: &str) -> Result<Vec<TextRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let err = |m: String| CorpusError::Format { line: i + 1, message: m };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(err(format!("expected 4 tab-separated fields, found {}", f.len())));
        }
        let origin = f[0].parse().map_err(err)?;
        let tokens: Vec<String> = f[2].split(' ').filter(|t| !t.is_empty()).map(String::from).collect();
        if tokens.is_empty() || f[3].is_empty() || f[3].contains(' ') {
            return Err(err("record needs at least one token and a single label".into()));
        }
        out.push(TextRecord {
            origin,
            group: (f[1] != "-").then(|| f[1].to_string()),
            tokens,
            label: f[3].to_string(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabConfig {
    /// APIs need strictly more occurrences than this.
    pub api_min_freq: u64,
    /// Constants need strictly more occurrences than this, unless reserved.
    pub const_min_freq: u64,
    pub reserved_constants: Vec<String>,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            api_min_freq: DEFAULT_API_MIN_FREQ,
            const_min_freq: DEFAULT_CONST_MIN_FREQ,
            reserved_constants: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_parts(tokens: Vec<String>, counts: Vec<u64>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { tokens, counts, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: u32) -> bool {
        id == PAD || id == UNK
    }

    pub fn to_text(&self) -> String {
        self.tokens
            .iter()
            .zip(&self.counts)
            .enumerate()
            .map(|(i, (t, c))| format!("{t}\t{i}\t{c}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self, CorpusError> {
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let err = |m: &str| CorpusError::Format { line: i + 1, message: m.to_string() };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(err("expected token, id and count"));
            }
            if f[1].parse::<usize>().ok() != Some(tokens.len()) {
                return Err(err("ids must be contiguous from 0"));
            }
            tokens.push(f[0].to_string());
            counts.push(f[2].parse().map_err(|_| err("bad count"))?);
        }
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(CorpusError::Format { line: 1, message: "vocabulary must start with <pad>, <unk>".into() });
        }
        Ok(Self::from_parts(tokens, counts))
    }

    /// Short content hash used to tie models and datasets to a vocabulary.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn encode(&self, record: &TextRecord, max_len: usize) -> SequenceRecord {
        let skip = record.tokens.len().saturating_sub(max_len);
        SequenceRecord {
            tokens: record.tokens[skip..].iter().map(|t| self.id(t)).collect(),
            label: self.id(&record.label),
            origin: record.origin,
            group_key: record.group.clone(),
        }
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i)).collect()
    }
}

/// Counts every token (labels included) and keeps those above the thresholds.
/// Ids are assigned by descending count, ties by token text.
pub fn build_vocabulary<'a, I>(records: I, cfg: &VocabConfig) -> Result<Vocabulary, CorpusError>
where
    I: IntoIterator<Item = &'a TextRecord>,
{
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for r in records {
        for t in r.sentence() {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(t, c)| {
            if t == PAD_TOKEN || t == UNK_TOKEN {
                false
            } else if is_constant_token(t) {
                c > cfg.const_min_freq || cfg.reserved_constants.iter().any(|r| r == t)
            } else {
                c > cfg.api_min_freq
            }
        })
        .collect();
    if kept.is_empty() {
        return Err(CorpusError::EmptyVocabulary);
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    let mut cnts = vec![0, 0];
    for (t, c) in kept {
        tokens.push(t.to_string());
        cnts.push(c);
    }
    Ok(Vocabulary::from_parts(tokens, cnts))
}

/// An encoded corpus record.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SequenceRecord {
    pub tokens: Vec<u32>,
    pub label: u32,
    pub origin: CorpusMode,
    pub group_key: Option<String>,
}

impl Grouped for SequenceRecord {
    fn group_key(&self) -> Option<&str> {
        self.group_key.as_deref()
    }
}

/// Keep probability of one extra copy of a sequence with relative frequency
/// `freq` under sample threshold `t`.
pub fn subsample_keep_probability(freq: f64, t: f64) -> f64 {
    if freq <= 0.0 {
        return 1.0;
    }
    ((freq / t).sqrt() + 1.0) * t / freq
}

fn expected_after_subsampling(counts: &[u64], total: f64, t: f64) -> f64 {
    counts
        .iter()
        .map(|&c| 1.0 + (c - 1) as f64 * subsample_keep_probability(c as f64 / total, t).min(1.0))
        .sum()
}

/// Thins out frequent duplicate sequences with the frequency-based
/// subsampling rule applied to whole sequences.
///
/// The sample threshold is chosen so the expected output size matches
/// `total_target`; the first copy of every distinct sequence is always kept.
pub fn subsample_paths(records: &[SequenceRecord], total_target: usize, seed: u64) -> Vec<SequenceRecord> {
    if total_target >= records.len() {
        return records.to_vec();
    }
    let mut counts: HashMap<(&[u32], u32), u64> = HashMap::new();
    for r in records {
        *counts.entry((&r.tokens, r.label)).or_default() += 1;
    }
    let total = records.len() as f64;
    let cs: Vec<u64> = counts.values().copied().collect();
    let target = total_target as f64;
    // Expected size grows monotonically with t; bisect in log space.
    let (mut lo, mut hi) = (-40.0f64, 0.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_after_subsampling(&cs, total, mid.exp()) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = hi.exp();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashMap<(&[u32], u32), ()> = HashMap::new();
    let mut out = Vec::new();
    for r in records {
        let key = (r.tokens.as_slice(), r.label);
        if seen.insert(key, ()).is_none() {
            out.push(r.clone());
            continue;
        }
        let p = subsample_keep_probability(counts[&key] as f64 / total, t);
        if p >= 1.0 || rng.gen::<f64>() < p {
            out.push(r.clone());
        }
    }
    out
}

/// Splits by group so all records of one group land on the same side.
/// Ungrouped records form singleton groups.
pub fn split_dataset<T: Grouped + Clone>(records: &[T], train_frac: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    assert!(train_frac > 0.0 && train_frac < 1.0, "train_frac must be in (0, 1)");
    let mut group_of: Vec<usize> = Vec::with_capacity(records.len());
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut n_groups = 0;
    for r in records {
        let g = match r.group_key() {
            Some(k) => *ids.entry(k).or_insert_with(|| {
                n_groups += 1;
                n_groups - 1
            }),
            None => {
                n_groups += 1;
                n_groups - 1
            }
        };
        group_of.push(g);
    }
    let mut order: Vec<usize> = (0..n_groups).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((train_frac * n_groups as f64).round() as usize).min(n_groups);
    let mut is_train = vec![false; n_groups];
    for &g in &order[..n_train] {
        is_train[g] = true;
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (r, g) in records.iter().zip(group_of) {
        if is_train[g] {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    (train, test)
}

/// Next tokens observed for each exact input sequence in training.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NextSetIndex {
    map: BTreeMap<Vec<u32>, BTreeSet<u32>>,
}

impl NextSetIndex {
    pub fn insert(&mut self, key: Vec<u32>, label: u32) {
        self.map.entry(key).or_default().insert(label);
    }

    pub fn get(&self, key: &[u32]) -> Option<&BTreeSet<u32>> {
        self.map.get(key)
    }

    /// A case is known when its exact input appeared in training.
    pub fn is_known(&self, key: &[u32]) -> bool {
        self.map.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

pub fn build_next_set_index<'a, I>(train: I) -> NextSetIndex
where
    I: IntoIterator<Item = &'a SequenceRecord>,
{
    let mut idx = NextSetIndex::default();
    for r in train {
        idx.insert(r.tokens.clone(), r.label);
    }
    idx
}

/// Key of a multi-path case: the paths joined by `PAD` separators.
pub fn path_set_key(paths: &[Vec<u32>]) -> Vec<u32> {
    let mut key = Vec::new();
    for (i, p) in paths.iter().enumerate() {
        if i > 0 {
            key.push(PAD);
        }
        key.extend_from_slice(p);
    }
    key
}

/// The paths of one graph together with their shared label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSetExample {
    pub group: String,
    pub paths: Vec<Vec<u32>>,
    pub label: u32,
}

impl PathSetExample {
    pub fn key(&self) -> Vec<u32> {
        path_set_key(&self.paths)
    }
}

/// Groups records into path sets (first-appearance order), keeping at most
/// `budget` paths per group. Ungrouped records become singleton sets.
pub fn group_path_sets(records: &[SequenceRecord], budget: usize) -> Vec<PathSetExample> {
    let mut out: Vec<PathSetExample> = Vec::new();
    let mut pos: HashMap<String, usize> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        let key = r.group_key.clone().unwrap_or_else(|| format!("#{i}"));
        match pos.get(&key) {
            Some(&j) => {
                if out[j].paths.len() < budget {
                    out[j].paths.push(r.tokens.clone());
                }
            }
            None => {
                pos.insert(key.clone(), out.len());
                out.push(PathSetExample {
                    group: key,
                    paths: vec![r.tokens.clone()],
                    label: r.label,
                });
            }
        }
    }
    out
}

/// Options for turning programs into corpus records.
#[derive(Debug, Clone)]
pub struct ExtractOptions<'a> {
    pub target_prefixes: &'a [&'a str],
    pub max_call_depth: usize,
    pub max_len: usize,
    pub max_paths: usize,
    /// `Some(n)` selects at most n paths per graph instead of enumerating.
    pub select_budget: Option<usize>,
    pub seed: u64,
}

impl Default for ExtractOptions<'_> {
    fn default() -> Self {
        ExtractOptions {
            target_prefixes: &[],
            max_call_depth: crate::slicer::DEFAULT_MAX_CALL_DEPTH,
            max_len: crate::adg::DEFAULT_MAX_LEN,
            max_paths: 1000,
            select_budget: None,
            seed: 0,
        }
    }
}

/// Builds records of one corpus mode from a program. `source` prefixes the
/// group keys (`source#function:index`).
pub fn program_records(
    program: &MiniProgram,
    source: &str,
    mode: CorpusMode,
    opts: &ExtractOptions<'_>,
) -> Result<Vec<TextRecord>, CorpusError> {
    let mut out = Vec::new();
    for crit in find_criteria(program, opts.target_prefixes) {
        let group = format!("{source}#{}:{}", crit.function, crit.statement_index);
        let make = |tokens: Vec<String>, label: String| {
            let skip = tokens.len().saturating_sub(opts.max_len);
            TextRecord {
                origin: mode,
                group: Some(group.clone()),
                tokens: tokens[skip..].to_vec(),
                label,
            }
        };
        match mode {
            CorpusMode::Bytecode => {
                let f = &program.functions[&crit.function];
                let body = &f.body[..=crit.statement_index];
                let (last, rest) = body.split_last().unwrap();
                let tokens: Vec<String> = rest.iter().filter_map(|s| s.token()).map(|t| t.text.clone()).collect();
                if !tokens.is_empty() {
                    out.push(make(tokens, last.token().unwrap().text.clone()));
                }
            }
            CorpusMode::Slice => {
                let slice = backward_slice(program, &crit, opts.max_call_depth)?;
                let toks = slice.tokens();
                let (label, rest) = toks.split_last().unwrap();
                if !rest.is_empty() {
                    out.push(make(rest.iter().map(|t| t.text.clone()).collect(), label.text.clone()));
                }
            }
            CorpusMode::DepPath => {
                let slice = backward_slice(program, &crit, opts.max_call_depth)?;
                debug_assert_eq!(slice.criterion_statement().kind, StmtKind::ApiCall);
                let graph = build_adg(&slice)?;
                let paths = match opts.select_budget {
                    Some(n) => select_paths(&graph, n, opts.seed),
                    None => extract_all_paths(&graph, opts.max_len, opts.max_paths),
                };
                for p in paths {
                    out.push(make(
                        p.tokens.iter().map(|t| t.text.clone()).collect(),
                        p.label.text.clone(),
                    ));
                }
            }
        }
    }
    Ok(out)
}
