//! Seeded generators for synthetic corpora, graphs and programs.
//!
//! * [`gen_low_freq_variant`]: a frequent pattern `(a2, b.., ) -> d2` and a
//!   rare variant `(a1, b..) -> d1` sharing the suffix, plus distractor
//!   paths that run through either pattern and continue past `d`.
//! * [`gen_similar_api`]: two targets used in identical contexts, told apart
//!   only by the first token of a third, decisive path.
//! * [`gen_random_dags`]: small dependence graphs for selection tests.
//! * [`gen_programs`]: MiniIR programs around a cipher workflow.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adg::{AdgEdge, AdgNode, ApiDependenceGraph};
use crate::corpus::{CorpusMode, TextRecord};
use crate::ir::{canonicalize_signature, Function, MiniProgram, Statement};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid challenge spec: {0}")]
    Spec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChallengeKind {
    LowFreqVariant,
    SimilarApi,
}

impl fmt::Display for ChallengeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChallengeKind::LowFreqVariant => "low_freq_variant",
            ChallengeKind::SimilarApi => "similar_api",
        })
    }
}

impl FromStr for ChallengeKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "low_freq_variant" => Ok(ChallengeKind::LowFreqVariant),
            "similar_api" => Ok(ChallengeKind::SimilarApi),
            o => Err(format!("unknown challenge kind `{o}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChallengeSpec {
    pub kind: ChallengeKind,
    /// Distinct tokens available to the generator.
    pub vocab_size: usize,
    /// Frequent-pattern records, or examples for `similar_api`.
    pub n_high: usize,
    /// Rare-variant records.
    pub n_low: usize,
    /// Length of the suffix shared by both patterns, or of the tail behind
    /// the decisive token for `similar_api`.
    pub suffix_len: usize,
    /// Distractor records.
    pub distractors: usize,
    /// Probability that the decisive path is present.
    pub decisive_rate: f64,
    pub seed: u64,
}

impl ChallengeSpec {
    pub fn low_freq_variant(seed: u64) -> Self {
        ChallengeSpec {
            kind: ChallengeKind::LowFreqVariant,
            vocab_size: 24,
            n_high: 900,
            n_low: 100,
            suffix_len: 2,
            distractors: 1000,
            decisive_rate: 1.0,
            seed,
        }
    }

    pub fn similar_api(seed: u64) -> Self {
        ChallengeSpec {
            kind: ChallengeKind::SimilarApi,
            vocab_size: 24,
            n_high: 1000,
            n_low: 0,
            suffix_len: 2,
            distractors: 0,
            decisive_rate: 1.0,
            seed,
        }
    }

    fn fixed_tokens(&self) -> usize {
        match self.kind {
            // a1 a2 b.. d1 d2
            ChallengeKind::LowFreqVariant => 4 + self.suffix_len,
            // g1 g2, two decisive tokens per label, tail tokens
            ChallengeKind::SimilarApi => 6 + self.suffix_len,
        }
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: String| Err(DatagenError::Spec(m));
        if self.n_high == 0 {
            return bad("n_high must be >= 1".into());
        }
        if self.kind == ChallengeKind::LowFreqVariant && self.n_low > self.n_high {
            return bad("n_low must not exceed n_high".into());
        }
        if self.suffix_len == 0 {
            return bad("suffix_len must be >= 1".into());
        }
        if self.vocab_size < self.fixed_tokens() + 2 {
            return bad(format!("vocab_size must be at least {}", self.fixed_tokens() + 2));
        }
        if !(0.0..=1.0).contains(&self.decisive_rate) {
            return bad("decisive_rate must be in [0, 1]".into());
        }
        Ok(())
    }

    fn filler_count(&self) -> usize {
        self.vocab_size - self.fixed_tokens()
    }
}

fn record(group: String, tokens: Vec<String>, label: &str) -> TextRecord {
    TextRecord { origin: CorpusMode::DepPath, group: Some(group), tokens, label: label.to_string() }
}

/// Token names used by [`gen_low_freq_variant`].
pub mod low_freq {
    pub const A_RARE: &str = "Variant.rare()";
    pub const A_COMMON: &str = "Variant.common()";
    pub const D_RARE: &str = "Target.rare()";
    pub const D_COMMON: &str = "Target.common()";

    pub fn suffix(i: usize) -> String {
        format!("Shared.step{i}()")
    }

    pub fn filler(i: usize) -> String {
        format!("Filler.f{i}()")
    }
}

/// Challenge-1 corpus. Groups are `high-i`, `low-i` and `extra-i`.
///
/// Distractors start with either prefix (even odds), run through the shared
/// suffix and the matching target, and continue with one to three filler
/// tokens before a filler label.
pub fn gen_low_freq_variant(spec: &ChallengeSpec) -> Result<Vec<TextRecord>, DatagenError> {
    use low_freq::*;
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let suffix: Vec<String> = (0..spec.suffix_len).map(suffix).collect();
    let pattern = |a: &str| -> Vec<String> { std::iter::once(a.to_string()).chain(suffix.iter().cloned()).collect() };
    let mut out = Vec::with_capacity(spec.n_high + spec.n_low + spec.distractors);
    for i in 0..spec.n_high {
        out.push(record(format!("high-{i}"), pattern(A_COMMON), D_COMMON));
    }
    for i in 0..spec.n_low {
        out.push(record(format!("low-{i}"), pattern(A_RARE), D_RARE));
    }
    let fillers = spec.filler_count();
    for i in 0..spec.distractors {
        let rare = rng.gen_bool(0.5);
        let mut toks = pattern(if rare { A_RARE } else { A_COMMON });
        toks.push((if rare { D_RARE } else { D_COMMON }).to_string());
        for _ in 0..rng.gen_range(1..=3) {
            toks.push(filler(rng.gen_range(0..fillers)));
        }
        out.push(record(format!("extra-{i}"), toks, &filler(rng.gen_range(0..fillers))));
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Token names used by [`gen_similar_api`].
pub mod similar {
    pub const G1: &str = "Cipher.getInstance(String)";
    pub const G2: &str = "Cipher.getInstance(String,Provider)";

    pub fn decisive(label: usize, i: usize) -> String {
        format!("Decisive.g{label}v{i}()")
    }

    pub fn tail(i: usize) -> String {
        format!("Tail.t{i}()")
    }

    pub fn ambiguous(i: usize) -> String {
        format!("Context.c{i}()")
    }
}

/// Challenge-2 corpus: one group `ex-i` per example holding its paths in
/// order `P1, P2[, P3]`, all labeled with the example's target.
///
/// Examples come in pairs with identical `P1, P2` and opposite labels, so the
/// ambiguous paths carry no information about the label.
pub fn gen_similar_api(spec: &ChallengeSpec) -> Result<Vec<TextRecord>, DatagenError> {
    use similar::*;
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pool = spec.filler_count();
    let ambiguous_path = |rng: &mut ChaCha8Rng| -> Vec<String> {
        (0..rng.gen_range(2..=3)).map(|_| ambiguous(rng.gen_range(0..pool))).collect()
    };
    let mut out = Vec::new();
    let mut id = 0;
    while id < spec.n_high {
        let p1 = ambiguous_path(&mut rng);
        let p2 = ambiguous_path(&mut rng);
        let mut labels = [(1, G1), (2, G2)];
        labels.shuffle(&mut rng);
        for (which, label) in labels {
            if id == spec.n_high {
                break;
            }
            let group = format!("ex-{id}");
            out.push(record(group.clone(), p1.clone(), label));
            out.push(record(group.clone(), p2.clone(), label));
            if rng.gen_bool(spec.decisive_rate) {
                let mut p3 = vec![decisive(which, rng.gen_range(0..2))];
                p3.extend((0..spec.suffix_len).map(tail));
                out.push(record(group, p3, label));
            }
            id += 1;
        }
    }
    Ok(out)
}

/// Token names used by [`gen_interchangeable_context`].
pub mod interchangeable {
    pub const A: &str = "Twin.first()";
    pub const B: &str = "Twin.second()";
    pub const C: &str = "Other.api()";
}

/// Sentences `x, A|B, y` with `x, y` from one context pool and `u, C, w`
/// with `u, w` from a disjoint pool.
pub fn gen_interchangeable_context(sentences: usize, seed: u64) -> Vec<TextRecord> {
    use interchangeable::*;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..sentences)
        .map(|i| {
            let (mid, pool) = match i % 3 {
                0 => (A, "Near"),
                1 => (B, "Near"),
                _ => (C, "Far"),
            };
            let ctx = |rng: &mut ChaCha8Rng| format!("{pool}.c{}()", rng.gen_range(0..4));
            let toks = vec![ctx(&mut rng), mid.to_string()];
            let label = ctx(&mut rng);
            record(format!("s-{i}"), toks, &label)
        })
        .collect()
}

/// Random connected DAGs with nodes in topological order and the last node
/// as criterion. Node count is drawn from `2..=max_nodes`.
pub fn gen_random_dags(count: usize, max_nodes: usize, seed: u64) -> Vec<ApiDependenceGraph> {
    assert!(max_nodes >= 2, "max_nodes must be >= 2");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const VARS: [&str; 3] = ["v0", "v1", "v2"];
    const REGIONS: [&str; 3] = ["", "L1", "L2"];
    (0..count)
        .map(|_| {
            let n = rng.gen_range(2..=max_nodes);
            let nodes: Vec<AdgNode> = (0..n)
                .map(|id| AdgNode {
                    id,
                    token: canonicalize_signature(&format!("R.m{}()", rng.gen_range(0..5))).unwrap(),
                    control_dep: REGIONS[rng.gen_range(0..REGIONS.len())].to_string(),
                })
                .collect();
            let mut edges = Vec::new();
            for from in 0..n - 1 {
                let forced = rng.gen_range(from + 1..n);
                for to in from + 1..n {
                    if to == forced || rng.gen_bool(0.3) {
                        let k = rng.gen_range(1..=2);
                        let flow_vars = VARS.choose_multiple(&mut rng, k).map(|v| v.to_string()).collect();
                        edges.push(AdgEdge { from, to, flow_vars });
                    }
                }
            }
            ApiDependenceGraph::new(nodes, edges, n - 1).expect("generated graph is valid")
        })
        .collect()
}

/// MiniIR programs that encrypt with `Cipher`, drawing the algorithm, key
/// source, parameters and control flow at random.
pub fn gen_programs(count: usize, seed: u64) -> Vec<(String, MiniProgram)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|i| (format!("prog{i:04}"), gen_program(&mut rng))).collect()
}

fn gen_program(rng: &mut ChaCha8Rng) -> MiniProgram {
    const ALGS: [&str; 3] = ["\"AES\"", "\"AES/CBC/PKCS5Padding\"", "\"DES\""];
    let alg = ALGS[rng.gen_range(0..ALGS.len())];
    let mut body = vec![
        Statement::const_load("alg", alg),
        Statement::api_call(&["c"], "Cipher.getInstance(String)", &["alg"]),
    ];
    let mut helpers = Vec::new();
    match rng.gen_range(0..3) {
        0 => {
            body.push(Statement::local_call(&["key"], "makeKey", &["kb"]));
            helpers.push(Function::new(
                "makeKey",
                &["raw"],
                vec![
                    Statement::const_load("kalg", "\"AES\""),
                    Statement::api_call(&["spec"], "SecretKeySpec.<init>(byte[],String)", &["raw", "kalg"]),
                    Statement::ret(Some("spec")),
                ],
            ));
        }
        1 => {
            body.push(Statement::const_load("galg", "\"AES\""));
            body.push(Statement::api_call(&["kg"], "KeyGenerator.getInstance(String)", &["galg"]));
            body.push(Statement::const_load("bits", "128"));
            body.push(Statement::api_call(&["kg"], "KeyGenerator.init(int)", &["kg", "bits"]));
            body.push(Statement::api_call(&["key"], "KeyGenerator.generateKey()", &["kg"]));
        }
        _ => {
            body.push(Statement::const_load("kalg", "\"AES\""));
            body.push(Statement::api_call(&["key"], "SecretKeySpec.<init>(byte[],String)", &["kb", "kalg"]));
        }
    }
    let branchy = rng.gen_bool(0.3);
    if branchy {
        body.push(Statement::branch("L1", &["data"]));
        body.push(Statement::const_load("mode", "1").under("L1"));
        body.push(Statement::const_load("mode", "2"));
    } else {
        body.push(Statement::const_load("mode", "1"));
    }
    if rng.gen_bool(0.5) {
        body.push(Statement::api_call(&["iv"], "IvParameterSpec.<init>(byte[])", &["ivb"]));
        body.push(Statement::api_call(
            &["c"],
            "Cipher.init(int,Key,AlgorithmParameterSpec)",
            &["c", "mode", "key", "iv"],
        ));
    } else {
        body.push(Statement::api_call(&["c"], "Cipher.init(int,Key)", &["c", "mode", "key"]));
    }
    if rng.gen_bool(0.4) {
        body.push(Statement::api_call(&["part"], "Cipher.update(byte[])", &["c", "data"]));
    }
    body.push(Statement::api_call(&["out"], "Cipher.doFinal(byte[])", &["c", "data"]));
    let mut fns = vec![Function::new("main", &["data", "kb", "ivb"], body)];
    fns.extend(helpers);
    MiniProgram::new("main", fns).expect("generated program is valid")
}
