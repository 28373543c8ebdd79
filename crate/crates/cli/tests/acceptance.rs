//! Acceptance suite: runs every criterion and prints one PASS/FAIL line each.

#[path = "../../core/tests/common/reference.rs"]
mod reference;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use depgraph_rec::adg::{parse_graphs, select_paths_traced};
use depgraph_rec::corpus::{
    build_next_set_index, build_vocabulary, group_path_sets, split_dataset, NextSetIndex, PathSetExample,
    SequenceRecord, TextRecord, VocabConfig, Vocabulary,
};
use depgraph_rec::datagen::{
    gen_interchangeable_context, gen_low_freq_variant, gen_random_dags, gen_similar_api, interchangeable, low_freq,
    ChallengeSpec,
};
use depgraph_rec::embed::{cosine, nearest_neighbors, ns_loss_and_grads, train_skipgram, SkipGramConfig};
use depgraph_rec::eval::{evaluate, EvalReport};
use depgraph_rec::hylstm::{
    hybrid_loss, hylstm_forward, multi_forward, multi_loss_and_grads, sequence_loss_and_grads, train_multi_hylstm,
    train_single_path, HyLstmModel, LossMode, MultiHyLstmModel, Pooling, SinglePathModel, TrainConfig, TrainReport,
};
use depgraph_rec::nn::gradcheck::{numeric_grad, relative_error};
use depgraph_rec::nn::{lstm_backward, lstm_forward, LstmStack, ParamSet};
use depgraph_rec::CorpusMode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

#[allow(clippy::excessive_precision)]
fn hybrid_loss_exactness(_: &mut Vec<EvalReport>) -> Outcome {
    let third = 1.0 / 3.0;
    let o = [0.1, 0.8, 0.1];
    let s = vec![vec![third; 3], vec![0.25, 0.5, 0.25]];
    let l = hybrid_loss(&o, &s, &[0, 1], 0.5).map_err(|e| e.to_string())?;
    // 40-digit evaluation of 0.5(-ln 0.8) + 0.5((-ln 1/3) + (-ln 0.5))/2.
    let want = 0.559_511_642_964_118_628_086_266_884_750_092_819_868_1;
    let err = (l - want).abs();
    let o2 = [0.2, 0.7, 0.1];
    let s2 = vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.1, 0.8]];
    let one = hybrid_loss(&o2, &s2, &[2, 1], 1.0).map_err(|e| e.to_string())?;
    let zero = hybrid_loss(&o2, &s2, &[2, 1], 0.0).map_err(|e| e.to_string())?;
    let ends = one == -(0.7f64.ln()) && zero == (-(0.2f64.ln()) - 0.1f64.ln()) / 2.0;
    check(err < 1e-12 && ends, format!("loss {l:.15}, |err| {err:.1e}, endpoints exact: {ends}"))
}

// ---------------------------------------------------------------- 2

fn randomized(vocab: usize, dim: usize, hidden: usize, layers: usize, seed: u64) -> HyLstmModel {
    let mut m = HyLstmModel::init(vocab, dim, hidden, layers, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for t in m.blocks_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    m
}

/// Largest relative error over every parameter block.
fn worst_block<P: ParamSet + Clone>(params: &P, analytic: &P, loss: impl Fn(&P) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for bi in 0..params.blocks().len() {
        let base = params.blocks()[bi].1.data().to_vec();
        let num = numeric_grad(
            |v: &[f64]| {
                let mut p = params.clone();
                p.blocks_mut()[bi].data_mut().copy_from_slice(v);
                loss(&p)
            },
            &base,
            1e-5,
        );
        worst = worst.max(relative_error(analytic.blocks()[bi].1.data(), &num));
    }
    worst
}

fn gradient_integrity(_: &mut Vec<EvalReport>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut vecs = |n: usize, d: usize| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    };

    let ns = {
        let v = vecs(4, 6);
        let g = ns_loss_and_grads(&v[0], &v[1], &[&v[2], &v[3]]);
        let a = relative_error(&g.d_input, &numeric_grad(|x| ns_loss_and_grads(x, &v[1], &[&v[2], &v[3]]).loss, &v[0], 1e-5));
        let b =
            relative_error(&g.d_positive, &numeric_grad(|x| ns_loss_and_grads(&v[0], x, &[&v[2], &v[3]]).loss, &v[1], 1e-5));
        let c = relative_error(
            &g.d_negatives[1],
            &numeric_grad(|x| ns_loss_and_grads(&v[0], &v[1], &[&v[2], x]).loss, &v[3], 1e-5),
        );
        a.max(b).max(c)
    };

    let lstm = {
        let stack = LstmStack::init(3, 6, 2, &mut ChaCha8Rng::seed_from_u64(22));
        let xs = vecs(4, 3);
        let ws = vecs(4, 6);
        let loss = |s: &LstmStack| -> f64 {
            let c = lstm_forward(s, &xs).unwrap();
            c.top_hidden().iter().zip(&ws).map(|(h, w)| h.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).sum()
        };
        let cache = lstm_forward(&stack, &xs).map_err(|e| e.to_string())?;
        let mut g = stack.zeros_like();
        lstm_backward(&stack, &cache, &ws.iter().cloned().map(Some).collect::<Vec<_>>(), &mut g)
            .map_err(|e| e.to_string())?;
        worst_block(&stack, &g, loss)
    };

    let mut heads = 0.0f64;
    let m = randomized(8, 3, 4, 2, 23);
    for mode in [LossMode::Hybrid { alpha: 0.5 }, LossMode::TokenLevel, LossMode::SequenceLevel] {
        let mut g = m.zeros_like();
        sequence_loss_and_grads(&m, &[2, 6, 3], 4, mode, &mut g, 1.0).map_err(|e| e.to_string())?;
        heads = heads.max(worst_block(&m, &g, |x| {
            sequence_loss_and_grads(x, &[2, 6, 3], 4, mode, &mut x.zeros_like(), 1.0).unwrap().objective
        }));
    }

    let mut multi = 0.0f64;
    let paths = vec![vec![2, 3, 4], vec![5, 6, 7], vec![3, 2, 6]];
    for pooling in [Pooling::Hidden, Pooling::Probability] {
        let mm = MultiHyLstmModel { shared: m.clone(), pooling };
        let mut g = m.zeros_like();
        multi_loss_and_grads(&mm, &paths, 5, &mut g, 1.0).map_err(|e| e.to_string())?;
        multi = multi.max(worst_block(&m, &g, |x| {
            let mm = MultiHyLstmModel { shared: x.clone(), pooling };
            multi_loss_and_grads(&mm, &paths, 5, &mut x.zeros_like(), 1.0).unwrap().objective
        }));
    }

    let worst = ns.max(lstm).max(heads).max(multi);
    check(
        worst < 1e-4,
        format!("max rel err: skip-gram {ns:.1e}, lstm {lstm:.1e}, heads {heads:.1e}, multi-path {multi:.1e}"),
    )
}

// ---------------------------------------------------------------- 3

const BRANCHING: &str = "graph branching
sc 11
node 3\t-\tBase64.decode(String)
node 5\t-\t\"AES\"
node 8\t-\tString.getBytes()
node 10\t-\tString.getBytes(String)
node 11\t-\tSecretKeySpec.<init>(byte[],String)
node 13\t-\t\"AES\"
edge 3\t8\t$r0
edge 3\t10\t$r0
edge 8\t11\t$r1
edge 10\t11\t$r1
edge 13\t11\t$r2
edge 5\t10\t$r5
end
";

fn oracle_equivalence(_: &mut Vec<EvalReport>) -> Outcome {
    let mut mismatches = 0;
    let mut disconnected = 0;
    for (i, g) in gen_random_dags(1000, 8, 12).iter().enumerate() {
        for budget in 1..=6 {
            let seed = i as u64 * 31 + budget as u64;
            let got = select_paths_traced(g, budget, seed);
            let want = reference::multi_path_selection(budget, g, seed);
            let branches: BTreeSet<(usize, usize)> = got.branches.iter().copied().collect();
            let paths: Vec<Vec<usize>> = got.paths.iter().map(|p| p.nodes.clone()).collect();
            if branches != want.branches || paths != want.paths {
                mismatches += 1;
            }
            disconnected += got.paths.iter().filter(|p| !p.is_connected_in(g)).count();
        }
    }
    let graphs = parse_graphs(BRANCHING).map_err(|e| e.to_string())?;
    let branching = &graphs[0].1;
    let sel = select_paths_traced(branching, 5, 7);
    let first: Vec<usize> = sel.branches.iter().filter(|b| b.0 == 11).map(|b| b.1).collect();
    let branch_ok = first.len() == 2 && (first[0] == 8 || first[0] == 10) && first[1] == 13;
    check(
        mismatches == 0 && disconnected == 0 && branch_ok,
        format!("6000 selections: {mismatches} oracle mismatches, {disconnected} disconnected paths; branching graph first level {first:?}"),
    )
}

// ---------------------------------------------------------------- 4, 5

fn encode(records: &[TextRecord]) -> (Vec<SequenceRecord>, Vocabulary) {
    let vocab = build_vocabulary(records, &VocabConfig::default()).unwrap();
    (records.iter().map(|r| vocab.encode(r, 10)).collect(), vocab)
}

fn singletons(seqs: &[SequenceRecord]) -> Vec<PathSetExample> {
    seqs.iter()
        .map(|s| PathSetExample { group: s.group_key.clone().unwrap_or_default(), paths: vec![s.tokens.clone()], label: s.label })
        .collect()
}

fn desk_cfg(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig { epochs, batch: 32, lr: 0.001, seed, ..TrainConfig::default() }
}

fn train_single(vocab: &Vocabulary, data: &[SequenceRecord], mode: LossMode, epochs: usize, seed: u64) -> SinglePathModel {
    let mut m = HyLstmModel::init(vocab.len(), 32, 64, 2, seed);
    train_single_path(&mut m, data, mode, &desk_cfg(epochs, seed)).unwrap();
    SinglePathModel { model: m, mode }
}

fn low_frequency_variant(reports: &mut Vec<EvalReport>) -> Outcome {
    let mut hy_ok = 0;
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..5 {
        let spec = ChallengeSpec::low_freq_variant(seed);
        let (seqs, vocab) = encode(&gen_low_freq_variant(&spec).unwrap());
        let (train, test) = split_dataset(&seqs, 0.8, seed);
        let index = build_next_set_index(&train);
        let cases = singletons(&test);
        let rare = vocab.id(low_freq::A_RARE);
        let variant = |r: &EvalReport| {
            r.subset(|c| c.key.len() == 1 + spec.suffix_len && c.key[0] == rare)
        };
        let h = vocab.hash();
        let hy = train_single(&vocab, &train, LossMode::Hybrid { alpha: 0.5 }, 4, seed);
        let base = train_single(&vocab, &train, LossMode::TokenLevel, 4, seed);
        let hy_r = evaluate(&hy, &h, &cases, &h, &index, &[1]).unwrap();
        let base_r = evaluate(&base, &h, &cases, &h, &index, &[1]).unwrap();
        let (hv, bv) = (variant(&hy_r), variant(&base_r));
        hy_ok += usize::from(hv.in_set_all >= 0.95);
        wins += usize::from(hv.in_set_all > bv.in_set_all);
        rows.push(format!("s{seed} {:.2}/{:.2} (n={})", hv.in_set_all, bv.in_set_all, hv.n_cases));
        reports.extend([hy_r, base_r, hv, bv]);
    }
    check(
        hy_ok == 5 && wins >= 4,
        format!("variant in-set HyLSTM/token-level: {}; >=0.95 on {hy_ok}/5, strictly better on {wins}/5", rows.join(", ")),
    )
}

fn similar_apis(reports: &mut Vec<EvalReport>) -> Outcome {
    let mut pass = 0;
    let mut rows = Vec::new();
    for seed in 0..5 {
        let (seqs, vocab) = encode(&gen_similar_api(&ChallengeSpec::similar_api(seed)).unwrap());
        let (train, test) = split_dataset(&seqs, 0.8, seed);
        let h = vocab.hash();
        let none = NextSetIndex::default();

        let mut multi = MultiHyLstmModel::new(HyLstmModel::init(vocab.len(), 32, 64, 2, seed));
        train_multi_hylstm(&mut multi, &group_path_sets(&train, 3), &desk_cfg(15, seed)).unwrap();
        let m_r = evaluate(&multi, &h, &group_path_sets(&test, 3), &h, &none, &[1]).unwrap();

        let p1 = |s: &[SequenceRecord]| -> Vec<SequenceRecord> {
            group_path_sets(s, 1)
                .into_iter()
                .map(|c| SequenceRecord { tokens: c.paths[0].clone(), label: c.label, origin: CorpusMode::DepPath, group_key: Some(c.group) })
                .collect()
        };
        let single = train_single(&vocab, &p1(&train), LossMode::Hybrid { alpha: 0.5 }, 15, seed);
        let s_r = evaluate(&single, &h, &singletons(&p1(&test)), &h, &none, &[1]).unwrap();

        pass += usize::from(m_r.top1 >= 0.95 && s_r.top1 <= 0.60);
        rows.push(format!("s{seed} {:.3}/{:.3}", m_r.top1, s_r.top1));
        reports.extend([m_r, s_r]);
    }
    check(pass == 5, format!("accuracy multi-path/single-path P1: {}", rows.join(", ")))
}

// ---------------------------------------------------------------- 6

fn embedding_similarity(_: &mut Vec<EvalReport>) -> Outcome {
    use interchangeable::{A, B, C};
    let mut good = 0;
    let mut worst_gap = f64::INFINITY;
    for seed in 0..10 {
        let records = gen_interchangeable_context(600, seed);
        let vocab = build_vocabulary(&records, &VocabConfig::default()).unwrap();
        let seqs: Vec<SequenceRecord> = records.iter().map(|r| vocab.encode(r, usize::MAX)).collect();
        let cfg = SkipGramConfig { dim: 16, window: 2, negatives: 5, batch: 64, epochs: 10, subsample: 0.0, seed, ..SkipGramConfig::default() };
        let (table, _) = train_skipgram(&seqs, &vocab, CorpusMode::DepPath, &cfg).unwrap();
        let v = |t: &str| table.vector(table.id(t).unwrap()).to_vec();
        let (ab, ac) = (cosine(&v(A), &v(B)), cosine(&v(A), &v(C)));
        let top = |t: &str| nearest_neighbors(&table, t, 1).unwrap()[0].0.clone();
        worst_gap = worst_gap.min(ab - ac);
        good += usize::from(ab > ac && top(A) == B && top(B) == A);
    }
    check(good == 10, format!("{good}/10 seeds; smallest cos(A,B)-cos(A,C) {worst_gap:.3}"))
}

// ---------------------------------------------------------------- 7

#[allow(clippy::ptr_arg)]
fn metric_identities(reports: &mut Vec<EvalReport>) -> Outcome {
    let mut bad = 0;
    for r in reports.iter() {
        let weighted = (r.in_set_known * r.n_known as f64 + r.in_set_unknown * r.n_unknown as f64) / r.n_cases.max(1) as f64;
        let ok = r.in_set_all >= r.top1
            && r.n_known + r.n_unknown == r.n_cases
            && (r.in_set_all - weighted).abs() <= 1e-12
            && r.cases.iter().all(|c| c.in_set || c.prediction != c.label);
        bad += usize::from(!ok);
    }
    check(!reports.is_empty() && bad == 0, format!("{} reports checked, {bad} violations", reports.len()))
}

// ---------------------------------------------------------------- 8

fn reduction_identities(_: &mut Vec<EvalReport>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut k1 = 0;
    for seed in 0..50 {
        let m = randomized(9, 4, 5, 2, seed);
        let len = rng.gen_range(1..6);
        let p: Vec<u32> = (0..len).map(|_| rng.gen_range(2..9)).collect();
        let o = hylstm_forward(&m, &p).unwrap().o_n;
        for pooling in [Pooling::Hidden, Pooling::Probability] {
            let mm = MultiHyLstmModel { shared: m.clone(), pooling };
            k1 += usize::from(multi_forward(&mm, std::slice::from_ref(&p)).unwrap() == o);
        }
    }

    let rec = |t: &[u32], l: u32| SequenceRecord { tokens: t.to_vec(), label: l, origin: CorpusMode::DepPath, group_key: None };
    let data = vec![rec(&[2, 3, 4], 5), rec(&[3, 4], 6), rec(&[2, 6, 4, 3], 5), rec(&[6], 2), rec(&[7, 2], 3)];
    let sets: Vec<PathSetExample> = data
        .iter()
        .enumerate()
        .map(|(i, r)| PathSetExample { group: i.to_string(), paths: vec![r.tokens.clone()], label: r.label })
        .collect();
    let cfg = TrainConfig { epochs: 5, batch: 2, lr: 0.01, seed: 4, ..TrainConfig::default() };
    let mut single = HyLstmModel::init(8, 4, 6, 2, 2);
    let mut multi = MultiHyLstmModel::new(single.clone());
    let a = train_single_path(&mut single, &data, LossMode::TokenLevel, &cfg).unwrap();
    let b = train_multi_hylstm(&mut multi, &sets, &cfg).unwrap();
    let objs = |r: &TrainReport| r.epochs.iter().map(|e| e.objective).collect::<Vec<_>>();
    let same = single == multi.shared && objs(&a) == objs(&b);
    check(k1 == 100 && same, format!("k=1 bit-identical {k1}/100; singleton training identical: {same}"))
}

// ---------------------------------------------------------------- 9

fn pipeline(dir: &Path) -> Result<(), String> {
    let bin = env!("CARGO_BIN_EXE_depgraph-rec");
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/e2e.sh");
    let out = Command::new("bash")
        .arg(script)
        .arg(dir)
        .env("DEPGRAPH_REC", bin)
        .env("DEPGRAPH_REC_THREADS", "1")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn determinism(_: &mut Vec<EvalReport>) -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline(a.path())?;
    pipeline(b.path())?;
    let artifacts = [
        "graphs.adg",
        "paths.tsv",
        "embed/vocab.tsv",
        "embed/embedding.txt",
        "single/model.ckpt",
        "multi/model.ckpt",
        "multi/model.manifest",
        "eval/report.txt",
        "eval/report.jsonl",
        "eval/cases.json",
    ];
    let differ: Vec<&str> = artifacts
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.path().join(f)).ok() != std::fs::read(b.path().join(f)).ok())
        .collect();
    let missing = artifacts.iter().filter(|f| !a.path().join(f).exists()).count();
    check(
        differ.is_empty() && missing == 0,
        format!("{} artifacts compared across two runs; differing: {differ:?}", artifacts.len()),
    )
}

type Criterion = fn(&mut Vec<EvalReport>) -> Outcome;

fn main() {
    let criteria: [(&str, Criterion); 9] = [
        ("hybrid loss exactness", hybrid_loss_exactness),
        ("gradient integrity", gradient_integrity),
        ("selection oracle equivalence", oracle_equivalence),
        ("low-frequency variant", low_frequency_variant),
        ("similar APIs", similar_apis),
        ("embedding similarity", embedding_similarity),
        ("metric identities", metric_identities),
        ("reduction identities", reduction_identities),
        ("pipeline determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut reports = Vec::new();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| f(&mut reports)))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failed += usize::from(outcome.is_err());
        println!("criterion {} {tag} {name} ({secs:.1}s): {detail}", i + 1);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
