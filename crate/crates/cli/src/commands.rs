use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use depgraph_rec::adg::{extract_all_paths, parse_graphs, select_paths, write_graphs, ApiDependenceGraph};
use depgraph_rec::corpus::{
    build_vocabulary, group_path_sets, read_corpus, split_dataset, write_corpus, CorpusMode, NextSetIndex,
    PathSetExample, SequenceRecord, TextRecord, Vocabulary,
};
use depgraph_rec::datagen::{
    gen_interchangeable_context, gen_low_freq_variant, gen_programs, gen_random_dags, gen_similar_api, ChallengeKind,
    ChallengeSpec,
};
use depgraph_rec::embed::train_skipgram;
use depgraph_rec::eval::{compare_runs, evaluate};
use depgraph_rec::hylstm::{
    rank, train_multi_hylstm, train_single_path, HyLstmModel, ModelManifest, MultiHyLstmModel, Recommender,
    SinglePathModel, TrainReport,
};
use depgraph_rec::slicer::{backward_slice, find_criteria};
use depgraph_rec::{build_adg, parse_program, EmbeddingTable, RunConfig};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::CliError;
use crate::io::{manifest_for_dir, manifest_for_file, read_bytes, sha256_hex, Run};
use crate::{Cli, Command, Part, SynthKind, TrainArgs, THREADS_ENV};

const CHECKPOINT: &str = "model.ckpt";
const MODEL_MANIFEST: &str = "model.manifest";
const VOCAB: &str = "vocab.tsv";
const EMBEDDING: &str = "embedding.txt";
const LOSSES: &str = "losses.txt";

fn threads() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::validation("config", format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config.config {
        let bytes = read_bytes(path)?;
        let text = String::from_utf8(bytes).map_err(|_| CliError::validation("config", "config file is not UTF-8"))?;
        cfg.apply_text(&text)?;
    }
    for (k, v) in cli.config.overrides() {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let threads = threads()?;
    // A second global pool in the same process is an error; the first one stands.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    match &cli.command {
        Command::Slice { program, out } => slice(&cfg, threads, program, out),
        Command::BuildGraph { program, out } => build_graph(&cfg, threads, program, out),
        Command::ExtractPaths { graphs, out } => paths(&cfg, threads, graphs, out, false),
        Command::SelectPaths { graphs, out } => paths(&cfg, threads, graphs, out, true),
        Command::TrainEmbed { corpus, part, out } => train_embed(&cfg, threads, corpus, *part, out),
        Command::Train { train: args } => train(&cfg, threads, args, false, None),
        Command::TrainMulti { train: args, init_model } => train(&cfg, threads, args, true, init_model.as_deref()),
        Command::Eval { model, corpus, part, index_corpus, index_part, k, out } => {
            eval(&cfg, threads, model, corpus, *part, index_corpus.as_deref().unwrap_or(corpus), *index_part, k, out)
        }
        Command::Recommend { model, paths, k, out } => recommend(&cfg, threads, model, paths, *k, out),
        Command::GenSynthetic { kind, count, max_nodes, out } => gen_synthetic(&cfg, threads, *kind, *count, *max_nodes, out),
        Command::OracleCheck { count, max_nodes, out } => oracle_check(&cfg, threads, *count, *max_nodes, out),
    }
}

fn source_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| "program".to_string(), |s| s.to_string_lossy().into_owned())
}

fn slice(cfg: &RunConfig, threads: usize, program: &Path, out: &Path) -> Result<(), CliError> {
    let mut run = Run::new("slice", cfg, threads);
    let prog = parse_program(&run.read_text(program)?)?;
    let mut text = String::new();
    for crit in find_criteria(&prog, &cfg.target_prefixes()) {
        text.push_str(&backward_slice(&prog, &crit, cfg.max_call_depth)?.render());
    }
    run.write(out, text.as_bytes())?;
    run.finish(&manifest_for_file(out))
}

fn build_graph(cfg: &RunConfig, threads: usize, programs: &[std::path::PathBuf], out: &Path) -> Result<(), CliError> {
    let mut run = Run::new("build-graph", cfg, threads);
    let sources: Vec<(String, String)> =
        programs.iter().map(|p| Ok((source_name(p), run.read_text(p)?))).collect::<Result<_, CliError>>()?;
    let targets = cfg.target_prefixes();
    let per_file: Vec<Vec<(String, ApiDependenceGraph)>> = sources
        .par_iter()
        .map(|(name, text)| -> Result<_, CliError> {
            let prog = parse_program(text)?;
            find_criteria(&prog, &targets)
                .iter()
                .map(|crit| {
                    let graph = build_adg(&backward_slice(&prog, crit, cfg.max_call_depth)?)?;
                    Ok((format!("{name}#{}:{}", crit.function, crit.statement_index), graph))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let graphs: Vec<(String, ApiDependenceGraph)> = per_file.into_iter().flatten().collect();
    run.write(out, write_graphs(graphs.iter().map(|(k, g)| (k.as_str(), g))).as_bytes())?;
    run.finish(&manifest_for_file(out))
}

fn paths(cfg: &RunConfig, threads: usize, graphs: &Path, out: &Path, select: bool) -> Result<(), CliError> {
    let mut run = Run::new(if select { "select-paths" } else { "extract-paths" }, cfg, threads);
    let graphs = parse_graphs(&run.read_text(graphs)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<u64> = graphs.iter().map(|_| rng.next_u64()).collect();
    let records: Vec<TextRecord> = graphs
        .par_iter()
        .zip(&seeds)
        .flat_map_iter(|((key, g), &seed)| {
            let found = if select {
                select_paths(g, cfg.budget, seed).into_iter().map(|p| p.truncated(cfg.max_len)).collect()
            } else {
                extract_all_paths(g, cfg.max_len, cfg.max_paths)
            };
            found.into_iter().map(move |p| TextRecord {
                origin: CorpusMode::DepPath,
                group: Some(key.clone()),
                tokens: p.tokens.iter().map(|t| t.text.clone()).collect(),
                label: p.label.text.clone(),
            })
        })
        .collect();
    run.write(out, write_corpus(&records).as_bytes())?;
    run.finish(&manifest_for_file(out))
}

fn load_records(run: &mut Run<'_>, cfg: &RunConfig, path: &Path, part: Part) -> Result<Vec<TextRecord>, CliError> {
    let records = read_corpus(&run.read_text(path)?)?;
    Ok(match part {
        Part::All => records,
        Part::Train => split_dataset(&records, cfg.train_frac, cfg.seed).0,
        Part::Test => split_dataset(&records, cfg.train_frac, cfg.seed).1,
    })
}

fn encode(vocab: &Vocabulary, records: &[TextRecord], max_len: usize) -> Vec<SequenceRecord> {
    records.iter().map(|r| vocab.encode(r, max_len)).collect()
}

fn losses_text(values: impl Iterator<Item = f64>) -> String {
    values.enumerate().map(|(i, v)| format!("{}\t{v}\n", i + 1)).collect()
}

fn train_embed(cfg: &RunConfig, threads: usize, corpus: &Path, part: Part, out: &Path) -> Result<(), CliError> {
    let mut run = Run::new("train-embed", cfg, threads);
    let records = load_records(&mut run, cfg, corpus, part)?;
    let vocab = build_vocabulary(&records, &cfg.vocab_config())?;
    let mode = records.first().map_or(CorpusMode::DepPath, |r| r.origin);
    let (table, report) = train_skipgram(&encode(&vocab, &records, cfg.max_len), &vocab, mode, &cfg.skipgram(threads))?;
    run.write(&out.join(VOCAB), vocab.to_text().as_bytes())?;
    run.write(&out.join(EMBEDDING), table.to_text().as_bytes())?;
    run.write(&out.join(LOSSES), losses_text(report.epoch_losses.iter().copied()).as_bytes())?;
    run.finish(&manifest_for_dir(out))
}

fn train(
    cfg: &RunConfig,
    threads: usize,
    args: &TrainArgs,
    multi: bool,
    init_model: Option<&Path>,
) -> Result<(), CliError> {
    let mut run = Run::new(if multi { "train-multi" } else { "train" }, cfg, threads);
    let records = load_records(&mut run, cfg, &args.corpus, args.part)?;
    let vocab = match &args.vocab {
        Some(p) => Vocabulary::from_text(&run.read_text(p)?)?,
        None => build_vocabulary(&records, &cfg.vocab_config())?,
    };
    let seqs = encode(&vocab, &records, cfg.max_len);
    let mut model = HyLstmModel::init(vocab.len(), cfg.dim, cfg.hidden, cfg.layers, cfg.seed);
    let mut embedding_init = "random".to_string();
    if let Some(p) = &args.embedding {
        let bytes = run.read(p)?;
        let text = String::from_utf8(bytes).map_err(|_| CliError::validation("embed", "embedding file is not UTF-8"))?;
        model = model.with_embedding(&EmbeddingTable::from_text(&text)?)?;
        embedding_init = sha256_hex(text.as_bytes());
    }
    if let Some(dir) = init_model {
        let (loaded, manifest) = load_model(&mut run, dir)?;
        if manifest.vocab_hash != vocab.hash() {
            return Err(CliError::validation("vocab", "initial model was trained on a different vocabulary"));
        }
        model = loaded;
        embedding_init = format!("model:{}", manifest.embedding_init);
    }
    let train_cfg = cfg.train(threads);
    let loss_mode = cfg.loss_mode()?;
    let (model, report, budget): (HyLstmModel, TrainReport, usize) = if multi {
        let mut m = MultiHyLstmModel { shared: model, pooling: cfg.pooling };
        let report = train_multi_hylstm(&mut m, &group_path_sets(&seqs, cfg.budget), &train_cfg)?;
        (m.shared, report, cfg.budget)
    } else {
        let report = train_single_path(&mut model, &seqs, loss_mode, &train_cfg)?;
        (model, report, 1)
    };
    let manifest = ModelManifest {
        kind: if multi { "multi" } else { "single" }.to_string(),
        loss_mode,
        pooling: cfg.pooling,
        budget,
        vocab_hash: vocab.hash(),
        embedding_init,
        dim: cfg.dim,
        hidden: cfg.hidden,
        layers: cfg.layers,
        seed: cfg.seed,
    };
    let out = &args.out;
    run.write(&out.join(CHECKPOINT), &model.to_checkpoint())?;
    run.write(&out.join(MODEL_MANIFEST), manifest.to_text().as_bytes())?;
    run.write(&out.join(VOCAB), vocab.to_text().as_bytes())?;
    run.write(&out.join(LOSSES), losses_text(report.epochs.iter().map(|e| e.objective)).as_bytes())?;
    run.finish(&manifest_for_dir(out))
}

fn load_model(run: &mut Run<'_>, dir: &Path) -> Result<(HyLstmModel, ModelManifest), CliError> {
    let manifest = ModelManifest::from_text(&run.read_text(&dir.join(MODEL_MANIFEST))?)?;
    let model = HyLstmModel::from_checkpoint(&run.read(&dir.join(CHECKPOINT))?)?;
    Ok((model, manifest))
}

/// A loaded model directory.
struct Loaded {
    recommender: Box<dyn Recommender>,
    manifest: ModelManifest,
    vocab: Vocabulary,
}

fn load_recommender(run: &mut Run<'_>, dir: &Path) -> Result<Loaded, CliError> {
    let (model, manifest) = load_model(run, dir)?;
    let vocab = Vocabulary::from_text(&run.read_text(&dir.join(VOCAB))?)?;
    let recommender: Box<dyn Recommender> = match manifest.kind.as_str() {
        "multi" => Box::new(MultiHyLstmModel { shared: model, pooling: manifest.pooling }),
        "single" => Box::new(SinglePathModel { model, mode: manifest.loss_mode }),
        other => return Err(CliError::validation("model", format!("unknown model kind `{other}`"))),
    };
    Ok(Loaded { recommender, manifest, vocab })
}

/// Evaluation cases of a model: path sets for multi-path models, one case
/// per record otherwise.
fn cases_for(manifest: &ModelManifest, seqs: &[SequenceRecord]) -> Vec<PathSetExample> {
    if manifest.kind == "multi" {
        group_path_sets(seqs, manifest.budget)
    } else {
        seqs.iter()
            .map(|s| PathSetExample {
                group: s.group_key.clone().unwrap_or_default(),
                paths: vec![s.tokens.clone()],
                label: s.label,
            })
            .collect()
    }
}

struct Boxed<'a>(&'a dyn Recommender);

impl Recommender for Boxed<'_> {
    fn distribution(&self, paths: &[Vec<u32>]) -> Result<Vec<f64>, depgraph_rec::hylstm::HyError> {
        self.0.distribution(paths)
    }
}

#[allow(clippy::too_many_arguments)]
fn eval(
    cfg: &RunConfig,
    threads: usize,
    model_dir: &Path,
    corpus: &Path,
    part: Part,
    index_corpus: &Path,
    index_part: Part,
    ks: &[usize],
    out: &Path,
) -> Result<(), CliError> {
    let mut run = Run::new("eval", cfg, threads);
    let loaded = load_recommender(&mut run, model_dir)?;
    let test = encode(&loaded.vocab, &load_records(&mut run, cfg, corpus, part)?, cfg.max_len);
    let train = encode(&loaded.vocab, &load_records(&mut run, cfg, index_corpus, index_part)?, cfg.max_len);
    let mut index = NextSetIndex::default();
    for case in cases_for(&loaded.manifest, &train) {
        index.insert(case.key(), case.label);
    }
    let cases = cases_for(&loaded.manifest, &test);
    let report = evaluate(
        &Boxed(loaded.recommender.as_ref()),
        &loaded.manifest.vocab_hash,
        &cases,
        &loaded.vocab.hash(),
        &index,
        ks,
    )?;
    let cmp = compare_runs(&[(source_name(model_dir), report.clone())]);
    print!("{}", report.to_text());
    run.write(&out.join("report.txt"), report.to_text().as_bytes())?;
    run.write(&out.join("report.jsonl"), cmp.json_lines.as_bytes())?;
    let cases_json = serde_json::to_string(&report.cases).expect("cases serialize") + "\n";
    run.write(&out.join("cases.json"), cases_json.as_bytes())?;
    run.finish(&manifest_for_dir(out))
}

fn recommend(
    cfg: &RunConfig,
    threads: usize,
    model_dir: &Path,
    paths: &[String],
    k: usize,
    out: &Path,
) -> Result<(), CliError> {
    let mut run = Run::new("recommend", cfg, threads);
    let loaded = load_recommender(&mut run, model_dir)?;
    let encoded: Vec<Vec<u32>> = paths
        .iter()
        .map(|p| {
            let ids: Vec<u32> = p.split_whitespace().map(|t| loaded.vocab.id(t)).collect();
            let skip = ids.len().saturating_sub(cfg.max_len);
            ids[skip..].to_vec()
        })
        .collect();
    if encoded.iter().any(Vec::is_empty) {
        return Err(CliError::validation("input", "every --path needs at least one token"));
    }
    let dist = loaded.recommender.distribution(&encoded)?;
    let mut text = String::new();
    for (id, p) in rank(&dist, k) {
        let _ = writeln!(text, "{}\t{p:.6}", loaded.vocab.token(id));
    }
    print!("{text}");
    run.write(out, text.as_bytes())?;
    run.finish(&manifest_for_file(out))
}

fn gen_synthetic(
    cfg: &RunConfig,
    threads: usize,
    kind: SynthKind,
    count: Option<usize>,
    max_nodes: usize,
    out: &Path,
) -> Result<(), CliError> {
    let mut run = Run::new("gen-synthetic", cfg, threads);
    match kind {
        SynthKind::LowFreqVariant | SynthKind::SimilarApi => {
            let mut spec = match kind.challenge() {
                Some(ChallengeKind::LowFreqVariant) => ChallengeSpec::low_freq_variant(cfg.seed),
                _ => ChallengeSpec::similar_api(cfg.seed),
            };
            if let Some(n) = count {
                spec.n_high = n;
            }
            let records = if kind == SynthKind::LowFreqVariant {
                gen_low_freq_variant(&spec)?
            } else {
                gen_similar_api(&spec)?
            };
            run.write(out, write_corpus(&records).as_bytes())?;
        }
        SynthKind::Interchangeable => {
            let records = gen_interchangeable_context(count.unwrap_or(600), cfg.seed);
            run.write(out, write_corpus(&records).as_bytes())?;
        }
        SynthKind::Programs => {
            for (name, prog) in gen_programs(count.unwrap_or(200), cfg.seed) {
                run.write(&out.join(format!("{name}.mir")), prog.serialize().as_bytes())?;
            }
            return run.finish(&manifest_for_dir(out));
        }
        SynthKind::Dags => {
            let dags = gen_random_dags(count.unwrap_or(100), max_nodes, cfg.seed);
            let keys: Vec<String> = (0..dags.len()).map(|i| format!("dag{i}")).collect();
            run.write(out, write_graphs(keys.iter().map(String::as_str).zip(&dags)).as_bytes())?;
        }
    }
    run.finish(&manifest_for_file(out))
}

/// Violations of the selection invariants on one graph, as messages.
fn selection_violations(g: &ApiDependenceGraph, budget: usize, seed: u64) -> Vec<String> {
    let mut bad = Vec::new();
    let paths = select_paths(g, budget, seed);
    if paths.is_empty() && g.predecessors(g.sc()).count() > 0 {
        bad.push("no path selected".to_string());
    }
    if paths != select_paths(g, budget, seed) {
        bad.push("selection is not deterministic".to_string());
    }
    let distinct: BTreeSet<&Vec<usize>> = paths.iter().map(|p| &p.nodes).collect();
    if distinct.len() != paths.len() {
        bad.push("duplicate paths".to_string());
    }
    for p in &paths {
        if !p.is_connected_in(g) {
            bad.push(format!("path {:?} is not connected to the criterion", p.nodes));
        }
        if p.label != g.node(g.sc()).token {
            bad.push(format!("path {:?} is not labelled with the criterion", p.nodes));
        }
        if p.nodes.first().is_some_and(|&n| g.predecessors(n).count() > 0) {
            bad.push(format!("path {:?} does not start at a source", p.nodes));
        }
    }
    bad
}

fn oracle_check(cfg: &RunConfig, threads: usize, count: usize, max_nodes: usize, out: &Path) -> Result<(), CliError> {
    let mut run = Run::new("oracle-check", cfg, threads);
    let dags = gen_random_dags(count, max_nodes, cfg.seed);
    let failures: Vec<String> = dags
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, g)| {
            (1..=cfg.budget).flat_map(move |b| {
                selection_violations(g, b, i as u64).into_iter().map(move |m| format!("dag{i} budget {b}: {m}"))
            })
        })
        .collect();
    let mut text = format!("graphs {count}\nbudgets 1..={}\nviolations {}\n", cfg.budget, failures.len());
    for f in &failures {
        let _ = writeln!(text, "{f}");
    }
    print!("{text}");
    run.write(out, text.as_bytes())?;
    run.finish(&manifest_for_file(out))?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::runtime("oracle", format!("{} invariant violations", failures.len())))
    }
}
