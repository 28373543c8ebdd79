//! Shared fixtures for the benchmarks.

use depgraph_rec::corpus::{build_vocabulary, program_records, CorpusMode, ExtractOptions, VocabConfig};
use depgraph_rec::datagen::gen_programs;
use depgraph_rec::{MiniProgram, SequenceRecord, Vocabulary};

/// Generated cipher programs.
pub fn programs(count: usize) -> Vec<(String, MiniProgram)> {
    gen_programs(count, 1)
}

/// Encoded dependence-path corpus of `count` generated programs.
pub fn path_corpus(count: usize) -> (Vec<SequenceRecord>, Vocabulary) {
    let opts = ExtractOptions { target_prefixes: &["Cipher."], ..ExtractOptions::default() };
    let records: Vec<_> = programs(count)
        .iter()
        .flat_map(|(n, p)| program_records(p, n, CorpusMode::DepPath, &opts).expect("generated programs extract"))
        .collect();
    let vocab = build_vocabulary(&records, &VocabConfig::default()).expect("non-empty vocabulary");
    (records.iter().map(|r| vocab.encode(r, 10)).collect(), vocab)
}
