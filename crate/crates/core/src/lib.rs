//! Data-dependence-guided API recommendation: MiniIR slicing, API dependence
//! graphs, path corpora, skip-gram embeddings and the HyLSTM family of
//! recommenders.

pub mod adg;
pub mod config;
pub mod corpus;
pub mod datagen;
pub mod embed;
pub mod eval;
pub mod hylstm;
pub mod ir;
pub mod nn;
pub mod slicer;

pub use adg::{build_adg, extract_all_paths, select_paths, ApiDependenceGraph, DependencePath};
pub use config::{ConfigError, RunConfig};
pub use corpus::{CorpusMode, NextSetIndex, PathSetExample, SequenceRecord, TextRecord, Vocabulary};
pub use embed::{train_skipgram, EmbeddingTable, SkipGramConfig};
pub use eval::{evaluate, EvalReport};
pub use hylstm::{HyLstmModel, LossMode, MultiHyLstmModel, Pooling, Recommender, TrainConfig};
pub use ir::{parse_program, ApiSignature, MiniProgram, Statement};
pub use slicer::{backward_slice, ProgramSlice};
