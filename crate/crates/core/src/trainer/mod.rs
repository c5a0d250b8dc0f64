//! Corpus construction, cyclic scheduling, per-episode optimization,
//! evaluation grids and checkpoint stores.

mod checkpoint;
mod config;
mod corpus;
mod cyclic;
mod grid;
mod optim;
mod randomize;

pub use checkpoint::{read_snapshot_file, write_snapshot_file, CheckpointStore, StoreMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Ordering, TrainConfig};
pub use corpus::{build_corpus, corpus_hash, CorpusSource, Document, SYNTHETIC_ALPHABET};
pub use cyclic::{
    evaluate_all, prepare_run, run_cyclic, run_cyclic_partial, run_episode, schedule_epoch, CyclicOutput, EpisodeLog,
};
pub use grid::EvalGrid;
pub use optim::{OptimizerKind, OptimizerState};
pub use randomize::{apply_randomization, RandomizedWindow};

/// Derives an independent sub-seed for one named random stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined input
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Named random streams.
pub mod streams {
    pub const MODEL: u64 = 1;
    pub const CORPUS: u64 = 2;
    pub const SCHEDULE: u64 = 3;
    pub const DATA: u64 = 4;
}
