//! Reference scorers and trainable toy models.

mod attention;
mod checkpoint;
mod conv;
mod corpus;
mod fixtures;
mod network;
pub(crate) mod nn;
mod oracle;
mod simple;
mod toy;
mod train;

pub use attention::{AttentionCache, PositionScheme, ToyAttention, ToyAttentionConfig};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use conv::{ConvCache, ToyConv, ToyConvConfig};
pub use corpus::{sample_corpus, sample_corpus_annotated, CorpusEntry, CorpusSpec, MAX_PLACEMENT_TRIES};
pub use fixtures::Fixture;
pub use network::{
    grad_check, loss_and_grad, loss_only, random_targets, soft_cross_entropy, Forward,
    GradCheckConfig, GradCheckReport, Network, Target,
};
pub use nn::{AdamConfig, ParamBlock, ParamLayout};
pub use oracle::{Fallback, OracleCall, OracleConfig, RetrievalOracle};
pub use simple::{UniformScorer, UnigramScorer};
pub use toy::{ModelSpec, ToyCache, ToyModel};
pub use train::{
    mask_example, train_masked_lm, LossTrace, MaskedExample, TraceRow, TrainConfig, TrainError,
    TrainOutcome,
};
