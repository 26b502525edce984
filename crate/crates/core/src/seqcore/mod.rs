//! Alphabets, sequences, seeded generators, and the sequence constructions
//! used by every probe.

mod alphabet;
mod fasta;
mod mutate;
pub mod rng;
mod sequence;
mod transform;

use thiserror::Error;

pub use alphabet::{Alphabet, AlphabetKind, DNA_SYMBOLS, PROTEIN_SYMBOLS, RNA_SYMBOLS};
pub use fasta::{parse_fasta, read_fasta, write_fasta, FastaCorpus, LengthFilter, Rejection};
pub use mutate::{mutate_copy, Edit, EditOp, EditTrace, MutationSpec, OpWeights};
pub use sequence::{count_occurrences, find_occurrences, Sequence, Span};
pub use transform::{
    complement, make_needle_haystack, make_skip_pair, multiply, random_sequence,
    random_sequence_with, reverse, reverse_complement, NeedleHaystack, SkipPhase, MAX_REJECTIONS,
};

#[derive(Debug, Error)]
pub enum SeqError {
    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),
    #[error("unknown symbol '{0}'")]
    UnknownSymbol(char),
    #[error("sequence must contain at least one symbol")]
    EmptySequence,
    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("invalid span [{start}, {end}) for length {len}")]
    InvalidSpan { start: usize, end: usize, len: usize },
    #[error("sequence of length {len} is shorter than the required {min}")]
    TooShort { min: usize, len: usize },
    #[error("alphabet of size {size} is too small (need {needed})")]
    AlphabetTooSmall { needed: usize, size: usize },
    #[error("alphabet lacks complement")]
    MissingComplement,
    #[error("sequences use different alphabets")]
    AlphabetMismatch,
    #[error("no-op mutation: proportion rounds to zero edits")]
    NoOpMutation,
    #[error("invalid mutation spec: {0}")]
    InvalidMutationSpec(String),
    #[error("rejection sampling failed after {attempts} attempts")]
    RejectionFailed { attempts: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("duplicate sequence id '{0}'")]
    DuplicateId(String),
    #[error("malformed FASTA: {0}")]
    Fasta(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
