use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rng::{derive_seed, seeded, ToolRng};
use super::sequence::count_occurrences;
use super::{Alphabet, SeqError, Sequence, Span};

/// Rejection cap for constructions that must avoid accidental matches.
pub const MAX_REJECTIONS: usize = 100;

pub fn random_sequence(length: usize, alphabet: &Arc<Alphabet>, seed: u64) -> Result<Sequence, SeqError> {
    let mut rng = seeded(seed);
    random_sequence_with(&mut rng, length, alphabet, format!("rand-{seed}-{length}"))
}

/// I.i.d. uniform symbols drawn from an existing stream.
pub fn random_sequence_with(
    rng: &mut ToolRng,
    length: usize,
    alphabet: &Arc<Alphabet>,
    id: impl Into<String>,
) -> Result<Sequence, SeqError> {
    if length == 0 {
        return Err(SeqError::EmptySequence);
    }
    let k = alphabet.len() as u8;
    let symbols = (0..length).map(|_| rng.random_range(0..k)).collect();
    Sequence::new(id, symbols, alphabet.clone())
}

pub fn multiply(x: &Sequence, n: usize) -> Result<Sequence, SeqError> {
    if n == 0 {
        return Err(SeqError::InvalidArgument("multiplicity must be at least 1".into()));
    }
    let symbols = x.symbols().repeat(n);
    Sequence::new(format!("{}x{n}", x.id()), symbols, x.alphabet().clone())
}

pub fn reverse(x: &Sequence) -> Sequence {
    let mut symbols = x.symbols().to_vec();
    symbols.reverse();
    Sequence::new(format!("{}:rev", x.id()), symbols, x.alphabet().clone())
        .expect("reversal preserves validity")
}

pub fn complement(x: &Sequence) -> Result<Sequence, SeqError> {
    let alphabet = x.alphabet();
    if !alphabet.has_complement() {
        return Err(SeqError::MissingComplement);
    }
    let symbols = x
        .symbols()
        .iter()
        .map(|&s| alphabet.complement_of(s).expect("checked above"))
        .collect();
    Sequence::new(format!("{}:comp", x.id()), symbols, alphabet.clone())
}

pub fn reverse_complement(x: &Sequence) -> Result<Sequence, SeqError> {
    let c = complement(x)?;
    Ok(reverse(&c).with_id(format!("{}:revcomp", x.id())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipPhase {
    Even,
    Odd,
}

impl SkipPhase {
    pub fn keeps(self, pos: usize) -> bool {
        match self {
            SkipPhase::Even => pos % 2 == 0,
            SkipPhase::Odd => pos % 2 == 1,
        }
    }
}

/// A partner for `x` that agrees with it only at positions of the given
/// parity; every other position holds a different, uniformly drawn symbol.
pub fn make_skip_pair(x: &Sequence, phase: SkipPhase, seed: u64) -> Result<Sequence, SeqError> {
    if x.len() < 2 {
        return Err(SeqError::TooShort { min: 2, len: x.len() });
    }
    let k = x.alphabet().len() as u8;
    if k < 2 {
        return Err(SeqError::AlphabetTooSmall { needed: 2, size: k as usize });
    }
    let mut rng = seeded(derive_seed(seed, "skip"));
    let symbols = x
        .symbols()
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if phase.keeps(i) {
                s
            } else {
                // uniform over the alphabet minus s
                let r = rng.random_range(0..k - 1);
                if r >= s {
                    r + 1
                } else {
                    r
                }
            }
        })
        .collect();
    Sequence::new(format!("{}:skip", x.id()), symbols, x.alphabet().clone())
}

/// `needle ‖ haystack ‖ needle` with a fresh random needle and haystack.
#[derive(Debug, Clone)]
pub struct NeedleHaystack {
    pub sequence: Sequence,
    pub needle: Span,
    pub partner: Span,
}

pub fn make_needle_haystack(
    needle_len: usize,
    haystack_len: usize,
    alphabet: &Arc<Alphabet>,
    seed: u64,
) -> Result<NeedleHaystack, SeqError> {
    if needle_len == 0 {
        return Err(SeqError::InvalidArgument("needle length must be at least 1".into()));
    }
    let mut rng = seeded(derive_seed(seed, "needle-haystack"));
    for _ in 0..MAX_REJECTIONS {
        let needle = random_sequence_with(&mut rng, needle_len, alphabet, "needle")?;
        let mut symbols = needle.symbols().to_vec();
        let k = alphabet.len() as u8;
        symbols.extend((0..haystack_len).map(|_| rng.random_range(0..k)));
        symbols.extend_from_slice(needle.symbols());
        if count_occurrences(&symbols, needle.symbols()) != 2 {
            continue;
        }
        let total = symbols.len();
        let sequence = Sequence::new(
            format!("needle{needle_len}-hay{haystack_len}-{seed}"),
            symbols,
            alphabet.clone(),
        )?;
        return Ok(NeedleHaystack {
            sequence,
            needle: Span::new(0, needle_len),
            partner: Span::new(total - needle_len, total),
        });
    }
    Err(SeqError::RejectionFailed {
        attempts: MAX_REJECTIONS,
    })
}
