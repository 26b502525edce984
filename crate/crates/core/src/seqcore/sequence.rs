use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Alphabet, SeqError};

/// A symbol string over a declared alphabet. Immutable once built.
#[derive(Clone, PartialEq, Eq)]
pub struct Sequence {
    id: String,
    symbols: Vec<u8>,
    alphabet: Arc<Alphabet>,
}

impl Sequence {
    pub fn new(
        id: impl Into<String>,
        symbols: Vec<u8>,
        alphabet: Arc<Alphabet>,
    ) -> Result<Self, SeqError> {
        if symbols.is_empty() {
            return Err(SeqError::EmptySequence);
        }
        if let Some(&bad) = symbols.iter().find(|&&s| s as usize >= alphabet.len()) {
            return Err(SeqError::IndexOutOfRange {
                index: bad as usize,
                size: alphabet.len(),
            });
        }
        Ok(Self {
            id: id.into(),
            symbols,
            alphabet,
        })
    }

    pub fn from_text(
        id: impl Into<String>,
        text: &str,
        alphabet: Arc<Alphabet>,
    ) -> Result<Self, SeqError> {
        let symbols = alphabet.encode(text)?;
        Self::new(id, symbols, alphabet)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    pub fn alphabet(&self) -> &Arc<Alphabet> {
        &self.alphabet
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn get(&self, i: usize) -> u8 {
        self.symbols[i]
    }

    pub fn text(&self) -> String {
        self.alphabet.decode(&self.symbols)
    }

    /// Concatenation `self ‖ other`; both must share an alphabet.
    pub fn concat(&self, other: &Sequence, id: impl Into<String>) -> Result<Sequence, SeqError> {
        if self.alphabet != other.alphabet {
            return Err(SeqError::AlphabetMismatch);
        }
        let mut symbols = self.symbols.clone();
        symbols.extend_from_slice(&other.symbols);
        Sequence::new(id, symbols, self.alphabet.clone())
    }

    pub fn slice(&self, span: Span) -> Result<Sequence, SeqError> {
        span.check(self.len())?;
        Sequence::new(
            format!("{}[{}..{}]", self.id, span.start, span.end),
            self.symbols[span.start..span.end].to_vec(),
            self.alphabet.clone(),
        )
    }

    /// Copy with the symbol at `pos` replaced.
    pub fn with_symbol(&self, pos: usize, symbol: u8) -> Result<Sequence, SeqError> {
        if pos >= self.len() {
            return Err(SeqError::IndexOutOfRange {
                index: pos,
                size: self.len(),
            });
        }
        let mut symbols = self.symbols.clone();
        symbols[pos] = symbol;
        Sequence::new(self.id.clone(), symbols, self.alphabet.clone())
    }

    pub fn full_span(&self) -> Span {
        Span {
            start: 0,
            end: self.len(),
        }
    }
}

impl fmt::Debug for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sequence({}: {})", self.id, self.text())
    }
}

/// Half-open window `[start, end)` over sequence positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, pos: usize) -> bool {
        pos >= self.start && pos < self.end
    }

    pub fn positions(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }

    pub fn check(&self, len: usize) -> Result<(), SeqError> {
        if self.start < self.end && self.end <= len {
            Ok(())
        } else {
            Err(SeqError::InvalidSpan {
                start: self.start,
                end: self.end,
                len,
            })
        }
    }
}

/// Counts (possibly overlapping) occurrences of `needle` in `hay`.
pub fn count_occurrences(hay: &[u8], needle: &[u8]) -> usize {
    if needle.is_empty() || needle.len() > hay.len() {
        return 0;
    }
    hay.windows(needle.len()).filter(|w| *w == needle).count()
}

/// Start offsets of every occurrence of `needle` in `hay`.
pub fn find_occurrences(hay: &[u8], needle: &[u8]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return Vec::new();
    }
    hay.windows(needle.len())
        .enumerate()
        .filter(|(_, w)| *w == needle)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_out_of_range() {
        let a = Alphabet::protein();
        assert!(matches!(
            Sequence::new("x", vec![], a.clone()),
            Err(SeqError::EmptySequence)
        ));
        assert!(Sequence::new("x", vec![20], a.clone()).is_err());
        assert!(Sequence::from_text("x", "ACZ", a).is_err());
    }

    #[test]
    fn span_checks() {
        assert!(Span::new(0, 3).check(3).is_ok());
        assert!(Span::new(2, 2).check(3).is_err());
        assert!(Span::new(1, 4).check(3).is_err());
    }

    #[test]
    fn overlapping_occurrences_counted() {
        assert_eq!(count_occurrences(b"aaaa", b"aa"), 3);
        assert_eq!(find_occurrences(b"abcab", b"ab"), vec![0, 3]);
    }
}
