use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::SeqError;

/// The twenty canonical amino acids, in alphabetical one-letter order.
pub const PROTEIN_SYMBOLS: &str = "ACDEFGHIKLMNPQRSTVWY";
pub const RNA_SYMBOLS: &str = "ACGU";
pub const DNA_SYMBOLS: &str = "ACGT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphabetKind {
    Protein,
    Rna,
    Dna,
    Synthetic,
}

impl AlphabetKind {
    pub fn is_nucleotide(self) -> bool {
        matches!(self, AlphabetKind::Rna | AlphabetKind::Dna)
    }
}

/// An ordered set of distinct symbols. Symbol indices are positions in
/// this order, and every distribution row in the toolkit is laid out in it.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    symbols: Vec<char>,
    kind: AlphabetKind,
    complement: Option<Vec<u8>>,
}

impl Alphabet {
    pub fn new(symbols: &str, kind: AlphabetKind) -> Result<Self, SeqError> {
        let symbols: Vec<char> = symbols.chars().collect();
        if symbols.len() < 2 {
            return Err(SeqError::InvalidAlphabet(
                "an alphabet needs at least two symbols".into(),
            ));
        }
        if symbols.len() > u8::MAX as usize {
            return Err(SeqError::InvalidAlphabet(format!(
                "{} symbols exceed the supported maximum of 255",
                symbols.len()
            )));
        }
        for (i, c) in symbols.iter().enumerate() {
            if symbols[..i].contains(c) {
                return Err(SeqError::InvalidAlphabet(format!("duplicate symbol '{c}'")));
            }
        }
        Ok(Self {
            symbols,
            kind,
            complement: None,
        })
    }

    /// Attaches a base-pairing relation given as (symbol, partner) pairs.
    /// The pairing must be an involution covering every symbol.
    pub fn with_complement(mut self, pairs: &[(char, char)]) -> Result<Self, SeqError> {
        let mut map = vec![u8::MAX; self.len()];
        for &(a, b) in pairs {
            let ia = self.index_of(a).ok_or(SeqError::UnknownSymbol(a))?;
            let ib = self.index_of(b).ok_or(SeqError::UnknownSymbol(b))?;
            map[ia as usize] = ib;
            map[ib as usize] = ia;
        }
        for (i, &m) in map.iter().enumerate() {
            if m == u8::MAX {
                return Err(SeqError::InvalidAlphabet(format!(
                    "complement map does not cover '{}'",
                    self.symbols[i]
                )));
            }
            if map[m as usize] as usize != i {
                return Err(SeqError::InvalidAlphabet(
                    "complement map is not an involution".into(),
                ));
            }
        }
        self.complement = Some(map);
        Ok(self)
    }

    pub fn protein() -> Arc<Self> {
        Arc::new(Self::new(PROTEIN_SYMBOLS, AlphabetKind::Protein).expect("valid protein alphabet"))
    }

    pub fn rna() -> Arc<Self> {
        Arc::new(
            Self::new(RNA_SYMBOLS, AlphabetKind::Rna)
                .and_then(|a| a.with_complement(&[('A', 'U'), ('C', 'G')]))
                .expect("valid RNA alphabet"),
        )
    }

    pub fn dna() -> Arc<Self> {
        Arc::new(
            Self::new(DNA_SYMBOLS, AlphabetKind::Dna)
                .and_then(|a| a.with_complement(&[('A', 'T'), ('C', 'G')]))
                .expect("valid DNA alphabet"),
        )
    }

    /// Looks up a built-in alphabet by name (`protein`, `rna`, `dna`).
    pub fn by_name(name: &str) -> Result<Arc<Self>, SeqError> {
        match name.to_ascii_lowercase().as_str() {
            "protein" | "aa" => Ok(Self::protein()),
            "rna" => Ok(Self::rna()),
            "dna" => Ok(Self::dna()),
            other => Err(SeqError::InvalidAlphabet(format!("unknown alphabet '{other}'"))),
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn kind(&self) -> AlphabetKind {
        self.kind
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn symbol(&self, index: u8) -> char {
        self.symbols[index as usize]
    }

    pub fn index_of(&self, c: char) -> Option<u8> {
        let c = c.to_ascii_uppercase();
        self.symbols.iter().position(|&s| s == c).map(|i| i as u8)
    }

    pub fn has_complement(&self) -> bool {
        self.complement.is_some()
    }

    pub fn complement_of(&self, index: u8) -> Option<u8> {
        self.complement.as_ref().map(|m| m[index as usize])
    }

    /// Case-insensitive text to symbol indices.
    pub fn encode(&self, text: &str) -> Result<Vec<u8>, SeqError> {
        text.chars()
            .map(|c| self.index_of(c).ok_or(SeqError::UnknownSymbol(c)))
            .collect()
    }

    pub fn decode(&self, indices: &[u8]) -> String {
        indices.iter().map(|&i| self.symbol(i)).collect()
    }
}

impl fmt::Debug for Alphabet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Alphabet({:?}, ", self.kind)?;
        for c in &self.symbols {
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}
