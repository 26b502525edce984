use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::sync::Arc;

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use super::{Alphabet, SeqError, Sequence};

/// Inclusive length bounds applied after parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthFilter {
    pub min: usize,
    pub max: usize,
}

impl LengthFilter {
    /// Domain-curation bounds: keep 20..=1000 residues.
    pub const DOMAIN: LengthFilter = LengthFilter { min: 20, max: 1000 };

    pub fn keeps(&self, len: usize) -> bool {
        len >= self.min && len <= self.max
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct FastaCorpus {
    pub sequences: Vec<Sequence>,
    /// Records dropped for invalid content.
    pub rejected: Vec<Rejection>,
    /// Records dropped by the length filter.
    pub filtered: usize,
}

pub fn parse_fasta(
    path: impl AsRef<Path>,
    alphabet: &Arc<Alphabet>,
    filter: Option<LengthFilter>,
) -> Result<FastaCorpus, SeqError> {
    let path = path.as_ref();
    let mut file = File::open(path)?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    let file = File::open(path)?;
    if n == 2 && magic == [0x1f, 0x8b] {
        read_fasta(BufReader::new(MultiGzDecoder::new(file)), alphabet, filter)
    } else {
        read_fasta(BufReader::new(file), alphabet, filter)
    }
}

pub fn read_fasta(
    reader: impl BufRead,
    alphabet: &Arc<Alphabet>,
    filter: Option<LengthFilter>,
) -> Result<FastaCorpus, SeqError> {
    let mut records: Vec<(String, String)> = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let line = line.trim_end();
        if let Some(header) = line.strip_prefix('>') {
            let id = header.split_whitespace().next().unwrap_or("").to_string();
            records.push((id, String::new()));
        } else if line.is_empty() || line.starts_with(';') {
            continue;
        } else if let Some((_, body)) = records.last_mut() {
            body.push_str(line.trim());
        } else {
            return Err(SeqError::Fasta("sequence data before the first header".into()));
        }
    }
    if records.is_empty() {
        return Err(SeqError::Fasta("no records found".into()));
    }

    let mut seen = HashSet::new();
    let mut corpus = FastaCorpus {
        sequences: Vec::new(),
        rejected: Vec::new(),
        filtered: 0,
    };
    for (id, body) in records {
        if !seen.insert(id.clone()) {
            return Err(SeqError::DuplicateId(id));
        }
        match Sequence::from_text(id.clone(), &body, alphabet.clone()) {
            Ok(seq) => {
                if filter.is_some_and(|f| !f.keeps(seq.len())) {
                    corpus.filtered += 1;
                } else {
                    corpus.sequences.push(seq);
                }
            }
            Err(e) => corpus.rejected.push(Rejection {
                id,
                reason: e.to_string(),
            }),
        }
    }
    Ok(corpus)
}

pub fn write_fasta(mut out: impl std::io::Write, sequences: &[Sequence]) -> std::io::Result<()> {
    for s in sequences {
        writeln!(out, ">{}", s.id())?;
        let text = s.text();
        for chunk in text.as_bytes().chunks(60) {
            out.write_all(chunk)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Cursor, Write};

    fn read(text: &str, filter: Option<LengthFilter>) -> Result<FastaCorpus, SeqError> {
        read_fasta(Cursor::new(text.as_bytes()), &Alphabet::protein(), filter)
    }

    #[test]
    fn two_records_keep_ids() {
        let c = read(">sp|a desc\nACDE\nFG\n>b\nKLM\n", None).unwrap();
        assert_eq!(c.sequences.len(), 2);
        assert_eq!(c.sequences[0].id(), "sp|a");
        assert_eq!(c.sequences[0].text(), "ACDEFG");
        assert_eq!(c.sequences[1].id(), "b");
    }

    #[test]
    fn unknown_symbol_rejects_record() {
        let c = read(">a\nACZD\n>b\nACD\n", None).unwrap();
        assert_eq!(c.sequences.len(), 1);
        assert_eq!(c.rejected.len(), 1);
        assert_eq!(c.rejected[0].id, "a");
    }

    #[test]
    fn length_filter_is_inclusive() {
        let mut text = String::new();
        for (i, len) in [10usize, 20, 1000, 1001].iter().enumerate() {
            text.push_str(&format!(">s{i}\n{}\n", "A".repeat(*len)));
        }
        let c = read(&text, Some(LengthFilter::DOMAIN)).unwrap();
        let kept: Vec<usize> = c.sequences.iter().map(|s| s.len()).collect();
        assert_eq!(kept, vec![20, 1000]);
        assert_eq!(c.filtered, 2);
    }

    #[test]
    fn empty_and_duplicate_inputs_fail() {
        assert!(read("", None).is_err());
        assert!(matches!(read(">a\nAC\n>a\nAC\n", None), Err(SeqError::DuplicateId(_))));
    }

    #[test]
    fn gzip_files_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.fa.gz");
        let mut gz = flate2::write::GzEncoder::new(File::create(&path).unwrap(), flate2::Compression::default());
        gz.write_all(b">q\nMKV\n").unwrap();
        gz.finish().unwrap();
        let c = parse_fasta(&path, &Alphabet::protein(), None).unwrap();
        assert_eq!(c.sequences[0].text(), "MKV");
    }
}
