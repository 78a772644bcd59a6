//! DNA sequences over `{A, C, G, T, N}`, exact Levenshtein distance, and the
//! one-hot matrix form consumed by the embedding networks.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeqError {
    #[error("invalid symbol '{found}' at position {position}")]
    InvalidSymbol { position: usize, found: char },
    #[error("sequence '{seq}' of length {seq_len} exceeds padded length {padded_len}")]
    LengthOverflow {
        seq: String,
        seq_len: usize,
        padded_len: usize,
    },
    #[error("row {row} is not a valid one-hot row")]
    MalformedOneHotRow { row: usize },
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        source: Box<SeqError>,
    },
}

/// One base call. `N` is a failed call and is an ordinary fifth symbol:
/// it matches only itself under the edit distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Base {
    A = 0,
    C = 1,
    G = 2,
    T = 3,
    N = 4,
}

impl Base {
    /// Number of channels in the one-hot encoding, ordered `(A, C, G, T, N)`.
    pub const COUNT: usize = 5;

    pub fn from_char(c: char) -> Option<Base> {
        match c {
            'A' | 'a' => Some(Base::A),
            'C' | 'c' => Some(Base::C),
            'G' | 'g' => Some(Base::G),
            'T' | 't' => Some(Base::T),
            'N' | 'n' => Some(Base::N),
            _ => None,
        }
    }

    pub fn to_char(self) -> char {
        match self {
            Base::A => 'A',
            Base::C => 'C',
            Base::G => 'G',
            Base::T => 'T',
            Base::N => 'N',
        }
    }

    pub fn channel(self) -> usize {
        self as usize
    }

    pub fn from_channel(channel: usize) -> Option<Base> {
        match channel {
            0 => Some(Base::A),
            1 => Some(Base::C),
            2 => Some(Base::G),
            3 => Some(Base::T),
            4 => Some(Base::N),
            _ => None,
        }
    }
}

/// An immutable DNA read or reference. The empty sequence is valid.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DnaSeq {
    bases: Vec<Base>,
}

impl DnaSeq {
    pub fn new(bases: Vec<Base>) -> DnaSeq {
        DnaSeq { bases }
    }

    /// Parses a sequence, accepting upper- or lowercase letters. Output is
    /// canonicalized to uppercase.
    pub fn parse(text: &str) -> Result<DnaSeq, SeqError> {
        let mut bases = Vec::with_capacity(text.len());
        for (position, c) in text.chars().enumerate() {
            match Base::from_char(c) {
                Some(b) => bases.push(b),
                None => return Err(SeqError::InvalidSymbol { position, found: c }),
            }
        }
        Ok(DnaSeq { bases })
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn bases(&self) -> &[Base] {
        &self.bases
    }
}

impl fmt::Display for DnaSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.bases {
            write!(f, "{}", b.to_char())?;
        }
        Ok(())
    }
}

/// Exact Levenshtein distance with unit insertion/deletion/substitution costs.
///
/// Rolling two-row dynamic program, O(len(s) * len(t)) time and O(min(len))
/// memory.
pub fn levenshtein(s: &DnaSeq, t: &DnaSeq) -> usize {
    let (long, short) = if s.len() >= t.len() {
        (s.bases(), t.bases())
    } else {
        (t.bases(), s.bases())
    };
    if short.is_empty() {
        return long.len();
    }
    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (i, &a) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &b) in short.iter().enumerate() {
            let sub = diag + usize::from(a != b);
            diag = row[j + 1];
            row[j + 1] = sub.min(diag + 1).min(row[j] + 1);
        }
    }
    row[short.len()]
}

/// One-hot encoding of a sequence padded with all-zero rows to a fixed length.
/// Row-major `padded_len x 5`, channels ordered `(A, C, G, T, N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OneHotMatrix {
    rows: usize,
    data: Vec<f64>,
}

impl OneHotMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * Base::COUNT..(i + 1) * Base::COUNT]
    }

    /// Recovers the sequence: strips the all-zero padding tail and decodes the
    /// remaining rows. Errors on rows that are neither one-hot nor zero and on
    /// zero rows followed by non-zero ones.
    pub fn decode(&self) -> Result<DnaSeq, SeqError> {
        let mut bases = Vec::new();
        let mut in_padding = false;
        for i in 0..self.rows {
            let row = self.row(i);
            let ones: Vec<usize> = (0..Base::COUNT).filter(|&c| row[c] == 1.0).collect();
            let zeros = row.iter().filter(|&&x| x == 0.0).count();
            match (ones.len(), zeros) {
                (0, z) if z == Base::COUNT => in_padding = true,
                (1, z) if z == Base::COUNT - 1 => {
                    if in_padding {
                        return Err(SeqError::MalformedOneHotRow { row: i });
                    }
                    bases.push(Base::from_channel(ones[0]).expect("channel in range"));
                }
                _ => return Err(SeqError::MalformedOneHotRow { row: i }),
            }
        }
        Ok(DnaSeq::new(bases))
    }
}

/// One-hot encodes `s` into a `padded_len x 5` matrix; rows past the sequence
/// end are all-zero.
pub fn one_hot(s: &DnaSeq, padded_len: usize) -> Result<OneHotMatrix, SeqError> {
    if s.len() > padded_len {
        return Err(SeqError::LengthOverflow {
            seq: display_truncated(s),
            seq_len: s.len(),
            padded_len,
        });
    }
    let mut data = vec![0.0; padded_len * Base::COUNT];
    for (i, b) in s.bases().iter().enumerate() {
        data[i * Base::COUNT + b.channel()] = 1.0;
    }
    Ok(OneHotMatrix {
        rows: padded_len,
        data,
    })
}

pub(crate) fn display_truncated(s: &DnaSeq) -> String {
    let text = s.to_string();
    if text.len() > 32 {
        format!("{}...", &text[..32])
    } else {
        text
    }
}

/// Loads reads from a plain-text file: one sequence per line, blank lines
/// skipped, lines starting with '>' treated as record separators and ignored.
pub fn load_reads(path: impl AsRef<Path>) -> Result<Vec<DnaSeq>, SeqError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| SeqError::Io {
        path: display.clone(),
        source,
    })?;
    let mut reads = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| SeqError::Io {
            path: display.clone(),
            source,
        })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('>') {
            continue;
        }
        let seq = DnaSeq::parse(line).map_err(|e| SeqError::Parse {
            path: display.clone(),
            line: idx + 1,
            source: Box::new(e),
        })?;
        reads.push(seq);
    }
    Ok(reads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> DnaSeq {
        DnaSeq::parse(s).unwrap()
    }

    #[test]
    fn parse_folds_case_and_reports_positions() {
        assert_eq!(seq("acgt").to_string(), "ACGT");
        assert_eq!(seq(""), DnaSeq::default());
        match DnaSeq::parse("ACXG") {
            Err(SeqError::InvalidSymbol { position, found }) => {
                assert_eq!(position, 2);
                assert_eq!(found, 'X');
            }
            other => panic!("expected InvalidSymbol, got {other:?}"),
        }
    }

    #[test]
    fn levenshtein_known_values() {
        assert_eq!(levenshtein(&seq("ACGT"), &seq("ACGT")), 0);
        assert_eq!(levenshtein(&seq(""), &seq("ACG")), 3);
        assert_eq!(levenshtein(&seq("ACGT"), &seq("AGT")), 1);
        assert_eq!(levenshtein(&seq("AACC"), &seq("CCAA")), 4);
    }

    #[test]
    fn levenshtein_treats_n_as_fifth_symbol() {
        assert_eq!(levenshtein(&seq("N"), &seq("N")), 0);
        assert_eq!(levenshtein(&seq("N"), &seq("A")), 1);
    }

    #[test]
    fn one_hot_matches_declared_channel_order() {
        let m = one_hot(&seq("AC"), 3).unwrap();
        assert_eq!(m.row(0), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.row(1), &[0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.row(2), &[0.0, 0.0, 0.0, 0.0, 0.0]);

        let n = one_hot(&seq("N"), 1).unwrap();
        assert_eq!(n.row(0), &[0.0, 0.0, 0.0, 0.0, 1.0]);

        let empty = one_hot(&seq(""), 2).unwrap();
        assert!(empty.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn one_hot_rejects_short_padding() {
        let err = one_hot(&seq("ACGT"), 3).unwrap_err();
        match err {
            SeqError::LengthOverflow {
                seq_len,
                padded_len,
                ..
            } => {
                assert_eq!((seq_len, padded_len), (4, 3));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn one_hot_round_trips() {
        for text in ["", "A", "ACGTN", "TTTNAC"] {
            let s = seq(text);
            let m = one_hot(&s, s.len() + 3).unwrap();
            assert_eq!(m.decode().unwrap(), s);
        }
    }

    #[test]
    fn load_reads_skips_separators() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reads.txt");
        std::fs::write(&path, ">rec1\nACGT\n\n>rec2\nttnn\n").unwrap();
        let reads = load_reads(&path).unwrap();
        assert_eq!(reads.len(), 2);
        assert_eq!(reads[0].to_string(), "ACGT");
        assert_eq!(reads[1].to_string(), "TTNN");
    }

    #[test]
    fn load_reads_reports_bad_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reads.txt");
        std::fs::write(&path, "ACGT\nACQT\n").unwrap();
        let err = load_reads(&path).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }
}
