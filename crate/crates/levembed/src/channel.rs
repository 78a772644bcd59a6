//! Synthetic read channel and paired dataset construction.
//!
//! References are uniform sequences over `{A, C, G, T}`; reads pass through a
//! per-base insertion/deletion/substitution channel with an optional failed
//! base call. Pairs come in two flavors: homologous (reference, read) pairs
//! with distance at least one (exact copies carry no signal and are screened
//! out), and non-homologous pairs of reads from distinct references. Each
//! sample's randomness derives only from `(seed, sample index)`, so generation
//! is reproducible under any parallel schedule.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{StreamDomain, StreamRng};
use crate::seq::{self, levenshtein, Base, DnaSeq};

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("channel probability {name} = {value} is outside [0, 1]")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },
    #[error("p_sub + p_ins + p_del = {sum} exceeds 1")]
    RatesExceedOne { sum: f64 },
    #[error("need at least 2 references, got {count}")]
    TooFewReferences { count: usize },
    #[error("empty homologous set: every read was an exact copy of its reference")]
    EmptyHomologousSet,
    #[error("split fraction {0} is outside [0, 1]")]
    BadSplitFraction(f64),
    #[error("reference sets overlap: {0} appears in both splits")]
    OverlappingSplit(String),
    #[error(transparent)]
    Seq(#[from] seq::SeqError),
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Csv {
        path: String,
        line: usize,
        message: String,
    },
}

/// Per-base channel probabilities. Substitution, insertion, and deletion are
/// mutually exclusive events per reference position; `p_fail` independently
/// turns each emitted base into an `N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub p_sub: f64,
    pub p_ins: f64,
    pub p_del: f64,
    pub p_fail: f64,
    pub seed: u64,
}

impl ChannelParams {
    pub fn noiseless(seed: u64) -> ChannelParams {
        ChannelParams {
            p_sub: 0.0,
            p_ins: 0.0,
            p_del: 0.0,
            p_fail: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        for (name, value) in [
            ("p_sub", self.p_sub),
            ("p_ins", self.p_ins),
            ("p_del", self.p_del),
            ("p_fail", self.p_fail),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ChannelError::ProbabilityOutOfRange { name, value });
            }
        }
        let sum = self.p_sub + self.p_ins + self.p_del;
        if sum > 1.0 {
            return Err(ChannelError::RatesExceedOne { sum });
        }
        Ok(())
    }
}

/// A sequence pair with its exact Levenshtein distance and the
/// homologous/non-homologous tag.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    pub s: DnaSeq,
    pub t: DnaSeq,
    pub d: u32,
    pub homologous: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "test")]
    Test,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }
}

/// A paired dataset. Training datasets are balanced by duplicating homologous
/// samples; test datasets are left untouched so metrics stay unbiased.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<PairSample>,
    pub padded_len: usize,
    pub role: Role,
}

impl Dataset {
    pub fn homologous_count(&self) -> usize {
        self.samples.iter().filter(|s| s.homologous).count()
    }

    pub fn non_homologous_count(&self) -> usize {
        self.samples.len() - self.homologous_count()
    }

    /// Re-checks every stored distance against the exact Levenshtein oracle
    /// and every invariant the constructor promises.
    pub fn validate(&self) -> Result<(), ChannelError> {
        for sample in &self.samples {
            for side in [&sample.s, &sample.t] {
                if side.len() > self.padded_len {
                    return Err(seq::SeqError::LengthOverflow {
                        seq: side.to_string(),
                        seq_len: side.len(),
                        padded_len: self.padded_len,
                    }
                    .into());
                }
            }
            debug_assert_eq!(sample.d as usize, levenshtein(&sample.s, &sample.t));
            if sample.homologous && sample.d == 0 {
                return Err(ChannelError::EmptyHomologousSet);
            }
        }
        Ok(())
    }
}

/// Generates `count` i.i.d. uniform references over `{A, C, G, T}` of length
/// `ref_len`. Reference `i` draws from stream `(seed, Reference, i)`.
pub fn gen_references(count: usize, ref_len: usize, seed: u64) -> Vec<DnaSeq> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = StreamRng::new(seed, StreamDomain::Reference, i as u64);
            let bases = (0..ref_len)
                .map(|_| Base::from_channel(rng.uniform_usize(4)).expect("channel < 4"))
                .collect();
            DnaSeq::new(bases)
        })
        .collect()
}

/// Passes one reference through the error channel. Per position: delete with
/// `p_del`, substitute by a uniformly chosen different base with `p_sub`, or
/// insert a uniform base before the original with `p_ins` (at most one
/// insertion per position). Every emitted base then fails to `N` with
/// `p_fail`.
pub fn simulate_read(reference: &DnaSeq, ch: &ChannelParams, rng: &mut StreamRng) -> DnaSeq {
    let mut out = Vec::with_capacity(reference.len() + 4);
    let mut emit = |base: Base, rng: &mut StreamRng| {
        let observed = if ch.p_fail > 0.0 && rng.uniform() < ch.p_fail {
            Base::N
        } else {
            base
        };
        out.push(observed);
    };
    for &base in reference.bases() {
        let u = rng.uniform();
        if u < ch.p_del {
            continue;
        } else if u < ch.p_del + ch.p_sub {
            emit(substitute(base, rng), rng);
        } else if u < ch.p_del + ch.p_sub + ch.p_ins {
            let inserted = Base::from_channel(rng.uniform_usize(4)).expect("channel < 4");
            emit(inserted, rng);
            emit(base, rng);
        } else {
            emit(base, rng);
        }
    }
    DnaSeq::new(out)
}

/// Uniform base different from `original` (uniform over all four when the
/// original is an `N`).
fn substitute(original: Base, rng: &mut StreamRng) -> Base {
    if original == Base::N {
        return Base::from_channel(rng.uniform_usize(4)).expect("channel < 4");
    }
    let mut channel = rng.uniform_usize(3);
    if channel >= original.channel() {
        channel += 1;
    }
    Base::from_channel(channel).expect("channel < 4")
}

/// How many duplicates of one homologous sample the balancing step may emit.
pub const MAX_DUPLICATION_PER_SAMPLE: usize = 50;

/// Builds the paired dataset for one reference set.
///
/// Homologous samples are (reference, read) pairs with `d >= 1`; exact copies
/// are screened out. Non-homologous samples pair reads from distinct
/// references, drawn without replacement within each shuffled pass over the
/// read pool, until their count equals the surviving homologous count. For
/// training datasets the homologous samples are then duplicated so every
/// occurring distance value reaches the multiplicity of the most frequent one,
/// capped at [`MAX_DUPLICATION_PER_SAMPLE`] copies per sample.
pub fn build_pairs(
    refs: &[DnaSeq],
    reads_per_ref: usize,
    ch: &ChannelParams,
    padded_len: usize,
    seed: u64,
    role: Role,
) -> Result<Dataset, ChannelError> {
    ch.validate()?;
    if refs.len() < 2 {
        return Err(ChannelError::TooFewReferences { count: refs.len() });
    }

    // Simulate reads; read j of reference i uses stream index i * reads_per_ref + j.
    let reads: Vec<(usize, DnaSeq)> = (0..refs.len() * reads_per_ref)
        .into_par_iter()
        .map(|idx| {
            let ref_idx = idx / reads_per_ref;
            let mut rng = StreamRng::new(ch.seed, StreamDomain::Read, idx as u64);
            (ref_idx, simulate_read(&refs[ref_idx], ch, &mut rng))
        })
        .collect();

    for (_, read) in &reads {
        if read.len() > padded_len {
            return Err(seq::SeqError::LengthOverflow {
                seq: read.to_string(),
                seq_len: read.len(),
                padded_len,
            }
            .into());
        }
    }
    for reference in refs {
        if reference.len() > padded_len {
            return Err(seq::SeqError::LengthOverflow {
                seq: reference.to_string(),
                seq_len: reference.len(),
                padded_len,
            }
            .into());
        }
    }

    // Homologous pairs, exact copies screened out.
    let homologous: Vec<PairSample> = reads
        .par_iter()
        .map(|(ref_idx, read)| {
            let d = levenshtein(&refs[*ref_idx], read) as u32;
            PairSample {
                s: refs[*ref_idx].clone(),
                t: read.clone(),
                d,
                homologous: true,
            }
        })
        .filter(|s| s.d >= 1)
        .collect();
    if homologous.is_empty() {
        return Err(ChannelError::EmptyHomologousSet);
    }

    // Non-homologous pairs: shuffled passes over the read pool, consuming two
    // reads per accepted pair, skipping same-reference adjacencies.
    let target = homologous.len();
    let mut rng = StreamRng::new(seed, StreamDomain::NonHomologous, 0);
    let mut picked: Vec<(usize, usize)> = Vec::with_capacity(target);
    while picked.len() < target {
        let mut order: Vec<usize> = (0..reads.len()).collect();
        rng.shuffle(&mut order);
        let mut i = 0;
        let before = picked.len();
        while i + 1 < order.len() && picked.len() < target {
            let (a, b) = (order[i], order[i + 1]);
            if reads[a].0 != reads[b].0 {
                picked.push((a, b));
                i += 2;
            } else {
                i += 1;
            }
        }
        if picked.len() == before {
            // Single-reference pool; unreachable with >= 2 refs and >= 1 read each.
            return Err(ChannelError::TooFewReferences { count: 1 });
        }
    }
    let non_homologous: Vec<PairSample> = picked
        .par_iter()
        .map(|&(a, b)| {
            let (s, t) = (&reads[a].1, &reads[b].1);
            PairSample {
                s: s.clone(),
                t: t.clone(),
                d: levenshtein(s, t) as u32,
                homologous: false,
            }
        })
        .collect();

    let mut samples = match role {
        Role::Train => balance_by_distance(homologous),
        Role::Test => homologous,
    };
    samples.extend(non_homologous);

    Ok(Dataset {
        samples,
        padded_len,
        role,
    })
}

/// Duplicates each homologous distance class up to the count of the most
/// frequent class, capped per sample. Duplicates cycle through the class
/// members in order, so multiplicities stay as even as possible.
fn balance_by_distance(samples: Vec<PairSample>) -> Vec<PairSample> {
    let mut classes: BTreeMap<u32, Vec<PairSample>> = BTreeMap::new();
    for s in samples {
        classes.entry(s.d).or_default().push(s);
    }
    let max_count = classes.values().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::new();
    for class in classes.values() {
        let target = max_count.min(class.len() * MAX_DUPLICATION_PER_SAMPLE);
        for i in 0..target {
            out.push(class[i % class.len()].clone());
        }
    }
    out
}

/// Splits references into disjoint train/test sets; the first
/// `round(fraction * len)` go to the train side.
pub fn split_by_reference(
    refs: &[DnaSeq],
    fraction: f64,
) -> Result<(Vec<DnaSeq>, Vec<DnaSeq>), ChannelError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(ChannelError::BadSplitFraction(fraction));
    }
    let k = ((fraction * refs.len() as f64).round() as usize).min(refs.len());
    Ok((refs[..k].to_vec(), refs[k..].to_vec()))
}

/// Errors when any reference appears in both splits.
pub fn validate_disjoint(train: &[DnaSeq], test: &[DnaSeq]) -> Result<(), ChannelError> {
    let train_set: std::collections::BTreeSet<&DnaSeq> = train.iter().collect();
    for reference in test {
        if train_set.contains(reference) {
            return Err(ChannelError::OverlappingSplit(seq::display_truncated(
                reference,
            )));
        }
    }
    Ok(())
}

const CSV_HEADER: &str = "s,t,d,homologous";

/// Writes a dataset as CSV. The first line is a metadata comment carrying the
/// padded length and role (the column schema cannot express them); then the
/// `s,t,d,homologous` header and one row per sample.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), ChannelError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let wrap = |source| ChannelError::Io {
        path: display.clone(),
        source,
    };
    let file = File::create(path).map_err(wrap)?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(
            w,
            "# padded_len={} role={}",
            dataset.padded_len,
            dataset.role.name()
        )?;
        writeln!(w, "{CSV_HEADER}")?;
        for sample in &dataset.samples {
            writeln!(
                w,
                "{},{},{},{}",
                sample.s,
                sample.t,
                sample.d,
                u8::from(sample.homologous)
            )?;
        }
        w.flush()
    };
    write().map_err(wrap)
}

/// Reads a dataset back; the exact inverse of [`save_dataset`]. Malformed rows
/// are reported with their line number.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, ChannelError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| ChannelError::Io {
        path: display.clone(),
        source,
    })?;
    let csv_err = |line: usize, message: String| ChannelError::Csv {
        path: display.clone(),
        line,
        message,
    };

    let mut lines = BufReader::new(file).lines().enumerate();
    let read_line = |lines: &mut std::iter::Enumerate<std::io::Lines<BufReader<File>>>| {
        lines.next().map(|(idx, line)| {
            line.map(|l| (idx + 1, l)).map_err(|source| ChannelError::Io {
                path: display.clone(),
                source,
            })
        })
    };

    let (_, meta) = read_line(&mut lines)
        .ok_or_else(|| csv_err(1, "empty file".into()))??;
    let (padded_len, role) = parse_meta(&meta).ok_or_else(|| {
        csv_err(1, format!("expected '# padded_len=<n> role=<train|test>', got '{meta}'"))
    })?;
    let (_, header) = read_line(&mut lines)
        .ok_or_else(|| csv_err(2, "missing header".into()))??;
    if header != CSV_HEADER {
        return Err(csv_err(2, format!("expected header '{CSV_HEADER}', got '{header}'")));
    }

    let mut samples = Vec::new();
    while let Some(entry) = read_line(&mut lines) {
        let (line_no, line) = entry?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(csv_err(line_no, format!("expected 4 fields, got {}", fields.len())));
        }
        let s = DnaSeq::parse(fields[0])
            .map_err(|e| csv_err(line_no, format!("bad sequence in column s: {e}")))?;
        let t = DnaSeq::parse(fields[1])
            .map_err(|e| csv_err(line_no, format!("bad sequence in column t: {e}")))?;
        let d: u32 = fields[2]
            .parse()
            .map_err(|_| csv_err(line_no, format!("bad distance '{}'", fields[2])))?;
        let homologous = match fields[3] {
            "0" => false,
            "1" => true,
            other => return Err(csv_err(line_no, format!("bad homologous flag '{other}'"))),
        };
        samples.push(PairSample { s, t, d, homologous });
    }
    Ok(Dataset {
        samples,
        padded_len,
        role,
    })
}

fn parse_meta(line: &str) -> Option<(usize, Role)> {
    let rest = line.strip_prefix("# ")?;
    let mut padded_len = None;
    let mut role = None;
    for part in rest.split_whitespace() {
        if let Some(v) = part.strip_prefix("padded_len=") {
            padded_len = v.parse().ok();
        } else if let Some(v) = part.strip_prefix("role=") {
            role = match v {
                "train" => Some(Role::Train),
                "test" => Some(Role::Test),
                _ => None,
            };
        }
    }
    Some((padded_len?, role?))
}

/// Default padded length: the reference length rounded up to the next multiple
/// of 32, so the five halving pool layers of the convolutional nets divide it
/// evenly.
pub fn default_padded_len(ref_len: usize) -> usize {
    ref_len.div_ceil(32) * 32
}
