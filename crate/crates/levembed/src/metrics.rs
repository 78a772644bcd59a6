//! Evaluation metrics and distribution diagnostics.
//!
//! Metrics: mean absolute approximation error over all test pairs (`ae`), the
//! same restricted to homologous pairs (`ae_h`), and the overall accuracy of
//! classifying pairs as non-homologous by thresholding the predicted distance
//! (`oa`). Diagnostics: per-element mean/std of the embeddings, QQ data
//! against the standard normal, and the Pearson correlation matrix between
//! embedding elements.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::special::{probit, SpecialError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metric over an empty pair set")]
    EmptyPairs,
    #[error("no homologous pairs in the evaluation set")]
    NoHomologousPairs,
    #[error("diagnostics need at least 2 embeddings, got {0}")]
    TooFewEmbeddings(usize),
    #[error("embedding {index} has dimension {got}, expected {expected}")]
    RaggedEmbeddings {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error(transparent)]
    Special(#[from] SpecialError),
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One evaluated pair: ground-truth distance, predicted distance, and the
/// homologous tag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairEval {
    pub d: u32,
    pub d_hat: f64,
    pub homologous: bool,
}

/// Mean absolute error over all pairs.
pub fn ae(pairs: &[PairEval]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyPairs);
    }
    Ok(pairs
        .iter()
        .map(|p| (p.d as f64 - p.d_hat).abs())
        .sum::<f64>()
        / pairs.len() as f64)
}

/// Mean absolute error restricted to homologous pairs.
pub fn ae_h(pairs: &[PairEval]) -> Result<f64, MetricsError> {
    let hom: Vec<PairEval> = pairs.iter().copied().filter(|p| p.homologous).collect();
    if hom.is_empty() {
        return Err(MetricsError::NoHomologousPairs);
    }
    ae(&hom)
}

/// Overall accuracy, in percent, of predicting "non-homologous" exactly when
/// `d_hat >= k`.
pub fn oa(pairs: &[PairEval], k: f64) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyPairs);
    }
    let correct = pairs
        .iter()
        .filter(|p| (p.d_hat >= k) == !p.homologous)
        .count();
    Ok(100.0 * correct as f64 / pairs.len() as f64)
}

/// Exhaustive threshold sweep over midpoints of the sorted predictions (plus
/// sentinels below and above), returning `(k_best, oa_best)`; ties go to the
/// smallest threshold.
pub fn best_threshold(pairs: &[PairEval]) -> Result<(f64, f64), MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyPairs);
    }
    let mut preds: Vec<f64> = pairs.iter().map(|p| p.d_hat).collect();
    preds.sort_by(|a, b| a.partial_cmp(b).expect("finite predictions"));
    let mut candidates = vec![preds[0] - 1.0];
    candidates.extend(preds.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.push(preds[preds.len() - 1] + 1.0);

    let mut best = (candidates[0], -1.0);
    for k in candidates {
        let acc = oa(pairs, k)?;
        if acc > best.1 {
            best = (k, acc);
        }
    }
    Ok(best)
}

/// Full metrics report for one evaluation run.
#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub ae: f64,
    pub ae_h: f64,
    /// Accuracy at the supplied threshold `k`.
    pub oa_at_k: f64,
    pub k: f64,
    /// Best accuracy over the exhaustive threshold sweep and its threshold.
    pub oa_best: f64,
    pub k_best: f64,
    pub homologous_pairs: usize,
    pub non_homologous_pairs: usize,
}

pub fn evaluate(pairs: &[PairEval], k: f64) -> Result<MetricsReport, MetricsError> {
    let (k_best, oa_best) = best_threshold(pairs)?;
    Ok(MetricsReport {
        ae: ae(pairs)?,
        ae_h: ae_h(pairs)?,
        oa_at_k: oa(pairs, k)?,
        k,
        oa_best,
        k_best,
        homologous_pairs: pairs.iter().filter(|p| p.homologous).count(),
        non_homologous_pairs: pairs.iter().filter(|p| !p.homologous).count(),
    })
}

impl MetricsReport {
    /// `metric,value` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let wrap = |source| MetricsError::Io {
            path: display.clone(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(wrap)?);
        let mut write = || -> std::io::Result<()> {
            writeln!(w, "metric,value")?;
            writeln!(w, "ae,{}", self.ae)?;
            writeln!(w, "ae_h,{}", self.ae_h)?;
            writeln!(w, "oa_at_k,{}", self.oa_at_k)?;
            writeln!(w, "k,{}", self.k)?;
            writeln!(w, "oa_best,{}", self.oa_best)?;
            writeln!(w, "k_best,{}", self.k_best)?;
            writeln!(w, "homologous_pairs,{}", self.homologous_pairs)?;
            writeln!(w, "non_homologous_pairs,{}", self.non_homologous_pairs)?;
            w.flush()
        };
        write().map_err(wrap)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let file = File::create(path).map_err(|source| MetricsError::Io {
            path: display.clone(),
            source,
        })?;
        serde_json::to_writer_pretty(BufWriter::new(file), self).map_err(|e| MetricsError::Io {
            path: display,
            source: e.into(),
        })
    }
}

/// Per-element normality and independence diagnostics over a set of embedding
/// vectors.
#[derive(Clone, Debug)]
pub struct Diagnostics {
    /// Embedding dimension.
    pub dim: usize,
    /// Number of embedding vectors the statistics were computed over.
    pub count: usize,
    pub mean: Vec<f64>,
    /// Sample standard deviation (n - 1 denominator).
    pub std: Vec<f64>,
    /// Per element: `(theoretical, empirical)` quantile pairs at plotting
    /// positions `(i - 0.5) / m`.
    pub qq: Vec<Vec<(f64, f64)>>,
    /// Row-major `dim x dim` Pearson correlation matrix. Entries touching a
    /// zero-variance element are NaN and the element is listed in
    /// `undefined_elements`.
    pub pcc: Vec<f64>,
    pub undefined_elements: Vec<usize>,
}

impl Diagnostics {
    pub fn pcc_at(&self, i: usize, j: usize) -> f64 {
        self.pcc[i * self.dim + j]
    }

    /// Histogram of the off-diagonal correlations over `[-1, 1]` with `bins`
    /// equal-width bins; undefined entries are skipped.
    pub fn pcc_histogram(&self, bins: usize) -> Vec<usize> {
        let mut hist = vec![0usize; bins];
        for i in 0..self.dim {
            for j in 0..self.dim {
                if i == j {
                    continue;
                }
                let r = self.pcc_at(i, j);
                if r.is_nan() {
                    continue;
                }
                let pos = ((r + 1.0) / 2.0 * bins as f64) as usize;
                hist[pos.min(bins - 1)] += 1;
            }
        }
        hist
    }

    /// `element,mean,std` rows.
    pub fn write_stats_csv(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        write_rows(path, "element,mean,std", (0..self.dim).map(|i| {
            format!("{},{},{}", i, self.mean[i], self.std[i])
        }))
    }

    /// `element,theoretical,empirical` rows for external QQ plotting.
    pub fn write_qq_csv(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        write_rows(
            path,
            "element,theoretical,empirical",
            self.qq.iter().enumerate().flat_map(|(i, pairs)| {
                pairs
                    .iter()
                    .map(move |(t, e)| format!("{i},{t},{e}"))
                    .collect::<Vec<_>>()
            }),
        )
    }

    /// The correlation matrix as a bare CSV grid (one row per line, `nan` for
    /// undefined entries).
    pub fn write_pcc_csv(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        write_rows(
            path,
            "",
            (0..self.dim).map(|i| {
                let row: Vec<String> = (0..self.dim)
                    .map(|j| self.pcc_at(i, j).to_string())
                    .collect();
                row.join(",")
            }),
        )
    }

    /// `bin_lo,bin_hi,count` rows for the off-diagonal correlation histogram.
    pub fn write_pcc_hist_csv(
        &self,
        path: impl AsRef<Path>,
        bins: usize,
    ) -> Result<(), MetricsError> {
        let hist = self.pcc_histogram(bins);
        let width = 2.0 / bins as f64;
        write_rows(
            path,
            "bin_lo,bin_hi,count",
            hist.iter().enumerate().map(|(b, count)| {
                format!("{},{},{}", -1.0 + b as f64 * width, -1.0 + (b + 1) as f64 * width, count)
            }),
        )
    }
}

fn write_rows(
    path: impl AsRef<Path>,
    header: &str,
    rows: impl Iterator<Item = String>,
) -> Result<(), MetricsError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let wrap = |source| MetricsError::Io {
        path: display.clone(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(wrap)?);
    let write = || -> std::io::Result<()> {
        if !header.is_empty() {
            writeln!(w, "{header}")?;
        }
        for row in rows {
            writeln!(w, "{row}")?;
        }
        w.flush()
    };
    write().map_err(wrap)
}

/// Computes the full diagnostics over `embeddings` (one vector per row; all
/// rows must share a dimension, and at least two rows are required).
pub fn diagnostics(embeddings: &[Vec<f64>]) -> Result<Diagnostics, MetricsError> {
    if embeddings.len() < 2 {
        return Err(MetricsError::TooFewEmbeddings(embeddings.len()));
    }
    let dim = embeddings[0].len();
    for (index, e) in embeddings.iter().enumerate() {
        if e.len() != dim {
            return Err(MetricsError::RaggedEmbeddings {
                index,
                got: e.len(),
                expected: dim,
            });
        }
    }
    let m = embeddings.len();
    let mf = m as f64;

    let mut mean = vec![0.0; dim];
    for e in embeddings {
        for (s, &x) in mean.iter_mut().zip(e) {
            *s += x;
        }
    }
    for s in mean.iter_mut() {
        *s /= mf;
    }

    // two-pass (co)variance
    let mut cov = vec![0.0; dim * dim];
    let mut centered = vec![0.0; dim];
    for e in embeddings {
        for (c, (&x, &mu)) in centered.iter_mut().zip(e.iter().zip(&mean)) {
            *c = x - mu;
        }
        for i in 0..dim {
            let ci = centered[i];
            for j in i..dim {
                cov[i * dim + j] += ci * centered[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            cov[i * dim + j] /= mf - 1.0;
            cov[j * dim + i] = cov[i * dim + j];
        }
    }
    let std: Vec<f64> = (0..dim).map(|i| cov[i * dim + i].sqrt()).collect();
    let undefined_elements: Vec<usize> =
        (0..dim).filter(|&i| !(std[i] > 0.0)).collect();

    let mut pcc = vec![f64::NAN; dim * dim];
    for i in 0..dim {
        if std[i] == 0.0 {
            continue;
        }
        for j in 0..dim {
            if std[j] == 0.0 {
                continue;
            }
            pcc[i * dim + j] = cov[i * dim + j] / (std[i] * std[j]);
        }
    }

    // QQ pairs against the standard normal at plotting positions (i - 0.5) / m
    let mut qq = Vec::with_capacity(dim);
    for i in 0..dim {
        let mut samples: Vec<f64> = embeddings.iter().map(|e| e[i]).collect();
        samples.sort_by(|a, b| a.partial_cmp(b).expect("finite embedding values"));
        let pairs = samples
            .iter()
            .enumerate()
            .map(|(rank, &x)| {
                let p = (rank as f64 + 0.5) / mf;
                Ok((probit(p)?, x))
            })
            .collect::<Result<Vec<_>, MetricsError>>()?;
        qq.push(pairs);
    }

    Ok(Diagnostics {
        dim,
        count: m,
        mean,
        std,
        qq,
        pcc,
        undefined_elements,
    })
}
