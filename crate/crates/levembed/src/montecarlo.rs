//! Monte Carlo analyses of the expected distances as a function of the degree
//! of freedom.
//!
//! A vector has degree of freedom `d` (relative to dimension `n`) when it is
//! `y P` for an orthogonal `P` and a `y` whose first `d` entries are i.i.d.
//! standard normals and the rest zero. The sweeps measure the average l1, l2,
//! and squared Euclidean distances of such vectors from the origin per `d`,
//! under Haar-random, signed-permutation, or identity `P` — the squared
//! Euclidean mean is linear in `d`, the others are not (unless `P` is a
//! signed permutation, which restores linearity for l1).

use rayon::prelude::*;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{StreamDomain, StreamRng};
use crate::space::{distance, EmbeddingSpace, SpaceKind};
use crate::special;

#[derive(Debug, Error)]
pub enum McError {
    #[error("invalid sweep config: {0}")]
    BadConfig(String),
    #[error("degree of freedom {d} exceeds dimension {n}")]
    DofOutOfRange { d: usize, n: usize },
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which orthogonal matrix acts on the normal components per trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrthoKind {
    #[serde(rename = "haar")]
    Haar,
    #[serde(rename = "signedperm")]
    SignedPermutation,
    #[serde(rename = "identity")]
    Identity,
}

impl OrthoKind {
    pub fn name(self) -> &'static str {
        match self {
            OrthoKind::Haar => "haar",
            OrthoKind::SignedPermutation => "signedperm",
            OrthoKind::Identity => "identity",
        }
    }
}

/// A dense square orthogonal matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthoMatrix {
    n: usize,
    data: Vec<f64>,
}

impl OrthoMatrix {
    pub fn identity(n: usize) -> OrthoMatrix {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        OrthoMatrix { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Row-vector action `x = y P`.
    pub fn apply_row(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.n, "vector length must match matrix order");
        let mut x = vec![0.0; self.n];
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            let row = &self.data[i * self.n..(i + 1) * self.n];
            for (xj, &pij) in x.iter_mut().zip(row) {
                *xj += yi * pij;
            }
        }
        x
    }

    /// `max_ij |P P^T - I|`, the orthogonality defect.
    pub fn orthogonality_defect(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut dot = 0.0;
                for k in 0..n {
                    dot += self.at(i, k) * self.at(j, k);
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// Haar-distributed orthogonal matrix: Householder QR of an i.i.d. Gaussian
/// matrix with the sign convention that makes the factorization unique (the
/// triangular factor gets a positive diagonal).
pub fn random_orthogonal(n: usize, rng: &mut StreamRng) -> OrthoMatrix {
    assert!(n >= 1);
    let mut a = vec![0.0; n * n];
    rng.fill_normal(&mut a);

    // Householder triangularization, keeping the reflection vectors.
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n.saturating_sub(1));
    let mut diag_signs = Vec::with_capacity(n);
    for k in 0..n.saturating_sub(1) {
        let m = n - k;
        let mut v: Vec<f64> = (0..m).map(|i| a[(k + i) * n + k]).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            reflectors.push(vec![0.0; m]);
            diag_signs.push(1.0);
            continue;
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        diag_signs.push(alpha.signum());
        if vnorm == 0.0 {
            reflectors.push(vec![0.0; m]);
            continue;
        }
        for x in v.iter_mut() {
            *x /= vnorm;
        }
        // apply I - 2 v v^T to the trailing block of A
        for j in k..n {
            let mut dot = 0.0;
            for i in 0..m {
                dot += v[i] * a[(k + i) * n + j];
            }
            let c = 2.0 * dot;
            for i in 0..m {
                a[(k + i) * n + j] -= c * v[i];
            }
        }
        reflectors.push(v);
    }
    diag_signs.push(a[(n - 1) * n + (n - 1)].signum());

    // Q = H_0 H_1 ... H_{n-2}, assembled by applying reflections to I in
    // reverse order.
    let mut q = OrthoMatrix::identity(n).data;
    for (k, v) in reflectors.iter().enumerate().rev() {
        let m = n - k;
        if v.iter().all(|&x| x == 0.0) {
            continue;
        }
        for j in 0..n {
            let mut dot = 0.0;
            for i in 0..m {
                dot += v[i] * q[(k + i) * n + j];
            }
            let c = 2.0 * dot;
            for i in 0..m {
                q[(k + i) * n + j] -= c * v[i];
            }
        }
    }
    // flip columns so the triangular factor's diagonal is positive
    for (k, sign) in diag_signs.iter().enumerate() {
        if *sign < 0.0 {
            for row in 0..n {
                q[row * n + k] = -q[row * n + k];
            }
        }
    }
    OrthoMatrix { n, data: q }
}

/// Uniform random signed permutation matrix: entries in `{-1, 0, 1}`, exactly
/// one nonzero per row and column, orthogonal exactly.
pub fn signed_permutation(n: usize, rng: &mut StreamRng) -> OrthoMatrix {
    let mut perm: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut perm);
    let mut data = vec![0.0; n * n];
    for (i, &j) in perm.iter().enumerate() {
        data[i * n + j] = if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
    }
    OrthoMatrix { n, data }
}

/// Draws `x = y P` where `y` has `d` leading i.i.d. standard normal entries
/// and zeros elsewhere.
pub fn dof_sample(
    n: usize,
    d: usize,
    p: &OrthoMatrix,
    rng: &mut StreamRng,
) -> Result<Vec<f64>, McError> {
    if d > n || d == 0 {
        return Err(McError::DofOutOfRange { d, n });
    }
    let mut y = vec![0.0; n];
    rng.fill_normal(&mut y[..d]);
    Ok(p.apply_row(&y))
}

/// Applies a fresh Haar-random orthogonal matrix to `y` without forming it:
/// the chain of Householder reflections of a QR factorization acting directly
/// on the vector, O(n^2) per draw instead of O(n^3). Distribution-identical to
/// `random_orthogonal` followed by [`OrthoMatrix::apply_row`].
pub fn haar_rotate(y: &[f64], rng: &mut StreamRng) -> Vec<f64> {
    let n = y.len();
    let mut x = y.to_vec();
    let mut v = vec![0.0; n];
    for start in 0..n.saturating_sub(1) {
        let m = n - start;
        let v = &mut v[..m];
        // uniform unit vector = reflection image of e1
        let norm2 = loop {
            rng.fill_normal(v);
            let norm2 = v.iter().map(|x| x * x).sum::<f64>();
            if norm2 > 1e-280 {
                break norm2;
            }
        };
        let norm = norm2.sqrt();
        for t in v.iter_mut() {
            *t /= norm;
        }
        // u = e1 - v; reflection I - 2 u u^T / |u|^2 maps e1 to v
        let u0 = 1.0 - v[0];
        let unorm2 = 2.0 * u0;
        if unorm2 < 1e-28 {
            continue;
        }
        v[0] = -u0;
        // now v holds -u; (x . u) = -(x . v)
        let tail = &mut x[start..];
        let mut dot = 0.0;
        for (xi, ui) in tail.iter().zip(v.iter()) {
            dot += xi * ui;
        }
        let c = 2.0 * dot / unorm2;
        for (xi, ui) in tail.iter_mut().zip(v.iter()) {
            *xi -= c * ui;
        }
    }
    if rng.uniform() < 0.5 {
        x[n - 1] = -x[n - 1];
    }
    x
}

/// Mean of the chi distribution with `d` degrees of freedom:
/// `sqrt(2) * Gamma((d+1)/2) / Gamma(d/2)`.
pub fn chi_mean_analytic(d: usize) -> f64 {
    assert!(d >= 1);
    let d = d as f64;
    let ln = special::ln_gamma((d + 1.0) / 2.0).expect("positive argument")
        - special::ln_gamma(d / 2.0).expect("positive argument");
    std::f64::consts::SQRT_2 * ln.exp()
}

/// Monte Carlo mean distance between two independent rescaled standard normal
/// embeddings of dimension `space.n`; the rescaling factor makes the expected
/// value equal `space.n` for every distance kind.
pub fn independent_pair_check(space: &EmbeddingSpace, trials: usize, rng: &mut StreamRng) -> f64 {
    let r = space.rescale_factor();
    let n = space.n;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut mean = 0.0;
    for t in 0..trials {
        rng.fill_normal(&mut u);
        rng.fill_normal(&mut v);
        for x in u.iter_mut() {
            *x *= r;
        }
        for x in v.iter_mut() {
            *x *= r;
        }
        let d = distance(space.kind, &u, &v).expect("equal dimensions");
        mean += (d - mean) / (t + 1) as f64;
    }
    mean
}

/// Sweep configuration: distances are measured between `x = y P` and the
/// origin for every degree of freedom in `d_values`, with a fresh `P` per
/// trial. `rescale_at_n` multiplies each distance kind by the constant that
/// makes its mean at `d = n` equal `n`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub d_values: Vec<usize>,
    pub trials: usize,
    pub ortho: OrthoKind,
    pub rescale_at_n: bool,
    pub seed: u64,
}

impl SimConfig {
    pub fn full_sweep(n: usize, trials: usize, ortho: OrthoKind, seed: u64) -> SimConfig {
        SimConfig {
            n,
            d_values: (1..=n).collect(),
            trials,
            ortho,
            rescale_at_n: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), McError> {
        if self.n == 0 {
            return Err(McError::BadConfig("n must be >= 1".into()));
        }
        if self.trials == 0 {
            return Err(McError::BadConfig("trials must be >= 1".into()));
        }
        if self.d_values.is_empty() {
            return Err(McError::BadConfig("d_values must be non-empty".into()));
        }
        for &d in &self.d_values {
            if d == 0 || d > self.n {
                return Err(McError::DofOutOfRange { d, n: self.n });
            }
        }
        if self.rescale_at_n && !self.d_values.contains(&self.n) {
            return Err(McError::BadConfig(format!(
                "rescaling at d = n requires {} in d_values",
                self.n
            )));
        }
        Ok(())
    }
}

/// Mean and standard error of one distance kind at one degree of freedom.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DistStats {
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SweepCell {
    pub d: usize,
    pub l1: DistStats,
    pub l2: DistStats,
    pub sq: DistStats,
}

impl SweepCell {
    pub fn stats(&self, kind: SpaceKind) -> DistStats {
        match kind {
            SpaceKind::L1 => self.l1,
            SpaceKind::L2 => self.l2,
            SpaceKind::SqEuclid => self.sq,
        }
    }
}

/// Multiplicative constants applied per distance kind when rescaling at
/// `d = n`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RescaleFactors {
    pub l1: f64,
    pub l2: f64,
    pub sq: f64,
}

impl RescaleFactors {
    pub fn get(&self, kind: SpaceKind) -> f64 {
        match kind {
            SpaceKind::L1 => self.l1,
            SpaceKind::L2 => self.l2,
            SpaceKind::SqEuclid => self.sq,
        }
    }
}

/// Raw per-`d` statistics plus the rescale factors when requested. The raw
/// values always stay available; rescaled views multiply mean and standard
/// error by the factor.
#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub n: usize,
    pub trials: usize,
    pub ortho: OrthoKind,
    pub cells: Vec<SweepCell>,
    pub rescale: Option<RescaleFactors>,
}

impl SweepResult {
    pub fn cell(&self, d: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.d == d)
    }

    /// Stats with the rescale factor applied (identity when none was
    /// requested).
    pub fn rescaled_stats(&self, kind: SpaceKind, d: usize) -> Option<DistStats> {
        let cell = self.cell(d)?;
        let factor = self.rescale.map(|r| r.get(kind)).unwrap_or(1.0);
        let raw = cell.stats(kind);
        Some(DistStats {
            mean: factor * raw.mean,
            stderr: factor * raw.stderr,
        })
    }

    /// `d,dist_kind,mean,stderr,trials,ortho,rescaled` rows, one per
    /// `(d, kind)`; rescaled sweeps write the rescaled values.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), McError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let wrap = |source| McError::Io {
            path: display.clone(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(wrap)?);
        let mut write = || -> std::io::Result<()> {
            writeln!(w, "d,dist_kind,mean,stderr,trials,ortho,rescaled")?;
            let rescaled = u8::from(self.rescale.is_some());
            for cell in &self.cells {
                for kind in [SpaceKind::SqEuclid, SpaceKind::L1, SpaceKind::L2] {
                    let stats = self
                        .rescaled_stats(kind, cell.d)
                        .expect("cell exists");
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{}",
                        cell.d,
                        kind.name(),
                        stats.mean,
                        stats.stderr,
                        self.trials,
                        self.ortho.name(),
                        rescaled
                    )?;
                }
            }
            w.flush()
        };
        write().map_err(wrap)
    }
}

#[derive(Clone, Copy, Default)]
struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn stats(&self) -> DistStats {
        let var = if self.count > 1 {
            self.m2 / (self.count - 1) as f64
        } else {
            0.0
        };
        DistStats {
            mean: self.mean,
            stderr: (var / self.count as f64).sqrt(),
        }
    }
}

/// Runs the sweep. Cells are independent: cell `d` draws everything from
/// stream `(seed, MonteCarlo, d)`, so results do not depend on the worker
/// count. A fresh orthogonal transform is drawn per trial.
pub fn sweep_expected_distance(cfg: &SimConfig) -> Result<SweepResult, McError> {
    cfg.validate()?;
    let n = cfg.n;
    let cells: Vec<SweepCell> = cfg
        .d_values
        .par_iter()
        .map(|&d| {
            let mut rng = StreamRng::new(cfg.seed, StreamDomain::MonteCarlo, d as u64);
            let mut l1 = Welford::default();
            let mut l2 = Welford::default();
            let mut sq = Welford::default();
            let mut y = vec![0.0; n];
            let mut perm: Vec<usize> = (0..n).collect();
            for _ in 0..cfg.trials {
                y.iter_mut().for_each(|v| *v = 0.0);
                rng.fill_normal(&mut y[..d]);
                let x: Vec<f64> = match cfg.ortho {
                    OrthoKind::Haar => haar_rotate(&y, &mut rng),
                    OrthoKind::SignedPermutation => {
                        perm.iter_mut().enumerate().for_each(|(i, p)| *p = i);
                        rng.shuffle(&mut perm);
                        let mut x = vec![0.0; n];
                        for (i, &target) in perm.iter().enumerate() {
                            let sign = if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
                            x[target] = sign * y[i];
                        }
                        x
                    }
                    OrthoKind::Identity => y.clone(),
                };
                let sum_sq: f64 = x.iter().map(|v| v * v).sum();
                let sum_abs: f64 = x.iter().map(|v| v.abs()).sum();
                sq.push(sum_sq);
                l2.push(sum_sq.sqrt());
                l1.push(sum_abs);
            }
            SweepCell {
                d,
                l1: l1.stats(),
                l2: l2.stats(),
                sq: sq.stats(),
            }
        })
        .collect();

    let rescale = if cfg.rescale_at_n {
        let at_n = cells
            .iter()
            .find(|c| c.d == n)
            .expect("validated: n in d_values");
        Some(RescaleFactors {
            l1: n as f64 / at_n.l1.mean,
            l2: n as f64 / at_n.l2.mean,
            sq: n as f64 / at_n.sq.mean,
        })
    } else {
        None
    };

    Ok(SweepResult {
        n,
        trials: cfg.trials,
        ortho: cfg.ortho,
        cells,
        rescale,
    })
}
