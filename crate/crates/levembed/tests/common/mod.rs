//! Independent test oracles. Everything here recomputes expected values from
//! first principles, without touching the implementation paths it checks.
//!
//! Compiled once per test binary; not every binary uses every oracle.
#![allow(dead_code)]

use std::collections::{HashSet, VecDeque};

use levembed::seq::{Base, DnaSeq};

/// Exhaustive edit-script search: breadth-first over single-symbol edits
/// (insert/delete/substitute over the given alphabet) from `s` until `t` is
/// reached. Exact but exponential; only for short strings.
pub fn levenshtein_bfs(s: &DnaSeq, t: &DnaSeq, alphabet: &[Base]) -> usize {
    if s == t {
        return 0;
    }
    let target: Vec<Base> = t.bases().to_vec();
    let limit = s.len().max(t.len());
    let mut visited: HashSet<Vec<Base>> = HashSet::new();
    let mut frontier: VecDeque<(Vec<Base>, usize)> = VecDeque::new();
    let start: Vec<Base> = s.bases().to_vec();
    visited.insert(start.clone());
    frontier.push_back((start, 0));
    while let Some((current, depth)) = frontier.pop_front() {
        let next_depth = depth + 1;
        for neighbor in single_edits(&current, alphabet) {
            if neighbor == target {
                return next_depth;
            }
            if next_depth < limit && visited.insert(neighbor.clone()) {
                frontier.push_back((neighbor, next_depth));
            }
        }
    }
    panic!("edit distance exceeds max(len) bound; bug in the oracle harness");
}

/// Exhaustive edit-script distances from `s` to every string reachable within
/// `max_depth` single edits over the alphabet, by breadth-first search.
pub fn bfs_all_within(
    s: &DnaSeq,
    alphabet: &[Base],
    max_depth: usize,
) -> std::collections::HashMap<Vec<Base>, usize> {
    let mut dist: std::collections::HashMap<Vec<Base>, usize> = std::collections::HashMap::new();
    let start: Vec<Base> = s.bases().to_vec();
    dist.insert(start.clone(), 0);
    let mut frontier: VecDeque<(Vec<Base>, usize)> = VecDeque::new();
    frontier.push_back((start, 0));
    while let Some((current, depth)) = frontier.pop_front() {
        if depth == max_depth {
            continue;
        }
        for neighbor in single_edits(&current, alphabet) {
            if !dist.contains_key(&neighbor) {
                dist.insert(neighbor.clone(), depth + 1);
                frontier.push_back((neighbor, depth + 1));
            }
        }
    }
    dist
}

fn single_edits(s: &[Base], alphabet: &[Base]) -> Vec<Vec<Base>> {
    let mut out = Vec::new();
    for i in 0..s.len() {
        // deletion
        let mut del = s.to_vec();
        del.remove(i);
        out.push(del);
        // substitution
        for &b in alphabet {
            if b != s[i] {
                let mut sub = s.to_vec();
                sub[i] = b;
                out.push(sub);
            }
        }
    }
    // insertion
    for i in 0..=s.len() {
        for &b in alphabet {
            let mut ins = s.to_vec();
            ins.insert(i, b);
            out.push(ins);
        }
    }
    out
}

/// All strings over `alphabet` of length 0..=max_len.
pub fn all_strings(alphabet: &[Base], max_len: usize) -> Vec<DnaSeq> {
    let mut out = vec![DnaSeq::default()];
    let mut layer: Vec<Vec<Base>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for prefix in &layer {
            for &b in alphabet {
                let mut s = prefix.clone();
                s.push(b);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned().map(DnaSeq::new));
        layer = next;
    }
    out
}

/// Maclaurin series for erf, accurate to full double precision for |x| <= 5.
pub fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let mut k = 0usize;
    loop {
        k += 1;
        term *= -x * x / k as f64;
        let contribution = term / (2 * k + 1) as f64;
        sum += contribution;
        if contribution.abs() < 1e-18 * sum.abs().max(1e-18) || k > 300 {
            break;
        }
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

pub fn normal_cdf_series(x: f64) -> f64 {
    0.5 * (1.0 + erf_series(x / std::f64::consts::SQRT_2))
}

/// Inverse normal CDF by bisection on the erf-series CDF.
pub fn probit_bisect(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0);
    let (mut lo, mut hi) = (-10.0f64, 10.0f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf_series(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// ln Gamma at half-integer arguments by the recurrence
/// `Gamma(x + 1) = x Gamma(x)` built up from `Gamma(1/2) = sqrt(pi)` and
/// `Gamma(1) = 1`. `twice` is `2x`.
pub fn ln_gamma_half_integer(twice: u32) -> f64 {
    assert!(twice >= 1);
    let mut acc = if twice % 2 == 0 {
        0.0
    } else {
        0.5 * std::f64::consts::PI.ln()
    };
    let mut x = if twice % 2 == 0 { 1.0f64 } else { 0.5 };
    let target = twice as f64 / 2.0;
    while x < target - 0.25 {
        acc += x.ln();
        x += 1.0;
    }
    acc
}

/// Least-squares line fit: returns (slope, intercept, r_squared).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = (sxy * sxy) / (sxx * syy);
    (slope, intercept, r2)
}

/// Golden-section search for the minimizer of a unimodal function on [lo, hi].
pub fn golden_section_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while (hi - lo).abs() > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}
