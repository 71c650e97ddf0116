//! Space-filling designs on the unit hypercube.
//!
//! [`lhs`] draws a plain Latin hypercube sample; [`maximin_lhs`] post-optimizes
//! one by greedy within-column swaps that never shrink the minimum pairwise
//! distance. Both are pure functions of their arguments.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::fmt_f64;

/// An `n × d` point set in `[0,1]^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
    pub seed: u64,
    pub maximin_iters: usize,
}

impl DesignMatrix {
    /// Wraps row-major data. No stratification is implied or checked.
    pub fn from_rows(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::invalid(format!(
                "design data has {} values, expected {n}×{d}",
                data.len()
            )));
        }
        Ok(Self {
            n,
            d,
            data,
            seed: 0,
            maximin_iters: 0,
        })
    }

    pub fn from_row_vecs(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("ragged design rows"));
        }
        Self::from_rows(rows.len(), d, rows.concat())
    }

    pub fn empty(d: usize) -> Self {
        Self {
            n: 0,
            d,
            data: Vec::new(),
            seed: 0,
            maximin_iters: 0,
        }
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n).map(move |i| self.row(i))
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.d + k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Keeps the rows whose index satisfies `keep`.
    pub fn filter_rows(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        let mut data = Vec::new();
        let mut n = 0;
        for i in 0..self.n {
            if keep(i) {
                data.extend_from_slice(self.row(i));
                n += 1;
            }
        }
        Self {
            n,
            d: self.d,
            data,
            seed: self.seed,
            maximin_iters: self.maximin_iters,
        }
    }

    /// Row subset in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            n: idx.len(),
            d: self.d,
            data,
            seed: self.seed,
            maximin_iters: self.maximin_iters,
        }
    }

    /// Prepends the same fixed coordinates to every row: `(prefix, row_i)`.
    pub fn with_prefix(&self, prefix: &[f64]) -> Self {
        let d = self.d + prefix.len();
        let mut data = Vec::with_capacity(self.n * d);
        for r in self.rows() {
            data.extend_from_slice(prefix);
            data.extend_from_slice(r);
        }
        Self {
            n: self.n,
            d,
            data,
            seed: self.seed,
            maximin_iters: self.maximin_iters,
        }
    }

    /// Minimum pairwise Euclidean distance (infinite for fewer than two points).
    pub fn min_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                best = best.min(sq_dist(self.row(i), self.row(j)));
            }
        }
        best.sqrt()
    }

    /// CSV with header `x1,...,xd` and 17 significant digits per value.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let header: Vec<String> = (1..=self.d).map(|k| format!("x{k}")).collect();
        wr.write_record(&header)?;
        for r in self.rows() {
            wr.write_record(r.iter().map(|&v| fmt_f64(v)))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let d = rd.headers()?.len();
        let mut data = Vec::new();
        let mut n = 0;
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            if rec.len() != d {
                return Err(Error::Parse {
                    row: row + 1,
                    message: format!("expected {d} columns, found {}", rec.len()),
                });
            }
            for (col, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    row: row + 1,
                    message: format!("column {}: cannot parse {field:?}", col + 1),
                })?;
                data.push(v);
            }
            n += 1;
        }
        Self::from_rows(n, d, data)
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the LHS stratum `[k/n, (k+1)/n)` containing `v`.
pub fn stratum(v: f64, n: usize) -> usize {
    ((v * n as f64).floor().max(0.0) as usize).min(n - 1)
}

/// Default maximin swap budget, `100 · n · d`.
pub fn default_maximin_iters(n: usize, d: usize) -> usize {
    100 * n * d
}

fn check_dims(n: usize, d: usize) -> Result<()> {
    if n == 0 || d == 0 {
        return Err(Error::invalid(format!(
            "design needs n ≥ 1 and d ≥ 1 (got n={n}, d={d})"
        )));
    }
    Ok(())
}

fn lhs_with_rng(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut data = vec![0.0; n * d];
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..d {
        perm.shuffle(rng);
        for (i, &s) in perm.iter().enumerate() {
            let jitter: f64 = rng.random();
            let mut v = (s as f64 + jitter) / n as f64;
            // keep float rounding from pushing a value across a stratum edge
            while stratum(v, n) > s {
                v = v.next_down();
            }
            while stratum(v, n) < s {
                v = v.next_up();
            }
            data[i * d + k] = v;
        }
    }
    data
}

/// Latin hypercube sample: each column places exactly one point uniformly at
/// random inside each of the `n` strata.
pub fn lhs(n: usize, d: usize, seed: u64) -> Result<DesignMatrix> {
    check_dims(n, d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(DesignMatrix {
        n,
        d,
        data: lhs_with_rng(n, d, &mut rng),
        seed,
        maximin_iters: 0,
    })
}

/// Maximin-optimized LHS.
///
/// Starting from `lhs(n, d, seed)`, each of `iters` rounds picks a column and
/// two rows and exchanges their values in that column; the swap is kept iff
/// the minimum pairwise distance does not decrease. Swaps move whole strata,
/// so the result is still a Latin hypercube.
pub fn maximin_lhs(n: usize, d: usize, seed: u64, iters: usize) -> Result<DesignMatrix> {
    check_dims(n, d)?;
    if n < 2 {
        return Err(Error::invalid("maximin LHS needs n ≥ 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = lhs_with_rng(n, d, &mut rng);
    // with two points every swap preserves the single pairwise distance
    if n > 2 {
        optimize_maximin(&mut x, n, d, iters, &mut rng);
    }
    Ok(DesignMatrix {
        n,
        d,
        data: x,
        seed,
        maximin_iters: iters,
    })
}

struct MinTracker {
    value: f64,
    pair: (usize, usize),
}

fn global_min(dist: &[f64], n: usize) -> MinTracker {
    let mut t = MinTracker {
        value: f64::INFINITY,
        pair: (0, 1),
    };
    for i in 0..n {
        for j in (i + 1)..n {
            let v = dist[i * n + j];
            if v < t.value {
                t.value = v;
                t.pair = (i, j);
            }
        }
    }
    t
}

fn optimize_maximin(x: &mut [f64], n: usize, d: usize, iters: usize, rng: &mut ChaCha8Rng) {
    // squared distances, full symmetric storage
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = sq_dist(&x[i * d..(i + 1) * d], &x[j * d..(j + 1) * d]);
            dist[i * n + j] = v;
            dist[j * n + i] = v;
        }
    }
    let mut min = global_min(&dist, n);
    let mut row_a = vec![0.0; n];
    let mut row_b = vec![0.0; n];

    for _ in 0..iters {
        let col = rng.random_range(0..d);
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        x.swap(a * d + col, b * d + col);

        let mut new_min = f64::INFINITY;
        for j in 0..n {
            if j != a {
                row_a[j] = sq_dist(&x[a * d..(a + 1) * d], &x[j * d..(j + 1) * d]);
                new_min = new_min.min(row_a[j]);
            }
            if j != b {
                row_b[j] = sq_dist(&x[b * d..(b + 1) * d], &x[j * d..(j + 1) * d]);
                new_min = new_min.min(row_b[j]);
            }
        }
        // untouched pairs are unchanged, so only the rewritten rows can
        // lower the minimum
        if new_min >= min.value {
            for j in 0..n {
                if j != a {
                    dist[a * n + j] = row_a[j];
                    dist[j * n + a] = row_a[j];
                }
                if j != b {
                    dist[b * n + j] = row_b[j];
                    dist[j * n + b] = row_b[j];
                }
            }
            let (p, q) = min.pair;
            if p == a || p == b || q == a || q == b {
                min = global_min(&dist, n);
            }
        } else {
            x.swap(a * d + col, b * d + col);
        }
    }
}
