//! Finite-state Markov model of the source-to-tag channel gain.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Row sums must be within this of 1.
pub const ROW_SUM_TOL: f64 = 1e-12;

const STATIONARY_TOL: f64 = 1e-14;
const STATIONARY_MAX_ITERS: usize = 1_000_000;

/// Row-stochastic gain transition matrix; `rows[i][j] = P(G_j | G_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct GainMarkov {
    rows: Vec<Vec<f64>>,
}

impl TryFrom<Vec<Vec<f64>>> for GainMarkov {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        GainMarkov::new(rows)
    }
}

impl From<GainMarkov> for Vec<Vec<f64>> {
    fn from(m: GainMarkov) -> Self {
        m.rows
    }
}

/// Checks that `rows` is square with entries in `[0, 1]` and unit row sums.
pub fn validate_stochastic(rows: &[Vec<f64>]) -> Result<()> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::NotSquare {
            row: 0,
            len: 0,
            expected: 1,
        });
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(Error::NotSquare {
                row: i,
                len: row.len(),
                expected: n,
            });
        }
        for (j, &p) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::BadEntry {
                    row: i,
                    col: j,
                    value: p,
                });
            }
        }
        let sum: f64 = row.iter().sum();
        let residual = (sum - 1.0).abs();
        if residual > ROW_SUM_TOL {
            return Err(Error::RowSum {
                row: i,
                sum,
                residual,
            });
        }
    }
    Ok(())
}

/// Draws an index from `probs` by inverse CDF on one uniform variate.
///
/// Cumulative sums run in index order and the first index whose cumulative
/// mass exceeds the variate wins, so boundaries resolve to the lower index
/// side of the next bucket. Round-off slack at the top goes to the last
/// index with positive mass.
pub fn sample_index(rng: &mut SimRng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if p > 0.0 && u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

impl GainMarkov {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        validate_stochastic(&rows)?;
        Ok(Self { rows })
    }

    pub fn reference() -> Self {
        Self {
            rows: crate::system::REFERENCE_TRANSITIONS
                .iter()
                .map(|r| r.to_vec())
                .collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let rows = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self { rows }
    }

    pub fn levels(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.rows[from][to]
    }

    /// Next gain index after `current`.
    pub fn step(&self, rng: &mut SimRng, current: usize) -> usize {
        sample_index(rng, &self.rows[current])
    }

    /// True when some power of the matrix is strictly positive (irreducible and aperiodic).
    pub fn is_primitive(&self) -> bool {
        let n = self.levels();
        let support: Vec<Vec<bool>> = self
            .rows
            .iter()
            .map(|r| r.iter().map(|&p| p > 0.0).collect())
            .collect();
        let mut power = support.clone();
        // Wielandt: a primitive n x n matrix has M^k > 0 for k = (n-1)^2 + 1.
        let bound = (n - 1) * (n - 1) + 1;
        for _ in 1..bound {
            if power.iter().all(|r| r.iter().all(|&b| b)) {
                return true;
            }
            power = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| (0..n).any(|m| power[i][m] && support[m][j]))
                        .collect()
                })
                .collect();
        }
        power.iter().all(|r| r.iter().all(|&b| b))
    }

    /// Stationary distribution by power iteration from the uniform vector.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        if !self.is_primitive() {
            return Err(Error::NotErgodic(
                "gain chain is reducible or periodic".into(),
            ));
        }
        let n = self.levels();
        let mut pi = vec![1.0 / n as f64; n];
        let mut residual = f64::INFINITY;
        for _ in 0..STATIONARY_MAX_ITERS {
            let mut next = vec![0.0; n];
            for (i, &mass) in pi.iter().enumerate() {
                for (j, &p) in self.rows[i].iter().enumerate() {
                    next[j] += mass * p;
                }
            }
            let total: f64 = next.iter().sum();
            next.iter_mut().for_each(|x| *x /= total);
            residual = next
                .iter()
                .zip(&pi)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            pi = next;
            if residual < STATIONARY_TOL {
                return Ok(pi);
            }
        }
        Err(Error::NoConvergence {
            what: "stationary power iteration",
            iterations: STATIONARY_MAX_ITERS,
            residual,
        })
    }
}

/// Where a channel path starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialGain {
    /// Drawn from the stationary distribution.
    Stationary,
    Fixed(usize),
}

/// Realized gain indices for slots `0..len`.
pub fn generate_path(
    chain: &GainMarkov,
    initial: InitialGain,
    len: usize,
    rng: &mut SimRng,
) -> Result<Vec<usize>> {
    let mut path = Vec::with_capacity(len);
    if len == 0 {
        return Ok(path);
    }
    let mut g = match initial {
        InitialGain::Stationary => sample_index(rng, &chain.stationary()?),
        InitialGain::Fixed(i) if i < chain.levels() => i,
        InitialGain::Fixed(i) => {
            return Err(Error::GainIndexOutOfRange {
                index: i,
                levels: chain.levels(),
            })
        }
    };
    path.push(g);
    for _ in 1..len {
        g = chain.step(rng, g);
        path.push(g);
    }
    Ok(path)
}
