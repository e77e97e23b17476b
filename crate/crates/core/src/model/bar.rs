//! Piecewise-uniform predictive densities over a fixed bin grid.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-probability floor of a bin; keeps the NLL of empty bins finite.
pub const LOG_PROB_FLOOR: f64 = -27.631_021_115_928_547; // ln(1e-12)

/// Strictly increasing bin boundaries. The first and last bins act as tails:
/// values outside the grid are counted in the nearest edge bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    edges: Vec<f64>,
}

impl BinGrid {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::Invalid("a bin grid needs at least two edges".into()));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("bin edges must be finite and strictly increasing".into()));
        }
        Ok(BinGrid { edges })
    }

    pub fn uniform(lo: f64, hi: f64, n_bins: usize) -> Result<Self> {
        if n_bins == 0 || !(hi > lo) {
            return Err(Error::Invalid(format!("bad uniform grid [{lo}, {hi}] with {n_bins} bins")));
        }
        let step = (hi - lo) / n_bins as f64;
        let mut edges: Vec<f64> = (0..=n_bins).map(|i| lo + step * i as f64).collect();
        edges[n_bins] = hi;
        BinGrid::new(edges)
    }

    /// `n_bins` bins: `n_bins - 2` inner bins of equal sample mass between the
    /// 0.1% and 99.9% sample quantiles, plus one tail bin at each end whose
    /// width matches its inner neighbour.
    pub fn equal_mass(samples: &[f64], n_bins: usize) -> Result<Self> {
        if n_bins < 3 {
            return Err(Error::Invalid("equal-mass grid needs at least 3 bins".into()));
        }
        let mut sorted: Vec<f64> = samples.iter().copied().filter(|v| v.is_finite()).collect();
        if sorted.len() < 2 {
            return Err(Error::Invalid("equal-mass grid needs at least two finite samples".into()));
        }
        sorted.sort_by(f64::total_cmp);
        let n_inner = n_bins - 2;
        let (lo_q, hi_q) = (0.001, 0.999);
        let mut inner: Vec<f64> =
            (0..=n_inner).map(|i| quantile_sorted(&sorted, lo_q + (hi_q - lo_q) * i as f64 / n_inner as f64)).collect();
        let span = (inner[n_inner] - inner[0]).max(1e-6);
        let min_gap = span * 1e-4;
        for i in 1..inner.len() {
            if inner[i] < inner[i - 1] + min_gap {
                inner[i] = inner[i - 1] + min_gap;
            }
        }
        let first = inner[1] - inner[0];
        let last = inner[n_inner] - inner[n_inner - 1];
        let mut edges = Vec::with_capacity(n_bins + 1);
        edges.push(inner[0] - first);
        edges.extend_from_slice(&inner);
        edges.push(inner[n_inner] + last);
        BinGrid::new(edges)
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn width(&self, b: usize) -> f64 {
        self.edges[b + 1] - self.edges[b]
    }

    pub fn midpoint(&self, b: usize) -> f64 {
        0.5 * (self.edges[b] + self.edges[b + 1])
    }

    /// Bin containing `y`; bins are half-open `[lo, hi)` except the last, and
    /// out-of-range values are clamped to the edge bins.
    pub fn locate(&self, y: f64) -> usize {
        let n = self.n_bins();
        if y.is_nan() || y < self.edges[1] {
            return 0;
        }
        if y >= self.edges[n - 1] {
            return n - 1;
        }
        // first edge strictly greater than y
        self.edges.partition_point(|&e| e <= y) - 1
    }

    /// Grid mapped through `v ↦ scale·v + shift` (`scale > 0`).
    pub fn affine(&self, scale: f64, shift: f64) -> BinGrid {
        let mut edges: Vec<f64> = self.edges.iter().map(|e| e * scale + shift).collect();
        // keep strict monotonicity under extreme rescaling
        for i in 1..edges.len() {
            if edges[i] <= edges[i - 1] {
                edges[i] = next_up(edges[i - 1]);
            }
        }
        BinGrid { edges }
    }
}

fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let bits = x.to_bits();
    f64::from_bits(if x > 0.0 { bits + 1 } else { bits - 1 })
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = (pos as usize).min(n - 2);
    let frac = pos - i as f64;
    sorted[i] + frac * (sorted[i + 1] - sorted[i])
}

/// Piecewise-uniform density: bin `b` carries probability `softmax(logits)_b`
/// spread uniformly over its width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarDistribution {
    grid: BinGrid,
    log_probs: Vec<f64>,
}

impl BarDistribution {
    pub fn from_logits(grid: BinGrid, logits: &[f64]) -> Result<Self> {
        if logits.len() != grid.n_bins() {
            return Err(Error::DimensionMismatch { expected: grid.n_bins(), got: logits.len() });
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(logits.iter().map(|l| libm::exp(l - max)).sum::<f64>());
        let log_probs = logits.iter().map(|l| l - lse).collect();
        Ok(BarDistribution { grid, log_probs })
    }

    pub fn from_probs(grid: BinGrid, probs: &[f64]) -> Result<Self> {
        if probs.len() != grid.n_bins() {
            return Err(Error::DimensionMismatch { expected: grid.n_bins(), got: probs.len() });
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(*p >= 0.0)) || !(total > 0.0) {
            return Err(Error::Invalid("bin probabilities must be nonnegative with positive mass".into()));
        }
        let log_probs = probs.iter().map(|p| libm::log(p / total)).collect();
        Ok(BarDistribution { grid, log_probs })
    }

    pub fn uniform(grid: BinGrid) -> Self {
        let n = grid.n_bins();
        BarDistribution { grid, log_probs: alloc::vec![-libm::log(n as f64); n] }
    }

    pub fn grid(&self) -> &BinGrid {
        &self.grid
    }

    pub fn edges(&self) -> &[f64] {
        self.grid.edges()
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|&l| libm::exp(l)).collect()
    }

    /// Same bin probabilities on the grid mapped by `v ↦ scale·v + shift`.
    pub fn affine(&self, scale: f64, shift: f64) -> BarDistribution {
        BarDistribution { grid: self.grid.affine(scale, shift), log_probs: self.log_probs.clone() }
    }

    /// Negative log density at `y`, in nats.
    pub fn nll(&self, y: f64) -> f64 {
        let b = self.grid.locate(y);
        -self.log_probs[b].max(LOG_PROB_FLOOR) + libm::log(self.grid.width(b))
    }

    pub fn mean(&self) -> f64 {
        self.log_probs.iter().enumerate().map(|(b, &l)| libm::exp(l) * self.grid.midpoint(b)).sum()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let edges = self.grid.edges();
        if y <= edges[0] {
            return 0.0;
        }
        let mut acc = 0.0;
        for (b, &l) in self.log_probs.iter().enumerate() {
            let (lo, hi) = (edges[b], edges[b + 1]);
            let p = libm::exp(l);
            if y >= hi {
                acc += p;
            } else {
                acc += p * (y - lo) / (hi - lo);
                break;
            }
        }
        acc.min(1.0)
    }

    /// Inverse CDF with linear interpolation inside the located bin.
    pub fn quantile(&self, q: f64) -> f64 {
        let edges = self.grid.edges();
        let q = q.clamp(0.0, 1.0);
        let mut acc = 0.0;
        let mut last_nonempty = 0;
        for (b, &l) in self.log_probs.iter().enumerate() {
            let p = libm::exp(l);
            if p <= 0.0 {
                continue;
            }
            last_nonempty = b;
            if acc + p >= q {
                let frac = ((q - acc) / p).clamp(0.0, 1.0);
                return edges[b] + frac * self.grid.width(b);
            }
            acc += p;
        }
        edges[last_nonempty + 1]
    }

    /// Differential entropy `Σ p_b (log w_b − log p_b)`.
    pub fn entropy(&self) -> f64 {
        self.log_probs
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > f64::NEG_INFINITY)
            .map(|(b, &l)| libm::exp(l) * (libm::log(self.grid.width(b)) - l))
            .sum()
    }
}
