//! Row-token inputs: normalized covariates, treatment and outcome channels.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::ObsRow;

/// Role embedding ids.
pub const ROLE_CONTEXT: usize = 0;
pub const ROLE_QUERY: usize = 1;

/// Standardization statistics taken from the context rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
    /// Fewer than two context rows or a constant outcome: `y` is left unscaled.
    pub degenerate_y: bool,
}

impl NormStats {
    pub fn normalize_y(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }
}

/// Dense model inputs for `n_ctx` context rows followed by `n_query` query rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub n_ctx: usize,
    pub n_query: usize,
    pub d_max: usize,
    /// `[rows, d_max]`, zero-padded beyond the real covariates.
    pub x: Vec<f32>,
    pub t: Vec<f32>,
    /// Normalized outcome for context rows, zero for queries.
    pub y: Vec<f32>,
    pub roles: Vec<usize>,
    pub stats: NormStats,
}

impl Encoded {
    pub fn rows(&self) -> usize {
        self.n_ctx + self.n_query
    }
}

/// Query row borrowed from the caller: treatment and covariates.
#[derive(Clone, Copy, Debug)]
pub struct QueryRow<'a> {
    pub t: u8,
    pub x: &'a [f64],
}

fn mean_std(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, libm::sqrt(var))
}

/// Per-feature and outcome standardization from the context rows.
///
/// Constant or undetermined columns keep unit scale; the outcome falls back to
/// the identity map when it cannot be standardized.
pub fn context_stats(obs: &[ObsRow], d: usize) -> NormStats {
    let n_ctx = obs.len();
    let mut x_mean = vec![0.0; d];
    let mut x_std = vec![1.0; d];
    for j in 0..d {
        let (m, s) = mean_std(obs.iter().map(|r| r.x[j]), n_ctx);
        x_mean[j] = m;
        if n_ctx >= 2 && s > 0.0 && s.is_finite() {
            x_std[j] = s;
        }
    }
    let (ym, ys) = mean_std(obs.iter().map(|r| r.y), n_ctx);
    let degenerate_y = n_ctx < 2 || !(ys > 0.0) || !ys.is_finite();
    let (y_mean, y_std) = if degenerate_y { (0.0, 1.0) } else { (ym, ys) };
    NormStats { x_mean, x_std, y_mean, y_std, degenerate_y }
}

/// Builds the token inputs for one dataset.
pub fn encode_rows(obs: &[ObsRow], queries: &[QueryRow<'_>], d_max: usize, n_max: usize) -> Result<Encoded> {
    let rows = obs.len() + queries.len();
    if rows > n_max {
        return Err(Error::TooManyRows { rows, max: n_max });
    }
    let d = obs.first().map(|r| r.x.len()).or_else(|| queries.first().map(|q| q.x.len())).unwrap_or(0);
    if d > d_max {
        return Err(Error::TooManyFeatures { features: d, max: d_max });
    }
    if let Some(bad) = obs.iter().map(|r| r.x.len()).chain(queries.iter().map(|q| q.x.len())).find(|&l| l != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad });
    }
    if obs.iter().any(|r| r.t > 1) || queries.iter().any(|q| q.t > 1) {
        return Err(Error::Invalid("treatment must be 0 or 1".into()));
    }
    let n_ctx = obs.len();
    let stats = context_stats(obs, d);

    let mut x = vec![0.0f32; rows * d_max];
    let mut t = Vec::with_capacity(rows);
    let mut y = Vec::with_capacity(rows);
    let mut roles = Vec::with_capacity(rows);
    let mut put = |r: usize, xs: &[f64]| {
        for j in 0..d {
            x[r * d_max + j] = ((xs[j] - stats.x_mean[j]) / stats.x_std[j]) as f32;
        }
    };
    for (r, row) in obs.iter().enumerate() {
        put(r, &row.x);
        t.push(f32::from(row.t));
        y.push(stats.normalize_y(row.y) as f32);
        roles.push(ROLE_CONTEXT);
    }
    for (i, q) in queries.iter().enumerate() {
        put(n_ctx + i, q.x);
        t.push(f32::from(q.t));
        y.push(0.0);
        roles.push(ROLE_QUERY);
    }
    if x.iter().chain(&y).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite value in dataset".into()));
    }
    Ok(Encoded { n_ctx, n_query: queries.len(), d_max, x, t, y, roles, stats })
}
