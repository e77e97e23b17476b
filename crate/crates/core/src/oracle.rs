//! Monte-Carlo ground truth for conditional interventional distributions.
//!
//! Given an SCM and observed pre-treatment covariates `x`, the noise of every
//! covariate whose parents are all observed is recovered exactly by inverting
//! its additive mechanism. The remaining noise (hidden nodes, the natural
//! treatment, the outcome) is drawn from its prior, and covariates with a
//! latent parent contribute their Gaussian likelihood as an importance
//! weight. Each draw is then pushed through the intervened model.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::bar::BinGrid;
use crate::prior::standard_normal;
use crate::scm::{NodeRole, Scm, Structural};

/// Weighted sample from `p(y | do(t), x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CidSample {
    draws: Vec<f64>,
    weights: Vec<f64>,
}

impl CidSample {
    pub fn new(draws: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if draws.is_empty() || draws.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: draws.len(), got: weights.len() });
        }
        if draws.iter().any(|d| !d.is_finite()) {
            return Err(Error::Invalid("non-finite oracle draw".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || !(total > 0.0) || !total.is_finite() {
            return Err(Error::Invalid("oracle weights must be nonnegative with positive mass".into()));
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(CidSample { draws, weights })
    }

    pub fn uniform(draws: Vec<f64>) -> Result<Self> {
        let n = draws.len();
        CidSample::new(draws, vec![1.0; n])
    }

    pub fn draws(&self) -> &[f64] {
        &self.draws
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Weighted mean, computed relative to the first draw so that a constant
    /// sample returns that constant exactly.
    pub fn mean(&self) -> f64 {
        let y0 = self.draws[0];
        y0 + self.draws.iter().zip(&self.weights).map(|(y, w)| w * (y - y0)).sum::<f64>()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.draws.iter().zip(&self.weights).map(|(y, w)| w * (y - m) * (y - m)).sum()
    }

    /// Kish effective sample size.
    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Monte-Carlo standard error of [`mean`](Self::mean).
    pub fn std_error(&self) -> f64 {
        libm::sqrt(self.variance() / self.ess())
    }

    /// Smallest draw whose cumulative weight reaches `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let mut idx: Vec<usize> = (0..self.draws.len()).collect();
        idx.sort_by(|&a, &b| self.draws[a].total_cmp(&self.draws[b]));
        let mut acc = 0.0;
        for &i in &idx {
            acc += self.weights[i];
            if acc >= q - 1e-12 {
                return self.draws[i];
            }
        }
        self.draws[idx[idx.len() - 1]]
    }

    /// Weighted draws in ascending order with cumulative weights, for repeated quantile queries.
    pub fn sorted(&self) -> SortedSample {
        let mut pairs: Vec<(f64, f64)> = self.draws.iter().copied().zip(self.weights.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        let cum = pairs
            .iter()
            .map(|p| {
                acc += p.1;
                acc
            })
            .collect();
        SortedSample { values: pairs.into_iter().map(|p| p.0).collect(), cum }
    }
}

pub struct SortedSample {
    values: Vec<f64>,
    cum: Vec<f64>,
}

impl SortedSample {
    pub fn quantile(&self, q: f64) -> f64 {
        let i = self.cum.partition_point(|&c| c < q - 1e-12);
        self.values[i.min(self.values.len() - 1)]
    }
}

fn check_covariates(scm: &Scm, x_pt: &[f64]) -> Result<()> {
    if x_pt.len() != scm.n_covariates() {
        return Err(Error::DimensionMismatch { expected: scm.n_covariates(), got: x_pt.len() });
    }
    Ok(())
}

/// Exact standardized noise of covariates whose parents are all observed.
///
/// Entry `k` is `Some(u_k)` for such a covariate (`x_k = σ·u_k` for roots,
/// `x_k = γ(wᵀ·parents) + σ·u_k` otherwise; `u_k = 0` when `σ = 0`) and `None`
/// for every other node.
pub fn abduct_observed_noise(scm: &Scm, x_pt: &[f64]) -> Result<Vec<Option<f64>>> {
    check_covariates(scm, x_pt)?;
    let values = node_values(scm, x_pt);
    let mut out = vec![None; scm.node_count()];
    for k in scm.covariates() {
        let parents = scm.dag().parents(k);
        if parents.iter().all(|&p| scm.role(p) == NodeRole::Covariate) {
            out[k] = Some(residual(scm, k, &values).0);
        }
    }
    Ok(out)
}

/// Covariate values scattered into a full node vector (other entries zero).
fn node_values(scm: &Scm, x_pt: &[f64]) -> Vec<f64> {
    let mut values = vec![0.0; scm.node_count()];
    for (&k, &x) in scm.covariates().iter().zip(x_pt) {
        values[k] = x;
    }
    values
}

/// `(u, log-density)` of node `k` at `values[k]` given its parents' entries in `values`.
///
/// With `σ = 0` the density is a point mass: log-density 0 on the mechanism
/// and `-inf` off it.
fn residual(scm: &Scm, k: usize, values: &[f64]) -> (f64, f64) {
    let x = values[k];
    let (signal, sigma) = match scm.structural(k) {
        Structural::Exogenous { std } => (0.0, *std),
        Structural::Additive(m) => {
            let pre: f64 = m.weights.iter().zip(scm.dag().parents(k)).map(|(w, &p)| w * values[p]).sum();
            (m.nonlinearity.apply(pre), m.noise_std)
        }
        Structural::Constant(c) => (*c, 0.0),
    };
    let r = x - signal;
    if sigma > 0.0 {
        let u = r / sigma;
        (u, -0.5 * u * u - libm::log(sigma))
    } else if r.abs() <= 1e-9 * x.abs().max(1.0) {
        (0.0, 0.0)
    } else {
        (0.0, f64::NEG_INFINITY)
    }
}

/// Per-draw posterior over latent noise, reusable across treatment arms.
struct Posterior<'a> {
    scm: &'a Scm,
    x_nodes: Vec<f64>,
    fixed_u: Vec<Option<f64>>,
    is_cov: Vec<bool>,
    downstream_of_t: Vec<bool>,
}

impl<'a> Posterior<'a> {
    fn new(scm: &'a Scm, x_pt: &[f64]) -> Result<Self> {
        let fixed_u = abduct_observed_noise(scm, x_pt)?;
        let k = scm.node_count();
        let is_cov = (0..k).map(|n| scm.role(n) == NodeRole::Covariate).collect();
        let downstream_of_t =
            (0..k).map(|n| n != scm.treatment() && scm.dag().is_descendant(scm.treatment(), n)).collect();
        Ok(Posterior { scm, x_nodes: node_values(scm, x_pt), fixed_u, is_cov, downstream_of_t })
    }

    /// Fills `u` with one posterior proposal and returns its log importance weight.
    fn propose<R: Rng + ?Sized>(&self, rng: &mut R, u: &mut [f64], world: &mut [f64]) -> f64 {
        let mut log_w = 0.0;
        for &k in self.scm.dag().topo_order() {
            if self.is_cov[k] {
                world[k] = self.x_nodes[k];
                u[k] = match self.fixed_u[k] {
                    Some(a) => a,
                    None => {
                        let (a, ll) = residual(self.scm, k, world);
                        log_w += ll;
                        a
                    }
                };
            } else {
                u[k] = standard_normal(rng);
                world[k] = self.scm.node_value(k, world, u[k]);
            }
        }
        log_w
    }

    /// Outcome of the intervened model under noise `u`. Covariates that are
    /// not downstream of the treatment keep their observed values.
    fn outcome(&self, u: &[f64], t_value: f64, world: &mut [f64]) -> f64 {
        let t = self.scm.treatment();
        for &k in self.scm.dag().topo_order() {
            world[k] = if k == t {
                t_value
            } else if self.is_cov[k] && !self.downstream_of_t[k] {
                self.x_nodes[k]
            } else {
                self.scm.node_value(k, world, u[k])
            };
        }
        world[self.scm.outcome()]
    }

    /// `n_mc` draws of the outcome under each listed arm, with shared weights.
    fn run<R: Rng + ?Sized>(&self, arms: &[f64], n_mc: usize, rng: &mut R) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        if n_mc == 0 {
            return Err(Error::Invalid("n_mc must be >= 1".into()));
        }
        let k = self.scm.node_count();
        let (mut u, mut world) = (vec![0.0; k], vec![0.0; k]);
        let mut draws = vec![Vec::with_capacity(n_mc); arms.len()];
        let mut log_w = Vec::with_capacity(n_mc);
        for _ in 0..n_mc {
            log_w.push(self.propose(rng, &mut u, &mut world));
            for (a, &t) in arms.iter().enumerate() {
                draws[a].push(self.outcome(&u, t, &mut world));
            }
        }
        let weights = normalize_log_weights(&log_w, n_mc)?;
        Ok((draws, weights))
    }
}

fn normalize_log_weights(log_w: &[f64], n_mc: usize) -> Result<Vec<f64>> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::DegenerateWeights { ess: 0.0 });
    }
    let raw: Vec<f64> = log_w.iter().map(|l| libm::exp(l - max)).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    if n_mc >= 2 && ess < 2.0 {
        return Err(Error::DegenerateWeights { ess });
    }
    Ok(weights)
}

/// Weighted sample of `y` under `do(t = t_value)` given covariates `x_pt`.
pub fn cid_oracle<R: Rng + ?Sized>(
    scm: &Scm,
    t_value: u8,
    x_pt: &[f64],
    n_mc: usize,
    rng: &mut R,
) -> Result<CidSample> {
    let post = Posterior::new(scm, x_pt)?;
    let (mut draws, weights) = post.run(&[f64::from(t_value.min(1))], n_mc, rng)?;
    Ok(CidSample { draws: draws.remove(0), weights })
}

/// Both arms `(do(0), do(1))` from one set of noise draws and weights.
pub fn paired_cid_oracle<R: Rng + ?Sized>(
    scm: &Scm,
    x_pt: &[f64],
    n_mc: usize,
    rng: &mut R,
) -> Result<(CidSample, CidSample)> {
    let post = Posterior::new(scm, x_pt)?;
    let (mut draws, weights) = post.run(&[0.0, 1.0], n_mc, rng)?;
    let d1 = draws.pop().expect("two arms");
    let d0 = draws.pop().expect("two arms");
    Ok((CidSample { draws: d0, weights: weights.clone() }, CidSample { draws: d1, weights }))
}

/// `E[y | do(1), x] − E[y | do(0), x]` with common random numbers across arms.
pub fn cate_oracle<R: Rng + ?Sized>(scm: &Scm, x_pt: &[f64], n_mc: usize, rng: &mut R) -> Result<f64> {
    let (s0, s1) = paired_cid_oracle(scm, x_pt, n_mc, rng)?;
    Ok(s1.mean() - s0.mean())
}

/// Histogram entropy (nats) of the weighted sample on `grid`:
/// `Σ P_b (log w_b − log P_b)`, with out-of-range draws counted in the edge bins.
pub fn oracle_entropy(sample: &CidSample, grid: &BinGrid) -> f64 {
    let mut mass = vec![0.0; grid.n_bins()];
    for (&y, &w) in sample.draws.iter().zip(&sample.weights) {
        mass[grid.locate(y)] += w;
    }
    mass.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(b, &p)| p * (libm::log(grid.width(b)) - libm::log(p))).sum()
}
