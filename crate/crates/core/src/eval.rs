//! Scoring: normalized MSE, interval coverage, bias terms, baselines and
//! bootstrap aggregation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::bar::{quantile_sorted, BarDistribution};
use crate::model::PfnModel;
use crate::oracle::{cate_oracle, cid_oracle, CidSample};
use crate::prior::{DatasetPair, ObsRow};
use crate::rng::{stream, Domain};

/// `(1/n) Σ ((y_i − ŷ_i) / (max y − min y))²`.
pub fn nmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch { expected: y.len(), got: yhat.len() });
    }
    if y.len() < 2 {
        return Err(Error::Invalid("nmse needs at least two values".into()));
    }
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = y.iter().copied().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if !(range > 0.0) {
        return Err(Error::DegenerateRange);
    }
    Ok(y.iter().zip(yhat).map(|(a, b)| libm::pow((a - b) / range, 2.0)).sum::<f64>() / y.len() as f64)
}

/// A predictive distribution that can be summarized by its mean and quantiles.
pub trait Predictive {
    fn mean(&self) -> f64;
    fn quantile(&self, q: f64) -> f64;
}

impl Predictive for BarDistribution {
    fn mean(&self) -> f64 {
        BarDistribution::mean(self)
    }

    fn quantile(&self, q: f64) -> f64 {
        BarDistribution::quantile(self, q)
    }
}

impl Predictive for CidSample {
    fn mean(&self) -> f64 {
        CidSample::mean(self)
    }

    fn quantile(&self, q: f64) -> f64 {
        CidSample::quantile(self, q)
    }
}

pub const DEFAULT_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Fraction of targets inside each central interval `[q_{(1−α)/2}, q_{(1+α)/2}]`.
pub fn picp_curve<P: Predictive>(dists: &[P], targets: &[f64], levels: &[f64]) -> Result<Vec<f64>> {
    if dists.len() != targets.len() {
        return Err(Error::DimensionMismatch { expected: dists.len(), got: targets.len() });
    }
    if dists.is_empty() {
        return Ok(vec![0.0; levels.len()]);
    }
    // nested intervals: levels are scored in ascending order so coverage is monotone
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by(|&a, &b| levels[a].total_cmp(&levels[b]));
    let mut hits = vec![0usize; levels.len()];
    for (d, &y) in dists.iter().zip(targets) {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &l in &order {
            let a = levels[l].clamp(0.0, 1.0);
            lo = lo.min(d.quantile((1.0 - a) / 2.0));
            hi = hi.max(d.quantile((1.0 + a) / 2.0));
            if lo <= y && y <= hi {
                hits[l] += 1;
            }
        }
    }
    Ok(hits.iter().map(|&h| h as f64 / targets.len() as f64).collect())
}

/// Median over datasets of the per-arm mean residual `ŷ − y`.
///
/// Each dataset lists `(arm, residual)` pairs; datasets without rows for an
/// arm do not enter that arm's median. An arm with no data yields NaN.
pub fn bias_decomposition(datasets: &[Vec<(u8, f64)>]) -> (f64, f64) {
    let mut per_arm: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for rows in datasets {
        for (arm, bucket) in per_arm.iter_mut().enumerate() {
            let r: Vec<f64> = rows.iter().filter(|(t, _)| usize::from(*t) == arm).map(|&(_, v)| v).collect();
            if !r.is_empty() {
                bucket.push(r.iter().sum::<f64>() / r.len() as f64);
            }
        }
    }
    (median(&per_arm[0]), median(&per_arm[1]))
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// k-nearest-neighbour regressor over context rows in `(t, z-scored x)` space.
pub struct Knn<'a> {
    obs: &'a [ObsRow],
    mean: Vec<f64>,
    std: Vec<f64>,
    k: usize,
}

impl<'a> Knn<'a> {
    pub fn fit(obs: &'a [ObsRow], k: usize) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::EmptyContext);
        }
        if k == 0 || k > obs.len() {
            return Err(Error::Invalid(format!("k = {k} must lie in 1..={}", obs.len())));
        }
        let d = obs[0].x.len();
        let n = obs.len() as f64;
        let mut mean = vec![0.0; d];
        let mut std = vec![1.0; d];
        for j in 0..d {
            let m = obs.iter().map(|r| r.x[j]).sum::<f64>() / n;
            let s = libm::sqrt(obs.iter().map(|r| libm::pow(r.x[j] - m, 2.0)).sum::<f64>() / n);
            mean[j] = m;
            if s > 0.0 {
                std[j] = s;
            }
        }
        Ok(Knn { obs, mean, std, k })
    }

    /// Outcomes of the `k` nearest context rows (ties broken by row order).
    pub fn neighbours(&self, t: u8, x: &[f64]) -> Vec<f64> {
        let mut dist: Vec<(f64, usize)> = self
            .obs
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let dt = f64::from(r.t) - f64::from(t);
                let dx: f64 = (0..x.len()).map(|j| libm::pow((r.x[j] - x[j]) / self.std[j], 2.0)).sum();
                (dt * dt + dx, i)
            })
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        dist[..self.k].iter().map(|&(_, i)| self.obs[i].y).collect()
    }

    pub fn predict(&self, t: u8, x: &[f64]) -> f64 {
        let nb = self.neighbours(t, x);
        nb.iter().sum::<f64>() / nb.len() as f64
    }

    /// Equal-weight sample of the neighbours' outcomes.
    pub fn predictive(&self, t: u8, x: &[f64]) -> CidSample {
        CidSample::uniform(self.neighbours(t, x)).expect("k >= 1 finite outcomes")
    }

    pub fn feature_means(&self) -> &[f64] {
        &self.mean
    }
}

pub fn knn_regressor(obs: &[ObsRow], t: u8, x: &[f64], k: usize) -> Result<f64> {
    Ok(Knn::fit(obs, k)?.predict(t, x))
}

/// S-learner CATE: the regressor's prediction at `t = 1` minus `t = 0`.
pub fn s_learner(regressor: impl Fn(u8, &[f64]) -> f64, x: &[f64]) -> f64 {
    regressor(1, x) - regressor(0, x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dopfn,
    Dontpfn,
    Knn,
    SLearnerKnn,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Dopfn, Method::Dontpfn, Method::Knn, Method::SLearnerKnn, Method::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dopfn => "dopfn",
            Method::Dontpfn => "dontpfn",
            Method::Knn => "knn",
            Method::SLearnerKnn => "s_learner_knn",
            Method::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL.iter().copied().find(|m| m.name() == s).ok_or(Error::UnknownId(s))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub levels: Vec<f64>,
    /// Monte-Carlo draws for oracle distributions and true CATEs.
    pub n_mc: usize,
    pub knn_k: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { levels: DEFAULT_LEVELS.to_vec(), n_mc: 2000, knn_k: 10, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub case_id: String,
    pub dataset_idx: usize,
    pub method: Method,
    pub nmse_cid: Option<f64>,
    pub nmse_cate: Option<f64>,
    pub picp: Vec<f64>,
    pub mean_entropy: Option<f64>,
    pub bias_do0: Option<f64>,
    pub bias_do1: Option<f64>,
}

/// Oracle CATE of every query of a pair (requires the generating SCM).
pub fn true_cates(pair: &DatasetPair, opts: &EvalOptions, dataset_idx: usize) -> Result<Option<Vec<f64>>> {
    let Some(scm) = &pair.scm else { return Ok(None) };
    let mut rng = stream(opts.seed, Domain::Eval, dataset_idx as u64);
    pair.queries.iter().map(|q| cate_oracle_retry(scm, &q.x, opts.n_mc, &mut rng)).collect::<Result<Vec<_>>>().map(Some)
}

fn cate_oracle_retry<R: Rng + ?Sized>(scm: &crate::scm::Scm, x: &[f64], n_mc: usize, rng: &mut R) -> Result<f64> {
    match cate_oracle(scm, x, n_mc, rng) {
        Err(Error::DegenerateWeights { .. }) => cate_oracle(scm, x, n_mc * 8, rng),
        other => other,
    }
}

fn cid_oracle_retry<R: Rng + ?Sized>(
    scm: &crate::scm::Scm,
    t: u8,
    x: &[f64],
    n_mc: usize,
    rng: &mut R,
) -> Result<CidSample> {
    match cid_oracle(scm, t, x, n_mc, rng) {
        Err(Error::DegenerateWeights { .. }) => cid_oracle(scm, t, x, n_mc * 8, rng),
        other => other,
    }
}

/// Point predictions, CATE predictions and per-query distributions of one method.
struct MethodOutput {
    means: Option<Vec<f64>>,
    cates: Option<Vec<f64>>,
    picp: Vec<f64>,
    mean_entropy: Option<f64>,
}

/// Scores one method on one dataset pair. `model` is required for the two
/// transformer methods; `truth` holds the oracle CATE per query when known.
pub fn evaluate_pair(
    method: Method,
    model: Option<&PfnModel>,
    pair: &DatasetPair,
    truth: Option<&[f64]>,
    case_id: &str,
    dataset_idx: usize,
    opts: &EvalOptions,
) -> Result<EvalRecord> {
    let out = run_method(method, model, pair, dataset_idx, opts)?;
    let targets = pair.targets.as_deref();
    let nmse_cid = match (&out.means, targets) {
        (Some(m), Some(y)) => nmse(y, m).ok(),
        _ => None,
    };
    let nmse_cate = match (&out.cates, truth) {
        (Some(c), Some(tau)) => nmse(tau, c).ok(),
        _ => None,
    };
    let (mut bias_do0, mut bias_do1) = (None, None);
    if let (Some(m), Some(y)) = (&out.means, targets) {
        let rows: Vec<(u8, f64)> = pair.queries.iter().zip(m.iter().zip(y)).map(|(q, (a, b))| (q.t, a - b)).collect();
        let (b0, b1) = bias_decomposition(&[rows]);
        bias_do0 = b0.is_finite().then_some(b0);
        bias_do1 = b1.is_finite().then_some(b1);
    }
    Ok(EvalRecord {
        case_id: case_id.to_string(),
        dataset_idx,
        method,
        nmse_cid,
        nmse_cate,
        picp: out.picp,
        mean_entropy: out.mean_entropy,
        bias_do0,
        bias_do1,
    })
}

fn run_method(
    method: Method,
    model: Option<&PfnModel>,
    pair: &DatasetPair,
    dataset_idx: usize,
    opts: &EvalOptions,
) -> Result<MethodOutput> {
    let targets = pair.targets.as_deref();
    let xs: Vec<&[f64]> = pair.queries.iter().map(|q| &q.x[..]).collect();
    let picp_of = |dists: &[_]| -> Result<Vec<f64>> {
        match targets {
            Some(y) => picp_curve::<CidSample>(dists, y, &opts.levels),
            None => Ok(Vec::new()),
        }
    };
    match method {
        Method::Dopfn | Method::Dontpfn => {
            let model = model.ok_or_else(|| Error::Invalid(format!("method {method} needs a model")))?;
            let dists = model.predict_queries(&pair.obs, &pair.queries)?;
            let means: Vec<f64> = dists.iter().map(BarDistribution::mean).collect();
            let picp = match targets {
                Some(y) => picp_curve(&dists, y, &opts.levels)?,
                None => Vec::new(),
            };
            let entropy = dists.iter().map(BarDistribution::entropy).sum::<f64>() / dists.len().max(1) as f64;
            let cates = model.predict_cate_batch(&pair.obs, &xs)?;
            Ok(MethodOutput { means: Some(means), cates: Some(cates), picp, mean_entropy: Some(entropy) })
        }
        Method::Knn => {
            let knn = Knn::fit(&pair.obs, opts.knn_k.min(pair.obs.len()).max(1))?;
            let dists: Vec<CidSample> = pair.queries.iter().map(|q| knn.predictive(q.t, &q.x)).collect();
            let means = dists.iter().map(CidSample::mean).collect();
            Ok(MethodOutput { means: Some(means), cates: None, picp: picp_of(&dists)?, mean_entropy: None })
        }
        Method::SLearnerKnn => {
            let knn = Knn::fit(&pair.obs, opts.knn_k.min(pair.obs.len()).max(1))?;
            let cates = xs.iter().map(|x| s_learner(|t, x| knn.predict(t, x), x)).collect();
            Ok(MethodOutput { means: None, cates: Some(cates), picp: Vec::new(), mean_entropy: None })
        }
        Method::Oracle => {
            let scm = pair.scm.as_ref().ok_or_else(|| Error::Invalid("oracle needs the generating SCM".into()))?;
            let mut rng = stream(opts.seed, Domain::Oracle, dataset_idx as u64);
            let dists = pair
                .queries
                .iter()
                .map(|q| cid_oracle_retry(scm, q.t, &q.x, opts.n_mc, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let means = dists.iter().map(CidSample::mean).collect();
            let mut rng = stream(opts.seed, Domain::Oracle, (1 << 40) | dataset_idx as u64);
            let cates =
                xs.iter().map(|x| cate_oracle_retry(scm, x, opts.n_mc, &mut rng)).collect::<Result<Vec<_>>>()?;
            Ok(MethodOutput { means: Some(means), cates: Some(cates), picp: picp_of(&dists)?, mean_entropy: None })
        }
    }
}

/// Percentile bootstrap interval (95%) of the median, resampling values.
pub fn bootstrap_median_ci<R: Rng + ?Sized>(values: &[f64], n_boot: usize, rng: &mut R) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len();
    let mut meds = Vec::with_capacity(n_boot);
    let mut buf = vec![0.0; n];
    for _ in 0..n_boot {
        for b in buf.iter_mut() {
            *b = values[rng.random_range(0..n)];
        }
        buf.sort_by(f64::total_cmp);
        meds.push(quantile_sorted(&buf, 0.5));
    }
    meds.sort_by(f64::total_cmp);
    (quantile_sorted(&meds, 0.025), quantile_sorted(&meds, 0.975))
}

/// Ranks (1 = lowest) with ties sharing the average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| libm::pow(a - mx, 2.0)).sum();
    let vy: f64 = ry.iter().map(|b| libm::pow(b - my, 2.0)).sum();
    cov / libm::sqrt(vx * vy)
}

/// Bucket index (`0..n_buckets`) of each value by its empirical quantile.
pub fn quantile_buckets(values: &[f64], n_buckets: usize) -> Vec<usize> {
    let ranks = average_ranks(values);
    let n = values.len() as f64;
    ranks.iter().map(|r| (((r - 1.0) / n * n_buckets as f64) as usize).min(n_buckets - 1)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub case_id: String,
    pub method: Method,
    pub metric: String,
    pub n: usize,
    pub median: f64,
    pub mean: f64,
    pub ci95: (f64, f64),
    pub mean_rank: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub levels: Vec<f64>,
    pub records: Vec<EvalRecord>,
    pub aggregate: Vec<AggregateRow>,
    pub flags: Vec<String>,
}

fn metric_value(r: &EvalRecord, metric: &str) -> Option<f64> {
    match metric {
        "nmse_cid" => r.nmse_cid,
        "nmse_cate" => r.nmse_cate,
        _ => None,
    }
}

/// Per (case, method, metric): median, mean, bootstrap CI95 of the median and
/// the mean rank among methods scored on the same datasets.
pub fn aggregate(records: &[EvalRecord], n_boot: usize, seed: u64) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    let mut cases: Vec<&str> = records.iter().map(|r| r.case_id.as_str()).collect();
    cases.sort_unstable();
    cases.dedup();
    for (ci, case) in cases.iter().enumerate() {
        for (mi, metric) in ["nmse_cid", "nmse_cate"].iter().enumerate() {
            // method → dataset → value
            let mut table: BTreeMap<Method, BTreeMap<usize, f64>> = BTreeMap::new();
            for r in records.iter().filter(|r| r.case_id == *case) {
                if let Some(v) = metric_value(r, metric).filter(|v| v.is_finite()) {
                    table.entry(r.method).or_default().insert(r.dataset_idx, v);
                }
            }
            let mut rank_sum: BTreeMap<Method, (f64, usize)> = BTreeMap::new();
            let datasets: alloc::collections::BTreeSet<usize> =
                table.values().flat_map(|m| m.keys().copied()).collect();
            for d in datasets {
                let present: Vec<(Method, f64)> =
                    table.iter().filter_map(|(m, vals)| vals.get(&d).map(|&v| (*m, v))).collect();
                let ranks = average_ranks(&present.iter().map(|p| p.1).collect::<Vec<_>>());
                for ((m, _), r) in present.iter().zip(ranks) {
                    let e = rank_sum.entry(*m).or_insert((0.0, 0));
                    e.0 += r;
                    e.1 += 1;
                }
            }
            for (method, vals) in &table {
                let v: Vec<f64> = vals.values().copied().collect();
                let mut rng =
                    stream(seed, Domain::Bootstrap, ((ci as u64) << 20) | ((mi as u64) << 8) | *method as u64);
                let (rs, rn) = rank_sum.get(method).copied().unwrap_or((0.0, 1));
                out.push(AggregateRow {
                    case_id: case.to_string(),
                    method: *method,
                    metric: metric.to_string(),
                    n: v.len(),
                    median: median(&v),
                    mean: v.iter().sum::<f64>() / v.len() as f64,
                    ci95: bootstrap_median_ci(&v, n_boot, &mut rng),
                    mean_rank: rs / rn as f64,
                });
            }
        }
    }
    out
}
