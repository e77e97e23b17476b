//! The in-context transformer and its bar-distribution output head.
//!
//! Each dataset row becomes one token. Context rows see every context row;
//! query rows see the context and themselves, so predictions for different
//! queries never interact. There are no positional encodings, which makes the
//! output invariant to the order of context rows.

pub mod bar;
pub mod encode;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::prior::{DatasetPair, ObsRow, Query};
use bar::{BarDistribution, BinGrid};
use encode::{encode_rows, Encoded, QueryRow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_max: usize,
    pub n_max: usize,
    pub n_bins: usize,
    pub mlp_ratio: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { embed_dim: 128, n_layers: 4, n_heads: 4, d_max: 16, n_max: 512, n_bins: 64, mlp_ratio: 4 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.embed_dim == 0 || self.n_heads == 0 || !self.embed_dim.is_multiple_of(self.n_heads) {
            return bad(format!(
                "embed_dim {} must be a positive multiple of n_heads {}",
                self.embed_dim, self.n_heads
            ));
        }
        if self.n_bins < 3 {
            return bad(format!("n_bins {} must be >= 3", self.n_bins));
        }
        if self.d_max == 0 || self.n_max < 2 || self.mlp_ratio == 0 {
            return bad("d_max, n_max and mlp_ratio must be positive (n_max >= 2)".into());
        }
        Ok(())
    }

    /// Parameter names and shapes in store order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (e, h) = (self.embed_dim, self.embed_dim * self.mlp_ratio);
        let mut out = vec![
            ("enc.x".into(), vec![self.d_max, e]),
            ("enc.bias".into(), vec![1, e]),
            ("enc.treatment".into(), vec![1, e]),
            ("enc.y".into(), vec![1, e]),
            ("enc.role".into(), vec![2, e]),
        ];
        for l in 0..self.n_layers {
            let p = |s: &str| format!("block{l}.{s}");
            out.extend([
                (p("ln1.g"), vec![1, e]),
                (p("ln1.b"), vec![1, e]),
                (p("attn.wq"), vec![e, e]),
                (p("attn.bq"), vec![1, e]),
                (p("attn.wk"), vec![e, e]),
                (p("attn.bk"), vec![1, e]),
                (p("attn.wv"), vec![e, e]),
                (p("attn.bv"), vec![1, e]),
                (p("attn.wo"), vec![e, e]),
                (p("attn.bo"), vec![1, e]),
                (p("ln2.g"), vec![1, e]),
                (p("ln2.b"), vec![1, e]),
                (p("mlp.w1"), vec![e, h]),
                (p("mlp.b1"), vec![1, h]),
                (p("mlp.w2"), vec![h, e]),
                (p("mlp.b2"), vec![1, e]),
            ]);
        }
        out.extend([
            ("ln_f.g".into(), vec![1, e]),
            ("ln_f.b".into(), vec![1, e]),
            ("head.w".into(), vec![e, self.n_bins]),
            ("head.b".into(), vec![1, self.n_bins]),
        ]);
        out
    }
}

const ENC: usize = 5;
const PER_LAYER: usize = 16;

/// Transformer weights plus the bin grid of its output head (in normalized outcome units).
#[derive(Clone, Debug, PartialEq)]
pub struct PfnModel {
    config: ModelConfig,
    grid: BinGrid,
    params: ParamStore,
}

impl PfnModel {
    /// Fresh model: random transformer weights, zero output head.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, grid: BinGrid, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if grid.n_bins() != config.n_bins {
            return Err(Error::DimensionMismatch { expected: config.n_bins, got: grid.n_bins() });
        }
        let residual_scale = 1.0 / libm::sqrtf(2.0 * config.n_layers.max(1) as f32);
        let mut params = ParamStore::new();
        for (name, shape) in config.param_shapes() {
            let leaf = name.rsplit('.').next().unwrap_or("");
            let t = if name.starts_with("head.") {
                Tensor::zeros(&shape)
            } else if leaf == "g" {
                Tensor::full(&shape, 1.0)
            } else if shape[0] == 1 && !name.starts_with("enc.") {
                Tensor::zeros(&shape)
            } else {
                let mut std = if name.starts_with("enc.") { 0.5 } else { 1.0 / libm::sqrtf(shape[0] as f32) };
                if leaf == "wo" || leaf == "w2" {
                    std *= residual_scale;
                }
                Tensor::randn(&shape, std, rng)
            };
            params.add(&name, t);
        }
        Ok(PfnModel { config, grid, params })
    }

    /// Reassembles a model from stored parts, checking names and shapes.
    pub fn from_parts(config: ModelConfig, grid: BinGrid, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        if expected.len() != params.len() || grid.n_bins() != config.n_bins {
            return Err(Error::InvalidConfig("parameter set does not match the model configuration".into()));
        }
        for (i, (name, shape)) in expected.iter().enumerate() {
            if &params.names()[i] != name || params.get(i).shape() != &shape[..] {
                return Err(Error::InvalidConfig(format!("parameter {i} should be {name} {shape:?}")));
            }
        }
        Ok(PfnModel { config, grid, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn grid(&self) -> &BinGrid {
        &self.grid
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.n_scalars()
    }

    /// Zeroes the treatment-indicator embedding; both arms then coincide.
    pub fn ablate_treatment_indicator(&mut self) {
        let i = self.params.index_of("enc.treatment").expect("encoder parameter");
        self.params.get_mut(i).data_mut().fill(0.0);
    }

    pub fn encode(&self, obs: &[ObsRow], queries: &[QueryRow<'_>]) -> Result<Encoded> {
        encode_rows(obs, queries, self.config.d_max, self.config.n_max)
    }

    /// Records the forward pass on `g`; `p` are the bound parameters. Logits
    /// cover the query rows only and are `None` when there are no queries.
    pub fn forward(&self, g: &mut Graph, p: &[Var], enc: &Encoded) -> Result<Option<Var>> {
        let c = &self.config;
        let n = enc.rows();
        let x = g.leaf(Tensor::matrix(n, c.d_max, enc.x.clone())?);
        let t = g.leaf(Tensor::matrix(n, 1, enc.t.clone())?);
        let y = g.leaf(Tensor::matrix(n, 1, enc.y.clone())?);

        let mut h = g.matmul(x, p[0])?;
        h = g.add(h, p[1])?;
        let tt = g.matmul(t, p[2])?;
        h = g.add(h, tt)?;
        let yy = g.matmul(y, p[3])?;
        h = g.add(h, yy)?;
        let role = g.embedding(p[4], &enc.roles)?;
        h = g.add(h, role)?;

        for l in 0..c.n_layers {
            let w = &p[ENC + l * PER_LAYER..ENC + (l + 1) * PER_LAYER];
            let a = g.layer_norm(h, w[0], w[1])?;
            let q = linear(g, a, w[2], w[3])?;
            let k = linear(g, a, w[4], w[5])?;
            let v = linear(g, a, w[6], w[7])?;
            let att = g.icl_attention(q, k, v, enc.n_ctx, c.n_heads)?;
            let o = linear(g, att, w[8], w[9])?;
            h = g.add(h, o)?;
            let b = g.layer_norm(h, w[10], w[11])?;
            let m = linear(g, b, w[12], w[13])?;
            let m = g.gelu(m);
            let m = linear(g, m, w[14], w[15])?;
            h = g.add(h, m)?;
        }
        if enc.n_query == 0 {
            return Ok(None);
        }
        let tail = ENC + c.n_layers * PER_LAYER;
        let qrows = g.slice_rows(h, enc.n_ctx, n)?;
        let f = g.layer_norm(qrows, p[tail], p[tail + 1])?;
        Ok(Some(linear(g, f, p[tail + 2], p[tail + 3])?))
    }

    fn query_logits(&self, obs: &[ObsRow], queries: &[QueryRow<'_>]) -> Result<(Vec<Vec<f64>>, Encoded)> {
        let enc = self.encode(obs, queries)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let Some(logits) = self.forward(&mut g, &p, &enc)? else {
            return Ok((Vec::new(), enc));
        };
        let v = g.value(logits);
        let rows = (0..v.rows()).map(|r| v.row(r).iter().map(|&l| f64::from(l)).collect()).collect();
        Ok((rows, enc))
    }

    /// Predictive distributions (outcome units) for a batch of queries.
    ///
    /// Query rows only see the context and themselves, so batches larger than
    /// `n_max` are split into chunks without changing any prediction.
    pub fn predict(&self, obs: &[ObsRow], queries: &[QueryRow<'_>]) -> Result<Vec<BarDistribution>> {
        let room = self.config.n_max.saturating_sub(obs.len());
        if queries.is_empty() || room == 0 {
            let (logits, enc) = self.query_logits(obs, queries)?;
            let grid = self.grid.affine(enc.stats.y_std, enc.stats.y_mean);
            return logits.iter().map(|l| BarDistribution::from_logits(grid.clone(), l)).collect();
        }
        let mut out = Vec::with_capacity(queries.len());
        for chunk in queries.chunks(room) {
            let (logits, enc) = self.query_logits(obs, chunk)?;
            let grid = self.grid.affine(enc.stats.y_std, enc.stats.y_mean);
            for l in &logits {
                out.push(BarDistribution::from_logits(grid.clone(), l)?);
            }
        }
        Ok(out)
    }

    pub fn predict_queries(&self, obs: &[ObsRow], queries: &[Query]) -> Result<Vec<BarDistribution>> {
        let rows: Vec<QueryRow<'_>> = queries.iter().map(|q| QueryRow { t: q.t, x: &q.x }).collect();
        self.predict(obs, &rows)
    }

    /// `q(y | do(t), x, D)` for one query.
    pub fn predict_cid(&self, obs: &[ObsRow], t_in: u8, x_pt: &[f64]) -> Result<BarDistribution> {
        let mut out = self.predict(obs, &[QueryRow { t: t_in, x: x_pt }])?;
        Ok(out.remove(0))
    }

    /// `E[y | do(1), x] − E[y | do(0), x]` for each covariate vector, both arms in one pass.
    pub fn predict_cate_batch(&self, obs: &[ObsRow], xs: &[&[f64]]) -> Result<Vec<f64>> {
        let mut rows = Vec::with_capacity(2 * xs.len());
        for t in [0u8, 1] {
            rows.extend(xs.iter().map(|&x| QueryRow { t, x }));
        }
        let d = self.predict(obs, &rows)?;
        Ok((0..xs.len()).map(|i| d[xs.len() + i].mean() - d[i].mean()).collect())
    }

    pub fn predict_cate(&self, obs: &[ObsRow], x_pt: &[f64]) -> Result<f64> {
        Ok(self.predict_cate_batch(obs, &[x_pt])?[0])
    }

    /// Summed NLL (normalized outcome units) of the pair's targets and the
    /// parameter gradients of that sum. Returns the number of scored queries.
    pub fn nll_and_grads(&self, pair: &DatasetPair) -> Result<PairLoss> {
        let targets = pair.targets.as_ref().ok_or_else(|| Error::Invalid("dataset pair has no targets".into()))?;
        let rows: Vec<QueryRow<'_>> = pair.queries.iter().map(|q| QueryRow { t: q.t, x: &q.x }).collect();
        let enc = self.encode(&pair.obs, &rows)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let Some(logits) = self.forward(&mut g, &p, &enc)? else {
            return Ok(PairLoss { nll_sum: 0.0, log_y_std: libm::log(enc.stats.y_std), n_queries: 0, grads: None });
        };
        let bins: Vec<usize> = targets.iter().map(|&y| self.grid.locate(enc.stats.normalize_y(y))).collect();
        let width_term: f64 = bins.iter().map(|&b| libm::log(self.grid.width(b))).sum();
        let lp = g.log_softmax(logits);
        let picked = g.gather(lp, &bins)?;
        let total = g.sum(picked);
        let loss = g.scale(total, -1.0);
        let nll_sum = f64::from(g.value(loss).data()[0]) + width_term;
        if !nll_sum.is_finite() {
            return Err(Error::NonFiniteLoss { step: 0 });
        }
        g.backward(loss)?;
        Ok(PairLoss {
            nll_sum,
            log_y_std: libm::log(enc.stats.y_std),
            n_queries: bins.len(),
            grads: Some(self.params.grads(&g, &p)),
        })
    }
}

/// Loss of one dataset pair.
pub struct PairLoss {
    /// Σ NLL over the queries in normalized outcome units.
    pub nll_sum: f64,
    /// Add `n_queries · log_y_std` to `nll_sum` for outcome units.
    pub log_y_std: f64,
    pub n_queries: usize,
    pub grads: Option<Vec<Vec<f32>>>,
}

fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let h = g.matmul(x, w)?;
    g.add(h, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::{sample_pair, PriorConfig};
    use crate::rng::{stream, Domain};

    fn small() -> ModelConfig {
        ModelConfig { embed_dim: 16, n_layers: 2, n_heads: 2, d_max: 4, n_max: 128, n_bins: 10, mlp_ratio: 2 }
    }

    fn model(seed: u64) -> PfnModel {
        let grid = BinGrid::uniform(-3.0, 3.0, 10).unwrap();
        let mut m = PfnModel::new(small(), grid, &mut stream(seed, Domain::Init, 0)).unwrap();
        // give the head weights so the tests exercise non-uniform outputs
        let hw = m.params.index_of("head.w").unwrap();
        let t = Tensor::randn(&[16, 10], 0.5, &mut stream(seed, Domain::Init, 1));
        *m.params.get_mut(hw) = t;
        m
    }

    fn pair(seed: u64) -> DatasetPair {
        let cfg = PriorConfig { k_min: 3, k_max: 5, m_min: 10, m_max: 40, ..PriorConfig::default() };
        let mut rng = stream(seed, Domain::Prior, 0);
        loop {
            let p = sample_pair(&cfg, &mut rng);
            if p.n_features > 0 && p.m_in() >= 3 {
                return p;
            }
        }
    }

    #[test]
    fn default_size_is_desk_scale() {
        let c = ModelConfig::default();
        let n: usize = c.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        assert!((700_000..1_000_000).contains(&n), "{n}");
    }

    #[test]
    fn zero_head_is_uniform() {
        let grid = BinGrid::uniform(-3.0, 3.0, 10).unwrap();
        let m = PfnModel::new(small(), grid, &mut stream(1, Domain::Init, 0)).unwrap();
        let p = pair(1);
        for d in m.predict_queries(&p.obs, &p.queries).unwrap() {
            for pr in d.probs() {
                assert!((pr - 0.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicate_queries_agree_and_queries_are_isolated() {
        let m = model(2);
        let p = pair(2);
        let q = &p.queries[0];
        let row = QueryRow { t: q.t, x: &q.x };
        let two = m.predict(&p.obs, &[row, row]).unwrap();
        assert_eq!(two[0], two[1]);
        let all = m.predict_queries(&p.obs, &p.queries).unwrap();
        for (a, b) in two[0].log_probs().iter().zip(all[0].log_probs()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn oversized_query_batches_are_chunked() {
        let m = model(6);
        let p = pair(6);
        let rows: Vec<QueryRow<'_>> = p.queries.iter().map(|q| QueryRow { t: q.t, x: &q.x }).collect();
        let narrow = PfnModel::from_parts(
            ModelConfig { n_max: p.obs.len() + 2, ..small() },
            m.grid().clone(),
            m.params().clone(),
        )
        .unwrap();
        let a = m.predict(&p.obs, &rows).unwrap();
        let b = narrow.predict(&p.obs, &rows).unwrap();
        assert_eq!(a.len(), b.len());
        for (da, db) in a.iter().zip(&b) {
            for (x, y) in da.log_probs().iter().zip(db.log_probs()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn context_permutation_invariance() {
        let m = model(3);
        let p = pair(3);
        let mut rev = p.obs.clone();
        rev.reverse();
        let a = m.predict_queries(&p.obs, &p.queries).unwrap();
        let b = m.predict_queries(&rev, &p.queries).unwrap();
        let targets = p.targets.as_ref().unwrap();
        for ((da, db), &y) in a.iter().zip(&b).zip(targets) {
            assert!((da.nll(y) - db.nll(y)).abs() < 1e-4);
        }
    }

    #[test]
    fn ablated_indicator_gives_zero_cate() {
        let mut m = model(4);
        let p = pair(4);
        m.ablate_treatment_indicator();
        let xs: Vec<&[f64]> = p.queries.iter().map(|q| &q.x[..]).collect();
        assert!(m.predict_cate_batch(&p.obs, &xs).unwrap().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn cate_is_antisymmetric_in_the_arms() {
        let m = model(5);
        let p = pair(5);
        let x = &p.queries[0].x;
        let d0 = m.predict_cid(&p.obs, 0, x).unwrap();
        let d1 = m.predict_cid(&p.obs, 1, x).unwrap();
        let tau = m.predict_cate(&p.obs, x).unwrap();
        assert!((tau - (d1.mean() - d0.mean())).abs() < 1e-9);
        assert!(((d0.mean() - d1.mean()) + tau).abs() < 1e-9);
    }

    #[test]
    fn zero_head_nll_is_closed_form() {
        let grid = BinGrid::uniform(-3.0, 3.0, 10).unwrap();
        let m = PfnModel::new(small(), grid.clone(), &mut stream(6, Domain::Init, 0)).unwrap();
        let p = pair(6);
        let loss = m.nll_and_grads(&p).unwrap();
        // every bin has width 0.6 and probability 0.1
        let expected = loss.n_queries as f64 * (libm::log(10.0) + libm::log(0.6));
        assert!((loss.nll_sum - expected).abs() < 1e-4);
    }

    #[test]
    fn from_parts_checks_layout() {
        let m = model(7);
        let again = PfnModel::from_parts(m.config().clone(), m.grid().clone(), m.params().clone()).unwrap();
        assert_eq!(again, m);
        let mut other = small();
        other.n_layers = 1;
        assert!(PfnModel::from_parts(other, m.grid().clone(), m.params().clone()).is_err());
    }
}
