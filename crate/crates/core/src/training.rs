//! Prior fitting: stream fresh dataset pairs, minimize the predictive NLL of
//! their targets, update with Adam.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cases::CaseStudyId;
use crate::error::{Error, Result};
use crate::eval::{self, EvalOptions, Method};
use crate::hash::{pair_hash, Fingerprint};
use crate::model::bar::BinGrid;
use crate::model::encode::context_stats;
use crate::model::{ModelConfig, PairLoss, PfnModel};
use crate::numerics::{accumulate_grads, warmup_cosine, OptimizerState};
use crate::prior::{sample_observational_pair, sample_pair, DatasetPair, PriorConfig};
use crate::rng::{stream, Domain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Queries are interventional: `(t_in, x_pt)` with target `y_in`.
    Interventional,
    /// Queries are held-out observational rows with their observed outcome.
    Observational,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: u64,
    pub clip_norm: f64,
    pub prior: PriorConfig,
    pub objective: Objective,
    pub eval_every: u64,
    pub seed: u64,
    pub model: ModelConfig,
    /// Prior pairs used to fit the equal-mass bin grid.
    pub grid_pairs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 50_000,
            batch_size: 8,
            lr: 3e-4,
            warmup: 1000,
            clip_norm: 1.0,
            prior: PriorConfig { m_max: 512, ..PriorConfig::default() },
            objective: Objective::Interventional,
            eval_every: 1000,
            seed: 0,
            model: ModelConfig::default(),
            grid_pairs: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.steps == 0 {
            return bad("steps must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.clip_norm >= 0.0) {
            return bad("clip_norm must be >= 0");
        }
        if self.grid_pairs == 0 {
            return bad("grid_pairs must be >= 1");
        }
        self.prior.validate()?;
        self.model.validate()?;
        if self.prior.m_max > self.model.n_max {
            return bad("prior m_max exceeds the model's n_max");
        }
        Ok(())
    }

    /// Identity of the training distribution and architecture.
    pub fn hash(&self) -> String {
        let mut fp = Fingerprint::new();
        // Debug output lists every field in declaration order, with exact float digits
        fp.str(&alloc::format!("{self:?}"));
        fp.hex()
    }
}

/// Hash of the prior alone; a model evaluated on data from another prior is out of schema.
pub fn prior_hash(prior: &PriorConfig) -> String {
    let mut p = prior.clone();
    p.seed = 0;
    let mut fp = Fingerprint::new();
    fp.str(&alloc::format!("{p:?}"));
    fp.hex()
}

/// Equal-mass grid over context-normalized targets drawn from the prior.
pub fn fit_grid(
    prior: &PriorConfig,
    objective: Objective,
    n_bins: usize,
    n_pairs: usize,
    seed: u64,
) -> Result<BinGrid> {
    let mut values = Vec::new();
    for i in 0..n_pairs {
        let mut rng = stream(seed, Domain::Grid, i as u64);
        let pair = draw(prior, objective, &mut rng);
        let Some(targets) = &pair.targets else { continue };
        let stats = context_stats(&pair.obs, pair.n_features);
        values.extend(targets.iter().map(|&y| stats.normalize_y(y)));
    }
    BinGrid::equal_mass(&values, n_bins)
}

fn draw(prior: &PriorConfig, objective: Objective, rng: &mut crate::rng::Rng) -> DatasetPair {
    match objective {
        Objective::Interventional => sample_pair(prior, rng),
        Objective::Observational => sample_observational_pair(prior, rng),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    /// Mean NLL per query in normalized outcome units; `None` if the batch had no queries.
    pub loss: Option<f64>,
    pub grad_norm: Option<f64>,
    pub lr: f64,
    pub pairs_consumed: u64,
    pub queries: usize,
    /// The update was skipped because the gradient was not finite.
    pub skipped: bool,
}

/// Single-mutator training state. Batch generation and per-pair gradients are
/// pure functions of `(seed, step)`, so callers may compute them in parallel
/// and hand the results to [`Trainer::apply`] in index order.
pub struct Trainer {
    cfg: TrainConfig,
    model: PfnModel,
    opt: OptimizerState,
    step: u64,
    consumed: Vec<String>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = fit_grid(&cfg.prior, cfg.objective, cfg.model.n_bins, cfg.grid_pairs, cfg.seed)?;
        let model = PfnModel::new(cfg.model.clone(), grid, &mut stream(cfg.seed, Domain::Init, 0))?;
        Ok(Self::with_model(cfg, model))
    }

    pub fn with_model(cfg: TrainConfig, model: PfnModel) -> Self {
        let opt = OptimizerState::new(model.params(), cfg.lr, cfg.clip_norm);
        Trainer { cfg, model, opt, step: 0, consumed: Vec::new() }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &PfnModel {
        &self.model
    }

    pub fn into_model(self) -> PfnModel {
        self.model
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn finished(&self) -> bool {
        self.step >= self.cfg.steps
    }

    /// Content hashes of every pair consumed so far, in order.
    pub fn consumption_log(&self) -> &[String] {
        &self.consumed
    }

    /// The `idx`-th pair of the current step.
    pub fn batch_pair(&self, idx: usize) -> DatasetPair {
        let stream_index = self.step * self.cfg.batch_size as u64 + idx as u64;
        let mut rng = stream(self.cfg.seed, Domain::Prior, stream_index);
        draw(&self.cfg.prior, self.cfg.objective, &mut rng)
    }

    pub fn batch(&self) -> Vec<DatasetPair> {
        (0..self.cfg.batch_size).map(|i| self.batch_pair(i)).collect()
    }

    /// Loss and gradients of one pair under the current parameters.
    pub fn pair_loss(&self, pair: &DatasetPair) -> Result<PairLoss> {
        self.model.nll_and_grads(pair)
    }

    /// Combines per-pair results (in batch order) into one optimizer step.
    pub fn apply(&mut self, losses: Vec<PairLoss>, hashes: Vec<String>) -> Result<LogEntry> {
        let lr = warmup_cosine(self.step, self.cfg.warmup, self.cfg.steps, self.cfg.lr);
        let queries: usize = losses.iter().map(|l| l.n_queries).sum();
        let mut total = None;
        let mut nll = 0.0;
        for l in losses {
            nll += l.nll_sum;
            if let Some(g) = l.grads {
                match &mut total {
                    None => total = Some(g),
                    Some(t) => accumulate_grads(t, &g),
                }
            }
        }
        self.consumed.extend(hashes);
        let mut entry = LogEntry {
            step: self.step,
            loss: None,
            grad_norm: None,
            lr,
            pairs_consumed: self.consumed.len() as u64,
            queries,
            skipped: false,
        };
        if let (Some(mut grads), true) = (total, queries > 0) {
            let loss = nll / queries as f64;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step: self.step });
            }
            let inv = 1.0 / queries as f32;
            grads.iter_mut().flatten().for_each(|g| *g *= inv);
            self.opt.lr = lr;
            entry.loss = Some(loss);
            match self.opt.step(self.model.params_mut(), &grads) {
                Ok(stats) => entry.grad_norm = Some(stats.grad_norm),
                Err(Error::NonFiniteGradient) => entry.skipped = true,
                Err(e) => return Err(e),
            }
        }
        self.step += 1;
        Ok(entry)
    }

    /// One full step computed on the calling thread.
    pub fn train_step(&mut self) -> Result<LogEntry> {
        let batch = self.batch();
        let hashes = batch.iter().map(pair_hash).collect();
        let losses = batch.iter().map(|p| self.pair_loss(p)).collect::<Result<Vec<_>>>()?;
        self.apply(losses, hashes)
    }
}

/// Runs every step serially and returns the model and its log.
pub fn train(cfg: TrainConfig) -> Result<(PfnModel, Vec<LogEntry>)> {
    let mut trainer = Trainer::new(cfg)?;
    let mut log = Vec::with_capacity(trainer.cfg.steps as usize);
    while !trainer.finished() {
        log.push(trainer.train_step()?);
    }
    Ok((trainer.into_model(), log))
}

/// Frozen held-out pairs drawn from the training prior.
pub fn heldout_pairs(prior: &PriorConfig, objective: Objective, n: usize, seed: u64) -> Vec<DatasetPair> {
    (0..n).map(|i| draw(prior, objective, &mut stream(seed, Domain::Heldout, i as u64))).collect()
}

/// Mean NLL per query in outcome units.
pub fn mean_nll(model: &PfnModel, pairs: &[DatasetPair]) -> Result<f64> {
    let (mut total, mut n) = (0.0, 0usize);
    for pair in pairs {
        let Some(targets) = &pair.targets else { continue };
        for (d, &y) in model.predict_queries(&pair.obs, &pair.queries)?.iter().zip(targets) {
            total += d.nll(y);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyContext);
    }
    Ok(total / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: u64,
    pub nmse_cid: f64,
    pub nmse_cate: f64,
    pub picp_90: f64,
    pub mean_entropy: f64,
}

/// Median metrics of `model` over frozen suites.
pub fn evaluate_during_training(
    model: &PfnModel,
    step: u64,
    suites: &[(CaseStudyId, Vec<DatasetPair>)],
    opts: &EvalOptions,
) -> Result<Snapshot> {
    let (mut cid, mut cate, mut picp, mut ent) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let level90 = opts.levels.iter().position(|&l| (l - 0.9).abs() < 1e-9);
    for (id, suite) in suites {
        for (i, pair) in suite.iter().enumerate() {
            let truth = eval::true_cates(pair, opts, i)?;
            let r = eval::evaluate_pair(Method::Dopfn, Some(model), pair, truth.as_deref(), id.name(), i, opts)?;
            cid.extend(r.nmse_cid);
            cate.extend(r.nmse_cate);
            ent.extend(r.mean_entropy);
            if let Some(l) = level90 {
                picp.extend(r.picp.get(l).copied());
            }
        }
    }
    Ok(Snapshot {
        step,
        nmse_cid: eval::median(&cid),
        nmse_cate: eval::median(&cate),
        picp_90: eval::median(&picp),
        mean_entropy: eval::median(&ent),
    })
}
