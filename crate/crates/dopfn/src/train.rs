//! Training driver: rayon-parallel batch generation and per-pair gradients,
//! a single mutator applying updates in batch order, JSON-lines log and
//! periodic checkpoints.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use dopfn_core::cases::{build_suite, CaseStudyId};
use dopfn_core::eval::EvalOptions;
use dopfn_core::model::PfnModel;
use dopfn_core::pair_hash;
use dopfn_core::training::{
    evaluate_during_training, heldout_pairs, mean_nll, LogEntry, Snapshot, TrainConfig, Trainer,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint;
use crate::error::{CliError, Result};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_FILE: &str = "train.cfg";

const HELDOUT_PAIRS: usize = 16;
const SNAPSHOT_DATASETS: usize = 8;

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine<'a> {
    Step(&'a LogEntry),
    Eval { step: u64, heldout_nll: f64, snapshot: Option<&'a Snapshot> },
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub jobs: usize,
    pub quiet: bool,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: u64,
    pub final_loss: Option<f64>,
    pub skipped_updates: usize,
}

pub fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} worker threads: {e}")))
}

/// One optimizer step with the batch computed on the current rayon pool.
pub fn parallel_step(trainer: &mut Trainer) -> dopfn_core::Result<LogEntry> {
    let n = trainer.config().batch_size;
    let batch: Vec<_> = (0..n).into_par_iter().map(|i| trainer.batch_pair(i)).collect();
    let hashes = batch.iter().map(pair_hash).collect();
    let losses = batch.par_iter().map(|p| trainer.pair_loss(p)).collect::<dopfn_core::Result<Vec<_>>>()?;
    trainer.apply(losses, hashes)
}

struct Evaluator {
    heldout: Vec<dopfn_core::prior::DatasetPair>,
    suites: Vec<(CaseStudyId, Vec<dopfn_core::prior::DatasetPair>)>,
    opts: EvalOptions,
}

impl Evaluator {
    fn new(cfg: &TrainConfig) -> Self {
        let heldout = heldout_pairs(&cfg.prior, cfg.objective, HELDOUT_PAIRS, cfg.seed);
        // frozen snapshot suite; skipped when it does not fit the model
        let rows = cfg.prior.m_max.min(cfg.model.n_max);
        let case = cfg.prior.case.unwrap_or(CaseStudyId::ObservedConfounder);
        let suites = match build_suite(case, SNAPSHOT_DATASETS, rows, cfg.seed) {
            Ok(s) if s.iter().all(|p| p.n_features <= cfg.model.d_max) => vec![(case, s)],
            _ => Vec::new(),
        };
        Evaluator { heldout, suites, opts: EvalOptions { n_mc: 200, seed: cfg.seed, ..EvalOptions::default() } }
    }

    fn run(&self, model: &PfnModel, step: u64) -> dopfn_core::Result<(f64, Option<Snapshot>)> {
        let nll = mean_nll(model, &self.heldout)?;
        let snap = if self.suites.is_empty() {
            None
        } else {
            Some(evaluate_during_training(model, step, &self.suites, &self.opts)?)
        };
        Ok((nll, snap))
    }
}

fn log_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::unwritable(path, e)
}

/// Trains from scratch into `out`: config dump, log, checkpoint and model card.
///
/// With `eval_every > 0` a checkpoint and a held-out evaluation are written
/// every `eval_every` steps; a non-finite loss stops training and keeps the
/// last checkpoint on disk.
pub fn run(cfg: &TrainConfig, out: &Path, opts: &TrainOptions) -> Result<TrainSummary> {
    cfg.validate()?;
    crate::io::create_dir(out)?;
    crate::io::write_file(&out.join(CONFIG_FILE), crate::config::dump(cfg))?;
    let log_path = out.join(LOG_FILE);
    let mut log = BufWriter::new(File::create(&log_path).map_err(log_err(&log_path))?);
    let pool = pool(opts.jobs)?;

    pool.install(|| {
        let mut trainer = Trainer::new(cfg.clone())?;
        let evaluator = (cfg.eval_every > 0).then(|| Evaluator::new(cfg));
        let progress_every = (cfg.steps / 20).max(1);
        let mut last_loss = None;
        let mut skipped = 0;
        while !trainer.finished() {
            // the buffered log is flushed on drop if this fails
            let entry = parallel_step(&mut trainer)?;
            skipped += usize::from(entry.skipped);
            last_loss = entry.loss.or(last_loss);
            let line = serde_json::to_string(&LogLine::Step(&entry)).expect("log entries serialize");
            writeln!(log, "{line}").map_err(log_err(&log_path))?;
            let step = trainer.step();
            if !opts.quiet && (step % progress_every == 0 || trainer.finished()) {
                eprintln!("step {step}/{} loss {}", cfg.steps, last_loss.map_or("-".into(), |l| format!("{l:.4}")));
            }
            if let Some(ev) = &evaluator {
                if step % cfg.eval_every == 0 || trainer.finished() {
                    let (nll, snap) = ev.run(trainer.model(), step)?;
                    let line =
                        serde_json::to_string(&LogLine::Eval { step, heldout_nll: nll, snapshot: snap.as_ref() })
                            .expect("log entries serialize");
                    writeln!(log, "{line}").map_err(log_err(&log_path))?;
                    checkpoint::save(out, trainer.model(), cfg, step, last_loss)?;
                }
            }
        }
        if evaluator.is_none() {
            checkpoint::save(out, trainer.model(), cfg, trainer.step(), last_loss)?;
        }
        log.flush().map_err(log_err(&log_path))?;
        Ok(TrainSummary { steps: trainer.step(), final_loss: last_loss, skipped_updates: skipped })
    })
}
