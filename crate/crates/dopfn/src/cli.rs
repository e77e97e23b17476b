//! Command-line surface. Every command writes one `manifest.json` whose
//! `args` reproduce the run; exit codes are listed on [`CliError::exit_code`].

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dopfn_core::cases::{build_suite, case_config, CaseStudyId};
use dopfn_core::eval::{EvalOptions, Method, DEFAULT_LEVELS};
use dopfn_core::training::TrainConfig;
use dopfn_core::Fingerprint;

use crate::checkpoint;
use crate::config;
use crate::error::{CliError, Result};
use crate::evaluate::{self, Axis, Models};
use crate::io::{self, member_dir_name, PairSidecar};
use crate::manifest::{self, RunManifest, MANIFEST_FILE};
use crate::report;
use crate::train::{self, TrainOptions};

pub const SEED_ENV: &str = "DOPFN_SEED";

#[derive(Debug, Parser)]
#[command(name = "dopfn", version, about = "Causal prior-fitted network: suites, training, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Write a case-study suite of dataset pairs.
    Generate(GenerateArgs),
    /// Train a model from a key=value config.
    Train(TrainArgs),
    /// Score methods on a suite and write a report.
    Evaluate(EvaluateArgs),
    /// Bucket a suite along one axis and summarize each bucket.
    Ablate(AblateArgs),
    /// Validate external CSV tables into a dataset directory.
    Ingest(IngestArgs),
    /// Print configuration keys and values.
    Config(ConfigArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
    /// Check an artifact directory against its manifest.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Case id, or `all` for every case.
    #[arg(long)]
    pub case: String,
    #[arg(long)]
    pub n: usize,
    /// Falls back to DOPFN_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rows per dataset (observational plus query rows).
    #[arg(long, default_value_t = 500)]
    pub rows: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's seed; without either, DOPFN_SEED is used.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct ScoringArgs {
    /// Checkpoint directory; repeat for a Dont-PFN checkpoint. The training
    /// objective decides which method a checkpoint serves.
    #[arg(long)]
    pub model: Vec<PathBuf>,
    #[arg(long)]
    pub suite: PathBuf,
    /// Comma-separated: dopfn, dontpfn, knn, s_learner_knn, oracle.
    #[arg(long, default_value = "knn,s_learner_knn,oracle")]
    pub methods: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 2000)]
    pub n_mc: usize,
    #[arg(long, default_value_t = 10)]
    pub knn_k: usize,
    /// Bootstrap resamples for the CI95 of each median.
    #[arg(long, default_value_t = 10_000)]
    pub boot: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Evaluate despite hash or schema mismatches.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// Also write an SVG bar chart.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// size, graph, ate or noise.
    #[arg(long)]
    pub axis: String,
    #[arg(long, default_value_t = 4)]
    pub buckets: usize,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub obs: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Print every key with its value.
    #[arg(long)]
    pub dump: bool,
    /// Resolve this file (with includes) instead of the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub dir: PathBuf,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| CliError::Usage(format!("{SEED_ENV}=`{v}` is not an integer"))),
        Err(_) => Ok(None),
    }
}

/// Absolute form of a path, for manifests that must replay from any directory.
fn absolute(p: &Path) -> String {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}

fn args(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let mut out: Vec<Method> = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m = name.parse::<Method>().map_err(|_| CliError::Usage(format!("unknown method `{name}`")))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("no methods given".into()));
    }
    Ok(out)
}

/// Parses `argv` (program name excluded) and runs the command.
pub fn run_args(argv: &[String]) -> Result<()> {
    let cli = Cli::try_parse_from(std::iter::once("dopfn".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    run(cli.command)
}

pub fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Generate(a) => generate(&a),
        Cmd::Train(a) => train_cmd(&a),
        Cmd::Evaluate(a) => evaluate_cmd(&a),
        Cmd::Ablate(a) => ablate_cmd(&a),
        Cmd::Ingest(a) => ingest(&a),
        Cmd::Config(a) => config_cmd(&a),
        Cmd::Replay(a) => replay(&a),
        Cmd::Verify(a) => {
            let m = manifest::verify(&a.dir)?;
            println!("{}: {} outputs match", a.dir.display(), m.outputs.len());
            Ok(())
        }
    }
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let cases: Vec<CaseStudyId> = if a.case == "all" {
        CaseStudyId::ALL.to_vec()
    } else {
        vec![a.case.parse().map_err(|_| CliError::InvalidCase(a.case.clone()))?]
    };
    let seed = a.seed.or(env_seed()?).unwrap_or(0);
    let (n, rows) = (a.n.to_string(), a.rows.to_string());
    let canonical = args(&[
        "generate",
        "--case",
        &a.case,
        "--n",
        &n,
        "--seed",
        &seed.to_string(),
        "--rows",
        &rows,
        "--out",
        &absolute(&a.out),
    ]);
    let run = RunManifest::start("generate", canonical, seed, None);
    io::create_dir(&a.out)?;
    for &id in &cases {
        let suite = build_suite(id, a.n, a.rows, seed)?;
        let base = if cases.len() > 1 { a.out.join(id.name()) } else { a.out.clone() };
        for (i, pair) in suite.iter().enumerate() {
            let mut side = PairSidecar::describe(pair, Some(id.name()), i);
            side.seed = Some(seed);
            side.prior = Some(dopfn_core::prior::PriorConfig { case: Some(id), ..case_config() });
            io::write_pair(&base.join(member_dir_name(i)), pair, &side)?;
        }
    }
    run.finish(&a.out)?;
    Ok(())
}

/// Resolved training config: file, then `--seed`, else DOPFN_SEED when the file sets no seed.
pub fn resolve_train_config(path: &Path, seed: Option<u64>) -> Result<TrainConfig> {
    let parsed = config::load(path)?;
    let mut cfg = parsed.config;
    if let Some(s) = seed {
        cfg.seed = s;
    } else if !parsed.assigned.contains("seed") {
        if let Some(s) = env_seed()? {
            cfg.seed = s;
        }
    }
    Ok(cfg)
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(&a.config, a.seed)?;
    let canonical = args(&[
        "train",
        "--config",
        &absolute(&a.config),
        "--out",
        &absolute(&a.out),
        "--seed",
        &cfg.seed.to_string(),
        "--jobs",
        &a.jobs.to_string(),
        "--quiet",
    ]);
    let run = RunManifest::start("train", canonical, cfg.seed, Some(cfg.hash()));
    let summary = train::run(&cfg, &a.out, &TrainOptions { jobs: a.jobs, quiet: a.quiet })?;
    if !a.quiet {
        eprintln!(
            "trained {} steps, final loss {:?}, {} skipped updates",
            summary.steps, summary.final_loss, summary.skipped_updates
        );
    }
    run.finish(&a.out)?;
    Ok(())
}

struct Prepared {
    methods: Vec<Method>,
    models: Models,
    members: Vec<io::SuiteMember>,
    opts: EvalOptions,
    seed: u64,
    canonical: Vec<String>,
    config_hash: String,
}

fn prepare(cmd: &str, s: &ScoringArgs, extra: &[String]) -> Result<Prepared> {
    let methods = parse_methods(&s.methods)?;
    let seed = s.seed.or(env_seed()?).unwrap_or(0);
    if s.suite.join(MANIFEST_FILE).exists() {
        match manifest::verify(&s.suite) {
            Err(e @ CliError::HashMismatch(_)) if !s.force => return Err(e),
            Err(CliError::HashMismatch(_)) => {}
            Err(e) => return Err(e),
            Ok(_) => {}
        }
    }
    let members = io::read_suite(&s.suite)?;
    let loaded = s.model.iter().map(|p| checkpoint::load(p, s.force)).collect::<Result<Vec<_>>>()?;
    let models = Models::from_checkpoints(loaded)?;
    evaluate::check_schema(&models, &members, s.force)?;
    let opts = EvalOptions { levels: DEFAULT_LEVELS.to_vec(), n_mc: s.n_mc, knn_k: s.knn_k, seed };

    let mut canonical = vec![cmd.to_string()];
    canonical.extend(extra.iter().cloned());
    for m in &s.model {
        canonical.extend(["--model".to_string(), absolute(m)]);
    }
    canonical.extend([
        "--suite".to_string(),
        absolute(&s.suite),
        "--methods".into(),
        methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(","),
        "--out".into(),
        absolute(&s.out),
        "--seed".into(),
        seed.to_string(),
        "--n-mc".into(),
        s.n_mc.to_string(),
        "--knn-k".into(),
        s.knn_k.to_string(),
        "--boot".into(),
        s.boot.to_string(),
        "--jobs".into(),
        s.jobs.to_string(),
    ]);
    if s.force {
        canonical.push("--force".into());
    }
    let mut fp = Fingerprint::new();
    fp.str(&format!("{opts:?}")).str(&format!("{methods:?}")).u64(s.boot as u64);
    for ck in models.dopfn.iter().chain(&models.dontpfn) {
        fp.str(&ck.manifest.config_hash).str(&ck.manifest.bin_sha256);
    }
    Ok(Prepared { methods, models, members, opts, seed, canonical, config_hash: fp.hex() })
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let s = &a.scoring;
    let mut p = prepare("evaluate", s, &[])?;
    if a.svg {
        p.canonical.push("--svg".into());
    }
    let run = RunManifest::start("evaluate", p.canonical.clone(), p.seed, Some(p.config_hash.clone()));
    let scored = train::pool(s.jobs)?.install(|| evaluate::score(&p.members, &p.methods, &p.models, &p.opts))?;
    let rep = evaluate::report(&scored, &p.opts, s.boot);
    report::write_report(&s.out, &rep, a.svg)?;
    run.finish(&s.out)?;
    Ok(())
}

pub const ABLATION_FILE: &str = "ablation.json";

fn ablate_cmd(a: &AblateArgs) -> Result<()> {
    let axis: Axis = a.axis.parse()?;
    let s = &a.scoring;
    let extra = args(&["--axis", &a.axis, "--buckets", &a.buckets.to_string()]);
    let p = prepare("ablate", s, &extra)?;
    let run = RunManifest::start("ablate", p.canonical.clone(), p.seed, Some(p.config_hash.clone()));
    let scored = train::pool(s.jobs)?.install(|| evaluate::score(&p.members, &p.methods, &p.models, &p.opts))?;
    let ab = evaluate::ablate(axis, &p.members, &scored, &p.methods, a.buckets)?;
    io::create_dir(&s.out)?;
    io::write_json(&s.out.join(ABLATION_FILE), &ab)?;
    io::write_file(&s.out.join(report::RECORDS_FILE), report::records_csv(&scored.records, &p.opts.levels))?;
    run.finish(&s.out)?;
    Ok(())
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let canonical =
        args(&["ingest", "--obs", &absolute(&a.obs), "--queries", &absolute(&a.queries), "--out", &absolute(&a.out)]);
    let run = RunManifest::start("ingest", canonical, 0, None);
    let pair = io::read_tables(&a.obs, &a.queries)?;
    let side = PairSidecar::describe(&pair, None, 0);
    io::create_dir(&a.out)?;
    io::write_pair(&a.out.join(member_dir_name(0)), &pair, &side)?;
    run.finish(&a.out)?;
    Ok(())
}

fn config_cmd(a: &ConfigArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => config::load(p)?.config,
        None => TrainConfig::default(),
    };
    if a.dump || a.config.is_some() {
        print!("{}", config::dump(&cfg));
        return Ok(());
    }
    Err(CliError::Usage("config: pass --dump or --config <file>".into()))
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let m = manifest::load(&a.manifest)?;
    let argv = match &a.out {
        Some(out) => manifest::with_out(&m.args, &std::path::absolute(out).unwrap_or_else(|_| out.clone())),
        None => m.args.clone(),
    };
    if m.command == "train" {
        // the config file may have changed since the recorded run
        let i = argv.iter().position(|x| x == "--config").map(|i| i + 1);
        if let (Some(path), Some(expected)) = (i.and_then(|i| argv.get(i)), &m.config_hash) {
            let cfg = resolve_train_config(Path::new(path), Some(m.seed))?;
            if &cfg.hash() != expected {
                return Err(CliError::HashMismatch(format!("{path} no longer matches the recorded config hash")));
            }
        }
    }
    run_args(&argv)
}
