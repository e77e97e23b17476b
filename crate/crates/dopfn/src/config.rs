//! Plain-text `key = value` training configuration.
//!
//! Lines are `key = value`; `#` starts a comment; `include = <path>` splices
//! another file (relative to the including file) at that point. Later keys
//! override earlier ones. `dump` prints every key with its current value.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use dopfn_core::cases::CaseStudyId;
use dopfn_core::training::{Objective, TrainConfig};

use crate::error::{CliError, Result};
use crate::io::read_string;

const MAX_INCLUDE_DEPTH: usize = 16;

fn bad(key: &str, value: &str, what: &str) -> CliError {
    CliError::Config(format!("`{key} = {value}`: expected {what}"))
}

fn parse<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, what))
}

/// Assigns one key. Unknown keys are errors.
pub fn set(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let (p, m) = (&mut cfg.prior, &mut cfg.model);
    match key {
        "steps" => cfg.steps = parse(key, value, "an integer")?,
        "batch_size" => cfg.batch_size = parse(key, value, "an integer")?,
        "lr" => cfg.lr = parse(key, value, "a number")?,
        "warmup" => cfg.warmup = parse(key, value, "an integer")?,
        "clip_norm" => cfg.clip_norm = parse(key, value, "a number")?,
        "eval_every" => cfg.eval_every = parse(key, value, "an integer")?,
        "seed" => cfg.seed = parse(key, value, "an integer")?,
        "grid_pairs" => cfg.grid_pairs = parse(key, value, "an integer")?,
        "objective" => {
            cfg.objective = match value {
                "interventional" => Objective::Interventional,
                "observational" => Objective::Observational,
                _ => return Err(bad(key, value, "`interventional` or `observational`")),
            }
        }
        "prior.k_min" => p.k_min = parse(key, value, "an integer")?,
        "prior.k_max" => p.k_max = parse(key, value, "an integer")?,
        "prior.m_min" => p.m_min = parse(key, value, "an integer")?,
        "prior.m_max" => p.m_max = parse(key, value, "an integer")?,
        "prior.edge_density" => p.edge_density = parse(key, value, "a number")?,
        "prior.exo_std_low" => p.exo_std_low = parse(key, value, "a number")?,
        "prior.exo_std_high" => p.exo_std_high = parse(key, value, "a number")?,
        "prior.noise_scale" => p.noise_scale = parse(key, value, "a number")?,
        "prior.treatment_prior_p" => p.treatment_prior_p = parse(key, value, "a number")?,
        "prior.hidden_prob" => p.hidden_prob = parse(key, value, "a number")?,
        "prior.linear" => p.linear = parse(key, value, "`true` or `false`")?,
        "prior.case" => {
            p.case = match value {
                "none" => None,
                id => Some(id.parse::<CaseStudyId>().map_err(|_| bad(key, value, "`none` or a case id"))?),
            }
        }
        "model.embed_dim" => m.embed_dim = parse(key, value, "an integer")?,
        "model.n_layers" => m.n_layers = parse(key, value, "an integer")?,
        "model.n_heads" => m.n_heads = parse(key, value, "an integer")?,
        "model.d_max" => m.d_max = parse(key, value, "an integer")?,
        "model.n_max" => m.n_max = parse(key, value, "an integer")?,
        "model.n_bins" => m.n_bins = parse(key, value, "an integer")?,
        "model.mlp_ratio" => m.mlp_ratio = parse(key, value, "an integer")?,
        _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
    }
    Ok(())
}

/// Every key with its value, one `key = value` line each, in a stable order.
pub fn dump(cfg: &TrainConfig) -> String {
    let (p, m) = (&cfg.prior, &cfg.model);
    let objective = match cfg.objective {
        Objective::Interventional => "interventional",
        Objective::Observational => "observational",
    };
    let case = p.case.map_or("none", CaseStudyId::name);
    let lines: Vec<(&str, String)> = vec![
        ("steps", cfg.steps.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("lr", cfg.lr.to_string()),
        ("warmup", cfg.warmup.to_string()),
        ("clip_norm", cfg.clip_norm.to_string()),
        ("objective", objective.to_string()),
        ("eval_every", cfg.eval_every.to_string()),
        ("seed", cfg.seed.to_string()),
        ("grid_pairs", cfg.grid_pairs.to_string()),
        ("prior.k_min", p.k_min.to_string()),
        ("prior.k_max", p.k_max.to_string()),
        ("prior.m_min", p.m_min.to_string()),
        ("prior.m_max", p.m_max.to_string()),
        ("prior.edge_density", p.edge_density.to_string()),
        ("prior.exo_std_low", p.exo_std_low.to_string()),
        ("prior.exo_std_high", p.exo_std_high.to_string()),
        ("prior.noise_scale", p.noise_scale.to_string()),
        ("prior.treatment_prior_p", p.treatment_prior_p.to_string()),
        ("prior.hidden_prob", p.hidden_prob.to_string()),
        ("prior.linear", p.linear.to_string()),
        ("prior.case", case.to_string()),
        ("model.embed_dim", m.embed_dim.to_string()),
        ("model.n_layers", m.n_layers.to_string()),
        ("model.n_heads", m.n_heads.to_string()),
        ("model.d_max", m.d_max.to_string()),
        ("model.n_max", m.n_max.to_string()),
        ("model.n_bins", m.n_bins.to_string()),
        ("model.mlp_ratio", m.mlp_ratio.to_string()),
    ];
    lines.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Parsed configuration and the keys the files set explicitly.
#[derive(Debug, Default)]
pub struct Parsed {
    pub config: TrainConfig,
    pub assigned: BTreeSet<String>,
}

fn apply_text(
    out: &mut Parsed,
    text: &str,
    origin: &str,
    base: &Path,
    depth: usize,
    stack: &mut Vec<PathBuf>,
) -> Result<()> {
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected `key = value`", n + 1)))?;
        if key == "include" {
            if depth >= MAX_INCLUDE_DEPTH {
                return Err(CliError::Config(format!("{origin}:{}: includes nested too deeply", n + 1)));
            }
            apply_file(out, &base.join(value), depth + 1, stack)?;
            continue;
        }
        set(&mut out.config, key, value).map_err(|e| CliError::Config(format!("{origin}:{}: {e}", n + 1)))?;
        out.assigned.insert(key.to_string());
    }
    Ok(())
}

fn apply_file(out: &mut Parsed, path: &Path, depth: usize, stack: &mut Vec<PathBuf>) -> Result<()> {
    let canon = path.canonicalize().map_err(|e| CliError::read(path, e))?;
    if stack.contains(&canon) {
        return Err(CliError::Config(format!("include cycle through {}", path.display())));
    }
    let text = read_string(path)?;
    stack.push(canon);
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    apply_text(out, &text, &path.display().to_string(), &base, depth, stack)?;
    stack.pop();
    Ok(())
}

/// Parses text on top of the defaults; includes resolve against `base`.
pub fn parse_str(text: &str, base: &Path) -> Result<Parsed> {
    let mut out = Parsed::default();
    apply_text(&mut out, text, "<config>", base, 0, &mut Vec::new())?;
    Ok(out)
}

pub fn load(path: &Path) -> Result<Parsed> {
    let mut out = Parsed::default();
    apply_file(&mut out, path, 0, &mut Vec::new())?;
    Ok(out)
}
