//! Scoring suites with several methods, and ablation sweeps over one axis.

use std::collections::BTreeMap;

use dopfn_core::cases::CaseStudyId;
use dopfn_core::eval::{self, aggregate, evaluate_pair, EvalOptions, EvalRecord, EvalReport, Method};
use dopfn_core::model::PfnModel;
use dopfn_core::training::Objective;
use dopfn_core::Error as CoreError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Loaded;
use crate::error::{CliError, Result};
use crate::io::SuiteMember;

/// Transformer checkpoints by the method they serve.
#[derive(Default)]
pub struct Models {
    pub dopfn: Option<Loaded>,
    pub dontpfn: Option<Loaded>,
}

impl Models {
    /// Assigns each checkpoint to `dopfn` or `dontpfn` by its training objective.
    pub fn from_checkpoints(list: Vec<Loaded>) -> Result<Self> {
        let mut m = Models::default();
        for ck in list {
            let slot = match ck.manifest.train_config.objective {
                Objective::Interventional => &mut m.dopfn,
                Objective::Observational => &mut m.dontpfn,
            };
            if slot.is_some() {
                return Err(CliError::Usage("two checkpoints trained with the same objective".into()));
            }
            *slot = Some(ck);
        }
        Ok(m)
    }

    pub fn for_method(&self, method: Method) -> Option<&PfnModel> {
        match method {
            Method::Dopfn => self.dopfn.as_ref().map(|l| &l.model),
            Method::Dontpfn => self.dontpfn.as_ref().map(|l| &l.model),
            _ => None,
        }
    }
}

/// Rejects suites a checkpoint was not trained for: a case-restricted prior
/// scored on another case, or datasets wider than the model accepts.
pub fn check_schema(models: &Models, members: &[SuiteMember], force: bool) -> Result<()> {
    for ck in models.dopfn.iter().chain(&models.dontpfn) {
        let cfg = &ck.manifest.train_config;
        for m in members {
            if m.pair.n_features > cfg.model.d_max {
                return Err(CliError::HashMismatch(format!(
                    "{}: {} covariates exceed the model's d_max {}",
                    m.dir.display(),
                    m.pair.n_features,
                    cfg.model.d_max
                )));
            }
            if let Some(case) = cfg.prior.case {
                if m.case_id != case.name() && !force {
                    return Err(CliError::HashMismatch(format!(
                        "{} was trained on the {} prior (hash {}) but {} is a {} dataset",
                        ck.dir.display(),
                        case,
                        &ck.manifest.prior_hash[..12],
                        m.dir.display(),
                        m.case_id
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Stream index of a member: case ordinal in the high bits, dataset index below.
fn stream_index(m: &SuiteMember) -> usize {
    let case = m.case_id.parse::<CaseStudyId>().map_or(0xff, |c| c as usize + 1);
    (case << 32) | m.dataset_idx
}

/// Records, flags and oracle CATEs of one suite member.
type MemberScore = (Vec<EvalRecord>, Vec<String>, Option<Vec<f64>>);

pub struct Scored {
    pub records: Vec<EvalRecord>,
    pub flags: Vec<String>,
    /// Oracle CATE per member (`None` without an SCM).
    pub truths: Vec<Option<Vec<f64>>>,
}

/// Scores every (member, method) pair. Members are processed in parallel on the
/// current rayon pool; output order is the suite order, then `methods` order.
pub fn score(members: &[SuiteMember], methods: &[Method], models: &Models, opts: &EvalOptions) -> Result<Scored> {
    for &m in methods {
        if matches!(m, Method::Dopfn | Method::Dontpfn) && models.for_method(m).is_none() {
            return Err(CliError::Usage(format!("method {m} needs a checkpoint trained with the matching objective")));
        }
    }
    let per_member = members
        .par_iter()
        .map(|m| -> Result<MemberScore> {
            let idx = stream_index(m);
            let mut recs = Vec::new();
            let mut flags = Vec::new();
            let degenerate = format!("oracle_degenerate:{}/{}", m.case_id, m.dataset_idx);
            let truth = match eval::true_cates(&m.pair, opts, idx) {
                Err(CoreError::DegenerateWeights { .. }) => {
                    flags.push(degenerate.clone());
                    None
                }
                other => other?,
            };
            for &method in methods {
                if method == Method::Oracle && m.pair.scm.is_none() {
                    flags.push(format!("oracle_unavailable:{}/{}", m.case_id, m.dataset_idx));
                    continue;
                }
                let scored =
                    evaluate_pair(method, models.for_method(method), &m.pair, truth.as_deref(), &m.case_id, idx, opts);
                let mut r = match scored {
                    Err(CoreError::DegenerateWeights { .. }) if method == Method::Oracle => {
                        if !flags.contains(&degenerate) {
                            flags.push(degenerate.clone());
                        }
                        continue;
                    }
                    other => other?,
                };
                r.dataset_idx = m.dataset_idx;
                recs.push(r);
            }
            for f in &m.sidecar.flags {
                flags.push(format!("{f}:{}/{}", m.case_id, m.dataset_idx));
            }
            Ok((recs, flags, truth))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Scored { records: Vec::new(), flags: Vec::new(), truths: Vec::new() };
    for (r, f, t) in per_member {
        out.records.extend(r);
        out.flags.extend(f);
        out.truths.push(t);
    }
    Ok(out)
}

pub fn report(scored: &Scored, opts: &EvalOptions, n_boot: usize) -> EvalReport {
    EvalReport {
        levels: opts.levels.clone(),
        records: scored.records.clone(),
        aggregate: aggregate(&scored.records, n_boot, opts.seed),
        flags: scored.flags.clone(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Dataset size `M_ob + M_in`.
    Size,
    /// Node count of the generating graph.
    Graph,
    /// Absolute oracle ATE (mean oracle CATE over the queries).
    Ate,
    /// Outcome noise standard deviation.
    Noise,
}

impl std::str::FromStr for Axis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "size" => Ok(Axis::Size),
            "graph" => Ok(Axis::Graph),
            "ate" => Ok(Axis::Ate),
            "noise" => Ok(Axis::Noise),
            _ => Err(CliError::Usage(format!("unknown axis `{s}` (size, graph, ate, noise)"))),
        }
    }
}

fn axis_value(axis: Axis, m: &SuiteMember, truth: Option<&[f64]>) -> Option<f64> {
    match axis {
        Axis::Size => Some((m.pair.m_ob() + m.pair.m_in()) as f64),
        Axis::Graph => m.pair.scm.as_ref().map(|s| s.node_count() as f64),
        Axis::Ate => truth.filter(|t| !t.is_empty()).map(|t| (t.iter().sum::<f64>() / t.len() as f64).abs()),
        Axis::Noise => m.pair.scm.as_ref().map(|s| s.outcome_noise_std()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub median_nmse_cid: Option<f64>,
    pub median_nmse_cate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub bucket: usize,
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
    pub median_axis: f64,
    pub methods: Vec<MethodSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub method: Method,
    pub metric: String,
    /// Spearman correlation between bucket median axis value and bucket median metric.
    pub spearman: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub axis: Axis,
    pub n_buckets: usize,
    pub buckets: Vec<Bucket>,
    pub trends: Vec<Trend>,
    pub skipped: usize,
}

fn opt_median(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| eval::median(v))
}

/// Buckets members by quantiles of the axis value and summarizes each bucket.
pub fn ablate(
    axis: Axis,
    members: &[SuiteMember],
    scored: &Scored,
    methods: &[Method],
    n_buckets: usize,
) -> Result<Ablation> {
    if n_buckets == 0 {
        return Err(CliError::Usage("--buckets must be >= 1".into()));
    }
    let values: Vec<Option<f64>> =
        members.iter().zip(&scored.truths).map(|(m, t)| axis_value(axis, m, t.as_deref())).collect();
    let kept: Vec<usize> = (0..members.len()).filter(|&i| values[i].is_some_and(f64::is_finite)).collect();
    if kept.is_empty() {
        return Err(CliError::Usage(format!("no dataset in the suite has a value on the {axis:?} axis")));
    }
    let v: Vec<f64> = kept.iter().map(|&i| values[i].expect("kept")).collect();
    let bucket_of = eval::quantile_buckets(&v, n_buckets);
    let key = |m: &SuiteMember| (m.case_id.clone(), m.dataset_idx);
    let mut by_member: BTreeMap<((String, usize), Method), &EvalRecord> = BTreeMap::new();
    for r in &scored.records {
        by_member.insert(((r.case_id.clone(), r.dataset_idx), r.method), r);
    }

    let mut buckets = Vec::new();
    for b in 0..n_buckets {
        let idx: Vec<usize> = (0..kept.len()).filter(|&k| bucket_of[k] == b).collect();
        if idx.is_empty() {
            continue;
        }
        let axis_vals: Vec<f64> = idx.iter().map(|&k| v[k]).collect();
        let mut summaries = Vec::new();
        for &method in methods {
            let recs: Vec<&EvalRecord> =
                idx.iter().filter_map(|&k| by_member.get(&(key(&members[kept[k]]), method)).copied()).collect();
            let cid: Vec<f64> = recs.iter().filter_map(|r| r.nmse_cid).collect();
            let cate: Vec<f64> = recs.iter().filter_map(|r| r.nmse_cate).collect();
            summaries.push(MethodSummary {
                method,
                median_nmse_cid: opt_median(&cid),
                median_nmse_cate: opt_median(&cate),
            });
        }
        buckets.push(Bucket {
            bucket: b,
            n: idx.len(),
            lo: axis_vals.iter().copied().fold(f64::INFINITY, f64::min),
            hi: axis_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            median_axis: eval::median(&axis_vals),
            methods: summaries,
        });
    }

    let mut trends = Vec::new();
    for (mi, &method) in methods.iter().enumerate() {
        for metric in ["nmse_cid", "nmse_cate"] {
            let pts: Vec<(f64, f64)> = buckets
                .iter()
                .filter_map(|b| {
                    let s = &b.methods[mi];
                    let y = if metric == "nmse_cid" { s.median_nmse_cid } else { s.median_nmse_cate };
                    y.map(|y| (b.median_axis, y))
                })
                .collect();
            if pts.len() >= 2 {
                let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
                trends.push(Trend { method, metric: metric.to_string(), spearman: eval::spearman(&x, &y) });
            }
        }
    }
    Ok(Ablation { axis, n_buckets, buckets, trends, skipped: members.len() - kept.len() })
}
