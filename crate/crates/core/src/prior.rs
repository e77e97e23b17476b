//! The pre-training prior over SCMs and the paired observational /
//! interventional datasets drawn from it.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cases::{self, CaseStudyId};
use crate::error::{Error, Result};
use crate::scm::{Dag, Mechanism, NodeRole, NoiseVector, Nonlinearity, Scm, Structural, TreatmentRule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub m_min: usize,
    pub m_max: usize,
    pub edge_density: f64,
    pub exo_std_low: f64,
    pub exo_std_high: f64,
    pub noise_scale: f64,
    pub treatment_prior_p: f64,
    /// Probability that a non-treatment, non-outcome node is hidden.
    pub hidden_prob: f64,
    /// Replace every drawn nonlinearity with the identity.
    #[serde(default)]
    pub linear: bool,
    /// Restrict the graph to one case-study structure instead of random DAGs.
    pub case: Option<CaseStudyId>,
    pub seed: u64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            k_min: 2,
            k_max: 10,
            m_min: 10,
            m_max: 2200,
            edge_density: 0.5,
            exo_std_low: 1.0,
            exo_std_high: 3.0,
            noise_scale: 1.0,
            treatment_prior_p: 0.5,
            hidden_prob: 0.2,
            linear: false,
            case: None,
            seed: 0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.k_min < 2 {
            return fail(format!("k_min must be >= 2, got {}", self.k_min));
        }
        if self.k_max < self.k_min {
            return fail(format!("k_max {} < k_min {}", self.k_max, self.k_min));
        }
        if self.m_min < 1 || self.m_min >= self.m_max {
            return fail(format!("need 1 <= m_min < m_max, got {}..{}", self.m_min, self.m_max));
        }
        if !(0.0..=1.0).contains(&self.edge_density) {
            return fail(format!("edge_density {} outside [0, 1]", self.edge_density));
        }
        if !(self.exo_std_low > 0.0 && self.exo_std_low <= self.exo_std_high && self.exo_std_high.is_finite()) {
            return fail(format!("bad exogenous std bounds {}..{}", self.exo_std_low, self.exo_std_high));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return fail(format!("noise_scale {} must be finite and >= 0", self.noise_scale));
        }
        if !(self.treatment_prior_p > 0.0 && self.treatment_prior_p < 1.0) {
            return fail(format!("treatment_prior_p {} outside (0, 1)", self.treatment_prior_p));
        }
        if !(0.0..=1.0).contains(&self.hidden_prob) {
            return fail(format!("hidden_prob {} outside [0, 1]", self.hidden_prob));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsRow {
    pub t: u8,
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub t: u8,
    pub x: Vec<f64>,
}

/// Observational table plus interventional queries generated from one SCM.
///
/// `scm` is kept only for oracle computations and is absent for ingested data;
/// `targets` is absent when the interventional outcomes are unknown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetPair {
    pub n_features: usize,
    pub obs: Vec<ObsRow>,
    pub queries: Vec<Query>,
    pub targets: Option<Vec<f64>>,
    pub scm: Option<Scm>,
}

impl DatasetPair {
    pub fn m_ob(&self) -> usize {
        self.obs.len()
    }

    pub fn m_in(&self) -> usize {
        self.queries.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.n_features;
        if let Some(bad) = self.obs.iter().position(|r| r.x.len() != d) {
            return Err(Error::Invalid(format!("observational row {bad} has wrong feature count")));
        }
        if let Some(bad) = self.queries.iter().position(|q| q.x.len() != d) {
            return Err(Error::Invalid(format!("query {bad} has wrong feature count")));
        }
        if let Some(targets) = &self.targets {
            if targets.len() != self.queries.len() {
                return Err(Error::DimensionMismatch { expected: self.queries.len(), got: targets.len() });
            }
            if targets.iter().any(|y| !y.is_finite()) {
                return Err(Error::Invalid("non-finite target".into()));
            }
        }
        Ok(())
    }
}

/// Random DAG: uniform node count, random topological order, independent forward edges.
pub fn sample_dag<R: Rng + ?Sized>(cfg: &PriorConfig, rng: &mut R) -> Dag {
    let k = rng.random_range(cfg.k_min..=cfg.k_max);
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);
    let mut parents = vec![Vec::new(); k];
    for j in 1..k {
        for i in 0..j {
            if rng.random_bool(cfg.edge_density) {
                parents[order[j]].push(order[i]);
            }
        }
    }
    for ps in &mut parents {
        ps.sort_unstable();
    }
    Dag::new(parents).expect("forward edges of a permutation are acyclic")
}

/// Kaiming-uniform weights and a uniformly chosen nonlinearity for `n_parents` inputs.
pub fn sample_mechanism<R: Rng + ?Sized>(n_parents: usize, noise_std: f64, rng: &mut R) -> Mechanism {
    let bound = 1.0 / libm::sqrt(n_parents as f64);
    let weights = (0..n_parents).map(|_| rng.random_range(-bound..bound)).collect();
    let nonlinearity = Nonlinearity::ALL[rng.random_range(0..3)];
    Mechanism { weights, nonlinearity, noise_std }
}

/// `σ_ε = scale · 0.3 · Beta(1, 5)`.
pub fn sample_noise_std<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let beta = Beta::new(1.0, 5.0).expect("valid Beta parameters");
    scale * 0.3 * beta.sample(rng)
}

/// Random SCM from the general prior (or the configured case structure).
pub fn sample_scm<R: Rng + ?Sized>(cfg: &PriorConfig, rng: &mut R) -> Scm {
    if let Some(id) = cfg.case {
        return cases::build_case_with(id, cfg, rng);
    }
    let dag = sample_dag(cfg, rng);
    let k = dag.node_count();
    let order = dag.topo_order().to_vec();
    let position = {
        let mut pos = vec![0; k];
        for (i, &n) in order.iter().enumerate() {
            pos[n] = i;
        }
        pos
    };

    let non_sinks: Vec<usize> = (0..k).filter(|&n| !dag.children(n).is_empty()).collect();
    let mut choice = (0, 1);
    for _ in 0..100 {
        let t =
            if non_sinks.is_empty() { rng.random_range(0..k) } else { non_sinks[rng.random_range(0..non_sinks.len())] };
        let after: Vec<usize> = order[position[t] + 1..].to_vec();
        let y = if after.is_empty() {
            let others: Vec<usize> = (0..k).filter(|&n| n != t).collect();
            others[rng.random_range(0..others.len())]
        } else {
            after[rng.random_range(0..after.len())]
        };
        choice = (t, y);
        if dag.is_descendant(t, y) {
            break;
        }
    }
    let (treatment, outcome) = choice;

    let mut roles = vec![NodeRole::Covariate; k];
    roles[treatment] = NodeRole::Treatment;
    roles[outcome] = NodeRole::Outcome;
    for (n, role) in roles.iter_mut().enumerate() {
        if n != treatment && n != outcome && rng.random_bool(cfg.hidden_prob) {
            *role = NodeRole::Unobserved;
        }
    }

    let mut nodes = Vec::with_capacity(k);
    for n in 0..k {
        let n_par = dag.parents(n).len();
        if n_par == 0 {
            nodes.push(Structural::Exogenous { std: rng.random_range(cfg.exo_std_low..=cfg.exo_std_high) });
        } else {
            let sigma = sample_noise_std(cfg.noise_scale, rng);
            let mut mech = sample_mechanism(n_par, sigma, rng);
            if cfg.linear {
                mech.nonlinearity = Nonlinearity::Identity;
            }
            nodes.push(Structural::Additive(mech));
        }
    }
    let names = (0..k).map(|n| format!("z{n}")).collect();
    Scm::new(dag, nodes, roles, names, TreatmentRule::Threshold).expect("prior produces valid SCMs")
}

/// Observational rows and interventional queries of fixed sizes from a given SCM.
pub fn pair_from_scm<R: Rng + ?Sized>(
    scm: Scm,
    m_ob: usize,
    m_in: usize,
    treatment_p: f64,
    rng: &mut R,
) -> DatasetPair {
    let k = scm.node_count();
    let (t_idx, y_idx) = (scm.treatment(), scm.outcome());
    let mut obs = Vec::with_capacity(m_ob);
    for _ in 0..m_ob {
        let noise = NoiseVector::sample(k, rng);
        let values = scm.forward(&noise.values, None);
        obs.push(ObsRow { t: values[t_idx] as u8, x: scm.export_covariates(&values), y: values[y_idx] });
    }
    let mut queries = Vec::with_capacity(m_in);
    let mut targets = Vec::with_capacity(m_in);
    for _ in 0..m_in {
        let noise = NoiseVector::sample(k, rng);
        let t = u8::from(rng.random_bool(treatment_p));
        let pre = scm.forward(&noise.values, None);
        let post = scm.forward(&noise.values, Some(f64::from(t)));
        queries.push(Query { t, x: scm.export_covariates(&pre) });
        targets.push(post[y_idx]);
    }
    DatasetPair { n_features: scm.n_covariates(), obs, queries, targets: Some(targets), scm: Some(scm) }
}

/// One draw of the data-generating loop: SCM, split size, observational rows, paired queries.
pub fn sample_pair<R: Rng + ?Sized>(cfg: &PriorConfig, rng: &mut R) -> DatasetPair {
    let scm = sample_scm(cfg, rng);
    let m_ob = rng.random_range(cfg.m_min..=cfg.m_max);
    let m_in = cfg.m_max - m_ob;
    pair_from_scm(scm, m_ob, m_in, cfg.treatment_prior_p, rng)
}

/// Same draw structure with purely observational queries: the last `M_in` of
/// `M_max` observational rows are held out and their observed outcomes become
/// the targets.
pub fn sample_observational_pair<R: Rng + ?Sized>(cfg: &PriorConfig, rng: &mut R) -> DatasetPair {
    let scm = sample_scm(cfg, rng);
    let m_ob = rng.random_range(cfg.m_min..=cfg.m_max);
    let mut pair = pair_from_scm(scm, cfg.m_max, 0, cfg.treatment_prior_p, rng);
    let held_out = pair.obs.split_off(m_ob);
    pair.queries = held_out.iter().map(|r| Query { t: r.t, x: r.x.clone() }).collect();
    pair.targets = Some(held_out.iter().map(|r| r.y).collect());
    pair
}

pub(crate) fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}
