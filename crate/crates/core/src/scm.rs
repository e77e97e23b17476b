//! Structural causal models with additive-noise mechanisms.
//!
//! A node's value is `γ(Σ w_l z_l) + σ_ε·u` for endogenous nodes and
//! `σ_exo·u` for roots, where `u` is the node's entry in a [`NoiseVector`]
//! of standard-normal draws. The treatment node is binary: its raw value is
//! thresholded at zero. Interventions replace the treatment's structural
//! equation with a constant and cut its incoming edges.

use alloc::collections::BinaryHeap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Quadratic,
    Relu,
    Tanh,
    /// Linear mechanisms; never drawn by the general prior.
    Identity,
}

impl Nonlinearity {
    pub const ALL: [Nonlinearity; 3] = [Nonlinearity::Quadratic, Nonlinearity::Relu, Nonlinearity::Tanh];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Quadratic => x * x,
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::Tanh => libm::tanh(x),
            Nonlinearity::Identity => x,
        }
    }
}

/// Additive-noise mechanism `γ(wᵀ·parents) + ε` with `ε ~ N(0, noise_std²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    pub weights: Vec<f64>,
    pub nonlinearity: Nonlinearity,
    pub noise_std: f64,
}

impl Mechanism {
    /// Noise-free part `γ(wᵀ·parents)`.
    pub fn signal(&self, parent_values: &[f64]) -> Result<f64> {
        if parent_values.len() != self.weights.len() {
            return Err(Error::DimensionMismatch { expected: self.weights.len(), got: parent_values.len() });
        }
        let pre: f64 = self.weights.iter().zip(parent_values).map(|(w, z)| w * z).sum();
        Ok(self.nonlinearity.apply(pre))
    }
}

/// `γ(wᵀ·parents) + noise`.
pub fn eval_mechanism(mech: &Mechanism, parent_values: &[f64], noise: f64) -> Result<f64> {
    Ok(mech.signal(parent_values)? + noise)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Treatment,
    Covariate,
    Outcome,
    Unobserved,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentRule {
    /// `t = 1[raw value > 0]`, raw value from the node's structural equation.
    Threshold,
    /// Fair coin `t = 1[u_t > 0]`; the treatment must be a root.
    ExogenousBernoulli,
}

/// Structural equation of one node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structural {
    /// Root node, value `std·u`.
    Exogenous {
        std: f64,
    },
    Additive(Mechanism),
    /// Intervened value; the node has no parents.
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DagRepr")]
pub struct Dag {
    node_count: usize,
    parents: Vec<Vec<usize>>,
    topo_order: Vec<usize>,
}

#[derive(Deserialize)]
struct DagRepr {
    parents: Vec<Vec<usize>>,
}

impl TryFrom<DagRepr> for Dag {
    type Error = Error;

    fn try_from(r: DagRepr) -> Result<Self> {
        Dag::new(r.parents)
    }
}

impl Dag {
    pub fn new(parents: Vec<Vec<usize>>) -> Result<Self> {
        let n = parents.len();
        for (k, ps) in parents.iter().enumerate() {
            for (i, &p) in ps.iter().enumerate() {
                if p >= n {
                    return Err(Error::InvalidGraph(format!("node {k} has out-of-range parent {p}")));
                }
                if p == k {
                    return Err(Error::CycleDetected);
                }
                if ps[..i].contains(&p) {
                    return Err(Error::InvalidGraph(format!("node {k} lists parent {p} twice")));
                }
            }
        }
        let topo_order = topo_sort(&parents)?;
        Ok(Dag { node_count: n, parents, topo_order })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn parents(&self, k: usize) -> &[usize] {
        &self.parents[k]
    }

    pub fn topo_order(&self) -> &[usize] {
        &self.topo_order
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    pub fn children(&self, k: usize) -> Vec<usize> {
        (0..self.node_count).filter(|&c| self.parents[c].contains(&k)).collect()
    }

    /// Whether `to` is reachable from `from` along directed edges (a node is not its own descendant).
    pub fn is_descendant(&self, from: usize, to: usize) -> bool {
        let mut reach = vec![false; self.node_count];
        reach[from] = true;
        for &k in &self.topo_order {
            if !reach[k] && self.parents[k].iter().any(|&p| reach[p]) {
                reach[k] = true;
            }
        }
        from != to && reach[to]
    }

    fn cut_incoming(&mut self, k: usize) {
        self.parents[k].clear();
    }
}

/// Kahn's algorithm, always releasing the smallest ready index first, so the
/// result is the lexicographically smallest valid order.
pub fn topo_sort(parents: &[Vec<usize>]) -> Result<Vec<usize>> {
    let n = parents.len();
    let mut indegree = vec![0usize; n];
    let mut children = vec![Vec::new(); n];
    for (k, ps) in parents.iter().enumerate() {
        for &p in ps {
            if p >= n {
                return Err(Error::InvalidGraph(format!("node {k} has out-of-range parent {p}")));
            }
            indegree[k] += 1;
            children[p].push(k);
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&k| indegree[k] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(k)) = ready.pop() {
        order.push(k);
        for &c in &children[k] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    if order.len() != n {
        return Err(Error::CycleDetected);
    }
    Ok(order)
}

/// One standard-normal draw per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseVector {
    pub values: Vec<f64>,
}

impl NoiseVector {
    pub fn new(values: Vec<f64>) -> Self {
        NoiseVector { values }
    }

    pub fn zeros(k: usize) -> Self {
        NoiseVector { values: vec![0.0; k] }
    }

    pub fn sample<R: rand::Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        NoiseVector { values: (0..k).map(|_| StandardNormal.sample(rng)).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScmRepr")]
pub struct Scm {
    dag: Dag,
    nodes: Vec<Structural>,
    roles: Vec<NodeRole>,
    names: Vec<String>,
    treatment_rule: TreatmentRule,
    treatment: usize,
    outcome: usize,
}

#[derive(Deserialize)]
struct ScmRepr {
    dag: Dag,
    nodes: Vec<Structural>,
    roles: Vec<NodeRole>,
    names: Vec<String>,
    treatment_rule: TreatmentRule,
}

impl TryFrom<ScmRepr> for Scm {
    type Error = Error;

    fn try_from(r: ScmRepr) -> Result<Self> {
        Scm::new(r.dag, r.nodes, r.roles, r.names, r.treatment_rule)
    }
}

impl Scm {
    pub fn new(
        dag: Dag,
        nodes: Vec<Structural>,
        roles: Vec<NodeRole>,
        names: Vec<String>,
        treatment_rule: TreatmentRule,
    ) -> Result<Self> {
        let k = dag.node_count();
        if nodes.len() != k || roles.len() != k || names.len() != k {
            return Err(Error::InvalidScm(format!(
                "{k} nodes but {} equations, {} roles, {} names",
                nodes.len(),
                roles.len(),
                names.len()
            )));
        }
        let find_unique = |role: NodeRole| -> Result<usize> {
            let mut it = roles.iter().enumerate().filter(|(_, &r)| r == role).map(|(i, _)| i);
            match (it.next(), it.next()) {
                (Some(i), None) => Ok(i),
                _ => Err(Error::InvalidScm(format!("expected exactly one {role:?} node"))),
            }
        };
        let treatment = find_unique(NodeRole::Treatment)?;
        let outcome = find_unique(NodeRole::Outcome)?;
        for (i, node) in nodes.iter().enumerate() {
            let n_par = dag.parents(i).len();
            match node {
                Structural::Exogenous { std } => {
                    if n_par != 0 {
                        return Err(Error::InvalidScm(format!("node {i} is exogenous but has parents")));
                    }
                    if !(std.is_finite() && *std >= 0.0) {
                        return Err(Error::InvalidScm(format!("node {i} has invalid exogenous std {std}")));
                    }
                }
                Structural::Additive(m) => {
                    if m.weights.len() != n_par {
                        return Err(Error::InvalidScm(format!(
                            "node {i} has {n_par} parents but {} weights",
                            m.weights.len()
                        )));
                    }
                    if !(m.noise_std.is_finite() && m.noise_std >= 0.0) {
                        return Err(Error::InvalidScm(format!("node {i} has invalid noise std {}", m.noise_std)));
                    }
                }
                Structural::Constant(_) => {
                    if n_par != 0 {
                        return Err(Error::InvalidScm(format!("constant node {i} has parents")));
                    }
                }
            }
        }
        if treatment_rule == TreatmentRule::ExogenousBernoulli && !dag.parents(treatment).is_empty() {
            return Err(Error::InvalidScm("exogenous Bernoulli treatment must be a root".into()));
        }
        Ok(Scm { dag, nodes, roles, names, treatment_rule, treatment, outcome })
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn node_count(&self) -> usize {
        self.dag.node_count()
    }

    pub fn structural(&self, k: usize) -> &Structural {
        &self.nodes[k]
    }

    pub fn role(&self, k: usize) -> NodeRole {
        self.roles[k]
    }

    pub fn roles(&self) -> &[NodeRole] {
        &self.roles
    }

    pub fn name(&self, k: usize) -> &str {
        &self.names[k]
    }

    pub fn treatment_rule(&self) -> TreatmentRule {
        self.treatment_rule
    }

    pub fn treatment(&self) -> usize {
        self.treatment
    }

    pub fn outcome(&self) -> usize {
        self.outcome
    }

    /// Observed covariate nodes in ascending index order (the export column order).
    pub fn covariates(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&k| self.roles[k] == NodeRole::Covariate).collect()
    }

    pub fn n_covariates(&self) -> usize {
        self.roles.iter().filter(|&&r| r == NodeRole::Covariate).count()
    }

    pub fn has_hidden(&self) -> bool {
        self.roles.contains(&NodeRole::Unobserved)
    }

    /// Noise standard deviation of the outcome's mechanism (0 for a root outcome).
    pub fn outcome_noise_std(&self) -> f64 {
        match &self.nodes[self.outcome] {
            Structural::Additive(m) => m.noise_std,
            _ => 0.0,
        }
    }

    /// Value of node `k` given already-computed parent values and its standard-normal draw.
    pub(crate) fn node_value(&self, k: usize, values: &[f64], u: f64) -> f64 {
        let raw = match &self.nodes[k] {
            Structural::Constant(c) => return *c,
            Structural::Exogenous { std } => std * u,
            Structural::Additive(m) => {
                let pre: f64 = m.weights.iter().zip(self.dag.parents(k)).map(|(w, &p)| w * values[p]).sum();
                m.nonlinearity.apply(pre) + m.noise_std * u
            }
        };
        if k == self.treatment {
            let on = match self.treatment_rule {
                TreatmentRule::Threshold => raw > 0.0,
                TreatmentRule::ExogenousBernoulli => u > 0.0,
            };
            if on {
                1.0
            } else {
                0.0
            }
        } else {
            raw
        }
    }

    /// Forward pass in topological order, optionally with the treatment clamped.
    pub(crate) fn forward(&self, u: &[f64], do_t: Option<f64>) -> Vec<f64> {
        let mut values = vec![0.0; self.node_count()];
        for &k in self.dag.topo_order() {
            values[k] = match do_t {
                Some(t) if k == self.treatment => t,
                _ => self.node_value(k, &values, u[k]),
            };
        }
        values
    }

    pub(crate) fn export_covariates(&self, values: &[f64]) -> Vec<f64> {
        (0..self.node_count()).filter(|&k| self.roles[k] == NodeRole::Covariate).map(|k| values[k]).collect()
    }
}

fn check_noise(scm: &Scm, noise: &NoiseVector) -> Result<()> {
    if noise.len() != scm.node_count() {
        return Err(Error::DimensionMismatch { expected: scm.node_count(), got: noise.len() });
    }
    Ok(())
}

/// Full node-value vector of one observational draw.
pub fn sample_observational_row(scm: &Scm, noise: &NoiseVector) -> Result<Vec<f64>> {
    check_noise(scm, noise)?;
    Ok(scm.forward(&noise.values, None))
}

/// Graph surgery `do(t = t_value)`: the treatment loses its parents and becomes constant.
pub fn intervene(scm: &Scm, t_value: u8) -> Scm {
    let mut out = scm.clone();
    out.dag.cut_incoming(scm.treatment);
    out.nodes[scm.treatment] = Structural::Constant(f64::from(t_value.min(1)));
    out
}

/// Pre-treatment covariates and the interventional outcome under one shared noise draw.
pub fn sample_paired(scm: &Scm, t_value: u8, noise: &NoiseVector) -> Result<(Vec<f64>, f64)> {
    check_noise(scm, noise)?;
    let observational = scm.forward(&noise.values, None);
    let intervened = scm.forward(&noise.values, Some(f64::from(t_value.min(1))));
    Ok((scm.export_covariates(&observational), intervened[scm.outcome]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("z{i}")).collect()
    }

    fn mech(weights: &[f64], nl: Nonlinearity, noise_std: f64) -> Structural {
        Structural::Additive(Mechanism { weights: weights.to_vec(), nonlinearity: nl, noise_std })
    }

    /// t → y with weight 1, ReLU and unit noise scale on y.
    fn chain_t_y() -> Scm {
        let dag = Dag::new(vec![vec![], vec![0]]).unwrap();
        Scm::new(
            dag,
            vec![Structural::Exogenous { std: 1.0 }, mech(&[1.0], Nonlinearity::Relu, 1.0)],
            vec![NodeRole::Treatment, NodeRole::Outcome],
            vec!["t".to_string(), "y".to_string()],
            TreatmentRule::ExogenousBernoulli,
        )
        .unwrap()
    }

    #[test]
    fn topo_sort_examples() {
        assert_eq!(topo_sort(&[vec![], vec![0], vec![1]]).unwrap(), vec![0, 1, 2]);
        assert_eq!(topo_sort(&[vec![], vec![], vec![]]).unwrap(), vec![0, 1, 2]);
        assert_eq!(topo_sort(&[vec![1], vec![0]]), Err(Error::CycleDetected));
        assert_eq!(topo_sort(&[vec![2], vec![], vec![1]]).unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn dag_rejects_duplicates_and_self_loops() {
        assert!(matches!(Dag::new(vec![vec![], vec![0, 0]]), Err(Error::InvalidGraph(_))));
        assert_eq!(Dag::new(vec![vec![0]]), Err(Error::CycleDetected));
        assert!(matches!(Dag::new(vec![vec![3]]), Err(Error::InvalidGraph(_))));
    }

    #[test]
    fn mechanism_examples() {
        let relu = Mechanism { weights: vec![1.0], nonlinearity: Nonlinearity::Relu, noise_std: 0.0 };
        assert_eq!(eval_mechanism(&relu, &[-2.0], 0.0).unwrap(), 0.0);
        let tanh = Mechanism { weights: vec![1.0], nonlinearity: Nonlinearity::Tanh, noise_std: 0.0 };
        assert_eq!(eval_mechanism(&tanh, &[0.0], 0.3).unwrap(), 0.3);
        let quad = Mechanism { weights: vec![1.0, 1.0], nonlinearity: Nonlinearity::Quadratic, noise_std: 0.0 };
        assert_eq!(eval_mechanism(&quad, &[1.0, 2.0], 0.5).unwrap(), 9.5);
        assert_eq!(eval_mechanism(&quad, &[1.0], 0.5), Err(Error::DimensionMismatch { expected: 2, got: 1 }));
    }

    #[test]
    fn observational_row_examples() {
        let scm = chain_t_y();
        let row = sample_observational_row(&scm, &NoiseVector::new(vec![1.0, 0.0])).unwrap();
        assert_eq!(row, vec![1.0, 1.0]);
        let row = sample_observational_row(&scm, &NoiseVector::new(vec![1.0, 0.2])).unwrap();
        assert_eq!(row, vec![1.0, 1.2]);
        assert!(sample_observational_row(&scm, &NoiseVector::zeros(3)).is_err());
    }

    #[test]
    fn intervene_makes_treatment_constant() {
        let dag = Dag::new(vec![vec![], vec![0], vec![0, 1]]).unwrap();
        let scm = Scm::new(
            dag,
            vec![
                Structural::Exogenous { std: 2.0 },
                mech(&[0.7], Nonlinearity::Tanh, 0.1),
                mech(&[0.5, 1.0], Nonlinearity::Relu, 0.1),
            ],
            vec![NodeRole::Covariate, NodeRole::Treatment, NodeRole::Outcome],
            names(3),
            TreatmentRule::Threshold,
        )
        .unwrap();
        let done = intervene(&scm, 1);
        assert!(done.dag().parents(1).is_empty());
        assert_eq!(done.dag().parents(2), scm.dag().parents(2));
        assert_eq!(done.structural(1), &Structural::Constant(1.0));
        for u in [-3.0, -0.1, 0.0, 0.4, 5.0] {
            let row = sample_observational_row(&done, &NoiseVector::new(vec![u, -u, 0.3])).unwrap();
            assert_eq!(row[1], 1.0);
        }
        assert!(topo_sort(&done.dag().parents).is_ok());

        // a parentless treatment keeps the graph
        let root = chain_t_y();
        let done = intervene(&root, 0);
        assert_eq!(done.dag(), root.dag());
        assert_eq!(done.structural(0), &Structural::Constant(0.0));
    }

    #[test]
    fn paired_sampling_examples() {
        let scm = chain_t_y();
        let zero = NoiseVector::zeros(2);
        let (x1, y1) = sample_paired(&scm, 1, &zero).unwrap();
        let (_, y0) = sample_paired(&scm, 0, &zero).unwrap();
        assert!(x1.is_empty());
        assert_eq!(y1 - y0, 1.0_f64.max(0.0) - 0.0);

        // y independent of t: interventional y equals observational y
        let dag = Dag::new(vec![vec![], vec![]]).unwrap();
        let scm = Scm::new(
            dag,
            vec![Structural::Exogenous { std: 1.0 }, Structural::Exogenous { std: 1.5 }],
            vec![NodeRole::Treatment, NodeRole::Outcome],
            names(2),
            TreatmentRule::Threshold,
        )
        .unwrap();
        let noise = NoiseVector::new(vec![-0.3, 0.8]);
        let obs = sample_observational_row(&scm, &noise).unwrap();
        for t in [0, 1] {
            assert_eq!(sample_paired(&scm, t, &noise).unwrap().1, obs[1]);
        }
    }

    #[test]
    fn descendants() {
        let dag = Dag::new(vec![vec![], vec![0], vec![1], vec![]]).unwrap();
        assert!(dag.is_descendant(0, 2));
        assert!(!dag.is_descendant(2, 0));
        assert!(!dag.is_descendant(0, 3));
        assert!(!dag.is_descendant(1, 1));
    }

    #[test]
    fn scm_validation() {
        let dag = Dag::new(vec![vec![], vec![0]]).unwrap();
        let bad = Scm::new(
            dag.clone(),
            vec![Structural::Exogenous { std: 1.0 }, mech(&[1.0, 2.0], Nonlinearity::Relu, 0.1)],
            vec![NodeRole::Treatment, NodeRole::Outcome],
            names(2),
            TreatmentRule::Threshold,
        );
        assert!(bad.is_err());
        let two_treat = Scm::new(
            dag,
            vec![Structural::Exogenous { std: 1.0 }, mech(&[1.0], Nonlinearity::Relu, 0.1)],
            vec![NodeRole::Treatment, NodeRole::Treatment],
            names(2),
            TreatmentRule::Threshold,
        );
        assert!(two_treat.is_err());
    }
}
