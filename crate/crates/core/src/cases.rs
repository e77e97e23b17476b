//! Named case-study structures and their evaluation suites.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::{pair_from_scm, sample_mechanism, sample_noise_std, sample_scm, DatasetPair, PriorConfig};
use crate::rng::{stream, Domain};
use crate::scm::{Dag, NodeRole, Scm, Structural, TreatmentRule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStudyId {
    ObservedConfounder,
    ObservedMediator,
    ConfounderMediator,
    UnobservedConfounder,
    BackDoor,
    FrontDoor,
    CommonEffect,
    SmallData,
    ComplexGraph,
}

impl CaseStudyId {
    pub const ALL: [CaseStudyId; 9] = [
        CaseStudyId::ObservedConfounder,
        CaseStudyId::ObservedMediator,
        CaseStudyId::ConfounderMediator,
        CaseStudyId::UnobservedConfounder,
        CaseStudyId::BackDoor,
        CaseStudyId::FrontDoor,
        CaseStudyId::CommonEffect,
        CaseStudyId::SmallData,
        CaseStudyId::ComplexGraph,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CaseStudyId::ObservedConfounder => "observed_confounder",
            CaseStudyId::ObservedMediator => "observed_mediator",
            CaseStudyId::ConfounderMediator => "confounder_mediator",
            CaseStudyId::UnobservedConfounder => "unobserved_confounder",
            CaseStudyId::BackDoor => "back_door",
            CaseStudyId::FrontDoor => "front_door",
            CaseStudyId::CommonEffect => "common_effect",
            CaseStudyId::SmallData => "small_data",
            CaseStudyId::ComplexGraph => "complex_graph",
        }
    }
}

impl fmt::Display for CaseStudyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CaseStudyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.trim().to_ascii_lowercase().replace('-', "_");
        CaseStudyId::ALL.iter().copied().find(|id| id.name() == norm).ok_or_else(|| Error::UnknownId(s.to_string()))
    }
}

/// Fixed graph of a case study: node names, roles and parent lists.
struct Layout {
    names: &'static [&'static str],
    roles: &'static [NodeRole],
    parents: &'static [&'static [usize]],
    rule: TreatmentRule,
}

use NodeRole::{Covariate as C, Outcome as Y, Treatment as T, Unobserved as U};

fn layout(id: CaseStudyId) -> Option<Layout> {
    let l = match id {
        // x1 → t, x1 → y, t → y
        CaseStudyId::ObservedConfounder => Layout {
            names: &["x1", "t", "y"],
            roles: &[C, T, Y],
            parents: &[&[], &[0], &[0, 1]],
            rule: TreatmentRule::Threshold,
        },
        // t ~ fair coin, t → x1 → y, t → y
        CaseStudyId::ObservedMediator => Layout {
            names: &["x1", "t", "y"],
            roles: &[C, T, Y],
            parents: &[&[1], &[], &[0, 1]],
            rule: TreatmentRule::ExogenousBernoulli,
        },
        // x2 → t → x1 → y, x2 → y, t → y
        CaseStudyId::ConfounderMediator => Layout {
            names: &["x1", "x2", "t", "y"],
            roles: &[C, C, T, Y],
            parents: &[&[2], &[], &[1], &[0, 1, 2]],
            rule: TreatmentRule::Threshold,
        },
        // hidden x2 → x1, x2 → t, x2 → y; x1 → t, x1 → y, t → y
        CaseStudyId::UnobservedConfounder => Layout {
            names: &["x1", "x2", "t", "y"],
            roles: &[C, U, T, Y],
            parents: &[&[1], &[], &[0, 1], &[0, 1, 2]],
            rule: TreatmentRule::Threshold,
        },
        // x2 → x1 → t, x2 → y, t → y
        CaseStudyId::BackDoor => Layout {
            names: &["x1", "x2", "t", "y"],
            roles: &[C, C, T, Y],
            parents: &[&[1], &[], &[0], &[1, 2]],
            rule: TreatmentRule::Threshold,
        },
        // t → x1 → y with hidden u → t, u → y
        CaseStudyId::FrontDoor => Layout {
            names: &["x1", "u", "t", "y"],
            roles: &[C, U, T, Y],
            parents: &[&[2], &[], &[1], &[0, 1]],
            rule: TreatmentRule::Threshold,
        },
        // t ~ fair coin and x1 independent; both cause y
        CaseStudyId::CommonEffect => Layout {
            names: &["x1", "t", "y"],
            roles: &[C, T, Y],
            parents: &[&[], &[], &[0, 1]],
            rule: TreatmentRule::ExogenousBernoulli,
        },
        CaseStudyId::SmallData | CaseStudyId::ComplexGraph => return None,
    };
    Some(l)
}

/// Parameter bounds used by the case-study builders.
pub fn case_config() -> PriorConfig {
    PriorConfig { exo_std_low: 1.0, exo_std_high: 3.0, noise_scale: 1.0, ..PriorConfig::default() }
}

/// Node-count ranges of the two random-graph case families.
fn random_graph_config(id: CaseStudyId, base: &PriorConfig) -> PriorConfig {
    let (k_min, k_max) = if id == CaseStudyId::ComplexGraph { (4, 10) } else { (2, 5) };
    PriorConfig { k_min, k_max, case: None, ..base.clone() }
}

/// Draws the parameters of a case study (weights, nonlinearities, noise scales).
pub fn build_case<R: Rng + ?Sized>(id: CaseStudyId, rng: &mut R) -> Scm {
    build_case_with(id, &case_config(), rng)
}

/// As [`build_case`] with exogenous and additive-noise bounds taken from `cfg`.
pub fn build_case_with<R: Rng + ?Sized>(id: CaseStudyId, cfg: &PriorConfig, rng: &mut R) -> Scm {
    let Some(l) = layout(id) else {
        return sample_scm(&random_graph_config(id, cfg), rng);
    };
    let k = l.names.len();
    let dag = Dag::new(l.parents.iter().map(|p| p.to_vec()).collect()).expect("case layouts are acyclic");
    // one additive-noise scale shared by all endogenous nodes of the case
    let sigma = sample_noise_std(cfg.noise_scale, rng);
    let mut nodes = Vec::with_capacity(k);
    for n in 0..k {
        let n_par = l.parents[n].len();
        let node = if n_par > 0 {
            Structural::Additive(sample_mechanism(n_par, sigma, rng))
        } else if l.roles[n] == NodeRole::Treatment {
            Structural::Exogenous { std: 1.0 }
        } else {
            Structural::Exogenous { std: rng.random_range(cfg.exo_std_low..=cfg.exo_std_high) }
        };
        nodes.push(node);
    }
    let names = l.names.iter().map(|s| s.to_string()).collect();
    Scm::new(dag, nodes, l.roles.to_vec(), names, l.rule).expect("case layouts are valid")
}

/// `n_datasets` independent draws of one case, each with a single dataset pair.
///
/// Observational rows and queries split `M_max` in half (observational side
/// rounded up). `M_max = rows`, except for `SmallData` where `M_max ~ U{5..100}`.
pub fn build_suite(id: CaseStudyId, n_datasets: usize, rows: usize, seed: u64) -> Result<Vec<DatasetPair>> {
    if n_datasets == 0 {
        return Err(Error::InvalidConfig("n_datasets must be >= 1".into()));
    }
    if rows < 4 && id != CaseStudyId::SmallData {
        return Err(Error::InvalidConfig("rows must be >= 4".into()));
    }
    Ok((0..n_datasets).map(|i| suite_member(id, rows, seed, i)).collect())
}

pub fn suite_member(id: CaseStudyId, rows: usize, seed: u64, index: usize) -> DatasetPair {
    let mut rng = stream(seed, Domain::Suite, ((id as u64) << 32) | index as u64);
    let scm = build_case(id, &mut rng);
    let m_max = if id == CaseStudyId::SmallData { rng.random_range(5..=100) } else { rows };
    let m_ob = m_max.div_ceil(2);
    pair_from_scm(scm, m_ob, m_max - m_ob, 0.5, &mut rng)
}

/// Realized outcome-noise scale of each suite member (the noise-ablation axis).
pub fn outcome_noise_levels(suite: &[DatasetPair]) -> Vec<f64> {
    suite.iter().map(|p| p.scm.as_ref().map_or(f64::NAN, Scm::outcome_noise_std)).collect()
}

/// Parent sets of a layout with role tags; `None` for random-graph families.
pub fn expected_structure(id: CaseStudyId) -> Option<(Vec<NodeRole>, Vec<Vec<usize>>)> {
    layout(id).map(|l| (l.roles.to_vec(), l.parents.iter().map(|p| p.to_vec()).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{intervene, sample_observational_row, sample_paired, NoiseVector};
    use alloc::vec;
    use alloc::vec::Vec;

    fn edges(scm: &Scm) -> Vec<(usize, usize)> {
        let mut e = vec![];
        for c in 0..scm.node_count() {
            for &p in scm.dag().parents(c) {
                e.push((p, c));
            }
        }
        e
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
        cov / libm::sqrt(va * vb)
    }

    #[test]
    fn parse_names() {
        for id in CaseStudyId::ALL {
            assert_eq!(id.name().parse::<CaseStudyId>().unwrap(), id);
        }
        assert_eq!("Back-Door".parse::<CaseStudyId>().unwrap(), CaseStudyId::BackDoor);
        assert!(matches!("nope".parse::<CaseStudyId>(), Err(Error::UnknownId(_))));
    }

    #[test]
    fn built_cases_match_their_layout() {
        let mut rng = stream(1, Domain::Suite, 0);
        for id in CaseStudyId::ALL {
            let scm = build_case(id, &mut rng);
            if let Some((roles, parents)) = expected_structure(id) {
                assert_eq!(scm.roles(), &roles[..], "{id}");
                for (k, p) in parents.iter().enumerate() {
                    assert_eq!(scm.dag().parents(k), &p[..], "{id} node {k}");
                }
            }
        }
    }

    #[test]
    fn observed_confounder_shape() {
        let scm = build_case(CaseStudyId::ObservedConfounder, &mut stream(2, Domain::Suite, 0));
        assert_eq!(scm.node_count(), 3);
        assert!(!scm.has_hidden());
        assert_eq!(edges(&scm), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn unobserved_confounder_hides_x2() {
        let scm = build_case(CaseStudyId::UnobservedConfounder, &mut stream(3, Domain::Suite, 0));
        assert_eq!(scm.role(1), NodeRole::Unobserved);
        assert_eq!(scm.covariates(), vec![0]);
        let suite = build_suite(CaseStudyId::UnobservedConfounder, 1, 20, 3).unwrap();
        assert_eq!(suite[0].n_features, 1);
        assert!(suite[0].obs.iter().all(|r| r.x.len() == 1));
    }

    #[test]
    fn mediator_treatment_is_a_fair_coin() {
        let scm = build_case(CaseStudyId::ObservedMediator, &mut stream(4, Domain::Suite, 0));
        assert_eq!(scm.treatment_rule(), TreatmentRule::ExogenousBernoulli);
        assert!(scm.dag().parents(scm.treatment()).is_empty());
        let mut rng = stream(4, Domain::Suite, 1);
        let n = 10_000;
        let ones: f64 =
            (0..n).map(|_| sample_observational_row(&scm, &NoiseVector::sample(3, &mut rng)).unwrap()[1]).sum();
        assert!((ones / n as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn confounder_forward_pass_by_hand() {
        // all ε = 0 and x1 = 0
        let scm = build_case(CaseStudyId::ObservedConfounder, &mut stream(5, Domain::Suite, 0));
        let row = sample_observational_row(&scm, &NoiseVector::zeros(3)).unwrap();
        let (Structural::Additive(ft), Structural::Additive(fy)) = (scm.structural(1), scm.structural(2)) else {
            panic!("endogenous t and y");
        };
        let t = if ft.nonlinearity.apply(0.0) > 0.0 { 1.0 } else { 0.0 };
        let y = fy.nonlinearity.apply(fy.weights[0] * 0.0 + fy.weights[1] * t);
        assert_eq!(row, vec![0.0, t, y]);
    }

    #[test]
    fn mediator_pairs_match_two_pass_simulation() {
        let scm = build_case(CaseStudyId::ObservedMediator, &mut stream(6, Domain::Suite, 0));
        let (Structural::Additive(fx), Structural::Additive(fy)) = (scm.structural(0), scm.structural(2)) else {
            panic!("endogenous x1 and y");
        };
        let mut rng = stream(6, Domain::Suite, 1);
        for _ in 0..200 {
            let u = NoiseVector::sample(3, &mut rng);
            for t_in in [0u8, 1] {
                let (x_pt, y_in) = sample_paired(&scm, t_in, &u).unwrap();
                // pass 1: natural treatment and mediator
                let t_ob = if u.values[1] > 0.0 { 1.0 } else { 0.0 };
                let x_ob = fx.nonlinearity.apply(fx.weights[0] * t_ob) + fx.noise_std * u.values[0];
                // pass 2: intervened treatment, same noise
                let t = f64::from(t_in);
                let x_do = fx.nonlinearity.apply(fx.weights[0] * t) + fx.noise_std * u.values[0];
                let y_do = fy.nonlinearity.apply(fy.weights[0] * x_do + fy.weights[1] * t) + fy.noise_std * u.values[2];
                assert_eq!(x_pt, vec![x_ob]);
                assert_eq!(y_in, y_do);
            }
        }
    }

    #[test]
    fn intervention_breaks_confounding() {
        // strong x1 → t dependence
        let dag = Dag::new(vec![vec![], vec![0], vec![0, 1]]).unwrap();
        let m = |w: &[f64]| {
            Structural::Additive(crate::scm::Mechanism {
                weights: w.to_vec(),
                nonlinearity: crate::scm::Nonlinearity::Tanh,
                noise_std: 0.1,
            })
        };
        let scm = Scm::new(
            dag,
            vec![Structural::Exogenous { std: 1.5 }, m(&[0.9]), m(&[0.5, 0.5])],
            vec![C, T, Y],
            vec!["x1".into(), "t".into(), "y".into()],
            TreatmentRule::Threshold,
        )
        .unwrap();
        let arms = [intervene(&scm, 0), intervene(&scm, 1)];
        let mut rng = stream(7, Domain::Suite, 0);
        let (mut x_ob, mut t_ob, mut x_do, mut t_do) = (vec![], vec![], vec![], vec![]);
        for _ in 0..10_000 {
            let row = sample_observational_row(&scm, &NoiseVector::sample(3, &mut rng)).unwrap();
            x_ob.push(row[0]);
            t_ob.push(row[1]);
            let arm = &arms[rng.random_range(0..2)];
            let row = sample_observational_row(arm, &NoiseVector::sample(3, &mut rng)).unwrap();
            x_do.push(row[0]);
            t_do.push(row[1]);
        }
        assert!(corr(&x_ob, &t_ob).abs() > 0.5);
        assert!(corr(&x_do, &t_do).abs() < 0.05);
    }

    #[test]
    fn common_effect_treatment_is_independent_of_covariates() {
        let scm = build_case(CaseStudyId::CommonEffect, &mut stream(8, Domain::Suite, 0));
        let mut rng = stream(8, Domain::Suite, 1);
        let rows: Vec<Vec<f64>> =
            (0..10_000).map(|_| sample_observational_row(&scm, &NoiseVector::sample(3, &mut rng)).unwrap()).collect();
        let x: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let t: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        assert!(corr(&x, &t).abs() < 0.05);
    }

    #[test]
    fn suites() {
        let suite = build_suite(CaseStudyId::BackDoor, 100, 50, 11).unwrap();
        assert_eq!(suite.len(), 100);
        let (roles, parents) = expected_structure(CaseStudyId::BackDoor).unwrap();
        for pair in &suite {
            let scm = pair.scm.as_ref().unwrap();
            assert_eq!(scm.roles(), &roles[..]);
            for (k, p) in parents.iter().enumerate() {
                assert_eq!(scm.dag().parents(k), &p[..]);
            }
            assert_eq!(pair.m_ob() + pair.m_in(), 50);
        }
        assert_eq!(
            build_suite(CaseStudyId::BackDoor, 1, 50, 3).unwrap(),
            build_suite(CaseStudyId::BackDoor, 1, 50, 3).unwrap()
        );
        for pair in build_suite(CaseStudyId::SmallData, 100, 1000, 5).unwrap() {
            assert!(pair.m_ob() + pair.m_in() <= 100);
            assert!(pair.m_ob() + pair.m_in() >= 5);
        }
        for pair in build_suite(CaseStudyId::ComplexGraph, 50, 20, 5).unwrap() {
            let k = pair.scm.as_ref().unwrap().node_count();
            assert!((4..=10).contains(&k));
        }
        assert!(build_suite(CaseStudyId::BackDoor, 0, 50, 3).is_err());
    }
}
