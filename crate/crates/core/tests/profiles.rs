use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use proptest::prelude::*;
use rand::Rng;

use burdenlab::dynamics::{CellParams, ConstraintConfig, Enforcement, ModelDims};
use burdenlab::model::{DeployedModel, SequenceModel};
use burdenlab::profiles::{
    capability, coupling_fit, gaps, outcome_label, predict, profile, proposition_outcome, Outcome,
    ProbeConfig, StabilityProfile, Thresholds,
};
use burdenlab::rng;
use burdenlab::tasks::{SequenceTask, TaskKind};
use burdenlab::{Error, Result};

/// Emits a confident one-hot on the correct label at every position.
struct Oracle(SequenceTask);

impl SequenceModel for Oracle {
    fn logits(&self, _: &ConstraintConfig, tokens: &[usize], _: Option<&[Vec<f64>]>) -> Result<Vec<Vec<f64>>> {
        let task = &self.0;
        let mut out = vec![vec![0.0; task.vocab]; tokens.len()];
        match task.kind {
            TaskKind::Copy => {
                let t = task.length;
                for (i, row) in out.iter_mut().enumerate().skip(tokens.len() - t) {
                    row[tokens[i + t - tokens.len()]] = 10.0;
                }
            }
            TaskKind::Parity | TaskKind::Modsum => {
                let k = task.num_classes();
                let mut acc = 0;
                for (row, tok) in out.iter_mut().zip(tokens) {
                    acc = (acc + tok) % k;
                    row[acc] = 10.0;
                }
            }
        }
        Ok(out)
    }
}

/// Logits seeded by the input, so repeated calls agree.
struct Coin(usize);

impl SequenceModel for Coin {
    fn logits(&self, _: &ConstraintConfig, tokens: &[usize], _: Option<&[Vec<f64>]>) -> Result<Vec<Vec<f64>>> {
        let mut h = DefaultHasher::new();
        tokens.hash(&mut h);
        let mut r = rng::stream(h.finish(), "coin");
        Ok(tokens.iter().map(|_| (0..self.0).map(|_| r.random::<f64>()).collect()).collect())
    }
}

fn yard() -> ConstraintConfig {
    ConstraintConfig::default()
}

#[test]
fn oracle_scores_perfectly() {
    for task in [
        SequenceTask::copy(7, 4, 2),
        SequenceTask::parity(4, 9),
        SequenceTask::modsum(8, 6, 5),
    ] {
        let probe = ProbeConfig { sample_size: 200, ..ProbeConfig::default() };
        let k = capability(&Oracle(task), &yard(), &task, &probe).unwrap();
        assert_eq!(k.accuracy, 1.0, "{:?}", task.kind);
        assert_eq!(k.std_error, 0.0);
    }
}

#[test]
fn random_logits_score_at_chance() {
    let task = SequenceTask::modsum(8, 6, 5);
    let probe = ProbeConfig { sample_size: 2000, ..ProbeConfig::default() };
    let k = capability(&Coin(8), &yard(), &task, &probe).unwrap();
    assert_eq!(k.sample_size, 2000);
    let se = (0.2f64 * 0.8 / 2000.0).sqrt();
    assert!((k.accuracy - 0.2).abs() < 3.0 * se, "accuracy {}", k.accuracy);
}

#[test]
fn predictions_ignore_logits_past_the_class_range() {
    assert_eq!(predict(&[0.1, 0.5, 0.2, 9.0], 3), 1);
    assert_eq!(predict(&[0.3, 0.3], 2), 0);
}

fn model(seed: u64) -> DeployedModel {
    DeployedModel::new(
        CellParams::init_uniform(ModelDims::new(6, 3, 6), 1.0, &mut rng::stream(seed, "m")),
        Enforcement::Soft,
    )
}

fn probe() -> ProbeConfig {
    ProbeConfig { sample_size: 40, ..ProbeConfig::default() }
}

#[test]
fn profiles_are_deterministic_and_bounded() {
    let task = SequenceTask::modsum(6, 5, 4).with_seed(3);
    let a = profile(&model(1), &yard(), &task, &probe()).unwrap();
    let b = profile(&model(1), &yard(), &task, &probe()).unwrap();
    assert_eq!(a, b);
    assert!(a.stability.components().iter().all(|c| (0.0..=1.0).contains(c)));
    assert!(a.burden_mean >= 0.0);
}

#[test]
fn zero_noise_gives_zero_divergence() {
    let task = SequenceTask::parity(6, 5);
    let quiet = ProbeConfig { divergence_sigma: 0.0, noise_sigmas: [0.0, 0.0], ..probe() };
    let r = profile(&model(2), &yard(), &task, &quiet).unwrap();
    assert_eq!(r.stability.divergence, 0.0);
    assert_eq!(r.stability.acc_noise_005, r.capability.accuracy);
    assert_eq!(r.stability.acc_noise_010, r.capability.accuracy);
}

#[test]
fn hard_deployment_never_violates_feasibility() {
    let task = SequenceTask::modsum(6, 8, 4);
    let m = DeployedModel::new(model(3).params, Enforcement::Hard);
    let tight = ConstraintConfig { r0: 0.5, r_min: 0.2, ..yard() };
    let r = profile(&m, &tight, &task, &probe()).unwrap();
    assert_eq!(r.stability.feasibility_violation_rate, 0.0);
}

fn stability() -> impl Strategy<Value = StabilityProfile> {
    (prop::array::uniform6(0.0f64..=1.0), 0.0f64..5.0).prop_map(|(a, d)| StabilityProfile {
        acc_noise_005: a[0],
        acc_noise_010: a[1],
        acc_h2: a[2],
        acc_h4: a[3],
        burden_violation_rate: a[4],
        feasibility_violation_rate: a[5],
        divergence: d,
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn gaps_are_bounded(tk in 0.0f64..=1.0, sk in 0.0f64..=1.0, tr in stability(), sr in stability()) {
        let g = gaps(tk, sk, &tr, &sr);
        prop_assert!(g.delta_k >= 0.0 && g.delta_k <= 1.0);
        prop_assert!(g.delta_r >= 0.0 && g.delta_r <= 1.0);
        let same = gaps(tk, tk, &tr, &tr);
        prop_assert_eq!(same.delta_k, 0.0);
        prop_assert_eq!(same.delta_r, 0.0);
        let flip = gaps(sk, tk, &sr, &tr);
        prop_assert_eq!(flip.delta_r, g.delta_r);
    }

    #[test]
    fn collinear_points_are_recovered(
        slope in -3.0f64..3.0,
        intercept in -1.0f64..1.0,
        xs in prop::collection::btree_set(0u32..1000, 2..12),
    ) {
        let pts: Vec<(f64, f64)> = xs.iter().map(|&x| {
            let x = x as f64 / 1000.0;
            (x, slope * x + intercept)
        }).collect();
        let fit = coupling_fit(&pts).unwrap();
        prop_assert!((fit.slope - slope).abs() < 1e-9);
        prop_assert!((fit.intercept - intercept).abs() < 1e-9);
        prop_assert!(fit.residual < 1e-12);
        for (x, y) in &pts {
            prop_assert!((fit.slope * x + fit.intercept - y).abs() < 1e-12);
        }
    }
}

#[test]
fn degenerate_regressors_are_rejected() {
    assert!(matches!(coupling_fit(&[(0.1, 0.2)]), Err(Error::DegenerateRegressor)));
    assert!(matches!(coupling_fit(&[(0.1, 0.2), (0.1, 0.5)]), Err(Error::DegenerateRegressor)));
}

#[test]
fn outcome_classification() {
    let th = Thresholds::default();
    assert_eq!(proposition_outcome(0.2, 0.0, 1.0, 1.0, &th), [Outcome::CapabilityGap]);
    assert_eq!(proposition_outcome(0.0, 0.0, 1.0, 1.0, &th), [Outcome::PropositionViolated]);
    let all = proposition_outcome(0.2, 0.5, 3.0, 1.0, &th);
    assert_eq!(outcome_label(&all), "capability_gap+stability_gap+hidden_burden");
    // thresholds are strict
    assert_eq!(proposition_outcome(0.05, 0.1, 1.5, 1.0, &th), [Outcome::PropositionViolated]);
}
