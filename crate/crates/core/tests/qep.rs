use proptest::prelude::*;
use qep_core::energy::WeightVector;
use qep_core::qep::{
    qep_contrastive_loss, qep_cost, qep_cost_oracle, qep_gradient, weights_for, Estimator, QepConfig, QepNudge,
};
use qep_core::rng::{StreamKey, StreamRng};
use qep_core::tfim::TfimSpec;
use rand::Rng;

fn rng(tag: u64, seed: u64) -> StreamRng {
    StreamKey::new(tag).child(seed).rng()
}

struct Case {
    spec: TfimSpec,
    w: WeightVector,
    x: Vec<f64>,
    y: Vec<f64>,
}

fn tfim(n: usize, seed: u64) -> Case {
    // Reading out against spin 0 breaks the global spin-flip symmetry that
    // would otherwise pin the cost gradient at zero.
    let inputs: Vec<usize> = (1..n - 1).take(1).collect();
    let spec = TfimSpec::complete(n, inputs.clone(), vec![n - 1]).unwrap().with_readout_reference(Some(0)).unwrap();
    let mut r = rng(30, seed);
    let mut v: Vec<f64> = (0..spec.couplings().len()).map(|_| r.random_range(-1.0..1.0)).collect();
    v.extend((0..n).map(|_| r.random_range(0.3..1.0)));
    let x = inputs.iter().map(|_| r.random_range(-1.0..1.0)).collect();
    let y = vec![if r.random::<bool>() { 1.0 } else { -1.0 }];
    Case { w: weights_for(&spec, v).unwrap(), spec, x, y }
}

fn cfg(beta: f64, estimator: Estimator, nudge: QepNudge, shots: usize) -> QepConfig {
    QepConfig { beta, shots, estimator, nudge, ..QepConfig::default() }
}

fn error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn halving_beta_shrinks_error_at_estimator_order() {
    for seed in 0..12 {
        let n = 2 + seed as usize % 5;
        let c = tfim(n, seed);
        let oracle = qep_cost_oracle(&c.spec, &c.w, &c.x, &c.y, 1e-5, 0).unwrap();
        let err = |nudge, beta| {
            let g = qep_gradient(&c.spec, &c.w, &c.x, &c.y, &cfg(beta, Estimator::ExactExpectation, nudge, 1), StreamKey::new(0))
                .unwrap();
            error(&g.estimate.values, &oracle.values)
        };
        let one = err(QepNudge::OneSided, 1e-2) / err(QepNudge::OneSided, 5e-3);
        assert!(error(&oracle.values, &vec![0.0; c.w.len()]) > 1e-3, "n={n} seed {seed}: vanishing gradient");
        let sym = err(QepNudge::Symmetric, 1e-2) / err(QepNudge::Symmetric, 5e-3);
        assert!((1.6..=2.4).contains(&one), "n={n} seed {seed}: one-sided ratio {one}");
        assert!((3.2..=4.8).contains(&sym), "n={n} seed {seed}: symmetric ratio {sym}");
    }
}

#[test]
fn sampled_estimate_is_unbiased() {
    let c = tfim(3, 1);
    let reps = 200;
    for nudge in [QepNudge::OneSided, QepNudge::Symmetric] {
        let exact = qep_gradient(&c.spec, &c.w, &c.x, &c.y, &cfg(0.2, Estimator::ExactExpectation, nudge, 1), StreamKey::new(0))
            .unwrap()
            .estimate
            .values;
        let sampled = cfg(0.2, Estimator::Sampled, nudge, 200);
        let draws: Vec<Vec<f64>> = (0..reps)
            .map(|r| qep_gradient(&c.spec, &c.w, &c.x, &c.y, &sampled, StreamKey::new(31).child(r)).unwrap().estimate.values)
            .collect();
        for k in 0..exact.len() {
            let mean = draws.iter().map(|d| d[k]).sum::<f64>() / reps as f64;
            let var = draws.iter().map(|d| (d[k] - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
            let se = (var / reps as f64).sqrt();
            assert!((mean - exact[k]).abs() <= 3.0 * se, "{nudge:?} weight {k}: {mean} vs {} (se {se})", exact[k]);
        }
    }
}

#[test]
fn each_phase_prepares_two_families() {
    let c = tfim(4, 2);
    let shots = 300;
    for (nudge, phases) in [(QepNudge::OneSided, [0.0, 0.1]), (QepNudge::Symmetric, [-0.1, 0.1])] {
        let g = qep_gradient(&c.spec, &c.w, &c.x, &c.y, &cfg(0.1, Estimator::Sampled, nudge, shots), StreamKey::new(3)).unwrap();
        let ledger = g.ledger.unwrap();
        assert_eq!(ledger.phases.iter().map(|p| p.beta).collect::<Vec<_>>(), phases);
        for p in &ledger.phases {
            assert_eq!(p.shots.preparations, vec![("zz+cost".to_string(), shots), ("x".to_string(), shots)]);
            assert_eq!(p.shots.cost.len(), shots);
            assert!(p.shots.outcomes.iter().all(|o| o.len() == shots));
        }
        assert_eq!(ledger.total_preparations(), 2 * 2 * shots);
        // One preparation per family, however many weights it serves.
        assert!(ledger.total_preparations() < 2 * c.w.len() * shots);
    }
}

#[test]
fn each_component_uses_only_its_own_outcomes() {
    let c = tfim(3, 4);
    let g = qep_gradient(&c.spec, &c.w, &c.x, &c.y, &cfg(0.1, Estimator::Sampled, QepNudge::Symmetric, 500), StreamKey::new(5))
        .unwrap();
    let ledger = g.ledger.unwrap();
    let m = c.w.len();
    for k in 0..m {
        assert_eq!(ledger.estimate_for(k), g.estimate.values[k]);
        let mut scrambled = ledger.clone();
        for p in &mut scrambled.phases {
            for (j, o) in p.shots.outcomes.iter_mut().enumerate() {
                if j != k {
                    o.iter_mut().for_each(|v| *v = -*v + 3.0);
                }
            }
            p.shots.cost.iter_mut().for_each(|v| *v += 1.0);
        }
        assert_eq!(scrambled.estimate_for(k), ledger.estimate_for(k), "weight {k}");
    }
    // Single-shot Pauli outcomes are eigenvalues of a Pauli string.
    for p in &ledger.phases {
        assert!(p.shots.outcomes.iter().flatten().all(|&v| v == 1.0 || v == -1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn contrastive_losses_bracket_the_cost(seed: u64, n in 2usize..=5, beta in 1e-3..0.5f64) {
        let c = tfim(n, seed);
        let cost = qep_cost(&c.spec, &c.w.values, &c.x, &c.y, 0).unwrap();
        let lo = qep_contrastive_loss(&c.spec, &c.w, &c.x, &c.y, beta, 0).unwrap();
        let hi = qep_contrastive_loss(&c.spec, &c.w, &c.x, &c.y, -beta, 0).unwrap();
        prop_assert!(lo <= cost + 1e-12 && cost <= hi + 1e-12, "{lo} <= {cost} <= {hi}");
    }

    #[test]
    fn same_key_reproduces_sampled_estimate(seed: u64) {
        let c = tfim(3, seed);
        let s = cfg(0.1, Estimator::Sampled, QepNudge::OneSided, 2000);
        let a = qep_gradient(&c.spec, &c.w, &c.x, &c.y, &s, StreamKey::new(seed)).unwrap();
        let b = qep_gradient(&c.spec, &c.w, &c.x, &c.y, &s, StreamKey::new(seed)).unwrap();
        prop_assert_eq!(a.estimate.values, b.estimate.values);
    }
}
