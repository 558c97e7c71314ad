//! The influence-function estimator evaluated on an exact population with
//! saturated nuisances must reproduce the g-formula values.

use mpse::eif::{crossfit_estimate, crossfit_signals, Column, EifConfig, Functional};
use mpse::oracle::{exact_table, DiscreteLaw};
use mpse::LearnerSpec;

fn in_sample() -> EifConfig {
    EifConfig { folds: 1, censor: None, learner: LearnerSpec::saturated(), seed: 0 }
}

#[test]
fn saturated_plugin_matches_exact_values() {
    for (k, cards, seed) in [(0, vec![], 1), (1, vec![2], 2), (2, vec![2, 0], 3), (3, vec![2, 2, 1], 4)] {
        let law = DiscreteLaw::random(k, 3, &cards, seed).unwrap();
        let truth = exact_table(&law).unwrap();
        let data = law.population_dataset().unwrap();
        let (s, _) = crossfit_signals(&data, &in_sample()).unwrap();
        for f in Functional::all(k) {
            let got = s.mean(f.column());
            assert!((got - truth.get(f)).abs() < 1e-10, "K={k} {f:?}: {got} vs {}", truth.get(f));
        }
        let (est, full) = crossfit_estimate(&data, &in_sample()).unwrap();
        let paths = truth.paths();
        for j in 0..=k {
            assert!((est.components.theta[j] - paths.theta[j]).abs() < 1e-10);
            assert!((full.mean(Column::Theta(j)) - est.components.theta[j]).abs() < 1e-12);
        }
        assert!(est.additivity_gap() < 1e-10);
    }
}

#[test]
fn empty_stratum_is_a_positivity_error() {
    let law = DiscreteLaw::random(1, 2, &[2], 5).unwrap();
    let mut data = law.population_dataset().unwrap();
    // Force every treated unit to take the mediator.
    for i in 0..data.n() {
        if data.a[i] == 1 {
            data.m[0][i] = 1;
        }
    }
    let err = crossfit_estimate(&data, &in_sample()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("M_1 = 0"), "{err}");
}
