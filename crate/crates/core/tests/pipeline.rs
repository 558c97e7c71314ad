//! End-to-end checks through the public API: CSV round trip, RWR on an exactly
//! linear system, and observed-confounder benchmarking.

use mpse::data::from_csv;
use mpse::rwr::{bootstrap_se, RwrConfig};
use mpse::sensitivity::benchmark_confounder;
use mpse::simulation::LinearSystem;
use mpse::stats;
use rand::Rng;

#[test]
fn csv_round_trip_is_exact() {
    let data = LinearSystem::default().generate(300, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    data.to_csv(&path).unwrap();
    let (back, report) = from_csv(&path, &data.schema).unwrap();
    assert_eq!(report.rows_kept, 300);
    assert_eq!(report.dropped, 0);
    assert_eq!(back, data);
    assert!(back.validate().is_empty());
}

#[test]
fn rwr_recovers_linear_truth() {
    let sys = LinearSystem::default();
    let data = sys.generate(20_000, 3).unwrap();
    let est = bootstrap_se(&data, &RwrConfig { bootstrap: 100, seed: 1, ..Default::default() }).unwrap();
    let truth = sys.truth();
    let c = &est.components;
    for (name, got, se, want) in [
        ("tau0", c.tau[0], est.se.tau[0], truth.tau[0]),
        ("tau1", c.tau[1], est.se.tau[1], truth.tau[1]),
        ("delta0", c.delta[0], est.se.delta[0], truth.delta[0]),
        ("pi1", c.pi[0], est.se.pi[0], truth.pi[0]),
        ("pi2", c.pi[1], est.se.pi[1], truth.pi[1]),
    ] {
        assert!(se > 0.0, "{name}");
        assert!((got - want).abs() < 4.0 * se, "{name}: {got} vs {want} (se {se})");
    }
}

#[test]
fn benchmark_recovers_planted_confounder() {
    let mut data = LinearSystem::default().generate(40_000, 8).unwrap();
    let mut rng = stats::rng(9);
    let u: Vec<u8> = (0..data.n())
        .map(|i| rng.random_bool(0.3 + 0.4 * f64::from(data.m[0][i])) as u8)
        .collect();
    for i in 0..data.n() {
        data.y[i] += 0.8 * f64::from(u[i]);
    }
    let b = benchmark_confounder(&data, &u, 1).unwrap();
    assert!((b.alpha - 0.8).abs() < 4.0 * b.alpha_se.unwrap(), "{b:?}");
    assert!((b.beta - 0.4).abs() < 4.0 * b.beta_se.unwrap(), "{b:?}");
    let noise: Vec<u8> = (0..data.n()).map(|_| rng.random_bool(0.5) as u8).collect();
    let n = benchmark_confounder(&data, &noise, 1).unwrap();
    assert!(n.alpha.abs() < 4.0 * n.alpha_se.unwrap() && n.beta.abs() < 4.0 * n.beta_se.unwrap(), "{n:?}");
}
