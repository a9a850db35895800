use acte::inference::{bootstrap_draws, BootstrapConfig, ResampleUnit};
use acte::{bootstrap_curve, ActeError, CovariateSchema, CurveKind, Dataset, GameRecord, MetaLearner, MetaSpec, RegressorSpec};
use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn panel(seed: u64, n: usize, noise: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = NaiveDate::from_ymd_opt(2019, 3, 1).unwrap();
    let recs: Vec<_> = (0..n)
        .map(|i| {
            let a = 20 + (i % 11) as i32;
            let w = u8::from(i % 4 == 0);
            let y = -0.05 * f64::from(a - 25).powi(2) + 2.0 * f64::from(w) + noise * rng.random_range(-1.0..1.0);
            GameRecord {
                player_id: format!("p{}", i % 25),
                game_date: d,
                prev_game_date: None,
                age: a,
                treatment: w,
                covariates: vec![],
                outcomes: vec![("y".into(), y)],
                possessions: None,
                prev_game_minutes: None,
            }
        })
        .collect();
    Dataset::from_records(CovariateSchema::default(), &recs).unwrap()
}

fn grid() -> Vec<i32> {
    (20..=30).collect()
}

fn s_ols() -> MetaSpec {
    MetaSpec::new(MetaLearner::S, RegressorSpec::ols())
}

#[test]
fn single_replicate_band_collapses() {
    let ds = panel(1, 220, 1.0);
    let cfg = BootstrapConfig {
        replicates: 1,
        ..Default::default()
    };
    let c = bootstrap_curve(&ds, &s_ols(), &grid(), &cfg).unwrap();
    assert_eq!(c.lower, c.upper);
}

#[test]
fn noiseless_data_gives_degenerate_bands() {
    let ds = panel(2, 220, 0.0);
    let cfg = BootstrapConfig {
        replicates: 30,
        ..Default::default()
    };
    for learner in [MetaLearner::S, MetaLearner::T] {
        let c = bootstrap_curve(&ds, &MetaSpec::new(learner, RegressorSpec::ols()), &grid(), &cfg).unwrap();
        let (lo, hi) = (c.lower.unwrap(), c.upper.unwrap());
        for i in 0..lo.len() {
            assert!(hi[i] - lo[i] <= 1e-6);
            assert!((c.values[i] - 2.0).abs() < 1e-8);
        }
    }
}

#[test]
fn bands_are_deterministic_and_seed_dependent() {
    let ds = panel(3, 220, 1.0);
    let cfg = BootstrapConfig {
        replicates: 20,
        seed: 4,
        ..Default::default()
    };
    let a = bootstrap_curve(&ds, &s_ols(), &grid(), &cfg).unwrap();
    assert_eq!(a, bootstrap_curve(&ds, &s_ols(), &grid(), &cfg).unwrap());
    let other = BootstrapConfig { seed: 5, ..cfg };
    assert_ne!(a.lower, bootstrap_curve(&ds, &s_ols(), &grid(), &other).unwrap().lower);
}

#[test]
fn wider_level_contains_narrower() {
    let ds = panel(4, 220, 1.0);
    let draws = bootstrap_draws(
        &ds,
        &s_ols(),
        &grid(),
        &BootstrapConfig {
            replicates: 50,
            ..Default::default()
        },
        &[CurveKind::Acte],
    )
    .unwrap();
    let (l90, u90) = draws.bands(0, 0.10);
    let (l95, u95) = draws.bands(0, 0.05);
    for i in 0..l90.len() {
        assert!(l95[i] <= l90[i] && u90[i] <= u95[i]);
    }
}

#[test]
fn player_resampling_keeps_whole_players() {
    let ds = panel(5, 220, 1.0);
    let cfg = BootstrapConfig {
        replicates: 10,
        resample_unit: ResampleUnit::Player,
        ..Default::default()
    };
    let c = bootstrap_curve(&ds, &MetaSpec::new(MetaLearner::T, RegressorSpec::ols()), &grid(), &cfg).unwrap();
    assert!(c.lower.is_some());
}

#[test]
fn invalid_config_and_failing_resamples() {
    let ds = panel(6, 50, 1.0);
    let bad = BootstrapConfig {
        alpha: 0.0,
        ..Default::default()
    };
    assert!(matches!(bootstrap_curve(&ds, &s_ols(), &grid(), &bad), Err(ActeError::Config(_))));
    let treated = ds.with_treatment(vec![1; ds.len()]).unwrap();
    let err = bootstrap_draws(&treated, &s_ols(), &grid(), &BootstrapConfig::default(), &[CurveKind::Acte]).unwrap_err();
    assert!(matches!(err, ActeError::ReplicateFailure { attempts: 100, .. }), "{err}");
}
