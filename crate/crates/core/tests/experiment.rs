use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use setaudit_core::attacks::{reference_inference_nonmember, AttackContext, SampleSet};
use setaudit_core::harness::{
    draw_set, emit_report, load_report, run_experiment, simulated_engine, write_simulated_workspace, Experiment,
};
use setaudit_core::oracle::simulated::PoolSizes;
use setaudit_core::oracle::{build_simulated_dataset, ResponseCache, SimulatedDataset, SimulationConfig};
use setaudit_core::{AttackKind, ExperimentConfig, Scorer, SimilarityMetric};

fn small_data(seed: u64) -> SimulatedDataset {
    let config = SimulationConfig {
        pools: PoolSizes {
            target_members: 80,
            target_nonmembers: 80,
            reference_members: 40,
            reference_nonmembers: 40,
            shadow_members: 80,
            shadow_nonmembers: 80,
        },
        ..SimulationConfig::default()
    };
    build_simulated_dataset(&config, seed).unwrap()
}

#[test]
fn config_file_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_simulated_workspace(dir.path(), &small_data(3), AttackKind::TargetOnly).unwrap();
    let mut config = ExperimentConfig::load(&path).unwrap();
    config.n_sets = 12;
    config.granularity.target = 8;

    let first = run_experiment(&config).unwrap();
    assert_eq!(first.records.len(), 24);
    assert!(first.counters.misses > 0);
    let out = config.output_dir.clone().unwrap();
    emit_report(&first, &out).unwrap();
    let loaded = load_report(&out).unwrap();
    assert_eq!(loaded.records, first.records);
    assert_eq!(loaded.aggregates, first.aggregates);

    // persistent cache serves the rerun
    let second = run_experiment(&config).unwrap();
    assert_eq!(second.counters.misses, 0);
    assert_eq!(second.records, first.records);
}

#[test]
fn every_attack_runs_from_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(4);
    for attack in AttackKind::ALL {
        let path = write_simulated_workspace(&dir.path().join(attack.as_str()), &data, attack).unwrap();
        let mut config = ExperimentConfig::load(&path).unwrap();
        config.n_sets = 6;
        config.granularity.target = 6;
        config.granularity.shadow = 6;
        config.shadow.sets_per_class = 12;
        config.image_only.k = 3;
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.aggregates.failed_sets, 0, "{attack}");
        assert_eq!(report.attack, attack);
        report.check_consistency().unwrap();
    }
}

#[test]
fn inverting_labels_mirrors_the_auc() {
    let data = small_data(5);
    let engine = Arc::new(simulated_engine(&data, ResponseCache::in_memory()).unwrap());
    let scorer = Arc::new(Scorer::default());
    let mut config = ExperimentConfig::new(AttackKind::RefNonmember);
    config.n_sets = 40;
    config.granularity.target = 5;
    config.temperatures.single = 1.6;

    let straight = Experiment::simulated(config.clone(), &data, engine.clone(), scorer.clone())
        .unwrap()
        .run()
        .unwrap();
    let flipped: Vec<_> = data
        .target_pool()
        .into_iter()
        .map(|mut s| {
            s.membership = s.membership.map(|m| !m);
            s
        })
        .collect();
    let inverted = Experiment::simulated(config, &data, engine, scorer)
        .unwrap()
        .with_targets(flipped)
        .run()
        .unwrap();
    let (a, b) = (straight.aggregates.auc.unwrap(), inverted.aggregates.auc.unwrap());
    assert!(a > 0.5 && a < 1.0, "operating point saturated: {a}");
    assert!((a + b - 1.0).abs() < 1e-12, "{a} + {b}");
}

#[test]
fn disjoint_nonmember_p_values_are_roughly_uniform() {
    let data = small_data(6);
    let engine = simulated_engine(&data, ResponseCache::in_memory()).unwrap();
    let scorer = Scorer::default();
    let ctx = AttackContext::new(&engine, &scorer);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let draws = 400;
    let mut ps: Vec<f64> = (0..draws)
        .map(|_| {
            let reference = SampleSet::new(draw_set(&data.reference_nonmembers, 20, &mut rng), Some(false));
            let target = SampleSet::new(draw_set(&data.target_nonmembers, 20, &mut rng), Some(false));
            reference_inference_nonmember(
                &ctx,
                &reference.unwrap(),
                &target.unwrap(),
                "sim-target",
                1.0,
                &SimilarityMetric::Rouge2,
                0.05,
            )
            .unwrap()
            .signal
        })
        .collect();
    ps.sort_by(f64::total_cmp);
    // Kolmogorov-Smirnov distance to U(0, 1); the 1% critical value at n = 400 is 0.081
    let ks = ps
        .iter()
        .enumerate()
        .map(|(i, p)| (p - i as f64 / draws as f64).abs().max(((i + 1) as f64 / draws as f64 - p).abs()))
        .fold(0.0, f64::max);
    assert!(ks < 0.081, "KS distance {ks}");
}
