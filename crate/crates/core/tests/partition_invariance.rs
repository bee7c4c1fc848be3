mod common;

use common::{final_csv, swirl};
use patchforest::driver::{Example, ExchangeScope, PartitionMode, RunConfig, SphereInitial, Stepping};

fn assert_invariant(base: RunConfig, ranks: &[usize]) {
    let reference = final_csv(RunConfig { ranks: 1, ..base.clone() });
    for &p in ranks {
        let other = final_csv(RunConfig { ranks: p, ..base.clone() });
        assert!(other == reference, "snapshot with {p} ranks differs from one rank");
    }
}

#[test]
fn subcycled_swirl_with_count_partition() {
    let cfg = RunConfig {
        max_steps: Some(12),
        ..swirl(2, 4)
    };
    assert_invariant(cfg, &[2, 3, 7]);
}

#[test]
fn weighted_partition_and_active_exchange() {
    let cfg = RunConfig {
        max_steps: Some(12),
        partition_mode: PartitionMode::ByWeight,
        exchange_scope: ExchangeScope::Active,
        regrid_interval: 3,
        ..swirl(2, 4)
    };
    assert_invariant(cfg, &[2, 5]);
}

#[test]
fn global_stepping_on_the_sphere() {
    let mut cfg = RunConfig {
        example: Example::Sphere,
        min_level: 1,
        max_level: 3,
        max_steps: Some(8),
        stepping: Stepping::Global,
        ..RunConfig::default()
    };
    cfg.sphere.initial = SphereInitial::Bump;
    assert_invariant(cfg, &[2, 4]);
}

#[test]
fn more_ranks_than_leaves() {
    let cfg = RunConfig {
        max_steps: Some(3),
        ..swirl(1, 2)
    };
    assert_invariant(cfg, &[40]);
}

#[test]
fn repeated_runs_are_identical() {
    let cfg = RunConfig {
        max_steps: Some(6),
        ranks: 3,
        ..swirl(2, 4)
    };
    assert_eq!(final_csv(cfg.clone()), final_csv(cfg));
}
