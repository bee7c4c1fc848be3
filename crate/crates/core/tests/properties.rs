mod common;

use common::{brute_force_ghost_counts, brute_force_level_gaps};
use patchforest::driver::{RunConfig, Simulation, Stepping};
use patchforest::forest::{build_ghost_layer, BlockConnectivity, Forest, Partition, Quadrant};
use patchforest::io::{ConfigFile, FieldSnapshot, OutputFormat};
use patchforest::patch::{average_new_coarse, interpolate_new_fine, Patch};
use proptest::prelude::*;

/// Refines the leaves picked by `picks` (indices modulo the current leaf
/// count) one after another, up to `max_level`.
fn grow(conn: BlockConnectivity, picks: &[usize], max_level: u8) -> Forest {
    let mut f = Forest::new_uniform(conn, 1);
    for &k in picks {
        let q = f.leaf(k % f.num_leaves());
        if q.level < max_level {
            f.refine_leaf(&q).unwrap();
        }
    }
    f
}

fn random_patch(m: usize, values: &[f64], ghosts: bool) -> Patch {
    let mut p = Patch::new(Quadrant::from_level_coords(0, 2, 1, 2), m, 0.0);
    let n = p.data().len();
    p.data_mut().copy_from_slice(&values[..n]);
    if ghosts {
        p.mark_ghosts_filled();
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn balance_leaves_no_level_gaps(picks in prop::collection::vec(0usize..1000, 0..40), sphere in any::<bool>()) {
        let conn = if sphere { BlockConnectivity::two_tree_sphere() } else { BlockConnectivity::unit_square() };
        let mut f = grow(conn, &picks, 7);
        let before = f.num_leaves();
        f.balance_2to1().unwrap();
        prop_assert!(f.num_leaves() >= before);
        prop_assert!(f.is_balanced());
        prop_assert_eq!(brute_force_level_gaps(&f), 0);
        let area: u128 = f.leaves().map(|q| q.area()).sum();
        prop_assert_eq!(area, Quadrant::root(0).area() * f.num_blocks() as u128);
        let keys: Vec<_> = f.leaves().map(|q| q.sfc_key()).collect();
        prop_assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn ghost_layers_match_pairwise_contact(picks in prop::collection::vec(0usize..1000, 0..25), ranks in 1usize..9) {
        let mut f = grow(BlockConnectivity::unit_square(), &picks, 6);
        f.balance_2to1().unwrap();
        let part = Partition::by_count(f.num_leaves(), ranks);
        let expect = brute_force_ghost_counts(&f, &part);
        let got: Vec<usize> = (0..ranks).map(|r| build_ghost_layer(&f, &part, r).len()).collect();
        prop_assert_eq!(got, expect);
    }

    #[test]
    fn count_partition_is_even(leaves in 0usize..5000, ranks in 1usize..64) {
        let sizes = Partition::by_count(leaves, ranks).sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), leaves);
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
    }

    #[test]
    fn weight_partition_covers_in_order(weights in prop::collection::vec(1u64..9, 1..300), ranks in 1usize..17) {
        let part = Partition::by_weight(&weights, ranks);
        prop_assert_eq!(part.num_ranks(), ranks);
        prop_assert_eq!(part.num_leaves(), weights.len());
        prop_assert!(part.bounds().windows(2).all(|w| w[0] <= w[1]));
        let total: u64 = weights.iter().sum();
        let heaviest = weights.iter().max().unwrap();
        for r in 0..ranks {
            let w: u64 = weights[part.range(r)].iter().sum();
            prop_assert!(w <= total.div_ceil(ranks as u64) + heaviest);
        }
    }

    #[test]
    fn average_undoes_interpolation(values in prop::collection::vec(-1e3f64..1e3, 144), ghosts in any::<bool>()) {
        let parent = random_patch(8, &values, ghosts);
        let children = interpolate_new_fine(&parent).unwrap();
        let back = average_new_coarse([&children[0], &children[1], &children[2], &children[3]]).unwrap();
        for (a, b) in back.interior_values().iter().zip(parent.interior_values()) {
            prop_assert!((a - b).abs() <= 8.0 * f64::EPSILON * 1e3, "{} vs {}", a, b);
        }
    }

    #[test]
    fn snapshot_text_round_trips(bits in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 16)) {
        let cfg = RunConfig { m: 4, min_level: 1, max_level: 1, max_steps: Some(0), ..RunConfig::default() };
        let mut snap = FieldSnapshot::capture(&Simulation::new(cfg).unwrap());
        for (k, rec) in snap.leaves.iter_mut().enumerate() {
            rec.values.copy_from_slice(&bits);
            rec.values.rotate_left(k % bits.len());
        }
        let text = snap.to_csv_string();
        let back = FieldSnapshot::read_csv(text.as_bytes()).unwrap();
        for (a, b) in back.leaves.iter().zip(&snap.leaves) {
            prop_assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits() || (*x == 0.0 && *y == 0.0)));
        }
        prop_assert_eq!(back.to_csv_string(), text);
    }

    #[test]
    fn config_round_trips(m in (2usize..8).prop_map(|k| 2 * k), min in 0u8..4, extra in 0u8..4, threshold in 0.0f64..2.0,
                          interval in 1usize..9, ranks in 1usize..33, seed in any::<u32>(), subcycle in any::<bool>(), vtk in any::<bool>()) {
        let mut c = ConfigFile::default();
        c.run.m = m;
        c.run.min_level = min;
        c.run.max_level = min + extra;
        c.run.refine_threshold = threshold;
        c.run.regrid_interval = interval;
        c.run.ranks = ranks;
        c.run.stepping = if subcycle { Stepping::Subcycle } else { Stepping::Global };
        c.seed = seed as u64;
        c.output.format = if vtk { OutputFormat::Vtk } else { OutputFormat::Csv };
        let back = ConfigFile::parse(&c.to_toml(), "generated").unwrap();
        prop_assert_eq!(back, c);
    }
}
