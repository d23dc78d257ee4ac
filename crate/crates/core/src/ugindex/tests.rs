use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::synthetic::clustered_vectors;

fn random_points(seed: u64, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut r = rng::seeded(seed);
    (0..n).map(|_| (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect()).collect()
}

fn named(points: Vec<Vec<f64>>) -> Vec<(String, Vec<f64>)> {
    points.into_iter().enumerate().map(|(i, p)| (format!("g{i:05}"), p)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

#[test]
fn mips_augmented_coordinate_cases() {
    assert_eq!(mips_to_l2(&[0.0, 0.0], 1.0).unwrap(), vec![0.0, 0.0, 1.0]);
    let full = mips_to_l2(&[3.0, 4.0], 5.0).unwrap();
    assert!(full[2].abs() < 1e-12);
    assert!(matches!(mips_to_l2(&[3.0, 4.0], 4.0), Err(Error::NormExceedsCap { .. })));
}

fn rankings_agree(points: &[Vec<f64>], q: &[f64]) -> bool {
    let cap = points.iter().map(|p| norm(p)).fold(0.0, f64::max);
    let aq = query_to_l2(q);
    let mut by_ip: Vec<usize> = (0..points.len()).collect();
    by_ip.sort_by(|&a, &b| dot(q, &points[b]).total_cmp(&dot(q, &points[a])).then(a.cmp(&b)));
    let dists: Vec<f64> = points.iter().map(|p| sq_dist(&mips_to_l2(p, cap).unwrap(), &aq)).collect();
    let mut by_l2: Vec<usize> = (0..points.len()).collect();
    by_l2.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    by_ip == by_l2
}

#[test]
fn augmented_l2_ranking_equals_inner_product_ranking() {
    for seed in 0..20 {
        let pts = random_points(seed, 10, 5);
        let q = random_points(seed + 1000, 1, 5).remove(0);
        assert!(rankings_agree(&pts, &q), "seed {seed}");
    }
}

proptest! {
    #[test]
    fn mips_argmax_is_l2_argmin(seed in any::<u64>(), n in 2usize..30, dim in 1usize..6) {
        let pts = random_points(seed, n, dim);
        let q = random_points(seed ^ 0xabc, 1, dim).remove(0);
        let cap = pts.iter().map(|p| norm(p)).fold(0.0, f64::max);
        let aq = query_to_l2(&q);
        let ip = |i: usize| dot(&q, &pts[i]);
        let l2 = |i: usize| sq_dist(&mips_to_l2(&pts[i], cap).unwrap(), &aq);
        let best_ip = (0..n).max_by(|&a, &b| ip(a).total_cmp(&ip(b))).unwrap();
        let best_l2 = (0..n).min_by(|&a, &b| l2(a).total_cmp(&l2(b))).unwrap();
        prop_assert!((ip(best_ip) - ip(best_l2)).abs() < 1e-9);
    }
}

#[test]
fn reference_points_for_two_points_are_those_points() {
    let pts = vec![vec![0.0, 1.0], vec![2.0, 5.0]];
    let (a, b) = select_reference_points(&pts, &[vec![], vec![]], 0, 3).unwrap();
    assert_eq!([a.min(b), a.max(b)], [0, 1]);
    assert!(matches!(
        select_reference_points(&pts[..1], &[vec![]], 0, 0),
        Err(Error::TooFewPoints(1))
    ));
}

#[test]
fn reference_points_on_a_line_are_the_extremes() {
    let pts = vec![vec![4.0], vec![-2.0], vec![9.0]];
    for seed in 0..5 {
        let (a, b) = select_reference_points(&pts, &vec![vec![]; 3], 0, seed).unwrap();
        assert_eq!([a.min(b), a.max(b)], [1, 2]);
    }
}

#[test]
fn reference_pair_is_close_to_the_diameter() {
    for seed in 0..10 {
        let pts = random_points(seed, 50, 4);
        let mut best: f64 = 0.0;
        for i in 0..50 {
            for j in i + 1..50 {
                best = best.max(sq_dist(&pts[i], &pts[j]).sqrt());
            }
        }
        let (a, b) = select_reference_points(&pts, &vec![vec![]; 50], 0, seed).unwrap();
        assert!(sq_dist(&pts[a], &pts[b]).sqrt() >= 0.7 * best, "seed {seed}");
    }
}

#[test]
fn fastmap_one_dimensional_hand_case() {
    let fm = FastMap::from_parts(vec![(vec![0.0], vec![10.0])], vec![(vec![], vec![])], vec![10.0]);
    for x in [0.0, 3.0, 10.0] {
        assert!((fm.project(&[x], 1)[0] - x).abs() < 1e-12);
    }
}

#[test]
fn fastmap_places_pivots_at_zero_and_span() {
    let pts = random_points(7, 40, 6);
    let fm = FastMap::fit(&pts, 3, 1);
    assert_eq!(fm.dims(), 3);
    let (x, y) = &fm.pivots[0];
    assert!(fm.project(x, 3)[0].abs() < 1e-9);
    assert!((fm.project(y, 3)[0] - fm.spans[0]).abs() < 1e-9);
}

#[test]
fn fastmap_recovers_exact_coordinates_of_points_on_a_plane() {
    // Points in a 2-D subspace are embedded isometrically by two dimensions.
    let mut r = rng::seeded(2);
    let pts: Vec<Vec<f64>> = (0..30)
        .map(|_| {
            let (u, v): (f64, f64) = (r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
            vec![u + v, u - v, 2.0 * u, 0.0]
        })
        .collect();
    let fm = FastMap::fit(&pts, 2, 0);
    let proj: Vec<Vec<f64>> = pts.iter().map(|p| fm.project(p, 2)).collect();
    for i in 0..30 {
        for j in 0..30 {
            assert!((sq_dist(&pts[i], &pts[j]) - sq_dist(&proj[i], &proj[j])).abs() < 1e-8);
        }
    }
}

#[test]
fn fastmap_pads_when_too_few_points() {
    let fm = FastMap::fit(&[vec![1.0, 2.0]], 4, 0);
    assert_eq!(fm.project(&[1.0, 2.0], 4), vec![0.0; 4]);
}

#[test]
fn zorder_cases() {
    assert_eq!(interleave(&[1, 1], 2), 3);
    assert_eq!(interleave(&[0, 0, 0], 5), 0);
    // Dimension 0 holds the higher bit within a level.
    assert_eq!(interleave(&[1, 0], 1), 2);
    assert_eq!(interleave(&[2, 0], 2), 8);
}

#[test]
fn zorder_is_monotone_in_each_coordinate() {
    for x in 0..8u64 {
        for y in 0..8u64 {
            let k = interleave(&[x, y], 3);
            if x < 7 {
                assert!(interleave(&[x + 1, y], 3) >= k);
            }
            if y < 7 {
                assert!(interleave(&[x, y + 1], 3) >= k);
            }
        }
    }
}

#[test]
fn quantizer_clamps_out_of_range_values() {
    let q = Quantizer::calibrate(&[vec![0.0, 5.0], vec![1.0, 5.0]], 2, 3);
    assert_eq!(q.cells(&[0.0, 5.0]), vec![0, 0]);
    assert_eq!(q.cells(&[1.0, 9.0]), vec![7, 0]);
    assert_eq!(q.cells(&[-3.0, 0.0]), vec![0, 0]);
    assert_eq!(q.cells(&[0.5, 0.0]), vec![4, 0]);
}

#[test]
fn hash_cases() {
    assert_eq!(hash_key(13, 1, 0, 8), 5);
    let b = 1234567;
    assert_eq!(hash_key(0, 99, b, 64), (b % MERSENNE_61) as usize % 64);
    // No overflow at the top of the range.
    let h = hash_key(u64::MAX, MERSENNE_61 - 1, MERSENNE_61 - 1, 1 << 20);
    let want = ((MERSENNE_61 as u128 - 1) * u64::MAX as u128 + MERSENNE_61 as u128 - 1) % MERSENNE_61 as u128;
    assert_eq!(h as u128, want % (1 << 20));
}

#[test]
fn hash_spreads_random_keys() {
    let cfg = IndexConfig { seed: 11, ..IndexConfig::default() };
    let (a, b) = cfg.hash_coeffs();
    assert!((1..MERSENNE_61).contains(&a) && (1..MERSENNE_61).contains(&b));
    let mut r = rng::seeded(5);
    let mut load = vec![0usize; 1024];
    for _ in 0..100_000 {
        load[hash_key(r.gen(), a, b, 1024)] += 1;
    }
    let mean = 100_000.0 / 1024.0;
    assert!(*load.iter().max().unwrap() as f64 <= 8.0 * mean);
}

#[test]
fn config_validation() {
    assert!(IndexConfig::default().validate().is_ok());
    let bad = [
        IndexConfig { projection_dim: 9, ..IndexConfig::default() },
        IndexConfig { block_size: 0, ..IndexConfig::default() },
        IndexConfig { bucket_count: Some(12), ..IndexConfig::default() },
        IndexConfig { hash_a: Some(MERSENNE_61), ..IndexConfig::default() },
        IndexConfig { scan_budget: Some(0), ..IndexConfig::default() },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))), "{c:?}");
    }
    assert_eq!(IndexConfig::default().buckets_for(5000), 16384);
    assert_eq!(IndexConfig::default().budget_for(16, 10), 16);
    assert_eq!(IndexConfig::default().budget_for(16, 20), 20);
}

#[test]
fn empty_index_reports_empty() {
    let idx = build_index(&[], &IndexConfig::default()).unwrap();
    assert!(idx.is_empty());
    assert!(idx.blocks().is_empty());
    assert!(matches!(idx.query_knn(&[], 3), Err(Error::EmptyIndex)));
}

#[test]
fn five_groups_in_blocks_of_two() {
    let cfg = IndexConfig { block_size: 2, ..IndexConfig::default() };
    let idx = build_index(&named(random_points(1, 5, 3)), &cfg).unwrap();
    let b = idx.blocks();
    assert_eq!(b.len(), 3);
    assert_eq!(b.iter().map(|x| x.entries.len()).collect::<Vec<_>>(), vec![2, 2, 1]);
    assert_eq!((b[0].prev, b[0].next), (None, Some(1)));
    assert_eq!((b[1].prev, b[1].next), (Some(0), Some(2)));
    assert_eq!((b[2].prev, b[2].next), (Some(1), None));
}

#[test]
fn every_stored_key_is_found_through_the_hash_table() {
    let idx = build_index(&named(random_points(3, 1000, 6)), &IndexConfig::default()).unwrap();
    for blk in idx.blocks() {
        for e in &blk.entries {
            let pos = idx.lookup(e.zorder).expect("stored key");
            assert_eq!(idx.entry(pos).zorder, e.zorder);
            assert!(pos == 0 || idx.entry(pos - 1).zorder < e.zorder);
        }
    }
    // Each chain visits distinct keys.
    for head in idx.bucket_heads() {
        let mut seen = std::collections::HashSet::new();
        let mut cur = *head;
        while let Some(s) = cur {
            assert!(seen.insert(idx.slots()[s as usize].key));
            cur = idx.slots()[s as usize].next;
        }
    }
}

proptest! {
    #[test]
    fn blocks_are_sorted_and_mutually_linked(seed in any::<u64>(), n in 1usize..200, bs in 1usize..20) {
        let cfg = IndexConfig { block_size: bs, seed, ..IndexConfig::default() };
        let idx = build_index(&named(random_points(seed, n, 4)), &cfg).unwrap();
        let keys: Vec<u64> = idx.blocks().iter().flat_map(|b| b.entries.iter().map(|e| e.zorder)).collect();
        prop_assert_eq!(keys.len(), n);
        prop_assert!(keys.windows(2).all(|w| w[0] <= w[1]));
        for (i, b) in idx.blocks().iter().enumerate() {
            prop_assert!(!b.entries.is_empty() && b.entries.len() <= bs);
            if let Some(nx) = b.next {
                prop_assert_eq!(idx.blocks()[nx as usize].prev, Some(i as u32));
            }
            if let Some(pv) = b.prev {
                prop_assert_eq!(idx.blocks()[pv as usize].next, Some(i as u32));
            }
        }
    }

    #[test]
    fn examined_entries_stay_within_budget_plus_one_block(seed in any::<u64>(), k in 1usize..40, bs in 1usize..80) {
        let cfg = IndexConfig { block_size: bs, ..IndexConfig::default() };
        let idx = build_index(&named(random_points(seed, 300, 8)), &cfg).unwrap();
        let q = random_points(seed ^ 1, 1, 8).remove(0);
        let (res, stats) = idx.query_with_stats(&q, k).unwrap();
        let budget = cfg.budget_for(8, k);
        prop_assert!(stats.examined <= budget + bs);
        prop_assert!(stats.examined >= budget.min(300));
        prop_assert_eq!(res.len(), k.min(stats.examined));
        prop_assert!(res.windows(2).all(|w| w[0].1 >= w[1].1));
    }
}

#[test]
fn duplicate_ids_and_ragged_features_are_rejected() {
    let dup = vec![("a".to_owned(), vec![1.0]), ("a".to_owned(), vec![2.0])];
    assert!(matches!(build_index(&dup, &IndexConfig::default()), Err(Error::DuplicateGroupId(id)) if id == "a"));
    let ragged = vec![("a".to_owned(), vec![1.0]), ("b".to_owned(), vec![2.0, 3.0])];
    assert!(matches!(build_index(&ragged, &IndexConfig::default()), Err(Error::DimensionMismatch { .. })));
    let idx = build_index(&named(random_points(0, 4, 3)), &IndexConfig::default()).unwrap();
    assert!(matches!(idx.query_knn(&[1.0], 1), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn single_group_is_always_returned() {
    let idx = build_index(&[("only".to_owned(), vec![0.5, -1.0])], &IndexConfig::default()).unwrap();
    for k in [1, 5] {
        let res = idx.query_knn(&[-3.0, 2.0], k).unwrap();
        assert_eq!(res, vec![("only".to_owned(), -3.5)]);
    }
}

#[test]
fn large_k_returns_exact_ranking() {
    let groups = named(random_points(9, 150, 5));
    let cfg = IndexConfig { block_size: 16, ..IndexConfig::default() };
    let idx = build_index(&groups, &cfg).unwrap();
    for qs in 0..5 {
        let q = random_points(100 + qs, 1, 5).remove(0);
        assert_eq!(idx.query_knn(&q, 200).unwrap(), brute_force_topk(&groups, &q, 200));
    }
}

#[test]
fn ties_are_broken_by_group_id() {
    let groups = vec![
        ("b".to_owned(), vec![1.0, 0.0]),
        ("a".to_owned(), vec![1.0, 0.0]),
        ("c".to_owned(), vec![0.0, 1.0]),
    ];
    let idx = build_index(&groups, &IndexConfig::default()).unwrap();
    let ids: Vec<String> = idx.query_knn(&[1.0, 0.0], 3).unwrap().into_iter().map(|r| r.0).collect();
    assert_eq!(ids, ["a", "b", "c"]);
    assert_eq!(brute_force_topk(&groups, &[1.0, 0.0], 2)[1].0, "b");
}

#[test]
fn absent_key_falls_back_to_the_neighbouring_position() {
    let idx = build_index(&named(random_points(4, 500, 6)), &IndexConfig::default()).unwrap();
    let mut r = rng::seeded(8);
    for _ in 0..200 {
        let key: u64 = r.gen();
        let (pos, exact) = idx.locate(key);
        let keys_before = (0..pos).all(|p| idx.entry(p).zorder < key);
        if exact {
            assert_eq!(idx.entry(pos).zorder, key);
        } else if pos + 1 < idx.len() {
            assert!(keys_before && idx.entry(pos).zorder > key);
        } else {
            assert!(idx.entry(pos).zorder > key || keys_before);
        }
    }
}

#[test]
fn equal_norm_groups_find_themselves_first() {
    let (pts, _) = clustered_vectors(800, 12, 40, 0.05, 3);
    let groups = named((0..800).map(|i| unit(pts.row(i).to_vec())).collect());
    let idx = build_index(&groups, &IndexConfig::default()).unwrap();
    for (id, f) in groups.iter().step_by(7) {
        assert_eq!(&idx.query_knn(f, 1).unwrap()[0].0, id);
    }
}

#[test]
fn batch_queries_match_single_queries() {
    let (groups, idx) = sample_index(300);
    let mut queries = random_points(5, 60, 7);
    queries.extend(groups.iter().take(20).map(|(_, f)| f.clone()));
    queries.push(queries[0].clone());
    let batch = idx.query_batch(&queries, 12).unwrap();
    assert_eq!(batch.len(), queries.len());
    for (q, got) in queries.iter().zip(&batch) {
        assert_eq!(got, &idx.query_knn(q, 12).unwrap());
    }
    assert_eq!(batch[0], batch[batch.len() - 1]);
    assert!(idx.query_batch(&[vec![0.0; 3]], 5).is_err());
}

#[test]
fn relevance_features_score_the_full_relevance() {
    let f = group_feature(&[1.0, 2.0], 0.5, 0.2);
    let q = item_query(&[3.0, -1.0]);
    assert!((score(&q, &f) - (0.8 * (3.0 - 2.0) + 0.2 * 0.5)).abs() < 1e-12);
}

fn sample_index(n: usize) -> (Vec<(String, Vec<f64>)>, UgIndex) {
    let groups = named(random_points(21, n, 7));
    let cfg = IndexConfig { block_size: 8, seed: 4, ..IndexConfig::default() };
    let idx = build_index(&groups, &cfg).unwrap();
    (groups, idx)
}

#[test]
fn round_trip_answers_identically() {
    let (_, idx) = sample_index(400);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("groups.ugix");
    save_index(&idx, &path).unwrap();
    let back = load_index(&path).unwrap();
    assert_eq!(back, idx);
    for q in random_points(77, 100, 7) {
        assert_eq!(back.query_knn(&q, 10).unwrap(), idx.query_knn(&q, 10).unwrap());
    }
}

#[test]
fn empty_index_round_trips() {
    let idx = build_index(&[], &IndexConfig::default()).unwrap();
    assert_eq!(read_index(&write_index(&idx)).unwrap(), idx);
}

#[test]
fn damaged_files_are_rejected() {
    let (_, idx) = sample_index(50);
    let bytes = write_index(&idx);
    assert_eq!(&bytes[..4], INDEX_MAGIC);
    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(read_index(&bytes[..cut]), Err(Error::CorruptFile(_))), "cut {cut}");
    }
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 3] ^= 0x40;
    assert!(matches!(read_index(&flipped), Err(Error::CorruptFile(_))));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(read_index(&magic), Err(Error::CorruptFile(_))));
    let mut version = bytes;
    version[4..8].copy_from_slice(&(INDEX_FORMAT_VERSION + 1).to_le_bytes());
    assert!(matches!(
        read_index(&version),
        Err(Error::VersionMismatch { found, expected }) if found == INDEX_FORMAT_VERSION + 1 && expected == INDEX_FORMAT_VERSION
    ));
}
