use crackivf::{build_static, exact_knn, recall_at_k, IvfIndex, KmeansConfig, Metric, VectorSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn gaussians(per: usize, seed: u64) -> VectorSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 0.5).unwrap();
    let centers = [[0.0f32, 0.0], [20.0, 0.0], [0.0, 20.0], [20.0, 20.0]];
    let mut data = Vec::new();
    for c in centers {
        for _ in 0..per {
            data.push(c[0] + noise.sample(&mut rng));
            data.push(c[1] + noise.sample(&mut rng));
        }
    }
    VectorSet::new(data, 2).unwrap()
}

#[test]
fn four_blobs_give_four_pure_lists() {
    let pts = gaussians(50, 1);
    let idx = build_static(&pts, 4, Metric::L2, &KmeansConfig::global(0)).unwrap();
    let mut sizes = idx.list_sizes();
    sizes.sort();
    assert_eq!(sizes, vec![50, 50, 50, 50]);
    for c in 0..4 {
        let blobs: std::collections::BTreeSet<u32> = idx.list(c).ids().iter().map(|&id| id / 50).collect();
        assert_eq!(blobs.len(), 1);
    }
}

#[test]
fn full_probe_matches_f64_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut set = |n: usize| VectorSet::new((0..n * 6).map(|_| rng.random_range(-1.0..1.0)).collect(), 6).unwrap();
    let base = set(800);
    let queries = set(20);
    let idx = build_static(&base, 12, Metric::L2, &KmeansConfig::global(3)).unwrap();
    let got = idx.search_knn(&queries, 10, 12).unwrap();
    for q in 0..20 {
        let mut d: Vec<(f64, usize)> = (0..800)
            .map(|p| {
                let s = queries.row(q).iter().zip(base.row(p)).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
                (s, p)
            })
            .collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want: Vec<i64> = d[..10].iter().map(|&(_, p)| p as i64).collect();
        assert_eq!(got.ids_row(q), &want[..]);
    }
    let truth = exact_knn(&base, &queries, 10, Metric::L2).unwrap();
    assert_eq!(recall_at_k(&got, &truth, 10).unwrap(), 1.0);
}

#[test]
fn index_file_round_trip() {
    let pts = gaussians(30, 3);
    let idx = build_static(&pts, 4, Metric::L2, &KmeansConfig::global(0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("index.civf");
    idx.save(&path).unwrap();
    assert_eq!(IvfIndex::load(&path).unwrap(), idx);
    std::fs::write(&path, b"nope").unwrap();
    assert!(IvfIndex::load(&path).is_err());
}
