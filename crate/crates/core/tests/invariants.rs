use crackivf::{CostModel, CrackIvf, EngineConfig, HeuristicParams, NprobePolicy, VectorSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
enum Op {
    Buffer,
    Commit,
    Refine,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![4 => Just(Op::Buffer), 1 => Just(Op::Commit), 2 => Just(Op::Refine)]
}

fn engine(seed: u64) -> CrackIvf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = VectorSet::new((0..1000 * 8).map(|_| rng.random_range(-1.0..1.0)).collect(), 8).unwrap();
    let cfg = EngineConfig {
        init_nlist: 8,
        nprobe: NprobePolicy::Fixed(3),
        heuristics: HeuristicParams {
            min_pts: 2,
            pts_crack_thr: 4.0,
            cv_max: 2.0,
            size_prctl: 10.0,
        },
        convergence_window: None,
        seed,
        ..Default::default()
    };
    CrackIvf::new(pts, cfg, CostModel::uniform(0.0, 0.0, 0.0)).unwrap()
}

fn count(assignments: &[u32], nlist: usize) -> Vec<u32> {
    let mut h = vec![0u32; nlist];
    for &a in assignments {
        h[a as usize] += 1;
    }
    h
}

/// Coverage and histogram consistency, recomputed from the lists themselves.
fn check_coverage(e: &CrackIvf) -> Result<(), TestCaseError> {
    let n = e.points().len();
    let mut seen = vec![0u32; n];
    let mut owner = vec![u32::MAX; n];
    for (c, list) in e.index().lists().iter().enumerate() {
        for &id in list.ids() {
            seen[id as usize] += 1;
            owner[id as usize] = c as u32;
        }
    }
    prop_assert!(seen.iter().all(|&s| s == 1), "a point is missing or listed twice");
    let t = e.true_state();
    prop_assert_eq!(t.histogram.iter().map(|&h| h as usize).sum::<usize>(), n);
    let sizes: Vec<u32> = e.index().lists().iter().map(|l| l.len() as u32).collect();
    prop_assert_eq!(&t.histogram, &sizes);
    prop_assert_eq!(&t.assignments, &owner);
    prop_assert_eq!(&t.histogram, &count(&t.assignments, e.nlist()));
    let d = e.dyn_state();
    prop_assert_eq!(&d.histogram, &count(&d.assignments, e.nlist() + e.buffer().len()));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn interleaved_operations_keep_coverage_and_sync(seed in any::<u64>(), ops in prop::collection::vec(op(), 50)) {
        let mut e = engine(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for op in ops {
            match op {
                Op::Buffer => {
                    let q: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
                    e.try_buffer(&q).unwrap();
                }
                Op::Commit => {
                    e.commit_crack().unwrap();
                    prop_assert!(e.buffer().is_empty());
                    prop_assert_eq!(e.true_state(), e.dyn_state());
                }
                Op::Refine => {
                    let c = rng.random_range(0..e.nlist());
                    let m = rng.random_range(1..=4);
                    let local = e.index().probe(e.index().centroid(c), m);
                    e.refine(&local).unwrap();
                }
            }
            check_coverage(&e)?;
        }
    }
}
