use crackivf::cost_model::{fit, fit_kernel};
use crackivf::{Kernel, KernelSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn samples(kernel: Kernel, noise: f64, seed: u64) -> Vec<KernelSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..40)
        .map(|_| {
            let compute: f64 = rng.random_range(1.0..1000.0);
            let movement: f64 = rng.random_range(1.0..1000.0);
            let exact = 2.0 * compute + 3.0 * movement + 1.0;
            let jitter = 1.0 + noise * rng.random_range(-1.0..1.0);
            KernelSample {
                kernel,
                compute,
                movement,
                seconds: exact * jitter,
            }
        })
        .collect()
}

#[test]
fn exact_plane_is_recovered() {
    let m = fit_kernel(Kernel::LocalKmeans, &samples(Kernel::LocalKmeans, 0.0, 1)).unwrap();
    assert!((m.w1 - 2.0).abs() < 1e-9, "{}", m.w1);
    assert!((m.w2 - 3.0).abs() < 1e-9, "{}", m.w2);
    assert!((m.b - 1.0).abs() < 1e-6, "{}", m.b);
    assert!(m.r2 > 1.0 - 1e-12);
}

#[test]
fn one_percent_noise_stays_close() {
    let m = fit_kernel(Kernel::UpdateCentroids, &samples(Kernel::UpdateCentroids, 0.01, 2)).unwrap();
    assert!((m.w1 / 2.0 - 1.0).abs() < 0.05);
    assert!((m.w2 / 3.0 - 1.0).abs() < 0.05);
    assert!(m.r2 > 0.99);
}

#[test]
fn full_fit_covers_every_kernel() {
    let all: Vec<KernelSample> = Kernel::ALL.iter().enumerate().flat_map(|(i, &k)| samples(k, 0.0, 10 + i as u64)).collect();
    let model = fit(&all).unwrap();
    assert!(model.is_complete());
    let back = crackivf::CostModel::from_text(&model.to_text()).unwrap();
    for k in Kernel::ALL {
        let (a, b) = (model.model(k).unwrap(), back.model(k).unwrap());
        assert!((a.predict(10.0, 20.0) - b.predict(10.0, 20.0)).abs() < 1e-9);
    }
}

#[test]
fn too_few_samples_is_an_error() {
    let s = samples(Kernel::GetLocalRegion, 0.0, 3);
    assert!(fit_kernel(Kernel::GetLocalRegion, &s[..2]).is_err());
}
