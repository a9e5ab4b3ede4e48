//! Checks the verification calibration against an independently derived
//! analytic value. With genuine scores ~ N(1,1) and impostor scores ~ N(0,1),
//! a 1% FAR threshold sits at the 99th impostor percentile z_99, and the
//! expected TAR is P(N(1,1) >= z_99) = Phi(1 - z_99), where Phi is the
//! standard normal CDF. The constant is recomputed here from a CDF
//! implementation that shares no code with the crate under test.

use invlab_evalkit::tar_at_far;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

#[test]
fn normal_score_tar_matches_analytic_value() {
    let std_normal = StatNormal::new(0.0, 1.0).unwrap();
    let z99 = std_normal.inverse_cdf(0.99);
    assert!((z99 - 2.326).abs() < 1e-3, "z99 was {z99}");
    let expected_tar = std_normal.cdf(1.0 - z99);
    assert!(
        (expected_tar - 0.0924).abs() < 5e-4,
        "analytic tar was {expected_tar}"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(20240615);
    let genuine_dist = Normal::new(1.0, 1.0).unwrap();
    let impostor_dist = Normal::new(0.0, 1.0).unwrap();
    let n = 100_000;
    let genuine: Vec<f64> = (0..n).map(|_| genuine_dist.sample(&mut rng)).collect();
    let impostor: Vec<f64> = (0..n).map(|_| impostor_dist.sample(&mut rng)).collect();

    let result = tar_at_far(&genuine, &impostor, 0.01).unwrap();
    assert!(
        (result.tar - expected_tar).abs() <= 0.015,
        "tar {} strayed from analytic {expected_tar}",
        result.tar
    );
    assert!(
        (result.threshold - z99).abs() < 0.1,
        "threshold {} strayed from z99 {z99}",
        result.threshold
    );
    assert!(
        result.calibration_within(0.1),
        "achieved far {} missed the 1% target",
        result.far
    );
}

#[test]
fn indistinguishable_distributions_give_tar_near_far() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let dist = Normal::new(0.0, 1.0).unwrap();
    let genuine: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut rng)).collect();
    let impostor: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut rng)).collect();
    for far in [0.01, 0.1, 0.5] {
        let r = tar_at_far(&genuine, &impostor, far).unwrap();
        assert!(
            (r.tar - far).abs() <= 0.02,
            "tar {} should track far {far} for identical distributions",
            r.tar
        );
    }
}

#[test]
fn monotone_in_far_on_random_score_sets() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(5150);
    for case in 0..100 {
        let ng = rng.gen_range(5..200);
        let ni = rng.gen_range(5..200);
        let shift: f64 = rng.gen_range(-1.0..2.0);
        let genuine: Vec<f64> = (0..ng).map(|_| rng.gen::<f64>() * 2.0 + shift).collect();
        let impostor: Vec<f64> = (0..ni).map(|_| rng.gen::<f64>() * 2.0).collect();
        let mut prev = -1.0;
        for far in [0.0, 0.02, 0.1, 0.25, 0.5, 1.0] {
            let r = tar_at_far(&genuine, &impostor, far).unwrap();
            assert!(
                r.tar + 1e-12 >= prev,
                "case {case}: tar fell from {prev} to {} at far {far}",
                r.tar
            );
            prev = r.tar;
        }
    }
}
