use brwlab::rng::substream;
use brwlab::OffspringDist;
use proptest::prelude::*;

fn law() -> impl Strategy<Value = OffspringDist> {
    prop_oneof![
        Just(OffspringDist::binary()),
        (1.05f64..8.0).prop_map(|m| OffspringDist::geometric(m).unwrap()),
        (3.0f64..6.0).prop_map(|a| OffspringDist::zeta_law(a).unwrap()),
        // critical laws on {0, 1, k}: Q_k = a/k, Q_0 = a - a/k
        (2u64..12, 0.05f64..1.0).prop_map(|(k, a)| {
            let qk = a / k as f64;
            OffspringDist::from_table(&[(0, a - qk), (1, 1.0 - a), (k, qk)]).unwrap()
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pgf_is_convex_nondecreasing_and_above_identity(d in law()) {
        let k = 200;
        let phi: Vec<f64> = (0..=k).map(|i| d.pgf(i as f64 / k as f64).unwrap()).collect();
        for (i, v) in phi.iter().enumerate() {
            prop_assert!(*v >= i as f64 / k as f64 - 1e-14);
        }
        for w in phi.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-14);
        }
        for w in phi.windows(3) {
            prop_assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-12);
        }
        prop_assert!((phi[k] - 1.0).abs() < 1e-12);
    }
}

fn variance_ratio(d: &OffspringDist, k: u64, draws: u64, seed: u64) -> f64 {
    let mut rng = substream(seed, 0x5eed, k);
    let xs: Vec<f64> = (0..draws).map(|_| d.sample_offspring_sum(k, &mut rng) as f64).collect();
    let m = xs.iter().sum::<f64>() / draws as f64;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (draws - 1) as f64;
    v / k as f64 / d.sigma2()
}

#[test]
fn offspring_sum_variance_scales_with_k() {
    let laws = [
        OffspringDist::binary(),
        OffspringDist::geometric(2.0).unwrap(),
        OffspringDist::from_table(&[(0, 0.64), (1, 0.2), (5, 0.16)]).unwrap(),
    ];
    for d in &laws {
        for k in [1, 10] {
            let r = variance_ratio(d, k, 1_000_000, 7);
            assert!((r - 1.0).abs() < 0.05, "{}: k={} ratio {}", d, k, r);
        }
    }
}

#[test]
fn heavy_zeta_pgf_on_a_grid() {
    let d = OffspringDist::zeta_law(1.6).unwrap();
    let mut prev = 0.0;
    for i in 0..=50 {
        let z = i as f64 / 50.0;
        let v = d.pgf(z).unwrap();
        assert!(v >= z - 1e-14 && v >= prev - 1e-14);
        prev = v;
    }
}
