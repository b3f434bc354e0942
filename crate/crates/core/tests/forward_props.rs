use brwlab::forward::{run, run_occupancy, typical_site, GenStats, SparseOccupancy};
use brwlab::parallel::map_reps;
use brwlab::rng::{streams, substream};
use brwlab::stats::{chi_square, EstimateCI};
use brwlab::{OffspringDist, Site};
use proptest::prelude::*;

fn law(pick: u8) -> OffspringDist {
    match pick % 3 {
        0 => OffspringDist::binary(),
        1 => OffspringDist::geometric(1.5).unwrap(),
        _ => OffspringDist::from_table(&[(0, 0.45), (1, 0.375), (3, 0.125), (5, 0.05)]).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn per_realization_counts(seed in any::<u64>(), n in 0usize..60, dim in 1usize..=3, pick in any::<u8>()) {
        let d = law(pick);
        let occ = run_occupancy(&d, n, dim, &mut substream(seed, streams::FORWARD, 0)).unwrap();
        let st = GenStats::from_occupancy(&occ);
        let mass: u64 = st.m.iter().enumerate().map(|(j, &c)| (j as u64 + 1) * c).sum::<u64>() + st.overflow.mass;
        prop_assert_eq!(mass, st.z);
        prop_assert_eq!(st.omega, st.m.iter().sum::<u64>() + st.overflow.sites);
        prop_assert!(st.omega <= st.z);
        prop_assert!(st.v <= st.z);
        if st.z > 0 {
            prop_assert!(st.v * st.omega >= st.z);
        }
        prop_assert!(occ.iter().all(|(s, k)| k >= 1 && s.max_abs() as usize <= n));
    }
}

#[test]
fn mean_population_stays_one() {
    for (pick, n, dim) in [(0u8, 20usize, 2usize), (1, 12, 3), (2, 30, 1)] {
        let d = law(pick);
        let zs: Vec<f64> = map_reps(100_000, |r| run(&d, n, dim, &mut substream(99 + pick as u64, streams::FORWARD, r)).unwrap().z as f64);
        let e = EstimateCI::from_samples(&zs).unwrap();
        assert!(e.within_se(1.0, 3.0), "{}: n={} mean {} se {}", d, n, e.mean, e.std_error);
    }
}

#[test]
fn typical_site_is_count_weighted() {
    let frozen = [
        SparseOccupancy::from_entries([(Site::new(&[0, 0]), 1), (Site::new(&[1, 0]), 3), (Site::new(&[-2, 5]), 6)]),
        SparseOccupancy::from_entries((0..20).map(|i| (Site::new(&[i, -i]), (i as u64 % 7) + 1))),
    ];
    for (f, occ) in frozen.iter().enumerate() {
        let sites = occ.sorted();
        let z = occ.total() as f64;
        let pmf: Vec<f64> = sites.iter().map(|&(_, k)| k as f64 / z).collect();
        let mut rng = substream(5, streams::SELFTEST, f as u64);
        let mut counts = vec![0u64; sites.len()];
        for _ in 0..200_000 {
            let (s, k) = typical_site(occ, &mut rng).unwrap();
            let i = sites.iter().position(|&(t, _)| t == s).unwrap();
            assert_eq!(sites[i].1, k);
            counts[i] += 1;
        }
        let cs = chi_square(&counts, &pmf).unwrap();
        assert!(cs.p > 0.001, "frozen occupancy {}: p = {}", f, cs.p);
    }
    assert!(typical_site(&SparseOccupancy::empty(), &mut substream(5, streams::SELFTEST, 9)).is_none());
}
