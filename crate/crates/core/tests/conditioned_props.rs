use brwlab::conditioned::{sample_conditioned_batch, utransform_row, Target, UBank};
use brwlab::fields::{hitting_field, pmf_oracle};
use brwlab::lattice::transition_field;
use brwlab::stats::{chi_square, histogram, EstimateCI};
use brwlab::{ClampPolicy, OffspringDist, Site};

fn s(c: &[i32]) -> Site {
    Site::new(c)
}

#[test]
fn conditional_mean_is_mean_over_hitting_probability() {
    let b = OffspringDist::binary();
    for (n, x) in [(5usize, s(&[1, 0])), (8, s(&[0, 0])), (12, s(&[2, 1])), (12, s(&[4, -3]))] {
        let bank = UBank::new(n, 2).unwrap();
        let rows = sample_conditioned_batch(Target { n, x }, &bank, 31, 40_000).unwrap();
        let v: Vec<f64> = rows.iter().map(|r| r.value as f64).collect();
        let e = EstimateCI::from_samples(&v).unwrap();
        let p = transition_field(n, 2, ClampPolicy::Exact).unwrap().get(x);
        let u = hitting_field(&b, n, 2, ClampPolicy::Exact).unwrap().get(x);
        assert!(e.within_se(p / u, 3.0), "n={} x={:?}: {} +- {} vs {}", n, x, e.mean, e.std_error, p / u);
    }
}

#[test]
fn small_horizons_match_the_oracle_law() {
    let b = OffspringDist::binary();
    for n in 1..=4usize {
        let oracle = pmf_oracle(&b, n, 2, 64).unwrap();
        let bank = UBank::new(n, 2).unwrap();
        let edge = if n == 1 { s(&[0, -1]) } else { s(&[n as i32, 0]) };
        for x in [s(&[0, 0]), s(&[1, 0]), edge] {
            let rows = sample_conditioned_batch(Target { n, x }, &bank, 32 + n as u64, 100_000).unwrap();
            let cs = chi_square(&histogram(rows.iter().map(|r| r.value)), &oracle.conditional_pmf(x)).unwrap();
            assert!(cs.p > 0.01, "n={} x={:?}: p = {}", n, x, cs.p);
        }
    }
}

#[test]
fn rows_respect_target_symmetry() {
    let swap = |z: Site| s(&[z.0[1], z.0[0]]);
    let flip = |z: Site| s(&[z.0[0], -z.0[1]]);
    let n = 6;
    let bank = UBank::new(n, 2).unwrap();
    for (x, g) in [(s(&[2, 2]), swap as fn(Site) -> Site), (s(&[3, 0]), flip as fn(Site) -> Site)] {
        assert_eq!(g(x), x);
        let t = Target { n, x };
        for m in 1..n {
            for z in [s(&[0, 0]), s(&[1, 0]), s(&[1, 2]), s(&[2, -1])] {
                let Ok(a) = utransform_row(m, z, t, &bank) else { continue };
                let b = utransform_row(m, g(z), t, &bank).unwrap();
                for (y, q) in a {
                    let q2 = b.iter().find(|(w, _)| *w == g(y)).map_or(0.0, |p| p.1);
                    assert!((q - q2).abs() < 1e-12, "m={} z={:?} y={:?}", m, z, y);
                }
            }
        }
    }
}
