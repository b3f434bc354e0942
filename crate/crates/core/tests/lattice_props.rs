use brwlab::lattice::{convolve, orthant_monotonicity_gap, transition_field, TransitionSweep};
use brwlab::{ClampPolicy, Field, Site};
use proptest::prelude::*;

fn images(s: Site, dim: usize) -> Vec<Site> {
    let c = s.coords(dim).to_vec();
    let perms: Vec<Vec<usize>> = match dim {
        1 => vec![vec![0]],
        2 => vec![vec![0, 1], vec![1, 0]],
        _ => vec![vec![0, 1, 2], vec![0, 2, 1], vec![1, 0, 2], vec![1, 2, 0], vec![2, 0, 1], vec![2, 1, 0]],
    };
    let mut out = Vec::new();
    for p in perms {
        for signs in 0..(1 << dim) {
            let v: Vec<i32> = (0..dim).map(|j| if signs >> j & 1 == 1 { -c[p[j]] } else { c[p[j]] }).collect();
            out.push(Site::new(&v));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mass_is_one_up_to_recorded_tail(n in 0usize..40, dim in 1usize..=3, r in 1usize..12) {
        let f = transition_field(n, dim, ClampPolicy::Radius(r)).unwrap();
        let s = f.sum();
        prop_assert!(f.values().iter().all(|&v| v >= 0.0));
        prop_assert!((s + f.tail_bound - 1.0).abs() <= 1e-12);
        prop_assert!(s <= 1.0 + 1e-12);
    }

    #[test]
    fn symmetric_under_permutations_and_reflections(n in 0usize..24, dim in 1usize..=3, seed in any::<u64>()) {
        let f = transition_field(n, dim, ClampPolicy::Exact).unwrap();
        let r = n as i64 + 1;
        let mut st = seed;
        for _ in 0..20 {
            let c: Vec<i32> = (0..dim).map(|_| { st = st.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); ((st >> 33) as i64 % (2 * r + 1) - r) as i32 }).collect();
            let s = Site::new(&c);
            let v = f.get(s);
            for t in images(s, dim) {
                prop_assert_eq!(f.get(t).to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn semigroup(m in 0usize..32, n in 0usize..32, dim in 1usize..=2) {
        let pm = transition_field(m, dim, ClampPolicy::Exact).unwrap();
        let pn = transition_field(n, dim, ClampPolicy::Exact).unwrap();
        let direct = transition_field(m + n, dim, ClampPolicy::Exact).unwrap();
        let conv = convolve(&pm, &pn).unwrap();
        let worst = direct.iter().map(|(s, v)| (v - conv.get(s)).abs()).fold(0.0, f64::max);
        prop_assert!(worst <= 1e-10);
    }

    #[test]
    fn overlap_identity(n in 1usize..24, a in (-3i32..=3, -3i32..=3), b in (-3i32..=3, -3i32..=3)) {
        let (a, b) = (Site::new(&[a.0, a.1]), Site::new(&[b.0, b.1]));
        let p = transition_field(n, 2, ClampPolicy::Exact).unwrap();
        let r = n + 3;
        let lhs: f64 = Field::zeros(2, r).unwrap().iter().map(|(x, _)| p.get(x - a) * p.get(x - b)).sum();
        let rhs = transition_field(2 * n, 2, ClampPolicy::Exact).unwrap().get(b - a);
        prop_assert!((lhs - rhs).abs() <= 1e-10);
    }
}

#[test]
fn transition_fields_are_orthant_monotone() {
    for dim in 1..=3 {
        for p in TransitionSweep::new(40, dim, ClampPolicy::Exact).unwrap() {
            assert!(orthant_monotonicity_gap(&p) <= 1e-12);
        }
    }
}
