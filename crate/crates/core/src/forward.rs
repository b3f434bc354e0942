//! Occupancy-level simulation: only the number of particles per site is
//! tracked, which is exact in law for every statistic computed here.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::error::{BrwError, Result};
use crate::lattice::{check_dim, neighbourhood, Site};
use crate::offspring::OffspringDist;

/// Histogram cap for `M(j)`; heavier sites go to the overflow bucket.
pub const J_MAX: usize = 64;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseOccupancy {
    entries: FxHashMap<Site, u64>,
    pub n: usize,
}

impl SparseOccupancy {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn single(at: Site) -> Self {
        let mut entries = FxHashMap::default();
        entries.insert(at, 1);
        SparseOccupancy { entries, n: 0 }
    }

    /// Zero counts are dropped.
    pub fn from_entries(pairs: impl IntoIterator<Item = (Site, u64)>) -> Self {
        let mut occ = Self::empty();
        for (s, k) in pairs {
            occ.add(s, k);
        }
        occ
    }

    pub fn add(&mut self, s: Site, k: u64) {
        if k > 0 {
            *self.entries.entry(s).or_insert(0) += k;
        }
    }

    pub fn get(&self, s: Site) -> u64 {
        self.entries.get(&s).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    /// Number of occupied sites.
    pub fn occupied(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Site, u64)> + '_ {
        self.entries.iter().map(|(s, k)| (*s, *k))
    }

    /// Entries sorted by site.
    pub fn sorted(&self) -> Vec<(Site, u64)> {
        let mut v: Vec<_> = self.iter().collect();
        v.sort_unstable();
        v
    }
}

/// `Binomial(r, p)`, by direct trials when `r` is small.
fn binomial<R: Rng + ?Sized>(r: u64, p: f64, rng: &mut R) -> u64 {
    if r == 0 || p <= 0.0 {
        0
    } else if p >= 1.0 {
        r
    } else if r <= 16 {
        (0..r).filter(|_| rng.random::<f64>() < p).count() as u64
    } else {
        Binomial::new(r, p).expect("valid binomial").sample(rng)
    }
}

/// Multinomial split of `total` over the neighbourhood, by sequential
/// binomials in the fixed neighbour order.
pub fn scatter<R: Rng + ?Sized>(total: u64, dim: usize, rng: &mut R, mut put: impl FnMut(Site, u64)) {
    let nb = neighbourhood(dim);
    let q = nb.len();
    let mut rest = total;
    for (j, e) in nb.iter().enumerate() {
        if rest == 0 {
            break;
        }
        let k = if j + 1 == q { rest } else { binomial(rest, 1.0 / (q - j) as f64, rng) };
        put(*e, k);
        rest -= k;
    }
}

/// One generation: every site with `k` particles produces a draw from `Q^{*k}`
/// which is scattered multinomially over its neighbourhood.
pub fn step<R: Rng + ?Sized>(occ: &SparseOccupancy, dist: &OffspringDist, dim: usize, rng: &mut R) -> SparseOccupancy {
    let mut next = SparseOccupancy { entries: FxHashMap::with_capacity_and_hasher(occ.entries.len() * 2, Default::default()), n: occ.n + 1 };
    for (&s, &k) in &occ.entries {
        let total = dist.sample_offspring_sum(k, rng);
        scatter(total, dim, rng, |e, c| next.add(s + e, c));
    }
    next
}

/// `n` generations from one particle at `start`; stops early on extinction.
pub fn run_from<R: Rng + ?Sized>(start: Site, dist: &OffspringDist, n: usize, dim: usize, rng: &mut R) -> SparseOccupancy {
    let mut occ = SparseOccupancy::single(start);
    for _ in 0..n {
        if occ.is_empty() {
            occ.n = n;
            break;
        }
        occ = step(&occ, dist, dim, rng);
    }
    occ
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Overflow {
    pub sites: u64,
    pub mass: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenStats {
    #[serde(rename = "Z")]
    pub z: u64,
    #[serde(rename = "V")]
    pub v: u64,
    #[serde(rename = "Omega")]
    pub omega: u64,
    /// `M[j-1]` is the number of sites holding exactly `j` particles.
    #[serde(rename = "M")]
    pub m: Vec<u64>,
    pub overflow: Overflow,
    #[serde(rename = "T")]
    pub t: Option<u64>,
    #[serde(rename = "S")]
    pub s: Option<Site>,
}

impl GenStats {
    /// Counts only; no typical particle.
    pub fn from_occupancy(occ: &SparseOccupancy) -> Self {
        let mut m = vec![0u64; J_MAX];
        let mut overflow = Overflow { sites: 0, mass: 0 };
        let (mut z, mut v) = (0u64, 0u64);
        for (_, k) in occ.iter() {
            z += k;
            v = v.max(k);
            if (k as usize) <= J_MAX {
                m[k as usize - 1] += 1;
            } else {
                overflow.sites += 1;
                overflow.mass += k;
            }
        }
        GenStats { z, v, omega: occ.occupied() as u64, m, overflow, t: None, s: None }
    }

    /// Counts plus a typical particle, its site drawn with probability `U(x)/Z`.
    pub fn with_typical<R: Rng + ?Sized>(occ: &SparseOccupancy, rng: &mut R) -> Self {
        let mut st = Self::from_occupancy(occ);
        if let Some((s, k)) = typical_site(occ, rng) {
            st.t = Some(k);
            st.s = Some(s);
        }
        st
    }
}

/// Site of a uniformly chosen particle and the count there.
pub fn typical_site<R: Rng + ?Sized>(occ: &SparseOccupancy, rng: &mut R) -> Option<(Site, u64)> {
    let z = occ.total();
    if z == 0 {
        return None;
    }
    let mut pick = rng.random_range(0..z);
    for (s, k) in occ.sorted() {
        if pick < k {
            return Some((s, k));
        }
        pick -= k;
    }
    unreachable!("pick below total")
}

/// Free run from the origin, with the final occupancy.
pub fn run_occupancy<R: Rng + ?Sized>(dist: &OffspringDist, n: usize, dim: usize, rng: &mut R) -> Result<SparseOccupancy> {
    check_dim(dim)?;
    Ok(run_from(Site::ORIGIN, dist, n, dim, rng))
}

/// Free run from the origin.
pub fn run<R: Rng + ?Sized>(dist: &OffspringDist, n: usize, dim: usize, rng: &mut R) -> Result<GenStats> {
    let occ = run_occupancy(dist, n, dim, rng)?;
    Ok(GenStats::with_typical(&occ, rng))
}

#[derive(Clone, Debug)]
pub struct ConditionedRun {
    pub occupancy: SparseOccupancy,
    pub stats: GenStats,
    /// Runs drawn, including the accepted one.
    pub attempts: u64,
}

/// A run conditioned on `Z_n > 0`, by rejection.
pub fn run_conditioned<R: Rng + ?Sized>(dist: &OffspringDist, n: usize, dim: usize, max_attempts: u64, rng: &mut R) -> Result<ConditionedRun> {
    check_dim(dim)?;
    for attempts in 1..=max_attempts {
        let occ = run_from(Site::ORIGIN, dist, n, dim, rng);
        if !occ.is_empty() {
            let stats = GenStats::with_typical(&occ, rng);
            return Ok(ConditionedRun { occupancy: occ, stats, attempts });
        }
    }
    Err(BrwError::BudgetExceeded { max_attempts })
}

/// `D_n = sum_x (U^u + U^v)(x) 1{U^u(x) > 0, U^v(x) > 0}` for independent
/// processes started at `x_u` and `x_v`.
pub fn overlap_stat<R: Rng + ?Sized>(dist: &OffspringDist, n: usize, dim: usize, x_u: Site, x_v: Site, rng: &mut R) -> Result<u64> {
    check_dim(dim)?;
    let a = run_from(x_u, dist, n, dim, rng);
    if a.is_empty() {
        return Ok(0);
    }
    let b = run_from(x_v, dist, n, dim, rng);
    let (small, large) = if a.occupied() <= b.occupied() { (&a, &b) } else { (&b, &a) };
    Ok(small
        .iter()
        .filter_map(|(s, k)| {
            let o = large.get(s);
            (o > 0).then_some(k + o)
        })
        .sum())
}

/// Lattice offsets with `|y| <= ell`.
pub fn ball_offsets(dim: usize, ell: f64) -> Vec<Site> {
    let r = ell.floor() as i32;
    let lim = ell * ell;
    let span = |j: usize| if j < dim { -r..=r } else { 0..=0 };
    let mut out = Vec::new();
    for a in span(0) {
        for b in span(1) {
            for c in span(2) {
                let s = Site([a, b, c]);
                if s.norm2() as f64 <= lim {
                    out.push(s);
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BallStats {
    pub sites: u64,
    pub unoccupied: u64,
    pub particles: u64,
}

/// Exact counts in the Euclidean ball of radius `ell` around `center`.
pub fn ball_stats(occ: &SparseOccupancy, center: Site, ell: f64, dim: usize) -> BallStats {
    let mut st = BallStats { sites: 0, unoccupied: 0, particles: 0 };
    for off in ball_offsets(dim, ell) {
        let k = occ.get(center + off);
        st.sites += 1;
        st.particles += k;
        if k == 0 {
            st.unoccupied += 1;
        }
    }
    st
}

/// One JSONL line per replicate.
#[derive(Clone, Debug, Serialize)]
pub struct ReplicateRecord {
    pub rep: u64,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub conditioned: bool,
    pub attempts: u64,
    #[serde(flatten)]
    pub stats: GenStats,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn empty_is_absorbing() {
        let mut rng = substream(1, 99, 0);
        let e = SparseOccupancy::empty();
        let next = step(&e, &OffspringDist::binary(), 2, &mut rng);
        assert!(next.is_empty());
        assert_eq!(next.n, 1);
    }

    #[test]
    fn binary_first_generation_shape() {
        let mut rng = substream(2, 99, 0);
        let b = OffspringDist::binary();
        let mut empty = 0;
        for _ in 0..2000 {
            let occ = run_from(Site::ORIGIN, &b, 1, 2, &mut rng);
            match occ.total() {
                0 => empty += 1,
                2 => assert!(occ.iter().all(|(s, _)| s.norm2() <= 1)),
                z => panic!("Z_1 = {}", z),
            }
        }
        assert!((empty as f64 - 1000.0).abs() < 4.0 * 500f64.sqrt());
    }

    #[test]
    fn stats_of_a_double_site() {
        let occ = SparseOccupancy::from_entries([(Site::ORIGIN, 2), (Site::new(&[1, 0]), 0)]);
        let st = GenStats::from_occupancy(&occ);
        assert_eq!((st.z, st.v, st.omega), (2, 2, 1));
        assert_eq!(st.m[1], 1);
        assert_eq!(st.m.iter().sum::<u64>(), 1);
    }

    #[test]
    fn overflow_bucket() {
        let occ = SparseOccupancy::from_entries([(Site::ORIGIN, 100), (Site::new(&[1]), 3)]);
        let st = GenStats::from_occupancy(&occ);
        assert_eq!(st.overflow, Overflow { sites: 1, mass: 100 });
        let mass: u64 = st.m.iter().enumerate().map(|(j, c)| (j as u64 + 1) * c).sum::<u64>() + st.overflow.mass;
        assert_eq!(mass, st.z);
    }

    #[test]
    fn ball_counts() {
        let empty = SparseOccupancy::empty();
        let b = ball_stats(&empty, Site::ORIGIN, 2.0, 2);
        assert_eq!((b.sites, b.unoccupied, b.particles), (13, 13, 0));
        let one = SparseOccupancy::single(Site::ORIGIN);
        let b = ball_stats(&one, Site::ORIGIN, 2.0, 2);
        assert_eq!((b.unoccupied, b.particles), (12, 1));
    }

    #[test]
    fn overlap_needs_both() {
        let mut rng = substream(3, 99, 0);
        let b = OffspringDist::binary();
        let far = Site::new(&[50, 0]);
        for _ in 0..200 {
            assert_eq!(overlap_stat(&b, 3, 2, Site::ORIGIN, far, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn conditioned_first_generation() {
        let mut rng = substream(4, 99, 0);
        let b = OffspringDist::binary();
        for _ in 0..200 {
            let r = run_conditioned(&b, 1, 2, 1000, &mut rng).unwrap();
            assert_eq!(r.stats.z, 2);
        }
        let failures = (0..50)
            .filter(|_| matches!(run_conditioned(&b, 400, 2, 1, &mut rng), Err(BrwError::BudgetExceeded { max_attempts: 1 })))
            .count();
        assert!(failures > 25);
    }

    #[test]
    fn scatter_preserves_total() {
        let mut rng = substream(5, 99, 0);
        for total in [0u64, 1, 5, 17, 1000] {
            let mut got = 0;
            scatter(total, 3, &mut rng, |e, k| {
                assert!(e.norm2() <= 1);
                got += k;
            });
            assert_eq!(got, total);
        }
    }
}
