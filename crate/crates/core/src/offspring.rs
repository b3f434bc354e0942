//! Critical offspring laws: probabilities, generating function, sampling.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{BrwError, Result};

/// Tail behaviour of the offspring law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TailClass {
    FiniteSupport,
    /// Moments of every order below `alpha + 1/2` are finite.
    Polynomial(f64),
    /// `sum_l Q_l e^{delta l}` is finite for every `delta` below this value.
    Exponential(f64),
}

#[derive(Clone, Debug, PartialEq)]
enum Law {
    Binary,
    Geometric { m: f64 },
    Zeta,
    Table,
}

#[derive(Clone, Debug)]
enum Sampler {
    Alias { values: Vec<u64>, index: WeightedAliasIndex<f64> },
    Cdf { cumulative: Vec<f64> },
}

/// Mean-one offspring law with finite positive variance.
#[derive(Clone, Debug)]
pub struct OffspringDist {
    tag: String,
    law: Law,
    /// `(l, Q_l)` with `Q_l > 0`. For infinite support this is the sampling
    /// table, truncated once the cumulative mass reaches `1 - 1e-15`.
    probs: Vec<(u64, f64)>,
    sigma2: f64,
    tail: TailClass,
    sampler: Sampler,
}

const CDF_TRUNCATION: f64 = 1e-15;

/// Riemann zeta by Euler-Maclaurin summation, `s > 1`.
pub(crate) fn zeta(s: f64) -> f64 {
    const N: usize = 20;
    // B_{2j} / (2j)!
    const C: [f64; 6] = [
        1.0 / 12.0,
        -1.0 / 720.0,
        1.0 / 30240.0,
        -1.0 / 1209600.0,
        1.0 / 47900160.0,
        -691.0 / 1307674368000.0,
    ];
    let n = N as f64;
    let mut sum: f64 = (1..N).map(|k| (k as f64).powf(-s)).sum();
    sum += n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s);
    // rising factorial s (s+1) ... (s+2j-2) times N^{-s-2j+1}
    let mut rising = s;
    let mut pow = n.powf(-s - 1.0);
    for (j, c) in C.iter().enumerate() {
        sum += c * rising * pow;
        let a = s + (2 * j + 1) as f64;
        rising *= a * (a + 1.0);
        pow /= n * n;
    }
    sum
}

/// `sum c_k z^k` over terms sorted by increasing `k`, one multiply per support gap.
fn horner(terms: impl DoubleEndedIterator<Item = (u64, f64)>, z: f64) -> f64 {
    let mut acc = 0.0;
    let mut prev: Option<u64> = None;
    for (k, c) in terms.rev() {
        if let Some(p) = prev {
            acc *= z.powi((p - k) as i32);
        }
        acc += c;
        prev = Some(k);
    }
    acc * prev.map_or(1.0, |k| z.powi(k as i32))
}

impl OffspringDist {
    /// Double-or-nothing: `Q_0 = Q_2 = 1/2`.
    pub fn binary() -> OffspringDist {
        Self::finite("binary", Law::Binary, vec![(0, 0.5), (2, 0.5)]).expect("valid law")
    }

    /// `Q_0 = 1 - 1/m`, and given at least one child the count is geometric on
    /// `{1, 2, ...}` with mean `m`. Variance `2m - 2`.
    pub fn geometric(m: f64) -> Result<OffspringDist> {
        if !(m > 1.0 && m.is_finite()) {
            return Err(BrwError::InvalidLaw(format!("geometric mean {} must exceed 1", m)));
        }
        let b = 1.0 / m;
        let r = 1.0 - b;
        let mut probs = vec![(0u64, 1.0 - b)];
        let mut l = 1u64;
        let mut q = b * b;
        // P(count >= l) = b r^(l-1); a running float sum can stall short of 1
        let mut tail = b;
        while tail > CDF_TRUNCATION {
            probs.push((l, q));
            l += 1;
            q *= r;
            tail *= r;
        }
        let sampler = Self::cdf_sampler(&probs);
        let dist = OffspringDist {
            tag: format!("geometric:{}", m),
            law: Law::Geometric { m },
            probs,
            sigma2: 2.0 * m - 2.0,
            tail: TailClass::Exponential(-(r.ln())),
            sampler,
        };
        Ok(dist)
    }

    /// `Q_l` proportional to `l^{-(alpha + 3/2)}` for `l >= 2`, `Q_1 = 0`, and
    /// `Q_0` fixed by criticality. Needs `alpha > 3/2` for finite variance.
    pub fn zeta_law(alpha: f64) -> Result<OffspringDist> {
        if !(alpha > 1.5 && alpha.is_finite()) {
            return Err(BrwError::InvalidLaw(format!("zeta exponent alpha={} must exceed 1.5", alpha)));
        }
        let s = alpha + 1.5;
        let z0 = zeta(s) - 1.0;
        let z1 = zeta(s - 1.0) - 1.0;
        let z2 = zeta(s - 2.0) - 1.0;
        let w = z0 / z1;
        let c = w / z0;
        let mut probs = vec![(0u64, 1.0 - w)];
        let mut l = 2u64;
        // stop once the remaining tail, bounded by c l^{1-s} / (s-1), is negligible
        while c * (l as f64).powf(1.0 - s) / (s - 1.0) > CDF_TRUNCATION {
            probs.push((l, c * (l as f64).powf(-s)));
            l += 1;
        }
        probs[0].1 = 1.0 - probs[1..].iter().rev().map(|p| p.1).sum::<f64>();
        let sampler = Self::cdf_sampler(&probs);
        Ok(OffspringDist {
            tag: format!("zeta:{}", alpha),
            law: Law::Zeta,
            probs,
            sigma2: z2 / z1 - 1.0,
            tail: TailClass::Polynomial(alpha),
            sampler,
        })
    }

    /// Finite-support law from `(l, Q_l)` pairs; checks criticality.
    pub fn from_table(pairs: &[(u64, f64)]) -> Result<OffspringDist> {
        let tag = format!(
            "table:{}",
            pairs.iter().map(|(l, q)| format!("{}={}", l, q)).collect::<Vec<_>>().join(",")
        );
        Self::finite(&tag, Law::Table, pairs.to_vec())
    }

    fn finite(tag: &str, law: Law, mut probs: Vec<(u64, f64)>) -> Result<OffspringDist> {
        probs.retain(|&(_, q)| q > 0.0);
        probs.sort_by_key(|&(l, _)| l);
        if probs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(BrwError::InvalidLaw("repeated offspring count".into()));
        }
        let total: f64 = probs.iter().map(|p| p.1).sum();
        let mean: f64 = probs.iter().map(|&(l, q)| l as f64 * q).sum();
        let second: f64 = probs.iter().map(|&(l, q)| (l * l) as f64 * q).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(BrwError::InvalidLaw(format!("probabilities sum to {}", total)));
        }
        if (mean - 1.0).abs() > 1e-12 {
            return Err(BrwError::InvalidLaw(format!("mean {} is not 1", mean)));
        }
        let sigma2 = second - 1.0;
        if sigma2 <= 1e-12 {
            return Err(BrwError::InvalidLaw("offspring variance must be positive".into()));
        }
        let index = WeightedAliasIndex::new(probs.iter().map(|p| p.1).collect())
            .map_err(|e| BrwError::InvalidLaw(e.to_string()))?;
        let values = probs.iter().map(|p| p.0).collect();
        Ok(OffspringDist {
            tag: tag.to_string(),
            law,
            probs,
            sigma2,
            tail: TailClass::FiniteSupport,
            sampler: Sampler::Alias { values, index },
        })
    }

    fn cdf_sampler(probs: &[(u64, f64)]) -> Sampler {
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|&(_, q)| {
                acc += q;
                acc
            })
            .collect();
        Sampler::Cdf { cumulative }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn is_binary(&self) -> bool {
        self.law == Law::Binary
    }

    pub fn probs(&self) -> &[(u64, f64)] {
        &self.probs
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn tail_class(&self) -> TailClass {
        self.tail
    }

    /// `Q_l`, zero when `l` is not in the support (or beyond the sampling table).
    pub fn prob(&self, l: u64) -> f64 {
        self.probs.binary_search_by_key(&l, |p| p.0).map_or(0.0, |i| self.probs[i].1)
    }

    /// Largest argument at which the generating function is evaluated.
    pub fn z_max(&self) -> f64 {
        match (&self.law, self.tail) {
            (Law::Geometric { m }, _) => m / (m - 1.0),
            (_, TailClass::Polynomial(_)) => 1.0,
            _ => f64::INFINITY,
        }
    }

    fn check_z(&self, z: f64) -> Result<()> {
        let zmax = self.z_max();
        let ok = z >= 0.0 && if zmax.is_finite() && self.law != Law::Zeta { z < zmax } else { z <= zmax };
        if ok {
            Ok(())
        } else {
            Err(BrwError::Domain(format!("pgf argument {} outside [0, {})", z, zmax)))
        }
    }

    /// `Phi(z) = sum_l Q_l z^l`.
    pub fn pgf(&self, z: f64) -> Result<f64> {
        self.check_z(z)?;
        Ok(match self.law {
            Law::Binary => 0.5 * (1.0 + z * z),
            Law::Geometric { m } => {
                let b = 1.0 / m;
                1.0 - b + b * z / (m - (m - 1.0) * z)
            }
            _ => horner(self.probs.iter().map(|&(l, q)| (l, q)), z),
        })
    }

    /// `Phi'(z)`.
    pub fn pgf_prime(&self, z: f64) -> Result<f64> {
        self.check_z(z)?;
        Ok(match self.law {
            Law::Binary => z,
            Law::Geometric { m } => {
                let d = m - (m - 1.0) * z;
                1.0 / (d * d)
            }
            Law::Zeta if z == 1.0 => 1.0,
            _ => horner(self.probs.iter().filter(|p| p.0 > 0).map(|&(l, q)| (l - 1, q * l as f64)), z),
        })
    }

    /// `1 - Phi(1 - p)` for `p` in `[0, 1]`, without cancellation for small `p`.
    pub fn pgf_complement(&self, p: f64) -> f64 {
        match self.law {
            Law::Geometric { m } => p / (1.0 + (m - 1.0) * p),
            _ => {
                let lp = (-p).ln_1p();
                self.probs.iter().rev().filter(|x| x.0 > 0).map(|&(l, q)| -q * (l as f64 * lp).exp_m1()).sum()
            }
        }
    }

    /// `Phi(1 + y) - 1`, without cancellation for small `y`.
    pub fn pgf_shifted(&self, y: f64) -> Result<f64> {
        self.check_z(1.0 + y)?;
        Ok(match self.law {
            Law::Geometric { m } => y / (1.0 - (m - 1.0) * y),
            _ => {
                let ly = y.ln_1p();
                self.probs.iter().rev().filter(|x| x.0 > 0).map(|&(l, q)| q * (l as f64 * ly).exp_m1()).sum()
            }
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.sampler {
            Sampler::Alias { values, index } => values[index.sample(rng)],
            Sampler::Cdf { cumulative } => {
                let u: f64 = rng.random();
                let i = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
                self.probs[i].0
            }
        }
    }

    /// Total offspring of `k` parents: an exact draw from `Q^{*k}`.
    pub fn sample_offspring_sum<R: Rng + ?Sized>(&self, k: u64, rng: &mut R) -> u64 {
        match (&self.law, k) {
            (_, 0) => 0,
            (Law::Binary, 1) => {
                if rng.random::<bool>() {
                    2
                } else {
                    0
                }
            }
            (Law::Binary, _) => 2 * Binomial::new(k, 0.5).expect("valid binomial").sample(rng),
            _ => (0..k).map(|_| self.sample(rng)).sum(),
        }
    }

    /// Largest admissible `delta` in the lower bound `V_n >= delta log n`:
    /// the supremum over `l0 > 1` with `Q_{l0} > 0` of
    /// `(l0 - 1) / (-l0 ln p)`, `p = Q_{l0} (2d+1)^{-l0}`.
    pub fn max_log_delta(&self, dim: usize) -> Result<f64> {
        let q = (2 * dim + 1) as f64;
        let mut best: Option<f64> = None;
        for &(l0, ql) in self.probs.iter().filter(|p| p.0 > 1) {
            let l = l0 as f64;
            // the ratio is below (l-1)/(l^2 ln q) for every admissible l0
            if let Some(b) = best {
                if (l - 1.0) / (l * l * q.ln()) < b {
                    break;
                }
            }
            let lnp = ql.ln() - l * q.ln();
            let delta = (l - 1.0) / (-l * lnp);
            best = Some(best.map_or(delta, |b: f64| b.max(delta)));
        }
        best.ok_or_else(|| BrwError::Degenerate("no offspring count above one".into()))
    }
}

impl fmt::Display for OffspringDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag)
    }
}

impl FromStr for OffspringDist {
    type Err = BrwError;

    /// `binary`, `geometric:<m>`, `zeta:<alpha>` or `table:<l>=<q>,<l>=<q>,...`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let num = |v: &str| -> Result<f64> {
            v.trim().parse::<f64>().map_err(|_| BrwError::Config(format!("bad number '{}' in offspring spec", v)))
        };
        if s == "binary" {
            return Ok(OffspringDist::binary());
        }
        if let Some(m) = s.strip_prefix("geometric:") {
            return OffspringDist::geometric(num(m)?);
        }
        if let Some(a) = s.strip_prefix("zeta:") {
            return OffspringDist::zeta_law(num(a)?);
        }
        if let Some(t) = s.strip_prefix("table:") {
            let mut pairs = Vec::new();
            for item in t.split(',').filter(|x| !x.trim().is_empty()) {
                let (l, q) = item
                    .split_once('=')
                    .ok_or_else(|| BrwError::Config(format!("table entry '{}' is not l=q", item)))?;
                let l = l.trim().parse::<u64>().map_err(|_| BrwError::Config(format!("bad count '{}'", l)))?;
                pairs.push((l, num(q)?));
            }
            return OffspringDist::from_table(&pairs);
        }
        Err(BrwError::Config(format!(
            "unknown offspring spec '{}' (expected binary | geometric:<m> | zeta:<alpha> | table:l=q,...)",
            s
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn binary_pgf_values() {
        let b = OffspringDist::binary();
        assert_eq!(b.pgf(0.0).unwrap(), 0.5);
        assert_eq!(b.pgf(1.0).unwrap(), 1.0);
        assert_eq!(b.pgf_prime(1.0).unwrap(), 1.0);
        assert_eq!(b.sigma2(), 1.0);
    }

    #[test]
    fn pgf_normalised_and_critical_for_all_families() {
        for d in [OffspringDist::binary(), OffspringDist::geometric(2.5).unwrap(), OffspringDist::zeta_law(2.0).unwrap()] {
            assert!((d.pgf(1.0).unwrap() - 1.0).abs() < 1e-12, "{}", d);
            assert!((d.pgf_prime(1.0).unwrap() - 1.0).abs() < 1e-9, "{}", d);
        }
    }

    #[test]
    fn zeta_function_reference_values() {
        assert!((zeta(2.0) - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-14);
        assert!((zeta(4.0) - std::f64::consts::PI.powi(4) / 90.0).abs() < 1e-14);
        assert!((zeta(3.0) - 1.202_056_903_159_594_3).abs() < 1e-14);
    }

    #[test]
    fn zeta_law_moments() {
        let z = OffspringDist::zeta_law(2.5).unwrap();
        let mass: f64 = z.probs().iter().rev().map(|p| p.1).sum();
        assert!((mass - 1.0).abs() < 2e-15);
        assert_eq!(z.prob(1), 0.0);
        assert!(z.sigma2() > 0.0);
        assert!(OffspringDist::zeta_law(1.4).is_err());
    }

    #[test]
    fn geometric_support_is_finite_near_m_one() {
        for m in [1.05, 1.0500001, 1.001, 1.2] {
            let g = OffspringDist::geometric(m).unwrap();
            assert!(g.probs().len() < 100_000, "m={} len {}", m, g.probs().len());
            let mass: f64 = g.probs().iter().map(|p| p.1).sum();
            assert!((mass - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn geometric_variance_and_domain() {
        let g = OffspringDist::geometric(2.0).unwrap();
        assert_eq!(g.sigma2(), 2.0);
        let second: f64 = g.probs().iter().map(|&(l, q)| (l * l) as f64 * q).sum();
        assert!((second - 3.0).abs() < 1e-10);
        assert!(g.pgf(2.0).is_err());
        assert!(g.pgf(1.9).is_ok());
        assert!(OffspringDist::geometric(1.0).is_err());
    }

    #[test]
    fn stable_forms_agree_with_direct_evaluation() {
        for d in [OffspringDist::binary(), OffspringDist::geometric(3.0).unwrap(), OffspringDist::from_table(&[(0, 0.4), (1, 0.4), (3, 0.2)]).unwrap()] {
            for p in [0.0, 1e-3, 0.2, 0.9, 1.0] {
                let direct = 1.0 - d.pgf(1.0 - p).unwrap();
                assert!((d.pgf_complement(p) - direct).abs() < 1e-14);
            }
            for y in [0.0, 1e-4, 0.1, 0.3] {
                let direct = d.pgf(1.0 + y).unwrap() - 1.0;
                assert!((d.pgf_shifted(y).unwrap() - direct).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn pgf_dominates_identity_on_unit_interval() {
        for d in [OffspringDist::binary(), OffspringDist::geometric(1.5).unwrap(), OffspringDist::zeta_law(2.0).unwrap()] {
            let mut prev = (0.0, d.pgf(0.0).unwrap());
            for i in 1..=100 {
                let z = i as f64 / 100.0;
                let v = d.pgf(z).unwrap();
                assert!(v >= z - 1e-12);
                assert!(v >= prev.1 - 1e-15);
                // convexity: slope of chords is nondecreasing
                let mid = d.pgf(z - 0.005).unwrap();
                assert!(mid <= 0.5 * (v + prev.1) + 1e-13);
                prev = (z, v);
            }
        }
    }

    #[test]
    fn max_log_delta_values() {
        let b = OffspringDist::binary();
        assert!((b.max_log_delta(2).unwrap() - 1.0 / (2.0 * 50f64.ln())).abs() < 1e-15);
        assert!((b.max_log_delta(3).unwrap() - 1.0 / (2.0 * 98f64.ln())).abs() < 1e-15);
        // Q_1 = 1 is rejected at construction; a law without l0 > 1 cannot be critical
        assert!(OffspringDist::from_table(&[(1, 1.0)]).is_err());
        let g = OffspringDist::geometric(2.0).unwrap();
        assert!(g.max_log_delta(2).unwrap() > 0.0);
    }

    #[test]
    fn binary_single_parent_is_double_or_nothing() {
        let b = OffspringDist::binary();
        let mut rng = substream(5, 0, 0);
        let mut zeros = 0;
        for _ in 0..20_000 {
            match b.sample_offspring_sum(1, &mut rng) {
                0 => zeros += 1,
                2 => {}
                other => panic!("impossible count {}", other),
            }
        }
        assert!((zeros as f64 / 20_000.0 - 0.5).abs() < 0.015);
        assert_eq!(b.sample_offspring_sum(0, &mut rng), 0);
    }

    #[test]
    fn parse_specs() {
        assert!(OffspringDist::from_str("binary").unwrap().is_binary());
        assert_eq!(OffspringDist::from_str("geometric:2").unwrap().sigma2(), 2.0);
        let t: OffspringDist = "table:0=0.25,1=0.5,2=0.25".parse().unwrap();
        assert!((t.sigma2() - 0.5).abs() < 1e-15);
        assert!("poisson:1".parse::<OffspringDist>().is_err());
        assert!("table:0=0.5,1=0.5".parse::<OffspringDist>().is_err());
    }
}
