//! Size-biased binary process seen from a uniformly chosen particle.
//!
//! Generation `n` relative to the chosen particle is
//! `R(x) = delta_0(x) + sum_{i<n} U^i_i(c_i + x)` with `c_i = S_{i+1} + xi_i`,
//! where `S` is a lazy walk, `xi_i` are uniform on the neighbourhood and
//! `U^i` are independent unbiased processes from the origin run for `i`
//! generations. The `i = 0` term is `B_0 = 1{c_0 = 0}`, a Bernoulli(1/(2d+1))
//! variable independent of `S`.

use rand::Rng;
use serde::Serialize;

use crate::error::{BrwError, Result};
use crate::fields::SecondMomentSweep;
use crate::forward::{ball_offsets, run_from, GenStats, SparseOccupancy};
use crate::lattice::{apply_markov, check_dim, neighbourhood, ClampPolicy, Site, TransitionSweep};
use crate::offspring::OffspringDist;
use crate::parallel::map_reps;
use crate::rng::{streams, substream, BrwRng};

/// Spine path and sibling displacements.
#[derive(Clone, Debug)]
pub struct SpinePath {
    /// `S_0, ..., S_n`.
    pub s: Vec<Site>,
    /// `c_i = S_{i+1} + xi_i` for `i = 0..n`.
    pub c: Vec<Site>,
}

impl SpinePath {
    pub fn sample<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Self {
        let nb = neighbourhood(dim);
        let s = crate::lattice::sample_srw(n, dim, rng);
        let c = (0..n).map(|i| s[i + 1] + nb[rng.random_range(0..nb.len())]).collect();
        SpinePath { s, c }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn b0(&self) -> bool {
        self.c.first() == Some(&Site::ORIGIN)
    }
}

/// Counts `U^i_i(c_i)` at the spine's site, `i = 0..n`.
fn attached_at_spine<R: Rng + ?Sized>(path: &SpinePath, dim: usize, rng: &mut R) -> Vec<u64> {
    let b = OffspringDist::binary();
    path.c
        .iter()
        .enumerate()
        .map(|(i, &c)| if i == 0 { u64::from(c == Site::ORIGIN) } else { run_from(Site::ORIGIN, &b, i, dim, rng).get(c) })
        .collect()
}

/// Full generation-`n` occupancy relative to the chosen particle.
fn relative_occupancy<R: Rng + ?Sized>(path: &SpinePath, dim: usize, rng: &mut R) -> SparseOccupancy {
    let b = OffspringDist::binary();
    let mut occ = SparseOccupancy::single(Site::ORIGIN);
    for (i, &c) in path.c.iter().enumerate() {
        let u = run_from(Site::ORIGIN, &b, i, dim, rng);
        for (y, k) in u.iter() {
            occ.add(y - c, k);
        }
    }
    occ.n = path.n();
    occ
}

fn check_n(n: usize, dim: usize) -> Result<()> {
    check_dim(dim)?;
    if n < 1 {
        return Err(BrwError::Domain("the spine needs n >= 1".into()));
    }
    Ok(())
}

/// One draw of `T_n` (particles sharing the chosen particle's site) under the
/// size-biased law.
pub fn sample_typical_occupancy<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Result<u64> {
    check_n(n, dim)?;
    let path = SpinePath::sample(n, dim, rng);
    Ok(1 + attached_at_spine(&path, dim, rng).iter().sum::<u64>())
}

/// One draw of the generation-`n` occupancy under the size-biased law, in
/// coordinates centred on the chosen particle.
pub fn sample_sizebiased_occupancy<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Result<SparseOccupancy> {
    check_n(n, dim)?;
    let path = SpinePath::sample(n, dim, rng);
    Ok(relative_occupancy(&path, dim, rng))
}

/// One draw of `W_n`, the number of particles within distance `ell` of the
/// chosen particle.
pub fn sample_ball_count<R: Rng + ?Sized>(n: usize, ell: f64, dim: usize, rng: &mut R) -> Result<u64> {
    check_n(n, dim)?;
    if ell < 1.0 {
        return Err(BrwError::Domain("ball radius must be at least 1".into()));
    }
    let occ = sample_sizebiased_occupancy(n, dim, rng)?;
    Ok(ball_offsets(dim, ell).into_iter().map(|x| occ.get(x)).sum())
}

/// Clamp used for internal return-probability sweeps.
const SWEEP_CLAMP: ClampPolicy = ClampPolicy::TailEps(1e-15);

/// `sum_{i=2}^n P_{2i}(0)`.
pub fn exact_mean_gamma(n: usize, dim: usize) -> Result<f64> {
    check_dim(dim)?;
    let ret = crate::lattice::return_probabilities(2 * n, dim, SWEEP_CLAMP)?;
    Ok((2..=n).map(|i| ret[2 * i]).sum())
}

/// Exact `E T_n` under the size-biased law: `1 + 1/(2d+1) + sum_{i=2}^n P_{2i}(0)`.
pub fn exact_mean_typical(n: usize, dim: usize) -> Result<f64> {
    Ok(1.0 + 1.0 / (2 * dim + 1) as f64 + exact_mean_gamma(n, dim)?)
}

/// Exact `E W_n = 1 + sum_{i<n} sum_{|x| <= ell} P_{2i+2}(x)`.
pub fn exact_mean_ball(n: usize, ell: f64, dim: usize) -> Result<f64> {
    check_dim(dim)?;
    let ball = ball_offsets(dim, ell);
    let mut total = 1.0;
    for (m, p) in TransitionSweep::new(2 * n, dim, SWEEP_CLAMP)?.enumerate() {
        if m >= 2 && m % 2 == 0 {
            total += ball.iter().map(|&x| p.get(x)).sum::<f64>();
        }
    }
    Ok(total)
}

/// Exact `Var(Delta_n)`: the summands are orthogonal, and
/// `E X_i^2 = sum_z P_{i+2}(z) E U_i(z)^2 - sum_z P_{i+1}(z)^3`.
pub fn exact_var_delta(n: usize, dim: usize) -> Result<f64> {
    check_dim(dim)?;
    let b = OffspringDist::binary();
    let r = SWEEP_CLAMP.radius(n + 2, dim);
    let mut sweep = SecondMomentSweep::new(&b, n + 2, dim, SWEEP_CLAMP)?;
    sweep.next();
    // window holds (P_i, f_i), (P_{i+1}, f_{i+1})
    let mut cur = sweep.next().expect("second item");
    let mut nxt = sweep.next().expect("third item");
    let mut var = 0.0;
    for i in 1..n {
        let p_next2 = apply_markov(&nxt.0, Some(r));
        let f_i = &cur.1;
        let p_i1 = &nxt.0;
        let cross: f64 = f_i.iter().map(|(z, v)| v * p_next2.get(z)).sum();
        let cube: f64 = p_i1.values().iter().map(|v| v * v * v).sum();
        var += cross - cube;
        if i + 1 < n {
            cur = nxt;
            nxt = sweep.next().expect("sweep covers n + 2");
        }
    }
    Ok(var)
}

#[derive(Clone, Debug, Serialize)]
pub struct SpineRecord {
    pub rep: u64,
    pub n: usize,
    pub seed: u64,
    #[serde(rename = "Tstar")]
    pub t_star: u64,
    #[serde(rename = "Gamma", skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(rename = "Delta", skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(rename = "W", skip_serializing_if = "Option::is_none")]
    pub w: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ell: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unoccupied: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ball_sites: Option<u64>,
    #[serde(rename = "Z")]
    pub z: Option<u64>,
    pub clamp_miss_count: u64,
}

/// What a spine batch computes.
#[derive(Clone, Debug)]
pub struct SpineBatch {
    pub n: usize,
    pub dim: usize,
    /// Ball radius for `W_n` and the unoccupied count.
    pub ell: Option<f64>,
    /// Whether to split `T_n` into `Gamma_n + Delta_n`.
    pub decompose: bool,
    /// Whether to simulate the attached processes at all; `false` gives `Gamma_n` only.
    pub attached: bool,
    pub clamp: ClampPolicy,
}

impl SpineBatch {
    pub fn new(n: usize, dim: usize) -> Self {
        SpineBatch { n, dim, ell: None, decompose: true, attached: true, clamp: ClampPolicy::default() }
    }

    /// `reps` independent samples. The spine path of replicate `r` uses
    /// stream `SPINE`, its attached processes stream `SPINE_ATTACHED`; the
    /// `P_i(S_i)` terms come from one transition sweep shared by all replicates.
    pub fn run(&self, seed: u64, reps: u64) -> Result<Vec<SpineRecord>> {
        check_n(self.n, self.dim)?;
        let (n, dim) = (self.n, self.dim);
        let paths: Vec<SpinePath> = map_reps(reps, |r| SpinePath::sample(n, dim, &mut substream(seed, streams::SPINE, r)));
        let mut gamma = vec![0.0; reps as usize];
        let mut misses = vec![0u64; reps as usize];
        // per replicate, P_{i+1}(S_{i+1}) for i = 1..n
        let mut terms: Vec<Vec<f64>> = Vec::new();
        if self.decompose || !self.attached {
            if self.attached {
                terms = vec![Vec::with_capacity(n); reps as usize];
            }
            for (m, p) in TransitionSweep::new(n, dim, self.clamp)?.enumerate().skip(2) {
                for (r, path) in paths.iter().enumerate() {
                    let s = path.s[m];
                    let v = if p.contains(s) {
                        p.get(s)
                    } else {
                        misses[r] += 1;
                        0.0
                    };
                    gamma[r] += v;
                    if self.attached {
                        terms[r].push(v);
                    }
                }
            }
        }
        let ball = self.ell.map(|l| ball_offsets(dim, l));
        let out = map_reps(reps, |r| {
            let path = &paths[r as usize];
            let mut rec = SpineRecord {
                rep: r,
                n,
                seed,
                t_star: 0,
                gamma: (self.decompose || !self.attached).then_some(gamma[r as usize]),
                delta: None,
                w: None,
                ell: self.ell,
                unoccupied: None,
                ball_sites: None,
                z: None,
                clamp_miss_count: misses[r as usize],
            };
            if !self.attached {
                return rec;
            }
            let mut rng: BrwRng = substream(seed, streams::SPINE_ATTACHED, r);
            match &ball {
                None => {
                    let counts = attached_at_spine(path, dim, &mut rng);
                    rec.t_star = 1 + counts.iter().sum::<u64>();
                    if self.decompose {
                        let t = &terms[r as usize];
                        rec.delta = Some(counts[1..].iter().zip(t).map(|(&u, &p)| u as f64 - p).sum());
                    }
                }
                Some(ball) => {
                    let occ = relative_occupancy(path, dim, &mut rng);
                    rec.t_star = occ.get(Site::ORIGIN);
                    rec.z = Some(occ.total());
                    let (mut w, mut empty) = (0u64, 0u64);
                    for &x in ball {
                        let k = occ.get(x);
                        w += k;
                        empty += u64::from(k == 0);
                    }
                    rec.w = Some(w);
                    rec.unoccupied = Some(empty);
                    rec.ball_sites = Some(ball.len() as u64);
                    if self.decompose {
                        let t = &terms[r as usize];
                        rec.delta = Some(rec.t_star as f64 - 1.0 - f64::from(u8::from(path.b0())) - t.iter().sum::<f64>());
                    }
                }
            }
            rec
        });
        Ok(out)
    }
}

/// `(Gamma_n, Delta_n)` for one draw, computing its own transition fields.
pub fn sample_gamma_delta<R: Rng + ?Sized>(n: usize, dim: usize, clamp: ClampPolicy, rng: &mut R) -> Result<(f64, f64)> {
    check_n(n, dim)?;
    let path = SpinePath::sample(n, dim, rng);
    let counts = attached_at_spine(&path, dim, rng);
    let mut gamma = 0.0;
    let mut delta = 0.0;
    for (m, p) in TransitionSweep::new(n, dim, clamp)?.enumerate().skip(2) {
        let v = p.get(path.s[m]);
        gamma += v;
        delta += counts[m - 1] as f64 - v;
    }
    Ok((gamma, delta))
}

#[derive(Clone, Debug, Serialize)]
pub struct SizeBiasCheck {
    /// Mean of `f` under the size-biased sampler.
    pub lhs: f64,
    pub lhs_se: f64,
    /// Mean of `Z_n f` under free runs.
    pub rhs: f64,
    pub rhs_se: f64,
    pub z_score: f64,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Compares `E_H f` from the spine construction with `E[Z_n f]` from free runs.
pub fn sizebias_check<F>(f: F, n: usize, dim: usize, reps: u64, seed: u64) -> Result<SizeBiasCheck>
where
    F: Fn(&GenStats) -> f64 + Sync + Send,
{
    check_n(n, dim)?;
    if reps < 2 {
        return Err(BrwError::Domain("need at least two replicates".into()));
    }
    let b = OffspringDist::binary();
    let lhs: Vec<f64> = map_reps(reps, |r| {
        let mut rng = substream(seed, streams::SPINE, r);
        let occ = sample_sizebiased_occupancy(n, dim, &mut rng).expect("checked");
        f(&GenStats::from_occupancy(&occ))
    });
    let rhs: Vec<f64> = map_reps(reps, |r| {
        let mut rng = substream(seed, streams::FORWARD, r);
        let occ = run_from(Site::ORIGIN, &b, n, dim, &mut rng);
        let st = GenStats::from_occupancy(&occ);
        if st.z == 0 {
            0.0
        } else {
            st.z as f64 * f(&st)
        }
    });
    let (lm, ls) = mean_se(&lhs);
    let (rm, rs) = mean_se(&rhs);
    let se = (ls * ls + rs * rs).sqrt();
    let z_score = if se > 0.0 { (lm - rm) / se } else if lm == rm { 0.0 } else { f64::INFINITY };
    Ok(SizeBiasCheck { lhs: lm, lhs_se: ls, rhs: rm, rhs_se: rs, z_score })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn typical_count_at_least_one() {
        let mut rng = substream(7, 99, 0);
        for _ in 0..200 {
            assert!(sample_typical_occupancy(20, 2, &mut rng).unwrap() >= 1);
        }
    }

    #[test]
    fn exact_mean_gamma_small() {
        let p4 = crate::lattice::return_probability_combinatorial(4, 2).unwrap();
        assert!((exact_mean_gamma(2, 2).unwrap() - p4).abs() < 1e-15);
        let mut prev = 0.0;
        for n in 2..40 {
            let g = exact_mean_gamma(n, 2).unwrap();
            assert!(g >= prev);
            prev = g;
        }
    }

    #[test]
    fn batch_decomposition_is_consistent() {
        let mut cfg = SpineBatch::new(12, 2);
        cfg.clamp = ClampPolicy::Exact;
        let recs = cfg.run(5, 50).unwrap();
        for r in &recs {
            let b0 = r.t_star as f64 - 1.0 - r.gamma.unwrap() - r.delta.unwrap();
            assert!(b0.abs() < 1e-9 || (b0 - 1.0).abs() < 1e-9);
            assert_eq!(r.clamp_miss_count, 0);
        }
        cfg.ell = Some(2.0);
        for r in cfg.run(5, 50).unwrap() {
            let b0 = r.t_star as f64 - 1.0 - r.gamma.unwrap() - r.delta.unwrap();
            assert!(b0.abs() < 1e-9 || (b0 - 1.0).abs() < 1e-9);
            assert!(r.w.unwrap() >= 2);
            assert!(r.z.unwrap() >= r.w.unwrap());
        }
    }

    #[test]
    fn var_delta_first_terms() {
        // n = 2: only i = 1; E X_1^2 = sum_z P_3(z) f_1(z) - sum_z P_2(z)^3
        let p3 = crate::lattice::transition_field(3, 2, ClampPolicy::Exact).unwrap();
        let p2 = crate::lattice::transition_field(2, 2, ClampPolicy::Exact).unwrap();
        let f1 = crate::fields::second_moment_field(&OffspringDist::binary(), 1, 2, ClampPolicy::Exact).unwrap();
        let expect: f64 = f1.iter().map(|(z, v)| v * p3.get(z)).sum::<f64>() - p2.values().iter().map(|v| v.powi(3)).sum::<f64>();
        assert!((exact_var_delta(2, 2).unwrap() - expect).abs() < 1e-14);
    }
}
