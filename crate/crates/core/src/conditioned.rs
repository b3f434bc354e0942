//! Conditional law of `U_n(x)` given `U_n(x) >= 1` for binary offspring, via
//! the walk whose transitions are reweighted by hitting probabilities.

use rand::Rng;
use serde::Serialize;

use crate::error::{BrwError, Result};
use crate::fields::{HittingSweep, HittingUpdate};
use crate::forward::run_from;
use crate::lattice::{apply_markov, check_dim, neighbourhood, ClampPolicy, Field, Site, TransitionSweep};
use crate::offspring::OffspringDist;
use crate::parallel::map_reps;
use crate::rng::{streams, substream};

/// Exact `u_k` and `P u_k` for `k = 0..=n`.
#[derive(Clone, Debug)]
pub struct UBank {
    dim: usize,
    u: Vec<Field>,
    pu: Vec<Field>,
}

impl UBank {
    pub fn new(n: usize, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let b = OffspringDist::binary();
        let u: Vec<Field> = HittingSweep::new(&b, n, dim, ClampPolicy::Exact, HittingUpdate::Pgf)?.collect();
        let pu = u.iter().map(|f| apply_markov(f, None)).collect();
        Ok(UBank { dim, u, pu })
    }

    pub fn horizon(&self) -> usize {
        self.u.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn u(&self, k: usize) -> &Field {
        &self.u[k]
    }

    pub fn pu(&self, k: usize) -> &Field {
        &self.pu[k]
    }
}

/// Endpoint of the conditioning event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Target {
    pub n: usize,
    pub x: Site,
}

fn reachable(bank: &UBank, t: Target) -> Result<()> {
    if t.n > bank.horizon() {
        return Err(BrwError::Precondition(format!("bank covers n <= {}, target has n = {}", bank.horizon(), t.n)));
    }
    if bank.u(t.n).get(t.x) <= 0.0 {
        return Err(BrwError::Domain(format!("u_{}({:?}) = 0: target unreachable", t.n, t.x.0)));
    }
    Ok(())
}

/// Transition row of step `m` (from `X_{m-1} = z` to `X_m`), `1 <= m <= n`:
/// `q(z, y) = P_1(y - z) u_{n-m}(x - y) / (P u_{n-m})(x - z)`, in neighbour order.
pub fn utransform_row(m: usize, z: Site, target: Target, bank: &UBank) -> Result<Vec<(Site, f64)>> {
    reachable(bank, target)?;
    if m == 0 || m > target.n {
        return Err(BrwError::Precondition(format!("step index {} outside 1..={}", m, target.n)));
    }
    let k = target.n - m;
    let denom = bank.pu(k).get(target.x - z);
    if denom <= 0.0 || bank.u(k + 1).get(target.x - z) <= 0.0 {
        return Err(BrwError::Precondition(format!("state {:?} at step {} cannot reach the target", z.0, m - 1)));
    }
    let nb = neighbourhood(bank.dim());
    let p1 = 1.0 / nb.len() as f64;
    Ok(nb.iter().map(|&e| (z + e, p1 * bank.u(k).get(target.x - z - e) / denom)).collect())
}

/// Bridge row `P_1(y - z) P_{n-m}(x - y) / P_{n-m+1}(x - z)` of the walk pinned at `(n, x)`.
pub fn pinned_row(m: usize, z: Site, target: Target, dim: usize) -> Result<Vec<(Site, f64)>> {
    if m == 0 || m > target.n {
        return Err(BrwError::Precondition(format!("step index {} outside 1..={}", m, target.n)));
    }
    let k = target.n - m;
    let fields: Vec<Field> = TransitionSweep::new(k + 1, dim, ClampPolicy::Exact)?.collect();
    let denom = fields[k + 1].get(target.x - z);
    if denom <= 0.0 {
        return Err(BrwError::Precondition("pinned walk cannot reach the target".into()));
    }
    let nb = neighbourhood(dim);
    let p1 = 1.0 / nb.len() as f64;
    Ok(nb.iter().map(|&e| (z + e, p1 * fields[k].get(target.x - z - e) / denom)).collect())
}

/// `beta_m(w) = 1 / (2 - (P u_{n-m-1})(x - w))`, `0 <= m < n`.
pub fn beta(m: usize, w: Site, target: Target, bank: &UBank) -> f64 {
    1.0 / (2.0 - bank.pu(target.n - m - 1).get(target.x - w))
}

fn pick<R: Rng + ?Sized>(row: &[(Site, f64)], rng: &mut R) -> Site {
    let mut u: f64 = rng.random::<f64>() * row.iter().map(|r| r.1).sum::<f64>();
    let mut last = row[0].0;
    for &(y, p) in row {
        if p > 0.0 {
            last = y;
            if u < p {
                return y;
            }
            u -= p;
        }
    }
    last
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionedSample {
    pub value: u64,
    pub path: Vec<Site>,
}

/// One draw from the law of `U_n(x)` given `U_n(x) >= 1`:
/// `1 + sum_m B_m(X_m) U^m_{n-m-1}(x - X_m - xi_{m+1})`, with `B_m(X_m)` a
/// `beta_m(X_m)` coin and `X` the reweighted walk.
pub fn sample_conditioned<R: Rng + ?Sized>(target: Target, bank: &UBank, rng: &mut R) -> Result<ConditionedSample> {
    reachable(bank, target)?;
    let (n, x, dim) = (target.n, target.x, bank.dim());
    let b = OffspringDist::binary();
    let nb = neighbourhood(dim);
    let mut path = Vec::with_capacity(n + 1);
    let mut cur = Site::ORIGIN;
    path.push(cur);
    let mut value = 1u64;
    for m in 0..n {
        let coin = rng.random::<f64>() < beta(m, cur, target, bank);
        let xi = nb[rng.random_range(0..nb.len())];
        if coin {
            let rest = n - m - 1;
            let aim = x - cur - xi;
            if aim.max_abs() as usize <= rest {
                value += run_from(Site::ORIGIN, &b, rest, dim, rng).get(aim);
            }
        }
        let row = utransform_row(m + 1, cur, target, bank)?;
        cur = pick(&row, rng);
        path.push(cur);
    }
    Ok(ConditionedSample { value, path })
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionedRecord {
    pub n: usize,
    pub x: Site,
    pub rep: u64,
    pub value: u64,
    pub path_len_checksum: i64,
}

fn checksum(path: &[Site]) -> i64 {
    path.iter().enumerate().fold(path.len() as i64, |acc, (i, s)| {
        acc.wrapping_mul(31).wrapping_add((i as i64 + 1) * (s.0[0] as i64 * 7919 + s.0[1] as i64 * 104_729 + s.0[2] as i64 * 1_299_709))
    })
}

/// `reps` independent conditional samples, replicate `r` on stream `UTRANSFORM`.
pub fn sample_conditioned_batch(target: Target, bank: &UBank, seed: u64, reps: u64) -> Result<Vec<ConditionedRecord>> {
    reachable(bank, target)?;
    crate::parallel::try_map_reps(reps, |r| {
        let mut rng = substream(seed, streams::UTRANSFORM, r);
        let s = sample_conditioned(target, bank, &mut rng)?;
        Ok(ConditionedRecord { n: target.n, x: target.x, rep: r, value: s.value, path_len_checksum: checksum(&s.path) })
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EndpointAudit {
    pub paths: u64,
    pub violations: u64,
    /// Largest deviation of a visited row sum from one.
    pub max_row_error: f64,
}

/// Samples reweighted paths only and counts those not ending at the target.
pub fn endpoint_audit(n: usize, targets: &[Site], reps: u64, dim: usize, seed: u64) -> Result<EndpointAudit> {
    let bank = UBank::new(n, dim)?;
    for &x in targets {
        reachable(&bank, Target { n, x })?;
    }
    let mut audit = EndpointAudit { paths: 0, violations: 0, max_row_error: 0.0 };
    for (ti, &x) in targets.iter().enumerate() {
        let target = Target { n, x };
        let res = map_reps(reps, |r| -> Result<(bool, f64)> {
            let mut rng = substream(seed, streams::UTRANSFORM, ((ti as u64) << 32) | r);
            let mut cur = Site::ORIGIN;
            let mut err: f64 = 0.0;
            for m in 1..=n {
                let row = utransform_row(m, cur, target, &bank)?;
                err = err.max((row.iter().map(|p| p.1).sum::<f64>() - 1.0).abs());
                cur = pick(&row, &mut rng);
            }
            Ok((cur != x, err))
        });
        for r in res {
            let (miss, err) = r?;
            audit.paths += 1;
            audit.violations += u64::from(miss);
            audit.max_row_error = audit.max_row_error.max(err);
        }
    }
    Ok(audit)
}
